//! Factors as stored in the sliding window, and their whitened linearization.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::factors::{
    between_pose_residual, bias_residual, chain, clock_residual, imu_factor_residual, interpolate_nav, preintegrate,
    prdo_residual, pvt_residual, sqrt_information, velocity2d_residual, FactorResidual, ImuNoise, ImuSample,
    InterpolatedNav, NavState, OdometryIncrement, Preintegrated, PvtSolution, RobustLoss, SatelliteObs, SpeedSample,
    StateJacobian, STATE_DIM,
};
use crate::gp::{gp_prior_residual, GpModel, GpSegment, InterpKernel};
use crate::lie::{so3, JacobianMode};

/// Where a factor reads its state: a timeline state, or a GP query `tau`
/// seconds after state `i` (between `i` and `i + 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    State(u64),
    Interp { i: u64, tau: f64 },
}

impl Anchor {
    pub fn min_id(&self) -> u64 {
        match *self {
            Anchor::State(i) | Anchor::Interp { i, .. } => i,
        }
    }

    pub fn max_id(&self) -> u64 {
        match *self {
            Anchor::State(i) => i,
            Anchor::Interp { i, .. } => i + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    GpPrior(GpSegment),
    Imu {
        pre: Preintegrated,
        samples: Vec<ImuSample>,
        noise: ImuNoise,
    },
    Bias,
    Clock { dt: f64 },
    Pvt { z: PvtSolution, lever_arm: Vector3<f64> },
    PrDo { sat: SatelliteObs, wavelength_m: f64, lever_arm: Vector3<f64> },
    Speed(SpeedSample),
    Between(OdometryIncrement),
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::GpPrior(_) => "gp_prior",
            FactorKind::Imu { .. } => "imu",
            FactorKind::Bias => "bias",
            FactorKind::Clock { .. } => "clock",
            FactorKind::Pvt { .. } => "pvt",
            FactorKind::PrDo { .. } => "prdo",
            FactorKind::Speed(_) => "speed",
            FactorKind::Between(_) => "between",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            FactorKind::GpPrior(_) => 0,
            FactorKind::Imu { .. } => 1,
            FactorKind::Bias => 2,
            FactorKind::Clock { .. } => 3,
            FactorKind::Pvt { .. } => 4,
            FactorKind::PrDo { .. } => 5,
            FactorKind::Speed(_) => 6,
            FactorKind::Between(_) => 7,
        }
    }
}

/// A factor: model, anchors, noise and loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub anchors: Vec<Anchor>,
    /// `L^-1` for the residual covariance `L L^T`.
    pub sqrt_info: DMatrix<f64>,
    pub loss: RobustLoss,
    /// Apply the loss to each row separately instead of the whole residual.
    pub loss_per_row: bool,
    /// Delay-corrected measurement time (state time for motion factors).
    pub time: f64,
}

impl Factor {
    pub fn new(kind: FactorKind, anchors: Vec<Anchor>, covariance: &DMatrix<f64>, loss: RobustLoss, time: f64) -> Result<Self> {
        Ok(Self {
            kind,
            anchors,
            sqrt_info: sqrt_information(covariance)?,
            loss,
            loss_per_row: false,
            time,
        })
    }

    pub fn min_id(&self) -> u64 {
        self.anchors.iter().map(Anchor::min_id).min().unwrap_or(0)
    }

    pub fn max_id(&self) -> u64 {
        self.anchors.iter().map(Anchor::max_id).max().unwrap_or(0)
    }

    /// Total order used to sum factors identically regardless of arrival order.
    pub fn order_key(&self) -> (u64, u8, i64, u32, u64) {
        let sat = match &self.kind {
            FactorKind::PrDo { sat, .. } => sat.sat_id,
            _ => 0,
        };
        (self.min_id(), self.kind.rank(), (self.time * 1e9).round() as i64, sat, self.max_id())
    }

    /// Re-preintegrates an IMU factor whose bias linearization went stale.
    pub fn refresh_imu(&mut self, x_i: &NavState, threshold: f64) -> Result<bool> {
        if let FactorKind::Imu { pre, samples, noise } = &mut self.kind {
            if pre.bias_offset(x_i) > threshold {
                let t0 = x_i.timestamp;
                let fresh = preintegrate(samples, t0, t0 + pre.dt_total, &x_i.bias_acc, &x_i.bias_gyro, &pre.gravity, noise)?;
                self.sqrt_info = sqrt_information(&fresh.covariance_dyn())?;
                *pre = fresh;
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Read-only view used while evaluating factors.
pub struct EvalContext<'a> {
    pub first_id: u64,
    pub states: &'a [NavState],
    pub spacing: f64,
    pub gp_model: GpModel,
    pub mode: JacobianMode,
    pub imu: &'a [ImuSample],
    interp_cache: RefCell<HashMap<(u64, u64), InterpolatedNav>>,
}

impl<'a> EvalContext<'a> {
    pub fn new(first_id: u64, states: &'a [NavState], spacing: f64, gp_model: GpModel, mode: JacobianMode, imu: &'a [ImuSample]) -> Self {
        Self { first_id, states, spacing, gp_model, mode, imu, interp_cache: RefCell::new(HashMap::new()) }
    }

    pub fn state(&self, id: u64) -> Result<&NavState> {
        id.checked_sub(self.first_id)
            .and_then(|k| self.states.get(k as usize))
            .ok_or_else(|| Error::DegenerateInput(format!("state {id} is not in the window")))
    }

    /// Bias-corrected angular rate at `t`, from the latest IMU sample not after `t`.
    pub fn gyro_at(&self, t: f64, bias_gyro: &Vector3<f64>) -> Vector3<f64> {
        if self.imu.is_empty() {
            return Vector3::zeros();
        }
        let k = self.imu.partition_point(|s| s.t <= t + 1e-9);
        self.imu[k.saturating_sub(1)].gyro - bias_gyro
    }

    fn interpolated(&self, i: u64, tau: f64) -> Result<InterpolatedNav> {
        let key = (i, tau.to_bits());
        if let Some(hit) = self.interp_cache.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let kernel = InterpKernel::new(tau, self.spacing, self.gp_model)?;
        let out = interpolate_nav(self.state(i)?, self.state(i + 1)?, &kernel, self.mode)?;
        self.interp_cache.borrow_mut().insert(key, out.clone());
        Ok(out)
    }

    /// State at an anchor and the Jacobian of that state w.r.t. each window state.
    fn anchor(&self, a: &Anchor) -> Result<(NavState, Vec<(u64, Option<StateJacobian>)>)> {
        match *a {
            Anchor::State(i) => Ok((*self.state(i)?, vec![(i, None)])),
            Anchor::Interp { i, tau } => {
                let q = self.interpolated(i, tau)?;
                Ok((q.state, vec![(i, Some(q.jac_i)), (i + 1, Some(q.jac_j))]))
            }
        }
    }
}

/// Residual with Jacobian blocks keyed by state id.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub value: DVector<f64>,
    pub blocks: Vec<(u64, DMatrix<f64>)>,
}

fn push_block(blocks: &mut Vec<(u64, DMatrix<f64>)>, id: u64, jac: DMatrix<f64>) {
    if let Some(entry) = blocks.iter_mut().find(|(k, _)| *k == id) {
        entry.1 += jac;
    } else {
        blocks.push((id, jac));
    }
}

fn through_anchor(blocks: &mut Vec<(u64, DMatrix<f64>)>, jac: &DMatrix<f64>, via: &[(u64, Option<StateJacobian>)]) {
    for (id, m) in via {
        match m {
            None => push_block(blocks, *id, jac.clone()),
            Some(m) => push_block(blocks, *id, chain(jac, m)),
        }
    }
}

fn embed12(m: &crate::gp::Matrix12) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(12, STATE_DIM);
    out.view_mut((0, 0), (12, 12)).copy_from(m);
    out
}

impl Factor {
    /// Unwhitened residual and Jacobians at the context's states.
    pub fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Evaluated> {
        let mut blocks = Vec::with_capacity(3);
        let value = match &self.kind {
            FactorKind::GpPrior(seg) => {
                let (i, j) = self.pair()?;
                let r = gp_prior_residual(&ctx.state(i)?.knot(), &ctx.state(j)?.knot(), seg, ctx.mode)?;
                blocks.push((i, embed12(&r.jac_i)));
                blocks.push((j, embed12(&r.jac_j)));
                DVector::from_column_slice(r.residual.as_slice())
            }
            FactorKind::Imu { pre, samples, noise } => {
                let (i, j) = self.pair()?;
                let (xi, xj) = (ctx.state(i)?, ctx.state(j)?);
                let r = match imu_factor_residual(xi, xj, pre) {
                    Err(Error::StaleBiasLinearization(_)) => {
                        let fresh = preintegrate(samples, xi.timestamp, xi.timestamp + pre.dt_total, &xi.bias_acc, &xi.bias_gyro, &pre.gravity, noise)?;
                        imu_factor_residual(xi, xj, &fresh)?
                    }
                    other => other?,
                };
                self.pairwise(r, i, j, &mut blocks)
            }
            FactorKind::Bias => {
                let (i, j) = self.pair()?;
                self.pairwise(bias_residual(ctx.state(i)?, ctx.state(j)?), i, j, &mut blocks)
            }
            FactorKind::Clock { dt } => {
                let (i, j) = self.pair()?;
                self.pairwise(clock_residual(ctx.state(i)?, ctx.state(j)?, *dt), i, j, &mut blocks)
            }
            FactorKind::Pvt { z, lever_arm } => {
                let (x, via) = ctx.anchor(&self.anchors[0])?;
                let gyro = ctx.gyro_at(self.time, &x.bias_gyro);
                let r = pvt_residual(&x, z, lever_arm, &gyro)?;
                through_anchor(&mut blocks, &r.jacobians[0], &via);
                r.value
            }
            FactorKind::PrDo { sat, wavelength_m, lever_arm } => {
                let (x, via) = ctx.anchor(&self.anchors[0])?;
                let gyro = ctx.gyro_at(self.time, &x.bias_gyro);
                let r = prdo_residual(&x, sat, *wavelength_m, lever_arm, &gyro)?;
                through_anchor(&mut blocks, &r.jacobians[0], &via);
                r.value
            }
            FactorKind::Speed(s) => {
                let (x, via) = ctx.anchor(&self.anchors[0])?;
                let sample = SpeedSample { gyro_at_t: ctx.gyro_at(self.time, &x.bias_gyro), ..*s };
                let r = velocity2d_residual(&x, &sample);
                through_anchor(&mut blocks, &r.jacobians[0], &via);
                r.value
            }
            FactorKind::Between(odo) => {
                let (xa, via_a) = ctx.anchor(&self.anchors[0])?;
                let (xb, via_b) = ctx.anchor(&self.anchors[1])?;
                let r = between_pose_residual(&xa, &xb, odo)?;
                through_anchor(&mut blocks, &r.jacobians[0], &via_a);
                through_anchor(&mut blocks, &r.jacobians[1], &via_b);
                r.value
            }
        };
        blocks.sort_by_key(|b| b.0);
        Ok(Evaluated { value, blocks })
    }

    fn pair(&self) -> Result<(u64, u64)> {
        match self.anchors.as_slice() {
            [Anchor::State(i), Anchor::State(j)] => Ok((*i, *j)),
            _ => Err(Error::DegenerateInput(format!("{} factor needs two state anchors", self.kind.name()))),
        }
    }

    fn pairwise(&self, r: FactorResidual, i: u64, j: u64, blocks: &mut Vec<(u64, DMatrix<f64>)>) -> DVector<f64> {
        let mut jac = r.jacobians.into_iter();
        blocks.push((i, jac.next().expect("two blocks")));
        blocks.push((j, jac.next().expect("two blocks")));
        r.value
    }

    /// Whitened, loss-weighted linearization restricted to the first `dim` tangent columns.
    pub fn linearize(&self, ctx: &EvalContext<'_>, dim: usize) -> Result<Linearized> {
        let ev = self.evaluate(ctx)?;
        let rows = ev.value.len();
        let mut white = &self.sqrt_info * &ev.value;
        let ids: Vec<u64> = ev.blocks.iter().map(|b| b.0).collect();
        let mut jac = DMatrix::zeros(rows, ids.len() * dim);
        for (k, (_, b)) in ev.blocks.iter().enumerate() {
            let wb = &self.sqrt_info * b.columns(0, dim);
            jac.view_mut((0, k * dim), (rows, dim)).copy_from(&wb);
        }
        let groups: Vec<(usize, usize)> = if self.loss_per_row { (0..rows).map(|r| (r, 1)).collect() } else { vec![(0, rows)] };
        let mut cost = 0.0;
        for (start, len) in groups {
            let s = white.rows(start, len).norm_squared();
            cost += self.loss.rho(s);
            let w = self.loss.weight(s);
            if w != 1.0 {
                let sw = w.sqrt();
                white.rows_mut(start, len).scale_mut(sw);
                jac.rows_mut(start, len).scale_mut(sw);
            }
        }
        Ok(Linearized { ids, jacobian: jac, residual: white, cost })
    }

    /// `sum rho` at the context's states, without Jacobians where avoidable.
    pub fn cost(&self, ctx: &EvalContext<'_>) -> Result<f64> {
        let ev = self.evaluate(ctx)?;
        let white = &self.sqrt_info * &ev.value;
        Ok(if self.loss_per_row {
            white.iter().map(|v| self.loss.rho(v * v)).sum()
        } else {
            self.loss.rho(white.norm_squared())
        })
    }
}

/// Whitened linear system contribution of one factor.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub ids: Vec<u64>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
    /// `sum rho` (the factor's cost is half of this).
    pub cost: f64,
}

/// Gaussian prior `|U (x - x0) + r0|^2` over a set of states, produced at
/// initialization or by marginalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrior {
    pub ids: Vec<u64>,
    pub lin_points: Vec<NavState>,
    pub sqrt_info: DMatrix<f64>,
    pub r0: DVector<f64>,
}

impl LinearPrior {
    /// Independent prior on one state with standard deviations `sigmas` (first `dim` used).
    pub fn diagonal(id: u64, at: NavState, sigmas: &[f64], dim: usize) -> Result<Self> {
        if sigmas.len() < dim || sigmas[..dim].iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("init.sigmas", "prior standard deviations must be positive"));
        }
        Ok(Self {
            ids: vec![id],
            lin_points: vec![at],
            sqrt_info: DMatrix::from_fn(dim, dim, |r, c| if r == c { 1.0 / sigmas[r] } else { 0.0 }),
            r0: DVector::zeros(dim),
        })
    }

    pub fn min_id(&self) -> u64 {
        self.ids.iter().copied().min().unwrap_or(0)
    }

    pub fn max_id(&self) -> u64 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Information matrix `U^T U` over the prior's states.
    pub fn information(&self) -> DMatrix<f64> {
        self.sqrt_info.transpose() * &self.sqrt_info
    }

    pub fn linearize(&self, ctx: &EvalContext<'_>, dim: usize) -> Result<Linearized> {
        let n = self.ids.len();
        let mut delta = DVector::zeros(n * dim);
        let mut local_jac = DMatrix::zeros(n * dim, n * dim);
        for (k, (id, x0)) in self.ids.iter().zip(&self.lin_points).enumerate() {
            let x = ctx.state(*id)?;
            let d = x0.local(x);
            delta.rows_mut(k * dim, dim).copy_from(&d.rows(0, dim));
            let mut blk = DMatrix::identity(dim, dim);
            let rp = x0.rotation().transpose() * x.rotation();
            blk.view_mut((0, 0), (3, 3)).copy_from(&rp);
            blk.view_mut((3, 3), (3, 3)).copy_from(&so3::right_jacobian_inv(&d.fixed_rows::<3>(3).into_owned()));
            local_jac.view_mut((k * dim, k * dim), (dim, dim)).copy_from(&blk);
        }
        let residual = &self.sqrt_info * delta + &self.r0;
        let jacobian = &self.sqrt_info * local_jac;
        let cost = residual.norm_squared();
        Ok(Linearized { ids: self.ids.clone(), jacobian, residual, cost })
    }
}
