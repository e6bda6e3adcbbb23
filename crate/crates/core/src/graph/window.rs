//! Fixed-lag window: states, factors, priors, Levenberg-Marquardt and marginalization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::factor::{EvalContext, Factor, LinearPrior, Linearized};
use super::timeline::{StateTimeline, TIME_EPS};
use crate::error::{Error, Result};
use crate::factors::{ImuSample, NavState, BIAS_RELINEARIZE_THRESHOLD, STATE_DIM};
use crate::gp::GpModel;
use crate::lie::JacobianMode;
use crate::linalg::{BandCholesky, SymBand};

/// Cost changes below this are lost in the rounding of ECEF-scale positions.
const COST_NOISE_FLOOR: f64 = 1e-6;

/// Loose coupling fuses receiver fixes and keeps the clock fixed; tight
/// coupling fuses raw pseudorange/Doppler and estimates the clock.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Loose,
    #[default]
    Tight,
}

impl FusionMode {
    /// Number of estimated tangent coordinates per state.
    pub fn dim(self) -> usize {
        match self {
            FusionMode::Loose => STATE_DIM - 2,
            FusionMode::Tight => STATE_DIM,
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loose" => Ok(FusionMode::Loose),
            "tight" => Ok(FusionMode::Tight),
            other => Err(Error::config("fusion", format!("unknown fusion mode `{other}` (expected loose|tight)"))),
        }
    }
}

/// Known sensor delays `t_d` (s), subtracted from raw stamps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorDelays {
    pub gnss: f64,
    pub pvt: f64,
    pub odometry: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub convergence_tol: f64,
    /// Stop when an accepted step lowers the cost by less than this.
    pub absolute_tol: f64,
    pub damping_init: f64,
    pub lag_seconds: f64,
    pub opt_frequency_hz: f64,
    /// State spacing (s).
    pub spacing: f64,
    pub t_sync: f64,
    pub delays: SensorDelays,
    /// Condition estimate above which the system is flagged and damped harder.
    pub condition_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            convergence_tol: 1e-6,
            absolute_tol: 1e-10,
            damping_init: 1e-6,
            lag_seconds: 3.0,
            opt_frequency_hz: 10.0,
            spacing: 0.1,
            t_sync: 0.01,
            delays: SensorDelays::default(),
            condition_limit: 1e14,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, path: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, "must be positive and finite"))
            }
        };
        positive(self.spacing, "solver.spacing")?;
        positive(self.opt_frequency_hz, "solver.opt_frequency_hz")?;
        positive(self.damping_init, "solver.damping_init")?;
        positive(self.convergence_tol, "solver.convergence_tol")?;
        if !(self.lag_seconds > 0.0) {
            return Err(Error::config("solver.lag_seconds", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("solver.max_iterations", "must be at least 1"));
        }
        if !(self.t_sync >= 0.0 && self.t_sync < 0.5 * self.spacing) {
            return Err(Error::config("solver.t_sync", "must lie in [0, spacing / 2)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub ill_conditioned: bool,
}

/// Sliding window of states with their factors and boundary priors.
#[derive(Debug, Clone)]
pub struct Window {
    timeline: StateTimeline,
    states: Vec<NavState>,
    factors: Vec<Factor>,
    priors: Vec<LinearPrior>,
    mode: FusionMode,
    gp_model: GpModel,
    jacobian_mode: JacobianMode,
    last_factor: Option<BandCholesky>,
}

fn band_width(lins: &[Linearized], dim: usize) -> usize {
    let span = lins
        .iter()
        .map(|l| l.ids.iter().max().unwrap_or(&0) - l.ids.iter().min().unwrap_or(&0))
        .max()
        .unwrap_or(0) as usize;
    (span + 1) * dim - 1
}

fn assemble(lins: &[Linearized], first_id: u64, n_states: usize, dim: usize) -> (SymBand, DVector<f64>) {
    let mut h = SymBand::zeros(n_states * dim, band_width(lins, dim));
    let mut g = DVector::zeros(n_states * dim);
    for l in lins {
        let index: Vec<usize> = l
            .ids
            .iter()
            .flat_map(|id| {
                let base = (id - first_id) as usize * dim;
                base..base + dim
            })
            .collect();
        h.add_gram(&index, &l.jacobian);
        for (k, &i) in index.iter().enumerate() {
            g[i] += l.jacobian.column(k).dot(&l.residual);
        }
    }
    (h, g)
}

fn total_cost(lins: &[Linearized]) -> f64 {
    0.5 * lins.iter().map(|l| l.cost).sum::<f64>()
}

/// Inverse of a PSD matrix, via Cholesky when definite and a Jacobi-scaled
/// eigen pseudo-inverse otherwise.
fn pseudo_inverse(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let d = DVector::from_fn(n, |i, _| if h[(i, i)] > 0.0 { 1.0 / h[(i, i)].sqrt() } else { 1.0 });
    let hs = DMatrix::from_fn(n, n, |i, j| d[i] * h[(i, j)] * d[j]);
    if let Some(chol) = hs.clone().cholesky() {
        let inv = chol.inverse();
        return DMatrix::from_fn(n, n, |i, j| d[i] * inv[(i, j)] * d[j]);
    }
    let (vals, vecs, d) = scaled_eigen(h);
    let inv_vals = vals.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let dv = DMatrix::from_fn(n, n, |i, j| d[i] * vecs[(i, j)]);
    &dv * DMatrix::from_diagonal(&inv_vals) * dv.transpose()
}

/// Eigen decomposition of `D H D` with `D = diag(H)^-1/2`; small eigenvalues zeroed.
fn scaled_eigen(h: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = h.nrows();
    let d = DVector::from_fn(n, |i, _| if h[(i, i)] > 0.0 { 1.0 / h[(i, i)].sqrt() } else { 1.0 });
    let hs = DMatrix::from_fn(n, n, |i, j| d[i] * h[(i, j)] * d[j]);
    let hs = (&hs + hs.transpose()) * 0.5;
    let eig = SymmetricEigen::new(hs);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let vals = eig.eigenvalues.map(|v| if v > 1e-11 * top { v } else { 0.0 });
    (vals, eig.eigenvectors, d)
}

impl Window {
    pub fn new(spacing: f64, mode: FusionMode, gp_model: GpModel, jacobian_mode: JacobianMode) -> Result<Self> {
        Ok(Self {
            timeline: StateTimeline::new(spacing)?,
            states: Vec::new(),
            factors: Vec::new(),
            priors: Vec::new(),
            mode,
            gp_model,
            jacobian_mode,
            last_factor: None,
        })
    }

    /// Starts the timeline at `x0` with a prior on it.
    pub fn initialize(&mut self, x0: NavState, prior: LinearPrior) {
        self.timeline.initialize(x0.timestamp);
        self.states = vec![x0];
        self.factors.clear();
        self.priors = vec![prior];
        self.last_factor = None;
    }

    pub fn timeline(&self) -> &StateTimeline {
        &self.timeline
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn gp_model(&self) -> GpModel {
        self.gp_model
    }

    pub fn states(&self) -> &[NavState] {
        &self.states
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn priors(&self) -> &[LinearPrior] {
        &self.priors
    }

    pub fn first_id(&self) -> u64 {
        self.timeline.oldest_id()
    }

    pub fn newest(&self) -> Option<&NavState> {
        self.states.last()
    }

    pub fn state(&self, id: u64) -> Option<&NavState> {
        id.checked_sub(self.first_id()).and_then(|k| self.states.get(k as usize))
    }

    pub fn state_mut(&mut self, id: u64) -> Option<&mut NavState> {
        let first = self.first_id();
        id.checked_sub(first).and_then(move |k| self.states.get_mut(k as usize))
    }

    /// Appends the next state on the timeline; returns its id.
    pub fn push_state(&mut self, mut x: NavState) -> Result<u64> {
        let (id, t) = self.timeline.extend(1)?[0];
        x.timestamp = t;
        self.states.push(x);
        self.last_factor = None;
        Ok(id)
    }

    /// Inserts a factor keeping the canonical order.
    pub fn add_factor(&mut self, f: Factor) -> Result<()> {
        if f.min_id() < self.first_id() || f.max_id() > self.timeline.newest_id() || self.states.is_empty() {
            return Err(Error::DegenerateInput(format!("{} factor references states outside the window", f.kind.name())));
        }
        let key = f.order_key();
        let pos = self.factors.partition_point(|g| g.order_key() <= key);
        self.factors.insert(pos, f);
        Ok(())
    }

    pub fn add_prior(&mut self, p: LinearPrior) {
        self.priors.push(p);
    }

    fn context<'a>(&'a self, states: &'a [NavState], imu: &'a [ImuSample]) -> EvalContext<'a> {
        EvalContext::new(self.first_id(), states, self.timeline.spacing(), self.gp_model, self.jacobian_mode, imu)
    }

    fn linearize_at(&self, states: &[NavState], imu: &[ImuSample]) -> Result<Vec<Linearized>> {
        let ctx = self.context(states, imu);
        let dim = self.mode.dim();
        let mut out = Vec::with_capacity(self.factors.len() + self.priors.len());
        for p in &self.priors {
            out.push(p.linearize(&ctx, dim)?);
        }
        for f in &self.factors {
            out.push(f.linearize(&ctx, dim)?);
        }
        Ok(out)
    }

    /// Half the sum of (robustified) squared whitened residuals.
    pub fn cost(&self, imu: &[ImuSample]) -> Result<f64> {
        let ctx = self.context(&self.states, imu);
        let dim = self.mode.dim();
        let mut sum = 0.0;
        for p in &self.priors {
            sum += p.linearize(&ctx, dim)?.cost;
        }
        for f in &self.factors {
            sum += f.cost(&ctx)?;
        }
        Ok(0.5 * sum)
    }

    /// Re-preintegrates IMU factors whose bias estimate moved too far.
    pub fn refresh_imu_factors(&mut self) -> Result<usize> {
        let first = self.first_id();
        let mut n = 0;
        for f in &mut self.factors {
            let id = f.min_id();
            if let Some(x) = self.states.get((id - first) as usize) {
                if f.refresh_imu(x, BIAS_RELINEARIZE_THRESHOLD)? {
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    /// Levenberg-Marquardt on the manifold.
    pub fn optimize(&mut self, config: &SolverConfig, imu: &[ImuSample]) -> Result<OptimizeReport> {
        let dim = self.mode.dim();
        let n = self.states.len();
        self.refresh_imu_factors()?;
        let mut lins = self.linearize_at(&self.states, imu)?;
        let mut cost = total_cost(&lins);
        if !cost.is_finite() {
            return Err(Error::SolverDiverged { cost });
        }
        let mut report = OptimizeReport { initial_cost: cost, final_cost: cost, ..Default::default() };
        // Undamped Gauss-Newton first; damping only after a rejected step.
        let mut lambda = 0.0;
        let (mut h, mut g) = assemble(&lins, self.first_id(), n, dim);
        while report.iterations < config.max_iterations {
            report.iterations += 1;
            let mut accepted = false;
            let mut first_model_decrease = None;
            for _ in 0..12 {
                let mut damped = h.clone();
                let diag = h.diagonal();
                for i in 0..diag.len() {
                    damped.add(i, i, lambda * diag[i].max(1e-9) + 1e-12);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda = raise(lambda, config.damping_init);
                    continue;
                };
                if chol.condition_estimate() > config.condition_limit {
                    report.ill_conditioned = true;
                }
                let step = -chol.solve(&g);
                if !step.iter().all(|v| v.is_finite()) {
                    lambda = raise(lambda, config.damping_init);
                    continue;
                }
                let hs = h_times(&h, &step);
                let model_decrease = -(g.dot(&step) + 0.5 * step.dot(&hs));
                first_model_decrease.get_or_insert(model_decrease);
                if lambda == 0.0 && model_decrease >= 0.0 && (model_decrease < config.absolute_tol || model_decrease < config.convergence_tol * cost) {
                    // Already at the minimum of the local model.
                    report.converged = true;
                    accepted = true;
                    break;
                }
                let trial: Vec<NavState> = self
                    .states
                    .iter()
                    .enumerate()
                    .map(|(k, x)| x.retract(&step.as_slice()[k * dim..(k + 1) * dim]))
                    .collect();
                let trial_lins = self.linearize_at(&trial, imu)?;
                let trial_cost = total_cost(&trial_lins);
                if trial_cost.is_finite() && trial_cost < cost {
                    let decrease = cost - trial_cost;
                    let rel = decrease / cost.max(f64::MIN_POSITIVE);
                    self.states = trial;
                    lins = trial_lins;
                    cost = trial_cost;
                    (h, g) = assemble(&lins, self.first_id(), n, dim);
                    lambda = if lambda > 10.0 * config.damping_init { lambda / 10.0 } else { 0.0 };
                    accepted = true;
                    report.accepted_steps += 1;
                    let tiny_step = step.amax() < 1e-12;
                    if rel < config.convergence_tol || decrease < config.absolute_tol || tiny_step {
                        report.converged = true;
                    }
                    break;
                }
                lambda = raise(lambda, config.damping_init);
            }
            if !accepted {
                let predicted = first_model_decrease.unwrap_or(0.0);
                if predicted > (1e-8 * cost).max(COST_NOISE_FLOOR) && report.accepted_steps == 0 {
                    return Err(Error::SolverDiverged { cost });
                }
                report.converged = true;
            }
            if report.converged {
                break;
            }
        }
        report.final_cost = cost;
        self.last_factor = h.cholesky();
        Ok(report)
    }

    /// Marginal covariance of state `id` from the last optimization's linearization.
    pub fn marginal_covariance(&self, id: u64) -> Option<DMatrix<f64>> {
        let chol = self.last_factor.as_ref()?;
        let dim = self.mode.dim();
        let k = id.checked_sub(self.first_id())? as usize;
        if k >= self.states.len() {
            return None;
        }
        let cols: Vec<usize> = (k * dim..(k + 1) * dim).collect();
        Some(chol.inverse_block(&cols))
    }

    /// Removes states older than `t_cut`, folding their information into a prior
    /// on the states they were connected to. Returns the removed states.
    pub fn marginalize_before(&mut self, t_cut: f64, imu: &[ImuSample]) -> Result<Vec<NavState>> {
        let first = self.first_id();
        let mut m = self.states.iter().take_while(|x| x.timestamp < t_cut - TIME_EPS).count();
        m = m.min(self.states.len().saturating_sub(1));
        if m == 0 {
            return Ok(Vec::new());
        }
        let boundary = first + m as u64;
        let dim = self.mode.dim();
        let factors = std::mem::take(&mut self.factors);
        let priors = std::mem::take(&mut self.priors);
        let ctx = self.context(&self.states, imu);
        let mut lins = Vec::new();
        let mut keep_factors = Vec::with_capacity(factors.len());
        for f in factors {
            if f.min_id() < boundary {
                lins.push(f.linearize(&ctx, dim)?);
            } else {
                keep_factors.push(f);
            }
        }
        let mut keep_priors = Vec::new();
        for p in priors {
            if p.min_id() < boundary {
                lins.push(p.linearize(&ctx, dim)?);
            } else {
                keep_priors.push(p);
            }
        }
        drop(ctx);
        self.factors = keep_factors;
        self.priors = keep_priors;

        let mut kept_ids: Vec<u64> = lins.iter().flat_map(|l| l.ids.iter().copied()).filter(|&id| id >= boundary).collect();
        kept_ids.sort_unstable();
        kept_ids.dedup();
        if !kept_ids.is_empty() {
            let prior = self.schur_prior(&lins, first, m, &kept_ids, dim)?;
            self.priors.push(prior);
        }
        let removed: Vec<NavState> = self.states.drain(..m).collect();
        self.timeline.retire_before(boundary);
        self.last_factor = None;
        Ok(removed)
    }

    fn schur_prior(&self, lins: &[Linearized], first: u64, m: usize, kept_ids: &[u64], dim: usize) -> Result<LinearPrior> {
        let nr = m * dim;
        let nk = kept_ids.len() * dim;
        let col = |id: u64| -> usize {
            if id < first + m as u64 {
                (id - first) as usize * dim
            } else {
                nr + kept_ids.binary_search(&id).expect("kept id") * dim
            }
        };
        let mut h = DMatrix::zeros(nr + nk, nr + nk);
        let mut g = DVector::zeros(nr + nk);
        for l in lins {
            let index: Vec<usize> = l.ids.iter().flat_map(|&id| col(id)..col(id) + dim).collect();
            let jtj = l.jacobian.tr_mul(&l.jacobian);
            let jtr = l.jacobian.tr_mul(&l.residual);
            for (a, &ia) in index.iter().enumerate() {
                g[ia] += jtr[a];
                for (b, &ib) in index.iter().enumerate() {
                    h[(ia, ib)] += jtj[(a, b)];
                }
            }
        }
        let h_rr = h.view((0, 0), (nr, nr)).into_owned();
        let h_kr = h.view((nr, 0), (nk, nr)).into_owned();
        let h_kk = h.view((nr, nr), (nk, nk)).into_owned();
        let pinv = pseudo_inverse(&h_rr);
        let h_marg = &h_kk - &h_kr * &pinv * h_kr.transpose();
        let g_marg = g.rows(nr, nk) - &h_kr * &pinv * g.rows(0, nr);

        let (vals, vecs, d) = scaled_eigen(&h_marg);
        let rank: Vec<usize> = (0..nk).filter(|&k| vals[k] > 0.0).collect();
        // H = D^-1 V E V^T D^-1 = U^T U with U = E^1/2 V^T D^-1; g = U^T r0.
        let mut u = DMatrix::zeros(rank.len(), nk);
        let mut r0 = DVector::zeros(rank.len());
        for (row, &k) in rank.iter().enumerate() {
            let s = vals[k].sqrt();
            let mut proj = 0.0;
            for c in 0..nk {
                u[(row, c)] = s * vecs[(c, k)] / d[c];
                proj += vecs[(c, k)] * d[c] * g_marg[c];
            }
            r0[row] = proj / s;
        }
        let lin_points = kept_ids.iter().map(|&id| *self.state(id).expect("kept state")).collect();
        Ok(LinearPrior { ids: kept_ids.to_vec(), lin_points, sqrt_info: u, r0 })
    }

    /// Checks that anchors exist and each adjacent pair carries one GP and one IMU factor.
    pub fn audit(&self) -> Result<()> {
        let first = self.first_id();
        let newest = self.timeline.newest_id();
        for f in &self.factors {
            if f.min_id() < first || f.max_id() > newest {
                return Err(Error::DegenerateInput(format!("{} factor anchored outside the window", f.kind.name())));
            }
        }
        for id in first..newest {
            for name in ["gp_prior", "imu"] {
                let count = self
                    .factors
                    .iter()
                    .filter(|f| f.kind.name() == name && f.min_id() == id && f.max_id() == id + 1)
                    .count();
                if count != 1 {
                    return Err(Error::DegenerateInput(format!("pair ({id}, {}) has {count} {name} factors", id + 1)));
                }
            }
        }
        Ok(())
    }
}

fn raise(lambda: f64, init: f64) -> f64 {
    if lambda == 0.0 {
        init
    } else {
        lambda * 10.0
    }
}

fn h_times(h: &SymBand, x: &DVector<f64>) -> DVector<f64> {
    let n = h.dim();
    let bw = h.bandwidth();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let hi = (i + bw + 1).min(n);
        let mut s = 0.0;
        for j in lo..hi {
            s += h.get(i, j) * x[j];
        }
        out[i] = s;
    }
    out
}
