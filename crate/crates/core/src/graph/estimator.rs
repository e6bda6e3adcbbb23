//! Time-centric estimator: ingestion, routing, extension, optimization, publishing.

use std::collections::{BTreeMap, VecDeque};

use crossbeam_channel::{unbounded, Receiver, Sender};
use nalgebra::{DMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::factor::{Anchor, Factor, FactorKind, LinearPrior};
use super::gate::{vote, GateConfig, Motion};
use super::measurement::{Measurement, SensorKind};
use super::publisher::{Publisher, Snapshot};
use super::timeline::{RoutingDecision, RoutingKind, TIME_EPS};
use super::window::{FusionMode, OptimizeReport, SolverConfig, Window};
use crate::error::{Error, Result};
use crate::factors::{
    bias_covariance, clock_covariance, cn0_variance, preintegrate, ImuNoise, ImuSample, IntervalGravity, LossKind, NavState, RobustLoss,
};
use crate::geodesy::gravity_ecef;
use crate::gp::{GpHyperparams, GpModel, GpSegment};
use crate::lie::JacobianMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub fusion: FusionMode,
    pub gp: GpHyperparams,
    pub jacobian_mode: JacobianMode,
    pub solver: SolverConfig,
    pub loss: LossKind,
    /// Loss scale in whitened units.
    pub loss_scale: f64,
    pub imu_noise: ImuNoise,
    /// Clock bias white-noise intensity (m^2/s).
    pub clock_bias_psd: f64,
    /// Clock drift white-noise intensity (m^2/s^3).
    pub clock_drift_psd: f64,
    /// Pseudorange variance scale: `var = lambda * 10^(-cn0/10)` (m^2).
    pub lambda_pseudorange: f64,
    /// Doppler variance scale (Hz^2).
    pub lambda_doppler: f64,
    pub antenna_lever_arm: Vector3<f64>,
    pub speed_sigma: f64,
    pub use_odometry: bool,
    pub use_speed: bool,
    pub gate: GateConfig,
    /// Per-sensor bound on cached future measurements (s).
    pub cache_seconds: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::Tight,
            gp: GpHyperparams::default(),
            jacobian_mode: JacobianMode::default(),
            solver: SolverConfig::default(),
            loss: LossKind::Cauchy,
            loss_scale: 1.0,
            imu_noise: ImuNoise::default(),
            clock_bias_psd: 0.1,
            clock_drift_psd: 0.01,
            lambda_pseudorange: 31_622.776_601_683_792,
            lambda_doppler: 31_622.776_601_683_792 * 0.01 / (crate::factors::L1_WAVELENGTH_M * crate::factors::L1_WAVELENGTH_M),
            antenna_lever_arm: Vector3::zeros(),
            speed_sigma: 0.05,
            use_odometry: true,
            use_speed: true,
            gate: GateConfig::default(),
            cache_seconds: 10.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        GpHyperparams::new(self.gp.qc_diag, self.gp.model)?;
        RobustLoss::new(self.loss, self.loss_scale)?;
        for (v, path) in [
            (self.clock_bias_psd, "estimator.clock_bias_psd"),
            (self.clock_drift_psd, "estimator.clock_drift_psd"),
            (self.lambda_pseudorange, "estimator.lambda_pseudorange"),
            (self.lambda_doppler, "estimator.lambda_doppler"),
            (self.speed_sigma, "estimator.speed_sigma"),
            (self.cache_seconds, "estimator.cache_seconds"),
            (self.imu_noise.accel_noise_density, "estimator.imu_noise.accel_noise_density"),
            (self.imu_noise.gyro_noise_density, "estimator.imu_noise.gyro_noise_density"),
            (self.imu_noise.accel_bias_walk, "estimator.imu_noise.accel_bias_walk"),
            (self.imu_noise.gyro_bias_walk, "estimator.imu_noise.gyro_bias_walk"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, "must be positive and finite"));
            }
        }
        Ok(())
    }

    fn robust(&self) -> RobustLoss {
        RobustLoss::new(self.loss, self.loss_scale).unwrap_or_else(|_| RobustLoss::none())
    }
}

/// Counts of routing outcomes. A measurement that waits in the cache is counted
/// once as cached and again by its final outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoutingStats {
    pub synchronized: u64,
    pub interpolated: u64,
    pub dropped: u64,
    pub cached: u64,
    pub evicted: u64,
}

impl RoutingStats {
    fn record(&mut self, kind: RoutingKind) {
        match kind {
            RoutingKind::Synchronized => self.synchronized += 1,
            RoutingKind::Interpolated => self.interpolated += 1,
            RoutingKind::Dropped => self.dropped += 1,
            RoutingKind::Cached => self.cached += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub t_now: f64,
    pub new_states: usize,
    pub optimize: Option<OptimizeReport>,
    pub marginalized: usize,
    pub stationary: bool,
    pub warnings: Vec<Error>,
}

/// Owns the window and runs the optimizer; producers feed it through [`Estimator::sink`].
pub struct Estimator {
    config: EstimatorConfig,
    window: Window,
    imu: Vec<ImuSample>,
    cache: BTreeMap<SensorKind, Vec<Measurement>>,
    stats: RoutingStats,
    tx: Sender<Measurement>,
    rx: Receiver<Measurement>,
    publisher: Publisher,
    finalized: Vec<NavState>,
    motion: Motion,
    speed_evidence: VecDeque<(f64, f64)>,
    pvt_evidence: VecDeque<(f64, f64)>,
    newest_covariance: Option<DMatrix<f64>>,
}

fn imu_span(imu: &[ImuSample], t_start: f64, t_end: f64) -> &[ImuSample] {
    let lo = imu.partition_point(|s| s.t <= t_start + TIME_EPS).saturating_sub(1);
    let hi = imu.partition_point(|s| s.t < t_end - TIME_EPS).max(lo + 1).min(imu.len());
    &imu[lo..hi]
}

fn anchor_of(d: &RoutingDecision) -> Option<Anchor> {
    match (d.kind, d.anchor_id) {
        (RoutingKind::Synchronized, Some(i)) => Some(Anchor::State(i)),
        (RoutingKind::Interpolated, Some(i)) => Some(Anchor::Interp { i, tau: d.tau }),
        _ => None,
    }
}

impl Estimator {
    /// Starts at `x0` with independent prior standard deviations per tangent coordinate.
    pub fn new(config: EstimatorConfig, x0: NavState, prior_sigmas: &[f64]) -> Result<Self> {
        config.validate()?;
        let mut window = Window::new(config.solver.spacing, config.fusion, config.gp.model, config.jacobian_mode)?;
        let mut x0 = x0;
        if config.fusion == FusionMode::Loose {
            x0.clock = Default::default();
        }
        let prior = LinearPrior::diagonal(0, x0, prior_sigmas, config.fusion.dim())?;
        window.initialize(x0, prior);
        let (tx, rx) = unbounded();
        let publisher = Publisher::new();
        publisher.store(Snapshot { state: x0, covariance: None, stationary: false });
        Ok(Self {
            config,
            window,
            imu: Vec::new(),
            cache: BTreeMap::new(),
            stats: RoutingStats::default(),
            tx,
            rx,
            publisher,
            finalized: Vec::new(),
            motion: Motion::Moving,
            speed_evidence: VecDeque::new(),
            pvt_evidence: VecDeque::new(),
            newest_covariance: None,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// Thread-safe handle for producers.
    pub fn sink(&self) -> Sender<Measurement> {
        self.tx.clone()
    }

    pub fn submit(&self, m: Measurement) {
        self.tx.send(m).expect("estimator owns the receiver");
    }

    pub fn publisher(&self) -> Publisher {
        self.publisher.clone()
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn routing_stats(&self) -> RoutingStats {
        self.stats
    }

    pub fn imu_buffer(&self) -> &[ImuSample] {
        &self.imu
    }

    pub fn cached_len(&self) -> usize {
        self.cache.values().map(Vec::len).sum()
    }

    /// States already marginalized out, oldest first.
    pub fn finalized(&self) -> &[NavState] {
        &self.finalized
    }

    /// Finalized states followed by the current window.
    pub fn all_states(&self) -> Vec<NavState> {
        self.finalized.iter().chain(self.window.states()).copied().collect()
    }

    /// Marginal covariance of the newest state after the last optimization.
    pub fn newest_covariance(&self) -> Option<&DMatrix<f64>> {
        self.newest_covariance.as_ref()
    }

    pub fn cost(&self) -> Result<f64> {
        self.window.cost(&self.imu)
    }

    pub fn motion(&self) -> Motion {
        self.motion
    }

    /// Drains the queue, extends the timeline up to `t_now`, routes, optimizes,
    /// marginalizes and publishes.
    pub fn step(&mut self, t_now: f64) -> Result<StepReport> {
        let mut report = StepReport { t_now, ..Default::default() };
        let mut incoming: Vec<Measurement> = self.rx.try_iter().collect();
        incoming.sort_by_key(Measurement::order_key);
        let mut to_route = Vec::with_capacity(incoming.len());
        for m in incoming {
            match m {
                Measurement::Imu(s) => self.insert_imu(s),
                other => {
                    self.note_evidence(&other);
                    to_route.push(other);
                }
            }
        }

        self.motion = self.gate(t_now);
        report.stationary = self.motion == Motion::Stationary;
        if !report.stationary {
            while self.extend_one(t_now)? {
                report.new_states += 1;
            }
        }
        self.route_all(to_route, &mut report)?;
        if report.stationary {
            self.publish(true);
            return Ok(report);
        }
        if self.config.gp.model == GpModel::Wnoj {
            self.update_accel_inputs();
        }
        if !self.window.factors().is_empty() {
            let opt = self.window.optimize(&self.config.solver, &self.imu)?;
            report.optimize = Some(opt);
            self.newest_covariance = self.window.marginal_covariance(self.window.timeline().newest_id());
        }
        if let Some(newest) = self.window.newest() {
            let t_cut = newest.timestamp - self.config.solver.lag_seconds;
            let removed = self.window.marginalize_before(t_cut, &self.imu)?;
            report.marginalized = removed.len();
            self.finalized.extend(removed);
        }
        self.prune_imu();
        self.publish(false);
        Ok(report)
    }

    fn publish(&self, stationary: bool) {
        if let Some(x) = self.window.newest() {
            self.publisher.store(Snapshot { state: *x, covariance: self.newest_covariance.clone(), stationary });
        }
    }

    fn insert_imu(&mut self, s: ImuSample) {
        let pos = self.imu.partition_point(|q| q.t < s.t);
        if self.imu.get(pos).is_some_and(|q| q.t == s.t) {
            self.imu[pos] = s;
        } else {
            self.imu.insert(pos, s);
        }
    }

    fn prune_imu(&mut self) {
        let Some(oldest) = self.window.states().first() else { return };
        let keep_from = oldest.timestamp - 1.0;
        let k = self.imu.partition_point(|s| s.t < keep_from).saturating_sub(1);
        self.imu.drain(..k);
    }

    fn note_evidence(&mut self, m: &Measurement) {
        match m {
            Measurement::Speed(s) => self.speed_evidence.push_back((s.t, s.v2d.norm())),
            Measurement::Pvt(p) => self.pvt_evidence.push_back((p.t, p.velocity_ned.norm())),
            _ => {}
        }
    }

    fn gate(&mut self, t_now: f64) -> Motion {
        let gate = self.config.gate;
        if !gate.enabled {
            return Motion::Moving;
        }
        let from = t_now - gate.horizon_s;
        for q in [&mut self.speed_evidence, &mut self.pvt_evidence] {
            while q.front().is_some_and(|(t, _)| *t < from) {
                q.pop_front();
            }
        }
        let mut votes = Vec::with_capacity(4);
        for q in [&self.speed_evidence, &self.pvt_evidence] {
            if !q.is_empty() {
                votes.push(q.iter().all(|(_, v)| *v < gate.threshold_mps));
            }
        }
        if let Some(x) = self.window.newest() {
            votes.push(x.nu().norm() < gate.threshold_mps);
            let recent: Vec<&ImuSample> = self.imu.iter().rev().take_while(|s| s.t >= from).collect();
            if !recent.is_empty() {
                let g = gravity_ecef(&x.position()).norm();
                votes.push(recent.iter().all(|s| {
                    (s.gyro - x.bias_gyro).norm() < gate.gyro_threshold
                        && ((s.accel - x.bias_acc).norm() - g).abs() < gate.accel_threshold
                }));
            }
        }
        vote(&votes)
    }

    /// Adds the next state if it is due and IMU data covers it.
    fn extend_one(&mut self, t_now: f64) -> Result<bool> {
        let tl = self.window.timeline();
        let next_t = tl.timestamp(tl.newest_id() + 1);
        let covered = self.imu.last().is_some_and(|s| s.t >= next_t - TIME_EPS);
        if next_t > t_now + TIME_EPS || !covered {
            return Ok(false);
        }
        let x_k = *self.window.newest().ok_or(Error::NotInitialized)?;
        let id_k = self.window.timeline().newest_id();
        let samples = imu_span(&self.imu, x_k.timestamp, next_t).to_vec();
        let noise = self.config.imu_noise;
        let pre = preintegrate(&samples, x_k.timestamp, next_t, &x_k.bias_acc, &x_k.bias_gyro, &IntervalGravity::along(&x_k, next_t - x_k.timestamp), &noise)?;
        let mut x = pre.predict(&x_k);
        if let Some(last) = samples.last() {
            x.body_velocity.fixed_rows_mut::<3>(3).copy_from(&(last.gyro - x_k.bias_gyro));
        }
        if self.config.fusion == FusionMode::Loose {
            x.clock = Default::default();
        }
        let id = self.window.push_state(x)?;
        let dt = self.window.state(id).expect("pushed").timestamp - x_k.timestamp;
        let pair = vec![Anchor::State(id_k), Anchor::State(id)];
        let none = RobustLoss::none();

        let seg = GpSegment::new(x_k.timestamp, x_k.timestamp + dt, self.config.gp)?;
        let gp_cov = DMatrix::from_column_slice(12, 12, seg.prior_covariance().as_slice());
        self.window.add_factor(Factor::new(FactorKind::GpPrior(seg), pair.clone(), &gp_cov, none, x_k.timestamp)?)?;

        let imu_cov = pre.covariance_dyn();
        self.window.add_factor(Factor::new(
            FactorKind::Imu { pre, samples, noise },
            pair.clone(),
            &imu_cov,
            none,
            x_k.timestamp,
        )?)?;
        let bias_cov = bias_covariance(noise.accel_bias_walk, noise.gyro_bias_walk, dt);
        self.window.add_factor(Factor::new(FactorKind::Bias, pair.clone(), &bias_cov, none, x_k.timestamp)?)?;
        if self.config.fusion == FusionMode::Tight {
            let clock_cov = clock_covariance(self.config.clock_bias_psd, self.config.clock_drift_psd, dt);
            self.window.add_factor(Factor::new(FactorKind::Clock { dt }, pair, &clock_cov, none, x_k.timestamp)?)?;
        }
        Ok(true)
    }

    fn route_all(&mut self, fresh: Vec<Measurement>, report: &mut StepReport) -> Result<()> {
        let mut queue: Vec<(Measurement, bool)> = Vec::with_capacity(fresh.len());
        for (_, v) in std::mem::take(&mut self.cache) {
            queue.extend(v.into_iter().map(|m| (m, true)));
        }
        queue.extend(fresh.into_iter().map(|m| (m, false)));
        queue.sort_by_key(|q| q.0.order_key());
        for (m, was_cached) in queue {
            if !self.accepts(&m) {
                continue;
            }
            let kind = self.route_one(&m)?;
            if kind == RoutingKind::Cached {
                if !was_cached {
                    self.stats.record(kind);
                }
                self.cache.entry(m.sensor()).or_default().push(m);
            } else {
                self.stats.record(kind);
            }
        }
        for (sensor, v) in self.cache.iter_mut() {
            let Some(latest) = v.iter().map(Measurement::time).reduce(f64::max) else { continue };
            let before = v.len();
            v.retain(|m| m.time() >= latest - self.config.cache_seconds);
            let evicted = before - v.len();
            if evicted > 0 {
                self.stats.evicted += evicted as u64;
                report.warnings.push(Error::BufferOverflow { sensor: sensor.name().to_string(), evicted });
            }
        }
        Ok(())
    }

    fn accepts(&self, m: &Measurement) -> bool {
        match m {
            Measurement::Imu(_) => false,
            Measurement::Gnss(_) => self.config.fusion == FusionMode::Tight,
            Measurement::Pvt(_) => self.config.fusion == FusionMode::Loose,
            Measurement::Odometry(_) => self.config.use_odometry,
            Measurement::Speed(_) => self.config.use_speed,
        }
    }

    fn route_one(&mut self, m: &Measurement) -> Result<RoutingKind> {
        let tl = self.window.timeline();
        let solver = &self.config.solver;
        let delays = solver.delays;
        let t_sync = solver.t_sync;
        let lever = self.config.antenna_lever_arm;
        let loss = self.config.robust();
        match m {
            Measurement::Gnss(epoch) => {
                let d = tl.route(epoch.t, delays.gnss, t_sync);
                let Some(anchor) = anchor_of(&d) else { return Ok(d.kind) };
                let mut factors = Vec::with_capacity(epoch.sats.len());
                for sat in &epoch.sats {
                    let (var_pr, var_do) = cn0_variance(sat.cn0_dbhz, self.config.lambda_pseudorange, self.config.lambda_doppler);
                    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![var_pr, epoch.wavelength_m.powi(2) * var_do]));
                    let kind = FactorKind::PrDo { sat: *sat, wavelength_m: epoch.wavelength_m, lever_arm: lever };
                    let mut f = Factor::new(kind, vec![anchor], &cov, loss, d.t)?;
                    f.loss_per_row = true;
                    factors.push(f);
                }
                for f in factors {
                    self.window.add_factor(f)?;
                }
                Ok(d.kind)
            }
            Measurement::Pvt(z) => {
                let d = tl.route(z.t, delays.pvt, t_sync);
                let Some(anchor) = anchor_of(&d) else { return Ok(d.kind) };
                let var: Vector6<f64> = z.std_devs.map(|s| s * s);
                let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(var.as_slice()));
                let f = Factor::new(FactorKind::Pvt { z: *z, lever_arm: lever }, vec![anchor], &cov, loss, d.t)?;
                self.window.add_factor(f)?;
                Ok(d.kind)
            }
            Measurement::Speed(s) => {
                let d = tl.route(s.t, delays.speed, t_sync);
                let Some(anchor) = anchor_of(&d) else { return Ok(d.kind) };
                let cov = DMatrix::identity(2, 2) * self.config.speed_sigma.powi(2);
                let f = Factor::new(FactorKind::Speed(*s), vec![anchor], &cov, RobustLoss::none(), d.t)?;
                self.window.add_factor(f)?;
                Ok(d.kind)
            }
            Measurement::Odometry(odo) => {
                let di = tl.route(odo.t_i, delays.odometry, t_sync);
                let dj = tl.route(odo.t_j, delays.odometry, t_sync);
                let kinds = [di.kind, dj.kind];
                if kinds.contains(&RoutingKind::Dropped) {
                    return Ok(RoutingKind::Dropped);
                }
                if kinds.contains(&RoutingKind::Cached) {
                    return Ok(RoutingKind::Cached);
                }
                let (Some(a), Some(b)) = (anchor_of(&di), anchor_of(&dj)) else { return Ok(RoutingKind::Dropped) };
                let cov = DMatrix::from_column_slice(6, 6, odo.covariance.as_slice());
                let f = Factor::new(FactorKind::Between(odo.clone()), vec![a, b], &cov, RobustLoss::none(), dj.t)?;
                self.window.add_factor(f)?;
                Ok(if kinds.contains(&RoutingKind::Interpolated) { RoutingKind::Interpolated } else { RoutingKind::Synchronized })
            }
            Measurement::Imu(_) => Ok(RoutingKind::Synchronized),
        }
    }

    /// Body-frame acceleration inputs from IMU samples around each state time.
    fn update_accel_inputs(&mut self) {
        let half = 0.25 * self.config.solver.spacing;
        let Some(last_t) = self.imu.last().map(|s| s.t) else { return };
        let ids: Vec<u64> = (self.window.first_id()..=self.window.timeline().newest_id()).collect();
        for id in ids {
            let x = *self.window.state(id).expect("window state");
            if last_t < x.timestamp + half {
                continue;
            }
            let lo = self.imu.partition_point(|s| s.t < x.timestamp - half);
            let hi = self.imu.partition_point(|s| s.t <= x.timestamp + half);
            if hi <= lo {
                continue;
            }
            let rt_g = x.rotation().transpose() * gravity_ecef(&x.position());
            let coriolis = x.omega().cross(&x.nu());
            let mut sum = Vector3::zeros();
            for s in &self.imu[lo..hi] {
                sum += s.accel - x.bias_acc + rt_g - coriolis;
            }
            let mean = sum / (hi - lo) as f64;
            if let Some(x) = self.window.state_mut(id) {
                x.accel_input = Vector6::new(mean[0], mean[1], mean[2], 0.0, 0.0, 0.0);
            }
        }
    }
}
