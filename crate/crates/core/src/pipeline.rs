//! End-to-end runs: simulate a scenario, feed the estimator on a simulated
//! clock, publish at IMU rate and score the result against ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{interpolate_nav, ImuSample, LossKind, NavState, STATE_DIM};
use crate::gp::{GpHyperparams, GpSegment};
use crate::graph::{propagate, Estimator, EstimatorConfig, FusionMode, GateConfig, Measurement, RoutingStats, SensorDelays, SolverConfig, StepReport};
use crate::lie::JacobianMode;
use crate::metrics::{epoch_error, smoothness, write_trajectory_csv, EpochError, ErrorSummary, TrajectoryRow};
use crate::sim::{simulate, Scenario, Simulation};

/// Standard deviations of the initial-state prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSettings {
    pub position_m: f64,
    pub rotation_deg: f64,
    pub velocity_mps: f64,
    pub angular_rate_dps: f64,
    pub accel_bias_mps2: f64,
    pub gyro_bias_dps: f64,
    pub clock_bias_m: f64,
    pub clock_drift_mps: f64,
    /// Start from a draw of the prior around the truth instead of the truth itself.
    pub perturb: bool,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self {
            position_m: 1.0,
            rotation_deg: 1.0,
            velocity_mps: 0.3,
            angular_rate_dps: 1.0,
            accel_bias_mps2: 0.05,
            gyro_bias_dps: 0.05,
            clock_bias_m: 10.0,
            clock_drift_mps: 1.0,
            perturb: false,
        }
    }
}

impl InitSettings {
    pub fn sigmas(&self, fusion: FusionMode) -> Vec<f64> {
        let mut s = Vec::with_capacity(STATE_DIM);
        let per = [
            self.position_m,
            self.rotation_deg.to_radians(),
            self.velocity_mps,
            self.angular_rate_dps.to_radians(),
            self.accel_bias_mps2,
            self.gyro_bias_dps.to_radians(),
        ];
        for v in per {
            s.extend([v; 3]);
        }
        s.extend([self.clock_bias_m, self.clock_drift_mps]);
        s.truncate(fusion.dim());
        s
    }
}

/// Estimator settings that do not describe the sensors; read from the `[run]`
/// table of a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub fusion: FusionMode,
    pub gp: GpHyperparams,
    pub jacobian_mode: JacobianMode,
    pub solver: SolverConfig,
    pub loss: LossKind,
    pub loss_scale: f64,
    pub use_odometry: bool,
    pub use_speed: bool,
    pub gate: GateConfig,
    pub cache_seconds: f64,
    pub init: InitSettings,
}

impl Default for RunSettings {
    fn default() -> Self {
        let est = EstimatorConfig::default();
        Self {
            fusion: est.fusion,
            gp: est.gp,
            jacobian_mode: est.jacobian_mode,
            solver: est.solver,
            loss: est.loss,
            loss_scale: est.loss_scale,
            use_odometry: true,
            use_speed: true,
            gate: est.gate,
            cache_seconds: est.cache_seconds,
            init: InitSettings::default(),
        }
    }
}

/// A scenario together with its run settings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub settings: RunSettings,
}

impl RunConfig {
    /// Parses a scenario file; the optional `[run]` table holds [`RunSettings`].
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config("<file>", e.message()))?;
        let settings = match table.remove("run") {
            Some(v) => v.try_into::<RunSettings>().map_err(|e| Error::config("run", e.message()))?,
            None => RunSettings::default(),
        };
        let scenario = Scenario::from_toml_str(&toml::to_string(&table).map_err(|e| Error::config("<file>", e.to_string()))?)?;
        let cfg = Self { scenario, settings };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("scenario", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let mut table = toml::Table::try_from(&self.scenario).map_err(|e| Error::Io(e.to_string()))?;
        table.insert("run".into(), toml::Value::try_from(self.settings).map_err(|e| Error::Io(e.to_string()))?);
        toml::to_string(&table).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let s = &self.scenario.sensors;
        match self.settings.fusion {
            FusionMode::Tight if !s.gnss.enabled => {
                return Err(Error::config("sensors.gnss.enabled", "tight fusion requires the raw GNSS stream"));
            }
            FusionMode::Loose if !s.pvt.enabled => {
                return Err(Error::config("sensors.pvt.enabled", "loose fusion requires the PVT stream"));
            }
            _ => {}
        }
        self.estimator_config().validate()
    }

    /// Estimator configuration: run settings plus the sensor models of the scenario.
    pub fn estimator_config(&self) -> EstimatorConfig {
        let r = &self.settings;
        let s = &self.scenario.sensors;
        let mut solver = r.solver;
        solver.delays = SensorDelays { gnss: s.gnss.delay_s, pvt: s.pvt.delay_s, odometry: s.odometry.delay_s, speed: s.speed.delay_s };
        EstimatorConfig {
            fusion: r.fusion,
            gp: r.gp,
            jacobian_mode: r.jacobian_mode,
            solver,
            loss: r.loss,
            loss_scale: r.loss_scale,
            imu_noise: s.imu.noise,
            clock_bias_psd: self.scenario.clock.bias_psd,
            clock_drift_psd: self.scenario.clock.drift_psd,
            lambda_pseudorange: s.gnss.lambda_pseudorange,
            lambda_doppler: s.gnss.lambda_doppler,
            antenna_lever_arm: Vector3::from(s.gnss.lever_arm),
            speed_sigma: s.speed.sigma_mps,
            use_odometry: r.use_odometry && s.odometry.enabled,
            use_speed: r.use_speed && s.speed.enabled,
            gate: r.gate,
            cache_seconds: r.cache_seconds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationStats {
    pub windows: usize,
    pub total: usize,
    pub max: usize,
    pub mean: f64,
    pub not_converged: usize,
    pub ill_conditioned: usize,
}

/// Everything the metrics JSON holds. Contains no wall-clock quantities, so
/// identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub fusion: FusionMode,
    pub gp: crate::gp::GpModel,
    pub loss: LossKind,
    pub lag_seconds: f64,
    pub epochs: usize,
    pub rmse_2d_m: f64,
    pub rmse_3d_m: f64,
    pub max_2d_err_m: f64,
    pub mean_yaw_err_deg: f64,
    pub smoothness_s: f64,
    pub velocity_rmse_mps: f64,
    /// Velocity error of the smoothed trajectory queried midway between states.
    pub interp_velocity_rmse_mps: f64,
    /// Same figures over the smoothed (finalized) states.
    pub smoothed: ErrorSummary,
    pub final_cost: f64,
    pub iterations: IterationStats,
    pub routing: RoutingStats,
    /// Published-trajectory errors at 10 Hz.
    pub error_series: Vec<EpochError>,
}

/// Result of [`run_simulation`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// High-rate trajectory from the publisher.
    pub published: Vec<NavState>,
    /// Smoothed states: finalized then the final window.
    pub smoothed: Vec<NavState>,
    pub warnings: Vec<Error>,
}

/// Initial state drawn from the truth at `t = 0`.
pub fn initial_state(sim: &Simulation, init: &InitSettings, fusion: FusionMode) -> NavState {
    let x = sim.truth.state(0.0);
    if !init.perturb {
        return x;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sim.scenario.seed ^ 0x1417);
    let sig = init.sigmas(fusion);
    let delta: Vec<f64> = (0..STATE_DIM).map(|k| sig.get(k).copied().unwrap_or(0.0) * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
    let mut out = x.retract(&delta);
    out.timestamp = x.timestamp;
    out
}

/// Runs the estimator over `sim`, calling `observe` after every optimization step.
pub fn run_simulation<F>(sim: &Simulation, config: &RunConfig, mut observe: F) -> Result<RunOutcome>
where
    F: FnMut(&Estimator, &StepReport),
{
    config.validate()?;
    let est_cfg = config.estimator_config();
    let fusion = est_cfg.fusion;
    let x0 = initial_state(sim, &config.settings.init, fusion);
    let mut est = Estimator::new(est_cfg, x0, &config.settings.init.sigmas(fusion))?;
    let publisher = est.publisher();
    let noise = est_cfg.imu_noise;

    let measurements = sim.streams.measurements();
    let mut arrival: Vec<&Measurement> = measurements.iter().collect();
    arrival.sort_by(|a, b| a.time().total_cmp(&b.time()).then(a.order_key().cmp(&b.order_key())));

    let duration = sim.scenario.duration_s;
    let period = 1.0 / est_cfg.solver.opt_frequency_hz;
    let steps = (duration / period + 1e-9).floor() as usize;
    let mut next = 0usize;
    let mut imu: Vec<ImuSample> = Vec::new();
    let mut published: Vec<NavState> = Vec::new();
    let mut warnings = Vec::new();
    let mut iters = IterationStats::default();
    let mut interp: BTreeMap<i64, f64> = BTreeMap::new();

    for k in 1..=steps {
        let t_now = k as f64 * period;
        while let Some(m) = arrival.get(next).filter(|m| m.time() <= t_now + 1e-9) {
            if let Measurement::Imu(s) = m {
                imu.push(*s);
                if let Some(snap) = publisher.snapshot() {
                    let lo = imu.partition_point(|q| q.t <= snap.state.timestamp).saturating_sub(1);
                    if s.t > snap.state.timestamp && s.t <= duration {
                        published.push(propagate(&snap.state, s.t, &imu[lo..], &noise, snap.stationary)?);
                    }
                }
            }
            est.submit((*m).clone());
            next += 1;
        }
        let report = est.step(t_now)?;
        if let Some(opt) = &report.optimize {
            iters.windows += 1;
            iters.total += opt.iterations;
            iters.max = iters.max.max(opt.iterations);
            iters.not_converged += usize::from(!opt.converged);
            iters.ill_conditioned += usize::from(opt.ill_conditioned);
        }
        if report.optimize.is_some() {
            for w in est.window().states().windows(2) {
                if let Some(sq) = midpoint_velocity_error(&w[0], &w[1], &est_cfg, sim, duration)? {
                    interp.insert((w[0].timestamp * 1e6).round() as i64, sq);
                }
            }
        }
        observe(&est, &report);
        warnings.extend(report.warnings);
        let keep_from = published.last().map_or(0.0, |x| x.timestamp) - 2.0;
        let cut = imu.partition_point(|q| q.t < keep_from);
        imu.drain(..cut);
    }
    iters.mean = if iters.windows == 0 { 0.0 } else { iters.total as f64 / iters.windows as f64 };

    let smoothed: Vec<NavState> = est.all_states();
    let in_span = |x: &&NavState| x.timestamp <= duration + 1e-9;
    let errors: Vec<EpochError> = published.iter().filter(in_span).map(|x| epoch_error(x, &sim.truth)).collect::<Result<_>>()?;
    let summary = ErrorSummary::from_errors(&errors);
    let smoothed_errors: Vec<EpochError> = smoothed.iter().filter(in_span).map(|x| epoch_error(x, &sim.truth)).collect::<Result<_>>()?;
    let origin_enu: Vec<Vector3<f64>> =
        published.iter().filter(in_span).map(|x| crate::geodesy::ecef_to_enu(&x.position(), &sim.truth.origin)).collect();
    let smooth = if origin_enu.len() >= 3 { smoothness(&origin_enu).unwrap_or(0.0) } else { 0.0 };

    let mut series = Vec::new();
    let mut next_tick = 0.0;
    for e in &errors {
        if e.t + 1e-9 >= next_tick {
            series.push(*e);
            next_tick = (e.t * 10.0 + 1e-6).floor() / 10.0 + 0.1;
        }
    }

    let report = MetricsReport {
        scenario: sim.scenario.name.clone(),
        seed: sim.scenario.seed,
        fusion,
        gp: est_cfg.gp.model,
        loss: est_cfg.loss,
        lag_seconds: est_cfg.solver.lag_seconds,
        epochs: summary.epochs,
        rmse_2d_m: summary.rmse_2d_m,
        rmse_3d_m: summary.rmse_3d_m,
        max_2d_err_m: summary.max_2d_err_m,
        mean_yaw_err_deg: summary.mean_yaw_err_deg,
        smoothness_s: smooth,
        velocity_rmse_mps: summary.velocity_rmse_mps,
        interp_velocity_rmse_mps: if interp.is_empty() { 0.0 } else { (interp.values().sum::<f64>() / interp.len() as f64).sqrt() },
        smoothed: ErrorSummary::from_errors(&smoothed_errors),
        final_cost: est.cost()?,
        iterations: iters,
        routing: est.routing_stats(),
        error_series: series,
    };
    Ok(RunOutcome { report, published, smoothed, warnings })
}

/// Squared velocity error of the GP midpoint between two states of the same solve.
fn midpoint_velocity_error(a: &NavState, b: &NavState, cfg: &EstimatorConfig, sim: &Simulation, duration: f64) -> Result<Option<f64>> {
    let seg = GpSegment::new(a.timestamp, b.timestamp, cfg.gp)?;
    let q = interpolate_nav(a, b, &seg.kernel(0.5 * seg.dt())?, cfg.jacobian_mode)?.state;
    if q.timestamp > duration {
        return Ok(None);
    }
    Ok(Some((q.world_velocity() - sim.truth.sample(q.timestamp).world_velocity()).norm_squared()))
}

/// Simulates and runs `config`.
pub fn run(config: &RunConfig) -> Result<(Simulation, RunOutcome)> {
    config.validate()?;
    let sim = simulate(&config.scenario)?;
    let out = run_simulation(&sim, config, |_, _| {})?;
    Ok((sim, out))
}

/// Writes `trajectory.csv` (published), `smoothed.csv`, `errors.csv` and `metrics.json`.
pub fn write_artifacts(out: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows = |xs: &[NavState]| xs.iter().map(TrajectoryRow::from_state).collect::<Result<Vec<_>>>();
    write_trajectory_csv(&dir.join("trajectory.csv"), &rows(&out.published)?)?;
    write_trajectory_csv(&dir.join("smoothed.csv"), &rows(&out.smoothed)?)?;
    let mut w = csv::Writer::from_path(dir.join("errors.csv")).map_err(|e| Error::Io(e.to_string()))?;
    for e in &out.report.error_series {
        w.serialize(e).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    std::fs::write(dir.join("metrics.json"), metrics_json(&out.report)?)?;
    Ok(())
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
