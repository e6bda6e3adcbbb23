//! Ground truth and noisy measurement streams for a [`Scenario`].

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::constellation::Constellation;
use super::scenario::{DegradationKind, Scenario};
use super::trajectory::{Trajectory, TruthSample};
use crate::error::{Error, Result};
use crate::factors::{
    clock_covariance, cn0_variance, ClockState, GnssEpoch, ImuSample, NavState, OdometryIncrement, PvtSolution, SatelliteObs,
    SpeedSample,
};
use crate::geodesy::{dcm_ecef_to_ned, ecef_to_llh, elevation, gravity_ecef, EcefCoord, GeodeticCoord};
use crate::graph::Measurement;
use crate::lie::{expv, stack};

/// IMU samples continue this long past the scenario end so the last state can be bracketed.
pub const IMU_TAIL_S: f64 = 0.5;
const CLOCK_STEP_S: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
enum Stream {
    Imu = 1,
    Gnss = 2,
    Pvt = 3,
    Odometry = 4,
    Speed = 5,
    Clock = 6,
    Multipath = 7,
}

fn stream_rng(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng))
}

/// Sample times `offset + k / rate` up to and including `end`.
fn schedule(rate_hz: f64, offset_s: f64, end: f64) -> impl Iterator<Item = f64> {
    (0..).map(move |k| offset_s + k as f64 / rate_hz).take_while(move |&t| t <= end + 1e-9)
}

#[derive(Debug, Clone, PartialEq)]
struct ClockTrack {
    knots: Vec<ClockState>,
}

impl ClockTrack {
    fn at(&self, t: f64) -> ClockState {
        let k = ((t / CLOCK_STEP_S).floor().max(0.0) as usize).min(self.knots.len() - 1);
        self.knots[k].propagate(t - k as f64 * CLOCK_STEP_S)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BiasTrack {
    times: Vec<f64>,
    acc: Vec<Vector3<f64>>,
    gyro: Vec<Vector3<f64>>,
}

impl BiasTrack {
    fn at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        (self.acc[k], self.gyro[k])
    }
}

/// Continuous ground truth of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub origin: GeodeticCoord,
    pub duration_s: f64,
    trajectory: Trajectory,
    clock: ClockTrack,
    bias: BiasTrack,
}

impl GroundTruth {
    pub fn sample(&self, t: f64) -> TruthSample {
        self.trajectory.sample(t)
    }

    pub fn clock(&self, t: f64) -> ClockState {
        self.clock.at(t)
    }

    /// True `(accelerometer, gyroscope)` biases.
    pub fn biases(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        self.bias.at(t)
    }

    pub fn state(&self, t: f64) -> NavState {
        let s = self.sample(t);
        let (bias_acc, bias_gyro) = self.biases(t);
        NavState {
            timestamp: t,
            pose: s.pose,
            body_velocity: stack(&s.nu, &s.omega),
            accel_input: stack(&s.nu_dot, &s.omega_dot),
            bias_acc,
            bias_gyro,
            clock: self.clock(t),
        }
    }
}

/// Recorded sensor streams, each in generation order. Stamps include the sensor delay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Streams {
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssEpoch>,
    pub pvt: Vec<PvtSolution>,
    pub odometry: Vec<OdometryIncrement>,
    pub speed: Vec<SpeedSample>,
}

impl Streams {
    /// Every reading as a [`Measurement`], sorted by the canonical order key.
    pub fn measurements(&self) -> Vec<Measurement> {
        let mut out: Vec<Measurement> = self
            .imu
            .iter()
            .copied()
            .map(Measurement::Imu)
            .chain(self.gnss.iter().cloned().map(Measurement::Gnss))
            .chain(self.pvt.iter().copied().map(Measurement::Pvt))
            .chain(self.odometry.iter().cloned().map(Measurement::Odometry))
            .chain(self.speed.iter().copied().map(Measurement::Speed))
            .collect();
        out.sort_by_key(|m| m.order_key());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub scenario: Scenario,
    pub constellation: Constellation,
    pub truth: GroundTruth,
    pub streams: Streams,
}

/// Generates the ground truth and all enabled sensor streams.
pub fn simulate(scenario: &Scenario) -> Result<Simulation> {
    scenario.validate()?;
    let origin = scenario.origin()?;
    let trajectory = Trajectory::new(&scenario.trajectory, &origin)?;
    let constellation = Constellation::new(&scenario.constellation, &origin)?;
    let quiet = scenario.noise_free;
    let seed = scenario.seed;
    let end = scenario.duration_s;
    let sensors = &scenario.sensors;

    let clock = {
        let c = &scenario.clock;
        let mut knots = vec![ClockState::new(c.bias_m, c.drift_mps)];
        if !quiet {
            let cov = clock_covariance(c.bias_psd, c.drift_psd, CLOCK_STEP_S);
            let l = cov.cholesky().ok_or_else(|| Error::Scenario("clock covariance not positive definite".into()))?.l();
            let mut rng = stream_rng(seed, Stream::Clock);
            let steps = ((end + IMU_TAIL_S) / CLOCK_STEP_S).ceil() as usize + 1;
            for _ in 0..steps {
                let last = knots[knots.len() - 1].propagate(CLOCK_STEP_S);
                let (n0, n1) = (normal(&mut rng), normal(&mut rng));
                knots.push(ClockState::new(last.bias_m + l[(0, 0)] * n0, last.drift_mps + l[(1, 0)] * n0 + l[(1, 1)] * n1));
            }
        }
        ClockTrack { knots }
    };

    let imu_spec = &sensors.imu;
    let noise = imu_spec.noise;
    let mut imu_rng = stream_rng(seed, Stream::Imu);
    let imu_times: Vec<f64> = schedule(imu_spec.rate_hz, imu_spec.offset_s, end + IMU_TAIL_S).collect();
    let mut bias = BiasTrack {
        times: vec![0.0],
        acc: vec![Vector3::from(imu_spec.initial_accel_bias)],
        gyro: vec![Vector3::from(imu_spec.initial_gyro_bias)],
    };
    let mut imu = Vec::with_capacity(imu_times.len());
    let sigma_a = noise.accel_noise_density * imu_spec.rate_hz.sqrt();
    let sigma_g = noise.gyro_noise_density * imu_spec.rate_hz.sqrt();
    for &t in &imu_times {
        if !quiet {
            let dt = t - bias.times[bias.times.len() - 1];
            if dt > 0.0 {
                let ba = bias.acc[bias.acc.len() - 1] + noise.accel_bias_walk * dt.sqrt() * normal3(&mut imu_rng);
                let bg = bias.gyro[bias.gyro.len() - 1] + noise.gyro_bias_walk * dt.sqrt() * normal3(&mut imu_rng);
                bias.times.push(t);
                bias.acc.push(ba);
                bias.gyro.push(bg);
            }
        }
        let s = trajectory.sample(t);
        let (ba, bg) = bias.at(t);
        let mut accel = s.specific_force(&gravity_ecef(&s.pose.translation)) + ba;
        let mut gyro = s.omega + bg;
        if !quiet {
            accel += sigma_a * normal3(&mut imu_rng);
            gyro += sigma_g * normal3(&mut imu_rng);
        }
        imu.push(ImuSample { t, accel, gyro });
    }

    let truth = GroundTruth { origin, duration_s: end, trajectory, clock, bias };
    let mut streams = Streams { imu, ..Default::default() };

    let gnss = &sensors.gnss;
    let lever = Vector3::from(gnss.lever_arm);
    let antenna = |s: &TruthSample| {
        let r = s.pose.rotation;
        (s.pose.translation + r * lever, r * (s.nu + s.omega.cross(&lever)))
    };
    let outage = |t: f64| scenario.active(t).any(|k| matches!(k, DegradationKind::Outage));

    if gnss.enabled {
        let mut rng = stream_rng(seed, Stream::Gnss);
        let mut mp_rng = stream_rng(seed, Stream::Multipath);
        let mask = gnss.elevation_mask_deg.to_radians();
        for t in schedule(gnss.rate_hz, gnss.offset_s, end) {
            let s = truth.sample(t);
            let (p_ant, v_ant) = antenna(&s);
            let clk = truth.clock(t);
            let mut sats = Vec::new();
            for sat in &constellation.satellites {
                let (ps, vs) = (sat.position(t), sat.velocity(t));
                let el = elevation(&p_ant, &ps)?;
                let draws = [normal(&mut rng), normal(&mut rng), normal(&mut rng)];
                let hit: f64 = mp_rng.random();
                if el < mask {
                    continue;
                }
                let mut cn0 = gnss.zenith_cn0_dbhz - gnss.cn0_slope_db_per_deg * (90.0 - el.to_degrees());
                let (mut pr_noise, mut do_noise) = (0.0, 0.0);
                if !quiet {
                    cn0 += gnss.cn0_noise_db * draws[0];
                    let (var_pr, var_do) = cn0_variance(cn0, gnss.lambda_pseudorange, gnss.lambda_doppler);
                    pr_noise = var_pr.sqrt() * draws[1];
                    do_noise = var_do.sqrt() * draws[2];
                }
                let los = ps - p_ant;
                let range = los.norm();
                let u = los / range;
                let mut multipath = 0.0;
                for kind in scenario.active(t) {
                    if let DegradationKind::Multipath { bias_m, fraction } = kind {
                        if hit < *fraction {
                            multipath += bias_m;
                        }
                    }
                }
                sats.push(SatelliteObs {
                    sat_id: sat.id,
                    sat_pos: ps,
                    sat_vel: vs,
                    pseudorange_m: range + clk.bias_m + pr_noise + multipath,
                    doppler_hz: -(u.dot(&(v_ant - vs)) + clk.drift_mps) / gnss.wavelength_m + do_noise,
                    cn0_dbhz: cn0,
                    elevation_rad: el,
                });
            }
            for kind in scenario.active(t) {
                match kind {
                    DegradationKind::Outage => sats.clear(),
                    DegradationKind::ReducedSats { n } => {
                        sats.sort_by(|a, b| b.elevation_rad.total_cmp(&a.elevation_rad));
                        sats.truncate(*n);
                        sats.sort_by_key(|s| s.sat_id);
                    }
                    DegradationKind::Multipath { .. } => {}
                }
            }
            streams.gnss.push(GnssEpoch { t: t + gnss.delay_s, wavelength_m: gnss.wavelength_m, sats });
        }
    }

    let pvt = &sensors.pvt;
    if pvt.enabled {
        let mut rng = stream_rng(seed, Stream::Pvt);
        let sd = Vector6::new(pvt.sigma_pos_m, pvt.sigma_pos_m, pvt.sigma_pos_m, pvt.sigma_vel_mps, pvt.sigma_vel_mps, pvt.sigma_vel_mps);
        for t in schedule(pvt.rate_hz, pvt.offset_s, end) {
            let (np, nv) = (normal3(&mut rng), normal3(&mut rng));
            if outage(t) {
                continue;
            }
            let s = truth.sample(t);
            let (mut p, v) = antenna(&s);
            if !quiet {
                p += pvt.sigma_pos_m * np;
            }
            let mut v_ned = dcm_ecef_to_ned(&ecef_to_llh(&EcefCoord::from(p))?) * v;
            if !quiet {
                v_ned += pvt.sigma_vel_mps * nv;
            }
            streams.pvt.push(PvtSolution { t: t + pvt.delay_s, position: p, velocity_ned: v_ned, std_devs: sd * pvt.lying_factor });
        }
    }

    let odo = &sensors.odometry;
    if odo.enabled {
        let mut rng = stream_rng(seed, Stream::Odometry);
        let step = 1.0 / odo.rate_hz;
        let (st, sr) = (odo.sigma_trans_m, odo.sigma_rot_deg.to_radians());
        let cov = Matrix6::from_diagonal(&Vector6::new(st * st, st * st, st * st, sr * sr, sr * sr, sr * sr));
        for t_i in schedule(odo.rate_hz, odo.offset_s, end - step) {
            let t_j = t_i + step;
            let n = stack(&(st * normal3(&mut rng)), &(sr * normal3(&mut rng)));
            let mut delta = truth.sample(t_j).pose.inverse() * truth.sample(t_i).pose;
            if !quiet {
                delta = delta * expv(&n);
            }
            streams.odometry.push(OdometryIncrement { t_i: t_i + odo.delay_s, t_j: t_j + odo.delay_s, delta, covariance: cov });
        }
    }

    let speed = &sensors.speed;
    if speed.enabled {
        let mut rng = stream_rng(seed, Stream::Speed);
        let lever = Vector3::from(speed.lever_arm);
        for t in schedule(speed.rate_hz, speed.offset_s, end) {
            let s = truth.sample(t);
            let v = s.nu + s.omega.cross(&lever);
            let mut v2d = Vector2::new(v.x, v.y);
            let n = Vector2::new(normal(&mut rng), normal(&mut rng));
            if !quiet {
                v2d += speed.sigma_mps * n;
            }
            streams.speed.push(SpeedSample { t: t + speed.delay_s, v2d, lever_arm: lever, gyro_at_t: s.omega });
        }
    }

    Ok(Simulation { scenario: scenario.clone(), constellation, truth, streams })
}
