//! Synthetic scenarios: analytic ground truth, an idealized constellation and
//! noisy asynchronous sensor streams with scripted degradations.

pub mod constellation;
pub mod export;
pub mod generate;
pub mod scenario;
pub mod trajectory;

pub use constellation::{Constellation, ConstellationSpec, Satellite, SkyPosition};
pub use generate::{simulate, GroundTruth, Simulation, Streams, IMU_TAIL_S};
pub use scenario::{
    ClockSpec, Degradation, DegradationKind, GnssSpec, ImuSpec, OdometrySpec, OriginSpec, PvtSpec, Scenario, SensorsSpec,
    SpeedSpec,
};
pub use trajectory::{SegmentSpec, Trajectory, TrajectorySpec, TruthSample};
