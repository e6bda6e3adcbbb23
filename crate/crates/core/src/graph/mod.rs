//! Time-centric factor graph: timeline, routing, fixed-lag smoothing and publishing.

pub mod estimator;
pub mod factor;
pub mod gate;
pub mod measurement;
pub mod publisher;
pub mod timeline;
pub mod window;

pub use estimator::{Estimator, EstimatorConfig, RoutingStats, StepReport};
pub use factor::{Anchor, EvalContext, Factor, FactorKind, LinearPrior, Linearized};
pub use gate::{near_zero_velocity_gate, vote, GateConfig, Motion};
pub use measurement::{Measurement, SensorKind};
pub use publisher::{propagate, Publisher, Snapshot};
pub use timeline::{route_measurement, RoutingDecision, RoutingKind, StateTimeline, TIME_EPS};
pub use window::{FusionMode, OptimizeReport, SensorDelays, SolverConfig, Window};
