//! Tightly-coupled GPS + inertial factor-graph estimation.
//!
//! The numeric modules are generic over the scalar type ([`Real`]); the
//! aliases at the crate root fix it to `f64`, which is what the simulator,
//! the scenario runner and the CLI use.

// Negated comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod factors;
pub mod geodetic;
pub mod geom;
pub mod graph;
pub mod imu;
pub mod io;
pub mod scalar;
pub mod simkit;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rot3 = geom::Rot3<f64>;
pub type Pose3 = geom::Pose3<f64>;
pub type ImuSample = imu::ImuSample<f64>;
pub type ImuBias = imu::ImuBias<f64>;
pub type ImuNoise = imu::ImuNoise<f64>;
pub type NavState = imu::NavState<f64>;
pub type PreintegratedImu = imu::PreintegratedImu<f64>;
pub type GpsMeasurement = factors::GpsMeasurement<f64>;
pub type ExtrinsicsGW = factors::ExtrinsicsGW<f64>;
pub type GpsFactor = factors::GpsFactor<f64>;
pub type RelPoseFactor = factors::RelPoseFactor<f64>;
pub type ImuFactor = factors::ImuFactor<f64>;
pub type GeodeticPoint = geodetic::GeodeticPoint<f64>;
pub type EnuOrigin = geodetic::EnuOrigin<f64>;
pub type GraphProblem = graph::GraphProblem<f64>;
pub type ObservabilityReport = align::ObservabilityReport<f64>;
pub type AlignmentCorrection = align::AlignmentCorrection<f64>;

pub use align::{AlignmentMode, Segment};
pub use estimator::{AlignmentEvent, Estimator, EstimatorConfig, PipelineMode, Stage};
pub use eval::{compute_ate, run_scenario, AteMode, AteResult, ScenarioConfig, ScenarioReport};
pub use factors::StateId;
pub use graph::{SolveReport, SolverSettings, Termination};
