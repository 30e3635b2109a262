//! Integrity monitoring for tightly coupled GNSS/IMU/vision sliding-window estimation.

pub mod factors;
pub mod geom;
pub mod integrity;
pub mod pipeline;
pub mod preint;
pub mod scenario;
pub mod solver;
pub mod state;

pub use geom::{AnchorGeodesy, FrameTag, FrameTransform, GeomError, Rotation};
pub use preint::{ImuNoise, ImuSample, PreintegratedImu};
pub use state::{manifold_plus, Constellation, ImuState, SatId};
pub use integrity::{
    allocate_integrity_risk, BudgetInputs, ClassStatistic, DetectionConfig, Exclusion, FaultMode, IntegrityBudget,
    IntegrityError, ModeSummary, PebReport,
};
pub use pipeline::{run_pipeline, EpochRecord, ModeRecord, PipelineConfig, PipelineError, RunResult};
pub use scenario::{generate_scenario, Scenario, ScenarioConfig, ScenarioError};
pub use solver::{PriorSigmas, SlidingWindow, SolverError, WindowConfig};
