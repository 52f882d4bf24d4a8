//! Design-based estimation and variance inference for network experiments
//! under stochastic interventions.

pub mod config;
pub mod design;
pub mod error;
pub mod estimand;
pub mod estimators;
pub mod frame;
pub mod io;
pub mod oracle;
pub mod report;
pub mod sim;
pub mod variance;

pub use design::{choose, nearest_count, AssignmentLaw, Assignment, Block, BlockDesign, Event, DEFAULT_SUPPORT_CAP};
pub use error::{Error, Result};
pub use estimand::{Admissible, Analysis, ArmPlan, ClusterPlan, Estimand, EstimandKind, Group, Intervention, Numerics};
pub use estimators::{ArmEstimate, Observed, PointEstimate};
pub use frame::{ClusterFrame, ClusterKeys, ExperimentFrame, KeyMap, Unit};
pub use variance::{
    pool_outcomes, var_hajek_hat, HajekMode, MeasurabilityPolicy, PooledOutcomes,
    PooledPotentials, Quantity, Term, VarianceEstimate,
};
pub use oracle::{exact_estimand, exact_moments, Moments, PotentialTable, UnitPotential};
pub use config::{AnalysisConfig, EstimandSpec, EstimatorKind, VarianceMethod};
pub use io::{Bundle, DatasetPaths};
pub use report::{critical_value, EstimateReport, RunOptions};
pub use sim::{run_simulation, SimConfig, SimGrid, SimSummary};
