//! Posterior inference over a restricted-class diagram.

mod exec;
mod mode;
mod model;
pub mod quadrature;
mod report;
mod utility;

use thiserror::Error;

use crate::diagram::DiagramError;

pub use exec::{map_indexed, Execution};
pub use mode::{
    laplace_summaries, logit, posterior_mode, posterior_modes, sigmoid, starting_points,
    LaplaceSummaries, ModeOptions, ModeResult, ParamSummary, StartRun, SummaryMethod,
};
pub use model::{BetaShape, FreeParameter, GradientParts, LogDensityTerm, Op, ReducedModel};
pub use report::{analyze, InferenceReport, ParameterReport, REPORT_VERSION};
pub use utility::{
    expected_utility, recommend, ArmUtility, ExpectedUtility, Integral, Marginal, Recommendation,
    UtilitySpec, TIE_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("priors not yet elicited for: {}", .0.join(", "))]
    PendingPriors(Vec<String>),
    #[error("model has no free parameters")]
    EmptyModel,
    #[error("diagram is outside the restricted class: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error("point is not strictly inside (0, 1): slot {index} = {value}")]
    BoundaryPoint { index: usize, value: f64 },
    #[error("expected {expected} coordinates, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("posterior mode search did not converge")]
    NotConverged,
    #[error("no patient-level {0} parameter")]
    MissingPatientParameter(&'static str),
    #[error("patient-level {0} parameter does not map to a free parameter")]
    PatientNotFree(&'static str),
    #[error("invalid utility: {0}")]
    InvalidUtility(String),
    #[error("degenerate marginal: {0}")]
    DegenerateMarginal(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
