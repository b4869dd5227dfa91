//! Parametric old-age mortality hazards fitted to cohort death counts by
//! binomial maximum likelihood, with information-criterion model selection,
//! cross-validation, and downsampling and clustering studies.

pub mod cohort;
pub mod error;
pub mod experiments;
pub mod format;
pub mod inference;
pub mod models;
pub mod optimize;
pub mod rng;
pub mod selection;
pub mod special;

pub use cohort::{AgeRow, CohortDataset, CohortMeta, Lifelines, Sex};
pub use error::{DataError, Error, EvalError, Result};
pub use inference::{fit, FitConfig, FitReport, FitResult, LogLikelihood};
pub use models::{HazardModel, NaturalParams, OptParams};
pub use selection::{compare, ModelComparison, Support};
