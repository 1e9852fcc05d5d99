//! Exact t-SNE embedding, linear Gaussian cluster-weighted models with the
//! fourteen parsimonious covariance structures, information-criterion model
//! selection and external cluster-validity indices.

pub mod covariance;
pub mod cwm;
pub mod data;
pub mod error;
pub mod metrics;
pub mod selection;
pub mod synthetic;
pub mod tsne;

pub use covariance::{param_count, CovModelId};
pub use cwm::{fit, CwmParams, FitConfig, FitResult, InitStrategy, Responsibilities};
pub use data::{DataMatrix, LabeledDataset, RandomSource, RegressionData};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{compare, majority_accuracy, pair_counts, ContingencyTable, Indices, PairCounts};
pub use selection::{sweep, Criterion, CriteriaSet, SweepConfig, SweepResult};
pub use tsne::{embed, EmbeddingState, TsneConfig};
