pub mod data;
pub mod diffnum;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod trainer;

// lets `oracle.rs` name the crate the same way from unit and integration tests
#[cfg(test)]
extern crate self as ime_core;
#[cfg(test)]
mod oracle;

pub use data::{Dataset, FilterIndex, Pattern, Quadruple, RawQuadruple, RawSplits, Split};
pub use error::{Error, Result};
pub use eval::RankingReport;
pub use losses::{LossBreakdown, LossOptions, LossTerm, LossWeights, SimilarityFeatures};
pub use model::{ImeModel, ModelDims, PoolingMode, Space};
pub use trainer::{Profile, TrainConfig};
