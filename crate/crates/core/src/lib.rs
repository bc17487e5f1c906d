pub mod chain;
pub mod config;
pub mod data;
pub mod data_model;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod io;
pub mod metrics;
pub mod missbart1;
pub mod missbart2;
pub mod mvbart;
pub mod sim;
pub mod stats;
pub mod tree;

pub use chain::{merge_chains, ChainOutput, Draw, ModelKind};
pub use config::{PsiHyperPrior, SamplerConfig};
pub use data::Dataset;
pub use error::{Error, Result};
