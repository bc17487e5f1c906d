//! Runs one or more chains of a model and merges them.

use rayon::prelude::*;

use crate::chain::{merge_chains, ChainOutput, ModelKind};
use crate::config::SamplerConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::missbart1::run_missbart1;
use crate::missbart2::run_missbart2;
use crate::mvbart::run_mvbart;
use crate::tree::Design;

/// A single chain; `chain` selects the random stream.
pub fn run_chain(
    model: ModelKind,
    data: &Dataset,
    cfg: &SamplerConfig,
    x_test: Option<&Design>,
    chain: u64,
) -> Result<ChainOutput> {
    match model {
        ModelKind::MissBart1 => run_missbart1(data, cfg, x_test, chain),
        ModelKind::MissBart2 => run_missbart2(data, cfg, x_test, chain),
        ModelKind::MvBart => run_mvbart(data, cfg, x_test, chain),
    }
}

/// Runs `cfg.chains` chains on the rayon pool, one chain per task.
pub fn fit(model: ModelKind, data: &Dataset, cfg: &SamplerConfig, x_test: Option<&Design>) -> Result<ChainOutput> {
    cfg.validate()?;
    let chains = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| run_chain(model, data, cfg, x_test, c))
        .collect::<Result<Vec<_>>>()?;
    merge_chains(chains)
}
