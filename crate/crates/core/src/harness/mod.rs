//! Experiment manifests, synthetic data and seeded grid execution.
//!
//! Seeds: every derived seed is `derive_seed(master, path)` (a SplitMix64
//! fold, see [`crate::stats::derive_seed`]). A chain cell uses
//! `derive_seed(master, [cell, repeat])`; its initial position is a prior
//! draw from the stream `derive_seed(cell_seed, [INIT_STREAM])`, optionally
//! followed by a warm-up chain seeded with `derive_seed(cell_seed,
//! [WARMUP_STREAM])`. Training
//! data comes from `derive_seed(master, [DATA_STREAM])` and the held-out
//! test set from `derive_seed(master, [TEST_STREAM])`.

mod experiments;
mod manifest;

pub use experiments::*;
pub use manifest::*;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bnn::RegressionDataset;
use crate::error::{Error, Result};
use crate::stats::rng_from_seed;

pub const DATA_STREAM: u64 = u64::MAX;
pub const TEST_STREAM: u64 = u64::MAX - 1;
pub const INIT_STREAM: u64 = 1;
pub const WARMUP_STREAM: u64 = 2;

/// Generative noise of the synthetic regression task.
pub const SYNTHETIC_NOISE: f64 = 0.1;

/// `x ~ U(0, 4)`, `y = cos(2x) + 0.1·N(0, 1)`; per point the `x` draw comes
/// first, then the noise draw.
pub fn generate_synthetic(n: usize, seed: u64) -> Result<RegressionDataset> {
    if n == 0 {
        return Err(Error::InvalidDataset("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = 4.0 * rng.random::<f64>();
        let noise: f64 = rng.sample(StandardNormal);
        inputs.push(x);
        targets.push((2.0 * x).cos() + SYNTHETIC_NOISE * noise);
    }
    RegressionDataset::new(1, 1, inputs, targets)
}

pub fn write_dataset_csv<W: std::io::Write>(data: &RegressionDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..data.input_dim()).map(|k| format!("x{k}")).collect();
    header.extend((0..data.output_dim()).map(|k| format!("y{k}")));
    out.write_record(&header)?;
    for i in 0..data.len() {
        let row: Vec<String> = data
            .input(i)
            .iter()
            .chain(data.target(i))
            .map(|v| v.to_string())
            .collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
