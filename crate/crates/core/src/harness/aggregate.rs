use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::Algorithm;

use super::Record;

/// z-quantile of the two-sided 95% normal band.
pub const Z95: f64 = 1.96;

/// Mean curve point with a 95% normal-approximation band across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub algorithm: Algorithm,
    pub task: usize,
    pub iteration: u64,
    pub seeds: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Groups records by `(algorithm, task, iteration)` and reports the mean and
/// `mean +- 1.96 * s / sqrt(R)`, ordered by the group key.
pub fn aggregate(records: &[Record]) -> Result<Vec<Band>> {
    if records.is_empty() {
        return Err(Error::EmptyData("no records to aggregate"));
    }
    let mut groups: BTreeMap<(Algorithm, usize, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.algorithm, r.task, r.iteration))
            .or_default()
            .push(r.value);
    }
    Ok(groups
        .into_iter()
        .map(|((algorithm, task, iteration), values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let half = Z95 * std / (n as f64).sqrt();
            Band {
                algorithm,
                task,
                iteration,
                seeds: n,
                mean,
                std,
                lower: mean - half,
                upper: mean + half,
            }
        })
        .collect())
}

/// The `(iteration, mean)` curve of one algorithm on one task.
pub fn mean_curve(bands: &[Band], algorithm: Algorithm, task: usize) -> Vec<(u64, f64)> {
    bands
        .iter()
        .filter(|b| b.algorithm == algorithm && b.task == task)
        .map(|b| (b.iteration, b.mean))
        .collect()
}
