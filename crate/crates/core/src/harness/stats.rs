//! Summary statistics used to compare learners.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::learner::Algorithm;

use super::Record;

/// Final-checkpoint return of every `(seed, task)` run of `algorithm`.
pub fn final_returns(records: &[Record], algorithm: Algorithm) -> BTreeMap<(u64, usize), f64> {
    let mut last: BTreeMap<(u64, usize), (u64, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.algorithm == algorithm) {
        let e = last.entry((r.seed, r.task)).or_insert((r.iteration, r.value));
        if r.iteration >= e.0 {
            *e = (r.iteration, r.value);
        }
    }
    last.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

/// Mean final return per task, indexed by task.
pub fn final_means(records: &[Record], algorithm: Algorithm, n_tasks: usize) -> Vec<f64> {
    let mut sums = vec![(0.0, 0usize); n_tasks];
    for ((_, task), v) in final_returns(records, algorithm) {
        sums[task].0 += v;
        sums[task].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

/// Outcome of a one-sided paired t-test of `H1: mean(a - b) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub pairs: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

impl PairedTest {
    /// p-value of the two-sided alternative `mean(a - b) != 0`.
    pub fn two_sided_p(&self) -> f64 {
        (2.0 * self.p_value.min(1.0 - self.p_value)).min(1.0)
    }
}

pub fn paired_t_test_greater(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!(
            "paired test needs equal samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::EmptyData("paired test needs at least two pairs"));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (t, p_value) = if var == 0.0 {
        let t = if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        (t, if mean > 0.0 { 0.0 } else if mean < 0.0 { 1.0 } else { 0.5 })
    } else {
        let t = mean / (var / n).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        pairs: a.len(),
        mean_diff: mean,
        t,
        p_value,
    })
}

/// First checkpoint of `curve` whose value is at least `threshold`.
pub fn first_reaching(curve: &[(u64, f64)], threshold: f64) -> Option<u64> {
    curve.iter().find(|(_, v)| *v >= threshold).map(|(n, _)| *n)
}

/// `start + fraction * (end - start)` of a curve's first and last points:
/// "`fraction` of the way" from the untrained to the final return.
pub fn progress_threshold(curve: &[(u64, f64)], fraction: f64) -> Option<f64> {
    let (first, last) = (curve.first()?.1, curve.last()?.1);
    Some(first + fraction * (last - first))
}
