use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One axis of a [`DiscretizationGrid`]: `bins` equal-width cells over `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidConfig(format!(
                "axis bounds must be finite and ordered, got [{lower}, {upper}]"
            )));
        }
        if bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "axis needs at least 2 bins, got {bins}"
            )));
        }
        Ok(Axis { lower, upper, bins })
    }

    /// An axis whose bins are centred on the integers `0..n`.
    pub fn integer(n: usize) -> Result<Self> {
        Self::new(-0.5, n as f64 - 0.5, n)
    }

    /// Bin of `x` after clamping to the bounds; the upper bound falls in the last bin.
    pub fn bin(&self, x: f64) -> usize {
        let x = if x.is_nan() { self.lower } else { x.clamp(self.lower, self.upper) };
        let width = (self.upper - self.lower) / self.bins as f64;
        (((x - self.lower) / width) as usize).min(self.bins - 1)
    }

    pub fn center(&self, bin: usize) -> f64 {
        let width = (self.upper - self.lower) / self.bins as f64;
        self.lower + (bin as f64 + 0.5) * width
    }
}

/// Uniform binning of a box in `R^d`, flattened row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationGrid {
    axes: Vec<Axis>,
}

impl DiscretizationGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one axis".into()));
        }
        for a in &axes {
            Axis::new(a.lower, a.upper, a.bins)?;
        }
        Ok(DiscretizationGrid { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of a point. Panics if the dimensionality is wrong.
    pub fn flat_index(&self, point: &[f64]) -> usize {
        assert_eq!(point.len(), self.axes.len(), "point dimensionality mismatch");
        self.axes
            .iter()
            .zip(point)
            .fold(0, |acc, (axis, &x)| acc * axis.bins + axis.bin(x))
    }

    /// Per-axis bins of a flat index.
    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (slot, axis) in out.iter_mut().zip(&self.axes).rev() {
            *slot = index % axis.bins;
            index /= axis.bins;
        }
        out
    }

    pub fn cell_center(&self, index: usize) -> Vec<f64> {
        self.unflatten(index)
            .into_iter()
            .zip(&self.axes)
            .map(|(b, axis)| axis.center(b))
            .collect()
    }
}

/// Evenly spaced values over `[lo, hi]`, both ends included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
