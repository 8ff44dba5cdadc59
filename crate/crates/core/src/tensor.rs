//! Rank-K CP (PARAFAC) representation of a multi-task Q-tensor.
//!
//! The Q-values of `M` tasks sharing a state space `S` and an action space `A`
//! are stacked into a three-mode tensor of shape `|S| x |A| x M`. The tensor is
//! never stored; it is represented by three factor matrices
//!
//! ```text
//! Q(s, a, m) = sum_k  q1[s, k] * q2[a, k] * q3[m, k]
//! ```
//!
//! where `q1` holds state embeddings, `q2` action embeddings and `q3` the
//! per-task mixing coefficients. The model has `(|S| + |A| + M) * K` free
//! parameters instead of `|S| * |A| * M`.

use ndarray::{Array2, Array3, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Sizes of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_tasks: usize,
}

impl Dims {
    pub fn new(n_states: usize, n_actions: usize, n_tasks: usize) -> Result<Self> {
        let dims = Dims {
            n_states,
            n_actions,
            n_tasks,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.n_tasks == 0 {
            return Err(Error::InvalidDims(format!(
                "all modes must be non-empty, got {} x {} x {}",
                self.n_states, self.n_actions, self.n_tasks
            )));
        }
        Ok(())
    }

    /// Entry count of the dense tensor.
    pub fn dense_len(&self) -> usize {
        self.n_states * self.n_actions * self.n_tasks
    }
}

/// Number of free parameters of a rank-`rank` model: `(|S| + |A| + M) * K`.
pub fn dof_count(dims: Dims, rank: usize) -> usize {
    (dims.n_states + dims.n_actions + dims.n_tasks) * rank
}

/// Distribution used to initialize factor entries.
///
/// `Unit` is the plain Uniform[0, 1) initialization and the default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorInit {
    #[default]
    Unit,
    /// Uniform[0, scale).
    Scaled { scale: f64 },
    /// Uniform[-half_width, half_width).
    Symmetric { half_width: f64 },
}

impl FactorInit {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        match *self {
            FactorInit::Unit => u,
            FactorInit::Scaled { scale } => scale * u,
            FactorInit::Symmetric { half_width } => half_width * (2.0 * u - 1.0),
        }
    }
}

/// The three factor matrices of a rank-K Q-tensor.
///
/// This is the entire parametric model of the joint learner. Entries are
/// stored and accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    q1: Array2<f64>,
    q2: Array2<f64>,
    q3: Array2<f64>,
    seed: Option<u64>,
}

/// `sum_k a[k] * b[k] * c[k]`, accumulated left to right.
#[inline]
fn triple_dot(a: ArrayView1<f64>, b: ArrayView1<f64>, c: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k] * c[k];
    }
    acc
}

impl FactorSet {
    /// Draws every entry i.i.d. from Uniform[0, 1) with a generator seeded by
    /// `seed`. Identical arguments produce bit-identical factors.
    pub fn new(dims: Dims, rank: usize, seed: u64) -> Result<Self> {
        Self::with_init(dims, rank, seed, FactorInit::Unit)
    }

    pub fn with_init(dims: Dims, rank: usize, seed: u64, init: FactorInit) -> Result<Self> {
        dims.validate()?;
        if rank == 0 {
            return Err(Error::ZeroRank);
        }
        let mut rng = rng::seeded(seed);
        let mut draw = |rows: usize| {
            Array2::from_shape_simple_fn((rows, rank), || init.sample(&mut rng))
        };
        let q1 = draw(dims.n_states);
        let q2 = draw(dims.n_actions);
        let q3 = draw(dims.n_tasks);
        Ok(FactorSet {
            q1,
            q2,
            q3,
            seed: Some(seed),
        })
    }

    /// Builds a factor set from explicit matrices.
    pub fn from_factors(q1: Array2<f64>, q2: Array2<f64>, q3: Array2<f64>) -> Result<Self> {
        let rank = q1.ncols();
        if rank == 0 {
            return Err(Error::ZeroRank);
        }
        if q2.ncols() != rank || q3.ncols() != rank {
            return Err(Error::InvalidDims(format!(
                "factor column counts differ: {}, {}, {}",
                rank,
                q2.ncols(),
                q3.ncols()
            )));
        }
        Dims::new(q1.nrows(), q2.nrows(), q3.nrows())?;
        if [&q1, &q2, &q3].iter().any(|q| q.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidDims("factor entries must be finite".into()));
        }
        Ok(FactorSet {
            q1,
            q2,
            q3,
            seed: None,
        })
    }

    /// All-zero factors; mostly useful in tests.
    pub fn zeros(dims: Dims, rank: usize) -> Result<Self> {
        dims.validate()?;
        if rank == 0 {
            return Err(Error::ZeroRank);
        }
        Self::from_factors(
            Array2::zeros((dims.n_states, rank)),
            Array2::zeros((dims.n_actions, rank)),
            Array2::zeros((dims.n_tasks, rank)),
        )
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_states: self.q1.nrows(),
            n_actions: self.q2.nrows(),
            n_tasks: self.q3.nrows(),
        }
    }

    pub fn rank(&self) -> usize {
        self.q1.ncols()
    }

    /// Seed the factors were drawn with, if they were drawn at all.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// State embeddings, `|S| x K`.
    pub fn q1(&self) -> &Array2<f64> {
        &self.q1
    }

    /// Action embeddings, `|A| x K`.
    pub fn q2(&self) -> &Array2<f64> {
        &self.q2
    }

    /// Task coefficients, `M x K`.
    pub fn q3(&self) -> &Array2<f64> {
        &self.q3
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.q1, &mut self.q2, &mut self.q3)
    }

    /// Mutable access to the raw factors. Callers keep the shapes intact.
    pub fn q1_mut(&mut self) -> &mut Array2<f64> {
        &mut self.q1
    }

    pub fn q2_mut(&mut self) -> &mut Array2<f64> {
        &mut self.q2
    }

    pub fn q3_mut(&mut self) -> &mut Array2<f64> {
        &mut self.q3
    }

    /// `Q(state, action, task)`.
    ///
    /// Panics if an index is out of range.
    #[inline]
    pub fn evaluate(&self, state: usize, action: usize, task: usize) -> f64 {
        triple_dot(self.q1.row(state), self.q2.row(action), self.q3.row(task))
    }

    /// Smallest action index attaining `max_a Q(state, a, task)`, and that maximum.
    pub fn greedy_action(&self, state: usize, task: usize) -> (usize, f64) {
        let s = self.q1.row(state);
        let m = self.q3.row(task);
        let mut best = (0, triple_dot(s, self.q2.row(0), m));
        for a in 1..self.q2.nrows() {
            let v = triple_dot(s, self.q2.row(a), m);
            if v > best.1 {
                best = (a, v);
            }
        }
        best
    }

    /// The `|S| x |A|` Q-matrix of one task, `sum_k q3[m, k] * q1[:, k] q2[:, k]^T`.
    pub fn task_slice(&self, task: usize) -> Array2<f64> {
        let dims = self.dims();
        assert!(task < dims.n_tasks, "task {task} out of range");
        let mut out = Array2::zeros((dims.n_states, dims.n_actions));
        for k in 0..self.rank() {
            out.scaled_add(self.q3[[task, k]], &self.rank1_component(k));
        }
        out
    }

    /// The `|S| x |A|` rank-1 matrix `q1[:, k] q2[:, k]^T` of component `k`.
    pub fn rank1_component(&self, k: usize) -> Array2<f64> {
        assert!(k < self.rank(), "component {k} out of range");
        let u = self.q1.column(k);
        let v = self.q2.column(k);
        Array2::from_shape_fn((u.len(), v.len()), |(i, j)| u[i] * v[j])
    }

    /// Materializes the dense `|S| x |A| x M` tensor. Intended for test-scale
    /// problems.
    pub fn reconstruct_full(&self) -> Array3<f64> {
        let d = self.dims();
        Array3::from_shape_fn((d.n_states, d.n_actions, d.n_tasks), |(s, a, m)| {
            self.evaluate(s, a, m)
        })
    }

    pub fn dof(&self) -> usize {
        dof_count(self.dims(), self.rank())
    }

    pub fn is_finite(&self) -> bool {
        [&self.q1, &self.q2, &self.q3]
            .iter()
            .all(|q| q.iter().all(|v| v.is_finite()))
    }

    pub fn to_snapshot(&self) -> FactorSnapshot {
        FactorSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            dims: self.dims(),
            rank: self.rank(),
            seed: self.seed,
            q1: self.q1.iter().copied().collect(),
            q2: self.q2.iter().copied().collect(),
            q3: self.q3.iter().copied().collect(),
        }
    }

    pub fn from_snapshot(snap: &FactorSnapshot) -> Result<Self> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!("unknown format {:?}", snap.format)));
        }
        let d = snap.dims;
        let shape = |rows: usize, data: &[f64], name: &str| {
            Array2::from_shape_vec((rows, snap.rank), data.to_vec()).map_err(|_| {
                Error::Snapshot(format!(
                    "{name} has {} entries, expected {} x {}",
                    data.len(),
                    rows,
                    snap.rank
                ))
            })
        };
        let mut fs = Self::from_factors(
            shape(d.n_states, &snap.q1, "q1")?,
            shape(d.n_actions, &snap.q2, "q2")?,
            shape(d.n_tasks, &snap.q3, "q3")?,
        )?;
        fs.seed = snap.seed;
        Ok(fs)
    }
}

const SNAPSHOT_FORMAT: &str = "tlrq-factors/1";

/// Self-describing serialized form of a [`FactorSet`].
///
/// Matrices are flattened row-major. JSON numbers are written with the
/// shortest representation that round-trips, so a snapshot reproduces the
/// factors bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSnapshot {
    pub format: String,
    pub dims: Dims,
    pub rank: usize,
    pub seed: Option<u64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
}
