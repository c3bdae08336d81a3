//! Seeded synthetic datasets, generated one fragment at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::TaskError;
use crate::value::{Matrix, Value};

use super::{bundle, take_f64s, take_i64s, take_matrix, unbundle};

/// Fragment indices at or above this value hold test data.
pub const TEST_INDEX_BASE: u64 = 1 << 40;

/// Number of Gaussian blobs in k-means data.
pub const KMEANS_BLOBS: usize = 8;

const KNN_SALT: u64 = 0x6b6e_6e5f_626c_6f62;
const KMEANS_SALT: u64 = 0x6b6d_6561_6e73_5f62;
const LR_SALT: u64 = 0x6c72_5f62_6574_6121;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FragmentKind {
    /// Labelled points around one centre per class.
    Knn { classes: usize },
    /// Points around [`KMEANS_BLOBS`] centres in `[0, 10)^d`.
    Kmeans,
    /// Uniform features in `[-1, 1)` with a linear response.
    Lr { noise_scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub fragment_index: u64,
    pub seed: u64,
    pub values: Matrix,
    pub labels: Option<Vec<i64>>,
    pub response: Option<Vec<f64>>,
}

impl Fragment {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Plain matrix, or a bundle of the matrix and its labels or response.
    pub fn to_value(&self) -> Result<Value, TaskError> {
        match (&self.labels, &self.response) {
            (Some(l), _) => bundle(vec![self.values.clone().into(), l.clone().into()]),
            (None, Some(y)) => bundle(vec![self.values.clone().into(), y.clone().into()]),
            (None, None) => Ok(self.values.clone().into()),
        }
    }

    /// Inverse of [`Fragment::to_value`]; index and seed are not carried.
    pub fn from_value(v: &Value) -> Result<Self, TaskError> {
        let mut f = Self {
            fragment_index: 0,
            seed: 0,
            values: Matrix::zeros(0, 0),
            labels: None,
            response: None,
        };
        match v {
            Value::Matrix(m) => f.values = m.clone(),
            Value::Bytes(_) => {
                let mut items = unbundle(v, 2)?.into_iter();
                f.values = take_matrix(items.next().expect("two items"))?;
                match items.next().expect("two items") {
                    l @ Value::I64Vec(_) => f.labels = Some(take_i64s(l)?),
                    y => f.response = Some(take_f64s(y)?),
                }
            }
            other => return Err(TaskError::type_mismatch("fragment", other)),
        }
        Ok(f)
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fragment_seed(base_seed: u64, fragment_index: u64) -> u64 {
    base_seed ^ splitmix64(fragment_index)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_row_major(rows, cols, data).expect("sized")
}

/// Class centres shared by every KNN fragment of a dataset.
pub fn knn_centers(base_seed: u64, classes: usize, cols: usize) -> Matrix {
    uniform_matrix(&mut rng(splitmix64(base_seed ^ KNN_SALT)), classes, cols, 0.0, 10.0)
}

/// Blob centres shared by every k-means fragment of a dataset.
pub fn kmeans_blobs(base_seed: u64, cols: usize) -> Matrix {
    uniform_matrix(&mut rng(splitmix64(base_seed ^ KMEANS_SALT)), KMEANS_BLOBS, cols, 0.0, 10.0)
}

/// Coefficients (intercept first) behind every regression fragment.
pub fn lr_true_beta(base_seed: u64, cols: usize) -> Vec<f64> {
    let mut r = rng(splitmix64(base_seed ^ LR_SALT));
    (0..=cols).map(|_| r.random_range(-2.0..2.0)).collect()
}

/// Generates one fragment. The result depends only on the arguments.
pub fn fill_fragment(kind: FragmentKind, fragment_index: u64, rows: usize, cols: usize, base_seed: u64) -> Fragment {
    let seed = fragment_seed(base_seed, fragment_index);
    let mut r = rng(seed);
    let mut values = Matrix::zeros(rows, cols);
    let mut labels = None;
    let mut response = None;
    match kind {
        FragmentKind::Knn { classes } => {
            let classes = classes.max(1);
            let centers = knn_centers(base_seed, classes, cols);
            let mut l = Vec::with_capacity(rows);
            for i in 0..rows {
                let c = r.random_range(0..classes);
                for (x, mu) in values.row_mut(i).iter_mut().zip(centers.row(c)) {
                    *x = mu + 1.5 * r.sample::<f64, _>(StandardNormal);
                }
                l.push(c as i64);
            }
            labels = Some(l);
        }
        FragmentKind::Kmeans => {
            let blobs = kmeans_blobs(base_seed, cols);
            for i in 0..rows {
                let b = r.random_range(0..KMEANS_BLOBS);
                for (x, mu) in values.row_mut(i).iter_mut().zip(blobs.row(b)) {
                    *x = mu + r.sample::<f64, _>(StandardNormal);
                }
            }
        }
        FragmentKind::Lr { noise_scale } => {
            let beta = lr_true_beta(base_seed, cols);
            let mut y = Vec::with_capacity(rows);
            for i in 0..rows {
                let row = values.row_mut(i);
                for x in row.iter_mut() {
                    *x = r.random_range(-1.0..1.0);
                }
                let fit = beta[0] + row.iter().zip(&beta[1..]).map(|(x, b)| x * b).sum::<f64>();
                let noise: f64 = r.sample(StandardNormal);
                y.push(fit + noise_scale * noise);
            }
            response = Some(y);
        }
    }
    Fragment {
        fragment_index,
        seed,
        values,
        labels,
        response,
    }
}

/// Splits `total` rows into `parts` near-equal counts, larger ones first.
pub fn split_rows(total: usize, parts: usize) -> Vec<usize> {
    let parts = parts.max(1);
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}
