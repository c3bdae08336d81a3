//! Lloyd's k-means as rounds of partial sums, a merge tree, an update and a
//! convergence test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{arg, FunctionCatalog};
use crate::error::{Result, RuntimeError, TaskError};
use crate::runtime::{Arg, RuntimeSession};
use crate::value::{Matrix, Value};

use super::data::{fill_fragment, split_rows, splitmix64, FragmentKind};
use super::knn::fill;
use super::{bundle, dims_match, merge_tree, take_i64s, take_matrix, unbundle, AlgoError};

const INIT_SALT: u64 = 0x696e_6974_5f63_656e;

/// Per-cluster coordinate sums and point counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSums {
    pub sums: Matrix,
    pub counts: Vec<i64>,
}

impl PartialSums {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            sums: Matrix::zeros(k, d),
            counts: vec![0; k],
        }
    }

    pub fn total(&self) -> i64 {
        self.counts.iter().sum()
    }

    pub fn to_value(&self) -> std::result::Result<Value, TaskError> {
        bundle(vec![self.sums.clone().into(), self.counts.clone().into()])
    }

    pub fn from_value(v: &Value) -> std::result::Result<Self, TaskError> {
        let mut items = unbundle(v, 2)?.into_iter();
        let sums = take_matrix(items.next().expect("two items"))?;
        let counts = take_i64s(items.next().expect("two items"))?;
        if counts.len() != sums.rows() {
            return Err(AlgoError::ShapeMismatch("counts do not match sums".into()).into());
        }
        Ok(Self { sums, counts })
    }
}

fn squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centre; ties go to the lowest index.
pub fn nearest(x: &[f64], centers: &Matrix) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.row_iter().enumerate() {
        let d = squared(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Uniform random initial centres in `[0, 10)^d`.
pub fn kmeans_init(k: usize, d: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ INIT_SALT));
    let data = (0..k * d).map(|_| r.random_range(0.0..10.0)).collect();
    Matrix::from_row_major(k, d, data).expect("sized")
}

pub fn kmeans_partial_sum(points: &Matrix, centers: &Matrix) -> std::result::Result<PartialSums, AlgoError> {
    if points.rows() > 0 {
        dims_match(centers.cols(), points.cols())?;
    }
    let mut p = PartialSums::zeros(centers.rows(), centers.cols());
    for x in points.row_iter() {
        let c = nearest(x, centers);
        p.counts[c] += 1;
        for (s, v) in p.sums.row_mut(c).iter_mut().zip(x) {
            *s += v;
        }
    }
    Ok(p)
}

pub fn kmeans_merge(parts: &[PartialSums]) -> std::result::Result<PartialSums, AlgoError> {
    let first = parts
        .first()
        .ok_or_else(|| AlgoError::ShapeMismatch("nothing to merge".into()))?;
    let mut out = PartialSums::zeros(first.sums.rows(), first.sums.cols());
    for p in parts {
        if !p.sums.same_shape(&out.sums) {
            return Err(AlgoError::ShapeMismatch(format!(
                "cannot merge {}x{} with {}x{} partial sums",
                out.sums.rows(),
                out.sums.cols(),
                p.sums.rows(),
                p.sums.cols()
            )));
        }
        for (a, b) in out.sums.as_mut_slice().iter_mut().zip(p.sums.as_slice()) {
            *a += b;
        }
        for (a, b) in out.counts.iter_mut().zip(&p.counts) {
            *a += b;
        }
    }
    Ok(out)
}

/// New centres as cluster means; an empty cluster keeps its previous centre.
pub fn kmeans_update(merged: &PartialSums, previous: &Matrix) -> std::result::Result<Matrix, AlgoError> {
    if !merged.sums.same_shape(previous) {
        return Err(AlgoError::ShapeMismatch("partial sums and centres differ".into()));
    }
    let mut next = previous.clone();
    for (i, &n) in merged.counts.iter().enumerate() {
        if n > 0 {
            for (c, s) in next.row_mut(i).iter_mut().zip(merged.sums.row(i)) {
                *c = s / n as f64;
            }
        }
    }
    Ok(next)
}

/// True when no centre moved by `tol` or more.
pub fn kmeans_converged(old: &Matrix, new: &Matrix, tol: f64) -> bool {
    old.same_shape(new) && old.row_iter().zip(new.row_iter()).all(|(a, b)| squared(a, b).sqrt() < tol)
}

/// Sum of squared distances from each point to its nearest centre.
pub fn kmeans_wcss<'a>(fragments: impl IntoIterator<Item = &'a Matrix>, centers: &Matrix) -> f64 {
    fragments
        .into_iter()
        .flat_map(|m| m.row_iter())
        .map(|x| squared(x, centers.row(nearest(x, centers))))
        .sum()
}

pub(crate) fn install(c: &mut FunctionCatalog) {
    // kmeans_fill_fragment(index, rows, cols, seed)
    c.insert("kmeans_fill_fragment", |a| Ok(fill(a, FragmentKind::Kmeans, 0)?.values.into()));
    c.insert("kmeans_partial_sum", |a| {
        kmeans_partial_sum(arg(a, 0)?.as_matrix()?, arg(a, 1)?.as_matrix()?)?.to_value()
    });
    c.insert("kmeans_merge", |a| {
        let parts = a
            .iter()
            .map(|v| PartialSums::from_value(v))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        kmeans_merge(&parts)?.to_value()
    });
    c.insert("kmeans_update", |a| {
        let merged = PartialSums::from_value(arg(a, 0)?)?;
        Ok(kmeans_update(&merged, arg(a, 1)?.as_matrix()?)?.into())
    });
    // kmeans_converged(old, new, tol) -> 1 or 0
    c.insert("kmeans_converged", |a| {
        let tol = arg(a, 2)?.as_f64()?;
        let done = kmeans_converged(arg(a, 0)?.as_matrix()?, arg(a, 1)?.as_matrix()?, tol);
        Ok(Value::I64(i64::from(done)))
    });
    c.insert("kmeans_wcss", |a| {
        let m = arg(a, 0)?.as_matrix()?;
        Ok(Value::F64(kmeans_wcss([m], arg(a, 1)?.as_matrix()?)))
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansParams {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub fragments: usize,
    pub merge_arity: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Also compute the objective for the initial centres and after every
    /// iteration.
    pub track_wcss: bool,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self {
            rows: 10_000,
            cols: 5,
            k: 8,
            fragments: 8,
            merge_arity: 2,
            tol: 1e-4,
            max_iter: 20,
            seed: 0,
            track_wcss: false,
        }
    }
}

impl KmeansParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AlgoError::InvalidParameter(m.into()).into());
        if self.k == 0 || self.cols == 0 || self.fragments == 0 {
            return bad("k, cols and fragments must be positive");
        }
        if self.merge_arity < 2 {
            return bad("merge arity must be at least 2");
        }
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }

    pub fn initial_centers(&self) -> Matrix {
        kmeans_init(self.k, self.cols, self.seed)
    }

    /// The fragments the tasks generate for these parameters.
    pub fn dataset(&self) -> Vec<Matrix> {
        split_rows(self.rows, self.fragments)
            .into_iter()
            .enumerate()
            .map(|(i, rows)| fill_fragment(FragmentKind::Kmeans, i as u64, rows, self.cols, self.seed).values)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub initial: Matrix,
    /// Centres after each iteration.
    pub history: Vec<Matrix>,
    pub converged: bool,
    /// Objective for the initial centres and then per iteration, when tracked.
    pub wcss: Vec<f64>,
}

impl KmeansResult {
    pub fn centers(&self) -> &Matrix {
        self.history.last().unwrap_or(&self.initial)
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

fn matrix_result(v: Value) -> Result<Matrix> {
    take_matrix(v).map_err(|e| RuntimeError::UnexpectedResult(e.to_string()))
}

pub fn run_kmeans(session: &mut RuntimeSession, p: &KmeansParams) -> Result<KmeansResult> {
    p.validate()?;
    let fill = session.task("kmeans_fill_fragment", 4, true)?;
    let partial = session.task("kmeans_partial_sum", 2, true)?;
    let update = session.task("kmeans_update", 2, true)?;
    let converged = session.task("kmeans_converged", 3, true)?;
    let wcss = session.task("kmeans_wcss", 2, true)?;

    let frags = split_rows(p.rows, p.fragments)
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            session.invoke(
                &fill,
                [i as i64, rows as i64, p.cols as i64, p.seed as i64].map(Arg::from),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let initial = p.initial_centers();
    let mut result = KmeansResult {
        initial: initial.clone(),
        history: Vec::new(),
        converged: false,
        wcss: Vec::new(),
    };
    let mut centers = session.immediate(initial);
    let objective = |session: &mut RuntimeSession, centers: &crate::FutureHandle| -> Result<f64> {
        let parts = frags
            .iter()
            .map(|f| session.invoke(&wcss, [f, centers]))
            .collect::<Result<Vec<_>>>()?;
        parts.iter().try_fold(0.0, |acc, h| {
            let v = session.wait_on(h)?;
            Ok(acc + v.as_f64().map_err(|e| RuntimeError::UnexpectedResult(e.to_string()))?)
        })
    };
    if p.track_wcss {
        let w = objective(session, &centers)?;
        result.wcss.push(w);
    }
    for _ in 0..p.max_iter {
        let partials = frags
            .iter()
            .map(|f| session.invoke(&partial, [f, &centers]))
            .collect::<Result<Vec<_>>>()?;
        let merged = merge_tree(session, "kmeans_merge", partials, p.merge_arity)?.expect("at least one fragment");
        let next = session.invoke(&update, [Arg::from(merged), Arg::from(&centers)])?;
        let done = session.invoke(&converged, [Arg::from(&centers), Arg::from(&next), p.tol.into()])?;
        let done = session.wait_on(&done)? == Value::I64(1);
        result.history.push(matrix_result(session.wait_on(&next)?)?);
        centers = next;
        if p.track_wcss {
            let w = objective(session, &centers)?;
            result.wcss.push(w);
        }
        if done {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}
