//! k-nearest-neighbour classification.
//!
//! Each training fragment yields the `k` closest candidates per test point;
//! a merge tree keeps the `k` best of every group and a final task votes.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::catalog::{arg, FunctionCatalog};
use crate::error::{Result, RuntimeError, TaskError};
use crate::runtime::{Arg, RuntimeSession};
use crate::value::{Matrix, Value};

use super::data::{fill_fragment, split_rows, Fragment, FragmentKind, TEST_INDEX_BASE};
use super::{bundle, dims_match, merge_tree, seed_arg, take_i64s, take_matrix, unbundle, usize_arg, AlgoError};

/// Label of a padding entry.
pub const PAD_LABEL: i64 = -1;

/// The `k` best candidates of every test point, sorted by (distance, label).
/// Fragments with fewer than `k` rows pad with `(+inf, PAD_LABEL)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSets {
    pub distances: Matrix,
    pub labels: Vec<i64>,
}

impl NeighborSets {
    pub fn k(&self) -> usize {
        self.distances.cols()
    }

    pub fn points(&self) -> usize {
        self.distances.rows()
    }

    pub fn row(&self, i: usize) -> (&[f64], &[i64]) {
        let k = self.k();
        (self.distances.row(i), &self.labels[i * k..(i + 1) * k])
    }

    pub fn to_value(&self) -> std::result::Result<Value, TaskError> {
        bundle(vec![self.distances.clone().into(), self.labels.clone().into()])
    }

    pub fn from_value(v: &Value) -> std::result::Result<Self, TaskError> {
        let mut items = unbundle(v, 2)?.into_iter();
        let distances = take_matrix(items.next().expect("two items"))?;
        let labels = take_i64s(items.next().expect("two items"))?;
        if labels.len() != distances.rows() * distances.cols() {
            return Err(AlgoError::ShapeMismatch("labels do not match distances".into()).into());
        }
        Ok(Self { distances, labels })
    }

    fn from_rows(k: usize, rows: Vec<Vec<(f64, i64)>>) -> Self {
        let mut distances = Matrix::zeros(rows.len(), k);
        let mut labels = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, (d, l)) in row.into_iter().enumerate() {
                distances.set(i, j, d);
                labels.push(l);
            }
        }
        Self { distances, labels }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn by_key(a: &(f64, i64), b: &(f64, i64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Inserts a candidate into a sorted list of at most `k` entries.
fn offer(best: &mut Vec<(f64, i64)>, k: usize, cand: (f64, i64)) {
    if best.len() == k && by_key(&cand, best.last().expect("k >= 1")) != Ordering::Less {
        return;
    }
    let pos = best.partition_point(|e| by_key(e, &cand) != Ordering::Greater);
    best.insert(pos, cand);
    best.truncate(k);
}

/// The `k` nearest rows of `train` for every row of `test`.
pub fn knn_frag(train: &Fragment, test: &Matrix, k: usize) -> std::result::Result<NeighborSets, AlgoError> {
    if k == 0 {
        return Err(AlgoError::InvalidParameter("k must be at least 1".into()));
    }
    dims_match(train.cols(), test.cols())?;
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| AlgoError::ShapeMismatch("training fragment has no labels".into()))?;
    let rows = test
        .row_iter()
        .map(|x| {
            let mut best = Vec::with_capacity(k + 1);
            for (t, &l) in train.values.row_iter().zip(labels) {
                offer(&mut best, k, (euclidean(x, t), l));
            }
            best.resize(k, (f64::INFINITY, PAD_LABEL));
            best
        })
        .collect();
    Ok(NeighborSets::from_rows(k, rows))
}

/// Keeps the `k` best of the union of candidate lists, row by row.
pub fn knn_merge(parts: &[NeighborSets]) -> std::result::Result<NeighborSets, AlgoError> {
    let first = parts
        .first()
        .ok_or_else(|| AlgoError::ShapeMismatch("nothing to merge".into()))?;
    let (k, n) = (first.k(), first.points());
    if let Some(p) = parts.iter().find(|p| p.k() != k || p.points() != n) {
        return Err(AlgoError::ShapeMismatch(format!(
            "cannot merge {}x{} with {}x{} neighbour sets",
            n,
            k,
            p.points(),
            p.k()
        )));
    }
    let rows = (0..n)
        .map(|i| {
            let mut all: Vec<(f64, i64)> = parts
                .iter()
                .flat_map(|p| {
                    let (d, l) = p.row(i);
                    d.iter().copied().zip(l.iter().copied())
                })
                .collect();
            all.sort_by(by_key);
            all.truncate(k);
            all
        })
        .collect();
    Ok(NeighborSets::from_rows(k, rows))
}

/// Majority label per test point; among tied classes the one holding the
/// nearest neighbour wins.
pub fn knn_classify(sets: &NeighborSets) -> std::result::Result<Vec<i64>, AlgoError> {
    (0..sets.points())
        .map(|i| {
            let (d, l) = sets.row(i);
            if d.iter().any(|x| x.is_infinite()) {
                return Err(AlgoError::SentinelPresent { row: i });
            }
            let count = |label: i64| l.iter().filter(|&&x| x == label).count();
            let top = l.iter().map(|&x| count(x)).max().unwrap_or(0);
            Ok(l.iter().copied().find(|&x| count(x) == top).unwrap_or(PAD_LABEL))
        })
        .collect()
}

pub(crate) fn install(c: &mut FunctionCatalog) {
    // knn_fill_fragment(index, rows, cols, seed, classes)
    c.insert("knn_fill_fragment", |a| {
        let classes = usize_arg(a, 4, "classes")?;
        fill(a, FragmentKind::Knn { classes }, 0)?.to_value()
    });
    // knn_fill_test(block, rows, cols, seed, classes): unlabelled test points
    c.insert("knn_fill_test", |a| {
        let classes = usize_arg(a, 4, "classes")?;
        Ok(fill(a, FragmentKind::Knn { classes }, TEST_INDEX_BASE)?.values.into())
    });
    c.insert("knn_frag", |a| {
        let train = Fragment::from_value(arg(a, 0)?)?;
        let test = arg(a, 1)?.as_matrix()?;
        let k = usize_arg(a, 2, "k")?;
        knn_frag(&train, test, k)?.to_value()
    });
    c.insert("knn_merge", |a| {
        let parts = a
            .iter()
            .map(|v| NeighborSets::from_value(v))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        knn_merge(&parts)?.to_value()
    });
    c.insert("knn_classify", |a| {
        Ok(knn_classify(&NeighborSets::from_value(arg(a, 0)?)?)?.into())
    });
}

pub(crate) fn fill(a: &[Arc<Value>], kind: FragmentKind, index_base: u64) -> std::result::Result<Fragment, TaskError> {
    let index = usize_arg(a, 0, "index")? as u64;
    let rows = usize_arg(a, 1, "rows")?;
    let cols = usize_arg(a, 2, "cols")?;
    Ok(fill_fragment(kind, index_base + index, rows, cols, seed_arg(a, 3)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    pub train_rows: usize,
    pub test_rows: usize,
    pub cols: usize,
    pub k: usize,
    pub classes: usize,
    pub fragments: usize,
    pub merge_arity: usize,
    pub test_blocks: usize,
    pub seed: u64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            train_rows: 2000,
            test_rows: 500,
            cols: 10,
            k: 5,
            classes: 4,
            fragments: 4,
            merge_arity: 2,
            test_blocks: 1,
            seed: 0,
        }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AlgoError::InvalidParameter(m.into()).into());
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.k > self.train_rows {
            return bad("k exceeds the number of training rows");
        }
        if self.cols == 0 || self.classes == 0 || self.fragments == 0 || self.test_blocks == 0 {
            return bad("cols, classes, fragments and test blocks must be positive");
        }
        if self.merge_arity < 2 {
            return bad("merge arity must be at least 2");
        }
        Ok(())
    }
}

/// Training and test data for a parameter set, as generated by the tasks.
pub fn knn_dataset(p: &KnnParams) -> (Vec<Fragment>, Vec<Matrix>) {
    let kind = FragmentKind::Knn { classes: p.classes };
    let train = split_rows(p.train_rows, p.fragments)
        .into_iter()
        .enumerate()
        .map(|(i, rows)| fill_fragment(kind, i as u64, rows, p.cols, p.seed))
        .collect();
    let test = split_rows(p.test_rows, p.test_blocks)
        .into_iter()
        .enumerate()
        .map(|(b, rows)| fill_fragment(kind, TEST_INDEX_BASE + b as u64, rows, p.cols, p.seed).values)
        .collect();
    (train, test)
}

/// Submits the whole classification and returns one label per test point.
pub fn run_knn(session: &mut RuntimeSession, p: &KnnParams) -> Result<Vec<i64>> {
    p.validate()?;
    let fill = session.task("knn_fill_fragment", 5, true)?;
    let fill_test = session.task("knn_fill_test", 5, true)?;
    let frag = session.task("knn_frag", 3, true)?;
    let classify = session.task("knn_classify", 1, true)?;
    let common = |i: usize, rows: usize| -> Vec<Arg> {
        vec![
            (i as i64).into(),
            (rows as i64).into(),
            (p.cols as i64).into(),
            (p.seed as i64).into(),
            (p.classes as i64).into(),
        ]
    };
    let train = split_rows(p.train_rows, p.fragments)
        .into_iter()
        .enumerate()
        .map(|(i, rows)| session.invoke(&fill, common(i, rows)))
        .collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::new();
    for (b, rows) in split_rows(p.test_rows, p.test_blocks).into_iter().enumerate() {
        let test = session.invoke(&fill_test, common(b, rows))?;
        let partials = train
            .iter()
            .map(|t| session.invoke(&frag, [Arg::from(t), Arg::from(&test), (p.k as i64).into()]))
            .collect::<Result<Vec<_>>>()?;
        let merged = merge_tree(session, "knn_merge", partials, p.merge_arity)?.expect("at least one fragment");
        outputs.push(session.invoke(&classify, [merged])?);
    }
    let mut labels = Vec::with_capacity(p.test_rows);
    for h in &outputs {
        labels.extend(session.wait_on(h)?.as_i64_vec().map_err(|e| RuntimeError::UnexpectedResult(e.to_string()))?);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train() -> Fragment {
        Fragment {
            fragment_index: 0,
            seed: 0,
            values: Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap(),
            labels: Some(vec![0, 1]),
            response: None,
        }
    }

    fn sets(rows: &[&[(f64, i64)]]) -> NeighborSets {
        NeighborSets::from_rows(rows[0].len(), rows.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn frag_examples() {
        let test = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let one = knn_frag(&train(), &test, 1).unwrap();
        assert_eq!((one.row(0).0, one.row(0).1), (&[0.0][..], &[0][..]));
        let two = knn_frag(&train(), &test, 2).unwrap();
        assert_eq!(two.row(0), (&[0.0, 5.0][..], &[0, 1][..]));
        let mut small = train();
        small.values = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        small.labels = Some(vec![1]);
        let padded = knn_frag(&small, &test, 3).unwrap();
        assert_eq!(padded.row(0).0, &[5.0, f64::INFINITY, f64::INFINITY]);
        assert_eq!(padded.row(0).1, &[1, PAD_LABEL, PAD_LABEL]);
        let wide = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(knn_frag(&train(), &wide, 1), Err(AlgoError::DimensionMismatch { .. })));
    }

    #[test]
    fn merge_examples() {
        let a = sets(&[&[(1.0, 0), (3.0, 0)]]);
        let b = sets(&[&[(2.0, 1), (4.0, 1)]]);
        assert_eq!(knn_merge(&[a.clone(), b.clone()]).unwrap().row(0).0, &[1.0, 2.0]);
        let inf = sets(&[&[(f64::INFINITY, PAD_LABEL), (f64::INFINITY, PAD_LABEL)]]);
        assert_eq!(knn_merge(&[inf, b.clone()]).unwrap(), b);
        let other = sets(&[&[(1.0, 0)]]);
        assert!(matches!(knn_merge(&[a, other]), Err(AlgoError::ShapeMismatch(_))));
    }

    #[test]
    fn ties_break_on_label() {
        let a = sets(&[&[(1.0, 3)]]);
        let b = sets(&[&[(1.0, 2)]]);
        assert_eq!(knn_merge(&[a.clone(), b.clone()]).unwrap().row(0).1, &[2]);
        assert_eq!(knn_merge(&[b, a]).unwrap().row(0).1, &[2]);
    }

    #[test]
    fn classify_examples() {
        let s = sets(&[&[(1.0, 0), (2.0, 0), (3.0, 1)]]);
        assert_eq!(knn_classify(&s).unwrap(), vec![0]);
        let tie = sets(&[&[(1.0, 1), (2.0, 0)]]);
        assert_eq!(knn_classify(&tie).unwrap(), vec![1]);
        let padded = sets(&[&[(1.0, 1), (f64::INFINITY, PAD_LABEL)]]);
        assert_eq!(knn_classify(&padded), Err(AlgoError::SentinelPresent { row: 0 }));
    }

    #[test]
    fn value_roundtrip() {
        let s = sets(&[&[(1.0, 0), (2.5, 1)], &[(0.5, 2), (f64::INFINITY, PAD_LABEL)]]);
        assert_eq!(NeighborSets::from_value(&s.to_value().unwrap()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = KnnParams::default();
        assert!(p.validate().is_ok());
        p.k = 0;
        assert!(p.validate().is_err());
    }
}
