//! Benchmark applications written as task graphs: k-nearest neighbours,
//! k-means and linear regression, plus the four-number toy program.
//!
//! Every operation is a pure function on typed values. The task versions
//! registered by [`install`] only convert arguments from and to [`Value`];
//! composite results travel as codec bundles. The drivers submit the task
//! graphs through a [`crate::RuntimeSession`].

pub mod data;
pub mod kmeans;
pub mod knn;
pub mod linreg;
pub mod toy;

use std::sync::Arc;

use crate::catalog::FunctionCatalog;
use crate::error::TaskError;
use crate::runtime::{Arg, FutureHandle, RuntimeSession};
use crate::value::{Matrix, Value};

pub use data::{fill_fragment, split_rows, Fragment, FragmentKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlgoError {
    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("test row {row} still holds a padding entry; k exceeds the training rows")]
    SentinelPresent { row: usize },
    #[error("normal equations are not positive definite (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl From<AlgoError> for TaskError {
    fn from(e: AlgoError) -> Self {
        TaskError::new(e.to_string())
    }
}

pub(crate) fn dims_match(expected: usize, found: usize) -> Result<(), AlgoError> {
    if expected == found {
        Ok(())
    } else {
        Err(AlgoError::DimensionMismatch { expected, found })
    }
}

/// Combines `items` level by level in groups of `arity`. A trailing group of
/// one is carried to the next level unchanged, so a binary tree over `n`
/// leaves performs `n - 1` combinations.
pub fn tree_reduce<T, E>(
    mut items: Vec<T>,
    arity: usize,
    mut combine: impl FnMut(Vec<T>) -> Result<T, E>,
) -> Result<Option<T>, E> {
    let arity = arity.max(2);
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(arity));
        let mut it = items.into_iter().peekable();
        while it.peek().is_some() {
            let group: Vec<T> = it.by_ref().take(arity).collect();
            if group.len() == 1 {
                next.extend(group);
            } else {
                next.push(combine(group)?);
            }
        }
        items = next;
    }
    Ok(items.pop())
}

/// Submits a merge tree of `function` tasks; a group of `n` handles uses the
/// registration `function/n`.
pub(crate) fn merge_tree(
    session: &mut RuntimeSession,
    function: &str,
    leaves: Vec<FutureHandle>,
    arity: usize,
) -> crate::Result<Option<FutureHandle>> {
    tree_reduce(leaves, arity, |group| {
        let reg = session.task(&format!("{function}/{}", group.len()), group.len(), true)?;
        session.invoke(&reg, group.into_iter().map(Arg::Future))
    })
}

pub(crate) fn bundle(items: Vec<Value>) -> Result<Value, TaskError> {
    Ok(crate::codec::pack(&items)?)
}

pub(crate) fn unbundle(v: &Value, expected: usize) -> Result<Vec<Value>, TaskError> {
    let items = crate::codec::unpack(v.as_bytes()?)?;
    if items.len() != expected {
        return Err(TaskError::new(format!(
            "bundle holds {} items, expected {expected}",
            items.len()
        )));
    }
    Ok(items)
}

pub(crate) fn take_matrix(v: Value) -> Result<Matrix, TaskError> {
    match v {
        Value::Matrix(m) => Ok(m),
        other => Err(TaskError::type_mismatch("matrix", &other)),
    }
}

pub(crate) fn take_f64s(v: Value) -> Result<Vec<f64>, TaskError> {
    match v {
        Value::F64Vec(x) => Ok(x),
        other => Err(TaskError::type_mismatch("f64 vector", &other)),
    }
}

pub(crate) fn take_i64s(v: Value) -> Result<Vec<i64>, TaskError> {
    match v {
        Value::I64Vec(x) => Ok(x),
        other => Err(TaskError::type_mismatch("i64 vector", &other)),
    }
}

pub(crate) fn usize_arg(args: &[Arc<Value>], i: usize, name: &str) -> Result<usize, TaskError> {
    let v = crate::catalog::arg(args, i)?.as_i64()?;
    usize::try_from(v).map_err(|_| TaskError::new(format!("{name} must be non-negative, got {v}")))
}

pub(crate) fn seed_arg(args: &[Arc<Value>], i: usize) -> Result<u64, TaskError> {
    Ok(crate::catalog::arg(args, i)?.as_i64()? as u64)
}

/// Registers every algorithm task.
pub fn install(c: &mut FunctionCatalog) {
    knn::install(c);
    kmeans::install(c);
    linreg::install(c);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_merges(n: usize, arity: usize) -> (usize, Vec<usize>) {
        let mut merges = 0;
        let out = tree_reduce((0..n).map(|i| vec![i]).collect(), arity, |g: Vec<Vec<usize>>| {
            merges += 1;
            Ok::<_, ()>(g.concat())
        })
        .unwrap();
        (merges, out.unwrap_or_default())
    }

    #[test]
    fn binary_tree_uses_n_minus_one_merges() {
        for n in 1..20 {
            let (m, leaves) = count_merges(n, 2);
            assert_eq!(m, n - 1);
            assert_eq!(leaves, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn wider_trees() {
        assert_eq!(count_merges(5, 4).0, 2);
        assert_eq!(count_merges(5, 3).0, 3);
        assert_eq!(count_merges(16, 4).0, 5);
        assert_eq!(count_merges(0, 2).1, Vec::<usize>::new());
    }
}
