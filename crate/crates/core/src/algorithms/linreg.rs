//! Least-squares regression through the normal equations. Fragments
//! contribute `ZᵀZ` and `Zᵀy` for their block `Z = [1 | X]`; merged sums are
//! solved with an `L·D·Lᵀ` factorization.

use crate::catalog::{arg, FunctionCatalog};
use crate::error::{Result, RuntimeError};
use crate::runtime::{Arg, RuntimeSession};
use crate::value::{Matrix, Value};

use super::data::{fill_fragment, lr_true_beta, split_rows, Fragment, FragmentKind, TEST_INDEX_BASE};
use super::knn::fill;
use super::{dims_match, merge_tree, take_f64s, AlgoError};

/// Pivots below this fraction of their original diagonal entry are treated
/// as zero.
pub const PIVOT_RTOL: f64 = 1e-10;

/// `ZᵀZ` for `Z = [1 | x]`; exactly symmetric.
pub fn lr_partial_ztz(x: &Matrix) -> Matrix {
    let p = x.cols() + 1;
    let mut out = Matrix::zeros(p, p);
    let mut z = vec![1.0; p];
    for row in x.row_iter() {
        z[1..].copy_from_slice(row);
        for i in 0..p {
            let zi = z[i];
            let out_row = out.row_mut(i);
            for j in i..p {
                out_row[j] += zi * z[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            let v = out.get(j, i);
            out.set(i, j, v);
        }
    }
    out
}

/// `Zᵀy` for `Z = [1 | x]`.
pub fn lr_partial_zty(x: &Matrix, y: &[f64]) -> std::result::Result<Vec<f64>, AlgoError> {
    dims_match(x.rows(), y.len()).map_err(|_| AlgoError::DimensionMismatch {
        expected: x.rows(),
        found: y.len(),
    })?;
    let mut out = vec![0.0; x.cols() + 1];
    for (row, &yi) in x.row_iter().zip(y) {
        out[0] += yi;
        for (o, v) in out[1..].iter_mut().zip(row) {
            *o += v * yi;
        }
    }
    Ok(out)
}

/// Elementwise sum of equally shaped matrices.
pub fn lr_merge_ztz(parts: &[&Matrix]) -> std::result::Result<Matrix, AlgoError> {
    let first = parts
        .first()
        .ok_or_else(|| AlgoError::ShapeMismatch("nothing to merge".into()))?;
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for p in parts {
        if !p.same_shape(&out) {
            return Err(AlgoError::ShapeMismatch("ztz blocks differ in shape".into()));
        }
        for (a, b) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *a += b;
        }
    }
    Ok(out)
}

/// Elementwise sum of equally long vectors.
pub fn lr_merge_zty(parts: &[&[f64]]) -> std::result::Result<Vec<f64>, AlgoError> {
    let first = parts
        .first()
        .ok_or_else(|| AlgoError::ShapeMismatch("nothing to merge".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in parts {
        if p.len() != out.len() {
            return Err(AlgoError::ShapeMismatch("zty blocks differ in length".into()));
        }
        for (a, b) in out.iter_mut().zip(*p) {
            *a += b;
        }
    }
    Ok(out)
}

/// Square-root-free Cholesky factorization `a = L·D·Lᵀ` of a symmetric
/// positive-definite matrix, with `L` unit lower triangular. Only the lower
/// triangle of `a` is read. Returns `L` with `D` on its diagonal.
pub fn ldl(a: &Matrix) -> std::result::Result<Matrix, AlgoError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(AlgoError::ShapeMismatch("matrix is not square".into()));
    }
    let mut f = Matrix::zeros(n, n);
    let mut dmax = 0.0f64;
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for k in 0..j {
            pivot -= f.get(j, k) * f.get(j, k) * f.get(k, k);
        }
        let scale = a.get(j, j).abs();
        if !(pivot > PIVOT_RTOL * scale) || !pivot.is_finite() {
            let condition = if pivot > 0.0 { dmax.max(scale) / pivot } else { f64::INFINITY };
            return Err(AlgoError::SingularSystem { condition });
        }
        dmax = dmax.max(pivot);
        f.set(j, j, pivot);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= f.get(i, k) * f.get(j, k) * f.get(k, k);
            }
            f.set(i, j, s / pivot);
        }
    }
    Ok(f)
}

/// Solves `ztz · β = zty` by substitution on the `L·D·Lᵀ` factors.
pub fn lr_solve(ztz: &Matrix, zty: &[f64]) -> std::result::Result<Vec<f64>, AlgoError> {
    dims_match(ztz.rows(), zty.len())?;
    let f = ldl(ztz)?;
    let n = zty.len();
    let mut w = zty.to_vec();
    for i in 0..n {
        for k in 0..i {
            w[i] -= f.get(i, k) * w[k];
        }
    }
    for (i, x) in w.iter_mut().enumerate() {
        *x /= f.get(i, i);
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            w[i] -= f.get(k, i) * w[k];
        }
    }
    Ok(w)
}

/// `β₀ + xᵀβ₁..` for every row.
pub fn lr_predict(beta: &[f64], x: &Matrix) -> std::result::Result<Vec<f64>, AlgoError> {
    dims_match(beta.len().saturating_sub(1), x.cols())?;
    Ok(x.row_iter()
        .map(|r| beta[0] + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

pub(crate) fn install(c: &mut FunctionCatalog) {
    // lr_fill_fragment(index, rows, cols, seed, noise_scale)
    c.insert("lr_fill_fragment", |a| {
        let noise_scale = arg(a, 4)?.as_f64()?;
        fill(a, FragmentKind::Lr { noise_scale }, 0)?.to_value()
    });
    c.insert("lr_partial_ztz", |a| {
        let f = Fragment::from_value(arg(a, 0)?)?;
        Ok(lr_partial_ztz(&f.values).into())
    });
    c.insert("lr_partial_zty", |a| {
        let f = Fragment::from_value(arg(a, 0)?)?;
        let y = f.response.unwrap_or_default();
        Ok(lr_partial_zty(&f.values, &y)?.into())
    });
    // variadic; sums either ztz matrices or zty vectors
    c.insert("lr_merge", |a| match arg(a, 0)? {
        Value::Matrix(_) => {
            let parts = a.iter().map(|v| v.as_matrix()).collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(lr_merge_ztz(&parts)?.into())
        }
        _ => {
            let parts = a.iter().map(|v| v.as_f64_vec()).collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(lr_merge_zty(&parts)?.into())
        }
    });
    c.insert("lr_solve", |a| {
        Ok(lr_solve(arg(a, 0)?.as_matrix()?, arg(a, 1)?.as_f64_vec()?)?.into())
    });
    // lr_genpred(block, rows, cols, seed): feature rows to predict on
    c.insert("lr_genpred", |a| {
        Ok(fill(a, FragmentKind::Lr { noise_scale: 0.0 }, TEST_INDEX_BASE)?.values.into())
    });
    c.insert("lr_predict", |a| {
        Ok(lr_predict(arg(a, 0)?.as_f64_vec()?, arg(a, 1)?.as_matrix()?)?.into())
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinRegParams {
    pub rows: usize,
    pub cols: usize,
    pub fragments: usize,
    pub merge_arity: usize,
    pub noise_scale: f64,
    pub test_rows: usize,
    pub test_blocks: usize,
    pub seed: u64,
}

impl Default for LinRegParams {
    fn default() -> Self {
        Self {
            rows: 10_000,
            cols: 5,
            fragments: 8,
            merge_arity: 2,
            noise_scale: 0.1,
            test_rows: 1000,
            test_blocks: 2,
            seed: 0,
        }
    }
}

impl LinRegParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AlgoError::InvalidParameter(m.into()).into());
        if self.cols == 0 || self.fragments == 0 || self.test_blocks == 0 {
            return bad("cols, fragments and test blocks must be positive");
        }
        if self.merge_arity < 2 {
            return bad("merge arity must be at least 2");
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise scale must be non-negative");
        }
        Ok(())
    }

    /// Training fragments as the tasks generate them.
    pub fn dataset(&self) -> Vec<Fragment> {
        split_rows(self.rows, self.fragments)
            .into_iter()
            .enumerate()
            .map(|(i, rows)| {
                fill_fragment(
                    FragmentKind::Lr {
                        noise_scale: self.noise_scale,
                    },
                    i as u64,
                    rows,
                    self.cols,
                    self.seed,
                )
            })
            .collect()
    }

    pub fn true_beta(&self) -> Vec<f64> {
        lr_true_beta(self.seed, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinRegResult {
    pub beta: Vec<f64>,
    pub predictions: Vec<f64>,
}

pub fn run_linreg(session: &mut RuntimeSession, p: &LinRegParams) -> Result<LinRegResult> {
    p.validate()?;
    let fill = session.task("lr_fill_fragment", 5, true)?;
    let ztz = session.task("lr_partial_ztz", 1, true)?;
    let zty = session.task("lr_partial_zty", 1, true)?;
    let solve = session.task("lr_solve", 2, true)?;
    let genpred = session.task("lr_genpred", 4, true)?;
    let predict = session.task("lr_predict", 2, true)?;

    let frags = split_rows(p.rows, p.fragments)
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            session.invoke(
                &fill,
                [
                    Arg::from(i as i64),
                    (rows as i64).into(),
                    (p.cols as i64).into(),
                    (p.seed as i64).into(),
                    p.noise_scale.into(),
                ],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ztz_parts = Vec::with_capacity(frags.len());
    let mut zty_parts = Vec::with_capacity(frags.len());
    for f in &frags {
        ztz_parts.push(session.invoke(&ztz, [f])?);
        zty_parts.push(session.invoke(&zty, [f])?);
    }
    let ztz_sum = merge_tree(session, "lr_merge", ztz_parts, p.merge_arity)?.expect("at least one fragment");
    let zty_sum = merge_tree(session, "lr_merge", zty_parts, p.merge_arity)?.expect("at least one fragment");
    let beta = session.invoke(&solve, [ztz_sum, zty_sum])?;

    let mut preds = Vec::new();
    for (b, rows) in split_rows(p.test_rows, p.test_blocks).into_iter().enumerate() {
        let x = session.invoke(
            &genpred,
            [b as i64, rows as i64, p.cols as i64, p.seed as i64].map(Arg::from),
        )?;
        preds.push(session.invoke(&predict, [&beta, &x])?);
    }
    let unexpected = |e: crate::TaskError| RuntimeError::UnexpectedResult(e.to_string());
    let mut predictions = Vec::with_capacity(p.test_rows);
    for h in &preds {
        predictions.extend(take_f64s(session.wait_on(h)?).map_err(unexpected)?);
    }
    let beta = take_f64s(session.wait_on(&beta)?).map_err(unexpected)?;
    Ok(LinRegResult { beta, predictions })
}

/// Feature rows that `lr_genpred` produces for a parameter set.
pub fn prediction_inputs(p: &LinRegParams) -> Vec<Matrix> {
    split_rows(p.test_rows, p.test_blocks)
        .into_iter()
        .enumerate()
        .map(|(b, rows)| {
            fill_fragment(FragmentKind::Lr { noise_scale: 0.0 }, TEST_INDEX_BASE + b as u64, rows, p.cols, p.seed).values
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_row_major(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn ztz_example() {
        let z = lr_partial_ztz(&column(&[0.0, 1.0, 2.0]));
        assert_eq!(z.as_slice(), &[3.0, 3.0, 3.0, 5.0]);
        assert_eq!(lr_partial_ztz(&Matrix::zeros(0, 2)), Matrix::zeros(3, 3));
        assert_eq!(lr_partial_zty(&Matrix::zeros(0, 2), &[]).unwrap(), vec![0.0; 3]);
        assert!(lr_partial_zty(&column(&[1.0]), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn perfect_line() {
        let x = column(&[0.0, 1.0, 2.0]);
        let y = [1.0, 3.0, 5.0];
        let beta = lr_solve(&lr_partial_ztz(&x), &lr_partial_zty(&x, &y).unwrap()).unwrap();
        assert_eq!(beta, vec![1.0, 2.0]);
        assert_eq!(lr_predict(&beta, &column(&[0.0, 2.0])).unwrap(), vec![1.0, 5.0]);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![5.0, 5.0], vec![-1.0, -1.0]]).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0];
        let err = lr_solve(&lr_partial_ztz(&x), &lr_partial_zty(&x, &y).unwrap()).unwrap_err();
        assert!(matches!(err, AlgoError::SingularSystem { condition } if condition > 1e9));
    }

    #[test]
    fn merge_sums() {
        let a = lr_partial_ztz(&column(&[1.0]));
        let b = lr_partial_ztz(&column(&[2.0]));
        let both = lr_partial_ztz(&column(&[1.0, 2.0]));
        assert_eq!(lr_merge_ztz(&[&a, &b]).unwrap(), both);
        assert_eq!(lr_merge_zty(&[&[1.0, 2.0], &[0.5, 0.5]]).unwrap(), vec![1.5, 2.5]);
        assert!(lr_merge_zty(&[&[1.0], &[1.0, 2.0]]).is_err());
    }
}
