//! Whole-matrix evaluation, independent of the block IR.

use ndarray::{Array1, Array2, Axis, Zip};

use super::ExecError;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ExecError> {
    if cond {
        Ok(())
    } else {
        Err(ExecError::Shape(msg()))
    }
}

pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>, ExecError> {
    check(a.ncols() == b.nrows(), || format!("matmul of {:?} by {:?}", a.dim(), b.dim()))?;
    Ok(a.dot(b))
}

pub fn hadamard(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>, ExecError> {
    check(a.dim() == b.dim(), || format!("hadamard of {:?} and {:?}", a.dim(), b.dim()))?;
    Ok(a * b)
}

/// Plain (unsafe) row softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let e = x.mapv(f64::exp);
    let sums = e.sum_axis(Axis(1)).insert_axis(Axis(1));
    e / &sums
}

/// Standard deviation of a row from its sum `s1`, sum of squares `s2` and
/// length `k`.
pub fn row_std(s1: f64, s2: f64, k: f64) -> f64 {
    (s2 / k - (s1 / k).powi(2)).sqrt()
}

/// Row-wise normalization to zero mean and unit variance (no affine part).
/// A row whose shifted value is exactly zero maps to zero even when its
/// deviation is zero.
pub fn layernorm_rows(x: &Array2<f64>) -> Array2<f64> {
    let k = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let s1: f64 = row.sum();
        let s2: f64 = row.iter().map(|v| v * v).sum();
        let mean = s1 / k;
        let sd = row_std(s1, s2, k);
        row.mapv_inplace(|v| {
            let shifted = v - mean;
            if shifted == 0.0 {
                0.0
            } else {
                shifted / sd
            }
        });
    }
    out
}

pub fn rmsnorm_rows(x: &Array2<f64>, eps: f64) -> Array2<f64> {
    let k = x.ncols() as f64;
    let inv: Array1<f64> = x.map_axis(Axis(1), |r| 1.0 / (r.iter().map(|v| v * v).sum::<f64>() / k + eps).sqrt());
    x * &inv.insert_axis(Axis(1))
}

pub fn swish(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

/// softmax(q · kt / sqrt(d)) · v with `d` the column count of `q`.
pub fn attention(q: &Array2<f64>, kt: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>, ExecError> {
    let s = matmul(q, kt)? / (q.ncols() as f64).sqrt();
    matmul(&softmax_rows(&s), v)
}

pub fn layernorm_matmul(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>, ExecError> {
    matmul(&layernorm_rows(x), y)
}

/// (swish(n·w) ⊙ (n·v)) · u with n the row RMS normalization of `x`.
pub fn rms_swiglu(
    x: &Array2<f64>,
    w: &Array2<f64>,
    v: &Array2<f64>,
    u: &Array2<f64>,
    eps: f64,
) -> Result<Array2<f64>, ExecError> {
    let n = rmsnorm_rows(x, eps);
    let g = swish(&matmul(&n, w)?);
    let p = hadamard(&g, &matmul(&n, v)?)?;
    matmul(&p, u)
}

/// Largest |a - b| / max(|a|, |b|) over all elements.
pub fn max_rel_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut worst = 0.0f64;
    Zip::from(a).and(b).for_each(|x, y| {
        let m = x.abs().max(y.abs());
        if m > 0.0 {
            worst = worst.max((x - y).abs() / m);
        } else if x.is_nan() || y.is_nan() {
            worst = f64::INFINITY;
        }
    });
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[0.3, -1.2, 2.0], [5.0, 5.0, -3.0]];
        for s in softmax_rows(&x).sum_axis(Axis(1)) {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_deviation() {
        assert_eq!(row_std(0.0, 4.0, 4.0), 1.0);
    }

    #[test]
    fn constant_rows_normalize_to_zero() {
        let x = array![[3.0, 3.0, 3.0], [-1.0, -1.0, -1.0]];
        assert_eq!(layernorm_matmul(&x, &Array2::ones((3, 2))).unwrap(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn layernorm_matches_two_pass_formula() {
        let x = array![[1.0, 2.0, 4.0, 7.0]];
        let mean = 3.5;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        let n = layernorm_rows(&x);
        for (a, v) in n.iter().zip(x.iter()) {
            assert!((a - (v - mean) / var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(matmul(&Array2::zeros((2, 3)), &Array2::zeros((2, 3))).is_err());
    }
}
