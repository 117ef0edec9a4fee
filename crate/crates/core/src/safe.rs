//! Significand-exponent arithmetic: a value `s·e^t` kept as the pair
//! `(s, t)` so that exponentials never overflow. Blocks share one exponent
//! or keep one per row.

use std::ops::{Add, Mul};

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SafeError {
    #[error("inverse of a zero significand")]
    ZeroSignificand,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("exponent forms differ: {0}")]
    Form(String),
}

/// `s · e^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeScalar {
    pub s: f64,
    pub t: f64,
}

impl SeScalar {
    pub fn from_real(x: f64) -> Self {
        SeScalar { s: x, t: 0.0 }
    }

    /// `e^y`, exactly, for any finite `y`.
    pub fn exp(y: f64) -> Self {
        SeScalar { s: 1.0, t: y }
    }

    pub fn inv(self) -> Result<Self, SafeError> {
        if self.s == 0.0 {
            return Err(SafeError::ZeroSignificand);
        }
        Ok(SeScalar { s: 1.0 / self.s, t: -self.t })
    }

    /// The plain value and whether it overflowed to infinity. The pair
    /// itself stays valid either way.
    pub fn to_real_flagged(self) -> (f64, bool) {
        let v = self.s * self.t.exp();
        (v, v.is_infinite() && self.s.is_finite())
    }

    pub fn to_real(self) -> f64 {
        self.to_real_flagged().0
    }
}

impl Mul for SeScalar {
    type Output = SeScalar;

    fn mul(self, o: SeScalar) -> SeScalar {
        SeScalar { s: self.s * o.s, t: self.t + o.t }
    }
}

/// Rescales both operands to the larger exponent, so each rescaling
/// factor lies in (0, 1].
impl Add for SeScalar {
    type Output = SeScalar;

    fn add(self, o: SeScalar) -> SeScalar {
        let z = self.t.max(o.t);
        SeScalar { s: self.s * (self.t - z).exp() + o.s * (o.t - z).exp(), t: z }
    }
}

/// Exponent of a [`SeBlock`].
#[derive(Debug, Clone, PartialEq)]
pub enum Exponent {
    Shared(f64),
    RowWise(Array1<f64>),
}

/// A block of significands `S` with a shared or per-row exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock {
    pub s: Array2<f64>,
    pub t: Exponent,
}

fn row_max(x: &Array2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.fold(f64::NEG_INFINITY, |a, b| a.max(*b)))
}

impl SeBlock {
    pub fn from_real(x: Array2<f64>) -> Self {
        SeBlock { s: x, t: Exponent::Shared(0.0) }
    }

    /// Elementwise `e^X` with one exponent, the block maximum.
    pub fn exp_shared(x: &Array2<f64>) -> Self {
        let z = x.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        SeBlock { s: x.mapv(|v| (v - z).exp()), t: Exponent::Shared(z) }
    }

    /// Elementwise `e^X` with one exponent per row, the row maximum.
    pub fn exp_rows(x: &Array2<f64>) -> Self {
        let z = row_max(x);
        let mut s = x.clone();
        for (mut row, zi) in s.rows_mut().into_iter().zip(z.iter()) {
            row.mapv_inplace(|v| (v - zi).exp());
        }
        SeBlock { s, t: Exponent::RowWise(z) }
    }

    pub fn validate(&self) -> Result<(), SafeError> {
        match &self.t {
            Exponent::RowWise(t) if t.len() != self.s.nrows() => {
                Err(SafeError::Shape(format!("{} row exponents for {} rows", t.len(), self.s.nrows())))
            }
            _ => Ok(()),
        }
    }

    pub fn add(&self, o: &SeBlock) -> Result<SeBlock, SafeError> {
        self.validate()?;
        o.validate()?;
        if self.s.dim() != o.s.dim() {
            return Err(SafeError::Shape(format!("{:?} + {:?}", self.s.dim(), o.s.dim())));
        }
        match (&self.t, &o.t) {
            (Exponent::Shared(t1), Exponent::Shared(t2)) => {
                let z = t1.max(*t2);
                Ok(SeBlock { s: &self.s * (t1 - z).exp() + &o.s * (t2 - z).exp(), t: Exponent::Shared(z) })
            }
            (Exponent::RowWise(t1), Exponent::RowWise(t2)) => {
                let z = Array1::from_iter(t1.iter().zip(t2).map(|(a, b)| a.max(*b)));
                let mut s = self.s.clone();
                for (i, mut row) in s.rows_mut().into_iter().enumerate() {
                    let (a, b) = ((t1[i] - z[i]).exp(), (t2[i] - z[i]).exp());
                    row.zip_mut_with(&o.s.row(i), |x, y| *x = *x * a + y * b);
                }
                Ok(SeBlock { s, t: Exponent::RowWise(z) })
            }
            _ => Err(SafeError::Form("cannot add shared and row-wise blocks".into())),
        }
    }

    /// `(S1·S2, t1 + t2)`. A row-wise left operand keeps its row exponents;
    /// the right operand must share one exponent.
    pub fn matmul(&self, o: &SeBlock) -> Result<SeBlock, SafeError> {
        self.validate()?;
        if self.s.ncols() != o.s.nrows() {
            return Err(SafeError::Shape(format!("{:?} · {:?}", self.s.dim(), o.s.dim())));
        }
        let Exponent::Shared(t2) = o.t else {
            return Err(SafeError::Form("right operand of matmul has row-wise exponents".into()));
        };
        let t = match &self.t {
            Exponent::Shared(t1) => Exponent::Shared(t1 + t2),
            Exponent::RowWise(t1) => Exponent::RowWise(t1 + t2),
        };
        Ok(SeBlock { s: self.s.dot(&o.s), t })
    }

    /// Sum of each row as `(significand, exponent)` pairs.
    pub fn row_sums(&self) -> Vec<SeScalar> {
        let sums = self.s.sum_axis(Axis(1));
        (0..self.s.nrows()).map(|i| SeScalar { s: sums[i], t: self.row_exponent(i) }).collect()
    }

    fn row_exponent(&self, i: usize) -> f64 {
        match &self.t {
            Exponent::Shared(t) => *t,
            Exponent::RowWise(t) => t[i],
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = self.s.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let f = self.row_exponent(i).exp();
            row.mapv_inplace(|v| v * f);
        }
        out
    }

    /// Divide row `i` by `d[i]`, returning plain values. Exponents cancel
    /// as differences, which stay bounded when `d` was accumulated from the
    /// same rows.
    pub fn divide_rows(&self, d: &[SeScalar]) -> Result<Array2<f64>, SafeError> {
        if d.len() != self.s.nrows() {
            return Err(SafeError::Shape(format!("{} divisors for {} rows", d.len(), self.s.nrows())));
        }
        let mut out = self.s.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let inv = d[i].inv()?;
            let f = inv.s * (self.row_exponent(i) + inv.t).exp();
            row.mapv_inplace(|v| v * f);
        }
        Ok(out)
    }
}

/// Exponent granularity used by [`softmax_rows_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerElement,
    RowWise,
    BlockShared,
}

fn column_chunks(cols: usize, chunk: usize) -> impl Iterator<Item = (usize, usize)> {
    let chunk = chunk.max(1);
    (0..cols).step_by(chunk).map(move |c| (c, (c + chunk).min(cols)))
}

/// Row-wise softmax that streams over column chunks of width `chunk`,
/// carrying each row's running sum as a significand-exponent pair.
///
/// A shared block exponent can underflow a whole row whose values sit far
/// below the block maximum; that row's sum is then zero and the call fails.
pub fn softmax_rows_with(x: &Array2<f64>, granularity: Granularity, chunk: usize) -> Result<Array2<f64>, SafeError> {
    let (rows, cols) = x.dim();
    if cols == 0 {
        return Ok(x.clone());
    }
    let mut sums: Vec<Option<SeScalar>> = vec![None; rows];
    let mut acc = |i: usize, v: SeScalar| sums[i] = Some(sums[i].map_or(v, |a| a + v));
    for (c0, c1) in column_chunks(cols, chunk) {
        let part = x.slice(s![.., c0..c1]).to_owned();
        match granularity {
            Granularity::PerElement => {
                for ((i, _), v) in part.indexed_iter() {
                    acc(i, SeScalar::exp(*v));
                }
            }
            Granularity::RowWise => {
                for (i, v) in SeBlock::exp_rows(&part).row_sums().into_iter().enumerate() {
                    acc(i, v);
                }
            }
            Granularity::BlockShared => {
                for (i, v) in SeBlock::exp_shared(&part).row_sums().into_iter().enumerate() {
                    acc(i, v);
                }
            }
        }
    }
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let inv = sums[i].expect("at least one column").inv()?;
        row.mapv_inplace(|v| (SeScalar::exp(v) * inv).to_real());
    }
    Ok(out)
}

/// Row-wise softmax with per-row exponents, four columns at a time.
pub fn safe_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    // Every chunk's row maximum contributes e^0, so no row sum is zero.
    softmax_rows_with(x, Granularity::RowWise, 4).expect("row-wise sums are positive")
}

/// `softmax(Q·Kt / sqrt(d)) · V` computed one column block of `Kt` (and row
/// block of `V`) at a time, as the fused attention kernel does, with the
/// running output and row sums kept in row-wise exponent form.
pub fn safe_attention(
    q: &Array2<f64>,
    kt: &Array2<f64>,
    v: &Array2<f64>,
    block: usize,
) -> Result<Array2<f64>, SafeError> {
    if q.ncols() != kt.nrows() || kt.ncols() != v.nrows() {
        return Err(SafeError::Shape(format!("Q {:?}, Kt {:?}, V {:?}", q.dim(), kt.dim(), v.dim())));
    }
    let scale = (q.ncols() as f64).sqrt();
    let mut out: Option<SeBlock> = None;
    let mut sums: Option<Vec<SeScalar>> = None;
    for (c0, c1) in column_chunks(kt.ncols(), block) {
        let scores = q.dot(&kt.slice(s![.., c0..c1])) / scale;
        let p = SeBlock::exp_rows(&scores);
        let o = p.matmul(&SeBlock::from_real(v.slice(s![c0..c1, ..]).to_owned()))?;
        let l = p.row_sums();
        out = Some(match out {
            None => o,
            Some(acc) => acc.add(&o)?,
        });
        sums = Some(match sums {
            None => l,
            Some(acc) => acc.iter().zip(l).map(|(a, b)| *a + b).collect(),
        });
    }
    match (out, sums) {
        (Some(o), Some(l)) => o.divide_rows(&l),
        _ => Ok(Array2::zeros((q.nrows(), v.ncols()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scalar_formulas() {
        let m = SeScalar { s: 2.0, t: 3.0 } * SeScalar { s: 5.0, t: 7.0 };
        assert_eq!(m, SeScalar { s: 10.0, t: 10.0 });
        assert_eq!(SeScalar::from_real(-3.5), SeScalar { s: -3.5, t: 0.0 });
        assert_eq!(SeScalar::exp(1000.0), SeScalar { s: 1.0, t: 1000.0 });
        assert_eq!(SeScalar { s: 1.0, t: 5.0 }.inv().unwrap(), SeScalar { s: 1.0, t: -5.0 });
        assert_eq!(SeScalar::from_real(0.0).inv(), Err(SafeError::ZeroSignificand));
    }

    #[test]
    fn large_exponents_stay_finite() {
        let a = SeScalar::exp(1000.0) + SeScalar::exp(999.0);
        assert_eq!(a.t, 1000.0);
        assert!((a.s - (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        let (v, overflow) = a.to_real_flagged();
        assert!(v.is_infinite() && overflow);
    }

    #[test]
    fn row_form_needs_one_exponent_per_row() {
        let b = SeBlock { s: Array2::zeros((2, 2)), t: Exponent::RowWise(array![0.0]) };
        assert!(matches!(b.add(&b), Err(SafeError::Shape(_))));
        let shared = SeBlock::from_real(Array2::zeros((2, 2)));
        let rows = SeBlock { s: Array2::zeros((2, 2)), t: Exponent::RowWise(array![0.0, 0.0]) };
        assert!(matches!(shared.add(&rows), Err(SafeError::Form(_))));
        assert!(matches!(shared.matmul(&rows), Err(SafeError::Form(_))));
    }

    #[test]
    fn symmetric_row() {
        let y = safe_softmax_rows(&array![[0.0, 0.0]]);
        assert_eq!(y, array![[0.5, 0.5]]);
    }
}
