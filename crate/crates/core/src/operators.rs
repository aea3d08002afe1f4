//! Banded discrete difference operators.
//!
//! `Δ^(1)` maps a length-`D` vector to its `D − 1` adjacent differences with
//! row layout `(+1, −1)`. Higher orders are built recursively,
//! `Δ^(m) = Δ^(1) Δ^(m−1)`, which gives row coefficients `(−1)^j C(m, j)`
//! starting at the row index. Order 0 is the identity.

use crate::error::{DeconvError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffOperator {
    order: usize,
    cols: usize,
    /// Coefficients of one row, shared by every row (shifted by the row index).
    band: Vec<f64>,
}

impl DiffOperator {
    /// Difference operator of the given order on vectors of length `cols`.
    pub fn new(cols: usize, order: usize) -> Result<Self> {
        if cols < order + 1 {
            return Err(DeconvError::OperatorHasNoRows { cols, order });
        }
        // Repeated convolution with (1, -1) reproduces the recursive product.
        let mut band = vec![1.0];
        for _ in 0..order {
            let mut next = vec![0.0; band.len() + 1];
            for (j, &c) in band.iter().enumerate() {
                next[j] += c;
                next[j + 1] -= c;
            }
            band = next;
        }
        Ok(DiffOperator { order, cols, band })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.cols - self.order
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn band(&self) -> &[f64] {
        &self.band
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(v.len(), self.cols)?;
        self.check(out.len(), self.rows())?;
        for (r, o) in out.iter_mut().enumerate() {
            *o = self
                .band
                .iter()
                .zip(&v[r..r + self.band.len()])
                .map(|(c, x)| c * x)
                .sum();
        }
        Ok(())
    }

    pub fn apply_transpose(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.apply_transpose_into(w, &mut out)?;
        Ok(out)
    }

    pub fn apply_transpose_into(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(w.len(), self.rows())?;
        self.check(out.len(), self.cols)?;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &wr) in w.iter().enumerate() {
            for (o, c) in out[r..r + self.band.len()].iter_mut().zip(&self.band) {
                *o += c * wr;
            }
        }
        Ok(())
    }

    /// Dense row-major `ΔᵀΔ` (`cols × cols`).
    pub fn gram(&self) -> Vec<f64> {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for r in 0..self.rows() {
            for (a, ca) in self.band.iter().enumerate() {
                for (b, cb) in self.band.iter().enumerate() {
                    g[(r + a) * n + r + b] += ca * cb;
                }
            }
        }
        g
    }

    /// Dense row-major copy. Only meant for checking the banded path.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|r| {
                let mut row = vec![0.0; self.cols];
                row[r..r + self.band.len()].copy_from_slice(&self.band);
                row
            })
            .collect()
    }

    fn check(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(DeconvError::DimensionMismatch { expected, got });
        }
        Ok(())
    }
}
