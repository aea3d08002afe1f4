//! Histogram binning of the observations and the discretized Gaussian
//! convolution operator.
//!
//! Bins are equal width and exactly cover `[min(y), max(y)]`. Every bin is
//! half-open `[left, right)` except the last, which is closed so that the
//! sample maximum is counted. The same midpoints serve as the support of the
//! mixing density and as the evaluation points of the marginal.

use serde::{Deserialize, Serialize};

use crate::error::{DeconvError, Result};

/// Default number of bins.
pub const DEFAULT_BINS: usize = 250;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    midpoints: Vec<f64>,
    width: f64,
    counts: Vec<u64>,
    n: u64,
    /// Range ends, kept exactly rather than recomputed from the midpoints.
    lower: f64,
    upper: f64,
}

impl Grid {
    /// Bins `samples` into `bins` equal-width intervals spanning the sample range.
    pub fn from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(DeconvError::NoData);
        }
        if bins < 1 {
            return Err(DeconvError::InvalidGrid("need at least one bin".into()));
        }
        if let Some(bad) = samples.iter().position(|y| !y.is_finite()) {
            return Err(DeconvError::InvalidGrid(format!("non-finite sample at index {bad}")));
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(DeconvError::DegenerateRange);
        }
        let width = (hi - lo) / bins as f64;
        let midpoints = (0..bins).map(|j| lo + (j as f64 + 0.5) * width).collect();
        let mut grid = Grid {
            midpoints,
            width,
            counts: vec![0; bins],
            n: 0,
            lower: lo,
            upper: hi,
        };
        for &y in samples {
            let j = grid.bin_index(y).expect("sample inside its own range");
            grid.counts[j] += 1;
        }
        grid.n = samples.len() as u64;
        Ok(grid)
    }

    /// Builds a grid from explicit midpoints, width and counts.
    pub fn new(midpoints: Vec<f64>, width: f64, counts: Vec<u64>) -> Result<Self> {
        if midpoints.is_empty() {
            return Err(DeconvError::NoData);
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(DeconvError::InvalidGrid(format!("bin width {width} must be positive")));
        }
        if counts.len() != midpoints.len() {
            return Err(DeconvError::DimensionMismatch {
                expected: midpoints.len(),
                got: counts.len(),
            });
        }
        let scale = midpoints.iter().fold(width, |m, x| m.max(x.abs()));
        for (j, pair) in midpoints.windows(2).enumerate() {
            let gap = pair[1] - pair[0];
            if (gap - width).abs() > 1e-12 * scale {
                return Err(DeconvError::InvalidGrid(format!(
                    "midpoints {j} and {} are {gap} apart, expected {width}",
                    j + 1
                )));
            }
        }
        let n = counts.iter().sum();
        let lower = midpoints[0] - 0.5 * width;
        let upper = midpoints[midpoints.len() - 1] + 0.5 * width;
        Ok(Grid {
            midpoints,
            width,
            counts,
            n,
            lower,
            upper,
        })
    }

    /// Same bins, counts taken from a different set of samples.
    ///
    /// Samples outside the grid range are rejected.
    pub fn recount(&self, samples: &[f64]) -> Result<Self> {
        let mut counts = vec![0u64; self.len()];
        for (i, &y) in samples.iter().enumerate() {
            let j = self.bin_index(y).ok_or_else(|| {
                DeconvError::InvalidGrid(format!("sample {i} ({y}) outside grid range"))
            })?;
            counts[j] += 1;
        }
        Ok(Grid {
            counts,
            n: samples.len() as u64,
            ..self.clone()
        })
    }

    /// Same bins with replacement counts.
    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != self.len() {
            return Err(DeconvError::DimensionMismatch {
                expected: self.len(),
                got: counts.len(),
            });
        }
        let n = counts.iter().sum();
        Ok(Grid {
            counts,
            n,
            ..self.clone()
        })
    }

    /// Index of the bin containing `y`, or `None` outside `[lower, upper]`.
    pub fn bin_index(&self, y: f64) -> Option<usize> {
        let lo = self.lower();
        let hi = self.upper();
        if !(y >= lo && y <= hi) {
            return None;
        }
        let j = ((y - lo) / self.width).floor();
        Some((j as usize).min(self.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Total number of binned samples.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// `log(n Δ)`, the offset between the unconstrained and normalized scales.
    pub fn log_scale(&self) -> f64 {
        (self.n as f64 * self.width).ln()
    }

    /// Checks that a penalty of derivative order `k + 1` has at least one row.
    pub fn check_order(&self, k: usize) -> Result<()> {
        if self.len() < k + 2 {
            return Err(DeconvError::InvalidGrid(format!(
                "{} bins cannot support penalty order {}",
                self.len(),
                k + 1
            )));
        }
        Ok(())
    }
}

/// Convolution kernel family. Only the standard normal is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Kernel {
    #[default]
    StandardNormal,
}

impl Kernel {
    pub fn density(self, x: f64) -> f64 {
        match self {
            Kernel::StandardNormal => std_normal_pdf(x),
        }
    }

    pub fn log_density(self, x: f64) -> f64 {
        match self {
            Kernel::StandardNormal => -0.5 * x * x - 0.918_938_533_204_672_8,
        }
    }
}

/// Dense `D x D` matrix with entries `Δ·φ(ξ_j − ξ_i)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    dim: usize,
    entries: Vec<f64>,
    kernel: Kernel,
}

impl KernelMatrix {
    pub fn build(grid: &Grid) -> Self {
        Self::build_with(grid, Kernel::StandardNormal)
    }

    pub fn build_with(grid: &Grid, kernel: Kernel) -> Self {
        let xi = grid.midpoints();
        let d = xi.len();
        let w = grid.width();
        let mut entries = Vec::with_capacity(d * d);
        for &xi_i in xi {
            entries.extend(xi.iter().map(|&xi_j| w * kernel.density(xi_j - xi_i)));
        }
        KernelMatrix {
            dim: d,
            entries,
            kernel,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    /// `out_j = Σ_i G_ij v_i`.
    pub fn transpose_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &g) in out.iter_mut().zip(self.row(i)) {
                *o += g * vi;
            }
        }
    }

    /// `out_i = Σ_j G_ij v_j`.
    pub fn mul(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(g, x)| g * x).sum();
        }
    }
}

/// Marginal density `m(y) = Σ_i Δ φ(y − ξ_i) f_i` at arbitrary points.
///
/// `density` must be normalized on the grid (`Σ Δ f_i = 1` within 1e-8).
pub fn marginal_on_points(density: &[f64], grid: &Grid, points: &[f64]) -> Result<Vec<f64>> {
    if density.len() != grid.len() {
        return Err(DeconvError::DimensionMismatch {
            expected: grid.len(),
            got: density.len(),
        });
    }
    if density.iter().any(|f| !(*f >= 0.0)) {
        return Err(DeconvError::DensityNotNormalized(f64::NAN));
    }
    let mass: f64 = density.iter().sum::<f64>() * grid.width();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(DeconvError::DensityNotNormalized(mass));
    }
    let w = grid.width();
    Ok(points
        .iter()
        .map(|&y| {
            grid.midpoints()
                .iter()
                .zip(density)
                .map(|(&xi, &f)| w * std_normal_pdf(y - xi) * f)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_points_two_bins() {
        let g = Grid::from_samples(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(g.width(), 1.5);
        assert_eq!(g.midpoints(), &[0.75, 2.25]);
        assert_eq!(g.counts(), &[2, 2]);
        assert_eq!(g.n(), 4);
    }

    #[test]
    fn errors() {
        assert_eq!(Grid::from_samples(&[], 4), Err(DeconvError::NoData));
        assert_eq!(
            Grid::from_samples(&[5.0, 5.0, 5.0], 4),
            Err(DeconvError::DegenerateRange)
        );
        assert!(Grid::new(vec![0.0, 1.0, 2.5], 1.0, vec![1, 1, 1]).is_err());
    }

    #[test]
    fn max_lands_in_last_bin() {
        let g = Grid::from_samples(&[0.0, 0.1, 10.0], 10).unwrap();
        assert_eq!(g.counts()[9], 1);
        assert_eq!(g.counts()[0], 2);
        assert_eq!(g.bin_index(10.0 + 1e-9), None);
    }

    #[test]
    fn kernel_small_cases() {
        let g = Grid::new(vec![0.0], 1.0, vec![3]).unwrap();
        let k = KernelMatrix::build(&g);
        assert!((k.get(0, 0) - 0.398_942_280_401_432_7).abs() < 1e-15);

        let g = Grid::new(vec![0.0, 1.0], 1.0, vec![1, 1]).unwrap();
        let k = KernelMatrix::build(&g);
        let expect = [[0.3989, 0.2420], [0.2420, 0.3989]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((k.get(i, j) - expect[i][j]).abs() < 5e-5);
            }
        }
    }

    #[test]
    fn marginal_point_mass() {
        let g = Grid::new(vec![0.0], 1.0, vec![1]).unwrap();
        let m = marginal_on_points(&[1.0], &g, &[0.0, 25.0]).unwrap();
        assert!((m[0] - std_normal_pdf(0.0)).abs() < 1e-15);
        assert!(m[1] < 1e-20);
        assert!(matches!(
            marginal_on_points(&[2.0], &g, &[0.0]),
            Err(DeconvError::DensityNotNormalized(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn every_sample_lands_in_a_bin(
            samples in proptest::collection::vec(-1e3f64..1e3, 2..200),
            bins in 1usize..300,
        ) {
            if let Ok(g) = Grid::from_samples(&samples, bins) {
                proptest::prop_assert_eq!(g.counts().iter().sum::<u64>(), samples.len() as u64);
                let first = samples.iter().copied().fold(f64::INFINITY, f64::min);
                proptest::prop_assert_eq!(g.lower(), first);
            }
        }
    }
}
