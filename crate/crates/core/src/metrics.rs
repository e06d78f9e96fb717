//! Masked reconstruction errors and a two-moment distribution comparison.

use alloc::vec::Vec;
use core::fmt;

use crate::boxes::EditMask;
use crate::grid::Grid;

/// Fewest points per set accepted by [`moment_match`].
pub const MIN_MOMENT_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    SizeMismatch,
    EmptyMask,
    TooFewSamples { got: usize, need: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::SizeMismatch => f.write_str("reference, candidate and mask sizes differ"),
            MetricsError::EmptyMask => f.write_str("evaluation mask selects no pixels"),
            MetricsError::TooFewSamples { got, need } => {
                write!(f, "{got} samples, need at least {need}")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Two equally sized rasters compared over the pixels of `mask`.
#[derive(Debug, Clone, Copy)]
pub struct MaskedPair<'a> {
    pub reference: &'a Grid<f64>,
    pub candidate: &'a Grid<f64>,
    pub mask: &'a EditMask,
}

impl<'a> MaskedPair<'a> {
    pub fn new(
        reference: &'a Grid<f64>,
        candidate: &'a Grid<f64>,
        mask: &'a EditMask,
    ) -> Result<Self, MetricsError> {
        if reference.shape() != candidate.shape() || mask.shape() != reference.shape() {
            return Err(MetricsError::SizeMismatch);
        }
        Ok(Self {
            reference,
            candidate,
            mask,
        })
    }

    /// `(reference, candidate)` at every masked pixel, row-major.
    pub fn masked(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mask = self.mask.grid().as_slice();
        self.reference
            .as_slice()
            .iter()
            .zip(self.candidate.as_slice())
            .zip(mask)
            .filter(|(_, &m)| m != 0)
            .map(|((&r, &c), _)| (r, c))
    }
}

/// Median absolute difference over the mask. For an even count the lower
/// of the two middle values is returned.
pub fn median_depth_error(p: &MaskedPair<'_>) -> Result<f64, MetricsError> {
    let mut errs: Vec<f64> = p.masked().map(|(r, c)| libm::fabs(r - c)).collect();
    if errs.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let k = (errs.len() - 1) / 2;
    let (_, median, _) = errs.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*median)
}

/// Mean squared difference over the mask, in the units of the inputs
/// (raw intensities on `[0, 255]`).
pub fn intensity_mse(p: &MaskedPair<'_>) -> Result<f64, MetricsError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (r, c) in p.masked() {
        sum += (r - c) * (r - c);
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Sample mean and unbiased covariance of a 2D point set.
pub fn moments(points: &[[f64; 2]]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean = [mean[0] / n, mean[1] / n];
    let mut cov = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    (mean, cov)
}

/// Gaps between two point sets' first two moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentGap {
    /// Euclidean distance between the sample means.
    pub mean_gap: f64,
    /// Frobenius distance between the sample covariances.
    pub cov_gap: f64,
}

pub fn moment_match(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<MomentGap, MetricsError> {
    for set in [a, b] {
        if set.len() < MIN_MOMENT_SAMPLES {
            return Err(MetricsError::TooFewSamples {
                got: set.len(),
                need: MIN_MOMENT_SAMPLES,
            });
        }
    }
    let (ma, ca) = moments(a);
    let (mb, cb) = moments(b);
    let mean_gap = libm::hypot(ma[0] - mb[0], ma[1] - mb[1]);
    let mut fro = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            fro += (ca[i][j] - cb[i][j]) * (ca[i][j] - cb[i][j]);
        }
    }
    Ok(MomentGap {
        mean_gap,
        cov_gap: libm::sqrt(fro),
    })
}
