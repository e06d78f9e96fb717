//! Invertible normalizations of range-view channels and the resizing
//! operators used around the latent model.
//!
//! Depth goes through two stages: a linear map of `[1.4, 54]` meters onto
//! `[-1, 1]`, then an object-aware piecewise-linear remap that stretches the
//! band `[min_d, max_d]` covered by the object's box onto `[-α, α]`.
//! Intensity uses the exponential CDF `2·exp(-λ·i/255) - 1`, which spends
//! more of the output range on the (far more common) low intensities.

use alloc::vec::Vec;
use core::fmt;

use crate::grid::Grid;
use crate::range_view::{MAX_DEPTH, MIN_DEPTH};

pub const DEFAULT_LAMBDA: f64 = 4.0;
pub const DEFAULT_ALPHA: f64 = 0.5;

const INTENSITY_MAX: f64 = 255.0;
// Slack for round-trip inputs sitting on a domain endpoint after rounding.
const ENDPOINT_SLACK: f64 = 1e-12;
// Normalized intensities this far below the floor still decode (to 255);
// about 2e-3 intensity units at λ = 4.
const INTENSITY_FLOOR_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormError {
    OutOfRange { value: f64, lo: f64, hi: f64 },
    InvalidParams,
    InvalidRate(f64),
    NonDivisibleFactor { factor: usize, rows: usize, cols: usize },
    ZeroFactor,
}

impl fmt::Display for NormError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormError::OutOfRange { value, lo, hi } => {
                write!(f, "value {value} outside [{lo}, {hi}]")
            }
            NormError::InvalidParams => {
                f.write_str("depth normalization needs 0 < alpha < 1 and -1 <= min_d < max_d <= 1")
            }
            NormError::InvalidRate(l) => write!(f, "intensity rate must be positive, got {l}"),
            NormError::NonDivisibleFactor { factor, rows, cols } => {
                write!(f, "factor {factor} does not divide a {rows}x{cols} grid")
            }
            NormError::ZeroFactor => f.write_str("resize factor must be at least 1"),
        }
    }
}

impl core::error::Error for NormError {}

fn check_range(value: f64, lo: f64, hi: f64) -> Result<(), NormError> {
    if value.is_nan() || value < lo - ENDPOINT_SLACK || value > hi + ENDPOINT_SLACK {
        return Err(NormError::OutOfRange { value, lo, hi });
    }
    Ok(())
}

/// Meters in `[1.4, 54]` to `[-1, 1]`.
pub fn depth_linear_norm(depth: f64) -> Result<f64, NormError> {
    check_range(depth, MIN_DEPTH, MAX_DEPTH)?;
    Ok(2.0 * (depth - MIN_DEPTH) / (MAX_DEPTH - MIN_DEPTH) - 1.0)
}

pub fn depth_linear_denorm(normalized: f64) -> Result<f64, NormError> {
    check_range(normalized, -1.0, 1.0)?;
    Ok((normalized + 1.0) / 2.0 * (MAX_DEPTH - MIN_DEPTH) + MIN_DEPTH)
}

/// Band boundaries for the object-aware depth remap, in linearly
/// normalized depth units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthNormParams {
    alpha: f64,
    min_d: f64,
    max_d: f64,
}

impl DepthNormParams {
    pub fn new(alpha: f64, min_d: f64, max_d: f64) -> Result<Self, NormError> {
        let valid = alpha > 0.0 && alpha < 1.0 && -1.0 <= min_d && min_d < max_d && max_d <= 1.0;
        if !valid {
            return Err(NormError::InvalidParams);
        }
        Ok(Self { alpha, min_d, max_d })
    }

    /// Band from the nearest and farthest box corner depths, in meters.
    pub fn from_box_depths(alpha: f64, near_m: f64, far_m: f64) -> Result<Self, NormError> {
        let lo = depth_linear_norm(near_m.clamp(MIN_DEPTH, MAX_DEPTH))?;
        let hi = depth_linear_norm(far_m.clamp(MIN_DEPTH, MAX_DEPTH))?;
        Self::new(alpha, lo, hi)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn min_d(&self) -> f64 {
        self.min_d
    }

    pub fn max_d(&self) -> f64 {
        self.max_d
    }
}

pub fn depth_object_norm(d: f64, p: &DepthNormParams) -> Result<f64, NormError> {
    check_range(d, -1.0, 1.0)?;
    let DepthNormParams { alpha, min_d, max_d } = *p;
    let out = if d < min_d {
        -1.0 + (1.0 - alpha) * (d + 1.0) / (min_d + 1.0)
    } else if d <= max_d {
        -alpha + 2.0 * alpha * (d - min_d) / (max_d - min_d)
    } else {
        alpha + (1.0 - alpha) * (d - max_d) / (1.0 - max_d)
    };
    Ok(out)
}

pub fn depth_object_denorm(d: f64, p: &DepthNormParams) -> Result<f64, NormError> {
    check_range(d, -1.0, 1.0)?;
    let DepthNormParams { alpha, min_d, max_d } = *p;
    let out = if d < -alpha {
        -1.0 + (d + 1.0) * (min_d + 1.0) / (1.0 - alpha)
    } else if d <= alpha {
        min_d + (d + alpha) * (max_d - min_d) / (2.0 * alpha)
    } else {
        max_d + (d - alpha) * (1.0 - max_d) / (1.0 - alpha)
    };
    Ok(out)
}

fn check_rate(lambda: f64) -> Result<(), NormError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(NormError::InvalidRate(lambda))
    }
}

/// Exponential-CDF map of `[0, 255]` onto `(-1, 1]`.
pub fn intensity_norm(intensity: f64, lambda: f64) -> Result<f64, NormError> {
    check_rate(lambda)?;
    check_range(intensity, 0.0, INTENSITY_MAX)?;
    Ok(2.0 * libm::exp(-lambda * intensity / INTENSITY_MAX) - 1.0)
}

/// Smallest value [`intensity_norm`] produces for rate `lambda`.
pub fn intensity_floor(lambda: f64) -> f64 {
    2.0 * libm::exp(-lambda) - 1.0
}

pub fn intensity_denorm(normalized: f64, lambda: f64) -> Result<f64, NormError> {
    check_rate(lambda)?;
    let floor = intensity_floor(lambda);
    if normalized < floor - INTENSITY_FLOOR_SLACK {
        return Err(NormError::OutOfRange {
            value: normalized,
            lo: floor,
            hi: 1.0,
        });
    }
    check_range(normalized, f64::NEG_INFINITY, 1.0)?;
    let normalized = normalized.max(floor);
    let i = -INTENSITY_MAX / lambda * libm::log((normalized + 1.0) / 2.0);
    Ok(i.clamp(0.0, INTENSITY_MAX))
}

/// Mean of every `factor × factor` block.
///
/// Block means are accumulated relative to the block's first value, so a
/// block of identical values reproduces that value bit for bit.
pub fn avg_pool_downscale(grid: &Grid<f64>, factor: usize) -> Result<Grid<f64>, NormError> {
    if factor == 0 {
        return Err(NormError::ZeroFactor);
    }
    let (rows, cols) = grid.shape();
    if rows % factor != 0 || cols % factor != 0 {
        return Err(NormError::NonDivisibleFactor { factor, rows, cols });
    }
    let n = (factor * factor) as f64;
    Ok(Grid::from_fn(rows / factor, cols / factor, |r, c| {
        let anchor = *grid.get(r * factor, c * factor);
        let mut offset = 0.0;
        for dr in 0..factor {
            for &v in &grid.row(r * factor + dr)[c * factor..(c + 1) * factor] {
                offset += v - anchor;
            }
        }
        anchor + offset / n
    }))
}

pub fn nn_upscale<T: Clone>(grid: &Grid<T>, factor: usize) -> Result<Grid<T>, NormError> {
    if factor == 0 {
        return Err(NormError::ZeroFactor);
    }
    let (rows, cols) = grid.shape();
    Ok(Grid::from_fn(rows * factor, cols * factor, |r, c| {
        grid.get(r / factor, c / factor).clone()
    }))
}

/// Normalizes a whole depth channel; unoccupied pixels map to `-1`.
pub fn normalize_depth_channel(
    depth: &Grid<f64>,
    occupancy: &Grid<bool>,
    params: &DepthNormParams,
) -> Result<Grid<f64>, NormError> {
    let mut out = Vec::with_capacity(depth.len());
    for (&d, &occ) in depth.as_slice().iter().zip(occupancy.as_slice()) {
        out.push(if occ {
            depth_object_norm(depth_linear_norm(d)?, params)?
        } else {
            -1.0
        });
    }
    Ok(Grid::from_vec(depth.rows(), depth.cols(), out).expect("shape preserved"))
}

/// Normalizes an intensity channel; unoccupied pixels map to `1` (zero intensity).
pub fn normalize_intensity_channel(
    intensity: &Grid<f64>,
    occupancy: &Grid<bool>,
    lambda: f64,
) -> Result<Grid<f64>, NormError> {
    let mut out = Vec::with_capacity(intensity.len());
    for (&i, &occ) in intensity.as_slice().iter().zip(occupancy.as_slice()) {
        out.push(if occ { intensity_norm(i, lambda)? } else { 1.0 });
    }
    Ok(Grid::from_vec(intensity.rows(), intensity.cols(), out).expect("shape preserved"))
}
