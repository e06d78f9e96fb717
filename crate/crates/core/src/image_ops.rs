//! Pixel-space helpers for compositing: Sobel detail maps, binary
//! erosion, Gaussian-feathered blending and the range-view replacement
//! rule.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::boxes::{cross, dot, sub, Box3D, BoxError, EditMask, Vec3};
use crate::grid::Grid;
use crate::range_view::RangeView;

/// Default feather width in pixels.
pub const DEFAULT_FEATHER_SIGMA: f64 = 2.0;

// Slack on the unit-cube test in box coordinates.
const BOX_EPS: f64 = 1e-9;
// Relative volume below which a box counts as flat.
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageError {
    SizeMismatch,
    NonFinite,
    InvalidSigma(f64),
    Box(BoxError),
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::SizeMismatch => f.write_str("image and mask sizes differ"),
            ImageError::NonFinite => f.write_str("image contains a non-finite value"),
            ImageError::InvalidSigma(s) => write!(f, "feather sigma {s} must be finite and >= 0"),
            ImageError::Box(e) => write!(f, "box: {e}"),
        }
    }
}

impl core::error::Error for ImageError {}

impl From<BoxError> for ImageError {
    fn from(e: BoxError) -> Self {
        ImageError::Box(e)
    }
}

/// Greyscale raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    grid: Grid<f64>,
}

impl GrayImage {
    /// Clamps every value into `[0, 1]`; rejects NaN and infinities.
    pub fn new(grid: Grid<f64>) -> Result<Self, ImageError> {
        if grid.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite);
        }
        Ok(Self {
            grid: grid.map(|v| v.clamp(0.0, 1.0)),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            grid: Grid::filled(rows, cols, 0.0),
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        Self::new(Grid::from_fn(rows, cols, f))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        *self.grid.get(row, col)
    }
}

/// Horizontal-gradient Sobel kernel, applied as a cross-correlation.
pub const SOBEL_H: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical-gradient Sobel kernel.
pub const SOBEL_V: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// 3×3 cross-correlation with edge replication at the border.
pub fn correlate3(img: &Grid<f64>, kernel: &[[f64; 3]; 3]) -> Grid<f64> {
    let (rows, cols) = img.shape();
    Grid::from_fn(rows, cols, |r, c| {
        let mut acc = 0.0;
        for (dr, krow) in kernel.iter().enumerate() {
            let rr = (r + dr).saturating_sub(1).min(rows - 1);
            for (dc, k) in krow.iter().enumerate() {
                let cc = (c + dc).saturating_sub(1).min(cols - 1);
                acc += k * img.get(rr, cc);
            }
        }
        acc
    })
}

/// Summed signed Sobel responses times the image times the eroded mask,
/// clamped to `[0, 1]`.
pub fn sobel_hf_map(
    img: &GrayImage,
    mask: &EditMask,
    erode_radius: usize,
) -> Result<GrayImage, ImageError> {
    if mask.shape() != img.shape() {
        return Err(ImageError::SizeMismatch);
    }
    let (rows, cols) = img.shape();
    if rows == 0 || cols == 0 {
        return Ok(img.clone());
    }
    let gh = correlate3(&img.grid, &SOBEL_H);
    let gv = correlate3(&img.grid, &SOBEL_V);
    let eroded = erode(mask, erode_radius);
    let out = Grid::from_fn(rows, cols, |r, c| {
        if !eroded.is_set(r, c) {
            return 0.0;
        }
        ((gh.get(r, c) + gv.get(r, c)) * img.get(r, c)).clamp(0.0, 1.0)
    });
    Ok(GrayImage { grid: out })
}

/// Keeps a pixel iff every pixel within Chebyshev distance `radius` is
/// set. Pixels outside the raster count as unset.
pub fn erode(mask: &EditMask, radius: usize) -> EditMask {
    if radius == 0 {
        return mask.clone();
    }
    let (rows, cols) = mask.shape();
    // A square window is separable: erode rows, then columns.
    let horiz = Grid::from_fn(rows, cols, |r, c| {
        c >= radius && c + radius < cols && (c - radius..=c + radius).all(|cc| mask.is_set(r, cc))
    });
    EditMask::from_fn(rows, cols, |r, c| {
        r >= radius && r + radius < rows && (r - radius..=r + radius).all(|rr| *horiz.get(rr, c))
    })
}

/// Normalized 1D Gaussian truncated at `ceil(3σ)`; `[1.0]` when σ is 0.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>, ImageError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(ImageError::InvalidSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let radius = libm::ceil(3.0 * sigma) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Mask indicator blurred by the truncated Gaussian with zero padding,
/// clamped to `[0, 1]`.
pub fn feather_weights(mask: &EditMask, sigma: f64) -> Result<Grid<f64>, ImageError> {
    let k = gaussian_kernel(sigma)?;
    let radius = (k.len() / 2) as i64;
    let (rows, cols) = mask.shape();
    let src = mask.to_f64();
    let pass = |g: &Grid<f64>, along_rows: bool| {
        Grid::from_fn(rows, cols, |r, c| {
            let mut acc = 0.0;
            for (j, w) in k.iter().enumerate() {
                let off = j as i64 - radius;
                let (rr, cc) = if along_rows {
                    (r as i64, c as i64 + off)
                } else {
                    (r as i64 + off, c as i64)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    acc += w * g.get(rr as usize, cc as usize);
                }
            }
            acc
        })
    };
    let blurred = pass(&pass(&src, true), false);
    Ok(blurred.map(|v| v.clamp(0.0, 1.0)))
}

/// `w·src + (1 − w)·dst` with `w` the feathered mask.
pub fn feather_composite(
    dst: &GrayImage,
    src: &GrayImage,
    mask: &EditMask,
    sigma: f64,
) -> Result<GrayImage, ImageError> {
    if dst.shape() != src.shape() || mask.shape() != dst.shape() {
        return Err(ImageError::SizeMismatch);
    }
    let w = feather_weights(mask, sigma)?;
    let (rows, cols) = dst.shape();
    let out = Grid::from_fn(rows, cols, |r, c| {
        let a = *w.get(r, c);
        let (s, d) = (src.get(r, c), dst.get(r, c));
        // Written as d + w(s − d) so that s = d is returned exactly.
        if a == 1.0 {
            s
        } else {
            (d + a * (s - d)).clamp(0.0, 1.0)
        }
    });
    Ok(GrayImage { grid: out })
}

/// Coordinates of `p` in the box frame anchored at corner 0; inside is
/// the closed unit cube.
pub fn box_coordinates(p: Vec3, b: &Box3D) -> Result<Vec3, BoxError> {
    let [e1, e2, e3] = b.edge_basis();
    let n23 = cross(e2, e3);
    let det = dot(e1, n23);
    let scale = norm(e1) * norm(e2) * norm(e3);
    if scale == 0.0 || libm::fabs(det) <= DEGENERATE_TOL * scale {
        return Err(BoxError::DegenerateBox);
    }
    let v = sub(p, b.corners()[0]);
    // Cramer's rule on [e1 e2 e3]·u = v.
    Ok([
        dot(v, n23) / det,
        dot(e1, cross(v, e3)) / det,
        dot(e1, cross(e2, v)) / det,
    ])
}

fn norm(v: Vec3) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Inclusive membership in the oriented box.
pub fn point_in_box(p: Vec3, b: &Box3D) -> Result<bool, BoxError> {
    let u = box_coordinates(p, b)?;
    Ok(u.iter().all(|&x| (-BOX_EPS..=1.0 + BOX_EPS).contains(&x)))
}

/// Occupied pixels whose reconstructed point lies in `b`.
pub fn points_in_box_mask(view: &RangeView, b: &Box3D) -> Result<EditMask, BoxError> {
    let (rows, cols) = (view.height(), view.width());
    let mut mask = EditMask::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            if let Some(p) = view.point_at(r, c) {
                if point_in_box(p.xyz(), b)? {
                    mask.set(r, c, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Composited view and the pixels taken from the edited view.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeComposite {
    pub view: RangeView,
    pub replaced: EditMask,
}

/// Takes the edited pixel where `m_points` is set or where the edited
/// return falls inside `b`; keeps the original elsewhere.
pub fn range_composite(
    original: &RangeView,
    edited: &RangeView,
    b: &Box3D,
    m_points: &EditMask,
) -> Result<RangeComposite, ImageError> {
    let shape = (original.height(), original.width());
    if (edited.height(), edited.width()) != shape || m_points.shape() != shape {
        return Err(ImageError::SizeMismatch);
    }
    let edited_in_box = points_in_box_mask(edited, b)?;
    let replaced = m_points.union(&edited_in_box);
    let mut view = original.clone();
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            if replaced.is_set(r, c) {
                view.copy_pixel_from(edited, r, c);
            }
        }
    }
    Ok(RangeComposite { view, replaced })
}
