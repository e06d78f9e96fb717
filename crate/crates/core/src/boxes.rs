//! Oriented 3D boxes and their projections into camera and range views:
//! edit masks, zoom-in viewports and Fourier conditioning embeddings.
//!
//! Corner order is the bottom face followed by the top face, each face
//! wound the same way, with corner `i + 4` directly above corner `i`:
//!
//! ```text
//!      7 ------ 6
//!     /|       /|
//!    4 ------ 5 |
//!    | 3 -----|-2
//!    |/       |/
//!    0 ------ 1
//! ```
//!
//! Edit masks treat pixel `(r, c)` as inside a projected region when its
//! center `(c + 0.5, r + 0.5)` lies in the convex hull of the projected
//! corners, boundary included. Projected camera points are `(u, v)` =
//! (column, row) image coordinates.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::grid::Grid;
use crate::norm::nn_upscale;
use crate::range_view::{assign_beam, spherical_coords, yaw_to_column_unclamped, BeamTable, BEAM_COUNT};

pub type Vec3 = [f64; 3];

pub const DEFAULT_MIN_COVERAGE: f64 = 0.2;
pub const DEFAULT_FOURIER_FREQS: usize = 8;

// Relative tolerance for the face-parallelism check.
const PARALLEL_TOL: f64 = 1e-6;
// Projective depth used for corners behind the camera.
const BEHIND_W: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxError {
    NonFinite,
    /// Opposite faces are not parallel; the corners do not form a box.
    NotParallelepiped,
    DegenerateBox,
    AllBehindCamera,
    ZeroDepth,
    EmptyBox,
    InvalidCoverage(f64),
    /// Viewport side length must be a positive multiple of the beam count.
    InvalidSide(usize),
}

impl fmt::Display for BoxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoxError::NonFinite => f.write_str("box corner is not finite"),
            BoxError::NotParallelepiped => f.write_str("opposite box faces are not parallel"),
            BoxError::DegenerateBox => f.write_str("box has zero volume"),
            BoxError::AllBehindCamera => f.write_str("every box corner is behind the camera"),
            BoxError::ZeroDepth => f.write_str("box corner at the sensor origin"),
            BoxError::EmptyBox => f.write_str("projected box has no extent"),
            BoxError::InvalidCoverage(c) => write!(f, "coverage {c} outside (0, 1]"),
            BoxError::InvalidSide(d) => write!(f, "invalid viewport side {d}"),
        }
    }
}

impl core::error::Error for BoxError {}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Eight corners of an oriented box; see the module docs for ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    corners: [Vec3; 8],
}

// Opposite faces as corner quads in winding order.
const FACE_PAIRS: [([usize; 4], [usize; 4]); 3] = [
    ([0, 1, 2, 3], [4, 5, 6, 7]), // bottom / top
    ([0, 1, 5, 4], [3, 2, 6, 7]), // front / back
    ([0, 3, 7, 4], [1, 2, 6, 5]), // left / right
];

impl Box3D {
    pub fn new(corners: [Vec3; 8]) -> Result<Self, BoxError> {
        if corners.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        // Cross product of the diagonals involves all four corners.
        let normal = |[a, b, c, d]: [usize; 4]| {
            cross(sub(corners[c], corners[a]), sub(corners[d], corners[b]))
        };
        for (f1, f2) in FACE_PAIRS {
            let (n1, n2) = (normal(f1), normal(f2));
            let scale = norm(n1) * norm(n2);
            if scale == 0.0 {
                continue;
            }
            if norm(cross(n1, n2)) > PARALLEL_TOL * scale {
                return Err(BoxError::NotParallelepiped);
            }
        }
        Ok(Self { corners })
    }

    /// Box centered at `center` with extents `(length, width, height)`
    /// along its local `(x, y, z)` axes, rotated by `yaw` about +z.
    pub fn from_pose(center: Vec3, size: Vec3, yaw: f64) -> Result<Self, BoxError> {
        let (s, c) = libm::sincos(yaw);
        let [l, w, h] = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
        let footprint = [[l, w], [-l, w], [-l, -w], [l, -w]];
        let mut corners = [[0.0; 3]; 8];
        for (i, [dx, dy]) in footprint.into_iter().enumerate() {
            let x = center[0] + c * dx - s * dy;
            let y = center[1] + s * dx + c * dy;
            corners[i] = [x, y, center[2] - h];
            corners[i + 4] = [x, y, center[2] + h];
        }
        Self::new(corners)
    }

    pub fn corners(&self) -> &[Vec3; 8] {
        &self.corners
    }

    pub fn center(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for p in &self.corners {
            for k in 0..3 {
                c[k] += p[k] / 8.0;
            }
        }
        c
    }

    /// Edge vectors leaving corner 0 along the box's three axes.
    pub fn edge_basis(&self) -> [Vec3; 3] {
        let c = &self.corners;
        [sub(c[1], c[0]), sub(c[3], c[0]), sub(c[4], c[0])]
    }

    /// Applies a rigid motion: rotation by `yaw` about +z around `pivot`, then `shift`.
    pub fn transformed(&self, pivot: Vec3, yaw: f64, shift: Vec3) -> Result<Self, BoxError> {
        let mut corners = self.corners;
        for p in corners.iter_mut() {
            *p = rigid_transform(*p, pivot, yaw, shift);
        }
        Self::new(corners)
    }
}

/// Rotation by `yaw` about the vertical axis through `pivot`, then translation.
pub fn rigid_transform(p: Vec3, pivot: Vec3, yaw: f64, shift: Vec3) -> Vec3 {
    let (s, c) = libm::sincos(yaw);
    let d = sub(p, pivot);
    [
        pivot[0] + c * d[0] - s * d[1] + shift[0],
        pivot[1] + s * d[0] + c * d[1] + shift[1],
        pivot[2] + d[2] + shift[2],
    ]
}

/// Projective 3×4 camera matrix, row-major, no lens distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub matrix: [[f64; 4]; 3],
}

impl CameraModel {
    pub fn new(matrix: [[f64; 4]; 3]) -> Self {
        Self { matrix }
    }

    /// Pinhole camera looking down +z with the given focal length and principal point.
    pub fn pinhole(focal: f64, cx: f64, cy: f64) -> Self {
        Self::new([
            [focal, 0.0, cx, 0.0],
            [0.0, focal, cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ])
    }

    /// Homogeneous image coordinates `(x, y, w)` of a 3D point.
    pub fn homogeneous(&self, p: Vec3) -> Vec3 {
        let m = &self.matrix;
        let row = |r: &[f64; 4]| r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + r[3];
        [row(&m[0]), row(&m[1]), row(&m[2])]
    }
}

/// Camera-space projection of a box's corners.
///
/// Corners with non-positive projective depth are flagged in `behind` and
/// divided by a tiny positive depth instead, which pushes them far outside
/// the image while keeping them finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBoxCam {
    pub points: [[f64; 2]; 8],
    pub behind: [bool; 8],
}

impl ProjectedBoxCam {
    /// Camera points extended with per-corner range depths, the layout fed
    /// to the Fourier box encoder.
    pub fn with_depth(&self, range: &ProjectedBoxRange) -> [Vec3; 8] {
        let mut out = [[0.0; 3]; 8];
        for i in 0..8 {
            out[i] = [self.points[i][0], self.points[i][1], range.corners[i].depth];
        }
        out
    }
}

pub fn project_box_camera(b: &Box3D, cam: &CameraModel) -> Result<ProjectedBoxCam, BoxError> {
    let mut points = [[0.0; 2]; 8];
    let mut behind = [false; 8];
    for (i, corner) in b.corners().iter().enumerate() {
        let [x, y, w] = cam.homogeneous(*corner);
        let w = if w > 0.0 {
            w
        } else {
            behind[i] = true;
            BEHIND_W
        };
        points[i] = [x / w, y / w];
    }
    if behind.iter().all(|&b| b) {
        return Err(BoxError::AllBehindCamera);
    }
    Ok(ProjectedBoxCam { points, behind })
}

/// A box corner in range-view coordinates. Rows and columns are not
/// clamped to the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCorner {
    pub row: usize,
    pub col: i64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBoxRange {
    pub corners: [RangeCorner; 8],
}

impl ProjectedBoxRange {
    /// Centres of the corner pixels as `(u, v)` = `(col + ½, row + ½)`,
    /// so that [`rasterize_mask_rect`] includes every corner pixel.
    pub fn points_2d(&self) -> [[f64; 2]; 8] {
        self.corners.map(|c| [c.col as f64 + 0.5, c.row as f64 + 0.5])
    }

    pub fn depth_range(&self) -> (f64, f64) {
        self.corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.depth), hi.max(c.depth))
        })
    }

    pub fn col_range(&self) -> (i64, i64) {
        self.corners
            .iter()
            .fold((i64::MAX, i64::MIN), |(lo, hi), c| (lo.min(c.col), hi.max(c.col)))
    }
}

pub fn project_box_range(
    b: &Box3D,
    table: &BeamTable,
    width: usize,
) -> Result<ProjectedBoxRange, BoxError> {
    let mut corners = [RangeCorner { row: 0, col: 0, depth: 0.0 }; 8];
    for (i, p) in b.corners().iter().enumerate() {
        let s = spherical_coords(p[0], p[1], p[2]).map_err(|_| BoxError::ZeroDepth)?;
        corners[i] = RangeCorner {
            row: assign_beam(s.pitch, table),
            col: yaw_to_column_unclamped(s.yaw, width),
            depth: s.depth,
        };
    }
    Ok(ProjectedBoxRange { corners })
}

/// Binary `rows × cols` mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditMask {
    grid: Grid<u8>,
}

impl EditMask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { grid: Grid::filled(rows, cols, 0) }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self { grid: Grid::filled(rows, cols, 1) }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self { grid: Grid::from_fn(rows, cols, |r, c| u8::from(f(r, c))) }
    }

    /// Any nonzero entry counts as set.
    pub fn from_grid(grid: &Grid<u8>) -> Self {
        Self { grid: grid.map(|&v| u8::from(v != 0)) }
    }

    pub fn from_bools(grid: &Grid<bool>) -> Self {
        Self { grid: grid.map(|&v| u8::from(v)) }
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    #[inline]
    pub fn is_set(&self, row: usize, col: usize) -> bool {
        *self.grid.get(row, col) != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.grid.set(row, col, u8::from(on));
    }

    pub fn count(&self) -> usize {
        self.grid.as_slice().iter().filter(|&&v| v != 0).count()
    }

    /// `J - m`.
    pub fn complement(&self) -> Self {
        Self { grid: self.grid.map(|&v| 1 - v) }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            grid: Grid::from_fn(self.grid.rows(), self.grid.cols(), |r, c| {
                *self.grid.get(r, c) | *other.grid.get(r, c)
            }),
        }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.grid
            .as_slice()
            .iter()
            .zip(other.grid.as_slice())
            .all(|(&a, &b)| a <= b)
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.grid.map(|&v| f64::from(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub mask: EditMask,
    /// Set when the points are collinear (or coincident); the mask is then all zeros.
    pub degenerate: bool,
}

fn orient(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: &mut dyn Iterator<Item = &[f64; 2]> = if pass == 0 {
            &mut pts.iter()
        } else {
            &mut pts.iter().rev()
        };
        for &p in iter {
            while hull.len() >= start + 2
                && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Inclusive point-in-convex-polygon test for a counter-clockwise hull.
fn inside_hull(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    (0..hull.len()).all(|i| orient(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

/// Fills the convex hull of `points` into a `rows × cols` mask.
pub fn rasterize_mask_rect(points: &[[f64; 2]], rows: usize, cols: usize) -> Rasterized {
    let hull = convex_hull(points);
    let degenerate = hull.len() < 3;
    let mut mask = EditMask::zeros(rows, cols);
    if degenerate {
        return Rasterized { mask, degenerate };
    }
    // Only rows/cols whose centers fall in the hull's bounding box can be set.
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &hull {
        u0 = u0.min(p[0]);
        u1 = u1.max(p[0]);
        v0 = v0.min(p[1]);
        v1 = v1.max(p[1]);
    }
    let span = |lo: f64, hi: f64, n: usize| {
        let first = libm::ceil(lo - 0.5).max(0.0);
        let last = libm::floor(hi - 0.5).min(n as f64 - 1.0);
        if last < first {
            0..0
        } else {
            first as usize..last as usize + 1
        }
    };
    for r in span(v0, v1, rows) {
        for c in span(u0, u1, cols) {
            if inside_hull(&hull, [c as f64 + 0.5, r as f64 + 0.5]) {
                mask.set(r, c, true);
            }
        }
    }
    Rasterized { mask, degenerate }
}

/// Square `side × side` edit mask for the projected corners.
pub fn rasterize_mask(points: &[[f64; 2]], side: usize) -> Rasterized {
    rasterize_mask_rect(points, side, side)
}

/// Square crop of the camera image, in source pixel units, and its scale
/// onto the `side × side` model input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraViewport {
    /// Top-left corner of the crop `(u, v)`; may be negative (padded).
    pub origin: [i64; 2],
    /// Crop side in source pixels.
    pub crop: usize,
    /// Output side `D`.
    pub side: usize,
    pub scale: f64,
}

impl CameraViewport {
    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.origin[0] as f64) * self.scale,
            (p[1] - self.origin[1] as f64) * self.scale,
        ]
    }

    pub fn inverse(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] / self.scale + self.origin[0] as f64,
            p[1] / self.scale + self.origin[1] as f64,
        ]
    }

    /// Resamples the crop to `side × side` (nearest neighbor). The returned
    /// mask marks output pixels that came from inside the image; the rest
    /// hold `fill`.
    pub fn extract(&self, image: &Grid<f64>, fill: f64) -> (Grid<f64>, EditMask) {
        let mut valid = EditMask::zeros(self.side, self.side);
        let mut out = Grid::filled(self.side, self.side, fill);
        for r in 0..self.side {
            for c in 0..self.side {
                let [u, v] = self.inverse([c as f64 + 0.5, r as f64 + 0.5]);
                let (u, v) = (libm::floor(u), libm::floor(v));
                if u >= 0.0 && v >= 0.0 && (u as usize) < image.cols() && (v as usize) < image.rows() {
                    out.set(r, c, *image.get(v as usize, u as usize));
                    valid.set(r, c, true);
                }
            }
        }
        (out, valid)
    }
}

fn check_coverage(min_coverage: f64) -> Result<(), BoxError> {
    if min_coverage > 0.0 && min_coverage <= 1.0 {
        Ok(())
    } else {
        Err(BoxError::InvalidCoverage(min_coverage))
    }
}

/// Square crop centered on the box's bounding rectangle.
///
/// The crop side is the largest one at which the rectangle still covers
/// `min_coverage` of the crop area, but never smaller than the rectangle's
/// longer side and never larger than the image's longer side (unless the
/// rectangle itself is). Crops running past the image border are padded.
pub fn zoom_viewport_camera(
    b: &ProjectedBoxCam,
    image_size: (usize, usize),
    side: usize,
    min_coverage: f64,
) -> Result<(CameraViewport, [[f64; 2]; 8]), BoxError> {
    check_coverage(min_coverage)?;
    if side == 0 {
        return Err(BoxError::InvalidSide(side));
    }
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &b.points {
        u0 = u0.min(p[0]);
        u1 = u1.max(p[0]);
        v0 = v0.min(p[1]);
        v1 = v1.max(p[1]);
    }
    let (w, h) = (u1 - u0, v1 - v0);
    if !(w > 0.0 && h > 0.0) {
        return Err(BoxError::EmptyBox);
    }
    let tight = libm::ceil(w.max(h));
    let image_side = image_size.0.max(image_size.1) as f64;
    let by_coverage = libm::floor(libm::sqrt(w * h / min_coverage));
    let crop = by_coverage.min(image_side).max(tight) as usize;
    let half = crop as f64 / 2.0;
    let origin = [
        libm::round((u0 + u1) / 2.0 - half) as i64,
        libm::round((v0 + v1) / 2.0 - half) as i64,
    ];
    let vp = CameraViewport {
        origin,
        crop,
        side,
        scale: side as f64 / crop as f64,
    };
    Ok((vp, b.points.map(|p| vp.forward(p))))
}

/// Width-wise crop of the range view (full height) and its resize onto a
/// `side × side` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeViewport {
    pub col_start: usize,
    pub crop_width: usize,
    pub side: usize,
}

impl RangeViewport {
    pub fn row_factor(&self) -> usize {
        self.side / BEAM_COUNT
    }

    pub fn col_scale(&self) -> f64 {
        self.side as f64 / self.crop_width as f64
    }

    /// `(row, col)` in the range view to model-input coordinates.
    pub fn forward(&self, row: f64, col: f64) -> (f64, f64) {
        (
            row * self.row_factor() as f64,
            (col - self.col_start as f64) * self.col_scale(),
        )
    }

    pub fn inverse(&self, row: f64, col: f64) -> (f64, f64) {
        (
            row / self.row_factor() as f64,
            col / self.col_scale() + self.col_start as f64,
        )
    }

    fn source_col(&self, c: usize) -> usize {
        let src = libm::floor((c as f64 + 0.5) / self.col_scale()) as usize;
        self.col_start + src.min(self.crop_width - 1)
    }

    /// Crops a `32 × W` channel and resizes it to `side × side`: rows by
    /// nearest-neighbor replication, columns by nearest-neighbor resampling.
    pub fn extract<T: Clone>(&self, channel: &Grid<T>) -> Grid<T> {
        let cropped = Grid::from_fn(channel.rows(), self.side, |r, c| {
            channel.get(r, self.source_col(c)).clone()
        });
        let up = nn_upscale(&cropped, self.row_factor()).expect("row factor is nonzero");
        Grid::from_fn(self.side, self.side, |r, c| up.get(r, c).clone())
    }
}

/// Crops columns around the box at the same coverage rule as the camera
/// (box width over crop width), keeps all 32 rows, and shifts the window
/// to stay inside `[0, view_width)`.
pub fn zoom_viewport_range(
    b: &ProjectedBoxRange,
    view_width: usize,
    side: usize,
    min_coverage: f64,
) -> Result<(RangeViewport, [(f64, f64, f64); 8]), BoxError> {
    check_coverage(min_coverage)?;
    if side == 0 || !side.is_multiple_of(BEAM_COUNT) {
        return Err(BoxError::InvalidSide(side));
    }
    let (lo, hi) = b.col_range();
    if view_width == 0 || hi < 0 || lo >= view_width as i64 {
        return Err(BoxError::EmptyBox);
    }
    // Extent in whole columns, inclusive of both ends.
    let box_cols = (hi - lo + 1) as f64;
    let crop_width = (libm::floor(box_cols / min_coverage) as usize)
        .max(box_cols as usize)
        .min(view_width);
    let center = (lo + hi) as f64 / 2.0 + 0.5;
    let start = libm::round(center - crop_width as f64 / 2.0)
        .clamp(0.0, (view_width - crop_width) as f64) as usize;
    let vp = RangeViewport {
        col_start: start,
        crop_width,
        side,
    };
    let corners = b.corners.map(|c| {
        let (r, col) = vp.forward(c.row as f64, c.col as f64);
        (r, col, c.depth)
    });
    Ok((vp, corners))
}

/// `ω_l = 2^l · π` for `l` in `0..count`.
pub fn default_frequencies(count: usize) -> Vec<f64> {
    (0..count).map(|l| libm::ldexp(PI, l as i32)).collect()
}

/// Fourier features of every coordinate, ordered coordinate-major then
/// frequency, `sin` before `cos`.
pub fn fourier_embed(coords: &[f64], freqs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * coords.len() * freqs.len());
    for &x in coords {
        for &w in freqs {
            let (s, c) = libm::sincos(w * x);
            out.push(s);
            out.push(c);
        }
    }
    out
}

/// Flattened Fourier embedding of the 8 projected corners.
pub fn embed_box(corners: &[Vec3; 8], freqs: &[f64]) -> Vec<f64> {
    let flat: Vec<f64> = corners.iter().flatten().copied().collect();
    fourier_embed(&flat, freqs)
}
