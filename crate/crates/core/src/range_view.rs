//! Lossless conversion between lidar sweeps and cylindrical range views.
//!
//! A point `(x, y, z)` is binned by its pitch onto one of 32 vertical beams
//! and by its yaw onto one of `W` columns. Alongside the rasterized depth
//! and intensity, every occupied pixel keeps the exact pitch and yaw of the
//! point that landed there, so [`reconstruct`] recovers the original
//! coordinates up to floating-point rounding.
//!
//! Coordinate conventions:
//!
//! * `depth = sqrt(x² + y² + z²)`
//! * `yaw = -atan2(y, x)`, in `[-π, π]`
//! * `pitch = asin(z / depth)`
//! * column `floor(yaw / π · W/2 + W/2)`, clamped to `[0, W-1]`
//!
//! When several points fall into the same pixel the nearest one is kept;
//! equal depths keep the earlier point in input order.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::grid::Grid;

/// Closest return accepted by the projection, in meters (inclusive).
pub const MIN_DEPTH: f64 = 1.4;
/// Farthest return accepted by the projection, in meters (inclusive).
pub const MAX_DEPTH: f64 = 54.0;
/// Number of vertical beams.
pub const BEAM_COUNT: usize = 32;
/// Horizontal resolution of the default range view.
pub const DEFAULT_WIDTH: usize = 1096;
/// Angular spacing between adjacent beams, in radians.
pub const BEAM_SPACING: f64 = 0.0232;
/// Index of the lowest beam relative to the horizon, in units of [`BEAM_SPACING`].
pub const LOWEST_BEAM_STEP: i32 = -23;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CodecError {
    /// The point sits at the sensor origin, so its pitch is undefined.
    ZeroDepth,
    NonFinite,
    IntensityOutOfRange(f64),
    /// A range view was assembled from channels of different shapes.
    ShapeMismatch,
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::ZeroDepth => f.write_str("point at the sensor origin has no pitch"),
            CodecError::NonFinite => f.write_str("non-finite coordinate"),
            CodecError::IntensityOutOfRange(i) => {
                write!(f, "intensity {i} outside [0, 255]")
            }
            CodecError::ShapeMismatch => f.write_str("range view channels differ in shape"),
        }
    }
}

impl core::error::Error for CodecError {}

/// One lidar return.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl LidarPoint {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every coordinate is finite and every intensity lies in `[0, 255]`.
    pub fn validate(&self) -> Result<(), CodecError> {
        for p in &self.points {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.intensity.is_finite())
            {
                return Err(CodecError::NonFinite);
            }
            if !(0.0..=255.0).contains(&p.intensity) {
                return Err(CodecError::IntensityOutOfRange(p.intensity));
            }
        }
        Ok(())
    }
}

/// Pitch angles of the 32 vertical beams, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamTable {
    pitches: [f64; BEAM_COUNT],
}

impl Default for BeamTable {
    fn default() -> Self {
        let mut pitches = [0.0; BEAM_COUNT];
        for (k, p) in pitches.iter_mut().enumerate() {
            *p = BEAM_SPACING * f64::from(LOWEST_BEAM_STEP + k as i32);
        }
        Self { pitches }
    }
}

impl BeamTable {
    pub fn pitches(&self) -> &[f64; BEAM_COUNT] {
        &self.pitches
    }

    pub fn pitch(&self, row: usize) -> f64 {
        self.pitches[row]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spherical {
    pub depth: f64,
    pub yaw: f64,
    pub pitch: f64,
}

pub fn spherical_coords(x: f64, y: f64, z: f64) -> Result<Spherical, CodecError> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    let depth = libm::sqrt(x * x + y * y + z * z);
    if depth == 0.0 {
        return Err(CodecError::ZeroDepth);
    }
    // z/depth can exceed 1 by an ulp for points on the vertical axis.
    let sin_pitch = (z / depth).clamp(-1.0, 1.0);
    Ok(Spherical {
        depth,
        yaw: -libm::atan2(y, x),
        pitch: libm::asin(sin_pitch),
    })
}

/// Nearest beam for `pitch`; equidistant pitches resolve to the lower row.
pub fn assign_beam(pitch: f64, table: &BeamTable) -> usize {
    let p = &table.pitches;
    // First beam strictly above the pitch.
    let upper = p.partition_point(|&b| b <= pitch);
    if upper == 0 {
        return 0;
    }
    if upper == BEAM_COUNT {
        return BEAM_COUNT - 1;
    }
    let lower = upper - 1;
    if pitch - p[lower] <= p[upper] - pitch {
        lower
    } else {
        upper
    }
}

/// Column for `yaw` before clamping; `yaw = π` lands on `width`.
pub fn yaw_to_column_unclamped(yaw: f64, width: usize) -> i64 {
    let half = width as f64 / 2.0;
    libm::floor(yaw / PI * half + half) as i64
}

pub fn yaw_to_column(yaw: f64, width: usize) -> usize {
    yaw_to_column_unclamped(yaw, width).clamp(0, width as i64 - 1) as usize
}

/// Range view of a sweep: rasterized depth and intensity plus the exact
/// angles of the point held by each occupied pixel.
///
/// Unoccupied pixels hold `0.0` in every channel; `occupancy` is the
/// only reliable indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeView {
    pub depth: Grid<f64>,
    pub intensity: Grid<f64>,
    pub occupancy: Grid<bool>,
    pub pitch_raw: Grid<f64>,
    pub yaw_raw: Grid<f64>,
}

impl RangeView {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            depth: Grid::filled(height, width, 0.0),
            intensity: Grid::filled(height, width, 0.0),
            occupancy: Grid::filled(height, width, false),
            pitch_raw: Grid::filled(height, width, 0.0),
            yaw_raw: Grid::filled(height, width, 0.0),
        }
    }

    pub fn from_channels(
        depth: Grid<f64>,
        intensity: Grid<f64>,
        occupancy: Grid<bool>,
        pitch_raw: Grid<f64>,
        yaw_raw: Grid<f64>,
    ) -> Result<Self, CodecError> {
        let shape = depth.shape();
        if intensity.shape() != shape
            || occupancy.shape() != shape
            || pitch_raw.shape() != shape
            || yaw_raw.shape() != shape
        {
            return Err(CodecError::ShapeMismatch);
        }
        Ok(Self {
            depth,
            intensity,
            occupancy,
            pitch_raw,
            yaw_raw,
        })
    }

    pub fn height(&self) -> usize {
        self.depth.rows()
    }

    pub fn width(&self) -> usize {
        self.depth.cols()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.as_slice().iter().filter(|&&o| o).count()
    }

    /// The 3D return stored at `(row, col)`, if any.
    pub fn point_at(&self, row: usize, col: usize) -> Option<LidarPoint> {
        if !*self.occupancy.get(row, col) {
            return None;
        }
        let d = *self.depth.get(row, col);
        let yaw = *self.yaw_raw.get(row, col);
        let pitch = *self.pitch_raw.get(row, col);
        let (sin_p, cos_p) = libm::sincos(pitch);
        let (sin_y, cos_y) = libm::sincos(yaw);
        Some(LidarPoint {
            x: d * cos_y * cos_p,
            y: -d * sin_y * cos_p,
            z: d * sin_p,
            intensity: *self.intensity.get(row, col),
        })
    }

    /// Copies every channel of pixel `(row, col)` from `other`.
    pub fn copy_pixel_from(&mut self, other: &RangeView, row: usize, col: usize) {
        self.depth.set(row, col, *other.depth.get(row, col));
        self.intensity.set(row, col, *other.intensity.get(row, col));
        self.occupancy.set(row, col, *other.occupancy.get(row, col));
        self.pitch_raw.set(row, col, *other.pitch_raw.get(row, col));
        self.yaw_raw.set(row, col, *other.yaw_raw.get(row, col));
    }
}

/// Bookkeeping from a projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProjectionStats {
    pub input: usize,
    /// Points outside `[MIN_DEPTH, MAX_DEPTH]`.
    pub out_of_range: usize,
    /// In-range points that lost their pixel to a nearer (or earlier) point.
    pub collisions: usize,
    /// Occupied pixels in the output.
    pub retained: usize,
}

/// Pixel a point lands in, or `None` when it is filtered by depth.
pub fn pixel_of(point: &LidarPoint, table: &BeamTable, width: usize) -> Option<(usize, usize, Spherical)> {
    let s = spherical_coords(point.x, point.y, point.z).ok()?;
    if !(MIN_DEPTH..=MAX_DEPTH).contains(&s.depth) {
        return None;
    }
    Some((assign_beam(s.pitch, table), yaw_to_column(s.yaw, width), s))
}

/// Projects onto a `32 × width` range view and reports what was dropped.
pub fn project_with_stats(
    cloud: &PointCloud,
    table: &BeamTable,
    width: usize,
) -> (RangeView, ProjectionStats) {
    let (view, stats, _) = project_tracked(cloud, table, width);
    (view, stats)
}

/// As [`project_with_stats`], also returning for each pixel the index of
/// the input point it holds.
pub fn project_tracked(
    cloud: &PointCloud,
    table: &BeamTable,
    width: usize,
) -> (RangeView, ProjectionStats, Grid<Option<usize>>) {
    let mut view = RangeView::empty(BEAM_COUNT, width);
    let mut source = Grid::filled(BEAM_COUNT, width, None);
    let mut stats = ProjectionStats {
        input: cloud.len(),
        ..Default::default()
    };
    let mut landed = 0usize;
    for (k, p) in cloud.points.iter().enumerate() {
        let Some((row, col, s)) = pixel_of(p, table, width) else {
            stats.out_of_range += 1;
            continue;
        };
        landed += 1;
        let i = view.depth.index(row, col);
        // Strict comparison keeps the earlier point on depth ties.
        if view.occupancy.as_slice()[i] && view.depth.as_slice()[i] <= s.depth {
            continue;
        }
        view.depth.as_mut_slice()[i] = s.depth;
        view.intensity.as_mut_slice()[i] = p.intensity;
        view.occupancy.as_mut_slice()[i] = true;
        view.pitch_raw.as_mut_slice()[i] = s.pitch;
        view.yaw_raw.as_mut_slice()[i] = s.yaw;
        source.as_mut_slice()[i] = Some(k);
    }
    stats.retained = view.occupied_count();
    stats.collisions = landed - stats.retained;
    (view, stats, source)
}

pub fn project(cloud: &PointCloud, table: &BeamTable, width: usize) -> RangeView {
    project_with_stats(cloud, table, width).0
}

/// Rebuilds the sweep from the stored angles, in row-major pixel order.
pub fn reconstruct(view: &RangeView) -> PointCloud {
    let mut points = Vec::with_capacity(view.occupied_count());
    for row in 0..view.height() {
        for col in 0..view.width() {
            if let Some(p) = view.point_at(row, col) {
                points.push(p);
            }
        }
    }
    PointCloud::new(points)
}
