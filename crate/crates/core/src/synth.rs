//! Seeded synthetic lidar sweeps: collision-free clouds for codec checks
//! and a ground-plus-object scene for compositing.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use rand::seq::index;
use rand::Rng;

use crate::boxes::{rigid_transform, Box3D, BoxError, Vec3};
use crate::image_ops::point_in_box;
use crate::range_view::{BeamTable, LidarPoint, PointCloud, BEAM_COUNT, BEAM_SPACING, MAX_DEPTH, MIN_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthError {
    /// More points requested than the raster has pixels.
    TooManyPoints { requested: usize, capacity: usize },
    Box(BoxError),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthError::TooManyPoints { requested, capacity } => {
                write!(f, "{requested} points do not fit in {capacity} pixels")
            }
            SynthError::Box(e) => write!(f, "object box: {e}"),
        }
    }
}

impl core::error::Error for SynthError {}

impl From<BoxError> for SynthError {
    fn from(e: BoxError) -> Self {
        SynthError::Box(e)
    }
}

/// Smallest raster width, not below `min_width`, that holds `n` points
/// one per pixel.
pub fn width_for(n: usize, min_width: usize) -> usize {
    min_width.max(n.div_ceil(BEAM_COUNT))
}

fn from_spherical(depth: f64, yaw: f64, pitch: f64, intensity: f64) -> LidarPoint {
    let (sp, cp) = libm::sincos(pitch);
    let (sy, cy) = libm::sincos(yaw);
    LidarPoint::new(depth * cy * cp, -depth * sy * cp, depth * sp, intensity)
}

/// `n` returns in distinct pixels of a `32 × width` raster, each well
/// inside its pixel's pitch and yaw cell and inside the depth bounds, so
/// projection keeps every point.
pub fn collision_free_cloud<R: Rng + ?Sized>(
    n: usize,
    width: usize,
    table: &BeamTable,
    rng: &mut R,
) -> Result<PointCloud, SynthError> {
    let capacity = BEAM_COUNT * width;
    if n > capacity {
        return Err(SynthError::TooManyPoints { requested: n, capacity });
    }
    let cell = 2.0 * PI / width as f64;
    let points = index::sample(rng, capacity, n)
        .into_iter()
        .map(|pix| {
            let (row, col) = (pix / width, pix % width);
            let pitch = table.pitch(row) + rng.random_range(-0.35..0.35) * BEAM_SPACING;
            let yaw = (col as f64 + rng.random_range(0.1..0.9) - width as f64 / 2.0) * cell;
            let depth = rng.random_range(MIN_DEPTH + 0.1..MAX_DEPTH - 0.1);
            let intensity = rng.random_range(0..=255u8) as f64;
            from_spherical(depth, yaw, pitch, intensity)
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Depth of synthetic object returns below the box faces, in box coordinates.
pub const FACE_INSET: f64 = 1e-4;

/// Pose of a box-shaped object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectPose {
    pub center: Vec3,
    /// Extents along the object's local x, y, z.
    pub size: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    /// Height of the ground plane below the sensor.
    pub ground_z: f64,
    pub rings: usize,
    pub points_per_ring: usize,
    pub object: ObjectPose,
    pub object_points: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            ground_z: -1.8,
            rings: 24,
            points_per_ring: 720,
            object: ObjectPose {
                center: [12.0, 3.0, -1.8 + 0.8 + 0.05],
                size: [4.5, 1.9, 1.6],
                yaw: 0.4,
            },
            object_points: 400,
        }
    }
}

/// A sweep split into background returns and returns on one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub background: Vec<LidarPoint>,
    pub object: Vec<LidarPoint>,
    pub object_box: Box3D,
}

impl Scene {
    /// Background followed by object points.
    pub fn cloud(&self) -> PointCloud {
        let mut pts = self.background.clone();
        pts.extend_from_slice(&self.object);
        PointCloud::new(pts)
    }

    /// The same background with the object and its box moved rigidly
    /// (yaw about the box centre, then `shift`).
    pub fn with_object_moved(&self, yaw: f64, shift: Vec3) -> Result<Scene, SynthError> {
        let pivot = self.object_box.center();
        let object = self
            .object
            .iter()
            .map(|p| {
                let [x, y, z] = rigid_transform(p.xyz(), pivot, yaw, shift);
                LidarPoint::new(x, y, z, p.intensity)
            })
            .collect();
        Ok(Scene {
            background: self.background.clone(),
            object,
            object_box: self.object_box.transformed(pivot, yaw, shift)?,
        })
    }
}

/// Ground rings at geometrically spaced radii (skipping any return that
/// falls inside the object box) plus points scattered on the box faces.
pub fn synth_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<Scene, SynthError> {
    let pose = cfg.object;
    let object_box = Box3D::from_pose(pose.center, pose.size, pose.yaw)?;
    let (r0, r1) = (4.0f64, 50.0f64);
    let mut background = Vec::with_capacity(cfg.rings * cfg.points_per_ring);
    for i in 0..cfg.rings {
        let frac = if cfg.rings > 1 { i as f64 / (cfg.rings - 1) as f64 } else { 0.0 };
        let radius = r0 * libm::pow(r1 / r0, frac);
        for j in 0..cfg.points_per_ring {
            let az = 2.0 * PI * (j as f64 + rng.random_range(0.0..1.0)) / cfg.points_per_ring as f64;
            let (s, c) = libm::sincos(az);
            let p = [radius * c, radius * s, cfg.ground_z];
            if point_in_box(p, &object_box)? {
                continue;
            }
            background.push(LidarPoint::new(p[0], p[1], p[2], rng.random_range(10.0..60.0)));
        }
    }
    let origin = object_box.corners()[0];
    let edges = object_box.edge_basis();
    let object = (0..cfg.object_points)
        .map(|_| {
            // Face = (axis, side). Box coordinates stay FACE_INSET inside the
            // faces so the points remain inside after f32 storage.
            let axis = rng.random_range(0..3);
            let side = if rng.random::<bool>() { 1.0 - FACE_INSET } else { FACE_INSET };
            let coords: [f64; 3] = core::array::from_fn(|k| {
                if k == axis {
                    side
                } else {
                    rng.random_range(FACE_INSET..=1.0 - FACE_INSET)
                }
            });
            let p: [f64; 3] = core::array::from_fn(|k| {
                origin[k] + coords[0] * edges[0][k] + coords[1] * edges[1][k] + coords[2] * edges[2][k]
            });
            LidarPoint::new(p[0], p[1], p[2], rng.random_range(150.0..230.0))
        })
        .collect();
    Ok(Scene {
        background,
        object,
        object_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::range_view::{project_with_stats, reconstruct};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collision_free_cloud_survives_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = BeamTable::default();
        let cloud = collision_free_cloud(5000, 256, &table, &mut rng).unwrap();
        let (view, stats) = project_with_stats(&cloud, &table, 256);
        assert_eq!(stats.retained, 5000);
        assert_eq!(stats.collisions, 0);
        assert_eq!(reconstruct(&view).len(), 5000);
        assert!(collision_free_cloud(32 * 10 + 1, 10, &table, &mut rng).is_err());
        assert_eq!(width_for(100_000, 1096), 3125);
        assert_eq!(width_for(10, 1096), 1096);
    }

    #[test]
    fn scene_object_points_lie_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scene = synth_scene(&SceneConfig::default(), &mut rng).unwrap();
        assert_eq!(scene.object.len(), 400);
        assert!(scene.object.iter().all(|p| point_in_box(p.xyz(), &scene.object_box).unwrap()));
        let stored = |p: &LidarPoint| p.xyz().map(|v| v as f32 as f64);
        assert!(scene.object.iter().all(|p| point_in_box(stored(p), &scene.object_box).unwrap()));
        assert!(scene.background.iter().all(|p| !point_in_box(p.xyz(), &scene.object_box).unwrap()));
        let moved = scene.with_object_moved(0.7, [3.0, -8.0, 0.0]).unwrap();
        assert!(moved.object.iter().all(|p| point_in_box(p.xyz(), &moved.object_box).unwrap()));

        let none = SceneConfig { object_points: 0, ..Default::default() };
        let s = synth_scene(&none, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(s.cloud().len(), s.background.len());
    }
}
