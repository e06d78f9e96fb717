use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rangediff::formats::*;
use rangediff_core::boxes::Box3D;
use rangediff_core::denoiser::{DenoiserConfig, DenoiserParams};
use rangediff_core::grid::Grid;
use rangediff_core::range_view::{project, BeamTable, LidarPoint, PointCloud};

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn cloud_strategy() -> impl Strategy<Value = Vec<LidarPoint>> {
    prop::collection::vec(
        (-60.0f64..60.0, -60.0f64..60.0, -5.0f64..5.0, 0.0f64..=255.0)
            .prop_map(|(x, y, z, i)| LidarPoint::new(f32_exact(x), f32_exact(y), f32_exact(z), f32_exact(i))),
        0..200,
    )
}

proptest! {
    #[test]
    fn rdpc_round_trips_f32_values(points in cloud_strategy()) {
        let cloud = PointCloud::new(points);
        let bytes = encode_rdpc(&cloud);
        prop_assert_eq!(bytes.len(), 16 + 16 * cloud.len());
        prop_assert_eq!(decode_rdpc(&bytes).unwrap(), cloud);
    }

    #[test]
    fn rdrv_round_trips_projected_views(points in cloud_strategy()) {
        let view = project(&PointCloud::new(points), &BeamTable::default(), 64);
        let bytes = encode_rdrv(&view);
        let back = decode_rdrv(&bytes).unwrap();
        prop_assert_eq!(&back.occupancy, &view.occupancy);
        for (a, b) in back.depth.as_slice().iter().zip(view.depth.as_slice()) {
            prop_assert_eq!(*a, f32_exact(*b));
        }
        // A second pass is lossless.
        prop_assert_eq!(encode_rdrv(&back), bytes);
    }

    #[test]
    fn box_csv_round_trips_exactly(
        c in prop::array::uniform3(-40.0f64..40.0),
        s in prop::array::uniform3(0.5f64..6.0),
        yaw in -3.2f64..3.2,
    ) {
        let b = Box3D::from_pose(c, s, yaw).unwrap();
        prop_assert_eq!(parse_box_csv(&format_box_csv(&b)).unwrap(), b);
    }

    #[test]
    fn pgm_round_trips_byte_levels(levels in prop::collection::vec(0u8..=255, 1..60), cols in 1usize..6) {
        let rows = levels.len() / cols;
        prop_assume!(rows > 0);
        let g = Grid::from_vec(rows, cols, levels[..rows * cols].iter().map(|&l| l as f64 / 255.0).collect()).unwrap();
        let bytes = encode_pgm(&g);
        prop_assert_eq!(decode_pgm(&bytes).unwrap(), g);
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let cfg = DenoiserConfig::new(2, 8, vec![16, 12], 6);
    let params = DenoiserParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let bytes = encode_checkpoint(&params);
    assert_eq!(&bytes[..4], RDCP_MAGIC);
    assert_eq!(decode_checkpoint(&bytes).unwrap(), params);
}

#[test]
fn corrupt_inputs_are_rejected() {
    let cloud = PointCloud::new(vec![LidarPoint::new(5.0, 1.0, 0.0, 10.0)]);
    let bytes = encode_rdpc(&cloud);
    assert!(decode_rdpc(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_rdpc(&long).unwrap_err().contains("trailing"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_rdpc(&magic).unwrap_err().contains("magic"));
    let mut version = bytes;
    version[4] = 9;
    assert!(decode_rdpc(&version).unwrap_err().contains("version"));

    let view = project(&cloud, &BeamTable::default(), 8);
    let mut rv = encode_rdrv(&view);
    *rv.last_mut().unwrap() = 7;
    assert!(decode_rdrv(&rv).unwrap_err().contains("occupancy"));

    let params = DenoiserParams::init(DenoiserConfig::new(2, 4, vec![4], 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ck = encode_checkpoint(&params);
    assert!(decode_checkpoint(&ck[..ck.len() - 8]).is_err());
}

#[test]
fn csv_inputs() {
    let cloud = parse_cloud_csv("x,y,z,intensity\n# a comment\n1, 2, 3, 4\n5,6,7,8\n").unwrap();
    assert_eq!(cloud.points, vec![LidarPoint::new(1.0, 2.0, 3.0, 4.0), LidarPoint::new(5.0, 6.0, 7.0, 8.0)]);
    assert!(parse_cloud_csv("x,y,z,intensity\n").unwrap().is_empty());
    assert!(parse_cloud_csv("1,2,3\n").unwrap_err().contains("3 columns"));
    assert!(parse_cloud_csv("1,2,3,4\n1,2,x,4\n").unwrap_err().contains("line 2"));
    assert!(parse_cloud_csv("1,2,3,400\n").is_err());

    assert!(parse_box_csv("0,0,0\n").unwrap_err().contains("8"));
    let cam = parse_camera_csv("1,0,0,0\n0,1,0,0\n0,0,1,0\n").unwrap();
    assert_eq!(cam.homogeneous([2.0, 3.0, 4.0]), [2.0, 3.0, 4.0]);
}

#[test]
fn pgm_header_variants() {
    let g = decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
    assert_eq!(g.as_slice(), &[0.0, 1.0]);
    assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
}
