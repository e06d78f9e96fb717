use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rangediff_core::boxes::{convex_hull, default_frequencies, fourier_embed, rasterize_mask_rect, EditMask};
use rangediff_core::denoiser::softmax;
use rangediff_core::diffusion::{cfg_combine, NoiseSchedule};
use rangediff_core::grid::Grid;
use rangediff_core::image_ops::{erode, feather_composite, feather_weights, GrayImage};
use rangediff_core::metrics::{intensity_mse, median_depth_error, moment_match, MaskedPair};
use rangediff_core::norm::{
    avg_pool_downscale, depth_linear_denorm, depth_linear_norm, depth_object_denorm, depth_object_norm,
    intensity_denorm, intensity_norm, nn_upscale, DepthNormParams,
};
use rangediff_core::range_view::{project_with_stats, reconstruct, BeamTable, MAX_DEPTH, MIN_DEPTH};
use rangediff_core::synth::collision_free_cloud;

fn mask_strategy(max: usize) -> impl Strategy<Value = EditMask> {
    (1..max, 1..max).prop_flat_map(|(r, c)| {
        prop::collection::vec(any::<bool>(), r * c)
            .prop_map(move |bits| EditMask::from_fn(r, c, |i, j| bits[i * c + j]))
    })
}

/// Pixel centre inside the hull of `pts` iff the directions from the
/// centre to the points leave no angular gap wider than π. `None` when
/// the answer is within rounding of the boundary.
fn in_hull_by_angles(p: [f64; 2], pts: &[[f64; 2]]) -> Option<bool> {
    let mut angles: Vec<f64> = Vec::new();
    for q in pts {
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        if dx.abs() < 1e-9 && dy.abs() < 1e-9 {
            return Some(true);
        }
        angles.push(dy.atan2(dx));
    }
    angles.sort_by(f64::total_cmp);
    let mut widest = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        widest = widest.max(w[1] - w[0]);
    }
    if (widest - PI).abs() < 1e-9 {
        None
    } else {
        Some(widest < PI)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_round_trip_is_exact_without_collisions(seed in any::<u64>(), n in 1usize..3000) {
        let table = BeamTable::default();
        let cloud = collision_free_cloud(n, 1096, &table, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (view, stats) = project_with_stats(&cloud, &table, 1096);
        prop_assert_eq!(stats.retained, n);
        let rebuilt = reconstruct(&view);
        // Every original point has a reconstruction within 1e-6 m; the
        // order differs, so match by nearest distance.
        let mut sorted = rebuilt.points.clone();
        sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
        for p in &cloud.points {
            let i = sorted.partition_point(|q| q.x < p.x - 1e-6);
            let hit = sorted[i..].iter().take_while(|q| q.x <= p.x + 1e-6).any(|q| {
                (q.y - p.y).abs() < 1e-6 && (q.z - p.z).abs() < 1e-6 && q.intensity == p.intensity
            });
            prop_assert!(hit, "no reconstruction for {:?}", p);
        }
    }

    #[test]
    fn depth_maps_invert(d in MIN_DEPTH..=MAX_DEPTH, alpha in 0.05f64..0.95, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let n = depth_linear_norm(d).unwrap();
        prop_assert!((-1.0..=1.0).contains(&n));
        prop_assert!((depth_linear_denorm(n).unwrap() - d).abs() < 1e-9);
        let p = DepthNormParams::new(alpha, a.min(b), a.max(b)).unwrap();
        let o = depth_object_norm(n, &p).unwrap();
        prop_assert!((-1.0..=1.0).contains(&o));
        prop_assert!((depth_object_denorm(o, &p).unwrap() - n).abs() < 1e-9);
    }

    #[test]
    fn depth_object_norm_is_increasing(alpha in 0.05f64..0.95, lo in -0.9f64..0.0, hi in 0.05f64..0.9, x in -1.0f64..1.0, dx in 1e-6f64..0.5) {
        let p = DepthNormParams::new(alpha, lo, hi).unwrap();
        let y = (x + dx).min(1.0);
        prop_assume!(y > x);
        prop_assert!(depth_object_norm(y, &p).unwrap() > depth_object_norm(x, &p).unwrap());
    }

    #[test]
    fn intensity_map_inverts(i in 0.0f64..=255.0, lambda in 0.5f64..10.0) {
        let n = intensity_norm(i, lambda).unwrap();
        prop_assert!(n > -1.0 && n <= 1.0);
        prop_assert!((intensity_denorm(n, lambda).unwrap() - i).abs() < 1e-9);
    }

    #[test]
    fn upscale_then_pool_is_identity(vals in prop::collection::vec(-1.0f64..1.0, 1..30), f in 1usize..6) {
        let g = Grid::from_vec(1, vals.len(), vals).unwrap();
        let up = nn_upscale(&g, f).unwrap();
        prop_assert_eq!(avg_pool_downscale(&up, f).unwrap(), g);
    }

    #[test]
    fn rasterized_hull_matches_angle_oracle(
        pts in prop::collection::vec((0.0f64..24.0, 0.0f64..24.0), 3..9),
        rows in 4usize..24,
        cols in 4usize..24,
    ) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(u, v)| [u, v]).collect();
        let r = rasterize_mask_rect(&pts, rows, cols);
        prop_assert_eq!(r.degenerate, convex_hull(&pts).len() < 3);
        if r.degenerate {
            prop_assert_eq!(r.mask.count(), 0);
        } else {
            for i in 0..rows {
                for j in 0..cols {
                    if let Some(inside) = in_hull_by_angles([j as f64 + 0.5, i as f64 + 0.5], &pts) {
                        prop_assert_eq!(r.mask.is_set(i, j), inside, "pixel ({}, {})", i, j);
                    }
                }
            }
        }
        let m = &r.mask;
        let sum = Grid::from_fn(rows, cols, |i, j| m.grid().get(i, j) + m.complement().grid().get(i, j));
        prop_assert!(sum.as_slice().iter().all(|&v| v == 1));
    }

    #[test]
    fn erosion_is_anti_extensive_and_monotone(m in mask_strategy(12), r in 0usize..4) {
        let e = erode(&m, r);
        prop_assert!(e.is_subset_of(&m));
        prop_assert!(erode(&m, r + 1).is_subset_of(&e));
        let bigger = m.union(&EditMask::from_fn(m.shape().0, m.shape().1, |i, j| (i + j) % 3 == 0));
        prop_assert!(e.is_subset_of(&erode(&bigger, r)));
    }

    #[test]
    fn feathering_stays_in_bounds(m in mask_strategy(14), sigma in 0.0f64..4.0, seed in any::<u64>()) {
        let w = feather_weights(&m, sigma).unwrap();
        prop_assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (rows, cols) = m.shape();
        let mut x = seed;
        let mut next = move || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 11) as f64 / (1u64 << 53) as f64 };
        let dst = GrayImage::from_fn(rows, cols, |_, _| next()).unwrap();
        let src = GrayImage::from_fn(rows, cols, |_, _| next()).unwrap();
        let out = feather_composite(&dst, &src, &m, sigma).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                let (lo, hi) = (dst.get(i, j).min(src.get(i, j)), dst.get(i, j).max(src.get(i, j)));
                let v = out.get(i, j);
                prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
            }
        }
        prop_assert_eq!(feather_composite(&dst, &dst, &m, sigma).unwrap(), dst.clone());
        if m.count() == 0 {
            prop_assert_eq!(out, dst);
        }
    }

    #[test]
    fn metrics_ignore_pixel_order(
        vals in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0, any::<bool>()), 1..60),
        shift in 0usize..60,
    ) {
        prop_assume!(vals.iter().any(|v| v.2));
        let n = vals.len();
        let build = |k: usize| {
            let at = |i: usize| vals[(i + k) % n];
            (
                Grid::from_fn(1, n, |_, i| at(i).0),
                Grid::from_fn(1, n, |_, i| at(i).1),
                EditMask::from_fn(1, n, |_, i| at(i).2),
            )
        };
        let (r0, c0, m0) = build(0);
        let (r1, c1, m1) = build(shift % n);
        let p0 = MaskedPair::new(&r0, &c0, &m0).unwrap();
        let p1 = MaskedPair::new(&r1, &c1, &m1).unwrap();
        prop_assert_eq!(median_depth_error(&p0).unwrap(), median_depth_error(&p1).unwrap());
        prop_assert!((intensity_mse(&p0).unwrap() - intensity_mse(&p1).unwrap()).abs() < 1e-9);
        let same = MaskedPair::new(&r0, &r0, &m0).unwrap();
        prop_assert_eq!(median_depth_error(&same).unwrap(), 0.0);
        prop_assert_eq!(intensity_mse(&same).unwrap(), 0.0);
    }

    #[test]
    fn moment_gap_is_symmetric_and_zero_on_itself(pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 100..160), k in 0usize..100) {
        let a: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let mut b = a.clone();
        b.rotate_left(k);
        let g = moment_match(&a, &b).unwrap();
        prop_assert!(g.mean_gap < 1e-12 && g.cov_gap < 1e-9);
        let shifted: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        let (g1, g2) = (moment_match(&a, &shifted).unwrap(), moment_match(&shifted, &a).unwrap());
        prop_assert!((g1.mean_gap - 1.0).abs() < 1e-9 && (g1.mean_gap - g2.mean_gap).abs() < 1e-12);
    }

    #[test]
    fn schedule_tables_are_consistent(t in 1usize..300, lo in 1e-5f64..0.01, span in 0.0f64..0.2) {
        let s = NoiseSchedule::linear(t, lo, lo + span).unwrap();
        for k in 1..=t {
            prop_assert!(s.beta_tilde(k) <= s.beta(k));
            prop_assert!((s.alpha_bar(k) + s.one_minus_alpha_bar(k) - 1.0).abs() < 1e-12);
            if k > 1 {
                prop_assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
            }
        }
    }

    #[test]
    fn cfg_endpoints_and_softmax(c in prop::collection::vec(-3.0f64..3.0, 1..8), scale in -2.0f64..8.0) {
        let u: Vec<f64> = c.iter().map(|v| v * 0.5 - 0.1).collect();
        prop_assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.clone());
        prop_assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.clone());
        prop_assert_eq!(cfg_combine(&u, &u, scale).unwrap(), u.clone());
        let mut w = c.clone();
        softmax(&mut w);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn fourier_features_are_bounded(coords in prop::collection::vec(-100.0f64..100.0, 1..6), count in 1usize..10) {
        let f = default_frequencies(count);
        let e = fourier_embed(&coords, &f);
        prop_assert_eq!(e.len(), 2 * coords.len() * count);
        prop_assert!(e.iter().all(|v| v.abs() <= 1.0));
    }
}
