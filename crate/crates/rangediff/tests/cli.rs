use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use rangediff::commands::{composite_demo, split_scene};
use rangediff::formats::{
    decode_pgm, encode_rdpc, load_box, load_checkpoint, load_cloud, load_view, read_bytes,
};
use rangediff_core::denoiser::{DenoiserConfig, DenoiserParams};
use rangediff_core::image_ops::point_in_box;
use rangediff_core::range_view::{pixel_of, BeamTable, LidarPoint, DEFAULT_WIDTH};
use rangediff_core::synth::collision_free_cloud;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rangediff"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_scene_is_deterministic_and_object_points_are_in_the_box() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&a, &["--seed", "11", "synth-scene"]);
    ok(&b, &["--seed", "11", "synth-scene"]);
    ok(&c, &["--seed", "12", "synth-scene"]);
    for f in ["scene.rdpc", "box.csv"] {
        assert_eq!(read_bytes(&a.join(f)).unwrap(), read_bytes(&b.join(f)).unwrap());
    }
    assert_ne!(read_bytes(&a.join("scene.rdpc")).unwrap(), read_bytes(&c.join("scene.rdpc")).unwrap());

    let cloud = load_cloud(&a.join("scene.rdpc")).unwrap();
    let bx = load_box(&a.join("box.csv")).unwrap();
    let inside = cloud.points.iter().filter(|p| point_in_box(p.xyz(), &bx).unwrap()).count();
    assert_eq!(inside, 400);
    // Object points are written after the background.
    assert!(cloud.points[cloud.len() - 400..].iter().all(|p| point_in_box(p.xyz(), &bx).unwrap()));
}

#[test]
fn synth_scene_without_object_points() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[scene]\nobject_points = 0\n");
    ok(tmp.path(), &["--config", s(&cfg), "synth-scene"]);
    let cloud = load_cloud(&tmp.path().join("scene.rdpc")).unwrap();
    let bx = load_box(&tmp.path().join("box.csv")).unwrap();
    assert!(!cloud.is_empty());
    assert!(cloud.points.iter().all(|p| !point_in_box(p.xyz(), &bx).unwrap()));
}

#[test]
fn roundtrip_reports() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let cloud = collision_free_cloud(3000, DEFAULT_WIDTH, &BeamTable::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let path = dir.join("cloud.rdpc");
    fs::write(&path, encode_rdpc(&cloud)).unwrap();
    ok(dir, &["roundtrip", s(&path)]);
    let rows = csv_rows(&dir.join("roundtrip.csv"));
    assert_eq!(rows[0], ["input", "out_of_range", "collisions", "retained", "max_error_m", "mean_error_m"]);
    assert_eq!(&rows[1][..4], ["3000", "0", "0", "3000"]);
    assert!(rows[1][4].parse::<f64>().unwrap() < 1e-6);
    assert_eq!(load_view(&dir.join("view.rdrv")).unwrap().occupied_count(), 3000);

    let far = dir.join("far.csv");
    fs::write(&far, "x,y,z,intensity\n80,0,0,5\n0.5,0,0,5\n0,-70,1,9\n").unwrap();
    ok(dir, &["roundtrip", s(&far)]);
    assert_eq!(&csv_rows(&dir.join("roundtrip.csv"))[1][..4], ["3", "3", "0", "0"]);

    let empty = dir.join("empty.csv");
    fs::write(&empty, "x,y,z,intensity\n").unwrap();
    ok(dir, &["roundtrip", s(&empty)]);
    assert_eq!(csv_rows(&dir.join("roundtrip.csv"))[1], ["0", "0", "0", "0", "0", "0"]);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let bad = write_config(dir, "[schedule]\nbeta_start = 0.3\nbeta_end = 0.1\n");
    assert_eq!(code(dir, &["--config", s(&bad), "schedule-dump"]), 2);
    assert_eq!(code(dir, &["no-such-verb"]), 2);
    assert_eq!(code(dir, &["roundtrip", "/nonexistent/cloud.rdpc"]), 3);
    let garbage = dir.join("garbage.rdpc");
    fs::write(&garbage, b"RDPC\x01\x00\x00\x00\x05").unwrap();
    assert_eq!(code(dir, &["roundtrip", s(&garbage)]), 3);

    // A steep intensity rate underflows the exponential, so the inverse fails.
    ok(dir, &["synth-scene"]);
    let scene = dir.join("scene.rdpc");
    assert_eq!(code(dir, &["normalize-check", s(&scene)]), 0);
    let steep = write_config(dir, "[norm]\nlambda = 1000.0\n");
    assert_eq!(code(dir, &["--config", s(&steep), "normalize-check", s(&scene)]), 4);
}

#[test]
fn normalize_check_reports_every_map() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-scene"]);
    ok(dir, &["normalize-check", s(&dir.join("scene.rdpc")), "--box", s(&dir.join("box.csv"))]);
    let rows = csv_rows(&dir.join("normalize.csv"));
    let maps: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(maps, ["depth_linear", "depth_object", "intensity"]);
    assert!(rows[1..].iter().all(|r| r[2].parse::<f64>().unwrap() <= 1e-9));
}

#[test]
fn schedule_dump_lists_every_step() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[schedule]\nsteps = 10\n\n[sampling]\nsteps = 5\n");
    ok(tmp.path(), &["--config", s(&cfg), "schedule-dump"]);
    let rows = csv_rows(&tmp.path().join("schedule.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[1][0], "1");
    assert_eq!(rows[1][1], rows[1][4], "1 - alpha_bar_1 equals beta_1");
}

const TINY: &str = "seed = 3\n[denoiser]\nhidden = [16, 16]\ntime_embed_dim = 8\n[training]\nbatch = 32\n";

#[test]
fn train_toy_zero_steps_writes_the_initialization() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TINY}steps = 0\n"));
    ok(tmp.path(), &["--config", s(&cfg), "train-toy"]);
    let ckpt = load_checkpoint(&tmp.path().join("checkpoint.rdcp")).unwrap();
    let init = DenoiserParams::init(DenoiserConfig::new(2, 8, vec![16, 16], 8), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(ckpt, init);
    assert_eq!(csv_rows(&tmp.path().join("loss.csv")), vec![vec!["step", "loss"]]);
}

#[test]
fn train_toy_is_reproducible_and_learns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 3\n[denoiser]\nhidden = [32, 32]\ntime_embed_dim = 8\n[training]\nbatch = 64\nsteps = 3000\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&a, &["--config", s(&cfg), "train-toy"]);
    ok(&b, &["--config", s(&cfg), "train-toy"]);
    for f in ["checkpoint.rdcp", "loss.csv"] {
        assert_eq!(read_bytes(&a.join(f)).unwrap(), read_bytes(&b.join(f)).unwrap());
    }
    let losses: Vec<f64> = csv_rows(&a.join("loss.csv"))[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (head, tail) = (mean(&losses[..100]), mean(&losses[losses.len() - 100..]));
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
}

#[test]
fn sample_command() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, &format!("{TINY}steps = 300\n"));
    let c = s(&cfg);
    ok(dir, &["--config", c, "train-toy"]);
    let ckpt = dir.join("checkpoint.rdcp");
    let k = s(&ckpt);

    ok(dir, &["--config", c, "sample", k, "-n", "0"]);
    assert_eq!(fs::read_to_string(dir.join("samples.csv")).unwrap(), "x,y\n");

    ok(dir, &["--config", c, "sample", k, "-n", "50", "--steps", "20"]);
    let first = fs::read(dir.join("samples.csv")).unwrap();
    ok(dir, &["--config", c, "sample", k, "-n", "50", "--steps", "20"]);
    assert_eq!(fs::read(dir.join("samples.csv")).unwrap(), first);
    assert_eq!(csv_rows(&dir.join("samples.csv")).len(), 51);

    ok(dir, &["--config", c, "sample", k, "-n", "20", "--sampler", "ddpm", "--component", "2", "--cfg-scale", "3"]);
    assert_eq!(code(dir, &["--config", c, "sample", k, "--steps", "7"]), 2);
    assert_eq!(code(dir, &["--config", c, "sample", k, "--component", "8"]), 2);
}

#[test]
fn composite_demo_outputs() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-scene"]);
    let (scene, bx) = (dir.join("scene.rdpc"), dir.join("box.csv"));

    let id = dir.join("identity");
    ok(&id, &["composite-demo", s(&scene), s(&bx)]);
    assert_eq!(read_bytes(&id.join("composite.rdrv")).unwrap(), read_bytes(&id.join("original.rdrv")).unwrap());

    // Beyond the depth limit the moved object leaves no returns.
    let gone = dir.join("gone");
    ok(&gone, &["composite-demo", s(&scene), s(&bx), "--shift", "120,0,0"]);
    assert_eq!(read_bytes(&gone.join("composite.rdrv")).unwrap(), read_bytes(&gone.join("original.rdrv")).unwrap());
    assert_eq!(csv_rows(&gone.join("composite.csv"))[1], ["400", "0", "0", "0"]);

    let moved = dir.join("moved");
    ok(&moved, &["composite-demo", s(&scene), s(&bx), "--yaw", "-0.5", "--shift", "-2,3.5,0"]);
    let replaced = decode_pgm(&read_bytes(&moved.join("replaced.pgm")).unwrap()).unwrap();
    assert!(replaced.as_slice().contains(&1.0));
    for f in ["before_depth.pgm", "after_depth.pgm", "before_intensity.pgm", "after_intensity.pgm"] {
        assert_eq!(decode_pgm(&read_bytes(&moved.join(f)).unwrap()).unwrap().shape(), (32, DEFAULT_WIDTH));
    }
    let composite = load_view(&moved.join("composite.rdrv")).unwrap();
    let original = load_view(&moved.join("original.rdrv")).unwrap();
    assert!(replaced.iter_indexed().any(|(r, c, &v)| v == 1.0 && composite.point_at(r, c) != original.point_at(r, c)));
}

/// Replaced pixels equal the per-pixel rule: the moved object's own return,
/// or any edited return inside the moved box. Everything else is untouched.
#[test]
fn composite_replaced_set_matches_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scene = rangediff_core::synth::synth_scene(&Default::default(), &mut rng).unwrap();
    let split = split_scene(&scene.cloud(), &scene.object_box).unwrap();
    assert_eq!(split.object.len(), scene.object.len());
    for (yaw, shift) in [(0.0, [0.0; 3]), (0.8, [1.0, -6.0, 0.0]), (-1.2, [-4.0, 2.0, 0.3]), (0.0, [200.0, 0.0, 0.0])] {
        let demo = composite_demo(&split, yaw, shift, DEFAULT_WIDTH).unwrap();
        let moved: Vec<LidarPoint> = if yaw == 0.0 && shift == [0.0; 3] {
            split.object.clone()
        } else {
            split.with_object_moved(yaw, shift).unwrap().object
        };
        // Nearest moved-object depth per pixel.
        let mut nearest = std::collections::HashMap::new();
        for m in &moved {
            if let Some((r, c, sph)) = pixel_of(m, &BeamTable::default(), DEFAULT_WIDTH) {
                let d = nearest.entry((r, c)).or_insert(f64::INFINITY);
                *d = f64::min(*d, sph.depth);
            }
        }
        for r in 0..32 {
            for c in 0..DEFAULT_WIDTH {
                let edited = demo.edited.point_at(r, c);
                let own = nearest.get(&(r, c)).is_some_and(|&d| *demo.edited.depth.get(r, c) == d);
                let in_box = edited.is_some_and(|p| point_in_box(p.xyz(), &demo.moved_box).unwrap());
                let rule = own || in_box;
                assert_eq!(demo.replaced.is_set(r, c), rule, "pixel ({r}, {c})");
                if !rule {
                    assert_eq!(demo.composite.point_at(r, c), demo.original.point_at(r, c));
                }
            }
        }
    }
}

#[test]
fn metrics_of_identical_views_are_zero() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-scene"]);
    let (scene, bx) = (dir.join("scene.rdpc"), dir.join("box.csv"));
    let table = ok(dir, &["metrics", s(&scene), s(&scene), s(&bx)]);
    assert!(table.contains("object") && table.contains("edit_hull"));
    let rows = csv_rows(&dir.join("metrics.csv"));
    assert_eq!(rows[0], ["mask", "pixels", "median_depth_error_m", "intensity_mse"]);
    for r in &rows[1..] {
        assert!(r[1].parse::<usize>().unwrap() > 0);
        assert_eq!((r[2].as_str(), r[3].as_str()), ("0", "0"));
    }

    ok(dir, &["composite-demo", s(&scene), s(&bx), "--yaw", "0.6"]);
    ok(dir, &["metrics", s(&dir.join("original.rdrv")), s(&dir.join("composite.rdrv")), s(&bx)]);
    let rows = csv_rows(&dir.join("metrics.csv"));
    assert!(rows[1][2].parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn full_stride_ddim_beats_ten_steps() {
    use rangediff_core::metrics::moment_match;
    use rangediff_core::toy::{GaussianRing, ToyDataset};

    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, &format!("{TINY}steps = 3000\n"));
    let c = s(&cfg);
    ok(dir, &["--config", c, "train-toy"]);
    let ckpt = dir.join("checkpoint.rdcp");
    let read = |steps: &str| -> Vec<[f64; 2]> {
        ok(dir, &["--config", c, "sample", s(&ckpt), "-n", "4000", "--steps", steps]);
        csv_rows(&dir.join("samples.csv"))[1..]
            .iter()
            .map(|r| [r[0].parse().unwrap(), r[1].parse().unwrap()])
            .collect()
    };
    let (dense, coarse) = (read("200"), read("10"));
    let ring = GaussianRing::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let data: Vec<[f64; 2]> = (0..4000).map(|_| ring.sample(&mut rng).0).collect();
    let (gd, gc) = (moment_match(&dense, &data).unwrap(), moment_match(&coarse, &data).unwrap());
    assert!(gd.cov_gap < gc.cov_gap, "dense {gd:?} vs ten steps {gc:?}");
}
