use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radplace_core::eval::{capture, training_plan, ConcatMode, StudyConfig, World};
use radplace_core::heatmap::Heatmap;
use radplace_core::io::{load_db, load_heatmap, parse_offsets_csv, parse_truth_csv, poses_csv, save_db, save_heatmap, Pose};
use radplace_core::placedb::PlaceDb;
use radplace_core::radar::RadarConfig;

fn radplace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radplace"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn scene(dir: &Path) -> PathBuf {
    let p = dir.join("scene.txt");
    fs::write(&p, "# range_m azimuth_deg amplitude\n10 20 1.0\n25 -30 2\n15 80 1.5\n30 150 0.8\n").unwrap();
    p
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

/// A small radar so debug-build runs stay quick.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(
        &p,
        format!("[radar]\nn_chirps = 2\n[simulate]\nnoise_std = 0.1\n[heatmap]\nrows = 64\ncols = 256\n{extra}"),
    )
    .unwrap();
    p
}

#[test]
fn simulate_writes_one_cube_and_truth_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let s = scene(dir.path());
    let run = |out: &str, seed: &str| {
        let o = radplace(
            &["--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out, "simulate", "--scene", s.to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a", "4");
    run("b", "4");
    run("c", "5");
    let cubes = files(&dir.path().join("a/cubes"));
    assert_eq!(cubes.len(), 36);
    let truth = parse_truth_csv(&fs::read_to_string(dir.path().join("a/truth.csv")).unwrap()).unwrap();
    assert_eq!(truth.len(), 36);
    assert_eq!(truth[0].heading_deg, 0.0);
    assert_eq!(truth[1].heading_deg, 15.0);
    // Same seed, same bytes; another seed changes the noise.
    for name in ["cubes/frame_00000.ifc", "cubes/frame_00035.ifc", "truth.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(name)).unwrap(), fs::read(dir.path().join("b").join(name)).unwrap());
    }
    assert_ne!(
        fs::read(dir.path().join("a/cubes/frame_00000.ifc")).unwrap(),
        fs::read(dir.path().join("c/cubes/frame_00000.ifc")).unwrap()
    );
    let manifest = fs::read_to_string(dir.path().join("a/simulate.run.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4"));
}

#[test]
fn empty_scene_exits_2_without_cubes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.txt"), "# nothing here\n\n").unwrap();
    let o = radplace(&["--out", "o", "simulate", "--scene", "empty.txt"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("o/cubes").exists());
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // Usage errors.
    assert_eq!(code(&radplace(&["--bogus", "eval"], p)), 1);
    assert_eq!(code(&radplace(&["--heatmap-size", "64", "eval"], p)), 1);
    assert_eq!(code(&radplace(&["--concat", "sideways", "eval"], p)), 1);
    assert_eq!(code(&radplace(&["--preset", "fast", "eval"], p)), 1);
    assert_eq!(code(&radplace(&["simulate"], p)), 1);
    assert_eq!(code(&radplace(&["render"], p)), 1);
    fs::write(p.join("bad.toml"), "[radar]\nn_chirps = \"many\"\n").unwrap();
    assert_eq!(code(&radplace(&["--config", "bad.toml", "eval"], p)), 1);
    fs::write(p.join("neg.toml"), "[radar]\nslope = -1.0\n").unwrap();
    assert_eq!(code(&radplace(&["--config", "neg.toml", "eval"], p)), 1);
    // Help and version are not errors.
    assert_eq!(code(&radplace(&["--help"], p)), 0);
    assert_eq!(code(&radplace(&["--version"], p)), 0);
    // Data errors.
    assert_eq!(code(&radplace(&["--config", "missing.toml", "eval"], p)), 3);
    assert_eq!(code(&radplace(&["heatmap", "--cubes", "nowhere"], p)), 3);
    fs::write(p.join("junk.rah"), b"RAH1garbage").unwrap();
    assert_eq!(code(&radplace(&["--out", "o", "render", "junk.rah"], p)), 3);
    fs::write(p.join("scene.txt"), "10 not-a-number 1\n").unwrap();
    assert_eq!(code(&radplace(&["simulate", "--scene", "scene.txt"], p)), 3);
    fs::write(p.join("far.txt"), "5000 0 1\n").unwrap();
    assert_eq!(code(&radplace(&["simulate", "--scene", "far.txt"], p)), 3);
    // Empty inputs.
    fs::create_dir(p.join("nothing")).unwrap();
    assert_eq!(code(&radplace(&["heatmap", "--cubes", "nothing"], p)), 2);
}

#[test]
fn sweep_pipeline_mosaics_three_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = small_config(p, "");
    let cfg = cfg.to_str().unwrap();
    scene(p);
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "o", "simulate", "--scene", "scene.txt"], p)), 0);
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "o", "heatmap", "--cubes", "o/cubes"], p)), 0);
    let maps = files(&p.join("o/heatmaps"));
    assert_eq!(maps.len(), 36);
    let h = load_heatmap(&maps[0]).unwrap();
    // Uniform half-degree grid over the 120 degree field of view.
    assert_eq!(h.dims(), (64, 241));

    let o = radplace(&["--config", cfg, "--out", "o", "concat", "--heatmaps", "o/heatmaps"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let offsets = parse_offsets_csv(&fs::read_to_string(p.join("o/offsets.csv")).unwrap()).unwrap();
    assert_eq!(offsets.len(), 36);
    assert!(offsets[..11].iter().all(|o| (o.a_offset + 30).abs() <= 1));
    let segments = fs::read_to_string(p.join("o/segments.csv")).unwrap();
    assert_eq!(segments.lines().count(), 4);
    let mosaic = load_heatmap(p.join("o/mosaics/cycle_000.rah")).unwrap();
    let deg = mosaic.cols() as f64 * 0.5;
    assert!((deg - 300.0).abs() <= 120.0, "mosaic spans {deg} deg");

    // Fixed step writes the same layout; `none` only writes offsets.
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "f", "--concat", "fixed", "concat", "--heatmaps", "o/heatmaps"], p)), 0);
    assert!(p.join("f/mosaics/cycle_002.rah").exists());
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "n", "--concat", "none", "concat", "--heatmaps", "o/heatmaps"], p)), 0);
    assert!(p.join("n/offsets.csv").exists() && !p.join("n/mosaics").exists());

    assert_eq!(code(&radplace(&["--out", "img", "render", "o/mosaics/cycle_000.rah", "--log"], p)), 0);
    let pgm = fs::read(p.join("img/cycle_000.pgm")).unwrap();
    let header = format!("P5\n{} {}\n255\n", mosaic.cols(), mosaic.rows());
    assert!(pgm.starts_with(header.as_bytes()));
    assert_eq!(pgm.len(), header.len() + mosaic.rows() * mosaic.cols());
}

#[test]
fn static_frames_have_no_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = small_config(p, "[platform]\nsweep_extent = 180.0\nangular_speed = 0.001\n");
    let cfg = cfg.to_str().unwrap();
    fs::write(p.join("scene.txt"), "10 0 1\n20 10 1\n").unwrap();
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "o", "simulate", "--scene", "scene.txt", "--frames", "4"], p)), 0);
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "o", "heatmap", "--cubes", "o/cubes"], p)), 0);
    assert_eq!(code(&radplace(&["--config", cfg, "--out", "o", "concat", "--heatmaps", "o/heatmaps"], p)), 2);
}

fn tiny_study() -> StudyConfig {
    let mut cfg = StudyConfig {
        radar: RadarConfig {
            n_chirps: 2,
            ..RadarConfig::default()
        },
        heatmap_cols: 256,
        ..StudyConfig::default()
    };
    cfg.world.n_places = 10;
    cfg.world.n_train_places = 12;
    cfg
}

/// Writes `n` heatmaps of a synthetic route plus their poses.
fn write_dataset(dir: &Path, world: &World, n: usize, revisits: usize, seed: u64) {
    let cfg = tiny_study();
    let visits = training_plan(n, revisits, 0.5, seed);
    fs::create_dir_all(dir).unwrap();
    let mut poses = Vec::new();
    for (i, v) in visits.iter().enumerate() {
        let h: Heatmap = capture(world, v, &cfg, ConcatMode::None, seed + i as u64).unwrap();
        save_heatmap(dir.join(format!("f_{i:04}.rah")), &h).unwrap();
        let pose = v.pose(world);
        poses.push(Pose {
            frame_idx: i,
            x_m: pose.position[0],
            y_m: pose.position[1],
            heading_deg: Some(pose.heading.to_degrees()),
        });
    }
    fs::write(dir.join("poses.csv"), poses_csv(&poses)).unwrap();
}

#[test]
fn train_build_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let study = tiny_study();
    let world = World::generate(&study.world, 12, study.radar.max_range(), 1).unwrap();
    write_dataset(&p.join("train"), &world, 12, 1, 10);
    write_dataset(&p.join("ref"), &world, 12, 0, 20);
    let cfg = small_config(p, "[train]\nmax_epochs = 2\n[encoder]\nrows = 32\ncols = 16\n");
    let cfg = cfg.to_str().unwrap();

    let o = radplace(&["--config", cfg, "--out", "m", "train", "--heatmaps", "train", "--poses", "train/poses.csv"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(p.join("m/train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,mean_loss,lr,val_recall1");
    assert_eq!(log.lines().count(), 3);

    let o = radplace(
        &["--out", "m", "build-db", "--heatmaps", "ref", "--poses", "ref/poses.csv", "--weights", "m/weights.mmw"],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let db = load_db(p.join("m/places.mpdb")).unwrap();
    assert_eq!(db.len(), 12);
    assert_eq!(db.dim(), Some(16 * 4 * 2));

    let q = |out: &str| {
        radplace(
            &[
                "--out", out, "query", "--heatmaps", "train", "--poses", "train/poses.csv", "--weights", "m/weights.mmw", "--db",
                "m/places.mpdb", "--top-k", "3",
            ],
            p,
        )
    };
    assert_eq!(code(&q("q1")), 0);
    assert_eq!(code(&q("q2")), 0);
    let results = fs::read_to_string(p.join("q1/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 24 * 3);
    assert_eq!(results, fs::read_to_string(p.join("q2/results.csv")).unwrap());
    let metrics = fs::read_to_string(p.join("q1/metrics.json")).unwrap();
    assert!(metrics.contains("\"recall1\""));

    // Mismatched pose table and an empty database.
    fs::write(p.join("short.csv"), "frame_idx,x_m,y_m,heading_deg\n0,0,0,\n").unwrap();
    let o = radplace(&["--out", "x", "build-db", "--heatmaps", "ref", "--poses", "short.csv", "--weights", "m/weights.mmw"], p);
    assert_eq!(code(&o), 3);
    save_db(p.join("empty.mpdb"), &PlaceDb::new()).unwrap();
    let o = radplace(&["--out", "x", "query", "--heatmaps", "ref", "--weights", "m/weights.mmw", "--db", "empty.mpdb"], p);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("eval.toml"),
        "[eval]\nheatmap_cols = 256\n[eval.radar]\nn_chirps = 2\n[eval.world]\nn_places = 10\nn_train_places = 12\n\
         train_revisits = 1\n[eval.train]\nmax_epochs = 1\n",
    )
    .unwrap();
    let run = |out: &str| {
        let o = radplace(&["--config", "eval.toml", "--seed", "7", "--heatmap-size", "32x16", "--out", out, "eval"], p);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        o
    };
    let first = run("a");
    run("b");
    for f in ["report.txt", "report.json"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(p.join("a/report.txt")).unwrap();
    assert_eq!(String::from_utf8(first.stdout).unwrap(), text);
    for key in ["recall@1", "recall@5", "recall@10", "maxF1", "0-5", "20-40", "0-0.5", "2-3", "seed: 7"] {
        assert!(text.contains(key), "report lacks {key}:\n{text}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("a/report.json")).unwrap()).unwrap();
    assert_eq!(json["buckets"].as_array().unwrap().len(), 16);
    assert_eq!(json["seed"], 7);
}
