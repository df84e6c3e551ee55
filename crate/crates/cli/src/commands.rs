use std::fs;
use std::path::{Path, PathBuf};

use radplace_core::concat::{
    concat_fixed_step, concat_relative_pose, detect_cycles, fix_canvas_width, sequence_offsets, sign_chain,
};
use radplace_core::encoder::{encode, train, EncoderWeights, TrainConfig};
use radplace_core::eval::{run_study, ConcatMode};
use radplace_core::heatmap::{
    fit_cols, fit_rows, generate_heatmap_with, predicted_col, predicted_row, render_pgm, resize_cube,
    uniform_azimuth, Heatmap,
};
use radplace_core::io::{
    load_cube, load_db, load_heatmap, load_weights, offsets_csv, parse_poses_csv, save_cube, save_db,
    save_heatmap, save_weights, train_log_csv, truth_csv, weights_checksum, Pose, TruthRow,
};
use radplace_core::placedb::{max_f1, recall_at_n, PlaceDb, PlaceRecord, QueryResult};
use radplace_core::radar::{parse_scene, simulate_platform_sweep, visible_scene};
use radplace_core::Error as CoreError;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn require(path: Option<&PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    path.cloned()
        .ok_or_else(|| CliError::Usage(format!("no {what} given (use {flag} or paths.{what} in the config)")))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Files in `dir` with extension `ext`, in file-name order.
fn list_inputs(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Empty(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_heatmaps(dir: &Path) -> Result<Vec<(PathBuf, Heatmap)>> {
    list_inputs(dir, "rah")?
        .into_iter()
        .map(|p| {
            let h = load_heatmap(&p)?;
            Ok((p, h))
        })
        .collect()
}

/// Poses matched to heatmaps by position in file-name order.
fn load_poses(path: &Path, n: usize) -> Result<Vec<Pose>> {
    let mut poses = parse_poses_csv(&read_text(path)?)?;
    poses.sort_by_key(|p| p.frame_idx);
    if poses.len() != n || poses.iter().enumerate().any(|(i, p)| p.frame_idx != i) {
        return Err(CoreError::DimensionMismatch {
            expected: format!("poses for frames 0..{n}"),
            actual: format!("{} rows in {}", poses.len(), path.display()),
        }
        .into());
    }
    Ok(poses)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Records the command, seed, outputs and resolved config next to the outputs.
fn write_manifest(cfg: &RunConfig, command: &str, outputs: &[PathBuf]) -> Result<()> {
    let out = cfg.out_dir();
    let manifest = Manifest {
        command,
        seed: cfg.seed,
        outputs: outputs
            .iter()
            .map(|p| p.strip_prefix(&out).unwrap_or(p).display().to_string())
            .collect(),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&out.join(format!("{command}.run.json")), json + "\n")
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let scene_path = require(cfg.paths.scene.as_ref(), "scene", "--scene")?;
    let scene = parse_scene(&read_text(&scene_path)?)?;
    if scene.is_empty() {
        log::warn!("scene {} has no scatterers; no cubes written", scene_path.display());
        return Err(CliError::Empty("empty scene".into()));
    }
    let frames = simulate_platform_sweep(
        &scene,
        &cfg.radar,
        &cfg.platform,
        cfg.simulate.frames,
        cfg.simulate.noise_std,
        cfg.seed,
    )?;
    let out = cfg.out_dir();
    let mut outputs = Vec::new();
    let mut truth = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let path = out.join("cubes").join(format!("frame_{i:05}.ifc"));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        save_cube(&path, &frame.cube)?;
        outputs.push(path);
        let cells = visible_scene(&scene, frame.heading_deg, cfg.platform.fov)
            .iter()
            .map(|s| {
                (
                    predicted_row(s.range, cfg.heatmap.rows, &cfg.radar),
                    predicted_col(s.azimuth, cfg.heatmap.cols, &cfg.radar),
                )
            })
            .collect();
        truth.push(TruthRow {
            frame_idx: i,
            heading_deg: frame.heading_deg,
            cells,
        });
    }
    let truth_path = out.join("truth.csv");
    write_file(&truth_path, truth_csv(&truth))?;
    outputs.push(truth_path);
    log::info!("wrote {} cubes to {}", frames.len(), out.join("cubes").display());
    write_manifest(cfg, "simulate", &outputs)
}

pub fn heatmap(cfg: &RunConfig) -> Result<()> {
    let dir = require(cfg.paths.cubes.as_ref(), "cubes", "--cubes")?;
    let out = cfg.out_dir().join("heatmaps");
    let hc = &cfg.heatmap;
    let mut outputs = Vec::new();
    for path in list_inputs(&dir, "ifc")? {
        let cube = resize_cube(&load_cube(&path)?, hc.rows, hc.cols)?;
        let mut h = generate_heatmap_with(&cube, &cfg.radar, &hc.options)?;
        if hc.uniform_azimuth {
            h = uniform_azimuth(&h, cfg.platform.fov.to_radians() / 2.0, hc.azimuth_bin_deg.to_radians())?;
        }
        let target = out.join(format!("{}.rah", stem(&path)));
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        save_heatmap(&target, &h)?;
        outputs.push(target);
    }
    log::info!("wrote {} heatmaps to {}", outputs.len(), out.display());
    write_manifest(cfg, "heatmap", &outputs)
}

fn column_step_deg(h: &Heatmap) -> Result<f64> {
    let axis = h.angle_axis();
    if axis.len() < 2 {
        return Err(CoreError::DimensionMismatch {
            expected: "at least 2 angle columns".into(),
            actual: axis.len().to_string(),
        }
        .into());
    }
    let step = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    let uniform = axis.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step.abs().max(1e-12));
    if !uniform {
        log::warn!("angle axis is not uniform; rotation is not a pure column shift");
    }
    Ok(step.to_degrees())
}

pub fn concat(cfg: &RunConfig) -> Result<()> {
    let dir = require(cfg.paths.heatmaps.as_ref(), "heatmaps", "--heatmaps")?;
    let frames: Vec<Heatmap> = load_heatmaps(&dir)?.into_iter().map(|(_, h)| h).collect();
    let out = cfg.out_dir();
    let offsets = sequence_offsets(&frames, &cfg.concat.align)?;
    let offsets_path = out.join("offsets.csv");
    write_file(&offsets_path, offsets_csv(&offsets))?;
    let mut outputs = vec![offsets_path];

    let mode = cfg.concat.mode.unwrap_or(ConcatMode::Relpose);
    if mode != ConcatMode::None {
        let segments = detect_cycles(&offsets)?;
        let bin_deg = column_step_deg(&frames[0])?;
        let step_bins = (cfg.platform.step_deg() / bin_deg).round() as usize;
        let mut table = String::from("segment,start,end,direction,sign_chain\n");
        for (k, seg) in segments.iter().enumerate() {
            table.push_str(&format!(
                "{k},{},{},{},{}\n",
                seg.start,
                seg.end,
                seg.direction,
                sign_chain(&offsets, seg)
            ));
            let mut canvas = match mode {
                ConcatMode::Relpose => concat_relative_pose(&frames, seg, &offsets)?,
                _ => concat_fixed_step(&frames, seg, step_bins)?,
            };
            if let Some(deg) = cfg.concat.canvas_deg {
                canvas = fix_canvas_width(&canvas, (deg / bin_deg).round().max(1.0) as usize)?;
            }
            let path = out.join("mosaics").join(format!("cycle_{k:03}.rah"));
            if let Some(d) = path.parent() {
                fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
            }
            save_heatmap(&path, &canvas)?;
            outputs.push(path);
        }
        let seg_path = out.join("segments.csv");
        write_file(&seg_path, table)?;
        outputs.push(seg_path);
        log::info!("{} segments mosaicked ({mode})", segments.len());
    }
    write_manifest(cfg, "concat", &outputs)
}

/// Heatmap cropped and pooled to the encoder's input size.
fn encoder_input(h: &Heatmap, rows: usize, cols: usize) -> Result<Heatmap> {
    Ok(fit_cols(&fit_rows(h, rows)?, cols)?)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = require(cfg.paths.heatmaps.as_ref(), "heatmaps", "--heatmaps")?;
    let poses_path = require(cfg.paths.poses.as_ref(), "poses", "--poses")?;
    let maps = load_heatmaps(&dir)?;
    let poses = load_poses(&poses_path, maps.len())?;
    let arch = cfg.encoder.arch();
    let dataset = maps
        .iter()
        .zip(&poses)
        .map(|((_, h), p)| Ok((encoder_input(h, arch.input_rows, arch.input_cols)?, [p.x_m, p.y_m])))
        .collect::<Result<Vec<_>>>()?;
    let train_cfg = TrainConfig {
        arch: Some(arch),
        ..cfg.train.clone()
    };
    let outcome = train(&dataset, &train_cfg)?;
    let out = cfg.out_dir();
    let weights_path = out.join("weights.mmw");
    let log_path = out.join("train_log.csv");
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    save_weights(&weights_path, &outcome.weights)?;
    write_file(&log_path, train_log_csv(&outcome.history))?;
    log::info!(
        "best epoch {} of {}; weights sha256 {}",
        outcome.best_epoch,
        outcome.history.len(),
        weights_checksum(&outcome.weights)?
    );
    write_manifest(cfg, "train", &[weights_path, log_path])
}

fn load_encoder(cfg: &RunConfig) -> Result<EncoderWeights> {
    let path = require(cfg.paths.weights.as_ref(), "weights", "--weights")?;
    Ok(load_weights(path)?)
}

fn encode_map(h: &Heatmap, w: &EncoderWeights) -> Result<radplace_core::Descriptor> {
    Ok(encode(&encoder_input(h, w.arch.input_rows, w.arch.input_cols)?, w)?)
}

pub fn build_db(cfg: &RunConfig) -> Result<()> {
    let dir = require(cfg.paths.heatmaps.as_ref(), "heatmaps", "--heatmaps")?;
    let poses_path = require(cfg.paths.poses.as_ref(), "poses", "--poses")?;
    let weights = load_encoder(cfg)?;
    let maps = load_heatmaps(&dir)?;
    let poses = load_poses(&poses_path, maps.len())?;
    let mut db = PlaceDb::new();
    for ((path, h), pose) in maps.iter().zip(&poses) {
        let mut rec = PlaceRecord::new(pose.frame_idx as u64, encode_map(h, &weights)?, [pose.x_m, pose.y_m]);
        rec.heading_deg = pose.heading_deg;
        rec.source = stem(path);
        db.add(rec)?;
    }
    let out = cfg.out_dir();
    let path = out.join("places.mpdb");
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    save_db(&path, &db)?;
    log::info!("{} places written to {}", db.len(), path.display());
    write_manifest(cfg, "build-db", &[path])
}

#[derive(Serialize)]
struct QueryMetrics {
    seed: u64,
    queries: usize,
    recall1: Option<f64>,
    recall5: Option<f64>,
    recall10: Option<f64>,
    max_f1: Option<f64>,
    f1_threshold: Option<f64>,
}

pub fn query(cfg: &RunConfig) -> Result<()> {
    let dir = require(cfg.paths.heatmaps.as_ref(), "heatmaps", "--heatmaps")?;
    let db_path = require(cfg.paths.db.as_ref(), "db", "--db")?;
    let weights = load_encoder(cfg)?;
    let db = load_db(&db_path)?;
    let maps = load_heatmaps(&dir)?;
    let poses = cfg.paths.poses.as_deref().map(|p| load_poses(p, maps.len())).transpose()?;

    let mut results = Vec::with_capacity(maps.len());
    let mut table = String::from("query,rank,id,distance,correct\n");
    for (i, (_, h)) in maps.iter().enumerate() {
        let d = encode_map(h, &weights)?;
        let r = match &poses {
            Some(p) => db.query_with_truth(&d, cfg.query.top_k, [p[i].x_m, p[i].y_m])?,
            None => db.query(&d, cfg.query.top_k)?,
        };
        for (rank, (id, dist)) in r.ids.iter().zip(&r.distances).enumerate() {
            let correct = r
                .correct
                .as_ref()
                .map(|c| if c[rank] { "1" } else { "0" })
                .unwrap_or("");
            table.push_str(&format!("{i},{},{id},{dist:.9},{correct}\n", rank + 1));
        }
        results.push(r);
    }
    let out = cfg.out_dir();
    let results_path = out.join("results.csv");
    write_file(&results_path, table)?;
    let mut outputs = vec![results_path];
    if poses.is_some() {
        let metrics = query_metrics(cfg.seed, &results);
        let json = serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Internal(e.to_string()))?;
        let path = out.join("metrics.json");
        write_file(&path, json + "\n")?;
        outputs.push(path);
        log::info!("recall@1 {:?}  maxF1 {:?}", metrics.recall1, metrics.max_f1);
    }
    write_manifest(cfg, "query", &outputs)
}

fn query_metrics(seed: u64, results: &[QueryResult]) -> QueryMetrics {
    let f1 = max_f1(results).ok();
    QueryMetrics {
        seed,
        queries: results.len(),
        recall1: recall_at_n(results, 1).ok(),
        recall5: recall_at_n(results, 5).ok(),
        recall10: recall_at_n(results, 10).ok(),
        max_f1: f1.map(|f| f.0),
        f1_threshold: f1.map(|f| f.1),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let mode = cfg.concat.mode.unwrap_or(ConcatMode::None);
    let run = run_study(&cfg.eval, mode)?;
    let out = cfg.out_dir();
    let text = run.report.to_text();
    let txt_path = out.join("report.txt");
    let json_path = out.join("report.json");
    write_file(&txt_path, &text)?;
    write_file(&json_path, run.report.to_json()? + "\n")?;
    print!("{text}");
    write_manifest(cfg, "eval", &[txt_path, json_path])
}

pub fn render(cfg: &RunConfig, inputs: &[PathBuf], log_scale: bool) -> Result<()> {
    if inputs.is_empty() {
        return Err(CliError::Usage("render needs at least one .rah file".into()));
    }
    let out = cfg.out_dir();
    let mut outputs = Vec::new();
    for input in inputs {
        let h = load_heatmap(input)?;
        let path = out.join(format!("{}.pgm", stem(input)));
        write_file(&path, render_pgm(&h, log_scale))?;
        outputs.push(path);
    }
    write_manifest(cfg, "render", &outputs)
}
