//! Synthetic place-recognition study: a landmark world along a route, a
//! reference traversal as the database, revisits with controlled rotation and
//! lateral offsets as queries, and a metrics report broken down by variation
//! bucket.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::concat::{
    concat_fixed_step, concat_relative_pose, detect_cycles, fix_canvas_width, sequence_offsets, AlignOptions,
};
use crate::encoder::{encode, train, EncoderArch, EncoderWeights, EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::heatmap::{fit_cols, generate_heatmap, resize_cube, uniform_azimuth, Heatmap};
use crate::placedb::{max_f1, recall_at_n, unmatched_queries, PlaceDb, PlaceRecord, QueryResult};
use crate::radar::{simulate_if_cube, sweep_headings, visible_scene, wrap_angle, PlatformConfig, RadarConfig, Scatterer};

pub const ROTATION_EDGES_DEG: [f64; 5] = [0.0, 5.0, 10.0, 20.0, 40.0];
pub const LATERAL_EDGES_M: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];

/// How a place is turned into an encoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcatMode {
    /// One forward-facing frame.
    None,
    /// One platform cycle mosaicked at the nominal step.
    Fixed,
    /// One platform cycle mosaicked at estimated offsets.
    Relpose,
}

impl FromStr for ConcatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ConcatMode::None),
            "fixed" => Ok(ConcatMode::Fixed),
            "relpose" => Ok(ConcatMode::Relpose),
            other => Err(Error::InvalidConfig(format!(
                "unknown concat mode `{other}` (expected none, fixed or relpose)"
            ))),
        }
    }
}

impl fmt::Display for ConcatMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConcatMode::None => "none",
            ConcatMode::Fixed => "fixed",
            ConcatMode::Relpose => "relpose",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Places on the evaluation route.
    pub n_places: usize,
    /// Places on the separate training route.
    pub n_train_places: usize,
    /// Revisits of the training route on top of its reference traversal.
    pub train_revisits: usize,
    pub place_spacing_m: f64,
    /// Landmarks per metre of route, both sides together.
    pub landmark_density: f64,
    pub landmark_offset_min_m: f64,
    pub landmark_offset_max_m: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Random-walk std of the route heading, degrees per metre.
    pub route_turn_std_deg: f64,
    /// Along-track placement jitter of revisits, +- metres.
    pub along_jitter_m: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_places: 72,
            n_train_places: 80,
            train_revisits: 2,
            place_spacing_m: 5.0,
            landmark_density: 0.8,
            landmark_offset_min_m: 2.0,
            landmark_offset_max_m: 40.0,
            amplitude_min: 0.3,
            amplitude_max: 3.0,
            route_turn_std_deg: 1.0,
            along_jitter_m: 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub radar: RadarConfig,
    pub platform: PlatformConfig,
    pub world: WorldConfig,
    /// Cube size fed to the FFT cascade: samples kept, antenna FFT length.
    pub heatmap_rows: usize,
    pub heatmap_cols: usize,
    /// Azimuth grid used for registration and mosaicking.
    pub azimuth_bin_deg: f64,
    /// Encoder input width; the height is `heatmap_rows`.
    pub encoder_cols: usize,
    /// Canvas width kept from a cycle mosaic, degrees.
    pub canvas_deg: f64,
    pub noise_std: f64,
    pub align: AlignOptions,
    pub train: TrainConfig,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            // Chirps are identical in a static scene, so four chirps with a
            // quarter of the noise give the same post-sum SNR as 64.
            radar: RadarConfig {
                n_chirps: 4,
                ..RadarConfig::default()
            },
            platform: PlatformConfig {
                jitter_std: 2.0,
                ..PlatformConfig::default()
            },
            world: WorldConfig::default(),
            heatmap_rows: 64,
            heatmap_cols: 768,
            azimuth_bin_deg: 0.5,
            encoder_cols: 32,
            canvas_deg: 300.0,
            noise_std: 0.25,
            align: AlignOptions {
                peak_spread: Some(3),
                ..AlignOptions::default()
            },
            train: TrainConfig {
                max_epochs: 10,
                ..TrainConfig::default()
            },
            top_k: 10,
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        self.platform.validate()?;
        let w = &self.world;
        if w.n_places == 0 || w.n_train_places == 0 {
            return Err(Error::InvalidConfig("place counts must be >= 1".into()));
        }
        if !(w.place_spacing_m > 0.0 && w.landmark_density > 0.0) {
            return Err(Error::InvalidConfig("place spacing and landmark density must be > 0".into()));
        }
        if !(0.0 <= w.landmark_offset_min_m && w.landmark_offset_min_m < w.landmark_offset_max_m) {
            return Err(Error::InvalidConfig("landmark offsets must satisfy 0 <= min < max".into()));
        }
        if !(0.0 < w.amplitude_min && w.amplitude_min <= w.amplitude_max) {
            return Err(Error::InvalidConfig("amplitudes must satisfy 0 < min <= max".into()));
        }
        if self.heatmap_rows == 0 || self.encoder_cols == 0 || self.top_k == 0 {
            return Err(Error::InvalidConfig("heatmap rows, encoder cols and top_k must be >= 1".into()));
        }
        if !(self.azimuth_bin_deg > 0.0 && self.canvas_deg > 0.0) {
            return Err(Error::InvalidConfig("azimuth bin and canvas width must be > 0".into()));
        }
        Ok(())
    }

    fn bin_rad(&self) -> f64 {
        self.azimuth_bin_deg.to_radians()
    }

    fn half_fov(&self) -> f64 {
        self.platform.fov.to_radians() / 2.0
    }

    /// Nominal per-frame rotation in registration columns.
    pub fn step_bins(&self) -> usize {
        (self.platform.step_deg() / self.azimuth_bin_deg).round() as usize
    }

    pub fn encoder_arch(&self) -> EncoderArch {
        EncoderArch::compact(self.heatmap_rows, self.encoder_cols)
    }
}

/// SplitMix64 finaliser; decorrelates sub-seeds derived from one run seed.
pub fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_WORLD: u64 = 1;
const STREAM_TRAIN_WORLD: u64 = 2;
const STREAM_VARIATION: u64 = 3;
const STREAM_CAPTURE: u64 = 4;
const STREAM_TRAIN_CAPTURE: u64 = 5;
const STREAM_TRAIN: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub position: [f64; 2],
    pub amplitude: f64,
}

/// A route sampled every metre, with landmarks scattered on both sides.
#[derive(Clone, Debug)]
pub struct World {
    /// `(x, y, heading_rad)` at 1 m arc-length spacing.
    route: Vec<[f64; 3]>,
    pub landmarks: Vec<Landmark>,
    /// Arc length of the first place.
    margin_m: f64,
    spacing_m: f64,
    pub n_places: usize,
}

/// Vehicle pose: position, heading (rad, counter-clockwise from +x).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehiclePose {
    pub position: [f64; 2],
    pub heading: f64,
}

impl World {
    pub fn generate(cfg: &WorldConfig, n_places: usize, max_range_m: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin_m = max_range_m.ceil() + 5.0;
        let length = (2.0 * margin_m + n_places as f64 * cfg.place_spacing_m).ceil() as usize + 2;
        let turn = Normal::new(0.0, cfg.route_turn_std_deg.to_radians().max(0.0))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut route = Vec::with_capacity(length);
        let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..length {
            route.push([x, y, h]);
            h += turn.sample(&mut rng);
            x += h.cos();
            y += h.sin();
        }
        let n_landmarks = (cfg.landmark_density * (length - 1) as f64).round() as usize;
        let (a_lo, a_hi) = (cfg.amplitude_min.ln(), cfg.amplitude_max.ln());
        let mut world = Self {
            route,
            landmarks: Vec::with_capacity(n_landmarks),
            margin_m,
            spacing_m: cfg.place_spacing_m,
            n_places,
        };
        for _ in 0..n_landmarks {
            let s = rng.random_range(0.0..(length - 1) as f64);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let offset = rng.random_range(cfg.landmark_offset_min_m..cfg.landmark_offset_max_m);
            let amplitude = rng.random_range(a_lo..=a_hi).exp();
            let p = world.pose_at(s, side * offset, 0.0);
            world.landmarks.push(Landmark {
                position: p.position,
                amplitude,
            });
        }
        Ok(world)
    }

    /// Arc length of place `k`.
    pub fn place_arc(&self, k: usize) -> f64 {
        self.margin_m + k as f64 * self.spacing_m
    }

    /// Pose at arc length `s`, displaced `lateral` metres to the left and
    /// rotated `rotation` rad counter-clockwise from the route tangent.
    pub fn pose_at(&self, s: f64, lateral: f64, rotation: f64) -> VehiclePose {
        let s = s.clamp(0.0, (self.route.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.route.len() - 2);
        let t = s - i as f64;
        let (a, b) = (self.route[i], self.route[i + 1]);
        let heading = a[2] + t * (b[2] - a[2]);
        let (x, y) = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
        VehiclePose {
            position: [x - lateral * heading.sin(), y + lateral * heading.cos()],
            heading: heading + rotation,
        }
    }

    /// Landmarks as scatterers in the vehicle frame. Azimuth is measured
    /// clockwise from the vehicle heading; only landmarks inside
    /// `max_range_m` are kept.
    pub fn scene_at(&self, pose: &VehiclePose, min_range_m: f64, max_range_m: f64) -> Vec<Scatterer> {
        self.landmarks
            .iter()
            .filter_map(|l| {
                let dx = l.position[0] - pose.position[0];
                let dy = l.position[1] - pose.position[1];
                let range = (dx * dx + dy * dy).sqrt();
                (range >= min_range_m && range < max_range_m).then(|| Scatterer {
                    range,
                    azimuth: wrap_angle(pose.heading - dy.atan2(dx)),
                    amplitude: l.amplitude,
                })
            })
            .collect()
    }
}

/// A capture location: which place it revisits and how it deviates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub place: usize,
    pub along_m: f64,
    /// Signed, metres to the left.
    pub lateral_m: f64,
    /// Signed, degrees counter-clockwise.
    pub rotation_deg: f64,
}

impl Visit {
    pub fn reference(place: usize) -> Self {
        Self {
            place,
            along_m: 0.0,
            lateral_m: 0.0,
            rotation_deg: 0.0,
        }
    }

    pub fn pose(&self, world: &World) -> VehiclePose {
        world.pose_at(
            world.place_arc(self.place) + self.along_m,
            self.lateral_m,
            self.rotation_deg.to_radians(),
        )
    }
}

fn signed(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let m = if hi > lo { rng.random_range(lo..hi) } else { lo };
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// A query and the variation bucket it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryVisit {
    pub visit: Visit,
    pub rotation_bucket: usize,
    pub lateral_bucket: usize,
}

/// Queries: for every place one lateral/along-track draw (lateral bucket
/// cycling with the place index), revisited once per rotation bucket.
pub fn query_plan(n_places: usize, along_jitter_m: f64, seed: u64) -> Vec<QueryVisit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_places * 4);
    for place in 0..n_places {
        let lb = place % 4;
        let lateral_m = signed(&mut rng, LATERAL_EDGES_M[lb], LATERAL_EDGES_M[lb + 1]);
        let along_m = rng.random_range(-along_jitter_m..=along_jitter_m);
        for rb in 0..4 {
            let rotation_deg = signed(&mut rng, ROTATION_EDGES_DEG[rb], ROTATION_EDGES_DEG[rb + 1]);
            out.push(QueryVisit {
                visit: Visit {
                    place,
                    along_m,
                    lateral_m,
                    rotation_deg,
                },
                rotation_bucket: rb,
                lateral_bucket: lb,
            });
        }
    }
    out
}

/// Training captures: a reference traversal plus revisits drawn across the
/// full rotation and lateral ranges.
pub fn training_plan(n_places: usize, revisits: usize, along_jitter_m: f64, seed: u64) -> Vec<Visit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Visit> = (0..n_places).map(Visit::reference).collect();
    for _ in 0..revisits {
        for place in 0..n_places {
            out.push(Visit {
                place,
                along_m: rng.random_range(-along_jitter_m..=along_jitter_m),
                lateral_m: signed(&mut rng, 0.0, LATERAL_EDGES_M[4]),
                rotation_deg: signed(&mut rng, 0.0, ROTATION_EDGES_DEG[4]),
            });
        }
    }
    out
}

/// Uniform-azimuth heatmap of one frame.
pub fn frame_heatmap(scene: &[Scatterer], cfg: &StudyConfig, seed: u64) -> Result<Heatmap> {
    let cube = simulate_if_cube(scene, &cfg.radar, cfg.noise_std, seed)?;
    let cube = resize_cube(&cube, cfg.heatmap_rows, cfg.heatmap_cols)?;
    let h = generate_heatmap(&cube, &cfg.radar)?;
    uniform_azimuth(&h, cfg.half_fov(), cfg.bin_rad())
}

fn scene_for(world: &World, visit: &Visit, cfg: &StudyConfig) -> Vec<Scatterer> {
    world.scene_at(&visit.pose(world), 0.5, 0.98 * cfg.radar.max_range())
}

/// Encoder input for one capture.
pub fn capture(world: &World, visit: &Visit, cfg: &StudyConfig, mode: ConcatMode, seed: u64) -> Result<Heatmap> {
    let scene = scene_for(world, visit, cfg);
    match mode {
        ConcatMode::None => {
            let h = frame_heatmap(&visible_scene(&scene, 0.0, cfg.platform.fov), cfg, seed)?;
            fit_cols(&h, cfg.encoder_cols)
        }
        ConcatMode::Fixed | ConcatMode::Relpose => {
            let canvas = cycle_canvas(&scene, cfg, mode, seed)?;
            fit_cols(&canvas, cfg.encoder_cols)
        }
    }
}

/// Mosaic of one platform cycle. Platform heading 0 looks 90 degrees to the
/// vehicle's left; the sweep turns clockwise through the front.
pub fn cycle_canvas(vehicle_scene: &[Scatterer], cfg: &StudyConfig, mode: ConcatMode, seed: u64) -> Result<Heatmap> {
    let platform_scene: Vec<Scatterer> = vehicle_scene
        .iter()
        .map(|s| Scatterer {
            azimuth: wrap_angle(s.azimuth + PI / 2.0),
            ..*s
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_frames = cfg.platform.frames_per_half_cycle().round().max(1.0) as usize;
    let headings = sweep_headings(&cfg.platform, n_frames, &mut rng)?;
    let frames = headings
        .iter()
        .map(|h| frame_heatmap(&visible_scene(&platform_scene, *h, cfg.platform.fov), cfg, rng.random()))
        .collect::<Result<Vec<_>>>()?;
    let offsets = sequence_offsets(&frames, &cfg.align)?;
    let segment = detect_cycles(&offsets)?[0];
    let canvas = match mode {
        ConcatMode::Relpose => concat_relative_pose(&frames, &segment, &offsets)?,
        _ => concat_fixed_step(&frames, &segment, cfg.step_bins())?,
    };
    let cols = (cfg.canvas_deg / cfg.azimuth_bin_deg).round() as usize;
    fix_canvas_width(&canvas, cols)
}

/// Per-bucket recall@1 and query count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketCell {
    pub rotation: String,
    pub lateral: String,
    pub queries: usize,
    pub matchable: usize,
    pub recall1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ConcatMode,
    pub seed: u64,
    pub places: usize,
    pub queries: usize,
    pub unmatched: usize,
    pub recall1: f64,
    pub recall5: f64,
    pub recall10: f64,
    pub max_f1: f64,
    pub f1_threshold: f64,
    /// Recall@1 per rotation bucket over all lateral buckets.
    pub rotation_recall1: Vec<Option<f64>>,
    /// Recall@1 over rotation <= 10 deg and lateral <= 1 m.
    pub small_variation_recall1: Option<f64>,
    /// Row-major 4x4 grid, rotation buckets by lateral buckets.
    pub buckets: Vec<BucketCell>,
    pub training: Vec<EpochLog>,
}

fn bucket_label(edges: &[f64; 5], i: usize) -> String {
    format!("{}-{}", edges[i], edges[i + 1])
}

fn recall_of(results: &[&QueryResult]) -> Option<f64> {
    let owned: Vec<QueryResult> = results.iter().map(|r| (*r).clone()).collect();
    recall_at_n(&owned, 1).ok()
}

/// Outcome of a study run: the report plus the artifacts it was built from.
#[derive(Clone, Debug)]
pub struct StudyRun {
    pub report: EvalReport,
    pub weights: EncoderWeights,
    pub database: PlaceDb,
}

/// Runs the full pipeline for one input mode.
pub fn run_study(cfg: &StudyConfig, mode: ConcatMode) -> Result<StudyRun> {
    cfg.validate()?;
    let max_range = cfg.radar.max_range();
    let stage = |stage: &'static str| move |e: Error| Error::Stage { stage, source: Box::new(e) };

    let train_world = World::generate(&cfg.world, cfg.world.n_train_places, max_range, sub_seed(cfg.seed, STREAM_TRAIN_WORLD, 0))?;
    let eval_world = World::generate(&cfg.world, cfg.world.n_places, max_range, sub_seed(cfg.seed, STREAM_WORLD, 0))?;

    let train_visits = training_plan(
        cfg.world.n_train_places,
        cfg.world.train_revisits,
        cfg.world.along_jitter_m,
        sub_seed(cfg.seed, STREAM_TRAIN, 0),
    );
    let dataset = train_visits
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let h = capture(&train_world, v, cfg, mode, sub_seed(cfg.seed, STREAM_TRAIN_CAPTURE, i as u64))?;
            Ok((h, v.pose(&train_world).position))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(stage("training captures"))?;
    let train_cfg = TrainConfig {
        arch: Some(cfg.train.arch.clone().unwrap_or_else(|| cfg.encoder_arch())),
        seed: sub_seed(cfg.seed, STREAM_TRAIN, 1),
        ..cfg.train.clone()
    };
    let outcome = train(&dataset, &train_cfg).map_err(stage("training"))?;
    let weights = outcome.weights;

    let mut db = PlaceDb::new();
    for place in 0..cfg.world.n_places {
        let v = Visit::reference(place);
        let h = capture(&eval_world, &v, cfg, mode, sub_seed(cfg.seed, STREAM_CAPTURE, place as u64)).map_err(stage("database captures"))?;
        let d = encode(&h, &weights).map_err(stage("database encoding"))?;
        let pose = v.pose(&eval_world);
        let mut rec = PlaceRecord::new(place as u64, d, pose.position);
        rec.heading_deg = Some(pose.heading.to_degrees());
        rec.source = format!("ref:{place}");
        db.add(rec)?;
    }

    let plan = query_plan(cfg.world.n_places, cfg.world.along_jitter_m, sub_seed(cfg.seed, STREAM_VARIATION, 0));
    let mut results = Vec::with_capacity(plan.len());
    for (i, q) in plan.iter().enumerate() {
        let seed = sub_seed(cfg.seed, STREAM_CAPTURE, (cfg.world.n_places + i) as u64);
        let h = capture(&eval_world, &q.visit, cfg, mode, seed).map_err(stage("query captures"))?;
        let d = encode(&h, &weights).map_err(stage("query encoding"))?;
        results.push(db.query_with_truth(&d, cfg.top_k, q.visit.pose(&eval_world).position)?);
    }

    let report = build_report(cfg, mode, &plan, &results, outcome.history)?;
    Ok(StudyRun {
        report,
        weights,
        database: db,
    })
}

fn build_report(
    cfg: &StudyConfig,
    mode: ConcatMode,
    plan: &[QueryVisit],
    results: &[QueryResult],
    training: Vec<EpochLog>,
) -> Result<EvalReport> {
    let select = |f: &dyn Fn(&QueryVisit) -> bool| -> Vec<&QueryResult> {
        plan.iter().zip(results).filter(|(q, _)| f(q)).map(|(_, r)| r).collect()
    };
    let mut buckets = Vec::with_capacity(16);
    for rb in 0..4 {
        for lb in 0..4 {
            let sel = select(&|q| q.rotation_bucket == rb && q.lateral_bucket == lb);
            buckets.push(BucketCell {
                rotation: bucket_label(&ROTATION_EDGES_DEG, rb),
                lateral: bucket_label(&LATERAL_EDGES_M, lb),
                queries: sel.len(),
                matchable: sel.iter().filter(|r| r.has_match == Some(true)).count(),
                recall1: recall_of(&sel),
            });
        }
    }
    let rotation_recall1 = (0..4).map(|rb| recall_of(&select(&|q| q.rotation_bucket == rb))).collect();
    let small_variation_recall1 = recall_of(&select(&|q| q.rotation_bucket < 2 && q.lateral_bucket < 2));
    let (max_f1, f1_threshold) = match max_f1(results) {
        Ok(v) => v,
        Err(Error::UndefinedRecall(_)) => (0.0, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        mode,
        seed: cfg.seed,
        places: cfg.world.n_places,
        queries: results.len(),
        unmatched: unmatched_queries(results)?,
        recall1: recall_at_n(results, 1)?,
        recall5: recall_at_n(results, 5)?,
        recall10: recall_at_n(results, 10)?,
        max_f1,
        f1_threshold,
        rotation_recall1,
        small_variation_recall1,
        buckets,
        training,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "places: {}  queries: {}  unmatched: {}", self.places, self.queries, self.unmatched);
        let _ = writeln!(s, "recall@1:  {:.4}", self.recall1);
        let _ = writeln!(s, "recall@5:  {:.4}", self.recall5);
        let _ = writeln!(s, "recall@10: {:.4}", self.recall10);
        let _ = writeln!(s, "maxF1:     {:.4}", self.max_f1);
        let _ = writeln!(s);
        let _ = writeln!(s, "recall@1 by rotation (deg) x lateral (m):");
        let _ = write!(s, "{:>10}", "");
        for lb in 0..4 {
            let _ = write!(s, "{:>10}", bucket_label(&LATERAL_EDGES_M, lb));
        }
        let _ = writeln!(s, "{:>10}", "all");
        for rb in 0..4 {
            let _ = write!(s, "{:>10}", bucket_label(&ROTATION_EDGES_DEG, rb));
            for lb in 0..4 {
                let _ = write!(s, "{:>10}", fmt_opt(self.buckets[rb * 4 + lb].recall1));
            }
            let _ = writeln!(s, "{:>10}", fmt_opt(self.rotation_recall1[rb]));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}
