//! Run configuration: built-in defaults, an optional preset, an optional TOML
//! file and command-line overrides, applied in that order.

use std::path::{Path, PathBuf};

use radplace_core::concat::AlignOptions;
use radplace_core::encoder::{EncoderArch, TrainConfig};
use radplace_core::eval::{ConcatMode, StudyConfig};
use radplace_core::heatmap::HeatmapOptions;
use radplace_core::radar::{PlatformConfig, RadarConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const PAPER_DEFAULTS: &str = "paper-defaults";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scene: Option<PathBuf>,
    pub cubes: Option<PathBuf>,
    pub heatmaps: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub frames: usize,
    /// Complex noise std added to every IF sample.
    pub noise_std: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { frames: 36, noise_std: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Cube size fed to the FFT cascade: samples kept, antenna FFT length.
    pub rows: usize,
    pub cols: usize,
    pub options: HeatmapOptions,
    /// Resample the arcsine angle axis onto a uniform grid over the FOV.
    pub uniform_azimuth: bool,
    pub azimuth_bin_deg: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 768,
            options: HeatmapOptions::default(),
            uniform_azimuth: true,
            azimuth_bin_deg: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcatConfig {
    /// Absent means `relpose` for `concat` and `none` for `eval`.
    pub mode: Option<ConcatMode>,
    pub align: AlignOptions,
    /// Canvas width kept from each mosaic, degrees. Absent keeps all of it.
    pub canvas_deg: Option<f64>,
}

impl Default for ConcatConfig {
    fn default() -> Self {
        Self {
            mode: None,
            align: AlignOptions {
                peak_spread: Some(3),
                ..AlignOptions::default()
            },
            canvas_deg: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Explicit layer plan. Absent means the compact plan for `rows`×`cols`.
    pub arch: Option<EncoderArch>,
    pub rows: usize,
    pub cols: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { arch: None, rows: 64, cols: 32 }
    }
}

impl EncoderConfig {
    pub fn arch(&self) -> EncoderArch {
        self.arch.clone().unwrap_or_else(|| EncoderArch::compact(self.rows, self.cols))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub top_k: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { top_k: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The single run seed; every random stream derives from it.
    pub seed: u64,
    pub preset: Option<String>,
    pub paths: Paths,
    pub radar: RadarConfig,
    pub platform: PlatformConfig,
    pub simulate: SimulateConfig,
    pub heatmap: HeatmapConfig,
    pub concat: ConcatConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub query: QueryConfig,
    /// Synthetic study run by `eval`. Its seed and training seed are replaced
    /// by the run seed.
    pub eval: StudyConfig,
}

/// Overrides taken from the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub concat: Option<ConcatMode>,
    pub heatmap_size: Option<(usize, usize)>,
    pub out: Option<PathBuf>,
}

/// Pins the 64×768 input and the published training schedule.
fn apply_paper_defaults(cfg: &mut RunConfig) {
    let arch = EncoderArch::for_input(64, 768);
    cfg.heatmap.rows = 64;
    cfg.heatmap.cols = 768;
    cfg.encoder = EncoderConfig {
        arch: Some(arch.clone()),
        rows: 64,
        cols: 768,
    };
    cfg.train = TrainConfig::default();
    cfg.eval.heatmap_rows = 64;
    cfg.eval.heatmap_cols = 768;
    cfg.eval.encoder_cols = 768;
    cfg.eval.train = TrainConfig {
        arch: Some(arch),
        ..TrainConfig::default()
    };
    cfg.preset = Some(PAPER_DEFAULTS.into());
}

fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn read_file(path: &Path) -> Result<toml::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parses `RxC`, e.g. `64x768`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected RxC, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("not a positive integer: `{v}`"));
    let (r, c) = (parse(r)?, parse(c)?);
    if r == 0 || c == 0 {
        return Err("heatmap size must be at least 1x1".into());
    }
    Ok((r, c))
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let file = o.config.as_deref().map(read_file).transpose()?;
        let file_preset = file
            .as_ref()
            .and_then(|f| f.get("preset"))
            .and_then(|p| p.as_str())
            .map(str::to_owned);
        let preset = o.preset.clone().or(file_preset);

        let mut cfg = RunConfig::default();
        match preset.as_deref() {
            None => {}
            Some(PAPER_DEFAULTS) => apply_paper_defaults(&mut cfg),
            Some(other) => return Err(CliError::Usage(format!("unknown preset `{other}`"))),
        }
        if let Some(file) = file {
            let mut value = toml::Value::try_from(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
            merge(&mut value, file);
            cfg = value
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
            cfg.preset = preset;
        }

        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = o.concat {
            cfg.concat.mode = Some(mode);
        }
        if let Some((r, c)) = o.heatmap_size {
            cfg.heatmap.rows = r;
            cfg.heatmap.cols = c;
            cfg.encoder.rows = r;
            cfg.encoder.cols = c;
            if let Some(a) = cfg.encoder.arch.as_mut() {
                a.input_rows = r;
                a.input_cols = c;
            }
            cfg.eval.heatmap_rows = r;
            cfg.eval.encoder_cols = c;
            if let Some(a) = cfg.eval.train.arch.as_mut() {
                a.input_rows = r;
                a.input_cols = c;
            }
        }
        if let Some(out) = &o.out {
            cfg.paths.out = Some(out.clone());
        }
        cfg.train.seed = cfg.seed;
        cfg.eval.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.radar.validate()?;
        self.platform.validate()?;
        if self.heatmap.rows == 0 || self.heatmap.cols == 0 {
            return Err(CliError::Usage("heatmap size must be at least 1x1".into()));
        }
        if !(self.heatmap.azimuth_bin_deg > 0.0) {
            return Err(CliError::Usage("azimuth_bin_deg must be > 0".into()));
        }
        if self.query.top_k == 0 {
            return Err(CliError::Usage("top_k must be >= 1".into()));
        }
        self.encoder.arch().validate()?;
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
