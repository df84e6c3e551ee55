//! FMCW radar configuration, point-scatterer scenes and the forward IF-signal
//! simulator.
//!
//! The simulator models a static scene seen by a uniform linear receive array:
//! every scatterer contributes one complex tone along the fast-time (sample)
//! axis at `f_IF = 2 d S / c` and a linear phase progression
//! `omega = 2 pi l sin(theta) / lambda` along the antenna axis. All chirps of a
//! frame are identical (no Doppler).

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radar front-end parameters.
///
/// The defaults are engineering choices for a 77 GHz single-chip sensor with
/// eight virtual receive channels; they are not vendor-published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarConfig {
    /// Chirp slope, Hz/s.
    pub slope: f64,
    /// Carrier wavelength, m.
    pub wavelength: f64,
    /// Receive antenna spacing, m.
    pub antenna_spacing: f64,
    /// ADC sample rate, Hz.
    pub sample_rate: f64,
    pub n_samples: usize,
    pub n_chirps: usize,
    pub n_antennas: usize,
    /// Propagation speed, m/s.
    pub c: f64,
    /// Exponent `p` of the `cos(theta)^p` amplitude taper versus boresight
    /// offset. Zero disables the taper.
    pub gain_taper_exponent: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        let wavelength = 3.9e-3;
        Self {
            slope: 30e12,
            wavelength,
            antenna_spacing: wavelength / 2.0,
            sample_rate: 1e7,
            n_samples: 256,
            n_chirps: 64,
            n_antennas: 8,
            c: SPEED_OF_LIGHT,
            gain_taper_exponent: 1.0,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slope", self.slope),
            ("wavelength", self.wavelength),
            ("antenna_spacing", self.antenna_spacing),
            ("sample_rate", self.sample_rate),
            ("c", self.c),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.n_samples == 0 || self.n_chirps == 0 || self.n_antennas == 0 {
            return Err(Error::InvalidConfig(
                "n_samples, n_chirps and n_antennas must be >= 1".into(),
            ));
        }
        if !(self.gain_taper_exponent.is_finite() && self.gain_taper_exponent >= 0.0) {
            return Err(Error::InvalidConfig(
                "gain_taper_exponent must be finite and >= 0".into(),
            ));
        }
        if !self.angle_unambiguous() {
            log::warn!(
                "antenna spacing {} m exceeds half a wavelength ({} m); azimuth is ambiguous",
                self.antenna_spacing,
                self.wavelength / 2.0
            );
        }
        Ok(())
    }

    /// Whether `antenna_spacing <= wavelength / 2`.
    pub fn angle_unambiguous(&self) -> bool {
        self.antenna_spacing <= self.wavelength / 2.0 * (1.0 + 1e-12)
    }

    /// Largest range whose IF tone stays below the sample rate.
    pub fn max_range(&self) -> f64 {
        self.sample_rate * self.c / (2.0 * self.slope)
    }

    /// IF tone frequency of a reflector at `range_m`.
    pub fn if_frequency(&self, range_m: f64) -> f64 {
        2.0 * range_m * self.slope / self.c
    }

    /// Inter-antenna phase step of a reflector at azimuth `azimuth_rad`.
    pub fn phase_step(&self, azimuth_rad: f64) -> f64 {
        2.0 * PI * self.antenna_spacing * azimuth_rad.sin() / self.wavelength
    }
}

/// A point reflector in sensor polar coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Range, m.
    pub range: f64,
    /// Azimuth, rad. Positive azimuth maps to increasing heatmap columns.
    pub azimuth: f64,
    /// Linear reflectivity.
    pub amplitude: f64,
}

impl Scatterer {
    pub fn new(range: f64, azimuth: f64, amplitude: f64) -> Self {
        Self {
            range,
            azimuth,
            amplitude,
        }
    }

    fn validate(&self, cfg: &RadarConfig) -> Result<()> {
        if !(self.range.is_finite() && self.range >= 0.0) {
            return Err(Error::InvalidScatterer(format!("range {} m", self.range)));
        }
        if !(self.azimuth.is_finite() && self.azimuth.abs() < PI / 2.0) {
            return Err(Error::InvalidScatterer(format!(
                "azimuth {} rad outside (-pi/2, pi/2)",
                self.azimuth
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::InvalidScatterer(format!(
                "amplitude {} must be > 0",
                self.amplitude
            )));
        }
        let max_range = cfg.max_range();
        if self.range >= max_range {
            return Err(Error::RangeAliasing {
                range_m: self.range,
                max_range_m: max_range,
            });
        }
        Ok(())
    }
}

/// Complex ADC samples indexed `(sample i, chirp j, antenna k)`, stored
/// i-major, then j, then k.
#[derive(Clone, Debug, PartialEq)]
pub struct IfCube {
    n_samples: usize,
    n_chirps: usize,
    n_antennas: usize,
    data: Vec<Complex32>,
}

impl IfCube {
    pub fn zeros(n_samples: usize, n_chirps: usize, n_antennas: usize) -> Self {
        Self {
            n_samples,
            n_chirps,
            n_antennas,
            data: vec![Complex32::new(0.0, 0.0); n_samples * n_chirps * n_antennas],
        }
    }

    pub fn from_data(dims: (usize, usize, usize), data: Vec<Complex32>) -> Result<Self> {
        let (ns, nc, nr) = dims;
        if ns * nc * nr != data.len() {
            return Err(Error::dims(ns * nc * nr, data.len()));
        }
        Ok(Self {
            n_samples: ns,
            n_chirps: nc,
            n_antennas: nr,
            data,
        })
    }

    /// `(N_S, N_C, N_R)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_samples, self.n_chirps, self.n_antennas)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_chirps + j) * self.n_antennas + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex32 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: Complex32) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Rotating-platform motion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    /// Nominal angular speed, deg/s.
    pub angular_speed: f64,
    /// Radar frame rate, Hz.
    pub frame_rate: f64,
    /// Back-and-forth sweep extent, deg.
    pub sweep_extent: f64,
    /// Standard deviation of the per-frame rotation step, deg.
    pub jitter_std: f64,
    /// Sensor field of view, deg. Scatterers outside it are not simulated.
    pub fov: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            angular_speed: 150.0,
            frame_rate: 10.0,
            sweep_extent: 180.0,
            jitter_std: 0.0,
            fov: 120.0,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.angular_speed.is_finite() && self.angular_speed > 0.0) {
            return Err(Error::InvalidConfig("angular_speed must be > 0".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::InvalidConfig("frame_rate must be > 0".into()));
        }
        if !(self.sweep_extent.is_finite() && self.sweep_extent > 0.0) {
            return Err(Error::InvalidConfig("sweep_extent must be > 0".into()));
        }
        if !(self.jitter_std.is_finite() && self.jitter_std >= 0.0) {
            return Err(Error::InvalidConfig("jitter_std must be >= 0".into()));
        }
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(Error::InvalidConfig("fov must lie in (0, 180) deg".into()));
        }
        Ok(())
    }

    /// Nominal rotation per frame, deg.
    pub fn step_deg(&self) -> f64 {
        self.angular_speed / self.frame_rate
    }

    /// Frames in one monotone half of the back-and-forth sweep.
    pub fn frames_per_half_cycle(&self) -> f64 {
        self.sweep_extent / self.step_deg()
    }
}

/// One frame of a platform sweep.
#[derive(Clone, Debug)]
pub struct SweepFrame {
    pub cube: IfCube,
    /// True platform heading, deg, within `[0, sweep_extent]`.
    pub heading_deg: f64,
}

/// Simulates one frame of IF samples for `scene`.
///
/// `noise_std` is the total standard deviation of circularly-symmetric complex
/// Gaussian noise added to every element.
pub fn simulate_if_cube(
    scene: &[Scatterer],
    cfg: &RadarConfig,
    noise_std: f64,
    seed: u64,
) -> Result<IfCube> {
    cfg.validate()?;
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise_std {noise_std} must be >= 0")));
    }
    for s in scene {
        s.validate(cfg)?;
    }

    let (ns, nc, nr) = (cfg.n_samples, cfg.n_chirps, cfg.n_antennas);
    // One chirp of noise-free signal; all chirps are identical.
    let mut chirp = vec![Complex64::new(0.0, 0.0); ns * nr];
    for s in scene {
        let amp = s.amplitude * s.azimuth.cos().powf(cfg.gain_taper_exponent);
        let sample_step = 2.0 * PI * cfg.if_frequency(s.range) / cfg.sample_rate;
        let antenna_step = cfg.phase_step(s.azimuth);
        let carrier = 4.0 * PI * s.range / cfg.wavelength;
        for i in 0..ns {
            let row = carrier + sample_step * i as f64;
            for k in 0..nr {
                chirp[i * nr + k] += Complex64::from_polar(amp, row + antenna_step * k as f64);
            }
        }
    }

    let mut cube = IfCube::zeros(ns, nc, nr);
    for i in 0..ns {
        for j in 0..nc {
            for k in 0..nr {
                let v = chirp[i * nr + k];
                cube.set(i, j, k, Complex32::new(v.re as f32, v.im as f32));
            }
        }
    }

    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std / 2f64.sqrt())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in cube.data.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v += Complex32::new(re as f32, im as f32);
        }
    }
    Ok(cube)
}

/// Heading of a back-and-forth sweep over `[0, extent]` after travelling
/// `phase_deg` of accumulated rotation.
pub fn triangle_heading(phase_deg: f64, extent: f64) -> f64 {
    let m = phase_deg.rem_euclid(2.0 * extent);
    if m <= extent {
        m
    } else {
        2.0 * extent - m
    }
}

/// Headings of an `n_frames` sweep starting at heading 0.
///
/// Each frame advances the sweep phase by `step + N(0, jitter_std)` degrees,
/// clamped at zero so the platform may stall but never runs backwards.
pub fn sweep_headings(pcfg: &PlatformConfig, n_frames: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    pcfg.validate()?;
    let step = pcfg.step_deg();
    let jitter = if pcfg.jitter_std > 0.0 {
        Some(Normal::new(0.0, pcfg.jitter_std).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut phase = 0.0;
    let mut headings = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        headings.push(triangle_heading(phase, pcfg.sweep_extent));
        let delta = match &jitter {
            Some(n) => (step + n.sample(rng)).max(0.0),
            None => step,
        };
        phase += delta;
    }
    Ok(headings)
}

/// Re-expresses a platform-frame scene in the sensor frame at `heading_deg`,
/// dropping scatterers outside the field of view.
///
/// Scene azimuths are measured in the platform frame at heading 0 and may take
/// any value; a heading increase rotates the sensor towards positive azimuth.
pub fn visible_scene(scene: &[Scatterer], heading_deg: f64, fov_deg: f64) -> Vec<Scatterer> {
    let half = fov_deg.to_radians() / 2.0;
    let heading = heading_deg.to_radians();
    scene
        .iter()
        .filter_map(|s| {
            let az = wrap_angle(s.azimuth - heading);
            (az.abs() <= half).then_some(Scatterer { azimuth: az, ..*s })
        })
        .collect()
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Simulates a rotating-platform capture of `n_frames` frames.
pub fn simulate_platform_sweep(
    scene: &[Scatterer],
    cfg: &RadarConfig,
    pcfg: &PlatformConfig,
    n_frames: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<SweepFrame>> {
    if n_frames == 0 {
        return Err(Error::InvalidConfig("n_frames must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let headings = sweep_headings(pcfg, n_frames, &mut rng)?;
    headings
        .into_iter()
        .map(|heading_deg| {
            let frame_seed = rng.random::<u64>();
            let visible = visible_scene(scene, heading_deg, pcfg.fov);
            let cube = simulate_if_cube(&visible, cfg, noise_std, frame_seed)?;
            Ok(SweepFrame { cube, heading_deg })
        })
        .collect()
}

/// Parses a scene listing, one `range_m azimuth_deg amplitude` per line.
pub fn parse_scene(text: &str) -> Result<Vec<Scatterer>> {
    let mut scene = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let mut vals = [0.0; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("not a number: {f:?}"),
            })?;
        }
        scene.push(Scatterer::new(vals[0], vals[1].to_radians(), vals[2]));
    }
    Ok(scene)
}
