//! Range-azimuth heatmaps from IF cubes.
//!
//! The heatmap is the magnitude of the chirp-summed 2-D spectrum: an FFT along
//! the sample axis resolves range, an FFT along the (zero-padded) antenna axis
//! resolves the inter-antenna phase, which maps to azimuth through an arcsine.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar::{IfCube, RadarConfig};

/// Range x azimuth magnitude map. Rows are range bins, columns azimuth bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    range_bin_m: f64,
    angle_axis: Vec<f64>,
}

impl Heatmap {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f32>,
        range_bin_m: f64,
        angle_axis: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dims(rows * cols, values.len()));
        }
        if angle_axis.len() != cols {
            return Err(Error::dims(cols, angle_axis.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format("heatmap values must be finite and >= 0".into()));
        }
        if angle_axis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("angle axis must be strictly increasing".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            range_bin_m,
            angle_axis,
        })
    }

    /// A heatmap with a uniform angle axis of `cols` bins spaced `bin_rad`
    /// starting at `first_angle`.
    pub fn uniform(
        rows: usize,
        cols: usize,
        values: Vec<f32>,
        range_bin_m: f64,
        first_angle: f64,
        bin_rad: f64,
    ) -> Result<Self> {
        let axis = (0..cols).map(|c| first_angle + c as f64 * bin_rad).collect();
        Self::new(rows, cols, values, range_bin_m, axis)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn range_bin_m(&self) -> f64 {
        self.range_bin_m
    }

    pub fn angle_axis(&self) -> &[f64] {
        &self.angle_axis
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Location of the largest value; the first one in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum()
    }

    /// Cells strictly greater than their 8-neighbourhood and above `floor`,
    /// strongest first.
    pub fn local_maxima(&self, floor: f32) -> Vec<(usize, usize, f32)> {
        let mut peaks = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let v = self.get(r, c);
                if v <= floor {
                    continue;
                }
                let mut is_peak = true;
                'nbh: for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= self.rows as i64 || cc >= self.cols as i64 {
                            continue;
                        }
                        if self.get(rr as usize, cc as usize) >= v {
                            is_peak = false;
                            break 'nbh;
                        }
                    }
                }
                if is_peak {
                    peaks.push((r, c, v));
                }
            }
        }
        peaks.sort_by(|a, b| b.2.total_cmp(&a.2));
        peaks
    }

    /// Column whose axis angle is closest to `angle`.
    pub fn nearest_col(&self, angle: f64) -> usize {
        let idx = self.angle_axis.partition_point(|a| *a < angle);
        if idx == 0 {
            0
        } else if idx >= self.cols {
            self.cols - 1
        } else if (self.angle_axis[idx] - angle) < (angle - self.angle_axis[idx - 1]) {
            idx
        } else {
            idx - 1
        }
    }
}

/// Range of a reflector whose IF tone has frequency `f_if` Hz.
pub fn range_from_frequency(f_if: f64, cfg: &RadarConfig) -> Result<f64> {
    if !(f_if >= 0.0) {
        return Err(Error::Domain(format!("IF frequency {f_if} Hz must be >= 0")));
    }
    Ok(f_if * cfg.c / (2.0 * cfg.slope))
}

/// Azimuth of arrival for an inter-antenna phase difference `omega`.
pub fn angle_from_phase(omega: f64, cfg: &RadarConfig) -> Result<f64> {
    let arg = cfg.wavelength * omega / (2.0 * PI * cfg.antenna_spacing);
    // Tolerate rounding at the +/-1 endpoints of the visible region.
    if !(arg.abs() <= 1.0 + 1e-12) {
        return Err(Error::AngleAmbiguity(arg));
    }
    Ok(arg.clamp(-1.0, 1.0).asin())
}

/// Truncates the sample axis to `target_rows` and zero-pads the antenna axis
/// to `target_cols`. The chirp axis is untouched.
pub fn resize_cube(cube: &IfCube, target_rows: usize, target_cols: usize) -> Result<IfCube> {
    let (ns, nc, nr) = cube.dims();
    if target_rows > ns {
        return Err(Error::Resize(format!(
            "cannot upsample the sample axis from {ns} to {target_rows}"
        )));
    }
    if target_rows == 0 {
        return Err(Error::Resize("target rows must be >= 1".into()));
    }
    if target_cols < nr {
        return Err(Error::Resize(format!(
            "cannot shrink the antenna axis from {nr} to {target_cols}"
        )));
    }
    let mut out = IfCube::zeros(target_rows, nc, target_cols);
    for i in 0..target_rows {
        for j in 0..nc {
            for k in 0..nr {
                out.set(i, j, k, cube.get(i, j, k));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// No tapering.
    #[default]
    Rectangular,
    /// Hann taper on the sample axis and on the physical antennas.
    Hann,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapOptions {
    pub window: Window,
    /// Rows whose range reaches this value are discarded.
    pub max_range_m: Option<f64>,
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Range-azimuth heatmap of `cube` with default options.
pub fn generate_heatmap(cube: &IfCube, cfg: &RadarConfig) -> Result<Heatmap> {
    generate_heatmap_with(cube, cfg, &HeatmapOptions::default())
}

pub fn generate_heatmap_with(cube: &IfCube, cfg: &RadarConfig, opts: &HeatmapOptions) -> Result<Heatmap> {
    if !cube.is_finite() {
        return Err(Error::NonFinite);
    }
    let (ns, nc, nr) = cube.dims();
    if ns == 0 || nc == 0 || nr == 0 {
        return Err(Error::dims("non-empty cube", format!("{ns}x{nc}x{nr}")));
    }

    let (row_win, ant_win) = match opts.window {
        Window::Rectangular => (vec![1.0; ns], vec![1.0; nr]),
        Window::Hann => {
            let phys = cfg.n_antennas.min(nr);
            let mut w = hann(phys);
            w.resize(nr, 0.0);
            (hann(ns), w)
        }
    };

    // The DFTs are linear, so summing chirps before transforming equals the
    // sum of per-chirp spectra.
    let mut grid = vec![Complex64::new(0.0, 0.0); ns * nr];
    for i in 0..ns {
        for j in 0..nc {
            for k in 0..nr {
                let v = cube.get(i, j, k);
                grid[i * nr + k] += Complex64::new(v.re as f64, v.im as f64);
            }
        }
    }
    for i in 0..ns {
        for k in 0..nr {
            grid[i * nr + k] *= row_win[i] * ant_win[k];
        }
    }

    let mut planner = FftPlanner::<f64>::new();
    let range_fft = planner.plan_fft_forward(ns);
    let mut column = vec![Complex64::new(0.0, 0.0); ns];
    for k in 0..nr {
        for i in 0..ns {
            column[i] = grid[i * nr + k];
        }
        range_fft.process(&mut column);
        for i in 0..ns {
            grid[i * nr + k] = column[i];
        }
    }
    let angle_fft = planner.plan_fft_forward(nr);
    for row in grid.chunks_exact_mut(nr) {
        angle_fft.process(row);
    }

    let range_bin_m = range_from_frequency(cfg.sample_rate / ns as f64, cfg)?;
    let rows = match opts.max_range_m {
        Some(max) => (0..ns).take_while(|r| (*r as f64) * range_bin_m < max).count(),
        None => ns,
    };

    // fftshift: column c holds FFT bin (c - nr/2) mod nr.
    let half = nr / 2;
    let mut values = Vec::with_capacity(rows * nr);
    for i in 0..rows {
        for c in 0..nr {
            let bin = (c + nr - half) % nr;
            values.push(grid[i * nr + bin].norm() as f32);
        }
    }
    let angle_axis = (0..nr)
        .map(|c| {
            let bin = c as f64 - half as f64;
            angle_from_phase(2.0 * PI * bin / nr as f64, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    Heatmap::new(rows, nr, values, range_bin_m, angle_axis)
}

/// Heatmap row expected to hold a reflector at `range_m` for a cube with
/// `n_rows` samples.
pub fn predicted_row(range_m: f64, n_rows: usize, cfg: &RadarConfig) -> usize {
    (cfg.if_frequency(range_m) * n_rows as f64 / cfg.sample_rate).round() as usize
}

/// Heatmap column expected to hold a reflector at `azimuth` for an antenna
/// axis of `n_cols` bins.
pub fn predicted_col(azimuth: f64, n_cols: usize, cfg: &RadarConfig) -> usize {
    let omega = cfg.phase_step(azimuth);
    let bin = (omega * n_cols as f64 / (2.0 * PI)).round() as i64;
    (bin + (n_cols / 2) as i64).rem_euclid(n_cols as i64) as usize
}

/// Resamples the azimuth axis onto a uniform grid covering `[-half_fov,
/// half_fov]` in steps of `bin_rad`, by linear interpolation.
///
/// Rotating the sensor translates a uniformly sampled heatmap along its
/// columns, which is what the mosaicking search assumes.
pub fn uniform_azimuth(h: &Heatmap, half_fov: f64, bin_rad: f64) -> Result<Heatmap> {
    if !(half_fov > 0.0 && bin_rad > 0.0) {
        return Err(Error::InvalidConfig("half FOV and bin width must be > 0".into()));
    }
    let axis = h.angle_axis();
    if half_fov > axis[axis.len() - 1].min(-axis[0]) + 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "half FOV {half_fov} rad exceeds the heatmap's angular coverage"
        )));
    }
    let n_half = (half_fov / bin_rad + 1e-9).floor() as usize;
    let cols = 2 * n_half + 1;
    let first = -(n_half as f64) * bin_rad;
    let mut taps = Vec::with_capacity(cols);
    for c in 0..cols {
        let a = first + c as f64 * bin_rad;
        let hi = axis.partition_point(|x| *x < a).clamp(1, axis.len() - 1);
        let lo = hi - 1;
        let t = ((a - axis[lo]) / (axis[hi] - axis[lo])).clamp(0.0, 1.0);
        taps.push((lo, hi, t));
    }
    let mut values = Vec::with_capacity(h.rows() * cols);
    for r in 0..h.rows() {
        let row = h.row(r);
        for &(lo, hi, t) in &taps {
            values.push(((1.0 - t) * row[lo] as f64 + t * row[hi] as f64) as f32);
        }
    }
    Heatmap::uniform(h.rows(), cols, values, h.range_bin_m(), first, bin_rad)
}

/// Resizes the column axis to exactly `cols` bins by max-pooling (shrinking)
/// or nearest-neighbour repetition (growing). The angle axis is resampled at
/// bin centres.
pub fn fit_cols(h: &Heatmap, cols: usize) -> Result<Heatmap> {
    if cols == 0 {
        return Err(Error::Resize("target columns must be >= 1".into()));
    }
    if cols == h.cols() {
        return Ok(h.clone());
    }
    let src = h.cols();
    let span = |c: usize| {
        let lo = c * src / cols;
        let hi = ((c + 1) * src).div_ceil(cols).max(lo + 1).min(src);
        (lo, hi)
    };
    let mut values = Vec::with_capacity(h.rows() * cols);
    for r in 0..h.rows() {
        let row = h.row(r);
        for c in 0..cols {
            let (lo, hi) = span(c);
            values.push(row[lo..hi].iter().copied().fold(0.0, f32::max));
        }
    }
    let axis = h.angle_axis();
    let (a0, a1) = (axis[0], axis[src - 1]);
    let step = if src > 1 { (a1 - a0) / (src - 1) as f64 } else { 1e-3 };
    let new_step = step * src as f64 / cols as f64;
    let start = a0 - step / 2.0 + new_step / 2.0;
    Heatmap::uniform(h.rows(), cols, values, h.range_bin_m(), start, new_step)
}

/// Crops or zero-pads rows to exactly `rows`.
pub fn fit_rows(h: &Heatmap, rows: usize) -> Result<Heatmap> {
    if rows == h.rows() {
        return Ok(h.clone());
    }
    let mut values = vec![0.0f32; rows * h.cols()];
    for r in 0..rows.min(h.rows()) {
        values[r * h.cols()..(r + 1) * h.cols()].copy_from_slice(h.row(r));
    }
    Heatmap::new(rows, h.cols(), values, h.range_bin_m(), h.angle_axis().to_vec())
}

/// Writes an 8-bit binary PGM, min-max normalised, optionally on a log scale.
pub fn render_pgm(h: &Heatmap, log_scale: bool) -> Vec<u8> {
    let mapped: Vec<f64> = h
        .values()
        .iter()
        .map(|v| if log_scale { (1.0 + *v as f64).ln() } else { *v as f64 })
        .collect();
    let lo = mapped.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mapped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", h.cols(), h.rows()).into_bytes();
    // Far range at the top.
    for r in (0..h.rows()).rev() {
        for c in 0..h.cols() {
            out.push(((mapped[r * h.cols() + c] - lo) * scale).round() as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::{simulate_if_cube, Scatterer};
    use num_complex::Complex32;

    fn cfg() -> RadarConfig {
        RadarConfig {
            n_samples: 64,
            n_chirps: 4,
            ..RadarConfig::default()
        }
    }

    #[test]
    fn range_from_frequency_values() {
        let c = RadarConfig {
            c: 3e8,
            ..RadarConfig::default()
        };
        assert_eq!(range_from_frequency(0.0, &c).unwrap(), 0.0);
        assert!((range_from_frequency(2e6, &c).unwrap() - 10.0).abs() < 1e-12);
        assert!((range_from_frequency(4e6, &c).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(range_from_frequency(-1.0, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn angle_from_phase_values() {
        let c = RadarConfig::default();
        assert_eq!(angle_from_phase(0.0, &c).unwrap(), 0.0);
        assert!((angle_from_phase(PI, &c).unwrap() - PI / 2.0).abs() < 1e-12);
        assert!((angle_from_phase(-PI / 2.0, &c).unwrap() + 0.5236).abs() < 1e-4);
        assert!(matches!(angle_from_phase(4.0, &c), Err(Error::AngleAmbiguity(_))));
    }

    #[test]
    fn resize_to_table_size() {
        let c = RadarConfig {
            n_chirps: 2,
            ..RadarConfig::default()
        };
        let cube = simulate_if_cube(&[Scatterer::new(7.0, 0.2, 1.0)], &c, 0.0, 0).unwrap();
        let r = resize_cube(&cube, 64, 768).unwrap();
        assert_eq!(r.dims(), (64, 2, 768));
        assert_eq!(r.get(5, 1, 3), cube.get(5, 1, 3));
        assert_eq!(r.get(5, 1, 8), Complex32::new(0.0, 0.0));
        assert_eq!(resize_cube(&cube, 256, 8).unwrap(), cube);
        assert!(resize_cube(&cube, 257, 8).is_err());
        assert!(resize_cube(&cube, 64, 4).is_err());
    }

    #[test]
    fn zero_cube_zero_heatmap() {
        let c = cfg();
        let h = generate_heatmap(&IfCube::zeros(64, 4, 8), &c).unwrap();
        assert!(h.values().iter().all(|v| *v == 0.0));
        assert_eq!(h.dims(), (64, 8));
    }

    #[test]
    fn non_finite_rejected() {
        let mut cube = IfCube::zeros(8, 1, 2);
        cube.set(0, 0, 0, Complex32::new(f32::NAN, 0.0));
        assert!(matches!(generate_heatmap(&cube, &cfg()), Err(Error::NonFinite)));
    }

    #[test]
    fn single_scatterer_peak() {
        let c = cfg();
        let cube = simulate_if_cube(&[Scatterer::new(10.0, 0.0, 1.0)], &c, 0.0, 0).unwrap();
        let cube = resize_cube(&cube, 64, 64).unwrap();
        let h = generate_heatmap(&cube, &c).unwrap();
        assert_eq!(h.argmax(), (predicted_row(10.0, 64, &c), 32));
        assert_eq!(h.angle_axis()[32], 0.0);
    }

    #[test]
    fn angle_axis_is_monotone() {
        let c = cfg();
        let h = generate_heatmap(&IfCube::zeros(4, 1, 16), &c).unwrap();
        assert!((h.angle_axis()[0] + PI / 2.0).abs() < 1e-12);
        assert!(h.angle_axis().windows(2).all(|w| w[1] > w[0]));
    }

    /// Literal order: transform every chirp, then sum.
    #[test]
    fn chirp_sum_matches_per_chirp_transform() {
        let c = RadarConfig {
            n_samples: 8,
            n_chirps: 3,
            n_antennas: 4,
            ..RadarConfig::default()
        };
        let mut cube = simulate_if_cube(
            &[Scatterer::new(10.0, 0.4, 1.0), Scatterer::new(30.0, -0.2, 0.5)],
            &c,
            0.3,
            5,
        )
        .unwrap();
        // Make chirps differ.
        cube.set(2, 1, 3, Complex32::new(1.5, -0.5));
        let h = generate_heatmap(&cube, &c).unwrap();
        let (ns, nc, nr) = cube.dims();
        for i in 0..ns {
            for col in 0..nr {
                let q = (col + nr - nr / 2) % nr;
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..nc {
                    for n in 0..ns {
                        for k in 0..nr {
                            let v = cube.get(n, j, k);
                            let ph = -2.0 * PI * ((i * n) as f64 / ns as f64 + (q * k) as f64 / nr as f64);
                            acc += Complex64::new(v.re as f64, v.im as f64) * Complex64::from_polar(1.0, ph);
                        }
                    }
                }
                assert!((acc.norm() - h.get(i, col) as f64).abs() < 1e-4 * (1.0 + acc.norm()));
            }
        }
    }

    #[test]
    fn max_range_crop() {
        let c = cfg();
        let opts = HeatmapOptions {
            max_range_m: Some(10.0),
            ..Default::default()
        };
        let h = generate_heatmap_with(&IfCube::zeros(64, 1, 8), &c, &opts).unwrap();
        assert!(h.rows() < 64);
        assert!((h.rows() - 1) as f64 * h.range_bin_m() < 10.0);
        assert!(h.rows() as f64 * h.range_bin_m() >= 10.0);
    }

    #[test]
    fn hann_window_still_peaks_in_place() {
        let c = cfg();
        let cube = simulate_if_cube(&[Scatterer::new(20.0, 0.3, 1.0)], &c, 0.0, 0).unwrap();
        let cube = resize_cube(&cube, 64, 128).unwrap();
        let opts = HeatmapOptions {
            window: Window::Hann,
            ..Default::default()
        };
        let h = generate_heatmap_with(&cube, &c, &opts).unwrap();
        let (r, col) = h.argmax();
        assert!(r.abs_diff(predicted_row(20.0, 64, &c)) <= 1);
        assert!(col.abs_diff(predicted_col(0.3, 128, &c)) <= 1);
    }

    #[test]
    fn uniform_resampling_keeps_peak_angle() {
        let c = cfg();
        let cube = simulate_if_cube(&[Scatterer::new(20.0, 0.5, 1.0)], &c, 0.0, 0).unwrap();
        let h = generate_heatmap(&resize_cube(&cube, 64, 768).unwrap(), &c).unwrap();
        let u = uniform_azimuth(&h, 60f64.to_radians(), 0.5f64.to_radians()).unwrap();
        assert_eq!(u.cols(), 241);
        let (_, col) = u.argmax();
        assert!((u.angle_axis()[col] - 0.5).abs() <= 0.5f64.to_radians());
    }

    #[test]
    fn fit_cols_pools_and_repeats() {
        let h = Heatmap::uniform(1, 4, vec![1.0, 3.0, 2.0, 0.5], 1.0, 0.0, 1.0).unwrap();
        let s = fit_cols(&h, 2).unwrap();
        assert_eq!(s.values(), &[3.0, 2.0]);
        let g = fit_cols(&h, 8).unwrap();
        assert_eq!(g.values(), &[1.0, 1.0, 3.0, 3.0, 2.0, 2.0, 0.5, 0.5]);
        assert!((s.angle_axis()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pgm_header() {
        let h = Heatmap::uniform(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 1.0, 0.0, 1.0).unwrap();
        let pgm = render_pgm(&h, false);
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 6..], &[153, 204, 255, 0, 51, 102]);
    }
}
