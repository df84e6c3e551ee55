//! Rotating-platform heatmap mosaicking.
//!
//! Consecutive frames of a sweep are registered by an exhaustive integer
//! (range, angle) translation search that maximises cosine similarity over the
//! overlapping region. The signs of the angle offsets split the sweep into
//! monotone rotation cycles, and each cycle is max-unioned onto one wide
//! canvas at the accumulated offsets.
//!
//! Offsets are indexed forward: `offsets[t]` translates frame `t + 1` onto
//! frame `t`, so it also labels the direction the platform moves when it
//! leaves frame `t`. The last frame of a sequence carries a zero offset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;

/// Integer translation between two heatmaps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseOffset {
    /// Range shift, rows.
    pub r_offset: i64,
    /// Angle shift, columns. Content at column `j` of the earlier frame shows
    /// up at `j + a_offset` in the later one, so turning the platform towards
    /// positive azimuth gives a negative value.
    pub a_offset: i64,
    /// Cosine similarity of the best alignment.
    pub score: f64,
}

impl PoseOffset {
    pub fn zero() -> Self {
        Self {
            r_offset: 0,
            a_offset: 0,
            score: 0.0,
        }
    }

    pub fn direction(&self) -> i8 {
        self.a_offset.signum() as i8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    pub r_window: usize,
    pub a_window: usize,
    /// Smallest admissible overlap, as a fraction of the heatmap area.
    pub min_overlap: f64,
    /// When set, both maps are reduced to `peak_map(.., spread)` before the
    /// search.
    pub peak_spread: Option<usize>,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            r_window: 4,
            a_window: 40,
            min_overlap: 0.25,
            peak_spread: None,
        }
    }
}

impl AlignOptions {
    /// Angle window spanning `deg` degrees on a grid of `bin_deg`-degree
    /// columns.
    pub fn with_angle_span(mut self, deg: f64, bin_deg: f64) -> Self {
        self.a_window = (deg / bin_deg).round() as usize;
        self
    }
}

/// A monotone run of frames, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSegment {
    pub start: usize,
    pub end: usize,
    /// Sign of the segment's angle offsets.
    pub direction: i8,
}

impl CycleSegment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Summed-area table of squared values, for O(1) rectangle norms.
struct SquaredIntegral {
    cols: usize,
    table: Vec<f64>,
}

impl SquaredIntegral {
    fn new(h: &Heatmap) -> Self {
        let (rows, cols) = h.dims();
        let w = cols + 1;
        let mut table = vec![0.0; (rows + 1) * w];
        for r in 0..rows {
            let mut run = 0.0;
            for c in 0..cols {
                let v = h.get(r, c) as f64;
                run += v * v;
                table[(r + 1) * w + c + 1] = table[r * w + c + 1] + run;
            }
        }
        Self { cols: w, table }
    }

    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let w = self.cols;
        self.table[r1 * w + c1] - self.table[r0 * w + c1] - self.table[r1 * w + c0] + self.table[r0 * w + c0]
    }
}

/// Tie-break key: smaller |a|, then smaller |r|, then lexicographic (r, a).
fn tie_key(r: i64, a: i64) -> (u64, u64, i64, i64) {
    (a.unsigned_abs(), r.unsigned_abs(), r, a)
}

/// Displacement `(r, a)` of `h_cur` relative to `h_prev`: the shift for which
/// `h_cur(i + r, j + a)` best matches `h_prev(i, j)`. Nothing wraps around.
pub fn estimate_offset(h_prev: &Heatmap, h_cur: &Heatmap, r_window: usize, a_window: usize) -> Result<PoseOffset> {
    estimate_offset_with(
        h_prev,
        h_cur,
        &AlignOptions {
            r_window,
            a_window,
            ..AlignOptions::default()
        },
    )
}

pub fn estimate_offset_with(h_prev: &Heatmap, h_cur: &Heatmap, opts: &AlignOptions) -> Result<PoseOffset> {
    let mut best: Option<PoseOffset> = None;
    for c in offset_scores(h_prev, h_cur, opts)? {
        let better = match &best {
            None => true,
            Some(b) => {
                c.score > b.score
                    || (c.score == b.score && tie_key(c.r_offset, c.a_offset) < tie_key(b.r_offset, b.a_offset))
            }
        };
        if better {
            best = Some(c);
        }
    }
    match best {
        Some(b) if b.score.is_finite() => Ok(b),
        _ => Err(Error::AlignmentFailure("every overlap has zero energy".into())),
    }
}

/// Cosine similarity of every admissible shift, in row-major `(r, a)` order.
/// Zero-energy overlaps score negative infinity.
pub fn offset_scores(h_prev: &Heatmap, h_cur: &Heatmap, opts: &AlignOptions) -> Result<Vec<PoseOffset>> {
    if h_prev.dims() != h_cur.dims() {
        return Err(Error::dims(
            format!("{:?}", h_prev.dims()),
            format!("{:?}", h_cur.dims()),
        ));
    }
    if let Some(spread) = opts.peak_spread {
        let plain = AlignOptions {
            peak_spread: None,
            ..*opts
        };
        return offset_scores(&peak_map(h_prev, spread)?, &peak_map(h_cur, spread)?, &plain);
    }
    let (rows, cols) = h_prev.dims();
    let area = (rows * cols) as f64;
    let prev_sq = SquaredIntegral::new(h_prev);
    let cur_sq = SquaredIntegral::new(h_cur);
    let rw = opts.r_window as i64;
    let aw = opts.a_window as i64;

    let mut out = Vec::new();
    for ro in -rw..=rw {
        for ao in -aw..=aw {
            // h_prev(i, j) is compared with h_cur(i + ro, j + ao); (r, a) is
            // the shift that brings h_cur back onto h_prev.
            let (r, a) = (-ro, -ao);
            // Overlap in h_prev coordinates.
            let r0 = r.max(0) as usize;
            let r1 = (rows as i64 + r.min(0)).max(0) as usize;
            let c0 = a.max(0) as usize;
            let c1 = (cols as i64 + a.min(0)).max(0) as usize;
            if r1 <= r0 || c1 <= c0 {
                continue;
            }
            if (((r1 - r0) * (c1 - c0)) as f64) < opts.min_overlap * area {
                continue;
            }
            let np = prev_sq.rect(r0, r1, c0, c1);
            let nc = cur_sq.rect(
                (r0 as i64 - r) as usize,
                (r1 as i64 - r) as usize,
                (c0 as i64 - a) as usize,
                (c1 as i64 - a) as usize,
            );
            let score = if np > 0.0 && nc > 0.0 {
                let mut dot = 0.0;
                for i in r0..r1 {
                    let pr = &h_prev.row(i)[c0..c1];
                    let cr = &h_cur.row((i as i64 - r) as usize)[(c0 as i64 - a) as usize..(c1 as i64 - a) as usize];
                    dot += pr.iter().zip(cr).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>();
                }
                (dot / (np * nc).sqrt()).clamp(-1.0, 1.0)
            } else {
                f64::NEG_INFINITY
            };
            out.push(PoseOffset {
                r_offset: ro,
                a_offset: ao,
                score,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::AlignmentFailure(format!(
            "no candidate shift keeps {:.0}% overlap",
            opts.min_overlap * 100.0
        )));
    }
    Ok(out)
}

/// Forward offsets of a frame sequence, one per frame; the last is zero.
pub fn sequence_offsets(frames: &[Heatmap], opts: &AlignOptions) -> Result<Vec<PoseOffset>> {
    let reduced;
    let (frames, opts) = match opts.peak_spread {
        Some(spread) => {
            reduced = frames.iter().map(|f| peak_map(f, spread)).collect::<Result<Vec<_>>>()?;
            let plain = AlignOptions {
                peak_spread: None,
                ..*opts
            };
            (&reduced[..], plain)
        }
        None => (frames, *opts),
    };
    let mut offsets = frames
        .windows(2)
        .map(|w| estimate_offset_with(&w[0], &w[1], &opts))
        .collect::<Result<Vec<_>>>()?;
    if !frames.is_empty() {
        offsets.push(PoseOffset::zero());
    }
    Ok(offsets)
}

/// Keeps only the angle-wise local maxima of each row, each widened into a
/// triangle `spread` columns either side (overlaps take the max).
///
/// A point reflector's blob widens and skews towards the edges of the field
/// of view, which biases whole-map correlation; its peak column does not move.
pub fn peak_map(h: &Heatmap, spread: usize) -> Result<Heatmap> {
    let (rows, cols) = h.dims();
    let mut out = vec![0.0f32; rows * cols];
    let s = spread as i64;
    for r in 0..rows {
        let row = h.row(r);
        for c in 0..cols {
            let x = row[c];
            let left = if c > 0 { row[c - 1] } else { 0.0 };
            let right = if c + 1 < cols { row[c + 1] } else { 0.0 };
            if !(x > 0.0 && x >= left && x > right) {
                continue;
            }
            for d in -s..=s {
                let cc = c as i64 + d;
                if cc < 0 || cc >= cols as i64 {
                    continue;
                }
                let w = 1.0 - d.abs() as f32 / (s + 1) as f32;
                let o = &mut out[r * cols + cc as usize];
                *o = o.max(x * w);
            }
        }
    }
    Heatmap::new(rows, cols, out, h.range_bin_m(), h.angle_axis().to_vec())
}

/// Splits a sequence into maximal runs of constant angle-offset sign.
///
/// Zero offsets join the run in progress; leading zeros join the first run.
pub fn detect_cycles(offsets: &[PoseOffset]) -> Result<Vec<CycleSegment>> {
    if offsets.is_empty() {
        return Err(Error::InvalidSegment("empty offset sequence".into()));
    }
    let Some(first_dir) = offsets.iter().map(PoseOffset::direction).find(|d| *d != 0) else {
        return Err(Error::NoRotation);
    };
    let mut segments = Vec::new();
    let mut current = CycleSegment {
        start: 0,
        end: 0,
        direction: first_dir,
    };
    for (t, o) in offsets.iter().enumerate().skip(1) {
        let d = o.direction();
        if d != 0 && d != current.direction {
            current.end = t - 1;
            segments.push(current);
            current = CycleSegment {
                start: t,
                end: t,
                direction: d,
            };
        }
    }
    current.end = offsets.len() - 1;
    segments.push(current);
    Ok(segments)
}

/// Chained sign comparison over a segment: 0 when every non-zero angle offset
/// shares one sign, 1 otherwise.
pub fn sign_chain(offsets: &[PoseOffset], segment: &CycleSegment) -> u8 {
    let mut signs = offsets[segment.start..=segment.end]
        .iter()
        .map(PoseOffset::direction)
        .filter(|d| *d != 0);
    match signs.next() {
        None => 0,
        Some(first) => signs.any(|d| d != first) as u8,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosaicOptions {
    pub max_canvas_cols: usize,
}

impl Default for MosaicOptions {
    fn default() -> Self {
        Self { max_canvas_cols: 8192 }
    }
}

fn check_segment(frames: &[Heatmap], segment: &CycleSegment) -> Result<()> {
    if segment.start > segment.end || segment.end >= frames.len() {
        return Err(Error::InvalidSegment(format!(
            "segment {}..={} outside {} frames",
            segment.start,
            segment.end,
            frames.len()
        )));
    }
    if segment.direction != 1 && segment.direction != -1 {
        return Err(Error::InvalidSegment(format!("direction {}", segment.direction)));
    }
    let dims = frames[segment.start].dims();
    if let Some(f) = frames[segment.start..=segment.end].iter().find(|f| f.dims() != dims) {
        return Err(Error::dims(format!("{dims:?}"), format!("{:?}", f.dims())));
    }
    Ok(())
}

/// Canvas placement `(row shift, first column)` of every frame in `segment`,
/// reached by chaining `step(t)` from the segment start. Row shifts are
/// relative to the anchor frame, columns to the leftmost frame.
fn chain_placements(segment: &CycleSegment, step: impl Fn(usize) -> (i64, i64)) -> (Vec<(i64, i64)>, usize) {
    let mut positions = vec![(0i64, 0i64)];
    for t in segment.start..segment.end {
        let (r, a) = positions[positions.len() - 1];
        // Content drifted by the offset, so the frame sits that much back.
        let (dr, da) = step(t);
        positions.push((r - dr, a - da));
    }
    // Negative segments are walked in reverse, so the anchor is always the
    // frame furthest towards positive azimuth.
    let anchor = if segment.direction > 0 { 0 } else { positions.len() - 1 };
    let anchor_row = positions[anchor].0;
    let min_a = positions.iter().map(|p| p.1).min().unwrap_or(0);
    let placed = positions.iter().map(|(r, a)| (r - anchor_row, a - min_a)).collect();
    (placed, anchor)
}

/// Where `concat_relative_pose` puts each frame of `segment`.
pub fn relative_pose_placements(segment: &CycleSegment, offsets: &[PoseOffset]) -> Result<Vec<(i64, i64)>> {
    if segment.start > segment.end || offsets.len() < segment.end {
        return Err(Error::InvalidSegment(format!(
            "{} offsets cannot cover frames {}..={}",
            offsets.len(),
            segment.start,
            segment.end
        )));
    }
    Ok(chain_placements(segment, |t| (offsets[t].r_offset, offsets[t].a_offset)).0)
}

/// Where `concat_fixed_step` puts each frame of `segment`.
pub fn fixed_step_placements(segment: &CycleSegment, step_bins: usize) -> Vec<(i64, i64)> {
    let step = segment.direction as i64 * step_bins as i64;
    chain_placements(segment, |_| (0, step)).0
}

/// Max-unions the frames of `segment` at the positions reached by chaining
/// `step(t)` from the segment start.
fn mosaic(
    frames: &[Heatmap],
    segment: &CycleSegment,
    opts: &MosaicOptions,
    step: impl Fn(usize) -> (i64, i64),
) -> Result<Heatmap> {
    check_segment(frames, segment)?;
    let (rows, cols) = frames[segment.start].dims();
    let (positions, anchor) = chain_placements(segment, step);
    let max_a = positions.iter().map(|p| p.1).max().unwrap_or(0);
    let canvas_cols = max_a as usize + cols;
    if canvas_cols > opts.max_canvas_cols {
        return Err(Error::CanvasTooLarge {
            cols: canvas_cols,
            max_cols: opts.max_canvas_cols,
        });
    }

    let mut canvas = vec![0.0f32; rows * canvas_cols];
    let order: Vec<usize> = if segment.direction > 0 {
        (0..positions.len()).collect()
    } else {
        (0..positions.len()).rev().collect()
    };
    for idx in order {
        let frame = &frames[segment.start + idx];
        let (dr, dc) = (positions[idx].0, positions[idx].1 as usize);
        for i in 0..rows {
            let ci = i as i64 + dr;
            if ci < 0 || ci >= rows as i64 {
                continue;
            }
            let dst = &mut canvas[ci as usize * canvas_cols + dc..ci as usize * canvas_cols + dc + cols];
            for (d, s) in dst.iter_mut().zip(frame.row(i)) {
                *d = d.max(*s);
            }
        }
    }

    let anchor_frame = &frames[segment.start + anchor];
    let axis = anchor_frame.angle_axis();
    let spacing = if cols > 1 {
        (axis[cols - 1] - axis[0]) / (cols - 1) as f64
    } else {
        1e-3
    };
    // The anchor keeps its own axis; the rest extends it at uniform spacing.
    let anchor_col = positions[anchor].1;
    let canvas_axis = (0..canvas_cols as i64)
        .map(|c| {
            let k = c - anchor_col;
            if k < 0 {
                axis[0] + k as f64 * spacing
            } else if k < cols as i64 {
                axis[k as usize]
            } else {
                axis[cols - 1] + (k - cols as i64 + 1) as f64 * spacing
            }
        })
        .collect();
    Heatmap::new(rows, canvas_cols, canvas, anchor_frame.range_bin_m(), canvas_axis)
}

/// Mosaics a rotation cycle using the estimated frame-to-frame offsets.
pub fn concat_relative_pose(frames: &[Heatmap], segment: &CycleSegment, offsets: &[PoseOffset]) -> Result<Heatmap> {
    concat_relative_pose_with(frames, segment, offsets, &MosaicOptions::default())
}

pub fn concat_relative_pose_with(
    frames: &[Heatmap],
    segment: &CycleSegment,
    offsets: &[PoseOffset],
    opts: &MosaicOptions,
) -> Result<Heatmap> {
    if offsets.len() < segment.end {
        return Err(Error::InvalidSegment(format!(
            "{} offsets cannot cover frames up to {}",
            offsets.len(),
            segment.end
        )));
    }
    mosaic(frames, segment, opts, |t| (offsets[t].r_offset, offsets[t].a_offset))
}

/// Mosaics a rotation cycle assuming a constant `step_bins` rotation and no
/// range shift between frames.
pub fn concat_fixed_step(frames: &[Heatmap], segment: &CycleSegment, step_bins: usize) -> Result<Heatmap> {
    concat_fixed_step_with(frames, segment, step_bins, &MosaicOptions::default())
}

pub fn concat_fixed_step_with(
    frames: &[Heatmap],
    segment: &CycleSegment,
    step_bins: usize,
    opts: &MosaicOptions,
) -> Result<Heatmap> {
    if step_bins == 0 {
        return Err(Error::InvalidConfig("step_bins must be > 0".into()));
    }
    let step = segment.direction as i64 * step_bins as i64;
    mosaic(frames, segment, opts, |_| (0, step))
}

/// Crops or zero-pads a canvas on the right so it is exactly `cols` wide,
/// keeping column 0 fixed.
pub fn fix_canvas_width(canvas: &Heatmap, cols: usize) -> Result<Heatmap> {
    if cols == 0 {
        return Err(Error::Resize("canvas width must be >= 1".into()));
    }
    let rows = canvas.rows();
    let keep = cols.min(canvas.cols());
    let mut values = vec![0.0f32; rows * cols];
    for r in 0..rows {
        values[r * cols..r * cols + keep].copy_from_slice(&canvas.row(r)[..keep]);
    }
    let axis = canvas.angle_axis();
    let spacing = if axis.len() > 1 { axis[1] - axis[0] } else { 1e-3 };
    Heatmap::uniform(rows, cols, values, canvas.range_bin_m(), axis[0], spacing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn off(a: i64) -> PoseOffset {
        PoseOffset {
            r_offset: 0,
            a_offset: a,
            score: 1.0,
        }
    }

    fn textured(rows: usize, cols: usize, seed: u64) -> Heatmap {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let values = (0..rows * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) % 1000) as f32 / 1000.0
            })
            .collect();
        Heatmap::uniform(rows, cols, values, 0.5, -1.0, 0.01).unwrap()
    }

    /// Zero-filled translation by (r, a).
    fn translate(h: &Heatmap, r: i64, a: i64) -> Heatmap {
        let (rows, cols) = h.dims();
        let mut v = vec![0.0f32; rows * cols];
        for i in 0..rows as i64 {
            for j in 0..cols as i64 {
                let (si, sj) = (i - r, j - a);
                if si >= 0 && sj >= 0 && si < rows as i64 && sj < cols as i64 {
                    v[(i as usize) * cols + j as usize] = h.get(si as usize, sj as usize);
                }
            }
        }
        Heatmap::new(rows, cols, v, h.range_bin_m(), h.angle_axis().to_vec()).unwrap()
    }

    #[test]
    fn identity_alignment() {
        let h = textured(16, 40, 1);
        let o = estimate_offset(&h, &h, 3, 6).unwrap();
        assert_eq!((o.r_offset, o.a_offset), (0, 0));
        assert!((o.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_constructed_shift() {
        let h = textured(24, 60, 2);
        let shifted = translate(&h, 3, 5);
        let o = estimate_offset(&h, &shifted, 4, 8).unwrap();
        assert_eq!((o.r_offset, o.a_offset), (3, 5));
    }

    #[test]
    fn dims_must_match() {
        assert!(estimate_offset(&textured(4, 4, 0), &textured(4, 5, 0), 1, 1).is_err());
    }

    #[test]
    fn peak_map_keeps_row_maxima() {
        let h = Heatmap::uniform(1, 9, vec![0.0, 1.0, 3.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.5], 1.0, 0.0, 0.1).unwrap();
        let p = peak_map(&h, 1).unwrap();
        assert_eq!(p.values(), &[0.0, 1.5, 3.0, 1.5, 0.0, 0.0, 1.0, 2.0, 1.0]);
        assert_eq!(peak_map(&h, 0).unwrap().values(), &[0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn insufficient_overlap_fails() {
        let h = textured(4, 8, 0);
        let opts = AlignOptions {
            r_window: 0,
            a_window: 0,
            min_overlap: 1.5,
            peak_spread: None,
        };
        assert!(matches!(estimate_offset_with(&h, &h, &opts), Err(Error::AlignmentFailure(_))));
    }

    #[test]
    fn blank_maps_fail_alignment() {
        let z = Heatmap::uniform(4, 4, vec![0.0; 16], 1.0, 0.0, 0.1).unwrap();
        assert!(matches!(estimate_offset(&z, &z, 1, 1), Err(Error::AlignmentFailure(_))));
    }

    #[test]
    fn cycles_two_clean_runs() {
        let offs: Vec<_> = [1, 1, 1, -1, -1, -1].into_iter().map(off).collect();
        let s = detect_cycles(&offs).unwrap();
        assert_eq!(
            s,
            vec![
                CycleSegment { start: 0, end: 2, direction: 1 },
                CycleSegment { start: 3, end: 5, direction: -1 },
            ]
        );
    }

    #[test]
    fn cycles_absorb_zeros() {
        let offs: Vec<_> = [2, 3, 0, 1, -4].into_iter().map(off).collect();
        let s = detect_cycles(&offs).unwrap();
        assert_eq!(
            s,
            vec![
                CycleSegment { start: 0, end: 3, direction: 1 },
                CycleSegment { start: 4, end: 4, direction: -1 },
            ]
        );
        let lead: Vec<_> = [0, 0, -1, -1].into_iter().map(off).collect();
        assert_eq!(
            detect_cycles(&lead).unwrap(),
            vec![CycleSegment { start: 0, end: 3, direction: -1 }]
        );
    }

    #[test]
    fn cycles_need_rotation() {
        let offs: Vec<_> = [0, 0, 0].into_iter().map(off).collect();
        assert!(matches!(detect_cycles(&offs), Err(Error::NoRotation)));
        assert!(detect_cycles(&[]).is_err());
    }

    #[test]
    fn sign_chain_values() {
        let offs: Vec<_> = [1, 0, 2, -1].into_iter().map(off).collect();
        assert_eq!(sign_chain(&offs, &CycleSegment { start: 0, end: 2, direction: 1 }), 0);
        assert_eq!(sign_chain(&offs, &CycleSegment { start: 0, end: 3, direction: 1 }), 1);
    }

    #[test]
    fn single_frame_mosaic_is_identity() {
        let h = textured(8, 12, 3);
        let seg = CycleSegment { start: 0, end: 0, direction: 1 };
        let out = concat_relative_pose(std::slice::from_ref(&h), &seg, &[PoseOffset::zero()]).unwrap();
        assert_eq!(out, h);
        let out = concat_fixed_step(std::slice::from_ref(&h), &seg, 4).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn mosaic_of_copies_is_the_frame() {
        let h = textured(8, 12, 4);
        let frames = vec![h.clone(), h.clone(), h.clone()];
        let offs = vec![PoseOffset::zero(); 3];
        let seg = CycleSegment { start: 0, end: 2, direction: 1 };
        assert_eq!(concat_relative_pose(&frames, &seg, &offs).unwrap(), h);
    }

    #[test]
    fn mosaic_places_frames_at_accumulated_offsets() {
        let wide = textured(6, 30, 5);
        // Three 10-column windows of a wide strip, each 7 columns further on.
        let crop = |c0: usize| {
            let v: Vec<f32> = (0..6).flat_map(|r| wide.row(r)[c0..c0 + 10].to_vec()).collect();
            Heatmap::uniform(6, 10, v, 0.5, 0.0, 0.01).unwrap()
        };
        let frames = vec![crop(0), crop(7), crop(14)];
        let offs = vec![off(-7), off(-7), PoseOffset::zero()];
        let seg = CycleSegment { start: 0, end: 2, direction: -1 };
        let m = concat_relative_pose(&frames, &seg, &offs).unwrap();
        assert_eq!(m.cols(), 24);
        for r in 0..6 {
            assert_eq!(m.row(r), &wide.row(r)[..24]);
        }
        // Reverse traversal of the same frames gives the same canvas.
        let rev_frames = vec![crop(14), crop(7), crop(0)];
        let rev_offs = vec![off(7), off(7), PoseOffset::zero()];
        let seg = CycleSegment { start: 0, end: 2, direction: 1 };
        let m2 = concat_relative_pose(&rev_frames, &seg, &rev_offs).unwrap();
        assert_eq!(m2.values(), m.values());
        assert!((m2.angle_axis()[0] - m.angle_axis()[0]).abs() < 1e-12);
        // The fixed step equal to the true step agrees.
        let m3 = concat_fixed_step(&frames, &CycleSegment { start: 0, end: 2, direction: -1 }, 7).unwrap();
        assert_eq!(m3, m);
    }

    #[test]
    fn canvas_limit() {
        let h = textured(2, 4, 6);
        let frames = vec![h.clone(), h];
        let seg = CycleSegment { start: 0, end: 1, direction: 1 };
        let opts = MosaicOptions { max_canvas_cols: 10 };
        assert!(matches!(
            concat_fixed_step_with(&frames, &seg, 100, &opts),
            Err(Error::CanvasTooLarge { .. })
        ));
        assert!(concat_fixed_step(&frames, &seg, 0).is_err());
    }

    #[test]
    fn bad_segments() {
        let h = textured(2, 4, 6);
        let frames = vec![h];
        let seg = CycleSegment { start: 0, end: 1, direction: 1 };
        assert!(concat_fixed_step(&frames, &seg, 1).is_err());
    }

    #[test]
    fn canvas_width_is_fixed_from_the_left() {
        let h = textured(3, 5, 7);
        let w = fix_canvas_width(&h, 8).unwrap();
        assert_eq!(w.cols(), 8);
        assert_eq!(&w.row(1)[..5], h.row(1));
        assert_eq!(&w.row(1)[5..], &[0.0; 3]);
        let n = fix_canvas_width(&h, 2).unwrap();
        assert_eq!(n.row(2), &h.row(2)[..2]);
    }
}
