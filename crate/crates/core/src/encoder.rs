//! Spatial encoder: a small 3x3 convolutional network that turns a heatmap
//! into an L2-normalised place descriptor, plus its triplet-margin training.
//!
//! Gradients are derived by hand. Forward activations are recomputed per
//! sample during the backward pass so memory stays bounded by one sample.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;

/// How raw linear magnitudes are scaled before the first convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputScaling {
    /// Divide by the map maximum.
    Max,
    /// `ln(1 + x / floor) / ln(1 + 1/floor)` with `floor = 1e-3 * max`:
    /// a 60 dB range squeezed into [0, 1].
    #[default]
    Log,
    /// The `Log` mapping followed by per-map standardisation (zero mean,
    /// unit variance).
    Standard,
}

impl InputScaling {
    pub fn code(self) -> u32 {
        match self {
            InputScaling::Max => 0,
            InputScaling::Log => 1,
            InputScaling::Standard => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(InputScaling::Max),
            1 => Ok(InputScaling::Log),
            2 => Ok(InputScaling::Standard),
            c => Err(Error::Format(format!("unknown input scaling code {c}"))),
        }
    }

    fn apply(self, values: &[f32]) -> Vec<f64> {
        let max = values.iter().copied().fold(0.0f32, f32::max) as f64;
        if max <= 0.0 {
            return vec![0.0; values.len()];
        }
        match self {
            InputScaling::Max => values.iter().map(|v| *v as f64 / max).collect(),
            InputScaling::Log | InputScaling::Standard => {
                let floor = 1e-3 * max;
                let norm = (1.0 + max / floor).ln();
                let mut out: Vec<f64> = values.iter().map(|v| (1.0 + *v as f64 / floor).ln() / norm).collect();
                if self == InputScaling::Standard {
                    let n = out.len() as f64;
                    let mean = out.iter().sum::<f64>() / n;
                    let std = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                    let inv = if std > 1e-12 { 1.0 / std } else { 0.0 };
                    out.iter_mut().for_each(|x| *x = (*x - mean) * inv);
                }
                out
            }
        }
    }
}

/// Layer plan of the encoder. Layer `l` maps `channels[l]` to
/// `channels[l + 1]` feature maps and is followed by a `pools[l]` max-pool
/// (`(1, 1)` means no pooling).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub input_rows: usize,
    pub input_cols: usize,
    pub channels: Vec<usize>,
    pub pools: Vec<(usize, usize)>,
    pub input_scaling: InputScaling,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self::for_input(64, 768)
    }
}

impl EncoderArch {
    /// The default 1-8-16-32-32 plan with (4 range, 2 angle) pooling after the
    /// first three layers. The range pool shrinks for short inputs so the
    /// range axis never collapses below one row.
    pub fn for_input(rows: usize, cols: usize) -> Self {
        let mut pools = Vec::new();
        let mut h = rows;
        for _ in 0..3 {
            let kh = 4.min(h.max(1));
            pools.push((kh, 2));
            h /= kh;
        }
        pools.push((1, 1));
        Self {
            input_rows: rows,
            input_cols: cols,
            channels: vec![1, 8, 16, 32, 32],
            pools,
            input_scaling: InputScaling::default(),
        }
    }

    /// Smaller network for narrow inputs: three 2×2 pools keep an
    /// (rows/8)×(cols/8) grid of 16 channels, on standardised log input.
    pub fn compact(rows: usize, cols: usize) -> Self {
        Self {
            input_rows: rows,
            input_cols: cols,
            channels: vec![1, 8, 16, 32, 16],
            pools: vec![(2, 2), (2, 2), (2, 2), (1, 1)],
            input_scaling: InputScaling::Standard,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.pools.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.pools.len() + 1 || self.pools.is_empty() {
            return Err(Error::InvalidConfig(
                "channel plan must list one more entry than the pool plan".into(),
            ));
        }
        if self.channels[0] != 1 {
            return Err(Error::InvalidConfig("encoder input must have one channel".into()));
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidConfig("channel counts must be >= 1".into()));
        }
        let (mut h, mut w) = (self.input_rows, self.input_cols);
        for (kh, kw) in &self.pools {
            if *kh == 0 || *kw == 0 {
                return Err(Error::InvalidConfig("pool sizes must be >= 1".into()));
            }
            h /= kh;
            w /= kw;
            if h == 0 || w == 0 {
                return Err(Error::InvalidConfig(format!(
                    "pool plan {:?} collapses a {}x{} input",
                    self.pools, self.input_rows, self.input_cols
                )));
            }
        }
        Ok(())
    }

    /// `(height, width)` of each layer's input, plus the final output.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.input_rows, self.input_cols)];
        let (mut h, mut w) = (self.input_rows, self.input_cols);
        for (kh, kw) in &self.pools {
            h /= kh;
            w /= kw;
            out.push((h, w));
        }
        out
    }

    pub fn descriptor_dim(&self) -> usize {
        let (h, w) = *self.shapes().last().unwrap();
        h * w * self.channels[self.channels.len() - 1]
    }
}

/// 3x3 kernels `[cout][cin][3][3]` and biases of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub cin: usize,
    pub cout: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            kernel: vec![0.0; cout * cin * 9],
            bias: vec![0.0; cout],
        }
    }

    #[inline]
    fn k(&self, co: usize, ci: usize) -> &[f64] {
        let o = (co * self.cin + ci) * 9;
        &self.kernel[o..o + 9]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub arch: EncoderArch,
    pub layers: Vec<LayerParams>,
    pub seed: u64,
}

impl EncoderWeights {
    /// Uniform initialisation in `+-1/sqrt(fan_in)`.
    pub fn init(arch: EncoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .channels
            .windows(2)
            .map(|c| {
                let (cin, cout) = (c[0], c[1]);
                let bound = 1.0 / ((cin * 9) as f64).sqrt();
                let mut p = LayerParams::zeros(cin, cout);
                for v in p.kernel.iter_mut().chain(p.bias.iter_mut()) {
                    // Stored precision from the start, so a fresh init survives a save.
                    *v = rng.random_range(-bound..bound) as f32 as f64;
                }
                p
            })
            .collect();
        Ok(Self { arch, layers, seed })
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| LayerParams::zeros(l.cin, l.cout)).collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    /// Every parameter in layer order: kernels, then biases, per layer.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.kernel.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.kernel.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Rounds every parameter to the nearest `f32`, the storage precision.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            *p = *p as f32 as f64;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

/// Parameter gradients, shaped like [`EncoderWeights::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.kernel.iter().chain(l.bias.iter()))
    }
}

/// Unit-norm place descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f32>,
    /// Set when the network produced an all-zero activation and the canonical
    /// unit vector was substituted.
    pub degenerate: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f32>) -> Self {
        Self {
            values,
            degenerate: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        euclidean(
            self.values.iter().map(|v| *v as f64),
            other.values.iter().map(|v| *v as f64),
        )
    }
}

fn euclidean(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Forward / backward kernels

/// `out[co] = bias[co] + sum_ci conv3x3(input[ci], kernel[co][ci])`, zero
/// padding 1.
fn conv_forward(p: &LayerParams, input: &[f64], h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; p.cout * plane];
    for co in 0..p.cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(p.bias[co]);
        for ci in 0..p.cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            let k = p.k(co, ci);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wgt = k[ky * 3 + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1).saturating_sub(ky).min(h));
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1).saturating_sub(kx).min(w));
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wgt * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates kernel/bias gradients and (optionally) the input gradient.
fn conv_backward(
    p: &LayerParams,
    input: &[f64],
    dz: &[f64],
    h: usize,
    w: usize,
    grad: &mut LayerParams,
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = h * w;
    let mut din = want_input_grad.then(|| vec![0.0; p.cin * plane]);
    for co in 0..p.cout {
        let g = &dz[co * plane..(co + 1) * plane];
        grad.bias[co] += g.iter().sum::<f64>();
        for ci in 0..p.cin {
            let src = &input[ci * plane..(ci + 1) * plane];
            let kbase = (co * p.cin + ci) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1).saturating_sub(ky).min(h));
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1).saturating_sub(kx).min(w));
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let gr = &g[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad.kernel[kbase + ky * 3 + kx] += acc;
                    if let Some(din) = din.as_mut() {
                        let wgt = p.kernel[kbase + ky * 3 + kx];
                        if wgt == 0.0 {
                            continue;
                        }
                        let dplane = &mut din[ci * plane..(ci + 1) * plane];
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let gr = &g[y * w + x0..y * w + x1];
                            let d = &mut dplane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (dv, gv) in d.iter_mut().zip(gr) {
                                *dv += wgt * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

/// ReLU followed by a non-overlapping `(kh, kw)` max-pool. Returns pooled
/// values and, per pooled cell, the flat index of the winning input (first on
/// ties).
fn relu_pool(z: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / kh, w / kw);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * kh * w + ox * kw;
                let mut best_v = z[best].max(0.0);
                for dy in 0..kh {
                    for dx in 0..kw {
                        let idx = base + (oy * kh + dy) * w + ox * kw + dx;
                        let v = z[idx].max(0.0);
                        if v > best_v {
                            best_v = v;
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

struct LayerTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    argmax: Vec<usize>,
}

struct Forward {
    /// Flattened final feature map before normalisation.
    features: Vec<f64>,
    traces: Vec<LayerTrace>,
}

fn forward(w: &EncoderWeights, input: Vec<f64>, keep_traces: bool) -> Forward {
    let shapes = w.arch.shapes();
    let mut x = input;
    let mut traces = Vec::new();
    for (l, p) in w.layers.iter().enumerate() {
        let (h, wd) = shapes[l];
        let z = conv_forward(p, &x, h, wd);
        let (kh, kw) = w.arch.pools[l];
        let (pooled, argmax) = relu_pool(&z, p.cout, h, wd, kh, kw);
        if keep_traces {
            traces.push(LayerTrace {
                input: std::mem::take(&mut x),
                pre: z,
                argmax,
            });
        }
        x = pooled;
    }
    Forward { features: x, traces }
}

/// L2-normalises `features`; all-zero input maps to `e_1` and is flagged.
fn normalize(features: &[f64]) -> (Vec<f64>, f64, bool) {
    let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 || !norm.is_finite() {
        let mut e = vec![0.0; features.len()];
        if let Some(first) = e.first_mut() {
            *first = 1.0;
        }
        (e, norm, true)
    } else {
        (features.iter().map(|v| v / norm).collect(), norm, false)
    }
}

/// Scaled network input for a heatmap, checked against the architecture.
pub fn prepare_input(h: &Heatmap, arch: &EncoderArch) -> Result<Vec<f64>> {
    if h.dims() != (arch.input_rows, arch.input_cols) {
        return Err(Error::dims(
            format!("{}x{}", arch.input_rows, arch.input_cols),
            format!("{}x{}", h.rows(), h.cols()),
        ));
    }
    Ok(arch.input_scaling.apply(h.values()))
}

/// Unit-norm descriptor in `f64`, plus the degeneracy flag.
pub fn encode_input(input: &[f64], w: &EncoderWeights) -> (Vec<f64>, bool) {
    let fwd = forward(w, input.to_vec(), false);
    let (y, _, degenerate) = normalize(&fwd.features);
    (y, degenerate)
}

/// Maps a heatmap to its place descriptor.
pub fn encode(h: &Heatmap, w: &EncoderWeights) -> Result<Descriptor> {
    let input = prepare_input(h, &w.arch)?;
    let (y, degenerate) = encode_input(&input, w);
    Ok(Descriptor {
        values: y.iter().map(|v| *v as f32).collect(),
        degenerate,
    })
}

/// Backpropagates `dy` (gradient w.r.t. the normalised descriptor) through
/// one sample, accumulating into `grads`.
fn backprop_sample(w: &EncoderWeights, input: &[f64], dy: &[f64], grads: &mut Gradients) {
    let fwd = forward(w, input.to_vec(), true);
    let (y, norm, degenerate) = normalize(&fwd.features);
    if degenerate {
        return;
    }
    let ydy: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    let mut g: Vec<f64> = y.iter().zip(dy).map(|(yi, di)| (di - yi * ydy) / norm).collect();

    let shapes = w.arch.shapes();
    for l in (0..w.layers.len()).rev() {
        let trace = &fwd.traces[l];
        let p = &w.layers[l];
        let (h, wd) = shapes[l];
        // Un-pool and un-ReLU: route each pooled gradient to its winner.
        let mut dz = vec![0.0; p.cout * h * wd];
        for (gv, idx) in g.iter().zip(&trace.argmax) {
            if trace.pre[*idx] > 0.0 {
                dz[*idx] += gv;
            }
        }
        let din = conv_backward(p, &trace.input, &dz, h, wd, &mut grads.layers[l], l > 0);
        if let Some(din) = din {
            g = din;
        }
    }
}

// ---------------------------------------------------------------------------
// Triplet loss

fn triplet_terms(q: &[f64], ps: &[&[f64]], ns: &[&[f64]], alpha: f64) -> (f64, usize, f64, Vec<(usize, f64, f64)>) {
    let dist = |a: &[f64], b: &[f64]| euclidean(a.iter().copied(), b.iter().copied());
    let mut best = 0;
    let mut d_pos = f64::INFINITY;
    for (i, p) in ps.iter().enumerate() {
        let d = dist(q, p);
        if d < d_pos {
            d_pos = d;
            best = i;
        }
    }
    let mut loss = 0.0;
    let mut active = Vec::new();
    for (j, n) in ns.iter().enumerate() {
        let d_neg = dist(q, n);
        let x = d_pos - d_neg + alpha;
        if x > 0.0 {
            loss += x;
            active.push((j, d_neg, x));
        }
    }
    (loss, best, d_pos, active)
}

/// Hinge triplet loss summed over negatives against the closest positive.
pub fn triplet_loss(dq: &Descriptor, dps: &[Descriptor], dns: &[Descriptor], alpha: f64) -> f64 {
    let conv = |d: &Descriptor| d.values.iter().map(|v| *v as f64).collect::<Vec<_>>();
    let q = conv(dq);
    let ps: Vec<Vec<f64>> = dps.iter().map(conv).collect();
    let ns: Vec<Vec<f64>> = dns.iter().map(conv).collect();
    let pr: Vec<&[f64]> = ps.iter().map(Vec::as_slice).collect();
    let nr: Vec<&[f64]> = ns.iter().map(Vec::as_slice).collect();
    triplet_loss_slices(&q, &pr, &nr, alpha)
}

pub fn triplet_loss_slices(q: &[f64], ps: &[&[f64]], ns: &[&[f64]], alpha: f64) -> f64 {
    if ps.is_empty() {
        return 0.0;
    }
    triplet_terms(q, ps, ns, alpha).0
}

/// Loss and descriptor gradients `(dq, dp_i, dn_j)` of one triplet.
fn triplet_grads(q: &[f64], ps: &[&[f64]], ns: &[&[f64]], alpha: f64) -> (f64, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dim = q.len();
    let mut dq = vec![0.0; dim];
    let mut dps = vec![vec![0.0; dim]; ps.len()];
    let mut dns = vec![vec![0.0; dim]; ns.len()];
    if ps.is_empty() {
        return (0.0, dq, dps, dns);
    }
    let (loss, best, d_pos, active) = triplet_terms(q, ps, ns, alpha);
    let p = ps[best];
    for (j, d_neg, _) in &active {
        if d_pos > 0.0 {
            for i in 0..dim {
                let u = (q[i] - p[i]) / d_pos;
                dq[i] += u;
                dps[best][i] -= u;
            }
        }
        if *d_neg > 0.0 {
            let n = ns[*j];
            for i in 0..dim {
                let u = (q[i] - n[i]) / d_neg;
                dq[i] -= u;
                dns[*j][i] += u;
            }
        }
    }
    (loss, dq, dps, dns)
}

/// One query with its positive and negative heatmaps.
#[derive(Clone, Debug)]
pub struct TripletBatch<'a> {
    pub query: &'a Heatmap,
    pub positives: Vec<&'a Heatmap>,
    pub negatives: Vec<&'a Heatmap>,
    pub margin: f64,
}

/// Loss and exact parameter gradients of one triplet batch.
#[derive(Clone, Debug)]
pub struct Backward {
    pub loss: f64,
    pub grads: Gradients,
}

pub fn backward(batch: &TripletBatch<'_>, w: &EncoderWeights) -> Result<Backward> {
    if batch.positives.is_empty() || batch.negatives.is_empty() {
        return Err(Error::InvalidConfig("a triplet needs positives and negatives".into()));
    }
    let mut inputs = vec![prepare_input(batch.query, &w.arch)?];
    for h in batch.positives.iter().chain(&batch.negatives) {
        inputs.push(prepare_input(h, &w.arch)?);
    }
    let np = batch.positives.len();
    let triplet = Triplet {
        query: 0,
        positives: (1..=np).collect(),
        negatives: (np + 1..inputs.len()).collect(),
    };
    let (loss, grads) = batch_gradient(&inputs, std::slice::from_ref(&triplet), w, batch.margin, 1.0);
    Ok(Backward { loss, grads })
}

/// Summed loss and `scale`-weighted gradient of `triplets` over `inputs`.
/// Each distinct sample is forwarded once for its descriptor and once more
/// (with traces) for backpropagation.
fn batch_gradient(inputs: &[Vec<f64>], triplets: &[Triplet], w: &EncoderWeights, margin: f64, scale: f64) -> (f64, Gradients) {
    let mut desc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in triplets {
        for idx in std::iter::once(&t.query).chain(&t.positives).chain(&t.negatives) {
            desc.entry(*idx).or_insert_with(|| encode_input(&inputs[*idx], w).0);
        }
    }
    let mut dys: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut total = 0.0;
    for t in triplets {
        let ps: Vec<&[f64]> = t.positives.iter().map(|i| desc[i].as_slice()).collect();
        let ns: Vec<&[f64]> = t.negatives.iter().map(|i| desc[i].as_slice()).collect();
        let (loss, dq, dps, dns) = triplet_grads(&desc[&t.query], &ps, &ns, margin);
        total += loss;
        if loss == 0.0 {
            continue;
        }
        let mut add = |idx: usize, g: &[f64]| {
            let e = dys.entry(idx).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in e.iter_mut().zip(g) {
                *a += scale * b;
            }
        };
        add(t.query, &dq);
        for (i, g) in t.positives.iter().zip(&dps) {
            add(*i, g);
        }
        for (i, g) in t.negatives.iter().zip(&dns) {
            add(*i, g);
        }
    }
    let mut grads = w.zeros_like();
    for (idx, dy) in &dys {
        if dy.iter().any(|v| *v != 0.0) {
            backprop_sample(w, &inputs[*idx], dy, &mut grads);
        }
    }
    (total, grads)
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

/// Agreement between [`backward`] and central finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink (ReLU sign,
    /// pool winner, closest positive or active hinge set changed).
    pub skipped: usize,
}

/// Discrete state of the loss surface: every choice a subgradient makes.
fn kink_pattern(inputs: &[Vec<f64>], triplet: &Triplet, w: &EncoderWeights, margin: f64) -> Vec<usize> {
    let mut pattern = Vec::new();
    let mut desc = Vec::with_capacity(inputs.len());
    for x in inputs {
        let fwd = forward(w, x.clone(), true);
        for t in &fwd.traces {
            pattern.extend(t.pre.iter().map(|v| (*v > 0.0) as usize));
            pattern.extend(t.argmax.iter().copied());
        }
        desc.push(normalize(&fwd.features).0);
    }
    let ps: Vec<&[f64]> = triplet.positives.iter().map(|i| desc[*i].as_slice()).collect();
    let ns: Vec<&[f64]> = triplet.negatives.iter().map(|i| desc[*i].as_slice()).collect();
    let (_, best, _, active) = triplet_terms(&desc[triplet.query], &ps, &ns, margin);
    pattern.push(best);
    pattern.extend(active.iter().map(|a| a.0));
    pattern.push(usize::MAX);
    pattern
}

/// Compares every gradient coordinate of `batch` against a central finite
/// difference with step `eps`. Relative error is `|a - n| / max(|a|, |n|,
/// 1e-7)`.
pub fn gradient_check(batch: &TripletBatch<'_>, w: &EncoderWeights, eps: f64) -> Result<GradCheck> {
    let analytic = backward(batch, w)?.grads;
    let mut inputs = vec![prepare_input(batch.query, &w.arch)?];
    for h in batch.positives.iter().chain(&batch.negatives) {
        inputs.push(prepare_input(h, &w.arch)?);
    }
    let np = batch.positives.len();
    let triplet = Triplet {
        query: 0,
        positives: (1..=np).collect(),
        negatives: (np + 1..inputs.len()).collect(),
    };
    let loss_at = |w: &EncoderWeights| {
        let desc: Vec<Vec<f64>> = inputs.iter().map(|x| encode_input(x, w).0).collect();
        let ps: Vec<&[f64]> = triplet.positives.iter().map(|i| desc[*i].as_slice()).collect();
        let ns: Vec<&[f64]> = triplet.negatives.iter().map(|i| desc[*i].as_slice()).collect();
        triplet_loss_slices(&desc[0], &ps, &ns, batch.margin)
    };
    let base_pattern = kink_pattern(&inputs, &triplet, w, batch.margin);
    let grads: Vec<f64> = analytic.params().copied().collect();
    let mut probe = w.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (i, a) in grads.iter().enumerate() {
        let orig = *probe.params().nth(i).unwrap();
        let set = |probe: &mut EncoderWeights, v: f64| *probe.params_mut().nth(i).unwrap() = v;
        set(&mut probe, orig + eps);
        let (lp, pp) = (loss_at(&probe), kink_pattern(&inputs, &triplet, &probe, batch.margin));
        set(&mut probe, orig - eps);
        let (lm, pm) = (loss_at(&probe), kink_pattern(&inputs, &triplet, &probe, batch.margin));
        set(&mut probe, orig);
        if pp != base_pattern || pm != base_pattern {
            out.skipped += 1;
            continue;
        }
        let n = (lp - lm) / (2.0 * eps);
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
        out.max_rel_error = out.max_rel_error.max(err);
        out.checked += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Triplet mining

/// Index triplet into a record list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub query: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedTriplets {
    pub triplets: Vec<Triplet>,
    /// Queries lacking a positive or a negative.
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Positives lie within this distance of the query, m.
    pub r_pos: f64,
    /// Negatives lie beyond this distance, m.
    pub r_neg: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            r_pos: 3.0,
            r_neg: 18.0,
            n_pos: 1,
            n_neg: 10,
        }
    }
}

/// Indices within `r_pos` of `q` (excluding `q`) and beyond `r_neg`.
pub fn candidate_sets(positions: &[[f64; 2]], q: usize, r_pos: f64, r_neg: f64) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        if i == q {
            continue;
        }
        let d = ((p[0] - positions[q][0]).powi(2) + (p[1] - positions[q][1]).powi(2)).sqrt();
        if d <= r_pos {
            pos.push(i);
        } else if d > r_neg {
            neg.push(i);
        }
    }
    (pos, neg)
}

/// Samples, for every query, `n_pos` positives and `n_neg` negatives without
/// replacement (fewer if fewer exist).
pub fn mine_triplets(positions: &[[f64; 2]], cfg: &MiningConfig, seed: u64) -> Result<MinedTriplets> {
    if !(cfg.r_pos < cfg.r_neg) {
        return Err(Error::InvalidConfig(format!(
            "positive radius {} must be below negative radius {}",
            cfg.r_pos, cfg.r_neg
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::new();
    let mut skipped = 0;
    for q in 0..positions.len() {
        let (mut pos, mut neg) = candidate_sets(positions, q, cfg.r_pos, cfg.r_neg);
        if pos.is_empty() || neg.is_empty() {
            skipped += 1;
            continue;
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.truncate(cfg.n_pos.max(1));
        neg.truncate(cfg.n_neg.max(1));
        triplets.push(Triplet {
            query: q,
            positives: pos,
            negatives: neg,
        });
    }
    Ok(MinedTriplets { triplets, skipped })
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a better validation score.
    pub patience: Option<usize>,
    pub margin: f64,
    pub mining: MiningConfig,
    /// Every `val_stride`-th record (offset `val_stride - 1`) is held out as a
    /// validation query. Zero disables validation.
    pub val_stride: usize,
    pub seed: u64,
    /// Architecture; derived from the input size when absent.
    pub arch: Option<EncoderArch>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.001,
            lr_decay: 0.5,
            decay_every: 5,
            max_epochs: 50,
            patience: None,
            margin: 0.5,
            mining: MiningConfig::default(),
            val_stride: 5,
            seed: 0,
            arch: None,
        }
    }
}

impl TrainConfig {
    /// Step-decayed learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.decay_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs and decay_every must be >= 1".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(self.momentum >= 0.0 && self.weight_decay >= 0.0 && self.margin >= 0.0) {
            return Err(Error::InvalidConfig(
                "momentum, weight_decay and margin must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    /// Validation recall@1, when a validation split exists.
    pub val_recall1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: EncoderWeights,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Fraction of validation queries whose nearest other record lies within
/// `r_pos`, over queries that have such a record at all.
fn validation_recall(descs: &[Vec<f64>], positions: &[[f64; 2]], queries: &[usize], r_pos: f64) -> Option<f64> {
    let within = |a: usize, b: usize| {
        let (p, q) = (positions[a], positions[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= r_pos
    };
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for &q in queries {
        let others = || (0..descs.len()).filter(move |d| *d != q);
        if !others().any(|d| within(q, d)) {
            continue;
        }
        eligible += 1;
        let best = others()
            .map(|d| (euclidean(descs[q].iter().copied(), descs[d].iter().copied()), d))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, d)) = best {
            if within(q, d) {
                hits += 1;
            }
        }
    }
    (eligible > 0).then(|| hits as f64 / eligible as f64)
}

/// Trains an encoder with SGD (momentum, weight decay, step decay) on the
/// triplet margin loss, re-mining triplets every epoch. Returns the weights
/// of the epoch with the best validation recall@1 (lowest loss breaks ties),
/// rounded to `f32` precision.
pub fn train(dataset: &[(Heatmap, [f64; 2])], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some((first, _)) = dataset.first() else {
        return Err(Error::NoTriplets { records: 0, skipped: 0 });
    };
    let arch = cfg
        .arch
        .clone()
        .unwrap_or_else(|| EncoderArch::for_input(first.rows(), first.cols()));
    let mut w = EncoderWeights::init(arch, cfg.seed)?;
    let inputs = dataset
        .iter()
        .map(|(h, _)| prepare_input(h, &w.arch))
        .collect::<Result<Vec<_>>>()?;
    let positions: Vec<[f64; 2]> = dataset.iter().map(|(_, p)| *p).collect();

    let is_val = |i: usize| cfg.val_stride > 0 && i % cfg.val_stride == cfg.val_stride - 1;
    let train_idx: Vec<usize> = (0..dataset.len()).filter(|i| !is_val(*i)).collect();
    let val_idx: Vec<usize> = (0..dataset.len()).filter(|i| is_val(*i)).collect();
    let train_pos: Vec<[f64; 2]> = train_idx.iter().map(|i| positions[*i]).collect();

    let probe = mine_triplets(&train_pos, &cfg.mining, cfg.seed)?;
    if probe.triplets.is_empty() {
        return Err(Error::NoTriplets {
            records: train_idx.len(),
            skipped: probe.skipped,
        });
    }

    let mut velocity = vec![0.0; w.n_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut history = Vec::new();
    let mut best: Option<((f64, f64), EncoderWeights, usize)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mined = mine_triplets(&train_pos, &cfg.mining, rng.random())?;
        let mut triplets: Vec<Triplet> = mined
            .triplets
            .into_iter()
            .map(|t| Triplet {
                query: train_idx[t.query],
                positives: t.positives.iter().map(|i| train_idx[*i]).collect(),
                negatives: t.negatives.iter().map(|i| train_idx[*i]).collect(),
            })
            .collect();
        triplets.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in triplets.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let (loss, grads) = batch_gradient(&inputs, batch, &w, cfg.margin, scale);
            epoch_loss += loss;
            for ((p, v), g) in w.params_mut().zip(velocity.iter_mut()).zip(grads.params()) {
                let g = g + cfg.weight_decay * *p;
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        if !w.is_finite() {
            return Err(Error::Domain(format!("training diverged in epoch {epoch}")));
        }
        let mean_loss = epoch_loss / triplets.len() as f64;

        let val_recall1 = if val_idx.is_empty() {
            None
        } else {
            let descs: Vec<Vec<f64>> = inputs.iter().map(|x| encode_input(x, &w).0).collect();
            validation_recall(&descs, &positions, &val_idx, cfg.mining.r_pos)
        };
        log::debug!("epoch {epoch}: loss {mean_loss:.5} lr {lr} val@1 {val_recall1:?}");
        history.push(EpochLog {
            epoch,
            mean_loss,
            lr,
            val_recall1,
        });

        let key = (val_recall1.unwrap_or(0.0), -mean_loss);
        let improved = match &best {
            None => true,
            Some((k, _, _)) => key.0 > k.0 || (key.0 == k.0 && key.1 > k.1),
        };
        if improved {
            best = Some((key, w.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    let (_, mut weights, best_epoch) = best.expect("at least one epoch ran");
    weights.round_to_f32();
    Ok(TrainOutcome {
        weights,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f32]) -> Descriptor {
        Descriptor::new(v.to_vec())
    }

    #[test]
    fn default_descriptor_dim() {
        let arch = EncoderArch::default();
        assert_eq!(arch.pools, vec![(4, 2), (4, 2), (4, 2), (1, 1)]);
        assert_eq!(arch.descriptor_dim(), 32 * 96);
    }

    #[test]
    fn arch_validation() {
        let mut a = EncoderArch::for_input(8, 16);
        assert!(a.validate().is_ok());
        a.pools[0] = (16, 2);
        assert!(a.validate().is_err());
        let mut b = EncoderArch::for_input(8, 16);
        b.channels.pop();
        assert!(b.validate().is_err());
    }

    #[test]
    fn loss_zero_when_margin_met() {
        let q = d(&[1.0, 0.0]);
        assert_eq!(triplet_loss(&q, &[q.clone()], &[d(&[-1.0, 0.0]), d(&[0.0, 1.0])], 0.5), 0.0);
    }

    #[test]
    fn loss_hand_values() {
        let l = triplet_loss(&d(&[1.0, 0.0]), &[d(&[0.0, 1.0])], &[d(&[1.0, 0.0])], 0.5);
        assert!((l - (2f64.sqrt() + 0.5)).abs() < 1e-12);
        assert!((l - 1.9142).abs() < 1e-4);
        let l = triplet_loss(&d(&[0.0]), &[d(&[0.9]), d(&[0.2])], &[d(&[1.0])], 0.5);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(4), 0.01);
        assert_eq!(cfg.lr_at(5), 0.005);
        assert!((cfg.lr_at(12) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn mining_defaults_and_dead_zone() {
        let m = MiningConfig::default();
        assert_eq!((m.r_pos, m.r_neg, m.n_pos, m.n_neg), (3.0, 18.0, 1, 10));
        let out = mine_triplets(&[[0.0, 0.0], [5.0, 0.0]], &m, 0).unwrap();
        assert!(out.triplets.is_empty());
        assert_eq!(out.skipped, 2);
        let bad = MiningConfig { r_pos: 20.0, ..m };
        assert!(mine_triplets(&[[0.0, 0.0]], &bad, 0).is_err());
    }

    #[test]
    fn zero_input_gives_canonical_descriptor() {
        let arch = EncoderArch::for_input(8, 16);
        let mut w = EncoderWeights::init(arch, 1).unwrap();
        for l in &mut w.layers {
            l.bias.fill(0.0);
        }
        let h = Heatmap::uniform(8, 16, vec![0.0; 128], 1.0, 0.0, 0.1).unwrap();
        let desc = encode(&h, &w).unwrap();
        assert!(desc.degenerate);
        assert_eq!(desc.values[0], 1.0);
        assert!(desc.values[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encode_rejects_wrong_size() {
        let w = EncoderWeights::init(EncoderArch::for_input(8, 16), 1).unwrap();
        let h = Heatmap::uniform(8, 8, vec![0.0; 64], 1.0, 0.0, 0.1).unwrap();
        assert!(matches!(encode(&h, &w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn conv_backward_matches_adjoint() {
        // <conv(x), g> == <x, conv^T(g)> for the input gradient.
        let p = LayerParams {
            cin: 2,
            cout: 3,
            kernel: (0..54).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect(),
            bias: vec![0.0; 3],
        };
        let (h, w) = (4, 5);
        let x: Vec<f64> = (0..40).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let g: Vec<f64> = (0..60).map(|i| ((i * 5) % 9) as f64 / 9.0 - 0.3).collect();
        let y = conv_forward(&p, &x, h, w);
        let mut grad = LayerParams::zeros(2, 3);
        let dx = conv_backward(&p, &x, &g, h, w, &mut grad, true).unwrap();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
