//! Desk-scale test rig: a frozen two-stage conv extractor, a synthetic
//! labelled image set, and a linear softmax probe trained by SGD.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Output channels of each stage.
pub const STAGE_CHANNELS: [usize; 2] = [8, 16];
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone)]
struct ConvStage {
    cin: usize,
    cout: usize,
    /// `cout × cin × 3 × 3`
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvStage {
    fn seeded(cin: usize, cout: usize, r: &mut impl Rng) -> Self {
        let sigma = 1.0 / ((cin * 9) as f64).sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let weights = (0..cout * cin * 9)
            .map(|_| normal.sample(r) as f32)
            .collect();
        let bias = (0..cout).map(|_| normal.sample(r) as f32).collect();
        Self {
            cin,
            cout,
            weights,
            bias,
        }
    }

    /// conv3x3 (pad 1) → ReLU → 2×2 max-pool.
    fn apply(&self, input: &[f32], h: usize, w: usize) -> Vec<f32> {
        let plane = h * w;
        let mut conv = vec![0f32; self.cout * plane];
        for co in 0..self.cout {
            let out = &mut conv[co * plane..(co + 1) * plane];
            out.fill(self.bias[co]);
            for ci in 0..self.cin {
                let src = &input[ci * plane..(ci + 1) * plane];
                let k = &self.weights[(co * self.cin + ci) * 9..][..9];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let kv = k[dy * 3 + dx];
                        for y in 0..h {
                            let sy = y + dy;
                            if sy == 0 || sy > h {
                                continue;
                            }
                            let srow = &src[(sy - 1) * w..sy * w];
                            let orow = &mut out[y * w..(y + 1) * w];
                            let (x0, x1) = match dx {
                                0 => (1, w),
                                1 => (0, w),
                                _ => (0, w - 1),
                            };
                            for x in x0..x1 {
                                orow[x] += kv * srow[x + dx - 1];
                            }
                        }
                    }
                }
            }
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut pooled = Vec::with_capacity(self.cout * oh * ow);
        for c in 0..self.cout {
            let p = &conv[c * plane..(c + 1) * plane];
            for y in 0..oh {
                for x in 0..ow {
                    let m = p[2 * y * w + 2 * x]
                        .max(p[2 * y * w + 2 * x + 1])
                        .max(p[(2 * y + 1) * w + 2 * x])
                        .max(p[(2 * y + 1) * w + 2 * x + 1]);
                    pooled.push(m.max(0.0));
                }
            }
        }
        pooled
    }
}

/// Frozen feature extractor: stage 1 maps 3→8 channels, stage 2 maps 8→16,
/// each halving the spatial size.
#[derive(Debug, Clone)]
pub struct RefNet {
    stages: [ConvStage; 2],
}

impl RefNet {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::seeded(seed, 0);
        let s1 = ConvStage::seeded(INPUT_CHANNELS, STAGE_CHANNELS[0], &mut r);
        let s2 = ConvStage::seeded(STAGE_CHANNELS[0], STAGE_CHANNELS[1], &mut r);
        Self { stages: [s1, s2] }
    }

    /// Stage `stage` (1-based) bias vector.
    pub fn bias(&self, stage: usize) -> &[f32] {
        &self.stages[stage - 1].bias
    }

    /// Runs `input` (`3×H×W`) through the first `up_to_stage` stages.
    pub fn forward(&self, input: &Tensor, up_to_stage: usize) -> Result<Tensor> {
        if !(1..=2).contains(&up_to_stage) {
            return Err(Error::InvalidConfig(format!(
                "stage {up_to_stage} not in 1..=2"
            )));
        }
        let s = input.shape();
        if s.len() != 3 || s[0] != INPUT_CHANNELS {
            return Err(Error::InvalidShape(format!(
                "expected 3×H×W input, got {s:?}"
            )));
        }
        let div = 1 << up_to_stage;
        let (mut h, mut w) = (s[1], s[2]);
        if h % div != 0 || w % div != 0 {
            return Err(Error::InvalidShape(format!(
                "{h}×{w} is not divisible by {div} for stage {up_to_stage}"
            )));
        }
        let mut x = input.data().to_vec();
        for stage in &self.stages[..up_to_stage] {
            x = stage.apply(&x, h, w);
            h /= 2;
            w /= 2;
        }
        Tensor::new(vec![STAGE_CHANNELS[up_to_stage - 1], h, w], x)
    }
}

/// Class patterns, in label order. Vertical and horizontal stripes look the
/// same after a horizontal flip; the diagonal and the ramp do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    VerticalStripes,
    HorizontalStripes,
    Diagonal,
    Ramp,
}

pub const PATTERNS: [Pattern; 4] = [
    Pattern::VerticalStripes,
    Pattern::HorizontalStripes,
    Pattern::Diagonal,
    Pattern::Ramp,
];

impl Pattern {
    pub fn mirror_symmetric(self) -> bool {
        matches!(self, Pattern::VerticalStripes | Pattern::HorizontalStripes)
    }
}

/// Per-pixel noise added on top of the unit-amplitude pattern.
pub const DATASET_NOISE: f64 = 1.2;

/// `n` images of `3×size×size` with labels in `[0, classes)`, exactly
/// `n / classes` per class, in a seeded order.
pub fn gen_synthetic_dataset(
    seed: u64,
    n: usize,
    classes: usize,
    size: usize,
) -> Result<(Vec<Tensor>, Vec<u32>)> {
    if !(2..=PATTERNS.len()).contains(&classes) {
        return Err(Error::InvalidConfig(format!(
            "classes must be in 2..={}",
            PATTERNS.len()
        )));
    }
    if !n.is_multiple_of(classes) {
        return Err(Error::InvalidConfig(format!(
            "n = {n} is not divisible by {classes} classes"
        )));
    }
    if size < 4 {
        return Err(Error::InvalidConfig("image size must be >= 4".into()));
    }
    let mut labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    rng::shuffle(&mut rng::seeded(seed, 1), &mut labels);

    let mut r = rng::seeded(seed, 2);
    let noise = Normal::new(0.0, DATASET_NOISE).expect("finite sigma");
    let images = labels
        .iter()
        .map(|&l| {
            let pattern = PATTERNS[l as usize];
            let period = 4.0 + 4.0 * rng::unit_f64(&mut r);
            let phase = std::f64::consts::TAU * rng::unit_f64(&mut r);
            let gains: Vec<f64> = (0..INPUT_CHANNELS)
                .map(|_| 0.8 + 0.4 * rng::unit_f64(&mut r))
                .collect();
            let mut data = Vec::with_capacity(INPUT_CHANNELS * size * size);
            let base: Vec<f64> = (0..size * size)
                .map(|p| {
                    let (y, x) = ((p / size) as f64, (p % size) as f64);
                    let wave = |t: f64| (std::f64::consts::TAU * t / period + phase).sin();
                    match pattern {
                        Pattern::VerticalStripes => wave(x),
                        Pattern::HorizontalStripes => wave(y),
                        // bottom-left to top-right
                        Pattern::Diagonal => wave(x + y),
                        Pattern::Ramp => 2.0 * x / (size - 1) as f64 - 1.0,
                    }
                })
                .collect();
            for g in &gains {
                data.extend(base.iter().map(|b| (g * b + noise.sample(&mut r)) as f32));
            }
            Tensor::new(vec![INPUT_CHANNELS, size, size], data).expect("finite by construction")
        })
        .collect();
    Ok((images, labels))
}

/// Single linear layer with softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    dim: usize,
    classes: usize,
    /// Row-major `classes × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// Mean training loss of each completed epoch.
    pub loss_history: Vec<f64>,
}

const PROBE_MAGIC: &[u8; 4] = b"AFLP";
pub const PROBE_INIT_SIGMA: f64 = 0.01;

impl LinearProbe {
    /// Weights drawn from N(0, 0.01²), zero bias.
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        Self::with_init_sigma(dim, classes, seed, PROBE_INIT_SIGMA)
    }

    pub fn with_init_sigma(dim: usize, classes: usize, seed: u64, sigma: f64) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "probe needs dim >= 1 and classes >= 2, got {dim}, {classes}"
            )));
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut r = rng::seeded(seed, 3);
        Ok(Self {
            dim,
            classes,
            weights: (0..dim * classes).map(|_| normal.sample(&mut r)).collect(),
            bias: vec![0.0; classes],
            loss_history: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weights then biases.
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        if i < self.weights.len() {
            self.weights[i] = v;
        } else {
            let j = i - self.weights.len();
            self.bias[j] = v;
        }
    }

    fn check_input(&self, x: &[f32], label: Option<u32>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim],
                actual: vec![x.len()],
            });
        }
        if let Some(l) = label {
            if l as usize >= self.classes {
                return Err(Error::OutOfRange {
                    index: l as usize,
                    len: self.classes,
                });
            }
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_input(x, None)?;
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>() + b)
            .collect())
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        let z = self.logits(x)?;
        let mut best = 0;
        for (c, &v) in z.iter().enumerate().skip(1) {
            if v > z[best] {
                best = c;
            }
        }
        Ok(best)
    }

    fn softmax(z: &[f64]) -> Vec<f64> {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn loss(&self, x: &[f32], label: u32) -> Result<f64> {
        self.check_input(x, Some(label))?;
        let z = self.logits(x)?;
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        Ok(lse - z[label as usize])
    }

    /// Analytic gradient of [`loss`](Self::loss), laid out like
    /// [`param`](Self::param), plus the loss itself.
    pub fn gradient(&self, x: &[f32], label: u32) -> Result<(Vec<f64>, f64)> {
        self.check_input(x, Some(label))?;
        let z = self.logits(x)?;
        let mut p = Self::softmax(&z);
        let loss = -p[label as usize].max(f64::MIN_POSITIVE).ln();
        p[label as usize] -= 1.0;
        let mut g = Vec::with_capacity(self.num_params());
        for &pc in &p {
            g.extend(x.iter().map(|&v| pc * v as f64));
        }
        g.extend_from_slice(&p);
        Ok((g, loss))
    }

    /// One SGD update; returns the loss before the update.
    pub fn sgd_step(&mut self, x: &[f32], label: u32, lr: f64) -> Result<f64> {
        self.check_input(x, Some(label))?;
        let z = self.logits(x)?;
        let mut p = Self::softmax(&z);
        let loss = -p[label as usize].max(f64::MIN_POSITIVE).ln();
        p[label as usize] -= 1.0;
        if lr != 0.0 {
            for (c, &pc) in p.iter().enumerate() {
                let step = lr * pc;
                for (w, &v) in self.weights[c * self.dim..(c + 1) * self.dim]
                    .iter_mut()
                    .zip(x)
                {
                    *w -= step * v as f64;
                }
                self.bias[c] -= step;
            }
        }
        Ok(loss)
    }

    /// One pass over `samples` in the order given; records and returns the
    /// mean loss.
    pub fn train_epoch<'a, I>(&mut self, samples: I, lr: f64) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a [f32], u32)>,
    {
        let (mut total, mut count) = (0.0, 0usize);
        for (x, l) in samples {
            total += self.sgd_step(x, l, lr)?;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("no training samples".into()));
        }
        let mean = total / count as f64;
        self.loss_history.push(mean);
        Ok(mean)
    }

    /// Flat snapshot: magic, dim u32, classes u32, weights f64, bias f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.num_params());
        out.extend_from_slice(PROBE_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = crate::codec::Reader::new(buf);
        if r.take(4)? != PROBE_MAGIC {
            return Err(Error::Format("bad probe magic".into()));
        }
        let dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let n = dim
            .checked_mul(classes)
            .ok_or_else(|| Error::Format("probe size overflows".into()))?;
        if buf.len() != 12 + 8 * (n + classes) {
            return Err(Error::Format("probe snapshot length mismatch".into()));
        }
        let weights = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
        let bias = (0..classes).map(|_| r.f64()).collect::<Result<_>>()?;
        Ok(Self {
            dim,
            classes,
            weights,
            bias,
            loss_history: Vec::new(),
        })
    }
}

fn class_count(labels: &[u32]) -> usize {
    labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1)
        .max(2)
}

/// Trains a fresh probe for `epochs` passes over `features` in the given
/// order. The class count is `max(label) + 1` (at least 2).
pub fn train_linear_probe(
    features: &[Tensor],
    labels: &[u32],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LinearProbe> {
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![features.len()],
            actual: vec![labels.len()],
        });
    }
    let first = features
        .first()
        .ok_or_else(|| Error::Empty("no training samples".into()))?;
    let mut probe = LinearProbe::new(first.numel(), class_count(labels), seed)?;
    for _ in 0..epochs {
        probe.train_epoch(
            features
                .iter()
                .map(|t| t.data())
                .zip(labels.iter().copied()),
            lr,
        )?;
    }
    Ok(probe)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(probe: &LinearProbe, features: &[Tensor], labels: &[u32]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Empty("no evaluation samples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![features.len()],
            actual: vec![labels.len()],
        });
    }
    let mut correct = 0usize;
    for (f, &l) in features.iter().zip(labels) {
        if probe.predict(f.data())? == l as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Central-difference check of one parameter's gradient. Returns
/// `(analytic, numeric, relative error)`.
pub fn gradient_check(
    probe: &LinearProbe,
    x: &[f32],
    label: u32,
    param: usize,
    h: f64,
) -> Result<(f64, f64, f64)> {
    if param >= probe.num_params() {
        return Err(Error::OutOfRange {
            index: param,
            len: probe.num_params(),
        });
    }
    let (g, _) = probe.gradient(x, label)?;
    let mut p = probe.clone();
    let orig = p.param(param);
    p.set_param(param, orig + h);
    let up = p.loss(x, label)?;
    p.set_param(param, orig - h);
    let down = p.loss(x, label)?;
    let numeric = (up - down) / (2.0 * h);
    let analytic = g[param];
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    Ok((analytic, numeric, (analytic - numeric).abs() / denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_shapes() {
        let net = RefNet::new(1);
        let x = Tensor::zeros(vec![3, 32, 32]).unwrap();
        assert_eq!(net.forward(&x, 1).unwrap().shape(), &[8, 16, 16]);
        assert_eq!(net.forward(&x, 2).unwrap().shape(), &[16, 8, 8]);
        let odd = Tensor::zeros(vec![3, 30, 30]).unwrap();
        assert!(net.forward(&odd, 1).is_ok());
        assert!(matches!(net.forward(&odd, 2), Err(Error::InvalidShape(_))));
        assert!(net
            .forward(&Tensor::zeros(vec![2, 8, 8]).unwrap(), 1)
            .is_err());
    }

    #[test]
    fn zero_input_gives_relu_bias() {
        let net = RefNet::new(4);
        let y = net
            .forward(&Tensor::zeros(vec![3, 8, 8]).unwrap(), 1)
            .unwrap();
        for c in 0..8 {
            let want = net.bias(1)[c].max(0.0);
            assert!(y.slab(c).unwrap().iter().all(|&v| v == want));
        }
    }

    /// Direct definition of one output pixel, independent of the loop order
    /// used by the implementation.
    #[test]
    fn matches_naive_convolution() {
        let net = RefNet::new(9);
        let mut r = rng::seeded(2, 0);
        let (h, w) = (6, 8);
        let x = Tensor::new(
            vec![3, h, w],
            (0..3 * h * w)
                .map(|_| rng::unit_f64(&mut r) as f32 - 0.5)
                .collect(),
        )
        .unwrap();
        let y = net.forward(&x, 1).unwrap();
        let s = &net.stages[0];
        let conv = |co: usize, yy: usize, xx: usize| -> f32 {
            let mut acc = s.bias[co];
            for ci in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) =
                            (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        acc += s.weights[((co * 3 + ci) * 3 + ky) * 3 + kx]
                            * x.data()[(ci * h + sy as usize) * w + sx as usize];
                    }
                }
            }
            acc
        };
        for co in 0..8 {
            for py in 0..h / 2 {
                for px in 0..w / 2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(a, b)| conv(co, 2 * py + a, 2 * px + b))
                        .fold(f32::NEG_INFINITY, f32::max)
                        .max(0.0);
                    let got = y.data()[(co * (h / 2) + py) * (w / 2) + px];
                    assert!((got - m).abs() < 1e-5, "{got} vs {m}");
                }
            }
        }
    }

    #[test]
    fn dataset_balanced_and_deterministic() {
        let (imgs, labels) = gen_synthetic_dataset(3, 40, 4, 16).unwrap();
        assert_eq!(imgs.len(), 40);
        for c in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 10);
        }
        let (imgs2, labels2) = gen_synthetic_dataset(3, 40, 4, 16).unwrap();
        assert_eq!((imgs, labels), (imgs2, labels2));
        assert!(gen_synthetic_dataset(3, 41, 4, 16).is_err());
    }

    #[test]
    fn asymmetric_classes_change_under_flip() {
        let (imgs, labels) = gen_synthetic_dataset(5, 40, 4, 16).unwrap();
        for (img, &l) in imgs.iter().zip(&labels) {
            let flipped = img.flip_h().unwrap();
            let d2: f64 = img
                .data()
                .iter()
                .zip(flipped.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum();
            assert!(d2 > 0.0);
            if !PATTERNS[l as usize].mirror_symmetric() {
                assert!(d2 > 1.0);
            }
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let feats: Vec<Tensor> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                Tensor::new(
                    vec![3],
                    vec![s * (1.0 + (i % 5) as f32 * 0.1), 0.3, -0.2 * s],
                )
                .unwrap()
            })
            .collect();
        let labels: Vec<u32> = (0..40).map(|i| (i % 2) as u32).collect();
        let probe = train_linear_probe(&feats, &labels, 50, 0.1, 1).unwrap();
        assert_eq!(evaluate(&probe, &feats, &labels).unwrap(), 1.0);
        let again = train_linear_probe(&feats, &labels, 50, 0.1, 1).unwrap();
        assert_eq!(probe, again);
        assert!(probe.loss_history.last() < probe.loss_history.first());
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let feats = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(); 4];
        let labels = vec![0, 1, 0, 1];
        let trained = train_linear_probe(&feats, &labels, 3, 0.0, 8).unwrap();
        let init = LinearProbe::new(2, 2, 8).unwrap();
        assert_eq!(trained.weights(), init.weights());
        assert_eq!(trained.bias(), init.bias());
    }

    #[test]
    fn predict_ties_go_low() {
        let p = LinearProbe::with_init_sigma(2, 3, 0, 0.0).unwrap();
        assert_eq!(p.predict(&[1.0, 1.0]).unwrap(), 0);
    }

    #[test]
    fn evaluate_errors() {
        let p = LinearProbe::new(2, 2, 0).unwrap();
        assert!(matches!(evaluate(&p, &[], &[]), Err(Error::Empty(_))));
        let f = vec![Tensor::new(vec![3], vec![0.0; 3]).unwrap()];
        assert!(matches!(
            evaluate(&p, &f, &[0]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(p.clone().sgd_step(&[0.0, 0.0], 5, 0.1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::seeded(11, 0);
        let p = LinearProbe::with_init_sigma(6, 3, 2, 0.5).unwrap();
        for _ in 0..20 {
            let x: Vec<f32> = (0..6)
                .map(|_| (rng::unit_f64(&mut r) * 2.0 - 1.0) as f32)
                .collect();
            let label = rng::below(&mut r, 3) as u32;
            let i = rng::below(&mut r, p.num_params() as u64) as usize;
            let (_, _, rel) = gradient_check(&p, &x, label, i, 1e-5).unwrap();
            assert!(rel <= 1e-6, "param {i}: {rel}");
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let p = LinearProbe::new(5, 4, 3).unwrap();
        let q = LinearProbe::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        assert!(LinearProbe::from_bytes(&p.to_bytes()[..20]).is_err());
    }
}
