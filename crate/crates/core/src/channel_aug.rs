//! Similarity-aware channel augmentation for CNN feature maps.
//!
//! Some convolution kernels commute with a horizontal flip (flipping the input
//! just flips their activation) and some do not. For a sample `I` with
//! features `F_OI = f(I)` and `F_FI = f(flip(I))`, each channel is scored by
//! the SSIM between `F_FI[c]` and `flip(F_OI)[c]`; the lowest-scoring
//! `round(γ·C)` channels are flip-sensitive. Their `F_FI` activations are
//! stored next to the cached `F_OI`, and at training time a flip augmentation
//! is `flip(F_OI)` with those channels overwritten by the stored values.

use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

/// Global (single-window) SSIM between two equally sized channels.
///
/// Uses population statistics with `C1 = (0.01 L)²`, `C2 = (0.03 L)²` where
/// `L` is the joint dynamic range of both channels. Two identical constant
/// channels (`L = 0`) score 1.
pub fn ssim(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "ssim needs at least 2 elements, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sa, mut sb) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
        sa += x;
        sb += y;
    }
    let range = hi - lo;
    if range == 0.0 {
        return Ok(1.0);
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    Ok(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
}

/// Per-channel SSIM between `F_FI` and `flip(F_OI)`.
pub fn score_channels(f_oi: &Tensor, f_fi: &Tensor) -> Result<Vec<f64>> {
    ensure_same_shape(f_oi.shape(), f_fi.shape())?;
    if f_oi.rank() != 3 {
        return Err(Error::InvalidShape(format!(
            "expected C×H×W feature map, got {:?}",
            f_oi.shape()
        )));
    }
    let flipped = f_oi.flip_h()?;
    (0..f_oi.shape()[0])
        .map(|c| ssim(f_fi.slab(c)?, flipped.slab(c)?))
        .collect()
}

/// Mean of per-sample score vectors, summed in the given order.
pub fn average_scores<I>(scores: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut iter = scores.into_iter();
    let mut acc = iter
        .next()
        .ok_or_else(|| Error::Empty("no score vectors to average".into()))?;
    let mut n = 1usize;
    for s in iter {
        if s.len() != acc.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![acc.len()],
                actual: vec![s.len()],
            });
        }
        for (a, v) in acc.iter_mut().zip(&s) {
            *a += v;
        }
        n += 1;
    }
    for a in acc.iter_mut() {
        *a /= n as f64;
    }
    Ok(acc)
}

/// `round(fraction · total)` with ties rounded away from zero.
pub fn selection_count(fraction: f64, total: usize) -> usize {
    (fraction * total as f64).round() as usize
}

/// Channel ids of the `round(γ·C)` lowest scores, returned in ascending id
/// order. Equal scores prefer the lower channel id.
pub fn select_sensitive_channels(scores: &[f64], gamma: f64) -> Result<Vec<usize>> {
    check_fraction("gamma", gamma)?;
    let x = selection_count(gamma, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut picked = order[..x].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub(crate) fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidConfig(format!(
            "{name} must be in [0, 1], got {v}"
        )));
    }
    Ok(())
}

/// Dataset-level channel selection shared by every cached sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSelection {
    pub gamma: f64,
    pub channels: usize,
    pub indices: Vec<usize>,
}

impl ChannelSelection {
    pub fn new(gamma: f64, channels: usize, indices: Vec<usize>) -> Result<Self> {
        check_fraction("gamma", gamma)?;
        if indices.len() != selection_count(gamma, channels) {
            return Err(Error::InvalidConfig(format!(
                "{} indices for gamma {gamma} over {channels} channels",
                indices.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i >= channels) {
            return Err(Error::InvalidConfig(
                "channel indices must be strictly increasing and < channel count".into(),
            ));
        }
        Ok(Self {
            gamma,
            channels,
            indices,
        })
    }

    pub fn from_scores(scores: &[f64], gamma: f64) -> Result<Self> {
        let indices = select_sensitive_channels(scores, gamma)?;
        Self::new(gamma, scores.len(), indices)
    }

    /// Scores every `(F_OI, F_FI)` pair, averages, and selects.
    pub fn from_pairs<'a, I>(pairs: I, gamma: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a Tensor, &'a Tensor)>,
    {
        let scores = pairs
            .into_iter()
            .map(|(oi, fi)| score_channels(oi, fi))
            .collect::<Result<Vec<_>>>()?;
        Self::from_scores(&average_scores(scores)?, gamma)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The selected channels of `F_FI`, or `None` when nothing is selected.
    pub fn extract(&self, f_fi: &Tensor) -> Result<Option<Tensor>> {
        if f_fi.rank() != 3 || f_fi.shape()[0] != self.channels {
            return Err(Error::InvalidShape(format!(
                "expected {}×H×W, got {:?}",
                self.channels,
                f_fi.shape()
            )));
        }
        if self.is_empty() {
            return Ok(None);
        }
        f_fi.gather(&self.indices).map(Some)
    }

    /// Augmentation block encoding: γ (f64), C (u32), x (u32), x × u32 ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.len());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for &i in &self.indices {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let gamma = r.f64()?;
        let channels = r.u32()? as usize;
        let x = r.u32()? as usize;
        if x > channels {
            return Err(Error::Format(format!(
                "{x} selected of {channels} channels"
            )));
        }
        let indices = (0..x)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes in channel selection".into()));
        }
        Self::new(gamma, channels, indices).map_err(|e| Error::Format(e.to_string()))
    }
}

/// `flip(features)` with the selected channels replaced by `stored`.
///
/// `stored` must be `x×H×W` in selection order; it may only be omitted when
/// the selection is empty.
pub fn apply_flip_augmentation(
    features: &Tensor,
    selection: &ChannelSelection,
    stored: Option<&Tensor>,
) -> Result<Tensor> {
    if features.rank() != 3 || features.shape()[0] != selection.channels {
        return Err(Error::InvalidShape(format!(
            "expected {}×H×W features, got {:?}",
            selection.channels,
            features.shape()
        )));
    }
    let mut out = features.flip_h()?;
    if selection.is_empty() {
        return Ok(out);
    }
    let stored = stored.ok_or_else(|| {
        Error::AugmentationUnavailable(format!(
            "{} channels selected but no stored channels present",
            selection.len()
        ))
    })?;
    let mut expected = features.shape().to_vec();
    expected[0] = selection.len();
    ensure_same_shape(&expected, stored.shape())?;
    for (slot, &c) in selection.indices.iter().enumerate() {
        out.slab_mut(c).copy_from_slice(stored.slab(slot)?);
    }
    Ok(out)
}
