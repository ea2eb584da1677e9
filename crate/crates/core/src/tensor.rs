//! Dense row-major `f32` tensors and the elementary operations the rest of the
//! crate builds on.
//!
//! CNN feature maps use the channel-first `C×H×W` convention; transformer
//! activations are `N×D` token matrices.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, rejecting empty shapes, zero dims, length mismatches
    /// and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        validate_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let numel = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![0.0; numel],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the trailing two axes (`H×W`), or the whole tensor for rank 1.
    pub fn plane_len(&self) -> usize {
        self.shape.iter().rev().take(2).product()
    }

    /// Leading-axis slice `i` of a tensor, e.g. channel `i` of a `C×H×W` map or
    /// row `i` of an `N×D` token matrix.
    pub fn slab(&self, i: usize) -> Result<&[f32]> {
        let lead = self.shape[0];
        if i >= lead {
            return Err(Error::OutOfRange {
                index: i,
                len: lead,
            });
        }
        let len = self.numel() / lead;
        Ok(&self.data[i * len..(i + 1) * len])
    }

    pub(crate) fn slab_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.numel() / self.shape[0];
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Gathers leading-axis slabs into a new tensor of shape
    /// `indices.len() × rest`. Fails on an empty index list.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::InvalidShape("cannot gather zero slabs".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.numel() / self.shape[0]);
        for &i in indices {
            data.extend_from_slice(self.slab(i)?);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        ensure_same_shape(self.shape(), other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max))
    }

    /// Horizontal flip: reverses the last (width) axis.
    pub fn flip_h(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::InvalidShape(format!(
                "flip_h needs rank >= 2, got shape {:?}",
                self.shape
            )));
        }
        let width = *self.shape.last().unwrap();
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(width) {
            data.extend(row.iter().rev());
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("shape must not be empty".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`, accumulated in `f64`.
///
/// A zero-norm argument is reported as [`Error::DegenerateVector`] with index 0
/// for `a` and 1 for `b`; callers that iterate over rows remap the index.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 {
        return Err(Error::DegenerateVector { index: 0 });
    }
    if nb == 0.0 {
        return Err(Error::DegenerateVector { index: 1 });
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Extra augmentations applied to a (possibly channel-replaced) feature map.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PerturbConfig {
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f32,
    /// Gaussian blur half-width in pixels; the kernel sigma is `radius / 2`.
    pub blur_radius: usize,
    /// Maximum random shift of the crop window; the shifted-out border is
    /// filled by reflection so the shape is unchanged.
    pub crop_margin: usize,
}

impl PerturbConfig {
    pub fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0 && self.blur_radius == 0 && self.crop_margin == 0
    }
}

/// Random crop (reflect-padded back to size), then Gaussian blur, then
/// Gaussian noise, all driven by `seed`. Operates on the trailing two axes.
pub fn seeded_perturb(t: &Tensor, config: &PerturbConfig, seed: u64) -> Result<Tensor> {
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be finite and >= 0, got {}",
            config.noise_sigma
        )));
    }
    if t.rank() < 2 {
        return Err(Error::InvalidShape(format!(
            "perturb needs rank >= 2, got shape {:?}",
            t.shape()
        )));
    }
    let h = t.shape[t.rank() - 2];
    let w = t.shape[t.rank() - 1];
    if config.crop_margin > 0 && config.crop_margin >= h.min(w) {
        return Err(Error::InvalidConfig(format!(
            "crop margin {} must be < min(H, W) = {}",
            config.crop_margin,
            h.min(w)
        )));
    }
    let mut rng = rng::seeded(seed, 0);
    let mut out = t.clone();

    if config.crop_margin > 0 {
        let span = 2 * config.crop_margin as u64 + 1;
        let dy = rng::below(&mut rng, span) as isize - config.crop_margin as isize;
        let dx = rng::below(&mut rng, span) as isize - config.crop_margin as isize;
        for (src, dst) in t
            .data
            .chunks_exact(h * w)
            .zip(out.data.chunks_exact_mut(h * w))
        {
            for y in 0..h {
                let sy = reflect(y as isize + dy, h);
                for x in 0..w {
                    let sx = reflect(x as isize + dx, w);
                    dst[y * w + x] = src[sy * w + sx];
                }
            }
        }
    }

    if config.blur_radius > 0 {
        let kernel = gaussian_kernel(config.blur_radius);
        let mut tmp = vec![0.0f32; h * w];
        for plane in out.data.chunks_exact_mut(h * w) {
            blur_plane(plane, &mut tmp, h, w, &kernel);
        }
    }

    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, config.noise_sigma)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in out.data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

fn gaussian_kernel(radius: usize) -> Vec<f32> {
    let sigma = radius as f64 / 2.0;
    let weights: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / sum) as f32).collect()
}

fn blur_plane(plane: &mut [f32], tmp: &mut [f32], h: usize, w: usize, kernel: &[f32]) {
    let r = (kernel.len() / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, &kw) in kernel.iter().enumerate() {
                acc += kw * plane[y * w + reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, &kw) in kernel.iter().enumerate() {
                acc += kw * tmp[reflect(y as isize + k as isize - r, h) * w + x];
            }
            plane[y * w + x] = acc;
        }
    }
}
