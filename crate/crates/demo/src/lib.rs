//! WebAssembly exports for the static demo page in `www/`.
//!
//! The computations live in [`explore`] as plain Rust so they can be tested
//! natively; the `#[wasm_bindgen]` functions only convert errors.

use wasm_bindgen::prelude::*;

pub mod explore {
    use featcache::channel_aug::{score_channels, ChannelSelection};
    use featcache::codec::{decode, encode, CodecParams};
    use featcache::refnet::{gen_synthetic_dataset, RefNet};
    use featcache::store::epoch_plan;
    use featcache::{rng, Error, Result, Tensor};

    pub const FIELD_SIDE: usize = 64;
    /// Tolerances swept for the ratio curve.
    pub const TAU_SWEEP: [f64; 7] = [0.0, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

    /// A `FIELD_SIDE²` field blending smooth waves with white noise;
    /// `smoothness` 1 is all waves, 0 is all noise.
    pub fn field(smoothness: f64, seed: u32) -> Result<Tensor> {
        if !(0.0..=1.0).contains(&smoothness) {
            return Err(Error::InvalidConfig("smoothness must be in [0, 1]".into()));
        }
        let mut r = rng::seeded(seed as u64, 0);
        let waves: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    1.0 + 5.0 * rng::unit_f64(&mut r),
                    1.0 + 5.0 * rng::unit_f64(&mut r),
                    std::f64::consts::TAU * rng::unit_f64(&mut r),
                )
            })
            .collect();
        let n = FIELD_SIDE;
        let data = (0..n * n)
            .map(|p| {
                let (y, x) = ((p / n) as f64 / n as f64, (p % n) as f64 / n as f64);
                let smooth: f64 = waves
                    .iter()
                    .map(|(fx, fy, ph)| (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
                    .sum::<f64>()
                    / 2.0;
                let noise = 2.0 * rng::unit_f64(&mut r) - 1.0;
                (smoothness * smooth + (1.0 - smoothness) * noise) as f32
            })
            .collect();
        Tensor::new(vec![n, n], data)
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct CodecOutcome {
        pub original: Vec<f32>,
        pub decoded: Vec<f32>,
        pub max_error: f64,
        pub ratio: f64,
        /// `(τ, ratio)` over [`TAU_SWEEP`].
        pub curve: Vec<(f64, f64)>,
    }

    pub fn codec_explorer(tau: f64, smoothness: f64, seed: u32) -> Result<CodecOutcome> {
        let t = field(smoothness, seed)?;
        let run = |tau: f64| -> Result<(Tensor, f64)> {
            let chunk = encode(std::slice::from_ref(&t), &CodecParams::with_tolerance(tau)?)?;
            let back = decode(&chunk)?.remove(0);
            Ok((back, chunk.compression_ratio()))
        };
        let (back, ratio) = run(tau)?;
        let curve = TAU_SWEEP
            .iter()
            .map(|&s| run(s).map(|(_, r)| (s, r)))
            .collect::<Result<_>>()?;
        Ok(CodecOutcome {
            max_error: t.max_abs_diff(&back)? as f64,
            original: t.into_data(),
            decoded: back.into_data(),
            ratio,
            curve,
        })
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct ChannelOutcome {
        pub scores: Vec<f64>,
        pub selected: Vec<usize>,
        /// `flip(F_OI)` then `F_FI` of the first image, each `8×16×16`.
        pub flipped_original: Vec<f32>,
        pub flipped_image: Vec<f32>,
        pub side: usize,
    }

    /// Flip-sensitivity scores of the reference network's first stage,
    /// averaged over a small synthetic batch.
    pub fn channel_sensitivity(seed: u32, gamma: f64) -> Result<ChannelOutcome> {
        let (images, _) = gen_synthetic_dataset(seed as u64, 16, 4, 32)?;
        let net = RefNet::new(seed as u64);
        let f_oi = images
            .iter()
            .map(|x| net.forward(x, 1))
            .collect::<Result<Vec<_>>>()?;
        let f_fi = images
            .iter()
            .map(|x| net.forward(&x.flip_h()?, 1))
            .collect::<Result<Vec<_>>>()?;
        let per = f_oi
            .iter()
            .zip(&f_fi)
            .map(|(a, b)| score_channels(a, b))
            .collect::<Result<Vec<_>>>()?;
        let scores = featcache::channel_aug::average_scores(per)?;
        let sel = ChannelSelection::from_scores(&scores, gamma)?;
        Ok(ChannelOutcome {
            scores,
            selected: sel.indices,
            flipped_original: f_oi[0].flip_h()?.into_data(),
            flipped_image: f_fi[0].data().to_vec(),
            side: f_oi[0].shape()[1],
        })
    }

    pub fn shuffle_trace(n: usize, k: usize, seed: u32) -> Result<Vec<usize>> {
        if n == 0 || k == 0 || n > 4096 {
            return Err(Error::InvalidConfig(
                "need 1 <= n <= 4096 and k >= 1".into(),
            ));
        }
        Ok(epoch_plan(n, k, seed as u64))
    }
}

fn js_err(e: featcache::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct CodecView(explore::CodecOutcome);

#[wasm_bindgen]
impl CodecView {
    pub fn side(&self) -> usize {
        explore::FIELD_SIDE
    }
    pub fn original(&self) -> Vec<f32> {
        self.0.original.clone()
    }
    pub fn decoded(&self) -> Vec<f32> {
        self.0.decoded.clone()
    }
    pub fn max_error(&self) -> f64 {
        self.0.max_error
    }
    pub fn ratio(&self) -> f64 {
        self.0.ratio
    }
    pub fn curve_tau(&self) -> Vec<f64> {
        self.0.curve.iter().map(|c| c.0).collect()
    }
    pub fn curve_ratio(&self) -> Vec<f64> {
        self.0.curve.iter().map(|c| c.1).collect()
    }
}

#[wasm_bindgen]
pub struct ChannelView(explore::ChannelOutcome);

#[wasm_bindgen]
impl ChannelView {
    pub fn scores(&self) -> Vec<f64> {
        self.0.scores.clone()
    }
    pub fn selected(&self) -> Vec<u32> {
        self.0.selected.iter().map(|&c| c as u32).collect()
    }
    pub fn flipped_original(&self) -> Vec<f32> {
        self.0.flipped_original.clone()
    }
    pub fn flipped_image(&self) -> Vec<f32> {
        self.0.flipped_image.clone()
    }
    pub fn side(&self) -> usize {
        self.0.side
    }
}

/// Compress a synthetic field at `tau`; `smoothness` in [0, 1].
#[wasm_bindgen]
pub fn codec_explorer(tau: f64, smoothness: f64, seed: u32) -> Result<CodecView, JsError> {
    explore::codec_explorer(tau, smoothness, seed)
        .map(CodecView)
        .map_err(js_err)
}

#[wasm_bindgen]
pub fn channel_sensitivity(seed: u32, gamma: f64) -> Result<ChannelView, JsError> {
    explore::channel_sensitivity(seed, gamma)
        .map(ChannelView)
        .map_err(js_err)
}

/// Sample ids in the order one shuffled epoch visits them.
#[wasm_bindgen]
pub fn shuffle_trace(n: usize, k: usize, seed: u32) -> Result<Vec<u32>, JsError> {
    explore::shuffle_trace(n, k, seed)
        .map(|v| v.into_iter().map(|i| i as u32).collect())
        .map_err(js_err)
}
