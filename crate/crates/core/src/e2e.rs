//! End-to-end run: synthetic images → frozen stage-1 features → compressed
//! cache → linear probe, comparing raw against compressed features and naive
//! against similarity-aware flip augmentation.

use std::path::Path;

use crate::channel_aug::{
    apply_flip_augmentation, average_scores, score_channels, ChannelSelection,
};
use crate::codec::CodecParams;
use crate::error::{Error, Result};
use crate::refnet::{evaluate, gen_synthetic_dataset, LinearProbe, RefNet};
use crate::rng;
use crate::store::{
    self, build_cache, open_cache, AugMeta, AugPayload, BuildConfig, SampleRecord, Verify,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct E2eConfig {
    pub n: usize,
    pub classes: usize,
    pub size: usize,
    pub tolerance: f64,
    pub gamma: f64,
    pub chunk_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of samples used for training; the rest form the test set.
    pub train_fraction: f64,
    /// Probability that a training sample is flipped in a given epoch.
    pub flip_prob: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            classes: 4,
            size: 32,
            tolerance: 1e-2,
            gamma: 0.25,
            chunk_size: store::DEFAULT_CHUNK_SIZE,
            epochs: 12,
            lr: 2e-4,
            train_fraction: 0.75,
            flip_prob: 0.5,
            workers: 1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eReport {
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Clean test set, probe trained on uncompressed features.
    pub raw_acc: f64,
    /// Clean test set, probe trained on cached features.
    pub compressed_acc: f64,
    /// Flip-augmented test set, cached features, plain horizontal flip.
    pub naive_flip_acc: f64,
    /// Flip-augmented test set, cached features, sensitive channels restored
    /// from stored flipped-image activations.
    pub aug_flip_acc: f64,
    pub selected_channels: Vec<usize>,
    pub channel_scores: Vec<f64>,
    /// Cache file size over raw f32 feature bytes (features plus stored channels).
    pub cache_ratio: f64,
}

impl E2eReport {
    pub fn compression_gap_pp(&self) -> f64 {
        100.0 * (self.raw_acc - self.compressed_acc).abs()
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Clone, Copy)]
enum Mode {
    Plain,
    NaiveFlip,
    AwareFlip,
}

/// Runs the whole pipeline once, writing the cache into `workdir`.
pub fn run_e2e(cfg: &E2eConfig, workdir: &Path) -> Result<E2eReport> {
    if !(0.0..1.0).contains(&cfg.train_fraction) || cfg.train_fraction == 0.0 {
        return Err(Error::InvalidConfig(
            "train fraction must be in (0, 1)".into(),
        ));
    }
    let (images, labels) = gen_synthetic_dataset(cfg.seed, cfg.n, cfg.classes, cfg.size)?;
    let net = RefNet::new(cfg.seed);
    let f_oi = images
        .iter()
        .map(|x| net.forward(x, 1))
        .collect::<Result<Vec<_>>>()?;
    let f_fi = images
        .iter()
        .map(|x| net.forward(&x.flip_h()?, 1))
        .collect::<Result<Vec<_>>>()?;

    let n_train = ((cfg.n as f64) * cfg.train_fraction).round() as usize;
    if n_train == 0 || n_train >= cfg.n {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: cfg.n,
        });
    }
    let (train_lab, test_lab) = labels.split_at(n_train);

    let per_sample_scores = f_oi[..n_train]
        .iter()
        .zip(&f_fi[..n_train])
        .map(|(a, b)| score_channels(a, b))
        .collect::<Result<Vec<_>>>()?;
    let channel_scores = average_scores(per_sample_scores)?;
    let selection = ChannelSelection::from_scores(&channel_scores, cfg.gamma)?;

    let records = (0..n_train)
        .map(|i| {
            Ok(SampleRecord {
                features: f_oi[i].clone(),
                label: train_lab[i],
                aug: selection.extract(&f_fi[i])?.map(AugPayload::Channels),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = CodecParams::with_tolerance(cfg.tolerance)?;
    let mut bcfg = BuildConfig::new(params);
    bcfg.chunk_size = cfg.chunk_size;
    bcfg.aug = AugMeta::Channel(selection.clone());
    bcfg.seed = cfg.seed;
    bcfg.workers = cfg.workers;
    let path = workdir.join(format!("e2e_seed{}.afc", cfg.seed));
    build_cache(records, &bcfg, &path)?;
    let cache = open_cache(&path, Verify::Eager)?;

    let per_sample = f_oi[0].numel() + selection.len() * f_oi[0].plane_len();
    let cache_ratio = cache.file_len() as f64 / (n_train * per_sample * 4) as f64;

    let dim = f_oi[0].numel();
    // One flip decision per (epoch, sample), shared by both augmentation arms.
    let flips: Vec<Vec<bool>> = (0..cfg.epochs)
        .map(|e| {
            let mut r = rng::seeded(epoch_seed(cfg.seed, e), 7);
            (0..n_train)
                .map(|_| rng::unit_f64(&mut r) < cfg.flip_prob)
                .collect()
        })
        .collect();

    let train_cached = |mode: Mode| -> Result<LinearProbe> {
        let mut probe = LinearProbe::new(dim, cfg.classes, cfg.seed)?;
        for (e, flip) in flips.iter().enumerate() {
            let mut batch: Vec<(Tensor, u32)> = Vec::with_capacity(n_train);
            for s in cache.shuffled_epoch_iter(epoch_seed(cfg.seed, e)) {
                let s = s?;
                let features = match mode {
                    Mode::Plain => s.features,
                    _ if !flip[s.index] => s.features,
                    Mode::NaiveFlip => s.features.flip_h()?,
                    Mode::AwareFlip => {
                        let stored = match &s.aug {
                            Some(AugPayload::Channels(t)) => Some(t),
                            _ => None,
                        };
                        apply_flip_augmentation(&s.features, &selection, stored)?
                    }
                };
                batch.push((features, s.label));
            }
            probe.train_epoch(batch.iter().map(|(t, l)| (t.data(), *l)), cfg.lr)?;
        }
        Ok(probe)
    };

    let mut raw_probe = LinearProbe::new(dim, cfg.classes, cfg.seed)?;
    for e in 0..cfg.epochs {
        let order = store::epoch_plan(n_train, cfg.chunk_size, epoch_seed(cfg.seed, e));
        raw_probe.train_epoch(
            order.iter().map(|&i| (f_oi[i].data(), train_lab[i])),
            cfg.lr,
        )?;
    }
    let comp_probe = train_cached(Mode::Plain)?;
    let naive_probe = train_cached(Mode::NaiveFlip)?;
    let aware_probe = train_cached(Mode::AwareFlip)?;

    let test_clean = &f_oi[n_train..];
    // Augmented test set: every test image plus its true mirror image.
    let test_aug: Vec<Tensor> = test_clean.iter().chain(&f_fi[n_train..]).cloned().collect();
    let test_aug_lab: Vec<u32> = test_lab.iter().chain(test_lab).copied().collect();

    Ok(E2eReport {
        seed: cfg.seed,
        train_samples: n_train,
        test_samples: test_lab.len(),
        raw_acc: evaluate(&raw_probe, test_clean, test_lab)?,
        compressed_acc: evaluate(&comp_probe, test_clean, test_lab)?,
        naive_flip_acc: evaluate(&naive_probe, &test_aug, &test_aug_lab)?,
        aug_flip_acc: evaluate(&aware_probe, &test_aug, &test_aug_lab)?,
        selected_channels: selection.indices.clone(),
        channel_scores,
        cache_ratio,
    })
}
