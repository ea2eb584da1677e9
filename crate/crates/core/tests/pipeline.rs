use std::path::Path;
use std::sync::Arc;

use featcache::channel_aug::{apply_flip_augmentation, score_channels, ChannelSelection};
use featcache::codec::CodecParams;
use featcache::refnet::{evaluate, gen_synthetic_dataset, train_linear_probe, LinearProbe, RefNet};
use featcache::store::{
    build_cache, open_cache, AugMeta, AugPayload, BuildConfig, SampleRecord, Verify,
};
use featcache::token_aug::{apply_token_augmentation, TokenMeta, TokenSelection};
use featcache::{rng, Error, Tensor};

fn stage1(seed: u64, n: usize, size: usize) -> (Vec<Tensor>, Vec<Tensor>, Vec<u32>) {
    let (images, labels) = gen_synthetic_dataset(seed, n, 4, size).unwrap();
    let net = RefNet::new(seed);
    let f_oi = images.iter().map(|x| net.forward(x, 1).unwrap()).collect();
    let f_fi = images
        .iter()
        .map(|x| net.forward(&x.flip_h().unwrap(), 1).unwrap())
        .collect();
    (f_oi, f_fi, labels)
}

fn build(
    records: Vec<SampleRecord>,
    cfg: &BuildConfig,
    dir: &Path,
    name: &str,
) -> featcache::store::CacheHandle {
    let path = dir.join(name);
    build_cache(records, cfg, &path).unwrap();
    open_cache(&path, Verify::Eager).unwrap()
}

#[test]
fn lossless_cache_trains_identical_probe() {
    let (f_oi, _, labels) = stage1(3, 40, 16);
    let dir = tempfile::tempdir().unwrap();
    let records = f_oi
        .iter()
        .zip(&labels)
        .map(|(f, &l)| SampleRecord::new(f.clone(), l))
        .collect();
    let mut cfg = BuildConfig::new(CodecParams::lossless());
    cfg.chunk_size = 3;
    let cache = build(records, &cfg, dir.path(), "lossless.afc");
    let decoded = cache.read_all().unwrap();
    let feats: Vec<Tensor> = decoded.iter().map(|s| s.features.clone()).collect();
    let labs: Vec<u32> = decoded.iter().map(|s| s.label).collect();
    assert_eq!(labs, labels);

    let a = train_linear_probe(&f_oi, &labels, 3, 1e-3, 9).unwrap();
    let b = train_linear_probe(&feats, &labs, 3, 1e-3, 9).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn channel_side_section_reproduces_flip_features() {
    let (f_oi, f_fi, labels) = stage1(5, 24, 16);
    let sel = ChannelSelection::from_pairs(f_oi.iter().zip(&f_fi), 0.25).unwrap();
    assert_eq!(sel.len(), 2);
    let records = (0..f_oi.len())
        .map(|i| SampleRecord {
            features: f_oi[i].clone(),
            label: labels[i],
            aug: sel.extract(&f_fi[i]).unwrap().map(AugPayload::Channels),
        })
        .collect();
    let tau = 1e-3;
    let mut cfg = BuildConfig::new(CodecParams::with_tolerance(tau).unwrap());
    cfg.aug = AugMeta::Channel(sel.clone());
    let dir = tempfile::tempdir().unwrap();
    let cache = build(records, &cfg, dir.path(), "chan.afc");
    assert_eq!(cache.aug_meta(), &AugMeta::Channel(sel.clone()));

    for s in cache.read_all().unwrap() {
        let Some(AugPayload::Channels(stored)) = &s.aug else {
            panic!("missing stored channels for sample {}", s.index)
        };
        let out = apply_flip_augmentation(&s.features, &sel, Some(stored)).unwrap();
        for (slot, &c) in sel.indices.iter().enumerate() {
            let want = f_fi[s.index].slab(c).unwrap();
            let got = out.slab(c).unwrap();
            assert!(want
                .iter()
                .zip(got)
                .all(|(a, b)| (a - b).abs() <= tau as f32));
            assert_eq!(got, stored.slab(slot).unwrap());
        }
    }
}

#[test]
fn missing_stored_channels_rejected_at_build() {
    let (f_oi, f_fi, _) = stage1(6, 4, 8);
    let sel = ChannelSelection::from_pairs(f_oi.iter().zip(&f_fi), 0.5).unwrap();
    let mut cfg = BuildConfig::new(CodecParams::with_tolerance(1e-2).unwrap());
    cfg.aug = AugMeta::Channel(sel);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.afc");
    let records = f_oi.into_iter().map(|f| SampleRecord::new(f, 0));
    assert!(matches!(
        build_cache(records, &cfg, &path),
        Err(Error::AugmentationUnavailable(_))
    ));
    assert!(!path.exists());
}

#[test]
fn token_side_section_roundtrip() {
    let (n, d, alpha) = (12usize, 6usize, 0.25);
    let mut r = rng::seeded(31, 0);
    let mut tensor = |rows| {
        Tensor::new(
            vec![rows, d],
            (0..rows * d)
                .map(|_| rng::unit_f64(&mut r) as f32 * 2.0 - 1.0)
                .collect(),
        )
        .unwrap()
    };
    let pairs: Vec<(Tensor, Tensor)> = (0..7).map(|_| (tensor(n), tensor(n))).collect();
    let meta = TokenMeta::new(alpha, n).unwrap();
    let selections: Vec<TokenSelection> = pairs
        .iter()
        .map(|(o, a)| TokenSelection::build(o, a, alpha).unwrap())
        .collect();
    let records = pairs
        .iter()
        .zip(&selections)
        .enumerate()
        .map(|(i, ((o, _), s))| SampleRecord {
            features: o.clone(),
            label: i as u32,
            aug: Some(AugPayload::Tokens(s.clone())),
        })
        .collect();
    let mut cfg = BuildConfig::new(CodecParams::lossless());
    cfg.chunk_size = 3;
    cfg.aug = AugMeta::Token(meta);
    let dir = tempfile::tempdir().unwrap();
    let cache = build(records, &cfg, dir.path(), "tok.afc");
    for s in cache.read_all().unwrap() {
        let Some(AugPayload::Tokens(sel)) = &s.aug else {
            panic!("missing token payload")
        };
        assert_eq!(sel, &selections[s.index]);
        let (o, _) = &pairs[s.index];
        assert_eq!(
            apply_token_augmentation(&s.features, sel).unwrap(),
            apply_token_augmentation(o, &selections[s.index]).unwrap()
        );
    }
}

#[test]
fn concurrent_chunk_reads_agree() {
    let (f_oi, _, labels) = stage1(8, 32, 8);
    let records = f_oi
        .iter()
        .zip(&labels)
        .map(|(f, &l)| SampleRecord::new(f.clone(), l))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(build(
        records,
        &BuildConfig::new(CodecParams::with_tolerance(1e-2).unwrap()),
        dir.path(),
        "conc.afc",
    ));
    let serial: Vec<_> = (0..cache.chunk_count())
        .map(|c| cache.read_chunk(c).unwrap())
        .collect();
    std::thread::scope(|s| {
        for t in 0..4 {
            let cache = Arc::clone(&cache);
            let serial = &serial;
            s.spawn(move || {
                for c in (0..cache.chunk_count()).rev().skip(t) {
                    assert_eq!(cache.read_chunk(c).unwrap(), serial[c]);
                }
            });
        }
    });
}

#[test]
fn refnet_features_have_mixed_flip_sensitivity() {
    let (f_oi, f_fi, _) = stage1(2, 40, 32);
    let scores: Vec<Vec<f64>> = f_oi
        .iter()
        .zip(&f_fi)
        .map(|(a, b)| score_channels(a, b).unwrap())
        .collect();
    let avg: Vec<f64> = (0..8)
        .map(|c| scores.iter().map(|s| s[c]).sum::<f64>() / scores.len() as f64)
        .collect();
    let (lo, hi) = avg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    assert!(hi - lo > 0.2, "scores {avg:?}");
}

#[test]
fn random_probe_is_near_chance() {
    let (f_oi, _, labels) = stage1(4, 400, 16);
    let accs: Vec<f64> = (0..20)
        .map(|seed| {
            let probe = LinearProbe::new(f_oi[0].numel(), 4, seed).unwrap();
            evaluate(&probe, &f_oi, &labels).unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.03, "mean {mean}, {accs:?}");
}
