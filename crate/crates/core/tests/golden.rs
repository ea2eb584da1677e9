//! Fixed shuffle orders. The fixture pins the epoch order for a small cache so
//! that any change to seeding or shuffling is caught, and an independent
//! reference below re-derives it from ChaCha8 directly.
//!
//! Regenerate with `FEATCACHE_BLESS=1 cargo test --test golden`.

use std::path::PathBuf;

use featcache::codec::CodecParams;
use featcache::store::{build_cache, epoch_plan, open_cache, BuildConfig, SampleRecord, Verify};
use featcache::Tensor;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 8;
const K: usize = 2;
const SEEDS: [u64; 5] = [7, 8, 9, 10, 11];

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/shuffle_n8_k2.txt")
}

/// Index in `0..bound`, rejecting draws at or above the largest multiple of
/// `bound` below 2^64 (computed in u128).
fn ref_index(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let limit = (1u128 << 64) / bound as u128 * bound as u128;
    loop {
        let v = rng.next_u64();
        if (v as u128) < limit {
            return v % bound;
        }
    }
}

fn ref_permutation(len: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut v: Vec<usize> = (0..len).collect();
    let mut i = len;
    while i > 1 {
        i -= 1;
        let j = ref_index(&mut rng, i as u64 + 1) as usize;
        v.swap(i, j);
    }
    v
}

fn reference_epoch(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let chunks = n.div_ceil(k);
    let mut out = Vec::new();
    for c in ref_permutation(chunks, seed, 0) {
        let len = k.min(n - c * k);
        for p in ref_permutation(len, seed, c as u64 + 1) {
            out.push(c * k + p);
        }
    }
    out
}

/// One `seed: ids...` line per seed.
fn format_orders(orders: impl IntoIterator<Item = (u64, Vec<usize>)>) -> String {
    orders
        .into_iter()
        .map(|(seed, order)| {
            let ids: Vec<String> = order.iter().map(|i| i.to_string()).collect();
            format!("{seed}: {}\n", ids.join(" "))
        })
        .collect()
}

#[test]
fn epoch_order_matches_fixture() {
    let plans = format_orders(SEEDS.map(|s| (s, epoch_plan(N, K, s))));
    if std::env::var_os("FEATCACHE_BLESS").is_some() {
        std::fs::write(fixture(), &plans).unwrap();
    }
    let golden = std::fs::read_to_string(fixture()).unwrap();
    assert_eq!(plans, golden);
    assert_eq!(
        format_orders(SEEDS.map(|s| (s, reference_epoch(N, K, s)))),
        golden
    );
}

#[test]
fn cache_iterator_follows_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.afc");
    let records: Vec<SampleRecord> = (0..N)
        .map(|i| SampleRecord::new(Tensor::new(vec![4], vec![i as f32; 4]).unwrap(), i as u32))
        .collect();
    let mut cfg = BuildConfig::new(CodecParams::lossless());
    cfg.chunk_size = K;
    build_cache(records, &cfg, &path).unwrap();
    let cache = open_cache(&path, Verify::Eager).unwrap();
    let orders = SEEDS.map(|seed| {
        (
            seed,
            cache
                .shuffled_epoch_iter(seed)
                .map(|s| s.unwrap().index)
                .collect(),
        )
    });
    let golden = std::fs::read_to_string(fixture()).unwrap();
    assert_eq!(format_orders(orders), golden);
}

#[test]
fn reference_agrees_on_many_shapes() {
    for (n, k) in [(1, 1), (5, 2), (16, 16), (37, 4), (100, 3), (64, 1)] {
        for seed in [0, 1, 99, u64::MAX] {
            assert_eq!(
                epoch_plan(n, k, seed),
                reference_epoch(n, k, seed),
                "n={n} k={k} seed={seed}"
            );
        }
    }
}
