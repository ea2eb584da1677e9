//! Compression policy, compressibility profiling, storage arithmetic, and
//! training-cost accounting.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::codec::{self, CodecParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance per freeze stage: one default with optional overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionPolicy {
    default: f64,
    overrides: BTreeMap<u32, f64>,
}

impl CompressionPolicy {
    pub fn uniform(tolerance: f64) -> Result<Self> {
        check_tolerance(tolerance)?;
        Ok(Self {
            default: tolerance,
            overrides: BTreeMap::new(),
        })
    }

    pub fn with_override(mut self, stage: u32, tolerance: f64) -> Result<Self> {
        check_tolerance(tolerance)?;
        self.overrides.insert(stage, tolerance);
        Ok(self)
    }

    pub fn tolerance_for(&self, stage: u32) -> f64 {
        self.overrides.get(&stage).copied().unwrap_or(self.default)
    }
}

fn check_tolerance(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be >= 0, got {t}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreezeEvent {
    pub stage: u32,
    pub epoch: u32,
    pub tolerance: f64,
}

/// Freeze events resolved against a policy, checked for ordering.
pub fn freeze_schedule(
    points: &[(u32, u32)],
    policy: &CompressionPolicy,
) -> Result<Vec<FreezeEvent>> {
    for w in points.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::InvalidConfig(format!(
                "stage ids must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        if w[1].1 < w[0].1 {
            return Err(Error::InvalidConfig(format!(
                "freeze epochs must be non-decreasing ({} then {})",
                w[0].1, w[1].1
            )));
        }
    }
    Ok(points
        .iter()
        .map(|&(stage, epoch)| FreezeEvent {
            stage,
            epoch,
            tolerance: policy.tolerance_for(stage),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub chunk_size: usize,
    pub ratio: f64,
    pub encode_s: f64,
    pub decode_s_per_sample: f64,
}

/// Compression ratio and timings per chunk size. Samples are grouped into
/// consecutive full chunks; a trailing remainder is left out so every chunk
/// holds exactly `k` samples.
pub fn profile_compressibility(
    samples: &[Tensor],
    params: &CodecParams,
    chunk_sizes: &[usize],
) -> Result<Vec<ProfileRow>> {
    let needed = chunk_sizes.iter().copied().max().unwrap_or(0);
    if chunk_sizes.contains(&0) {
        return Err(Error::InvalidConfig("chunk sizes must be >= 1".into()));
    }
    if samples.is_empty() || samples.len() < needed {
        return Err(Error::InsufficientSamples {
            needed: needed.max(1),
            available: samples.len(),
        });
    }
    let mut rows = Vec::with_capacity(chunk_sizes.len());
    for &k in chunk_sizes {
        let used = samples.len() / k * k;
        let (mut enc_bytes, mut raw_bytes) = (0u64, 0u64);
        let (mut enc_s, mut dec_s) = (0.0f64, 0.0f64);
        for group in samples[..used].chunks_exact(k) {
            let t0 = Instant::now();
            let chunk = codec::encode(group, params)?;
            enc_s += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let decoded = codec::decode(&chunk)?;
            dec_s += t1.elapsed().as_secs_f64();
            debug_assert_eq!(decoded.len(), k);
            enc_bytes += chunk.encoded_bytes();
            raw_bytes += chunk.raw_bytes();
        }
        rows.push(ProfileRow {
            chunk_size: k,
            ratio: enc_bytes as f64 / raw_bytes as f64,
            encode_s: enc_s,
            decode_s_per_sample: dec_s / used as f64,
        });
    }
    Ok(rows)
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let header = ["chunk_size", "ratio", "encode_s", "decode_s_per_sample"]
        .map(String::from)
        .to_vec();
    let body = rows.iter().map(|r| {
        vec![
            r.chunk_size.to_string(),
            format!("{:.6}", r.ratio),
            format!("{:.6}", r.encode_s),
            format!("{:.9}", r.decode_s_per_sample),
        ]
    });
    csv_string(std::iter::once(header).chain(body))
}

/// Shape plus element width of a stored array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySpec {
    pub dims: Vec<usize>,
    pub bytes_per_element: usize,
}

impl ArraySpec {
    pub fn new(dims: &[usize], bytes_per_element: usize) -> Self {
        Self {
            dims: dims.to_vec(),
            bytes_per_element,
        }
    }

    pub fn bytes(&self) -> u128 {
        self.dims.iter().map(|&d| d as u128).product::<u128>() * self.bytes_per_element as u128
    }
}

/// Bytes of one cached activation over bytes of one original input.
pub fn expansion_ratio(input: &ArraySpec, activation: &ArraySpec) -> Result<f64> {
    for spec in [input, activation] {
        if spec.dims.is_empty() || spec.dims.contains(&0) || spec.bytes_per_element == 0 {
            return Err(Error::InvalidConfig(format!(
                "non-positive array spec {spec:?}"
            )));
        }
    }
    Ok(activation.bytes() as f64 / input.bytes() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// A freezing status: contributes FLOPs and resident memory.
    Training,
    /// Activation generation or decompression: FLOPs only.
    Overhead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub stage: String,
    pub kind: CostKind,
    /// Forward + backward FLOPs per sample for the part still being trained.
    pub flops_per_sample: u64,
    pub samples: u64,
    pub epochs: u64,
    pub memory_mb: f64,
}

impl StageCost {
    pub fn training(
        stage: impl Into<String>,
        flops_per_sample: u64,
        samples: u64,
        epochs: u64,
        memory_mb: f64,
    ) -> Self {
        Self {
            stage: stage.into(),
            kind: CostKind::Training,
            flops_per_sample,
            samples,
            epochs,
            memory_mb,
        }
    }

    pub fn overhead(
        stage: impl Into<String>,
        flops_per_sample: u64,
        samples: u64,
        epochs: u64,
    ) -> Self {
        Self {
            stage: stage.into(),
            kind: CostKind::Overhead,
            flops_per_sample,
            samples,
            epochs,
            memory_mb: 0.0,
        }
    }

    pub fn flops(&self) -> u128 {
        self.flops_per_sample as u128 * self.samples as u128 * self.epochs as u128
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTotals {
    pub total_flops: u128,
    /// Epoch-weighted mean over training stages.
    pub avg_memory_mb: f64,
    /// Memory of the last training stage (everything frozen that will be).
    pub min_memory_mb: f64,
}

pub fn cost_totals(stages: &[StageCost]) -> Result<CostTotals> {
    if stages.is_empty() {
        return Err(Error::Empty("cost_totals needs at least one stage".into()));
    }
    if let Some(bad) = stages
        .iter()
        .find(|s| !(s.memory_mb >= 0.0 && s.memory_mb.is_finite()))
    {
        return Err(Error::InvalidConfig(format!(
            "stage {} has invalid memory",
            bad.stage
        )));
    }
    let total_flops = stages.iter().map(StageCost::flops).sum();
    let training: Vec<&StageCost> = stages
        .iter()
        .filter(|s| s.kind == CostKind::Training)
        .collect();
    let epochs: u64 = training.iter().map(|s| s.epochs).sum();
    let avg_memory_mb = if epochs == 0 {
        0.0
    } else {
        training
            .iter()
            .map(|s| s.memory_mb * s.epochs as f64)
            .sum::<f64>()
            / epochs as f64
    };
    let min_memory_mb = training.last().map(|s| s.memory_mb).unwrap_or(0.0);
    Ok(CostTotals {
        total_flops,
        avg_memory_mb,
        min_memory_mb,
    })
}

/// Parses stage rows: `stage,flops_per_sample,samples,epochs,memory_mb[,kind]`
/// with an optional header line. `kind` is `training` (default) or `overhead`.
/// Lines starting with `#` are comments.
pub fn parse_stage_csv(text: &str) -> Result<Vec<StageCost>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidConfig(format!("stage CSV: {e}")))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        let bad = |what: &str| Error::InvalidConfig(format!("line {line}: {what}"));
        if i == 0 && record.get(0) == Some("stage") {
            continue;
        }
        if !(5..=6).contains(&record.len()) {
            return Err(bad("expected 5 or 6 fields"));
        }
        let flops: f64 = record[1].parse().map_err(|_| bad("bad flops_per_sample"))?;
        if !(flops >= 0.0 && flops.fract() == 0.0 && flops <= u64::MAX as f64) {
            return Err(bad("flops_per_sample must be a non-negative integer"));
        }
        let samples = record[2].parse().map_err(|_| bad("bad samples"))?;
        let epochs = record[3].parse().map_err(|_| bad("bad epochs"))?;
        let memory: f64 = record[4].parse().map_err(|_| bad("bad memory_mb"))?;
        let kind = match record.get(5) {
            None | Some("training") | Some("") => CostKind::Training,
            Some("overhead") => CostKind::Overhead,
            Some(_) => return Err(bad("kind must be training or overhead")),
        };
        out.push(StageCost {
            stage: record[0].to_string(),
            kind,
            flops_per_sample: flops as u64,
            samples,
            epochs,
            memory_mb: memory,
        });
    }
    Ok(out)
}

fn csv_string(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 input")
}

/// `stage,flops_total,avg_mem,min_mem`: one row per stage, then `total`.
pub fn cost_csv(stages: &[StageCost]) -> Result<String> {
    let totals = cost_totals(stages)?;
    let header = ["stage", "flops_total", "avg_mem", "min_mem"]
        .map(String::from)
        .to_vec();
    let rows = stages.iter().map(|st| {
        vec![
            st.stage.clone(),
            st.flops().to_string(),
            format!("{:.3}", st.memory_mb),
            format!("{:.3}", st.memory_mb),
        ]
    });
    let total = vec![
        "total".to_string(),
        totals.total_flops.to_string(),
        format!("{:.3}", totals.avg_memory_mb),
        format!("{:.3}", totals.min_memory_mb),
    ];
    Ok(csv_string(
        std::iter::once(header)
            .chain(rows)
            .chain(std::iter::once(total)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GF: u64 = 10_000_000;

    #[test]
    fn policy_lookup() {
        let p = CompressionPolicy::uniform(1e-3).unwrap();
        assert!((0..10).all(|s| p.tolerance_for(s) == 1e-3));
        let p = p.with_override(2, 5e-2).unwrap();
        assert_eq!(p.tolerance_for(2), 5e-2);
        assert_eq!(p.tolerance_for(3), 1e-3);
        assert_eq!(
            CompressionPolicy::uniform(0.0).unwrap().tolerance_for(7),
            0.0
        );
        assert!(CompressionPolicy::uniform(-1.0).is_err());
    }

    #[test]
    fn schedule_ordering() {
        let p = CompressionPolicy::uniform(1e-2).unwrap();
        let s = freeze_schedule(&[(5, 30), (10, 60)], &p).unwrap();
        assert_eq!(
            s[1],
            FreezeEvent {
                stage: 10,
                epoch: 60,
                tolerance: 1e-2
            }
        );
        assert!(freeze_schedule(&[(5, 30), (5, 60)], &p).is_err());
        assert!(freeze_schedule(&[(5, 30), (6, 20)], &p).is_err());
    }

    #[test]
    fn expansion_examples() {
        let img = ArraySpec::new(&[224, 224, 3], 1);
        let r = expansion_ratio(&img, &ArraySpec::new(&[56, 56, 256], 4)).unwrap();
        assert!((r - 21.333).abs() < 1e-3, "{r}");
        assert_eq!(expansion_ratio(&img, &img).unwrap(), 1.0);
        let deit = expansion_ratio(&img, &ArraySpec::new(&[198, 384], 4)).unwrap();
        assert!((deit - 2.0204).abs() < 1e-4, "{deit}");
        assert!(expansion_ratio(&img, &ArraySpec::new(&[0, 3], 4)).is_err());
    }

    #[test]
    fn cost_single_stage() {
        // 1.66 GF/sample × 50 000 samples × 160 epochs = 13.28e15
        let t = cost_totals(&[StageCost::training("full", 166 * GF, 50_000, 160, 630.0)]).unwrap();
        assert_eq!(t.total_flops, 13_280_000_000_000_000);
        assert_eq!(t.avg_memory_mb, 630.0);
        assert_eq!(t.min_memory_mb, 630.0);
    }

    #[test]
    fn cost_three_stages() {
        // (1.66·30 + 1.08·30 + 0.53·100) GF × 50 000 = 135.2e9 × 5e4 = 6.76e15
        let stages = [
            StageCost::training("0", 166 * GF, 50_000, 30, 630.0),
            StageCost::training("5", 108 * GF, 50_000, 30, 278.0),
            StageCost::training("10", 53 * GF, 50_000, 100, 99.0),
        ];
        let t = cost_totals(&stages).unwrap();
        assert_eq!(t.total_flops, 6_760_000_000_000_000);
        let avg = (630.0 * 30.0 + 278.0 * 30.0 + 99.0 * 100.0) / 160.0;
        assert!((t.avg_memory_mb - avg).abs() < 1e-9);
        assert_eq!(t.min_memory_mb, 99.0);
    }

    #[test]
    fn zero_epochs_and_overheads() {
        let base = [StageCost::training("a", 100, 10, 5, 10.0)];
        let with_zero = [base[0].clone(), StageCost::training("b", 999, 10, 0, 10.0)];
        assert_eq!(cost_totals(&with_zero).unwrap().total_flops, 5_000);
        let with_over = [base[0].clone(), StageCost::overhead("decompress", 7, 10, 5)];
        let t = cost_totals(&with_over).unwrap();
        assert_eq!(t.total_flops, 5_000 + 350);
        assert_eq!(t.avg_memory_mb, 10.0);
        assert!(cost_totals(&[]).is_err());
    }

    #[test]
    fn stage_csv_roundtrip() {
        let text = "stage,flops_per_sample,samples,epochs,memory_mb,kind\n\
                    0,1660000000,50000,30,630\n\
                    gen,550000000,50000,1,0,overhead\n";
        let stages = parse_stage_csv(text).unwrap();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[1].kind, CostKind::Overhead);
        let csv = cost_csv(&stages).unwrap();
        assert!(csv.starts_with("stage,flops_total,avg_mem,min_mem\n"));
        assert!(csv
            .lines()
            .last()
            .unwrap()
            .starts_with("total,2517500000000000,630.000,630.000"));
        assert!(parse_stage_csv("x,1.5,1,1,1\n").is_err());
        assert!(parse_stage_csv("x,1,1,1\n").is_err());
        let quoted = cost_csv(&[StageCost::training("a,b", 1, 1, 1, 1.0)]).unwrap();
        assert_eq!(
            parse_stage_csv("\"a,b\",1,1,1,1\n").unwrap()[0].stage,
            "a,b"
        );
        assert!(quoted.contains("\"a,b\",1,"));
    }

    #[test]
    fn profile_single_sample_consistency() {
        let x = Tensor::new(
            vec![2, 8, 8],
            (0..128).map(|i| (i as f32 * 0.1).sin()).collect(),
        )
        .unwrap();
        let p = CodecParams::with_tolerance(1e-3).unwrap();
        let rows = profile_compressibility(std::slice::from_ref(&x), &p, &[1]).unwrap();
        let direct = codec::encode(std::slice::from_ref(&x), &p)
            .unwrap()
            .compression_ratio();
        assert_eq!(rows[0].ratio, direct);
        assert!(matches!(
            profile_compressibility(std::slice::from_ref(&x), &p, &[1, 2]),
            Err(Error::InsufficientSamples {
                needed: 2,
                available: 1
            })
        ));
        let csv = profile_csv(&rows);
        assert_eq!(
            csv.lines().next().unwrap(),
            "chunk_size,ratio,encode_s,decode_s_per_sample"
        );
    }

    fn arb_stage() -> impl Strategy<Value = StageCost> {
        (
            0u64..1_000_000_000,
            0u64..100_000,
            0u64..300,
            0.0f64..10_000.0,
        )
            .prop_map(|(f, n, e, m)| StageCost::training("s", f, n, e, m))
    }

    proptest! {
        #[test]
        fn totals_additive_and_linear(
            a in proptest::collection::vec(arb_stage(), 1..5),
            b in proptest::collection::vec(arb_stage(), 1..5),
            scale in 1u64..5,
        ) {
            let joined: Vec<StageCost> = a.iter().chain(&b).cloned().collect();
            let ta = cost_totals(&a).unwrap().total_flops;
            let tb = cost_totals(&b).unwrap().total_flops;
            prop_assert_eq!(cost_totals(&joined).unwrap().total_flops, ta + tb);
            let scaled: Vec<StageCost> = a.iter().cloned().map(|mut s| { s.samples *= scale; s }).collect();
            prop_assert_eq!(cost_totals(&scaled).unwrap().total_flops, ta * scale as u128);
        }

        #[test]
        fn uniform_policy_is_scalar(t in 0.0f64..1.0, stage in any::<u32>()) {
            prop_assert_eq!(CompressionPolicy::uniform(t).unwrap().tolerance_for(stage), t);
        }
    }
}
