//! `featcache` command-line tool.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing input file,
//! 3 corrupt input, 64 invalid flags.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use featcache::channel_aug::ChannelSelection;
use featcache::codec::{self, CodecParams};
use featcache::dump::{read_dump, read_labels, write_dump, write_labels};
use featcache::e2e::{run_e2e, E2eConfig};
use featcache::policy::{cost_csv, parse_stage_csv, profile_compressibility, profile_csv};
use featcache::refnet::{gen_synthetic_dataset, RefNet};
use featcache::store::{
    self, build_cache, open_cache, AugMeta, AugPayload, BuildConfig, SampleRecord, Verify,
};
use featcache::token_aug::{TokenMeta, TokenSelection};
use featcache::Tensor;

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING: u8 = 2;
const EXIT_CORRUPT: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "featcache",
    version,
    about = "Build, inspect and profile compressed activation caches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Raw tensor dump + labels → cache file
    Build(BuildArgs),
    /// Print header and index, verify checksums
    Inspect(InspectArgs),
    /// Codec ratio, error and timing on a dump or generated features
    Bench(BenchArgs),
    /// CSV of ratio and timings per chunk size
    Profile(ProfileArgs),
    /// Synthetic data → frozen features → cache → probe accuracy report
    E2e(E2eArgs),
    /// Stage CSV → FLOP and memory totals
    CostReport(CostArgs),
    /// Write a synthetic feature dump and label file
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Feature dump
    #[arg(long)]
    input: PathBuf,
    /// Label file, one integer per line
    #[arg(long)]
    labels: PathBuf,
    /// Output cache path
    #[arg(long)]
    out: PathBuf,
    /// Absolute error bound; 0 stores raw bits
    #[arg(long, default_value = "1e-2", value_parser = parse_tau)]
    tau: f64,
    #[arg(long, default_value_t = store::DEFAULT_CHUNK_SIZE, value_parser = parse_positive)]
    chunk_size: usize,
    /// Fraction of channels to store from flipped-image features
    #[arg(long, value_parser = parse_fraction, requires = "flipped", conflicts_with = "alpha")]
    gamma: Option<f64>,
    /// Features of the horizontally flipped inputs (dump, same order)
    #[arg(long, requires = "gamma")]
    flipped: Option<PathBuf>,
    /// Fraction of tokens to store from augmented-sample features
    #[arg(long, value_parser = parse_fraction, requires = "augmented")]
    alpha: Option<f64>,
    /// Token features of the augmented samples (dump, same order)
    #[arg(long, requires = "alpha")]
    augmented: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    workers: usize,
}

#[derive(Args, Debug)]
struct InspectArgs {
    path: PathBuf,
    /// Also print every index entry
    #[arg(long)]
    index: bool,
    /// Also decode every chunk
    #[arg(long)]
    decode: bool,
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Feature dump; generated stage features when absent
    #[arg(long)]
    input: Option<PathBuf>,
    /// Generated sample count
    #[arg(long, default_value_t = 64, value_parser = parse_positive)]
    count: usize,
    /// Network stage for generated features (1 or 2)
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated tolerances
    #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3", value_parser = parse_tau)]
    tau: Vec<f64>,
    #[arg(long, default_value_t = store::DEFAULT_CHUNK_SIZE, value_parser = parse_positive)]
    chunk_size: usize,
    /// CSV output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated chunk sizes
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16", value_parser = parse_positive)]
    chunks: Vec<usize>,
    #[arg(long, default_value = "1e-2", value_parser = parse_tau)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct E2eArgs {
    #[arg(long, default_value = "1e-2", value_parser = parse_tau)]
    tau: f64,
    #[arg(long, default_value = "0.25", value_parser = parse_fraction)]
    gamma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Dataset size (multiple of 4)
    #[arg(long, default_value_t = 2000, value_parser = parse_positive)]
    n: usize,
    #[arg(long, default_value_t = 12, value_parser = parse_positive)]
    epochs: usize,
    #[arg(long, default_value = "2e-4", value_parser = parse_positive_f64)]
    lr: f64,
    #[arg(long, default_value_t = store::DEFAULT_CHUNK_SIZE, value_parser = parse_positive)]
    chunk_size: usize,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CostArgs {
    /// `stage,flops_per_sample,samples,epochs,memory_mb[,kind]`
    stages: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Feature dump to write
    #[arg(long)]
    out: PathBuf,
    /// Label file to write
    #[arg(long)]
    labels: PathBuf,
    /// Also write features of the flipped images here
    #[arg(long)]
    flipped: Option<PathBuf>,
    #[arg(long, default_value_t = 64, value_parser = parse_positive)]
    n: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long, default_value_t = 32, value_parser = parse_positive)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_tau(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err("must be a finite number >= 0".into())
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must be in [0, 1]".into())
    }
}

fn parse_positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        Ok(_) => Err("must be >= 1".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("must be a finite number > 0".into())
    }
}

/// Flag combinations that clap cannot express.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn params_for(tau: f64) -> Result<CodecParams> {
    Ok(CodecParams::with_tolerance(tau)?)
}

fn load(path: &Path, what: &str) -> Result<Vec<Tensor>> {
    read_dump(path).with_context(|| format!("reading {what} dump {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(
        w.into_inner().map_err(|e| e.into_error())?,
    )?)
}

fn generated(source: &SourceArgs) -> Result<Vec<Tensor>> {
    let n = source.count.div_ceil(4) * 4;
    let (images, _) = gen_synthetic_dataset(source.seed, n, 4, 32)?;
    let net = RefNet::new(source.seed);
    let mut feats = images
        .iter()
        .map(|x| net.forward(x, source.stage as usize))
        .collect::<featcache::Result<Vec<_>>>()?;
    feats.truncate(source.count);
    Ok(feats)
}

fn samples_from(source: &SourceArgs) -> Result<Vec<Tensor>> {
    match &source.input {
        Some(p) => load(p, "feature"),
        None => generated(source).context("generating features"),
    }
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let params = params_for(a.tau)?;
    let features = load(&a.input, "feature")?;
    let labels =
        read_labels(&a.labels).with_context(|| format!("reading labels {}", a.labels.display()))?;
    if labels.len() != features.len() {
        bail!(
            "build: {} labels for {} samples",
            labels.len(),
            features.len()
        );
    }

    let mut cfg = BuildConfig::new(params);
    cfg.chunk_size = a.chunk_size;
    cfg.seed = a.seed;
    cfg.workers = a.workers;
    let mut augs: Vec<Option<AugPayload>> = vec![None; features.len()];

    if let (Some(gamma), Some(path)) = (a.gamma, &a.flipped) {
        let flipped = load(path, "flipped-feature")?;
        if flipped.len() != features.len() {
            bail!(
                "build: {} flipped samples for {} samples",
                flipped.len(),
                features.len()
            );
        }
        let sel = ChannelSelection::from_pairs(features.iter().zip(&flipped), gamma)
            .context("build: scoring channel flip sensitivity")?;
        for (slot, fi) in augs.iter_mut().zip(&flipped) {
            *slot = sel.extract(fi)?.map(AugPayload::Channels);
        }
        eprintln!("selected channels {:?} of {}", sel.indices, sel.channels);
        cfg.aug = AugMeta::Channel(sel);
    }
    if let (Some(alpha), Some(path)) = (a.alpha, &a.augmented) {
        let augmented = load(path, "augmented-token")?;
        if augmented.len() != features.len() {
            bail!(
                "build: {} augmented samples for {} samples",
                augmented.len(),
                features.len()
            );
        }
        let tokens = features[0].shape()[0];
        let meta = TokenMeta::new(alpha, tokens)?;
        for (i, slot) in augs.iter_mut().enumerate() {
            let sel = TokenSelection::build(&features[i], &augmented[i], alpha)
                .with_context(|| format!("build: matching tokens of sample {i}"))?;
            if !sel.is_empty() {
                *slot = Some(AugPayload::Tokens(sel));
            }
        }
        cfg.aug = AugMeta::Token(meta);
    }

    let records = features
        .into_iter()
        .zip(labels)
        .zip(augs)
        .map(|((features, label), aug)| SampleRecord {
            features,
            label,
            aug,
        });
    let header = build_cache(records, &cfg, &a.out).context("build: writing cache")?;
    let bytes = fs::metadata(&a.out)?.len();
    let raw = header.count * header.sample_shape.iter().product::<usize>() * 4;
    println!(
        "wrote {}: n={} k={} tau={} chunks={} bytes={} ratio={:.4}",
        a.out.display(),
        header.count,
        header.chunk_size,
        header.params.tolerance(),
        header.chunk_count(),
        bytes,
        bytes as f64 / raw as f64
    );
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let cache = open_cache(&a.path, Verify::Eager)
        .with_context(|| format!("inspect: opening {}", a.path.display()))?;
    let h = cache.header();
    let shape: Vec<String> = h.sample_shape.iter().map(|d| d.to_string()).collect();
    let raw = h.count * h.sample_shape.iter().product::<usize>() * 4;
    let mut out = String::new();
    use std::fmt::Write as _;
    writeln!(out, "file: {}", a.path.display())?;
    writeln!(out, "version: {}", h.version)?;
    writeln!(out, "n: {}", h.count)?;
    writeln!(out, "k: {}", h.chunk_size)?;
    writeln!(out, "tau: {}", h.params.tolerance())?;
    writeln!(out, "transform: {:?}", h.params.transform)?;
    writeln!(out, "sample shape: {}", shape.join("x"))?;
    writeln!(out, "label width: {} bytes", h.label_width)?;
    writeln!(out, "seed: {}", h.seed)?;
    match cache.aug_meta() {
        AugMeta::None => writeln!(out, "augmentation: none")?,
        AugMeta::Channel(s) => writeln!(
            out,
            "augmentation: channel, gamma {} selects {:?} of {} channels",
            s.gamma, s.indices, s.channels
        )?,
        AugMeta::Token(t) => writeln!(
            out,
            "augmentation: token, alpha {} selects {} of {} tokens",
            t.alpha, t.selected, t.tokens
        )?,
    }
    writeln!(out, "chunks: {}", cache.chunk_count())?;
    writeln!(out, "file bytes: {}", cache.file_len())?;
    writeln!(out, "raw feature bytes: {raw}")?;
    writeln!(out, "ratio: {:.4}", cache.file_len() as f64 / raw as f64)?;
    if a.index {
        writeln!(out, "chunk,offset,length,crc32,first,end")?;
        for e in cache.index() {
            writeln!(
                out,
                "{},{},{},{:08x},{},{}",
                e.ordinal, e.offset, e.length, e.crc, e.first_sample, e.last_sample
            )?;
        }
    }
    if a.decode {
        for c in 0..cache.chunk_count() {
            cache
                .read_chunk(c)
                .with_context(|| format!("inspect: decoding chunk {c}"))?;
        }
        writeln!(out, "decoded: all {} chunks", cache.chunk_count())?;
    }
    writeln!(out, "checksums: ok")?;
    emit(&out, None)
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let samples = samples_from(&a.source)?;
    if samples.is_empty() {
        bail!("bench: no samples");
    }
    let mut rows = Vec::new();
    for &tau in &a.tau {
        let params = params_for(tau)?;
        let (mut enc_b, mut raw_b, mut enc_s, mut dec_s, mut max_err) =
            (0u64, 0u64, 0.0, 0.0, 0.0f64);
        for group in samples.chunks(a.chunk_size) {
            let t0 = Instant::now();
            let chunk = codec::encode(group, &params).context("bench: encoding")?;
            enc_s += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let back = codec::decode(&chunk).context("bench: decoding")?;
            dec_s += t1.elapsed().as_secs_f64();
            enc_b += chunk.encoded_bytes();
            raw_b += chunk.raw_bytes();
            for (x, y) in group.iter().zip(&back) {
                max_err = max_err.max(x.max_abs_diff(y)?);
            }
        }
        rows.push(vec![
            tau.to_string(),
            a.chunk_size.to_string(),
            samples.len().to_string(),
            raw_b.to_string(),
            enc_b.to_string(),
            format!("{:.6}", enc_b as f64 / raw_b as f64),
            format!("{max_err:.3e}"),
            format!("{enc_s:.6}"),
            format!("{dec_s:.6}"),
        ]);
    }
    let text = csv_text(
        &[
            "tau",
            "chunk_size",
            "samples",
            "raw_bytes",
            "encoded_bytes",
            "ratio",
            "max_abs_error",
            "encode_s",
            "decode_s",
        ],
        &rows,
    )?;
    emit(&text, a.out.as_deref())
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let needed = a.chunks.iter().copied().max().unwrap_or(1);
    if a.source.input.is_none() && a.source.count < needed {
        return Err(UsageError(format!(
            "--count {} is smaller than the largest chunk size {needed}",
            a.source.count
        ))
        .into());
    }
    let samples = samples_from(&a.source)?;
    let rows =
        profile_compressibility(&samples, &params_for(a.tau)?, &a.chunks).context("profile")?;
    emit(&profile_csv(&rows), a.out.as_deref())
}

fn cmd_e2e(a: E2eArgs) -> Result<()> {
    if !a.n.is_multiple_of(4) {
        return Err(UsageError(format!("--n {} is not a multiple of the 4 classes", a.n)).into());
    }
    let cfg = E2eConfig {
        n: a.n,
        tolerance: a.tau,
        gamma: a.gamma,
        chunk_size: a.chunk_size,
        epochs: a.epochs,
        lr: a.lr,
        workers: a.workers,
        seed: a.seed,
        ..E2eConfig::default()
    };
    let dir = tempfile::tempdir().context("e2e: creating scratch directory")?;
    let r = run_e2e(&cfg, dir.path()).context("e2e")?;
    let sel: Vec<String> = r.selected_channels.iter().map(|c| c.to_string()).collect();
    let text = csv_text(
        &[
            "seed",
            "tau",
            "gamma",
            "train",
            "test",
            "raw_acc",
            "compressed_acc",
            "naive_flip_acc",
            "aug_flip_acc",
            "aug_ge_naive",
            "selected_channels",
            "cache_ratio",
        ],
        &[vec![
            r.seed.to_string(),
            a.tau.to_string(),
            a.gamma.to_string(),
            r.train_samples.to_string(),
            r.test_samples.to_string(),
            format!("{:.4}", r.raw_acc),
            format!("{:.4}", r.compressed_acc),
            format!("{:.4}", r.naive_flip_acc),
            format!("{:.4}", r.aug_flip_acc),
            (r.aug_flip_acc >= r.naive_flip_acc).to_string(),
            sel.join(" "),
            format!("{:.4}", r.cache_ratio),
        ]],
    )?;
    emit(&text, a.out.as_deref())
}

fn cmd_cost(a: CostArgs) -> Result<()> {
    let text = fs::read_to_string(&a.stages)
        .with_context(|| format!("cost-report: reading {}", a.stages.display()))?;
    let stages = parse_stage_csv(&text).context("cost-report: parsing stages")?;
    emit(&cost_csv(&stages).context("cost-report")?, a.out.as_deref())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let div = 1usize << a.stage;
    if !a.size.is_multiple_of(div) {
        return Err(UsageError(format!(
            "--size {} must be divisible by {div} for stage {}",
            a.size, a.stage
        ))
        .into());
    }
    let n = a.n.div_ceil(4) * 4;
    let (images, mut labels) = gen_synthetic_dataset(a.seed, n, 4, a.size)?;
    let net = RefNet::new(a.seed);
    let stage = a.stage as usize;
    let mut feats = images
        .iter()
        .map(|x| net.forward(x, stage))
        .collect::<featcache::Result<Vec<_>>>()?;
    feats.truncate(a.n);
    labels.truncate(a.n);
    write_dump(&a.out, &feats).with_context(|| format!("synth: writing {}", a.out.display()))?;
    write_labels(&a.labels, &labels)?;
    if let Some(p) = &a.flipped {
        let flipped = images[..a.n]
            .iter()
            .map(|x| net.forward(&x.flip_h()?, stage))
            .collect::<featcache::Result<Vec<_>>>()?;
        write_dump(p, &flipped).with_context(|| format!("synth: writing {}", p.display()))?;
    }
    println!("wrote {} samples of shape {:?}", a.n, feats[0].shape());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<featcache::Error>() {
            if e.is_corruption() {
                return EXIT_CORRUPT;
            }
            if let featcache::Error::Io(io) = e {
                if io.kind() == io::ErrorKind::NotFound {
                    return EXIT_MISSING;
                }
            }
        }
        if let Some(io) = cause.downcast_ref::<io::Error>() {
            if io.kind() == io::ErrorKind::NotFound {
                return EXIT_MISSING;
            }
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Profile(a) => cmd_profile(a),
        Command::E2e(a) => cmd_e2e(a),
        Command::CostReport(a) => cmd_cost(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
