//! On-disk cache of compressed activations.
//!
//! File layout, all little-endian:
//!
//! ```text
//! header          128 bytes (see `CacheHeader::to_bytes`)
//! labels          n × label_width
//! chunk index     ceil(n / k) × 40-byte entries
//! aug metadata    aug_len bytes (channel selection or token metadata)
//! chunk records   one per chunk, at the offsets named by the index
//! file CRC32      over every preceding byte
//! ```
//!
//! A chunk record is the serialized feature chunk followed by the chunk's
//! augmentation side section (stored channels or stored tokens, compressed
//! with the same tolerance, plus match records for tokens). Each index entry
//! carries the CRC32 of its whole record.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::channel_aug::ChannelSelection;
use crate::codec::{self, CodecParams, EncodedChunk, Reader, Transform};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ensure_same_shape, Tensor};
use crate::token_aug::{TokenMatch, TokenMeta, TokenSelection, MATCH_RECORD_LEN};

pub const CACHE_MAGIC: &[u8; 8] = b"AFCACHE1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 128;
pub const INDEX_ENTRY_LEN: usize = 40;
pub const MAX_RANK: usize = 8;
pub const DEFAULT_CHUNK_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AugKind {
    None = 0,
    Channel = 1,
    Token = 2,
}

impl AugKind {
    fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(AugKind::None),
            1 => Ok(AugKind::Channel),
            2 => Ok(AugKind::Token),
            other => Err(Error::Format(format!("unknown augmentation kind {other}"))),
        }
    }
}

/// Dataset-level augmentation metadata.
#[derive(Debug, Clone, PartialEq)]
pub enum AugMeta {
    None,
    Channel(ChannelSelection),
    Token(TokenMeta),
}

impl AugMeta {
    pub fn kind(&self) -> AugKind {
        match self {
            AugMeta::None => AugKind::None,
            AugMeta::Channel(_) => AugKind::Channel,
            AugMeta::Token(_) => AugKind::Token,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            AugMeta::None => Vec::new(),
            AugMeta::Channel(s) => s.to_bytes(),
            AugMeta::Token(m) => m.to_bytes(),
        }
    }

    fn from_bytes(kind: AugKind, buf: &[u8]) -> Result<Self> {
        match kind {
            AugKind::None if buf.is_empty() => Ok(AugMeta::None),
            AugKind::None => Err(Error::Format(
                "augmentation block present but kind is none".into(),
            )),
            AugKind::Channel => ChannelSelection::from_bytes(buf).map(AugMeta::Channel),
            AugKind::Token => TokenMeta::from_bytes(buf).map(AugMeta::Token),
        }
    }

    /// Rows stored per sample in the side section (0 means no side section).
    fn stored_rows(&self) -> usize {
        match self {
            AugMeta::None => 0,
            AugMeta::Channel(s) => s.len(),
            AugMeta::Token(m) => m.selected,
        }
    }
}

/// Per-sample augmentation payload.
#[derive(Debug, Clone, PartialEq)]
pub enum AugPayload {
    /// Stored `F_FI` channels, `x×H×W` in selection order.
    Channels(Tensor),
    Tokens(TokenSelection),
}

/// One sample handed to [`build_cache`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub features: Tensor,
    pub label: u32,
    pub aug: Option<AugPayload>,
}

impl SampleRecord {
    pub fn new(features: Tensor, label: u32) -> Self {
        Self {
            features,
            label,
            aug: None,
        }
    }
}

/// One sample read back from a cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSample {
    pub index: usize,
    pub features: Tensor,
    pub label: u32,
    pub aug: Option<AugPayload>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHeader {
    pub version: u32,
    pub sample_shape: Vec<usize>,
    pub count: usize,
    pub chunk_size: usize,
    pub params: CodecParams,
    pub aug_kind: AugKind,
    pub label_width: u8,
    pub seed: u64,
    pub aug_len: u32,
}

impl CacheHeader {
    pub fn chunk_count(&self) -> usize {
        self.count.div_ceil(self.chunk_size)
    }

    pub fn labels_offset(&self) -> u64 {
        HEADER_LEN as u64
    }

    pub fn index_offset(&self) -> u64 {
        self.labels_offset() + (self.count * self.label_width as usize) as u64
    }

    pub fn aug_offset(&self) -> u64 {
        self.index_offset() + (self.chunk_count() * INDEX_ENTRY_LEN) as u64
    }

    pub fn payload_offset(&self) -> u64 {
        self.aug_offset() + self.aug_len as u64
    }

    /// Sample ordinals covered by chunk `c`.
    pub fn chunk_range(&self, c: usize) -> std::ops::Range<usize> {
        let start = c * self.chunk_size;
        start..(start + self.chunk_size).min(self.count)
    }

    /// Fixed 128-byte header: magic, version, n, k, rank, 8 dims, τ, transform,
    /// aug kind, label width, pad, seed, aug block length, reserved zeros, and
    /// a CRC32 of the first 124 bytes.
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..8].copy_from_slice(CACHE_MAGIC);
        b[8..12].copy_from_slice(&self.version.to_le_bytes());
        b[12..20].copy_from_slice(&(self.count as u64).to_le_bytes());
        b[20..24].copy_from_slice(&(self.chunk_size as u32).to_le_bytes());
        b[24..28].copy_from_slice(&(self.sample_shape.len() as u32).to_le_bytes());
        for (i, &d) in self.sample_shape.iter().enumerate() {
            b[28 + 4 * i..32 + 4 * i].copy_from_slice(&(d as u32).to_le_bytes());
        }
        b[60..68].copy_from_slice(&self.params.tolerance().to_le_bytes());
        b[68] = self.params.transform.id();
        b[69] = self.aug_kind as u8;
        b[70] = self.label_width;
        b[72..80].copy_from_slice(&self.seed.to_le_bytes());
        b[80..84].copy_from_slice(&self.aug_len.to_le_bytes());
        let crc = crc32fast::hash(&b[..124]);
        b[124..128].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::Format("file shorter than header".into()));
        }
        if &b[0..8] != CACHE_MAGIC {
            return Err(Error::Format("bad magic, not a feature cache".into()));
        }
        let mut r = Reader::new(&b[8..]);
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let stored_crc = u32::from_le_bytes(b[124..128].try_into().unwrap());
        if crc32fast::hash(&b[..124]) != stored_crc {
            return Err(Error::Corrupt("header CRC mismatch".into()));
        }
        let count = r.u64()? as usize;
        let chunk_size = r.u32()? as usize;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut dims = [0usize; MAX_RANK];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let sample_shape = dims[..rank].to_vec();
        if sample_shape.contains(&0) || chunk_size == 0 {
            return Err(Error::Format("zero dimension or chunk size".into()));
        }
        let tolerance = r.f64()?;
        let transform = Transform::from_id(r.u8()?)?;
        let params =
            CodecParams::new(tolerance, transform).map_err(|e| Error::Format(e.to_string()))?;
        let aug_kind = AugKind::from_id(r.u8()?)?;
        let label_width = r.u8()?;
        if !matches!(label_width, 1 | 2 | 4) {
            return Err(Error::Format(format!(
                "label width {label_width} not in {{1, 2, 4}}"
            )));
        }
        r.u8()?;
        let seed = r.u64()?;
        let aug_len = r.u32()?;
        Ok(Self {
            version,
            sample_shape,
            count,
            chunk_size,
            params,
            aug_kind,
            label_width,
            seed,
            aug_len,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub ordinal: u32,
    pub offset: u64,
    pub length: u64,
    pub crc: u32,
    pub first_sample: u64,
    /// Exclusive.
    pub last_sample: u64,
}

impl IndexEntry {
    fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ordinal.to_le_bytes());
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.length.to_le_bytes());
        out.extend_from_slice(&self.crc.to_le_bytes());
        out.extend_from_slice(&self.first_sample.to_le_bytes());
        out.extend_from_slice(&self.last_sample.to_le_bytes());
    }

    fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            ordinal: r.u32()?,
            offset: r.u64()?,
            length: r.u64()?,
            crc: r.u32()?,
            first_sample: r.u64()?,
            last_sample: r.u64()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub chunk_size: usize,
    pub params: CodecParams,
    pub aug: AugMeta,
    pub seed: u64,
    /// Encoding threads; output bytes do not depend on this.
    pub workers: usize,
}

impl BuildConfig {
    pub fn new(params: CodecParams) -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            params,
            aug: AugMeta::None,
            seed: 0,
            workers: 1,
        }
    }
}

/// Writes a cache file from `samples`.
///
/// The file is assembled under a temporary name next to `path` and renamed
/// into place on success; on any error the partial file is removed.
pub fn build_cache<I>(samples: I, config: &BuildConfig, path: &Path) -> Result<CacheHeader>
where
    I: IntoIterator<Item = SampleRecord>,
{
    if config.chunk_size == 0 {
        return Err(Error::InvalidConfig("chunk size must be >= 1".into()));
    }
    let tmp = temp_path(path);
    let result = build_into(samples, config, &tmp).and_then(|header| {
        fs::rename(&tmp, path)?;
        Ok(header)
    });
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

struct Pending {
    records: Vec<SampleRecord>,
}

fn build_into<I>(samples: I, config: &BuildConfig, tmp: &Path) -> Result<CacheHeader>
where
    I: IntoIterator<Item = SampleRecord>,
{
    let k = config.chunk_size;
    let workers = config.workers.max(1);
    let batch_chunks = workers * 4;

    let mut sample_shape: Option<Vec<usize>> = None;
    let mut labels: Vec<u32> = Vec::new();
    let mut records: Vec<Vec<u8>> = Vec::new();
    let mut batch: Vec<Pending> = Vec::new();
    let mut current: Vec<SampleRecord> = Vec::with_capacity(k);

    for rec in samples {
        match &sample_shape {
            None => sample_shape = Some(rec.features.shape().to_vec()),
            Some(shape) => ensure_same_shape(shape, rec.features.shape())?,
        }
        check_aug(&config.aug, &rec, labels.len())?;
        labels.push(rec.label);
        current.push(rec);
        if current.len() == k {
            batch.push(Pending {
                records: std::mem::replace(&mut current, Vec::with_capacity(k)),
            });
            if batch.len() == batch_chunks {
                records.extend(encode_batch(&batch, config, workers)?);
                batch.clear();
            }
        }
    }
    if !current.is_empty() {
        batch.push(Pending { records: current });
    }
    records.extend(encode_batch(&batch, config, workers)?);

    let sample_shape = sample_shape.ok_or_else(|| Error::Empty("no samples to cache".into()))?;
    if sample_shape.len() > MAX_RANK {
        return Err(Error::InvalidShape(format!(
            "rank {} exceeds {MAX_RANK}",
            sample_shape.len()
        )));
    }
    if let AugMeta::Channel(sel) = &config.aug {
        if sample_shape.len() != 3 || sample_shape[0] != sel.channels {
            return Err(Error::InvalidShape(format!(
                "channel selection over {} channels, samples are {:?}",
                sel.channels, sample_shape
            )));
        }
    }
    if let AugMeta::Token(meta) = &config.aug {
        if sample_shape.len() != 2 || sample_shape[0] != meta.tokens {
            return Err(Error::InvalidShape(format!(
                "token metadata for {} tokens, samples are {:?}",
                meta.tokens, sample_shape
            )));
        }
    }

    let max_label = labels.iter().copied().max().unwrap_or(0);
    let label_width: u8 = if max_label <= u8::MAX as u32 {
        1
    } else if max_label <= u16::MAX as u32 {
        2
    } else {
        4
    };
    let aug_bytes = config.aug.to_bytes();
    let header = CacheHeader {
        version: FORMAT_VERSION,
        sample_shape,
        count: labels.len(),
        chunk_size: k,
        params: config.params,
        aug_kind: config.aug.kind(),
        label_width,
        seed: config.seed,
        aug_len: aug_bytes.len() as u32,
    };

    let mut index = Vec::with_capacity(records.len() * INDEX_ENTRY_LEN);
    let mut offset = header.payload_offset();
    for (c, rec) in records.iter().enumerate() {
        let range = header.chunk_range(c);
        IndexEntry {
            ordinal: c as u32,
            offset,
            length: rec.len() as u64,
            crc: crc32fast::hash(rec),
            first_sample: range.start as u64,
            last_sample: range.end as u64,
        }
        .write_to(&mut index);
        offset += rec.len() as u64;
    }

    let mut label_bytes = Vec::with_capacity(labels.len() * label_width as usize);
    for &l in &labels {
        label_bytes.extend_from_slice(&l.to_le_bytes()[..label_width as usize]);
    }

    let mut crc = crc32fast::Hasher::new();
    let mut out = BufWriter::new(File::create(tmp)?);
    let mut put = |bytes: &[u8]| -> Result<()> {
        crc.update(bytes);
        out.write_all(bytes)?;
        Ok(())
    };
    put(&header.to_bytes())?;
    put(&label_bytes)?;
    put(&index)?;
    put(&aug_bytes)?;
    for rec in &records {
        put(rec)?;
    }
    let file_crc = crc.finalize();
    out.write_all(&file_crc.to_le_bytes())?;
    out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(header)
}

fn check_aug(meta: &AugMeta, rec: &SampleRecord, ordinal: usize) -> Result<()> {
    let missing = || {
        Error::AugmentationUnavailable(format!("sample {ordinal} lacks its augmentation payload"))
    };
    match (meta, &rec.aug) {
        (AugMeta::None, None) => Ok(()),
        (AugMeta::None, Some(_)) => Err(Error::InvalidConfig(format!(
            "sample {ordinal} carries an augmentation payload but the cache has none"
        ))),
        (AugMeta::Channel(sel), aug) => {
            if sel.is_empty() {
                return Ok(());
            }
            let Some(AugPayload::Channels(stored)) = aug else {
                return Err(missing());
            };
            let mut want = rec.features.shape().to_vec();
            want[0] = sel.len();
            ensure_same_shape(&want, stored.shape())
        }
        (AugMeta::Token(tm), aug) => {
            if tm.selected == 0 {
                return Ok(());
            }
            let Some(AugPayload::Tokens(sel)) = aug else {
                return Err(missing());
            };
            let stored = sel.stored.as_ref().ok_or_else(missing)?;
            if sel.len() != tm.selected {
                return Err(Error::InvalidConfig(format!(
                    "sample {ordinal} has {} selected tokens, metadata says {}",
                    sel.len(),
                    tm.selected
                )));
            }
            let d = rec.features.shape().get(1).copied().unwrap_or(0);
            ensure_same_shape(&[tm.selected, d], stored.shape())?;
            if sel
                .matches
                .iter()
                .any(|m| m.original >= tm.tokens || m.matched >= tm.tokens)
            {
                return Err(Error::InvalidConfig(format!(
                    "sample {ordinal} has a match index out of range"
                )));
            }
            Ok(())
        }
    }
}

fn encode_batch(batch: &[Pending], config: &BuildConfig, workers: usize) -> Result<Vec<Vec<u8>>> {
    if workers <= 1 || batch.len() <= 1 {
        return batch
            .iter()
            .map(|p| encode_record(&p.records, config))
            .collect();
    }
    let per = batch.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(per)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|p| encode_record(&p.records, config))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for h in handles {
            for r in h.join().expect("encoder thread panicked") {
                out.push(r?);
            }
        }
        Ok(out)
    })
}

fn encode_record(records: &[SampleRecord], config: &BuildConfig) -> Result<Vec<u8>> {
    let features: Vec<Tensor> = records.iter().map(|r| r.features.clone()).collect();
    let mut out = codec::encode(&features, &config.params)?.to_bytes();
    if config.aug.stored_rows() == 0 {
        return Ok(out);
    }
    match &config.aug {
        AugMeta::Channel(_) => {
            let stored: Vec<Tensor> = records
                .iter()
                .map(|r| match &r.aug {
                    Some(AugPayload::Channels(t)) => t.clone(),
                    _ => unreachable!("validated by check_aug"),
                })
                .collect();
            out.extend(codec::encode(&stored, &config.params)?.to_bytes());
        }
        AugMeta::Token(_) => {
            let sels: Vec<&TokenSelection> = records
                .iter()
                .map(|r| match &r.aug {
                    Some(AugPayload::Tokens(s)) => s,
                    _ => unreachable!("validated by check_aug"),
                })
                .collect();
            let stored: Vec<Tensor> = sels.iter().map(|s| s.stored.clone().unwrap()).collect();
            out.extend(codec::encode(&stored, &config.params)?.to_bytes());
            for s in sels {
                for m in &s.matches {
                    m.write_to(&mut out);
                }
            }
        }
        AugMeta::None => {}
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verify {
    /// Check every chunk CRC and the file CRC while opening.
    Eager,
    /// Check structure now, each chunk CRC when it is read.
    Lazy,
}

/// An open cache. `read_chunk` takes `&self` and may be called from many
/// threads at once.
#[derive(Debug)]
pub struct CacheHandle {
    header: CacheHeader,
    labels: Vec<u32>,
    index: Vec<IndexEntry>,
    aug: AugMeta,
    file: Mutex<File>,
    file_len: u64,
}

pub fn open_cache(path: &Path, verify: Verify) -> Result<CacheHandle> {
    let mut file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut hb = [0u8; HEADER_LEN];
    file.read_exact(&mut hb)
        .map_err(|_| Error::Format("file shorter than header".into()))?;
    let header = CacheHeader::from_bytes(&hb)?;

    let meta_len = header.payload_offset() - HEADER_LEN as u64;
    if header.payload_offset() + 4 > file_len {
        return Err(Error::Corrupt(
            "file truncated before chunk payloads".into(),
        ));
    }
    let mut meta = vec![0u8; meta_len as usize];
    file.read_exact(&mut meta)?;

    let lw = header.label_width as usize;
    let (label_bytes, rest) = meta.split_at(header.count * lw);
    let labels = label_bytes
        .chunks_exact(lw)
        .map(|c| {
            let mut b = [0u8; 4];
            b[..lw].copy_from_slice(c);
            u32::from_le_bytes(b)
        })
        .collect();
    let (index_bytes, aug_bytes) = rest.split_at(header.chunk_count() * INDEX_ENTRY_LEN);
    let mut r = Reader::new(index_bytes);
    let index = (0..header.chunk_count())
        .map(|_| IndexEntry::read_from(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let aug = AugMeta::from_bytes(header.aug_kind, aug_bytes)?;
    validate_index(&header, &index, file_len)?;
    validate_aug(&header, &aug)?;

    let handle = CacheHandle {
        header,
        labels,
        index,
        aug,
        file: Mutex::new(file),
        file_len,
    };
    if verify == Verify::Eager {
        handle.verify()?;
    }
    Ok(handle)
}

fn validate_index(header: &CacheHeader, index: &[IndexEntry], file_len: u64) -> Result<()> {
    let mut offset = header.payload_offset();
    for (c, e) in index.iter().enumerate() {
        let range = header.chunk_range(c);
        let bad = |what: &str| Error::CorruptChunk {
            chunk: c,
            reason: format!("index entry {what}"),
        };
        if e.ordinal as usize != c {
            return Err(bad("ordinal out of sequence"));
        }
        if e.first_sample != range.start as u64 || e.last_sample != range.end as u64 {
            return Err(bad("sample range does not match the chunk partition"));
        }
        if e.offset != offset || e.length == 0 {
            return Err(bad("offset/length inconsistent with preceding chunks"));
        }
        offset = offset
            .checked_add(e.length)
            .ok_or_else(|| bad("length overflows"))?;
    }
    if offset + 4 != file_len {
        return Err(Error::Corrupt(format!(
            "payloads end at {offset} but file is {file_len} bytes (expected trailing CRC only)"
        )));
    }
    Ok(())
}

fn validate_aug(header: &CacheHeader, aug: &AugMeta) -> Result<()> {
    match aug {
        AugMeta::Channel(sel)
            if header.sample_shape.len() != 3 || header.sample_shape[0] != sel.channels =>
        {
            Err(Error::Format(
                "channel selection does not match sample shape".into(),
            ))
        }
        AugMeta::Token(tm)
            if header.sample_shape.len() != 2 || header.sample_shape[0] != tm.tokens =>
        {
            Err(Error::Format(
                "token metadata does not match sample shape".into(),
            ))
        }
        _ => Ok(()),
    }
}

impl CacheHandle {
    pub fn header(&self) -> &CacheHeader {
        &self.header
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    pub fn aug_meta(&self) -> &AugMeta {
        &self.aug
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn chunk_count(&self) -> usize {
        self.index.len()
    }

    pub fn file_len(&self) -> u64 {
        self.file_len
    }

    fn read_range(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(offset))?;
        f.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn chunk_bytes(&self, ordinal: usize) -> Result<Vec<u8>> {
        let e = self.index.get(ordinal).ok_or(Error::OutOfRange {
            index: ordinal,
            len: self.index.len(),
        })?;
        let bytes = self.read_range(e.offset, e.length as usize)?;
        if crc32fast::hash(&bytes) != e.crc {
            return Err(Error::CorruptChunk {
                chunk: ordinal,
                reason: "CRC mismatch".into(),
            });
        }
        Ok(bytes)
    }

    /// Verifies every chunk CRC and the trailing file CRC.
    pub fn verify(&self) -> Result<()> {
        let mut hasher = crc32fast::Hasher::new();
        let body_len = self.file_len - 4;
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(0))?;
        let mut remaining = body_len;
        let mut buf = vec![0u8; 1 << 16];
        while remaining > 0 {
            let n = remaining.min(buf.len() as u64) as usize;
            f.read_exact(&mut buf[..n])?;
            hasher.update(&buf[..n]);
            remaining -= n as u64;
        }
        let mut tail = [0u8; 4];
        f.read_exact(&mut tail)?;
        drop(f);
        for c in 0..self.index.len() {
            self.chunk_bytes(c)?;
        }
        if hasher.finalize() != u32::from_le_bytes(tail) {
            return Err(Error::Corrupt("file CRC mismatch".into()));
        }
        Ok(())
    }

    /// Decodes one chunk, verifying its CRC first.
    pub fn read_chunk(&self, ordinal: usize) -> Result<Vec<CachedSample>> {
        let bytes = self.chunk_bytes(ordinal)?;
        let corrupt = |reason: String| Error::CorruptChunk {
            chunk: ordinal,
            reason,
        };
        let range = self.header.chunk_range(ordinal);
        let k = range.len();

        let (feat_chunk, mut pos) =
            EncodedChunk::from_bytes(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if feat_chunk.sample_shape != self.header.sample_shape || feat_chunk.count != k {
            return Err(corrupt(
                "feature chunk shape/count disagrees with header".into(),
            ));
        }
        if feat_chunk.params != self.header.params {
            return Err(corrupt(
                "feature chunk codec params disagree with header".into(),
            ));
        }
        let features = codec::decode(&feat_chunk)?;

        let mut augs: Vec<Option<AugPayload>> = vec![None; k];
        let rows = self.aug.stored_rows();
        if rows > 0 {
            let (side, used) =
                EncodedChunk::from_bytes(&bytes[pos..]).map_err(|e| corrupt(e.to_string()))?;
            pos += used;
            if side.count != k || side.sample_shape[0] != rows {
                return Err(corrupt(
                    "augmentation side section has the wrong shape".into(),
                ));
            }
            let stored = codec::decode(&side)?;
            match &self.aug {
                AugMeta::Channel(_) => {
                    for (slot, t) in augs.iter_mut().zip(stored) {
                        *slot = Some(AugPayload::Channels(t));
                    }
                }
                AugMeta::Token(tm) => {
                    let mut r = Reader::new(&bytes[pos..]);
                    for (slot, t) in augs.iter_mut().zip(stored) {
                        let matches = (0..rows)
                            .map(|_| TokenMatch::read_from(&mut r))
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| corrupt(e.to_string()))?;
                        if matches
                            .iter()
                            .any(|m| m.original >= tm.tokens || m.matched >= tm.tokens)
                        {
                            return Err(corrupt("token match index out of range".into()));
                        }
                        *slot = Some(AugPayload::Tokens(TokenSelection {
                            alpha: tm.alpha,
                            matches,
                            stored: Some(t),
                        }));
                    }
                    pos += r.pos;
                    debug_assert_eq!(r.pos, k * rows * MATCH_RECORD_LEN);
                }
                AugMeta::None => unreachable!(),
            }
        }
        if pos != bytes.len() {
            return Err(corrupt(format!(
                "{} unexpected trailing bytes",
                bytes.len() - pos
            )));
        }

        Ok(range
            .zip(features)
            .zip(augs)
            .map(|((index, features), aug)| CachedSample {
                index,
                features,
                label: self.labels[index],
                aug,
            })
            .collect())
    }

    /// All samples in file order.
    pub fn read_all(&self) -> Result<Vec<CachedSample>> {
        let mut out = Vec::with_capacity(self.len());
        for c in 0..self.chunk_count() {
            out.extend(self.read_chunk(c)?);
        }
        Ok(out)
    }

    /// One epoch with coarse-grained shuffling. See [`epoch_plan`].
    pub fn shuffled_epoch_iter(&self, seed: u64) -> EpochIter<'_> {
        let chunk_order = chunk_order(self.chunk_count(), seed);
        EpochIter {
            handle: self,
            seed,
            chunk_order: chunk_order.into(),
            buffered: VecDeque::new(),
        }
    }
}

/// Seeded permutation of chunk ordinals.
pub fn chunk_order(chunks: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..chunks).collect();
    rng::shuffle(&mut rng::seeded(seed, 0), &mut order);
    order
}

/// Seeded order of the positions inside chunk `ordinal`.
pub fn within_chunk_order(len: usize, seed: u64, ordinal: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    rng::shuffle(&mut rng::seeded(seed, 1 + ordinal as u64), &mut order);
    order
}

/// The sample ordinals one epoch visits, without touching any data: chunks in
/// a seeded order, each chunk's samples contiguous and independently shuffled.
pub fn epoch_plan(count: usize, chunk_size: usize, seed: u64) -> Vec<usize> {
    assert!(chunk_size > 0);
    let chunks = count.div_ceil(chunk_size);
    let mut out = Vec::with_capacity(count);
    for c in chunk_order(chunks, seed) {
        let start = c * chunk_size;
        let len = chunk_size.min(count - start);
        out.extend(
            within_chunk_order(len, seed, c)
                .into_iter()
                .map(|i| start + i),
        );
    }
    out
}

pub struct EpochIter<'a> {
    handle: &'a CacheHandle,
    seed: u64,
    chunk_order: VecDeque<usize>,
    buffered: VecDeque<CachedSample>,
}

impl Iterator for EpochIter<'_> {
    type Item = Result<CachedSample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(s) = self.buffered.pop_front() {
                return Some(Ok(s));
            }
            let c = self.chunk_order.pop_front()?;
            let samples = match self.handle.read_chunk(c) {
                Ok(s) => s,
                Err(e) => {
                    self.chunk_order.clear();
                    return Some(Err(e));
                }
            };
            let mut slots: Vec<Option<CachedSample>> = samples.into_iter().map(Some).collect();
            for i in within_chunk_order(slots.len(), self.seed, c) {
                self.buffered.push_back(slots[i].take().unwrap());
            }
        }
    }
}
