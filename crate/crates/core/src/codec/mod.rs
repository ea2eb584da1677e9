//! Error-bounded lossy compression of tensor chunks.
//!
//! A chunk is `k` same-shaped samples concatenated along a new leading axis.
//! For a tolerance `τ > 0` the pipeline is:
//!
//! 1. uniform scalar quantization with a power-of-two step `≤ 2τ`, which alone
//!    bounds the reconstruction error by `τ`. Values whose `f32`
//!    reconstruction would still miss the bound (extreme magnitudes) are
//!    stored verbatim as exceptions;
//! 2. optionally, per-sample differencing of the quantized grids when that
//!    packs smaller (correlated samples in one chunk);
//! 3. optionally, an exactly invertible integer transform on 4×4 blocks of the
//!    two trailing axes;
//! 4. zero run-length + varint packing.
//!
//! Stages 2–4 are lossless on integers, so the bound from stage 1 carries
//! through unchanged. `τ = 0` stores the raw `f32` bit patterns.

mod pack;
mod transform;

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

pub use pack::{read_varint, write_varint};

pub const CHUNK_MAGIC: &[u8; 4] = b"AFC1";

const MODE_LOSSLESS: u8 = 0b01;
const MODE_SAMPLE_DELTA: u8 = 0b10;

/// Quantized magnitudes above this are escaped rather than coded.
const MAX_QUANT: f64 = (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum Transform {
    None = 0,
    #[default]
    BlockDecorrelate = 1,
}

impl Transform {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Transform::None),
            1 => Ok(Transform::BlockDecorrelate),
            other => Err(Error::Format(format!("unknown transform id {other}"))),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecParams {
    tolerance: f64,
    pub transform: Transform,
}

impl CodecParams {
    pub fn new(tolerance: f64, transform: Transform) -> Result<Self> {
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be finite and >= 0, got {tolerance}"
            )));
        }
        Ok(Self {
            tolerance,
            transform,
        })
    }

    /// Block-decorrelating codec at the given tolerance.
    pub fn with_tolerance(tolerance: f64) -> Result<Self> {
        Self::new(tolerance, Transform::BlockDecorrelate)
    }

    pub fn lossless() -> Self {
        Self {
            tolerance: 0.0,
            transform: Transform::BlockDecorrelate,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn is_lossless(&self) -> bool {
        self.tolerance == 0.0
    }

    /// Quantization step: the largest power of two not exceeding `2τ`.
    pub fn step(&self) -> f64 {
        quant_step(self.tolerance)
    }
}

fn quant_step(tolerance: f64) -> f64 {
    let two_tau = 2.0 * tolerance;
    let mut e = two_tau.log2().floor() as i32;
    e = e.clamp(-1074, 1023);
    while e > -1074 && 2f64.powi(e) > two_tau {
        e -= 1;
    }
    while e < 1023 && 2f64.powi(e + 1) <= two_tau {
        e += 1;
    }
    2f64.powi(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedChunk {
    pub params: CodecParams,
    pub sample_shape: Vec<usize>,
    pub count: usize,
    pub payload: Vec<u8>,
}

impl EncodedChunk {
    pub fn sample_numel(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn raw_bytes(&self) -> u64 {
        (self.count * self.sample_numel() * 4) as u64
    }

    /// Serialized size: fixed header, payload and trailing CRC.
    pub fn encoded_bytes(&self) -> u64 {
        (header_len(self.sample_shape.len()) + self.payload.len() + 4) as u64
    }

    /// Encoded bytes divided by raw bytes; smaller is better.
    pub fn compression_ratio(&self) -> f64 {
        self.encoded_bytes() as f64 / self.raw_bytes() as f64
    }

    /// Little-endian chunk layout: magic, transform id, τ, k, rank, dims, raw
    /// size, payload size, payload, CRC32 of the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_bytes() as usize);
        out.extend_from_slice(CHUNK_MAGIC);
        out.push(self.params.transform.id());
        out.extend_from_slice(&self.params.tolerance.to_le_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.sample_shape.len() as u32).to_le_bytes());
        for &d in &self.sample_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.raw_bytes().to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&crc32fast::hash(&self.payload).to_le_bytes());
        out
    }

    /// Parses one serialized chunk from the front of `buf`, verifying the
    /// payload CRC. Returns the chunk and the number of bytes consumed.
    pub fn from_bytes(buf: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader::new(buf);
        if r.take(4)? != CHUNK_MAGIC {
            return Err(Error::Format("bad chunk magic".into()));
        }
        let transform = Transform::from_id(r.u8()?)?;
        let tolerance = f64::from_le_bytes(r.array()?);
        let params = CodecParams::new(tolerance, transform)
            .map_err(|e| Error::Format(format!("chunk header: {e}")))?;
        let count = r.u32()? as usize;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 16 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let mut sample_shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            sample_shape.push(r.u32()? as usize);
        }
        if count == 0 || sample_shape.contains(&0) {
            return Err(Error::Format(
                "zero count or dimension in chunk header".into(),
            ));
        }
        let raw = r.u64()?;
        let payload_len = r.u64()? as usize;
        let payload = r.take(payload_len)?.to_vec();
        let crc = r.u32()?;
        if crc32fast::hash(&payload) != crc {
            return Err(Error::Decode("payload CRC mismatch".into()));
        }
        let chunk = EncodedChunk {
            params,
            sample_shape,
            count,
            payload,
        };
        if chunk.raw_bytes() != raw {
            return Err(Error::Format(format!(
                "raw size {raw} disagrees with shape (expected {})",
                chunk.raw_bytes()
            )));
        }
        Ok((chunk, r.pos))
    }
}

pub fn header_len(rank: usize) -> usize {
    4 + 1 + 8 + 4 + 4 + 4 * rank + 8 + 8
}

/// Compresses `samples` into one chunk.
pub fn encode(samples: &[Tensor], params: &CodecParams) -> Result<EncodedChunk> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("encode needs at least one sample".into()))?;
    for s in &samples[1..] {
        ensure_same_shape(first.shape(), s.shape())?;
    }
    let sample_shape = first.shape().to_vec();
    let sample_numel = first.numel();
    let total = sample_numel * samples.len();
    let values = samples.iter().flat_map(|s| s.data().iter().copied());

    let mut payload = Vec::new();
    if params.is_lossless() {
        payload.reserve(1 + total * 4);
        payload.push(MODE_LOSSLESS);
        for v in values {
            payload.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    } else {
        let tol = params.tolerance;
        let step = params.step();
        let mut quant = Vec::with_capacity(total);
        let mut exceptions: Vec<(usize, u32)> = Vec::new();
        for (i, x) in values.enumerate() {
            let (q, exact) = quantize(x, step, tol);
            if !exact {
                exceptions.push((i, x.to_bits()));
            }
            quant.push(q);
        }

        let (h, w) = plane_dims(&sample_shape);
        let n_planes = total / (h * w);
        let direct = pack_stream(&quant, params.transform, n_planes, h, w);
        let (mode, stream) = if samples.len() > 1 {
            let mut delta = quant.clone();
            for i in (sample_numel..total).rev() {
                delta[i] -= quant[i - sample_numel];
            }
            let diffed = pack_stream(&delta, params.transform, n_planes, h, w);
            if diffed.len() < direct.len() {
                (MODE_SAMPLE_DELTA, diffed)
            } else {
                (0, direct)
            }
        } else {
            (0, direct)
        };

        payload.push(mode);
        write_varint(&mut payload, exceptions.len() as u64);
        let mut prev = 0usize;
        for (i, bits) in exceptions {
            write_varint(&mut payload, (i - prev) as u64);
            payload.extend_from_slice(&bits.to_le_bytes());
            prev = i;
        }
        payload.extend_from_slice(&stream);
    }

    Ok(EncodedChunk {
        params: *params,
        sample_shape,
        count: samples.len(),
        payload,
    })
}

/// Returns the quantized integer and whether its reconstruction meets `tol`.
fn quantize(x: f32, step: f64, tol: f64) -> (i64, bool) {
    let q = (x as f64 / step).round();
    if q.is_nan() || q.abs() > MAX_QUANT {
        return (0, false);
    }
    let recon = (q * step) as f32;
    let ok = recon.is_finite() && (recon as f64 - x as f64).abs() <= tol;
    (q as i64, ok)
}

fn plane_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [w] => (1, *w),
        [.., h, w] => (*h, *w),
        [] => unreachable!("tensor shapes are never empty"),
    }
}

fn pack_stream(
    values: &[i64],
    transform: Transform,
    n_planes: usize,
    h: usize,
    w: usize,
) -> Vec<u8> {
    let mut out = Vec::new();
    match transform {
        Transform::None => pack::pack_ints(values, &mut out),
        Transform::BlockDecorrelate => {
            pack::pack_ints(&transform::forward(values, n_planes, h, w), &mut out)
        }
    }
    out
}

/// Decompresses a chunk into its `count` samples.
pub fn decode(chunk: &EncodedChunk) -> Result<Vec<Tensor>> {
    let sample_numel = chunk.sample_numel();
    let total = sample_numel * chunk.count;
    let payload = &chunk.payload;
    let mode = *payload
        .first()
        .ok_or_else(|| Error::Decode("empty payload".into()))?;
    let mut pos = 1usize;

    let values: Vec<f32> = if mode == MODE_LOSSLESS {
        if !chunk.params.is_lossless() {
            return Err(Error::Decode("lossless payload under lossy params".into()));
        }
        let body = &payload[pos..];
        if body.len() != total * 4 {
            return Err(Error::Decode(format!(
                "lossless payload holds {} bytes, expected {}",
                body.len(),
                total * 4
            )));
        }
        pos = payload.len();
        body.chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect()
    } else if mode & !MODE_SAMPLE_DELTA == 0 {
        if chunk.params.is_lossless() {
            return Err(Error::Decode("lossy payload under lossless params".into()));
        }
        let n_exc = read_varint(payload, &mut pos)? as usize;
        if n_exc > total {
            return Err(Error::Decode(format!(
                "{n_exc} exceptions for {total} values"
            )));
        }
        let mut exceptions = Vec::with_capacity(n_exc);
        let mut idx = 0usize;
        for k in 0..n_exc {
            let delta = read_varint(payload, &mut pos)? as usize;
            if k > 0 && delta == 0 {
                return Err(Error::Decode("duplicate exception index".into()));
            }
            idx = idx
                .checked_add(delta)
                .filter(|&i| i < total)
                .ok_or_else(|| Error::Decode("exception index out of range".into()))?;
            let bytes = payload
                .get(pos..pos + 4)
                .ok_or_else(|| Error::Decode("truncated exception".into()))?;
            pos += 4;
            exceptions.push((idx, u32::from_le_bytes(bytes.try_into().unwrap())));
        }

        let (h, w) = plane_dims(&chunk.sample_shape);
        let n_planes = total / (h * w);
        let mut quant = match chunk.params.transform {
            Transform::None => pack::unpack_ints(payload, &mut pos, total)?,
            Transform::BlockDecorrelate => {
                let n = transform::coeff_count(n_planes, h, w);
                let coeffs = pack::unpack_ints(payload, &mut pos, n)?;
                transform::inverse(&coeffs, n_planes, h, w)
            }
        };
        if mode & MODE_SAMPLE_DELTA != 0 {
            for i in sample_numel..total {
                quant[i] = quant[i].wrapping_add(quant[i - sample_numel]);
            }
        }
        let step = chunk.params.step();
        let mut values: Vec<f32> = quant.iter().map(|&q| (q as f64 * step) as f32).collect();
        for (i, bits) in exceptions {
            values[i] = f32::from_bits(bits);
        }
        values
    } else {
        return Err(Error::Decode(format!("unknown payload mode {mode:#04x}")));
    };

    if pos != payload.len() {
        return Err(Error::Decode(format!(
            "{} trailing payload bytes",
            payload.len() - pos
        )));
    }

    values
        .chunks_exact(sample_numel)
        .map(|d| {
            Tensor::new(chunk.sample_shape.clone(), d.to_vec())
                .map_err(|e| Error::Decode(format!("decoded sample invalid: {e}")))
        })
        .collect()
}

/// Bounds-checked little-endian reader over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
