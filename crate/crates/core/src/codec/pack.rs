//! Zero run-length + LEB128 varint packing of signed integer streams.
//!
//! The stream is a sequence of `(zero_run, value)` pairs where `value` is a
//! zigzag-encoded non-zero integer, terminated by one final `zero_run`. The
//! decoder is told the symbol count up front and must consume the input
//! exactly.

use crate::error::{Error, Result};

pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn read_varint(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    let mut shift = 0u32;
    loop {
        let byte = *buf
            .get(*pos)
            .ok_or_else(|| Error::Decode("truncated varint".into()))?;
        *pos += 1;
        if shift == 63 && byte > 1 {
            return Err(Error::Decode("varint overflows u64".into()));
        }
        v |= ((byte & 0x7f) as u64) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
        if shift > 63 {
            return Err(Error::Decode("varint too long".into()));
        }
    }
}

#[inline]
pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
pub fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

pub fn pack_ints(values: &[i64], out: &mut Vec<u8>) {
    let mut run = 0u64;
    for &v in values {
        if v == 0 {
            run += 1;
        } else {
            write_varint(out, run);
            write_varint(out, zigzag(v));
            run = 0;
        }
    }
    write_varint(out, run);
}

/// Unpacks exactly `count` integers starting at `*pos`.
pub fn unpack_ints(buf: &[u8], pos: &mut usize, count: usize) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(count);
    loop {
        let run = read_varint(buf, pos)?;
        let remaining = (count - out.len()) as u64;
        if run > remaining {
            return Err(Error::Decode(format!(
                "zero run {run} overruns stream ({remaining} symbols left)"
            )));
        }
        out.resize(out.len() + run as usize, 0);
        if out.len() == count {
            return Ok(out);
        }
        let v = unzigzag(read_varint(buf, pos)?);
        if v == 0 {
            return Err(Error::Decode("explicit zero in run-length stream".into()));
        }
        out.push(v);
    }
}
