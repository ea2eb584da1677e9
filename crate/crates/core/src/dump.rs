//! Raw tensor dumps and label files, the plain input format for building
//! caches from outside tools.
//!
//! A dump is `rank: u32`, `dims: rank × u32`, `count: u64` (all little-endian)
//! followed by `count × prod(dims)` little-endian f32 values. A label file has
//! one non-negative integer per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_DUMP_RANK: usize = 8;

pub fn write_dump(path: &Path, samples: &[Tensor]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("nothing to dump".into()))?;
    let mut out = BufWriter::new(File::create(path)?);
    write_dump_to(&mut out, first.shape(), samples)?;
    out.flush()?;
    Ok(())
}

fn write_dump_to(out: &mut impl Write, shape: &[usize], samples: &[Tensor]) -> Result<()> {
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    for t in samples {
        crate::tensor::ensure_same_shape(shape, t.shape())?;
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Vec<Tensor>> {
    let mut input = BufReader::new(File::open(path)?);
    read_dump_from(&mut input)
}

fn read_exact_or_format(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("dump truncated in {what}")),
        _ => Error::Io(e),
    })
}

fn read_dump_from(input: &mut impl Read) -> Result<Vec<Tensor>> {
    let mut b4 = [0u8; 4];
    read_exact_or_format(input, &mut b4, "header")?;
    let rank = u32::from_le_bytes(b4) as usize;
    if rank == 0 || rank > MAX_DUMP_RANK {
        return Err(Error::Format(format!(
            "dump rank {rank} outside 1..={MAX_DUMP_RANK}"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        read_exact_or_format(input, &mut b4, "header")?;
        shape.push(u32::from_le_bytes(b4) as usize);
    }
    let mut b8 = [0u8; 8];
    read_exact_or_format(input, &mut b8, "header")?;
    let count = u64::from_le_bytes(b8) as usize;
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return Err(Error::Format(format!(
            "dump has a zero dimension: {shape:?}"
        )));
    }
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut raw = vec![0u8; numel * 4];
    for i in 0..count {
        read_exact_or_format(input, &mut raw, &format!("sample {i}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(Tensor::new(shape.clone(), data)?);
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after the last sample".into()));
    }
    Ok(samples)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for l in labels {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

/// Blank lines are skipped.
pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<u32>()
                .map_err(|e| Error::Format(format!("label line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_roundtrip_is_bit_exact() {
        let t = vec![
            Tensor::new(
                vec![2, 3],
                vec![1.0, -0.0, f32::from_bits(1), 3.5, 1e30, -7.25],
            )
            .unwrap(),
            Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_dump_to(&mut buf, &[2, 3], &t).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 8 + 2 * 6 * 4);
        let back = read_dump_from(&mut buf.as_slice()).unwrap();
        for (a, b) in t.iter().zip(&back) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(matches!(
            read_dump_from(&mut &buf[..buf.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_dump_from(&mut extra.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        write_labels(&p, &[0, 3, 70000]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 3, 70000]);
        std::fs::write(&p, "1\nx\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format(_))));
    }
}
