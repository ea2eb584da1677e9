//! Token replacement augmentation for transformer activations.
//!
//! Each original token is matched to the augmented token it is most similar to
//! (cosine similarity, ties to the lowest augmented index). The `round(α·N)`
//! matches with the lowest similarity are the tokens the augmentation changes
//! most; their augmented tokens are stored and, at training time, written over
//! the original rows they were matched from.

use crate::channel_aug::{check_fraction, selection_count};
use crate::codec::Reader;
use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenMatch {
    pub original: usize,
    pub matched: usize,
    pub similarity: f64,
}

/// Size of one serialized match record: `u32 i, u32 j, f64 s`.
pub const MATCH_RECORD_LEN: usize = 16;

impl TokenMatch {
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.original as u32).to_le_bytes());
        out.extend_from_slice(&(self.matched as u32).to_le_bytes());
        out.extend_from_slice(&self.similarity.to_le_bytes());
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            original: r.u32()? as usize,
            matched: r.u32()? as usize,
            similarity: r.f64()?,
        })
    }
}

fn token_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, d] => Ok((*n, *d)),
        other => Err(Error::InvalidShape(format!(
            "expected N×D tokens, got {other:?}"
        ))),
    }
}

fn row_norms(t: &Tensor, d: usize) -> Result<Vec<f64>> {
    t.data()
        .chunks_exact(d)
        .enumerate()
        .map(|(i, row)| {
            let n = row
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if n == 0.0 {
                Err(Error::DegenerateVector { index: i })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Best augmented match for every original token.
///
/// Zero-norm rows are rejected with the offending row index (original rows
/// are checked before augmented ones).
pub fn match_tokens(t_ori: &Tensor, t_aug: &Tensor) -> Result<Vec<TokenMatch>> {
    ensure_same_shape(t_ori.shape(), t_aug.shape())?;
    let (_, d) = token_dims(t_ori)?;
    let norm_o = row_norms(t_ori, d)?;
    let norm_a = row_norms(t_aug, d)?;
    let rows_a: Vec<&[f32]> = t_aug.data().chunks_exact(d).collect();

    let mut matches = Vec::with_capacity(norm_o.len());
    for (i, row_o) in t_ori.data().chunks_exact(d).enumerate() {
        let mut best = TokenMatch {
            original: i,
            matched: 0,
            similarity: f64::NEG_INFINITY,
        };
        for (j, row_a) in rows_a.iter().enumerate() {
            let dot: f64 = row_o
                .iter()
                .zip(row_a.iter())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let s = (dot / (norm_o[i] * norm_a[j])).clamp(-1.0, 1.0);
            if s > best.similarity {
                best.matched = j;
                best.similarity = s;
            }
        }
        matches.push(best);
    }
    Ok(matches)
}

/// The `round(α·N)` lowest-similarity matches, ascending by similarity with
/// ties broken by lower original index.
pub fn select_tokens(matches: &[TokenMatch], alpha: f64) -> Result<Vec<TokenMatch>> {
    check_fraction("alpha", alpha)?;
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| {
        a.similarity
            .total_cmp(&b.similarity)
            .then(a.original.cmp(&b.original))
    });
    sorted.truncate(selection_count(alpha, matches.len()));
    Ok(sorted)
}

/// Per-sample token selection with the stored augmented tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSelection {
    pub alpha: f64,
    pub matches: Vec<TokenMatch>,
    /// `#selected × D`, row `r` is the augmented token `matches[r].matched`.
    /// `None` only when nothing is selected.
    pub stored: Option<Tensor>,
}

impl TokenSelection {
    pub fn build(t_ori: &Tensor, t_aug: &Tensor, alpha: f64) -> Result<Self> {
        let matches = select_tokens(&match_tokens(t_ori, t_aug)?, alpha)?;
        let stored = if matches.is_empty() {
            None
        } else {
            let rows: Vec<usize> = matches.iter().map(|m| m.matched).collect();
            Some(t_aug.gather(&rows)?)
        };
        Ok(Self {
            alpha,
            matches,
            stored,
        })
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// `T_ori` with row `i` of every selected match replaced by its stored token.
pub fn apply_token_augmentation(t_ori: &Tensor, selection: &TokenSelection) -> Result<Tensor> {
    let (n, d) = token_dims(t_ori)?;
    if selection.is_empty() {
        return Ok(t_ori.clone());
    }
    let stored = selection.stored.as_ref().ok_or_else(|| {
        Error::AugmentationUnavailable(format!(
            "{} tokens selected but no stored tokens present",
            selection.len()
        ))
    })?;
    ensure_same_shape(&[selection.len(), d], stored.shape())?;
    let mut out = t_ori.clone();
    for (r, m) in selection.matches.iter().enumerate() {
        if m.original >= n {
            return Err(Error::OutOfRange {
                index: m.original,
                len: n,
            });
        }
        out.slab_mut(m.original).copy_from_slice(stored.slab(r)?);
    }
    Ok(out)
}

/// Dataset-level token metadata for the cache augmentation block:
/// α (f64), N (u32), selected per sample (u32).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenMeta {
    pub alpha: f64,
    pub tokens: usize,
    pub selected: usize,
}

impl TokenMeta {
    pub fn new(alpha: f64, tokens: usize) -> Result<Self> {
        check_fraction("alpha", alpha)?;
        Ok(Self {
            alpha,
            tokens,
            selected: selection_count(alpha, tokens),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&(self.tokens as u32).to_le_bytes());
        out.extend_from_slice(&(self.selected as u32).to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let alpha = r.f64()?;
        let tokens = r.u32()? as usize;
        let selected = r.u32()? as usize;
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes in token metadata".into()));
        }
        let meta = Self::new(alpha, tokens).map_err(|e| Error::Format(e.to_string()))?;
        if meta.selected != selected {
            return Err(Error::Format(format!(
                "token metadata says {selected} selected, α·N rounds to {}",
                meta.selected
            )));
        }
        Ok(meta)
    }
}
