//! Exactly invertible integer decorrelation on 4×4 blocks.
//!
//! Each block gets a separable two-level S-transform (integer Haar lifting)
//! along rows and then columns. Coefficients are emitted subband-major across
//! every block of the chunk so that fine-scale zeros form long runs, and each
//! block's DC term is coded as a delta from the previous block's DC.

pub const BLOCK: usize = 4;

/// Coefficient emission order within a block, coarse to fine.
const ORDER: [usize; 16] = [0, 1, 4, 5, 2, 3, 8, 12, 6, 7, 9, 13, 10, 11, 14, 15];

#[inline]
fn fwd4(v: [i64; 4]) -> [i64; 4] {
    let d1 = v[0] - v[1];
    let s1 = v[1] + (d1 >> 1);
    let d2 = v[2] - v[3];
    let s2 = v[3] + (d2 >> 1);
    let dd = s1 - s2;
    let ss = s2 + (dd >> 1);
    [ss, dd, d1, d2]
}

#[inline]
fn inv4(c: [i64; 4]) -> [i64; 4] {
    let [ss, dd, d1, d2] = c;
    let s2 = ss.wrapping_sub(dd >> 1);
    let s1 = dd.wrapping_add(s2);
    let b = s1.wrapping_sub(d1 >> 1);
    let a = d1.wrapping_add(b);
    let d = s2.wrapping_sub(d2 >> 1);
    let c_ = d2.wrapping_add(d);
    [a, b, c_, d]
}

fn fwd_block(b: &mut [i64; 16]) {
    for r in 0..4 {
        let row = fwd4([b[r * 4], b[r * 4 + 1], b[r * 4 + 2], b[r * 4 + 3]]);
        b[r * 4..r * 4 + 4].copy_from_slice(&row);
    }
    for c in 0..4 {
        let col = fwd4([b[c], b[4 + c], b[8 + c], b[12 + c]]);
        for r in 0..4 {
            b[r * 4 + c] = col[r];
        }
    }
}

fn inv_block(b: &mut [i64; 16]) {
    for c in 0..4 {
        let col = inv4([b[c], b[4 + c], b[8 + c], b[12 + c]]);
        for r in 0..4 {
            b[r * 4 + c] = col[r];
        }
    }
    for r in 0..4 {
        let row = inv4([b[r * 4], b[r * 4 + 1], b[r * 4 + 2], b[r * 4 + 3]]);
        b[r * 4..r * 4 + 4].copy_from_slice(&row);
    }
}

fn padded(n: usize) -> usize {
    n.div_ceil(BLOCK) * BLOCK
}

/// Number of coefficients produced for `n_planes` planes of `h×w`.
pub fn coeff_count(n_planes: usize, h: usize, w: usize) -> usize {
    n_planes * padded(h) * padded(w)
}

/// Forward transform of `n_planes` contiguous `h×w` planes. Planes are padded
/// to multiples of 4 by edge replication.
pub fn forward(values: &[i64], n_planes: usize, h: usize, w: usize) -> Vec<i64> {
    debug_assert_eq!(values.len(), n_planes * h * w);
    let (bh, bw) = (padded(h) / BLOCK, padded(w) / BLOCK);
    let nb = n_planes * bh * bw;
    let mut out = vec![0i64; nb * 16];
    let mut prev_dc = 0i64;
    let mut bi = 0;
    for plane in values.chunks_exact(h * w) {
        for by in 0..bh {
            for bx in 0..bw {
                let mut blk = [0i64; 16];
                for r in 0..BLOCK {
                    let y = (by * BLOCK + r).min(h - 1);
                    for c in 0..BLOCK {
                        let x = (bx * BLOCK + c).min(w - 1);
                        blk[r * 4 + c] = plane[y * w + x];
                    }
                }
                fwd_block(&mut blk);
                let dc = blk[0];
                blk[0] = dc - prev_dc;
                prev_dc = dc;
                for (p, &src) in ORDER.iter().enumerate() {
                    out[p * nb + bi] = blk[src];
                }
                bi += 1;
            }
        }
    }
    out
}

/// Inverse of [`forward`]; crops the padding.
pub fn inverse(coeffs: &[i64], n_planes: usize, h: usize, w: usize) -> Vec<i64> {
    let (bh, bw) = (padded(h) / BLOCK, padded(w) / BLOCK);
    let nb = n_planes * bh * bw;
    debug_assert_eq!(coeffs.len(), nb * 16);
    let mut out = vec![0i64; n_planes * h * w];
    let mut prev_dc = 0i64;
    let mut bi = 0;
    for plane in out.chunks_exact_mut(h * w) {
        for by in 0..bh {
            for bx in 0..bw {
                let mut blk = [0i64; 16];
                for (p, &dst) in ORDER.iter().enumerate() {
                    blk[dst] = coeffs[p * nb + bi];
                }
                let dc = blk[0].wrapping_add(prev_dc);
                blk[0] = dc;
                prev_dc = dc;
                inv_block(&mut blk);
                for r in 0..BLOCK {
                    let y = by * BLOCK + r;
                    if y >= h {
                        break;
                    }
                    for c in 0..BLOCK {
                        let x = bx * BLOCK + c;
                        if x >= w {
                            break;
                        }
                        plane[y * w + x] = blk[r * 4 + c];
                    }
                }
                bi += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_is_permutation() {
        let mut o = ORDER.to_vec();
        o.sort();
        assert_eq!(o, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn constant_block_has_only_dc() {
        let mut b = [7i64; 16];
        fwd_block(&mut b);
        assert_eq!(b[0], 7);
        assert!(b[1..].iter().all(|&c| c == 0));
    }

    #[test]
    fn smooth_planes_mostly_zero() {
        let (h, w) = (16, 16);
        let vals: Vec<i64> = (0..h * w).map(|_| 3).collect();
        let c = forward(&vals, 1, h, w);
        assert_eq!(c.iter().filter(|&&v| v != 0).count(), 1);
    }

    proptest! {
        #[test]
        fn block_roundtrip(v in proptest::array::uniform16(-(1i64 << 42)..(1i64 << 42))) {
            let mut b = v;
            fwd_block(&mut b);
            inv_block(&mut b);
            prop_assert_eq!(b, v);
        }

        #[test]
        fn plane_roundtrip(
            (planes, h, w, vals) in (1usize..3, 1usize..11, 1usize..11).prop_flat_map(|(p, h, w)| {
                (Just(p), Just(h), Just(w), proptest::collection::vec(-5000i64..5000, p * h * w))
            })
        ) {
            let c = forward(&vals, planes, h, w);
            prop_assert_eq!(c.len(), coeff_count(planes, h, w));
            prop_assert_eq!(inverse(&c, planes, h, w), vals);
        }
    }
}
