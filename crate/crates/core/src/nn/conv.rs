//! 3×3 same-size convolution via im2col and a strided GEMM.
//!
//! Activations are channel-major `[channels][nx][ny]`. The column matrix has
//! one row per `(channel, di, dj)` tap and one column per output cell; taps
//! that fall outside the lattice read zero.

use crate::real::Real;

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;

/// Valid index range `lo..hi` for an axis of length `n` under tap offset `off`
/// (−1, 0 or +1), such that `k + off` stays in bounds.
#[inline]
fn valid(n: usize, off: isize) -> (usize, usize) {
    match off {
        -1 => (1, n),
        1 => (0, n.saturating_sub(1)),
        _ => (0, n),
    }
}

/// Fills `cols` (`channels·9 × nx·ny`) from `input` (`channels × nx·ny`).
pub fn im2col<T: Real>(input: &[T], channels: usize, nx: usize, ny: usize, cols: &mut [T]) {
    let hw = nx * ny;
    debug_assert_eq!(input.len(), channels * hw);
    debug_assert_eq!(cols.len(), channels * TAPS * hw);
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                let (oi, oj) = (di as isize - 1, dj as isize - 1);
                let row = &mut cols[((c * TAPS) + di * KERNEL + dj) * hw..][..hw];
                let (i_lo, i_hi) = valid(nx, oi);
                let (j_lo, j_hi) = valid(ny, oj);
                for i in 0..nx {
                    let dst = &mut row[i * ny..(i + 1) * ny];
                    if i < i_lo || i >= i_hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let si = (i as isize + oi) as usize;
                    dst[..j_lo].fill(T::zero());
                    dst[j_hi..].fill(T::zero());
                    let src_lo = (j_lo as isize + oj) as usize;
                    dst[j_lo..j_hi].copy_from_slice(&plane[si * ny + src_lo..si * ny + src_lo + (j_hi - j_lo)]);
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto `grad_input`; the adjoint of [`im2col`].
pub fn col2im<T: Real>(cols: &[T], channels: usize, nx: usize, ny: usize, grad_input: &mut [T]) {
    let hw = nx * ny;
    debug_assert_eq!(grad_input.len(), channels * hw);
    for c in 0..channels {
        let plane = &mut grad_input[c * hw..(c + 1) * hw];
        for di in 0..KERNEL {
            for dj in 0..KERNEL {
                let (oi, oj) = (di as isize - 1, dj as isize - 1);
                let row = &cols[((c * TAPS) + di * KERNEL + dj) * hw..][..hw];
                let (i_lo, i_hi) = valid(nx, oi);
                let (j_lo, j_hi) = valid(ny, oj);
                for i in i_lo..i_hi {
                    let si = (i as isize + oi) as usize;
                    let src = &row[i * ny + j_lo..i * ny + j_hi];
                    let dst_lo = si * ny + (j_lo as isize + oj) as usize;
                    for (d, &s) in plane[dst_lo..dst_lo + src.len()].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `out = W·cols + b` with `W: out_ch × in_ch·9`, `out: out_ch × nx·ny`.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Real>(
    weights: &[T],
    biases: &[T],
    input: &[T],
    in_ch: usize,
    out_ch: usize,
    nx: usize,
    ny: usize,
    cols: &mut Vec<T>,
) -> Vec<T> {
    let hw = nx * ny;
    let k = in_ch * TAPS;
    cols.resize(k * hw, T::zero());
    im2col(input, in_ch, nx, ny, cols);
    let mut out = Vec::with_capacity(out_ch * hw);
    for &b in biases {
        out.extend(std::iter::repeat_n(b, hw));
    }
    T::gemm(out_ch, k, hw, T::one(), weights, (k as isize, 1), cols, (hw as isize, 1), T::one(), &mut out, (hw as isize, 1));
    out
}

/// Gradients of one convolution given `grad_out` (`out_ch × nx·ny`) and the
/// layer input. Weight and bias gradients are accumulated into `grad_w` and
/// `grad_b`; the input gradient is returned when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    weights: &[T],
    input: &[T],
    grad_out: &[T],
    in_ch: usize,
    out_ch: usize,
    nx: usize,
    ny: usize,
    grad_w: &mut [T],
    grad_b: &mut [T],
    want_input: bool,
    cols: &mut Vec<T>,
) -> Option<Vec<T>> {
    let hw = nx * ny;
    let k = in_ch * TAPS;
    for (o, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
    }
    cols.resize(k * hw, T::zero());
    im2col(input, in_ch, nx, ny, cols);
    // grad_w (out_ch × k) += grad_out (out_ch × hw) · colsᵀ (hw × k)
    T::gemm(out_ch, hw, k, T::one(), grad_out, (hw as isize, 1), cols, (1, hw as isize), T::one(), grad_w, (k as isize, 1));
    if !want_input {
        return None;
    }
    // grad_cols (k × hw) = Wᵀ (k × out_ch) · grad_out (out_ch × hw)
    T::gemm(k, out_ch, hw, T::one(), weights, (1, k as isize), grad_out, (hw as isize, 1), T::zero(), cols, (hw as isize, 1));
    let mut grad_in = vec![T::zero(); in_ch * hw];
    col2im(cols, in_ch, nx, ny, &mut grad_in);
    Some(grad_in)
}
