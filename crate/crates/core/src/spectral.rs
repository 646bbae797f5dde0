//! Shared 2D FFT machinery.
//!
//! Thin wrapper over `rustfft` doing row/column passes with a cache-blocked
//! transpose. Plans and scratch buffers are cached per thread, which keeps
//! the working set confined to one worker as the concurrency contract for
//! registration requires.

use num_complex::Complex;
use rustfft::FftPlanner;
use std::cell::RefCell;

pub(crate) type C64 = Complex<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

const TRANSPOSE_BLOCK: usize = 32;

fn transpose(src: &[C64], dst: &mut [C64], w: usize, h: usize) {
    debug_assert_eq!(src.len(), w * h);
    debug_assert_eq!(dst.len(), w * h);
    for by in (0..h).step_by(TRANSPOSE_BLOCK) {
        for bx in (0..w).step_by(TRANSPOSE_BLOCK) {
            for y in by..(by + TRANSPOSE_BLOCK).min(h) {
                for x in bx..(bx + TRANSPOSE_BLOCK).min(w) {
                    dst[x * h + y] = src[y * w + x];
                }
            }
        }
    }
}

fn fft_pass(data: &mut [C64], len: usize, inverse: bool) {
    PLANNER.with(|p| {
        let fft = {
            let mut planner = p.borrow_mut();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        };
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for chunk in data.chunks_exact_mut(len) {
            fft.process_with_scratch(chunk, &mut scratch);
        }
    });
}

/// In-place 2D FFT over a row-major `w`x`h` grid. Forward is unnormalized;
/// the inverse divides by `w*h` so that `inverse(forward(x)) == x`.
pub(crate) fn fft2d(data: &mut Vec<C64>, w: usize, h: usize, inverse: bool) {
    debug_assert_eq!(data.len(), w * h);
    fft_pass(data, w, inverse);
    let mut t = vec![C64::new(0.0, 0.0); w * h];
    transpose(data, &mut t, w, h);
    fft_pass(&mut t, h, inverse);
    transpose(&t, data, h, w);
    if inverse {
        let norm = 1.0 / (w * h) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }
}

/// Forward 2D FFT of a real-valued grid.
pub(crate) fn forward_real(pixels: &[f64], w: usize, h: usize) -> Vec<C64> {
    let mut data: Vec<C64> = pixels.iter().map(|&p| C64::new(p, 0.0)).collect();
    fft2d(&mut data, w, h, false);
    data
}

/// Source index in the unshifted spectrum for target index `k` of the
/// center-DC layout: `shifted[k] = raw[unshift_index(k, n)]`.
pub(crate) fn unshift_index(k: usize, n: usize) -> usize {
    (k + n - n / 2) % n
}

/// Signed frequency (cycles per sample, in (-0.5, 0.5]) of unshifted bin `u`.
pub(crate) fn bin_frequency(u: usize, n: usize) -> f64 {
    let u = u as isize;
    let n = n as isize;
    let signed = if u > n / 2 { u - n } else { u };
    signed as f64 / n as f64
}
