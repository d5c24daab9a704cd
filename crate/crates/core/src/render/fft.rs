use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::render::GrayImage;

/// Default radius (in frequency bins) of the removed low-frequency disc.
pub const DEFAULT_CUTOFF_BINS: f64 = 8.0;

/// High-pass contour enhancement: zeroes every frequency bin within `cutoff` of DC
/// (signed bin indices), inverts, and normalizes the magnitude to `[0, 1]`.
///
/// Images with nothing left after filtering come back all zero.
pub fn contour_enhance(image: &GrayImage, cutoff: f64) -> GrayImage {
    let (w, h) = (image.width, image.height);
    assert!(w > 0 && h > 0, "contour enhancement needs a non-empty image");
    let mut buf: Vec<Complex<f64>> = image.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(&mut buf, w, h, false);
    let signed = |k: usize, n: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let r2 = cutoff * cutoff;
    for ky in 0..h {
        let fy = signed(ky, h);
        for kx in 0..w {
            let fx = signed(kx, w);
            if fx * fx + fy * fy <= r2 {
                buf[ky * w + kx] = Complex::new(0.0, 0.0);
            }
        }
    }
    fft_2d(&mut buf, w, h, true);
    let n = (w * h) as f64;
    let mut out: Vec<f64> = buf.iter().map(|c| c.norm() / n).collect();
    let peak = out.iter().cloned().fold(0.0, f64::max);
    let scale = image.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
    // Anything at round-off level relative to the input is treated as nothing.
    if peak <= 1e-9 * scale.max(f64::MIN_POSITIVE) {
        out.iter_mut().for_each(|v| *v = 0.0);
    } else {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    GrayImage::new(w, h, out)
}

fn fft_2d(buf: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}
