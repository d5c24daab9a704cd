//! Zero-padded three-pass box blur, a cheap symmetric Gaussian stand-in.

/// Box radius whose three-pass blur has a standard deviation close to `sigma`.
pub(crate) fn box_radius(sigma: f64) -> usize {
    (((1.0 + 4.0 * sigma * sigma).sqrt() - 1.0) / 2.0).round().max(1.0) as usize
}

/// Pixels a blur of box radius `r` can spread a value.
pub(crate) fn support(r: usize) -> usize {
    3 * r
}

fn box_line(src: &[f64], dst: &mut [f64], n: usize, stride: usize, r: usize) {
    let norm = 1.0 / (2 * r + 1) as f64;
    let mut acc = 0.0;
    for k in 0..r.min(n) {
        acc += src[k * stride];
    }
    for i in 0..n {
        if i + r < n {
            acc += src[(i + r) * stride];
        }
        dst[i * stride] = acc * norm;
        if i >= r {
            acc -= src[(i - r) * stride];
        }
    }
}

/// Blurs a `w × h` row-major buffer in place. The operator is self-adjoint.
pub(crate) fn blur(buf: &mut [f64], w: usize, h: usize, r: usize, tmp: &mut Vec<f64>) {
    tmp.resize(buf.len(), 0.0);
    for _ in 0..3 {
        for y in 0..h {
            box_line(&buf[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], w, 1, r);
        }
        buf.copy_from_slice(tmp);
    }
    for _ in 0..3 {
        for x in 0..w {
            box_line(&buf[x..], &mut tmp[x..], h, w, r);
        }
        buf.copy_from_slice(tmp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_line(src: &[f64], r: usize) -> Vec<f64> {
        (0..src.len())
            .map(|i| {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(src.len() - 1);
                src[lo..=hi].iter().sum::<f64>() / (2 * r + 1) as f64
            })
            .collect()
    }

    #[test]
    fn running_sum_matches_direct_sum() {
        let src: Vec<f64> = (0..17).map(|i| ((i * 7) % 5) as f64).collect();
        for r in 1..6 {
            let mut dst = vec![0.0; 17];
            box_line(&src, &mut dst, 17, 1, r);
            for (a, b) in dst.iter().zip(naive_line(&src, r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_is_self_adjoint() {
        let (w, h) = (13, 9);
        let a: Vec<f64> = (0..w * h).map(|i| ((i * 31) % 11) as f64 - 5.0).collect();
        let b: Vec<f64> = (0..w * h).map(|i| ((i * 17) % 7) as f64).collect();
        let mut tmp = Vec::new();
        let (mut ba, mut bb) = (a.clone(), b.clone());
        blur(&mut ba, w, h, 2, &mut tmp);
        blur(&mut bb, w, h, 2, &mut tmp);
        let lhs: f64 = ba.iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(&bb).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn radius_tracks_sigma() {
        for sigma in [1.0, 3.0, 8.0] {
            let r = box_radius(sigma) as f64;
            let sd = (r * (r + 1.0)).sqrt();
            assert!((sd - sigma).abs() / sigma < 0.45, "{sigma}: {sd}");
        }
    }
}
