//! Binary pixel sets and the exact Euclidean distance transform over them.

/// Binary pixel set over a `width × height` image domain, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a mask from pixel coordinates; coordinates outside the domain are ignored.
    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(width, height);
        for (x, y) in pixels {
            if x < width && y < height {
                m.set(x, y, true);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Set pixel coordinates in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn same_domain(&self, other: &PixelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn and(&self, other: &PixelMask) -> PixelMask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &PixelMask) -> PixelMask {
        self.zip(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &PixelMask) -> PixelMask {
        self.zip(other, |a, b| a && !b)
    }

    fn zip(&self, other: &PixelMask, f: impl Fn(bool, bool) -> bool) -> PixelMask {
        assert!(self.same_domain(other), "pixel masks over different domains");
        PixelMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Pixels within Euclidean distance `radius` of the set.
    pub fn dilated(&self, radius: f64) -> PixelMask {
        if radius <= 0.0 || !self.any() {
            return self.clone();
        }
        let df = distance_transform(self);
        let r2 = radius * radius;
        PixelMask {
            width: self.width,
            height: self.height,
            data: df.dist2.iter().map(|&d| d <= r2).collect(),
        }
    }
}

/// Exact squared Euclidean distance to the nearest set pixel, with that pixel's index.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist2: Vec<f64>,
    nearest: Vec<u32>,
}

pub const NO_SEED: u32 = u32::MAX;

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dist2(&self, x: usize, y: usize) -> f64 {
        self.dist2[y * self.width + x]
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.dist2(x, y).sqrt()
    }

    /// Coordinates of the nearest set pixel, `None` when the set is empty.
    #[inline]
    pub fn nearest(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let n = self.nearest[y * self.width + x];
        (n != NO_SEED).then(|| (n as usize % self.width, n as usize / self.width))
    }

    /// Nearest set pixel to a continuous position, looked up at the enclosing
    /// (clamped) pixel.
    pub fn nearest_to(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let xi = (x.floor().max(0.0) as usize).min(self.width - 1);
        let yi = (y.floor().max(0.0) as usize).min(self.height - 1);
        self.nearest(xi, yi)
    }
}

/// Felzenszwalb–Huttenlocher separable squared EDT with nearest-seed tracking.
pub fn distance_transform(mask: &PixelMask) -> DistanceField {
    let (w, h) = (mask.width, mask.height);
    let inf = f64::INFINITY;
    // Column pass: squared vertical distance and the row of the nearest seed.
    let mut col_d = vec![inf; w * h];
    let mut col_row = vec![NO_SEED; w * h];
    let mut f = vec![0.0; h.max(w)];
    let mut out_d = vec![0.0; h.max(w)];
    let mut out_arg = vec![0usize; h.max(w)];
    let mut v = vec![0usize; h.max(w)];
    let mut z = vec![0.0; h.max(w) + 1];
    for x in 0..w {
        let mut any = false;
        for y in 0..h {
            let s = mask.data[y * w + x];
            any |= s;
            f[y] = if s { 0.0 } else { inf };
        }
        if !any {
            continue;
        }
        lower_envelope(&f[..h], &mut out_d[..h], &mut out_arg[..h], &mut v, &mut z);
        for y in 0..h {
            col_d[y * w + x] = out_d[y];
            col_row[y * w + x] = out_arg[y] as u32;
        }
    }
    // Row pass over the column distances.
    let mut dist2 = vec![inf; w * h];
    let mut nearest = vec![NO_SEED; w * h];
    for y in 0..h {
        let row = &col_d[y * w..(y + 1) * w];
        if row.iter().all(|d| d.is_infinite()) {
            continue;
        }
        f[..w].copy_from_slice(row);
        lower_envelope(&f[..w], &mut out_d[..w], &mut out_arg[..w], &mut v, &mut z);
        for x in 0..w {
            let src_col = out_arg[x];
            dist2[y * w + x] = out_d[x];
            let src_row = col_row[y * w + src_col] as usize;
            nearest[y * w + x] = (src_row * w + src_col) as u32;
        }
    }
    DistanceField {
        width: w,
        height: h,
        dist2,
        nearest,
    }
}

/// 1D lower envelope of parabolas `(q − p)² + f(p)`; requires at least one finite `f`.
fn lower_envelope(f: &[f64], d: &mut [f64], arg: &mut [usize], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let first = f.iter().position(|x| x.is_finite()).expect("at least one seed");
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere.
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
        arg[q] = p;
    }
}
