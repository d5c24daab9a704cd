//! Static k-d tree for nearest-neighbour and radius queries on small point sets.

/// Balanced k-d tree over `D`-dimensional points. Built once, queried many times.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    // Tree nodes in implicit median layout over `order`.
    order: Vec<usize>,
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64; D] {
        &self.points[index]
    }

    /// Index of and squared distance to the nearest stored point.
    pub fn nearest(&self, query: &[f64; D]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(&self.order, 0, query, &mut best);
        Some(best)
    }

    /// Indices of all points within `radius` (inclusive) of `query`.
    pub fn within(&self, query: &[f64; D], radius: f64, out: &mut Vec<usize>) {
        self.within_in(&self.order, 0, query, radius * radius, radius, out);
    }

    fn nearest_in(&self, slice: &[usize], depth: usize, q: &[f64; D], best: &mut (usize, f64)) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        let d2 = dist2(p, q);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = depth % D;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.nearest_in(near, depth + 1, q, best);
        if diff * diff <= best.1 {
            self.nearest_in(far, depth + 1, q, best);
        }
    }

    fn within_in(
        &self,
        slice: &[usize],
        depth: usize,
        q: &[f64; D],
        r2: f64,
        r: f64,
        out: &mut Vec<usize>,
    ) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        if dist2(p, q) <= r2 {
            out.push(idx);
        }
        let axis = depth % D;
        let diff = q[axis] - p[axis];
        if diff - r <= 0.0 {
            self.within_in(&slice[..mid], depth + 1, q, r2, r, out);
        }
        if diff + r >= 0.0 {
            self.within_in(&slice[mid + 1..], depth + 1, q, r2, r, out);
        }
    }
}

fn build<const D: usize>(points: &[[f64; D]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % D;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[inline]
pub(crate) fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}
