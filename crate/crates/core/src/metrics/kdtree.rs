//! Static 3-d tree for nearest-neighbor distances.

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Implicit balanced tree over `points`, reordered in place.
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut pts = points.to_vec();
        let mut axes = vec![0u8; pts.len()];
        build(&mut pts, &mut axes);
        Self { points: pts, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance to the nearest stored point; infinite when empty.
    pub fn nearest_distance(&self, q: &[f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        search(&self.points, &self.axes, q, &mut best);
        best.sqrt()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn build(pts: &mut [[f64; 3]], axes: &mut [u8]) {
    if pts.len() <= 1 {
        return;
    }
    let mut spread = [0.0f64; 3];
    for (a, s) in spread.iter_mut().enumerate() {
        let (lo, hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[a]), hi.max(p[a]))
            });
        *s = hi - lo;
    }
    let axis = (0..3)
        .max_by(|&a, &b| spread[a].total_cmp(&spread[b]))
        .unwrap();
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (lp, rest) = pts.split_at_mut(mid);
    let (la, ra) = axes.split_at_mut(mid);
    build(lp, la);
    build(&mut rest[1..], &mut ra[1..]);
}

fn search(pts: &[[f64; 3]], axes: &[u8], q: &[f64; 3], best: &mut f64) {
    if pts.is_empty() {
        return;
    }
    let mid = pts.len() / 2;
    let p = &pts[mid];
    *best = best.min(dist2(p, q));
    if pts.len() == 1 {
        return;
    }
    let axis = axes[mid] as usize;
    let diff = q[axis] - p[axis];
    let (near, far, na, fa) = if diff < 0.0 {
        (&pts[..mid], &pts[mid + 1..], &axes[..mid], &axes[mid + 1..])
    } else {
        (&pts[mid + 1..], &pts[..mid], &axes[mid + 1..], &axes[..mid])
    };
    search(near, na, q, best);
    if diff * diff < *best {
        search(far, fa, q, best);
    }
}

/// Exhaustive nearest-neighbor distance.
pub fn brute_force_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> f64 {
    points
        .iter()
        .map(|p| dist2(p, q))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
