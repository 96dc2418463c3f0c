//! Multi-resolution hash grid encoding.
//!
//! Each level stores a flat table of `2^table_size_log2` feature vectors of
//! width `feature_dim`. A query point is normalized into the domain box,
//! trilinearly interpolated from the 8 surrounding lattice vertices of every
//! level, and the per-level results are concatenated. Levels whose vertex
//! lattice fits in the table are indexed densely (injective); the rest use
//! the usual XOR-of-primes spatial hash.
//!
//! An optional cosine level mask scales level `l` by `w_l(beta)`, which is 1
//! for `l <= beta`, 0 for `l >= beta + 1` and a half-cosine ramp in between.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-axis multipliers of the spatial hash (first axis is left unscrambled).
const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Magnitude bound of the uniform table initialization.
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([-1.0; 3], [1.0; 3])
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// Largest half-extent; the scale used to express depths in box units.
    pub fn half_extent(&self) -> f64 {
        (0..3).map(|a| 0.5 * self.extent(a)).fold(0.0, f64::max)
    }

    pub fn contains(&self, p: [f64; 3], tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    /// Slab test. Returns the parametric interval of the ray inside the box.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = (
                (self.min[a] - origin[a]) * inv,
                (self.max[a] - origin[a]) * inv,
            );
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 >= t0.max(0.0)).then_some((t0, t1))
    }

    fn is_valid(&self) -> bool {
        (0..3).all(|a| {
            self.min[a].is_finite() && self.max[a].is_finite() && self.max[a] > self.min[a]
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub levels: usize,
    pub feature_dim: usize,
    pub table_size_log2: u32,
    /// Cells per axis at level 1.
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub bounds: Aabb,
}

impl GridConfig {
    /// Finest resolution used by the desk-scale default.
    pub const DESK_FINEST: u32 = 2048;
    /// Finest resolution of the full-scale configuration.
    pub const FULL_FINEST: u32 = 32768;

    /// Desk defaults: 16 levels of 2 features, 2^15 entries, 16 to 2048 cells.
    pub fn desk(bounds: Aabb) -> Self {
        Self {
            levels: 16,
            feature_dim: 2,
            table_size_log2: 15,
            base_resolution: 16,
            growth_factor: 2.0,
            bounds,
        }
        .with_finest_resolution(Self::DESK_FINEST)
    }

    /// Picks the growth factor so that the last level reaches `finest` cells.
    pub fn with_finest_resolution(mut self, finest: u32) -> Self {
        if self.levels > 1 {
            let ratio = finest as f64 / self.base_resolution as f64;
            self.growth_factor = ratio.powf(1.0 / (self.levels - 1) as f64);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.feature_dim == 0 {
            return Err(Error::config(
                "grid needs at least one level and one feature",
            ));
        }
        if !(1..=30).contains(&self.table_size_log2) {
            return Err(Error::config("table_size_log2 must be within 1..=30"));
        }
        if self.base_resolution == 0 {
            return Err(Error::config("base_resolution must be positive"));
        }
        if !(self.growth_factor.is_finite() && self.growth_factor >= 1.0) {
            return Err(Error::config("growth_factor must be finite and >= 1"));
        }
        if !self.bounds.is_valid() {
            return Err(Error::config("grid bounds must be a non-degenerate box"));
        }
        Ok(())
    }

    /// Cells per axis at 1-based `level`.
    pub fn resolution(&self, level: usize) -> u32 {
        let r = self.base_resolution as f64 * self.growth_factor.powi(level as i32 - 1);
        // guard against powf landing a hair below an integer
        (r * (1.0 + 1e-12)).floor().max(1.0) as u32
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    pub fn level_len(&self) -> usize {
        self.table_size() * self.feature_dim
    }

    pub fn param_count(&self) -> usize {
        self.levels * self.level_len()
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.feature_dim
    }

    pub fn same_geometry(&self, other: &GridConfig) -> bool {
        self == other
    }
}

/// Precomputed per-level geometry.
#[derive(Clone, Debug)]
pub struct GridLayout {
    pub config: GridConfig,
    levels: Vec<LevelInfo>,
    inv_extent: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
struct LevelInfo {
    resolution: u32,
    dense: bool,
}

/// The 8 lattice corners around a point on one level: table indices and
/// trilinear weights.
#[derive(Clone, Copy, Debug)]
pub struct Corners {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

impl GridLayout {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let table = config.table_size() as u64;
        let levels = (1..=config.levels)
            .map(|l| {
                let resolution = config.resolution(l);
                let verts = resolution as u64 + 1;
                LevelInfo {
                    resolution,
                    dense: verts * verts * verts <= table,
                }
            })
            .collect();
        let inv_extent = [0, 1, 2].map(|a| 1.0 / config.bounds.extent(a));
        Ok(Self {
            config,
            levels,
            inv_extent,
        })
    }

    pub fn levels(&self) -> usize {
        self.config.levels
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn resolution(&self, level: usize) -> u32 {
        self.levels[level - 1].resolution
    }

    pub fn is_dense(&self, level: usize) -> bool {
        self.levels[level - 1].dense
    }

    /// Offset of `level`'s table within the grid's parameter block.
    pub fn level_offset(&self, level: usize) -> usize {
        (level - 1) * self.config.level_len()
    }

    /// Table slot of an integer lattice vertex on 1-based `level`.
    pub fn hash_index(&self, cell: [u32; 3], level: usize) -> usize {
        let info = self.levels[level - 1];
        let mask = self.config.table_size() - 1;
        if info.dense {
            let r = info.resolution as usize + 1;
            (cell[0] as usize + r * (cell[1] as usize + r * cell[2] as usize)) & mask
        } else {
            let h = cell[0].wrapping_mul(HASH_PRIMES[0])
                ^ cell[1].wrapping_mul(HASH_PRIMES[1])
                ^ cell[2].wrapping_mul(HASH_PRIMES[2]);
            h as usize & mask
        }
    }

    /// Continuous lattice coordinates of `x` on `level`, clamped to the box.
    pub fn lattice_coords(&self, x: [f64; 3], level: usize) -> [f64; 3] {
        let res = self.levels[level - 1].resolution as f64;
        let b = &self.config.bounds;
        [0, 1, 2].map(|a| ((x[a] - b.min[a]) * self.inv_extent[a]).clamp(0.0, 1.0) * res)
    }

    pub fn corners(&self, x: [f64; 3], level: usize) -> Corners {
        let res = self.levels[level - 1].resolution;
        let p = self.lattice_coords(x, level);
        let mut cell = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let c = (p[a].floor() as u32).min(res - 1);
            cell[a] = c;
            frac[a] = p[a] - c as f64;
        }
        let mut out = Corners {
            index: [0; 8],
            weight: [0.0; 8],
        };
        for k in 0..8 {
            let mut v = cell;
            let mut w = 1.0;
            for a in 0..3 {
                if k >> a & 1 == 1 {
                    v[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            out.index[k] = self.hash_index(v, level);
            out.weight[k] = w;
        }
        out
    }

    /// Trilinear interpolation of one level; `grid` is the whole grid block.
    pub fn interpolate(&self, x: [f64; 3], level: usize, grid: &[f64]) -> Vec<f64> {
        let d = self.feature_dim();
        let mut out = vec![0.0; d];
        self.interpolate_into(x, level, grid, 1.0, &mut out);
        out
    }

    fn interpolate_into(
        &self,
        x: [f64; 3],
        level: usize,
        grid: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let d = self.feature_dim();
        let table =
            &grid[self.level_offset(level)..self.level_offset(level) + self.config.level_len()];
        let c = self.corners(x, level);
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..8 {
            let w = c.weight[k] * scale;
            let row = &table[c.index[k] * d..(c.index[k] + 1) * d];
            for (o, f) in out.iter_mut().zip(row) {
                *o += w * f;
            }
        }
    }

    /// Full encoding of length `levels * feature_dim`.
    pub fn encode(&self, x: [f64; 3], grid: &[f64], mask: Option<LevelMask>) -> Vec<f64> {
        let mut out = vec![0.0; self.config.output_dim()];
        self.encode_into(x, grid, mask, &mut out);
        out
    }

    pub fn encode_into(&self, x: [f64; 3], grid: &[f64], mask: Option<LevelMask>, out: &mut [f64]) {
        let d = self.feature_dim();
        for l in 1..=self.levels() {
            let w = mask.map_or(1.0, |m| m.weight(l));
            let slot = &mut out[(l - 1) * d..l * d];
            if w == 0.0 {
                slot.iter_mut().for_each(|o| *o = 0.0);
            } else {
                self.interpolate_into(x, l, grid, w, slot);
            }
        }
    }

    /// Accumulates `d encode / d table` contracted with `upstream` into
    /// `grad` (laid out like the grid block).
    pub fn encode_backward(
        &self,
        x: [f64; 3],
        mask: Option<LevelMask>,
        upstream: &[f64],
        mut scatter: impl FnMut(usize, f64),
    ) {
        let d = self.feature_dim();
        for l in 1..=self.levels() {
            let w = mask.map_or(1.0, |m| m.weight(l));
            if w == 0.0 {
                continue;
            }
            let g = &upstream[(l - 1) * d..l * d];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let base = self.level_offset(l);
            let c = self.corners(x, l);
            for k in 0..8 {
                let cw = c.weight[k] * w;
                for (j, gj) in g.iter().enumerate() {
                    scatter(base + c.index[k] * d + j, cw * gj);
                }
            }
        }
    }

    /// Uniform `[-INIT_SCALE, INIT_SCALE]` initialization.
    pub fn init_table(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.config.param_count())
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect()
    }

    /// Fraction of lattice vertices in `[0, n)^3` that share a slot with an
    /// earlier vertex on `level`.
    pub fn collision_rate(&self, level: usize, n: u32) -> f64 {
        let mut seen = std::collections::HashSet::new();
        let mut collisions = 0usize;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    if !seen.insert(self.hash_index([x, y, z], level)) {
                        collisions += 1;
                    }
                }
            }
        }
        collisions as f64 / (n as f64).powi(3)
    }
}

/// Cosine activation window over levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMask {
    pub beta: f64,
}

impl LevelMask {
    pub fn new(beta: f64) -> Self {
        Self { beta }
    }

    pub fn weight(&self, level: usize) -> f64 {
        level_mask(self.beta, level)
    }
}

/// `(1 - cos(pi * clamp(beta - l + 1, 0, 1))) / 2` for 1-based level `l`.
pub fn level_mask(beta: f64, level: usize) -> f64 {
    let t = (beta - level as f64 + 1.0).clamp(0.0, 1.0);
    0.5 * (1.0 - (PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(levels: usize, d: usize, log2: u32, base: u32) -> GridLayout {
        GridLayout::new(GridConfig {
            levels,
            feature_dim: d,
            table_size_log2: log2,
            base_resolution: base,
            growth_factor: 2.0,
            bounds: Aabb::unit(),
        })
        .unwrap()
    }

    fn random_grid(layout: &GridLayout, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..layout.config.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn hash_is_deterministic() {
        let g = small(4, 2, 10, 16);
        for l in 1..=4 {
            assert_eq!(g.hash_index([0, 0, 0], l), g.hash_index([0, 0, 0], l));
        }
    }

    #[test]
    fn dense_level_is_injective() {
        // resolution 4, 2^12 slots
        let g = small(1, 2, 12, 4);
        assert!(g.is_dense(1));
        let mut idx = std::collections::HashSet::new();
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    idx.insert(g.hash_index([x, y, z], 1));
                }
            }
        }
        assert_eq!(idx.len(), 64);
    }

    #[test]
    fn collision_probe_on_hashed_levels() {
        let g = small(4, 2, 8, 16);
        assert!(!g.is_dense(3) && !g.is_dense(4));
        // 512 lattice points into 256 slots: at least half must collide
        let r3 = g.collision_rate(3, 8);
        let r4 = g.collision_rate(4, 8);
        assert!(r3 >= 0.5 && r3 < 1.0, "{r3}");
        assert!(r4 >= 0.5 && r4 < 1.0, "{r4}");
        // slot of (5,7,9) is a pure function of the cell; levels share the hash
        assert_eq!(g.hash_index([5, 7, 9], 3), g.hash_index([5, 7, 9], 4));
    }

    #[test]
    fn resolution_is_nondecreasing() {
        let c = GridConfig::desk(Aabb::unit());
        assert_eq!(c.resolution(1), 16);
        assert_eq!(c.resolution(16), 2048);
        for l in 2..=16 {
            assert!(c.resolution(l) >= c.resolution(l - 1));
        }
        let full = c.clone().with_finest_resolution(GridConfig::FULL_FINEST);
        assert_eq!(full.resolution(16), 32768);
    }

    #[test]
    fn vertex_query_returns_stored_feature() {
        let g = small(2, 3, 12, 4);
        let grid = random_grid(&g, 1);
        // vertex (1, 2, 3) of a 4-cell lattice over [-1, 1]
        let x = [-1.0 + 0.5, -1.0 + 1.0, -1.0 + 1.5];
        let idx = g.hash_index([1, 2, 3], 1);
        let f = g.interpolate(x, 1, &grid);
        for j in 0..3 {
            assert!((f[j] - grid[idx * 3 + j]).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let g = small(1, 2, 12, 4);
        let grid = random_grid(&g, 2);
        let x = [-1.0 + 0.25, -1.0 + 0.75, -1.0 + 1.25];
        let mut mean = [0.0; 2];
        for k in 0..8u32 {
            let v = [k & 1, 1 + (k >> 1 & 1), 2 + (k >> 2 & 1)];
            let idx = g.hash_index(v, 1);
            mean[0] += grid[idx * 2] / 8.0;
            mean[1] += grid[idx * 2 + 1] / 8.0;
        }
        let f = g.interpolate(x, 1, &grid);
        assert!((f[0] - mean[0]).abs() < 1e-14 && (f[1] - mean[1]).abs() < 1e-14);
    }

    /// Trilinear value evaluated inside an explicitly chosen cell.
    fn interp_in_cell(
        g: &GridLayout,
        grid: &[f64],
        x: [f64; 3],
        level: usize,
        cell: [u32; 3],
    ) -> Vec<f64> {
        let p = g.lattice_coords(x, level);
        let d = g.feature_dim();
        let mut out = vec![0.0; d];
        for k in 0..8u32 {
            let mut v = cell;
            let mut w = 1.0;
            for a in 0..3 {
                let f = p[a] - cell[a] as f64;
                if k >> a & 1 == 1 {
                    v[a] += 1;
                    w *= f;
                } else {
                    w *= 1.0 - f;
                }
            }
            let idx = g.hash_index(v, level);
            for j in 0..d {
                out[j] += w * grid[g.level_offset(level) + idx * d + j];
            }
        }
        out
    }

    #[test]
    fn shared_face_is_continuous() {
        let g = small(3, 2, 9, 6);
        let grid = random_grid(&g, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let level = rng.gen_range(1..=3);
            let res = g.resolution(level);
            let axis = rng.gen_range(0..3);
            let face = rng.gen_range(1..res);
            let mut cell = [0u32; 3];
            let mut x = [0.0; 3];
            for a in 0..3 {
                cell[a] = rng.gen_range(0..res);
                let frac = rng.gen_range(0.0..1.0);
                x[a] = -1.0 + 2.0 * (cell[a] as f64 + frac) / res as f64;
            }
            cell[axis] = face;
            x[axis] = -1.0 + 2.0 * face as f64 / res as f64;
            let mut lower = cell;
            lower[axis] = face - 1;
            let a = interp_in_cell(&g, &grid, x, level, cell);
            let b = interp_in_cell(&g, &grid, x, level, lower);
            let c = g.interpolate(x, level, &grid);
            for j in 0..2 {
                assert!((a[j] - b[j]).abs() < 1e-9);
                assert!((a[j] - c[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn level_mask_values() {
        assert_eq!(level_mask(8.0, 3), 1.0);
        assert_eq!(level_mask(8.0, 12), 0.0);
        assert!((level_mask(1.5, 2) - 0.5).abs() < 1e-15);
        assert_eq!(level_mask(0.0, 1), 0.0);
    }

    #[test]
    fn encode_with_masks() {
        let g = small(4, 2, 12, 2);
        let grid = random_grid(&g, 5);
        let x = [0.13, -0.4, 0.77];
        let plain = g.encode(x, &grid, None);
        assert_eq!(plain.len(), 8);
        assert!(g
            .encode(x, &grid, Some(LevelMask::new(0.0)))
            .iter()
            .all(|v| *v == 0.0));
        assert_eq!(g.encode(x, &grid, Some(LevelMask::new(4.0))), plain);
        let m = g.encode(x, &grid, Some(LevelMask::new(2.5)));
        assert_eq!(&m[0..4], &plain[0..4]);
        assert!((m[4] - 0.5 * plain[4]).abs() < 1e-15 && (m[5] - 0.5 * plain[5]).abs() < 1e-15);
        assert_eq!(&m[6..8], &[0.0, 0.0]);
    }

    #[test]
    fn masked_encode_is_linear_in_table() {
        let g = small(4, 2, 10, 4);
        let grid = random_grid(&g, 6);
        let doubled: Vec<f64> = grid.iter().map(|v| 2.0 * v).collect();
        let x = [0.3, 0.1, -0.9];
        let mask = Some(LevelMask::new(2.3));
        let a = g.encode(x, &grid, mask);
        let b = g.encode(x, &doubled, mask);
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn out_of_bounds_clamps() {
        let g = small(2, 2, 10, 4);
        let grid = random_grid(&g, 7);
        assert_eq!(
            g.encode([5.0, 0.0, 0.0], &grid, None),
            g.encode([1.0, 0.0, 0.0], &grid, None)
        );
    }

    #[test]
    fn init_is_small_and_finite() {
        let g = small(3, 2, 8, 4);
        let t = g.init_table(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.len(), 3 * 256 * 2);
        assert!(t.iter().all(|v| v.is_finite() && v.abs() <= INIT_SCALE));
    }

    #[test]
    fn ray_box_slabs() {
        let b = Aabb::unit();
        let (t0, t1) = b.intersect([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((t0 + 1.0).abs() < 1e-12 && (t1 - 1.0).abs() < 1e-12);
        assert!(b.intersect([3.0, 3.0, 0.0], [1.0, 0.0, 0.0]).is_none());
    }

    proptest::proptest! {
        #[test]
        fn mask_weight_in_unit_interval(beta in 0.0f64..20.0, l in 1usize..20) {
            let w = level_mask(beta, l);
            proptest::prop_assert!((0.0..=1.0).contains(&w));
            if l as f64 <= beta { proptest::prop_assert_eq!(w, 1.0); }
            if l as f64 >= beta + 1.0 { proptest::prop_assert_eq!(w, 0.0); }
        }
    }
}
