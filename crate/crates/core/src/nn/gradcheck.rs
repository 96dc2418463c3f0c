//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

/// Below this magnitude both gradients count as zero and the absolute error
/// is compared against [`ABS_TOLERANCE`] instead.
pub const ZERO_GRADIENT: f64 = 1e-8;
pub const ABS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn relative_error(&self) -> Option<f64> {
        let scale = self.analytic.abs().max(self.numeric.abs());
        (scale >= ZERO_GRADIENT).then(|| (self.analytic - self.numeric).abs() / scale)
    }

    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
    pub max_abs_error_on_zero: f64,
}

impl FdReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error_on_zero < ABS_TOLERANCE
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| {
            a.relative_error()
                .unwrap_or(0.0)
                .total_cmp(&b.relative_error().unwrap_or(0.0))
        })
    }
}

/// Picks `n` probe indices: about three quarters among entries with a
/// nonzero analytic gradient, the rest uniformly over all parameters.
pub fn choose_probes(analytic: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut active: Vec<usize> = (0..analytic.len())
        .filter(|&i| analytic[i] != 0.0)
        .collect();
    active.shuffle(rng);
    let n_active = (3 * n / 4).min(active.len());
    let mut out: Vec<usize> = active[..n_active].to_vec();
    while out.len() < n && !analytic.is_empty() {
        out.push(rng.gen_range(0..analytic.len()));
    }
    out
}

/// Compares `analytic[i]` against `(f(p + eps e_i) - f(p - eps e_i)) / 2 eps`
/// for every probe index. `params` is restored afterwards.
pub fn finite_diff_check(
    params: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    eps: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> FdReport {
    let mut probes = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = params[i];
        params[i] = orig + eps;
        let up = loss(params);
        params[i] = orig - eps;
        let down = loss(params);
        params[i] = orig;
        probes.push(Probe {
            index: i,
            analytic: analytic[i],
            numeric: (up - down) / (2.0 * eps),
        });
    }
    let max_rel_error = probes
        .iter()
        .filter_map(Probe::relative_error)
        .fold(0.0, f64::max);
    let max_abs_error_on_zero = probes
        .iter()
        .filter(|p| p.relative_error().is_none())
        .map(Probe::abs_error)
        .fold(0.0, f64::max);
    FdReport {
        probes,
        max_rel_error,
        max_abs_error_on_zero,
    }
}
