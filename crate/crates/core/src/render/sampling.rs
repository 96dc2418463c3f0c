//! Sample placement along rays: stratified bins and inverse-CDF resampling.

use rand::Rng;

/// One uniform draw inside each of `n` equal bins of `[t_near, t_far]`.
pub fn stratified_samples(t_near: f64, t_far: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let step = (t_far - t_near) / n as f64;
    (0..n)
        .map(|i| {
            let u: f64 = rng.gen();
            (t_near + (i as f64 + u) * step).min(t_far)
        })
        .collect()
}

/// Bin centers; the deterministic counterpart of [`stratified_samples`].
pub fn midpoint_samples(t_near: f64, t_far: f64, n: usize) -> Vec<f64> {
    let step = (t_far - t_near) / n as f64;
    (0..n).map(|i| t_near + (i as f64 + 0.5) * step).collect()
}

/// Draws `n_fine` positions from the piecewise-constant density whose bin
/// `i` spans `[t_i, t_i + delta_i]` with mass `weights[i]`, and merges them
/// with the coarse positions. `rng = None` uses evenly spaced quantiles.
/// All-zero weights fall back to uniform mass per bin. The result is
/// strictly increasing; fine samples coinciding with an existing position
/// are dropped.
pub fn importance_resample<R: Rng>(
    t: &[f64],
    weights: &[f64],
    t_far: f64,
    n_fine: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    let n = t.len();
    let mut merged = t.to_vec();
    if n == 0 || n_fine == 0 {
        return merged;
    }
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let uniform = !(total > 0.0) || !total.is_finite();
    let mass = |i: usize| -> f64 {
        if uniform {
            1.0 / n as f64
        } else {
            weights[i].max(0.0) / total
        }
    };
    let mut quantiles: Vec<f64> = match rng {
        Some(rng) => (0..n_fine)
            .map(|j| (j as f64 + rng.gen::<f64>()) / n_fine as f64)
            .collect(),
        None => (0..n_fine)
            .map(|j| (j as f64 + 0.5) / n_fine as f64)
            .collect(),
    };
    quantiles.iter_mut().for_each(|q| *q = q.min(1.0));

    let mut bin = 0;
    let mut cdf_lo = 0.0;
    let mut cdf_hi = mass(0);
    for q in quantiles {
        while q > cdf_hi && bin + 1 < n {
            bin += 1;
            cdf_lo = cdf_hi;
            cdf_hi += mass(bin);
        }
        // skip empty bins sitting exactly at the quantile
        while mass(bin) == 0.0 && bin + 1 < n {
            bin += 1;
            cdf_lo = cdf_hi;
            cdf_hi += mass(bin);
        }
        let lo = t[bin];
        let hi = if bin + 1 < n { t[bin + 1] } else { t_far };
        let frac = if cdf_hi > cdf_lo {
            ((q - cdf_lo) / (cdf_hi - cdf_lo)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        merged.push(lo + frac * (hi - lo));
    }
    merged.sort_by(f64::total_cmp);
    merged.dedup();
    merged
}
