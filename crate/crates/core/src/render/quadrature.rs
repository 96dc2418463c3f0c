//! Volume-rendering quadrature along one ray.
//!
//! With samples `t_1 < ... < t_N`, interval lengths `delta_i = t_{i+1} - t_i`
//! (the last one closes at `t_far`), per-sample opacity
//! `alpha_i = 1 - exp(-sigma_i * delta_i)` and transmittance
//! `T_i = prod_{j<i} (1 - alpha_j)`, the weights are `w_i = T_i * alpha_i`
//! and the residual transmittance is `prod_i (1 - alpha_i)`.

/// Interval length behind sample `i`.
#[inline]
pub fn delta(t: &[f64], i: usize, t_far: f64) -> f64 {
    if i + 1 < t.len() {
        t[i + 1] - t[i]
    } else {
        t_far - t[i]
    }
}

/// Fills `weights` and returns the residual transmittance.
pub fn weights_into(t: &[f64], sigma: &[f64], t_far: f64, weights: &mut [f64]) -> f64 {
    let mut optical = 0.0f64;
    for i in 0..t.len() {
        let s = sigma[i] * delta(t, i, t_far);
        let trans = (-optical).exp();
        weights[i] = trans * -(-s).exp_m1();
        optical += s;
    }
    (-optical).exp()
}

pub fn ray_weights(t: &[f64], sigma: &[f64], t_far: f64) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; t.len()];
    let r = weights_into(t, sigma, t_far, &mut w);
    (w, r)
}

/// Reverse pass of `O = sum_i w_i v_i + residual * g_residual` with respect
/// to `sigma`, where `v` holds each sample's upstream projection. Writes
/// `dO/dsigma_i` into `d_sigma` (accumulating).
pub fn weights_backward(
    t: &[f64],
    sigma: &[f64],
    t_far: f64,
    weights: &[f64],
    residual: f64,
    v: &[f64],
    g_residual: f64,
    d_sigma: &mut [f64],
) {
    let n = t.len();
    // suffix[i] = sum_{j > i} w_j v_j
    let mut suffix = 0.0;
    let mut optical_incl: Vec<f64> = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += sigma[i] * delta(t, i, t_far);
        optical_incl.push(acc);
    }
    for k in (0..n).rev() {
        let trans_next = (-optical_incl[k]).exp();
        let ds = trans_next * v[k] - suffix - g_residual * residual;
        d_sigma[k] += ds * delta(t, k, t_far);
        suffix += weights[k] * v[k];
    }
}

/// Composited attributes of a single ray, evaluated directly (no tape).
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub attrs: Vec<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
    pub residual: f64,
}

/// `attrs` is row-major `N x k`; `background[j]` is added with the residual
/// transmittance as its weight.
pub fn composite_ray(
    t: &[f64],
    sigma: &[f64],
    attrs: &[f64],
    k: usize,
    background: &[f64],
    t_far: f64,
) -> Composite {
    let (weights, residual) = ray_weights(t, sigma, t_far);
    let mut out = vec![0.0; k];
    let mut depth = 0.0;
    for (i, w) in weights.iter().enumerate() {
        for j in 0..k {
            out[j] += w * attrs[i * k + j];
        }
        depth += w * t[i];
    }
    for j in 0..k {
        out[j] += residual * background.get(j).copied().unwrap_or(0.0);
    }
    Composite {
        attrs: out,
        depth,
        opacity: weights.iter().sum(),
        weights,
        residual,
    }
}
