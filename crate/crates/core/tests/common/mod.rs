#![allow(dead_code)]

pub mod oracles;

use bcart::data::Column;
use bcart::{CovariateSchema, Dataset, GammaParams, Variable};
use statrs::function::gamma::ln_gamma;

/// log of Σ exp(x).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log ∫₀^∞ exp(g(x)) dx for a smooth unimodal-ish log integrand `g`.
///
/// Substitutes x = eᵗ and applies the trapezoid rule on a window in t that
/// grows from the peak until both ends sit 60 nats below it. For integrands that
/// decay like exp(−c·e^{±t}) the rule converges geometrically in the step.
pub fn log_integrate(g: impl Fn(f64) -> f64) -> f64 {
    log_integrate_step(g, 0.005)
}

pub fn log_integrate_step(g: impl Fn(f64) -> f64, h: f64) -> f64 {
    let h_t = |t: f64| g(t.exp()) + t;
    let (mut peak, mut at) = (f64::NEG_INFINITY, 0.0);
    for k in -400..=400 {
        let t = k as f64 * 0.1;
        let v = h_t(t);
        if v > peak {
            (peak, at) = (v, t);
        }
    }
    let (mut lo, mut hi) = (at - 0.5, at + 0.5);
    while h_t(lo) > peak - 60.0 && lo > -700.0 {
        lo -= 0.5;
    }
    while h_t(hi) > peak - 60.0 && hi < 700.0 {
        hi += 0.5;
    }
    let n = ((hi - lo) / h).ceil() as usize;
    let vals: Vec<f64> = (0..=n).map(|k| h_t(lo + k as f64 * h)).collect();
    log_sum_exp(&vals) + h.ln()
}

/// log ∫∫ exp(g(x, y)) dx dy over (0, ∞)², nested [`log_integrate`].
pub fn log_integrate_2d(g: impl Fn(f64, f64) -> f64) -> f64 {
    log_integrate_step(|x| log_integrate_step(|y| g(x, y), 0.02), 0.02)
}

/// Relative difference of exp(a) and exp(b).
pub fn rel_err_log(a: f64, b: f64) -> f64 {
    (a - b).exp_m1().abs()
}

pub fn ln_fact(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

pub fn ln_gamma_pdf(x: f64, g: &GammaParams) -> f64 {
    g.shape * g.rate.ln() - ln_gamma(g.shape) + (g.shape - 1.0) * x.ln() - g.rate * x
}

pub fn ln_pois(n: u64, mean: f64) -> f64 {
    n as f64 * mean.ln() - mean - ln_fact(n)
}

/// NB with size `r` and mean `m`, written from the Gamma-ratio form.
pub fn ln_nb(n: u64, r: f64, m: f64) -> f64 {
    ln_gamma(n as f64 + r) - ln_gamma(r) - ln_fact(n) + r * (r / (r + m)).ln() + n as f64 * (m / (r + m)).ln()
}

/// ZIP with zero-mass odds `odds` (zero mass 1/(1+odds)) and Poisson mean `m`.
pub fn ln_zip(n: u64, odds: f64, m: f64) -> f64 {
    let w = odds / (1.0 + odds);
    let pois = ln_pois(n, m).exp();
    if n == 0 {
        (1.0 - w + w * pois).ln()
    } else {
        (w * pois).ln()
    }
}

/// One-variable dataset with the given claims and exposures. The covariate
/// is a numeric index, irrelevant to the node-level oracles.
pub fn node_data(claims: &[u64], exposure: &[f64]) -> Dataset {
    let schema = CovariateSchema::new("claims", "exposure", vec![Variable::numeric("x")]).unwrap();
    let x: Vec<f64> = (0..claims.len()).map(|i| i as f64).collect();
    Dataset::new(schema, vec![Column::Numeric(x)], claims.to_vec(), exposure.to_vec()).unwrap()
}

pub fn all_rows(data: &Dataset) -> Vec<u32> {
    (0..data.len() as u32).collect()
}

/// Moment estimator of the NB dispersion written out from its definition;
/// `None` when the node is not over-dispersed.
pub fn kappa_moment(claims: &[u64], exposure: &[f64], nb2: bool) -> Option<f64> {
    let n = claims.len() as f64;
    let s: f64 = claims.iter().map(|&c| c as f64).sum();
    let v: f64 = exposure.iter().sum();
    let lam = s / v;
    let var: f64 = claims
        .iter()
        .zip(exposure)
        .map(|(&c, &e)| e * (c as f64 / e - lam).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    if var <= lam {
        return None;
    }
    let k2 = lam * lam / (var - lam);
    if nb2 {
        Some(k2)
    } else {
        let v2: f64 = exposure.iter().map(|e| e * e).sum();
        Some(k2 * (v - v2 / v) / (n - 1.0))
    }
}
