//! Response families: Poisson, two negative-binomial parameterizations and two
//! zero-inflated Poisson variants, together with their conjugate pieces.
//!
//! NB and ZIP leaves are handled through data augmentation: given latent
//! variables the node parameters have gamma full conditionals, which is what
//! makes the integrated likelihoods below closed-form.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    /// NB with dispersion scaling per observation: variance λv(1 + λv/κ).
    Nb1,
    /// NB with fixed over-dispersion: variance λv(1 + λ/κ).
    Nb2,
    /// Exposure enters the Poisson part.
    Zip1,
    /// Exposure enters the zero-mass odds.
    Zip2,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Poisson, Family::Nb1, Family::Nb2, Family::Zip1, Family::Zip2];

    pub fn is_nb(self) -> bool {
        matches!(self, Family::Nb1 | Family::Nb2)
    }

    pub fn is_zip(self) -> bool {
        matches!(self, Family::Zip1 | Family::Zip2)
    }

    pub fn needs_latents(self) -> bool {
        self != Family::Poisson
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Nb1 => "nb1",
            Family::Nb2 => "nb2",
            Family::Zip1 => "zip1",
            Family::Zip2 => "zip2",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown family `{s}`")))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gamma distribution in (shape, rate) form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite() {
            Ok(GammaParams { shape, rate })
        } else {
            Err(Error::Config(format!("gamma parameters must be positive, got ({shape}, {rate})")))
        }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Guard against a zero draw for tiny shapes; the chain needs strictly positive rates.
        let g = Gamma::new(self.shape, 1.0 / self.rate).expect("valid gamma");
        g.sample(rng).max(f64::MIN_POSITIVE)
    }

    /// α log β − lnΓ(α)
    fn log_norm(&self) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape)
    }
}

/// Hyper-parameters of the node models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Prior on the frequency λ.
    pub lambda: GammaParams,
    /// Prior on the zero-mass odds μ (ZIP only).
    pub mu: GammaParams,
    /// κ̂ used when the moment estimator is undefined or the node is not over-dispersed.
    pub kappa_max: f64,
}

pub const DEFAULT_KAPPA_MAX: f64 = 1e6;

impl Priors {
    /// λ prior with rate `beta` and mean equal to the portfolio frequency ΣN/Σv;
    /// μ prior Gamma(1, 1).
    pub fn ratio_rule(data: &Dataset, beta: f64) -> Result<Priors> {
        let freq = data.total_claims() / data.total_exposure();
        // An all-zero portfolio would give α = 0; keep the prior proper.
        let alpha = beta * freq.max(1e-3);
        Ok(Priors {
            lambda: GammaParams::new(alpha, beta)?,
            mu: GammaParams::new(1.0, 1.0)?,
            kappa_max: DEFAULT_KAPPA_MAX,
        })
    }
}

/// Node parameters. `mu` is populated for ZIP, `kappa` for NB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl NodeParams {
    pub fn poisson(lambda: f64) -> Self {
        NodeParams { lambda, mu: None, kappa: None }
    }

    pub fn nb(lambda: f64, kappa: f64) -> Self {
        NodeParams { lambda, mu: None, kappa: Some(kappa) }
    }

    pub fn zip(mu: f64, lambda: f64) -> Self {
        NodeParams { lambda, mu: Some(mu), kappa: None }
    }

    fn mu(&self) -> f64 {
        self.mu.expect("ZIP parameters need mu")
    }

    fn kappa(&self) -> f64 {
        self.kappa.expect("NB parameters need kappa")
    }
}

/// Full conditional of a leaf's parameters given its rows (and latents).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub lambda: GammaParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<GammaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl Posterior {
    pub fn mean(&self) -> NodeParams {
        NodeParams { lambda: self.lambda.mean(), mu: self.mu.map(|g| g.mean()), kappa: self.kappa }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeParams {
        let mu = self.mu.map(|g| g.sample(rng));
        NodeParams { lambda: self.lambda.sample(rng), mu, kappa: self.kappa }
    }
}

/// ln Γ(x + m) − ln Γ(x), exact summation for small m.
fn ln_rising(x: f64, m: u64) -> f64 {
    if m < 32 {
        (0..m).map(|k| (x + k as f64).ln()).sum()
    } else {
        ln_gamma(x + m as f64) - ln_gamma(x)
    }
}

fn ln_factorial(m: u64) -> f64 {
    ln_gamma(m as f64 + 1.0)
}

fn poisson_ln_pmf(m: u64, mean: f64) -> f64 {
    if m == 0 {
        -mean
    } else {
        m as f64 * mean.ln() - mean - ln_factorial(m)
    }
}

/// NB with size `size` and mean `mean`.
fn nb_ln_pmf(m: u64, size: f64, mean: f64) -> f64 {
    // size·ln(size/(size+mean)) = −size·ln(1 + mean/size)
    let head = ln_rising(size, m) - ln_factorial(m) - size * (mean / size).ln_1p();
    if m == 0 {
        head
    } else {
        head + m as f64 * (mean / (size + mean)).ln()
    }
}

/// ln P(N = m) under the family with parameters `p` and exposure `v`.
pub fn log_pmf(family: Family, p: &NodeParams, m: u64, v: f64) -> f64 {
    match family {
        Family::Poisson => poisson_ln_pmf(m, p.lambda * v),
        Family::Nb1 => nb_ln_pmf(m, p.kappa(), p.lambda * v),
        Family::Nb2 => nb_ln_pmf(m, p.kappa() * v, p.lambda * v),
        Family::Zip1 | Family::Zip2 => {
            let (odds, mean) = match family {
                Family::Zip1 => (p.mu(), p.lambda * v),
                _ => (p.mu() * v, p.lambda),
            };
            if m == 0 {
                // ln(1 + odds·e^{-mean}) − ln(1 + odds)
                (odds * (-mean).exp()).ln_1p() - odds.ln_1p()
            } else {
                odds.ln() - odds.ln_1p() + poisson_ln_pmf(m, mean)
            }
        }
    }
}

/// Per-observation augmentation variables, indexed by dataset row.
#[derive(Debug, Clone, PartialEq)]
pub enum Latents {
    None,
    Nb { xi: Vec<f64> },
    Zip { delta: Vec<bool>, phi: Vec<f64> },
}

impl Latents {
    /// A valid starting state: ξ = 1, δ = 1, φ = 1.
    pub fn initial(family: Family, n: usize) -> Latents {
        match family {
            Family::Poisson => Latents::None,
            Family::Nb1 | Family::Nb2 => Latents::Nb { xi: vec![1.0; n] },
            Family::Zip1 | Family::Zip2 => Latents::Zip { delta: vec![true; n], phi: vec![1.0; n] },
        }
    }
}

/// log ∫ Π f_P(N|λ) Gamma(λ|α,β) dλ over the rows.
pub fn poisson_log_marginal(data: &Dataset, rows: &[u32], prior: &GammaParams) -> f64 {
    let claims = data.claims();
    let lnv = data.ln_exposure();
    let lnf = data.ln_factorial();
    let expo = data.exposure();
    let mut s = 0.0;
    let mut v = 0.0;
    let mut per_row = 0.0;
    for &r in rows {
        let r = r as usize;
        let n = claims[r] as f64;
        s += n;
        v += expo[r];
        if claims[r] > 0 {
            per_row += n * lnv[r] - lnf[r];
        }
    }
    prior.log_norm() + per_row + ln_gamma(s + prior.shape) - (s + prior.shape) * (v + prior.rate).ln()
}

/// Integrated augmented likelihood log p(N, z | node) for NB and ZIP families,
/// with the node parameters integrated against their gamma priors.
pub fn augmented_log_marginal(
    family: Family,
    data: &Dataset,
    rows: &[u32],
    latents: &Latents,
    kappa: Option<f64>,
    priors: &Priors,
) -> f64 {
    let claims = data.claims();
    let lnv = data.ln_exposure();
    let lnf = data.ln_factorial();
    let expo = data.exposure();
    match (family, latents) {
        (Family::Nb1 | Family::Nb2, Latents::Nb { xi }) => {
            let kappa = kappa.expect("NB marginal needs kappa");
            let mut s = 0.0;
            let mut xv = 0.0;
            let mut acc = 0.0;
            let nb1_const = kappa * kappa.ln() - ln_gamma(kappa);
            for &r in rows {
                let r = r as usize;
                let n = claims[r] as f64;
                let x = xi[r];
                let size = if family == Family::Nb1 { kappa } else { kappa * expo[r] };
                let head = if family == Family::Nb1 {
                    nb1_const
                } else {
                    size * size.ln() - ln_gamma(size)
                };
                s += n;
                xv += x * expo[r];
                acc += head + n * lnv[r] - lnf[r] + (size + n - 1.0) * x.ln() - x * size;
            }
            let a = priors.lambda.shape + s;
            acc + priors.lambda.log_norm() + ln_gamma(a) - a * (xv + priors.lambda.rate).ln()
        }
        (Family::Zip1 | Family::Zip2, Latents::Zip { delta, phi }) => {
            let mut sd = 0.0;
            let mut sdn = 0.0;
            let mut mu_rate = 0.0;
            let mut lam_rate = 0.0;
            let mut acc = 0.0;
            for &r in rows {
                let r = r as usize;
                acc -= phi[r];
                if family == Family::Zip1 {
                    mu_rate += phi[r];
                } else {
                    mu_rate += phi[r] * expo[r];
                }
                if delta[r] {
                    let n = claims[r] as f64;
                    sd += 1.0;
                    sdn += n;
                    if family == Family::Zip1 {
                        lam_rate += expo[r];
                        acc += n * lnv[r] - lnf[r];
                    } else {
                        lam_rate += 1.0;
                        acc += lnv[r] - lnf[r];
                    }
                }
            }
            let a1 = priors.mu.shape + sd;
            let a2 = priors.lambda.shape + sdn;
            acc + priors.mu.log_norm()
                + priors.lambda.log_norm()
                + ln_gamma(a1)
                - a1 * (mu_rate + priors.mu.rate).ln()
                + ln_gamma(a2)
                - a2 * (lam_rate + priors.lambda.rate).ln()
        }
        _ => panic!("latents do not match family {family}"),
    }
}

/// The leaf's integrated likelihood: plain for Poisson, augmented otherwise.
pub fn leaf_log_marginal(
    family: Family,
    data: &Dataset,
    rows: &[u32],
    latents: &Latents,
    kappa: Option<f64>,
    priors: &Priors,
) -> f64 {
    if family == Family::Poisson {
        poisson_log_marginal(data, rows, &priors.lambda)
    } else {
        augmented_log_marginal(family, data, rows, latents, kappa, priors)
    }
}

/// Moment estimator of κ. Fails for fewer than two rows and for nodes that
/// are not over-dispersed; see [`kappa_or_clamp`].
pub fn estimate_kappa(family: Family, data: &Dataset, rows: &[u32]) -> Result<f64> {
    if !family.is_nb() {
        return Err(Error::Config(format!("{family} has no dispersion parameter")));
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::Data("κ needs at least two observations".into()));
    }
    let claims = data.claims();
    let expo = data.exposure();
    let (mut s, mut v, mut v2) = (0.0, 0.0, 0.0);
    for &r in rows {
        s += claims[r as usize] as f64;
        v += expo[r as usize];
        v2 += expo[r as usize] * expo[r as usize];
    }
    let lam = s / v;
    let var = rows
        .iter()
        .map(|&r| {
            let e = expo[r as usize];
            e * (claims[r as usize] as f64 / e - lam).powi(2)
        })
        .sum::<f64>()
        / (n - 1) as f64;
    if !(var > lam) {
        return Err(Error::Data("node is not over-dispersed".into()));
    }
    let nb2 = lam * lam / (var - lam);
    Ok(match family {
        Family::Nb2 => nb2,
        _ => nb2 * (v - v2 / v) / (n - 1) as f64,
    })
}

pub fn kappa_or_clamp(family: Family, data: &Dataset, rows: &[u32], kappa_max: f64) -> f64 {
    match estimate_kappa(family, data, rows) {
        Ok(k) if k.is_finite() && k > 0.0 => k.min(kappa_max),
        _ => kappa_max,
    }
}

/// Draws the latents of `rows` from their full conditionals given `params`.
pub fn sample_latents<R: Rng + ?Sized>(
    family: Family,
    params: &NodeParams,
    data: &Dataset,
    rows: &[u32],
    latents: &mut Latents,
    rng: &mut R,
) {
    let claims = data.claims();
    let expo = data.exposure();
    match (family, latents) {
        (Family::Nb1 | Family::Nb2, Latents::Nb { xi }) => {
            let kappa = params.kappa();
            for &r in rows {
                let r = r as usize;
                let size = if family == Family::Nb1 { kappa } else { kappa * expo[r] };
                let g = GammaParams { shape: size + claims[r] as f64, rate: size + params.lambda * expo[r] };
                xi[r] = g.sample(rng);
            }
        }
        (Family::Zip1 | Family::Zip2, Latents::Zip { delta, phi }) => {
            let mu = params.mu();
            let ln_mu = mu.ln();
            for &r in rows {
                let r = r as usize;
                let v = expo[r];
                let (log_odds, phi_rate) = match family {
                    Family::Zip1 => (ln_mu - params.lambda * v, 1.0 + mu),
                    _ => (ln_mu + v.ln() - params.lambda, 1.0 + mu * v),
                };
                delta[r] = if claims[r] > 0 {
                    true
                } else {
                    let p = 1.0 / (1.0 + (-log_odds).exp());
                    rng.random::<f64>() < p
                };
                phi[r] = Exp::new(phi_rate).expect("positive rate").sample(rng).max(f64::MIN_POSITIVE);
            }
        }
        (Family::Poisson, Latents::None) => {}
        (f, _) => panic!("latents do not match family {f}"),
    }
}

/// Leaf parameters computed from the rows alone, used to propose fresh
/// latents when a move reroutes rows. NB: the ξ-free posterior mean of λ and
/// `kappa`. ZIP: EM on (μ, λ) with the priors as pseudo-counts.
pub fn plug_in_params(family: Family, data: &Dataset, rows: &[u32], kappa: Option<f64>, priors: &Priors) -> NodeParams {
    let claims = data.claims();
    let expo = data.exposure();
    let (mut s, mut v) = (0.0, 0.0);
    for &r in rows {
        s += claims[r as usize] as f64;
        v += expo[r as usize];
    }
    let lp = priors.lambda;
    match family {
        Family::Poisson => NodeParams::poisson((lp.shape + s) / (lp.rate + v)),
        Family::Nb1 | Family::Nb2 => NodeParams::nb((lp.shape + s) / (lp.rate + v), kappa.expect("NB needs kappa")),
        Family::Zip1 | Family::Zip2 => {
            let zip1 = family == Family::Zip1;
            let mp = priors.mu;
            let mut mu = mp.mean();
            let mut lambda = if zip1 { (lp.shape + s) / (lp.rate + v) } else { (lp.shape + s) / (lp.rate + rows.len() as f64) };
            for _ in 0..ZIP_EM_MAX_SWEEPS {
                let (mut sw, mut swn, mut slam) = (0.0, 0.0, 0.0);
                for &r in rows {
                    let r = r as usize;
                    let e = expo[r];
                    let (odds, mean) = if zip1 { (mu, lambda * e) } else { (mu * e, lambda) };
                    let w = if claims[r] > 0 { 1.0 } else { 1.0 / (1.0 + (mean - odds.ln()).exp()) };
                    sw += w;
                    swn += w * claims[r] as f64;
                    slam += if zip1 { w * e } else { w };
                }
                // μ solves μ(β₁ + Σ E[φ | μ]) = α₁ + Σw, the fixed point of the μ update.
                let a = mp.shape + sw;
                let new_mu = if zip1 {
                    let b = mp.rate + rows.len() as f64 - a;
                    (-b + (b * b + 4.0 * mp.rate * a).sqrt()) / (2.0 * mp.rate)
                } else {
                    let mut m = mu;
                    for _ in 0..8 {
                        let (mut g, mut dg) = (m * mp.rate - a, mp.rate);
                        for &r in rows {
                            let e = expo[r as usize];
                            let d = 1.0 + m * e;
                            g += m * e / d;
                            dg += e / (d * d);
                        }
                        m = (m - g / dg).max(m / 10.0);
                    }
                    m
                };
                let new_lambda = (lp.shape + swn) / (lp.rate + slam);
                let done = ((new_mu - mu).abs() <= 1e-8 * mu) && ((new_lambda - lambda).abs() <= 1e-8 * lambda);
                mu = new_mu;
                lambda = new_lambda;
                if done {
                    break;
                }
            }
            NodeParams::zip(mu, lambda)
        }
    }
}

const ZIP_EM_MAX_SWEEPS: usize = 50;

/// log density of the latents of `rows` under the full conditional that
/// [`sample_latents`] draws from.
pub fn latent_log_density(family: Family, params: &NodeParams, data: &Dataset, rows: &[u32], latents: &Latents) -> f64 {
    let claims = data.claims();
    let expo = data.exposure();
    match (family, latents) {
        (Family::Nb1 | Family::Nb2, Latents::Nb { xi }) => {
            let kappa = params.kappa();
            let lg_kappa = ln_gamma(kappa);
            rows.iter()
                .map(|&r| {
                    let r = r as usize;
                    let n = claims[r];
                    let (shape, lg) = if family == Family::Nb1 {
                        (kappa + n as f64, lg_kappa + ln_rising(kappa, n))
                    } else {
                        let a = kappa * expo[r] + n as f64;
                        (a, ln_gamma(a))
                    };
                    let rate = shape - n as f64 + params.lambda * expo[r];
                    shape * rate.ln() - lg + (shape - 1.0) * xi[r].ln() - rate * xi[r]
                })
                .sum()
        }
        (Family::Zip1 | Family::Zip2, Latents::Zip { delta, phi }) => {
            let mu = params.mu();
            let ln_mu = mu.ln();
            rows.iter()
                .map(|&r| {
                    let r = r as usize;
                    let v = expo[r];
                    let (log_odds, rate) = match family {
                        Family::Zip1 => (ln_mu - params.lambda * v, 1.0 + mu),
                        _ => (ln_mu + v.ln() - params.lambda, 1.0 + mu * v),
                    };
                    let d = if claims[r] > 0 {
                        if delta[r] { 0.0 } else { f64::NEG_INFINITY }
                    } else if delta[r] {
                        -(-log_odds).exp().ln_1p()
                    } else {
                        -log_odds.exp().ln_1p()
                    };
                    d + rate.ln() - rate * phi[r]
                })
                .sum()
        }
        (Family::Poisson, Latents::None) => 0.0,
        (f, _) => panic!("latents do not match family {f}"),
    }
}

/// Full conditional of the leaf parameters.
pub fn posterior(
    family: Family,
    data: &Dataset,
    rows: &[u32],
    latents: &Latents,
    kappa: Option<f64>,
    priors: &Priors,
) -> Posterior {
    let claims = data.claims();
    let expo = data.exposure();
    let lp = priors.lambda;
    match (family, latents) {
        (Family::Poisson, _) => {
            let (mut s, mut v) = (0.0, 0.0);
            for &r in rows {
                s += claims[r as usize] as f64;
                v += expo[r as usize];
            }
            Posterior { lambda: GammaParams { shape: lp.shape + s, rate: lp.rate + v }, mu: None, kappa: None }
        }
        (Family::Nb1 | Family::Nb2, Latents::Nb { xi }) => {
            let (mut s, mut xv) = (0.0, 0.0);
            for &r in rows {
                s += claims[r as usize] as f64;
                xv += xi[r as usize] * expo[r as usize];
            }
            Posterior { lambda: GammaParams { shape: lp.shape + s, rate: lp.rate + xv }, mu: None, kappa }
        }
        (Family::Zip1 | Family::Zip2, Latents::Zip { delta, phi }) => {
            let (mut sd, mut sdn, mut mu_rate, mut lam_rate) = (0.0, 0.0, 0.0, 0.0);
            for &r in rows {
                let r = r as usize;
                let v = expo[r];
                mu_rate += if family == Family::Zip1 { phi[r] } else { phi[r] * v };
                if delta[r] {
                    sd += 1.0;
                    sdn += claims[r] as f64;
                    lam_rate += if family == Family::Zip1 { v } else { 1.0 };
                }
            }
            let mp = priors.mu;
            Posterior {
                lambda: GammaParams { shape: lp.shape + sdn, rate: lp.rate + lam_rate },
                mu: Some(GammaParams { shape: mp.shape + sd, rate: mp.rate + mu_rate }),
                kappa: None,
            }
        }
        (f, _) => panic!("latents do not match family {f}"),
    }
}

/// Σ log f(N | params) over the rows.
pub fn log_data_likelihood(family: Family, params: &NodeParams, data: &Dataset, rows: &[u32]) -> f64 {
    let claims = data.claims();
    let expo = data.exposure();
    rows.iter()
        .map(|&r| log_pmf(family, params, claims[r as usize], expo[r as usize]))
        .sum()
}

/// Deviance at the posterior mean, effective parameter count and leaf DIC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDic {
    pub deviance: f64,
    pub effective_params: f64,
    pub dic: f64,
}

/// 2(log a − ψ(a))·(a − a₀): the contribution of one gamma-distributed parameter.
fn gamma_effective(shape: f64, prior_shape: f64) -> f64 {
    let s = shape - prior_shape;
    if s <= 0.0 {
        0.0
    } else {
        2.0 * (shape.ln() - digamma(shape)) * s
    }
}

/// Leaf DIC evaluated at the mean of `post`, the full conditional built from the
/// leaf's rows (and latents, for NB/ZIP).
pub fn node_dic(family: Family, data: &Dataset, rows: &[u32], post: &Posterior, priors: &Priors) -> NodeDic {
    let mean = post.mean();
    let deviance = -2.0 * log_data_likelihood(family, &mean, data, rows);
    let lam = gamma_effective(post.lambda.shape, priors.lambda.shape);
    let effective_params = match family {
        Family::Poisson => lam,
        Family::Nb1 | Family::Nb2 => 1.0 + lam,
        Family::Zip1 | Family::Zip2 => {
            lam + gamma_effective(post.mu.expect("ZIP posterior needs mu").shape, priors.mu.shape)
        }
    };
    NodeDic { deviance, effective_params, dic: deviance + 2.0 * effective_params }
}

/// Expected claim frequency at unit exposure.
pub fn node_frequency(family: Family, p: &NodeParams) -> f64 {
    if family.is_zip() {
        let mu = p.mu();
        mu * p.lambda / (1.0 + mu)
    } else {
        p.lambda
    }
}

/// Variance of the claim frequency at unit exposure.
pub fn node_variance(family: Family, p: &NodeParams) -> f64 {
    match family {
        Family::Poisson => p.lambda,
        Family::Nb1 | Family::Nb2 => p.lambda * (1.0 + p.lambda / p.kappa()),
        Family::Zip1 | Family::Zip2 => {
            let mu = p.mu();
            mu * p.lambda * (1.0 + mu + p.lambda) / ((1.0 + mu) * (1.0 + mu))
        }
    }
}

/// Expected claim count for exposure `v`.
pub fn expected_count(family: Family, p: &NodeParams, v: f64) -> f64 {
    match family {
        Family::Zip2 => {
            let mv = p.mu() * v;
            mv * p.lambda / (1.0 + mv)
        }
        _ => node_frequency(family, p) * v,
    }
}
