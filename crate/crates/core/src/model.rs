//! Feature densities, the temporal longitude model, and the generative
//! location estimator.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::features::{Namespace, UserFeatures, Vocabulary, HOURS};
use crate::geo::{haversine_miles, GeoPoint};
use crate::label::UserLabel;

pub const VARIANCE_FLOOR: f64 = 1e-4;
pub const DEFAULT_COMPONENTS: usize = 5;
pub const DP_CONCENTRATION: f64 = 0.1;
pub const ELBO_TOLERANCE: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 200;
pub const MIN_FEATURE_SUPPORT: usize = 3;
pub const CANDIDATE_GRID_DEGREES: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureKind {
    Dpmm,
    Gmm,
}

impl std::str::FromStr for MixtureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpmm" => Ok(MixtureKind::Dpmm),
            "gmm" => Ok(MixtureKind::Gmm),
            _ => Err(Error::InvalidArgument(format!("unknown density kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    Diagonal,
    Spherical,
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diagonal" | "diag" => Ok(CovarianceKind::Diagonal),
            "spherical" => Ok(CovarianceKind::Spherical),
            _ => Err(Error::InvalidArgument(format!("unknown covariance kind {s:?}"))),
        }
    }
}

/// Mixture of axis-aligned Gaussians over (lat, lon) in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub variances: Vec<[f64; 2]>,
    pub kind: MixtureKind,
    pub covariance_kind: CovarianceKind,
}

impl MixtureDensity {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn single(x: [f64; 2], kind: MixtureKind, covariance_kind: CovarianceKind) -> Self {
        MixtureDensity {
            weights: vec![1.0],
            means: vec![x],
            variances: vec![[VARIANCE_FLOOR; 2]],
            kind,
            covariance_kind,
        }
    }
}

fn component_log_pdf(x: [f64; 2], mean: [f64; 2], var: [f64; 2]) -> f64 {
    let mut acc = -(2.0 * PI).ln();
    for d in 0..2 {
        let diff = x[d] - mean[d];
        acc -= 0.5 * var[d].ln() + 0.5 * diff * diff / var[d];
    }
    acc
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-likelihood of `c` under `m`.
pub fn density_at(m: &MixtureDensity, c: GeoPoint) -> f64 {
    let x = [c.lat, c.lon];
    let terms: Vec<f64> = m
        .weights
        .iter()
        .zip(&m.means)
        .zip(&m.variances)
        .filter(|((w, _), _)| **w > 0.0)
        .map(|((w, mu), v)| w.ln() + component_log_pdf(x, *mu, *v))
        .collect();
    log_sum_exp(&terms)
}

/// Distinct points with multiplicities, in a canonical order.
struct WeightedPoints {
    xs: Vec<[f64; 2]>,
    ws: Vec<f64>,
}

impl WeightedPoints {
    fn new(points: &[GeoPoint]) -> Self {
        let mut counts: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for p in points {
            // +0.0 folds negative zero so equal coordinates share a key
            *counts.entry(((p.lat + 0.0).to_bits(), (p.lon + 0.0).to_bits())).or_default() += 1.0;
        }
        let (xs, ws) = counts
            .into_iter()
            .map(|((a, b), w)| ([f64::from_bits(a), f64::from_bits(b)], w))
            .unzip();
        WeightedPoints { xs, ws }
    }

    fn len(&self) -> usize {
        self.xs.len()
    }

    fn total(&self) -> f64 {
        self.ws.iter().sum()
    }

    fn mean(&self) -> [f64; 2] {
        let t = self.total();
        let mut m = [0.0; 2];
        for (x, w) in self.xs.iter().zip(&self.ws) {
            for d in 0..2 {
                m[d] += w * x[d] / t;
            }
        }
        m
    }

    fn variance(&self) -> [f64; 2] {
        let t = self.total();
        let m = self.mean();
        let mut v = [0.0; 2];
        for (x, w) in self.xs.iter().zip(&self.ws) {
            for d in 0..2 {
                v[d] += w * (x[d] - m[d]).powi(2) / t;
            }
        }
        v
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Weighted k-means++ seeding followed by Lloyd refinement. Returns the hard
/// assignment of each distinct point and the centers, largest cluster first.
fn kmeans_init(pts: &WeightedPoints, k: usize, seed: u64) -> (Vec<usize>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![pts.xs[sample_index(&mut rng, &pts.ws)]];
    while centers.len() < k {
        let d2: Vec<f64> = pts
            .xs
            .iter()
            .zip(&pts.ws)
            .map(|(x, w)| w * centers.iter().map(|c| sq_dist(*x, *c)).fold(f64::INFINITY, f64::min))
            .collect();
        if d2.iter().sum::<f64>() <= 0.0 {
            break;
        }
        centers.push(pts.xs[sample_index(&mut rng, &d2)]);
    }
    let nearest = |x: [f64; 2], centers: &[[f64; 2]]| -> usize {
        let mut best = 0;
        for (j, c) in centers.iter().enumerate() {
            if sq_dist(x, *c) < sq_dist(x, centers[best]) {
                best = j;
            }
        }
        best
    };
    let mut assign: Vec<usize> = pts.xs.iter().map(|x| nearest(*x, &centers)).collect();
    for _ in 0..20 {
        let mut sums = vec![[0.0; 2]; centers.len()];
        let mut mass = vec![0.0; centers.len()];
        for ((x, w), &a) in pts.xs.iter().zip(&pts.ws).zip(&assign) {
            mass[a] += w;
            sums[a][0] += w * x[0];
            sums[a][1] += w * x[1];
        }
        for j in 0..centers.len() {
            if mass[j] > 0.0 {
                centers[j] = [sums[j][0] / mass[j], sums[j][1] / mass[j]];
            }
        }
        let next: Vec<usize> = pts.xs.iter().map(|x| nearest(*x, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let mut mass = vec![0.0; centers.len()];
    for (w, &a) in pts.ws.iter().zip(&assign) {
        mass[a] += w;
    }
    let mut order: Vec<usize> = (0..centers.len()).filter(|&j| mass[j] > 0.0).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut rank = vec![0; centers.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    let centers = order.iter().map(|&j| centers[j]).collect();
    (assign.into_iter().map(|a| rank[a]).collect(), centers)
}

/// A fitted mixture with its objective trace (ELBO for DPMM, log-likelihood for GMM).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub density: MixtureDensity,
    pub objective: Vec<f64>,
    pub converged: bool,
}

// Normal-Gamma posterior for one component; for spherical covariance both
// entries of `b` hold the shared rate.
#[derive(Debug, Clone, Copy)]
struct NormalGamma {
    m: [f64; 2],
    beta: f64,
    a: f64,
    b: [f64; 2],
}

struct DpPrior {
    m0: [f64; 2],
    beta0: f64,
    a0: f64,
    b0: [f64; 2],
    alpha: f64,
    spherical: bool,
}

fn gamma_kl(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

struct VbState {
    resp: Vec<Vec<f64>>,
    post: Vec<NormalGamma>,
    sticks: Vec<(f64, f64)>,
}

impl DpPrior {
    fn update(&self, pts: &WeightedPoints, resp: &[Vec<f64>]) -> (Vec<NormalGamma>, Vec<(f64, f64)>) {
        let k = resp[0].len();
        let mut nk = vec![0.0; k];
        let mut xbar = vec![[0.0; 2]; k];
        for (n, r) in resp.iter().enumerate() {
            for j in 0..k {
                let w = pts.ws[n] * r[j];
                nk[j] += w;
                xbar[j][0] += w * pts.xs[n][0];
                xbar[j][1] += w * pts.xs[n][1];
            }
        }
        for j in 0..k {
            if nk[j] > 0.0 {
                xbar[j] = [xbar[j][0] / nk[j], xbar[j][1] / nk[j]];
            }
        }
        let mut scatter = vec![[0.0; 2]; k];
        for (n, r) in resp.iter().enumerate() {
            for j in 0..k {
                let w = pts.ws[n] * r[j];
                for d in 0..2 {
                    scatter[j][d] += w * (pts.xs[n][d] - xbar[j][d]).powi(2);
                }
            }
        }
        let post = (0..k)
            .map(|j| {
                let beta = self.beta0 + nk[j];
                let mut m = [0.0; 2];
                let mut b = [0.0; 2];
                for d in 0..2 {
                    m[d] = (self.beta0 * self.m0[d] + nk[j] * xbar[j][d]) / beta;
                    b[d] = 0.5 * scatter[j][d]
                        + 0.5 * self.beta0 * nk[j] * (xbar[j][d] - self.m0[d]).powi(2) / beta;
                }
                if self.spherical {
                    let shared = self.b0[0] + b[0] + b[1];
                    NormalGamma {
                        m,
                        beta,
                        a: self.a0 + nk[j],
                        b: [shared; 2],
                    }
                } else {
                    NormalGamma {
                        m,
                        beta,
                        a: self.a0 + 0.5 * nk[j],
                        b: [self.b0[0] + b[0], self.b0[1] + b[1]],
                    }
                }
            })
            .collect();
        let mut tail = 0.0;
        let mut sticks = vec![(1.0, 1.0); k];
        for j in (0..k).rev() {
            sticks[j] = (1.0 + nk[j], self.alpha + tail);
            tail += nk[j];
        }
        (post, sticks)
    }

    fn log_prior_weights(&self, sticks: &[(f64, f64)]) -> Vec<f64> {
        let k = sticks.len();
        let mut out = vec![0.0; k];
        let mut acc = 0.0;
        for j in 0..k {
            let (g1, g2) = sticks[j];
            let s = digamma(g1 + g2);
            // the last stick is fixed at one
            let elv = if j + 1 == k { 0.0 } else { digamma(g1) - s };
            out[j] = elv + acc;
            acc += digamma(g2) - s;
        }
        out
    }

    fn log_rho(&self, x: [f64; 2], post: &[NormalGamma], log_w: &[f64]) -> Vec<f64> {
        post.iter()
            .zip(log_w)
            .map(|(q, lw)| {
                let mut v = *lw;
                for d in 0..2 {
                    let e_ln_lambda = digamma(q.a) - q.b[d].ln();
                    let e_lambda = q.a / q.b[d];
                    v += 0.5 * e_ln_lambda
                        - 0.5 * (2.0 * PI).ln()
                        - 0.5 * (1.0 / q.beta + e_lambda * (x[d] - q.m[d]).powi(2));
                }
                v
            })
            .collect()
    }

    fn expectation(&self, pts: &WeightedPoints, post: &[NormalGamma], sticks: &[(f64, f64)]) -> Vec<Vec<f64>> {
        let log_w = self.log_prior_weights(sticks);
        pts.xs
            .iter()
            .map(|x| {
                let lr = self.log_rho(*x, post, &log_w);
                let z = log_sum_exp(&lr);
                lr.iter().map(|l| (l - z).exp()).collect()
            })
            .collect()
    }

    fn elbo(&self, pts: &WeightedPoints, s: &VbState) -> f64 {
        let log_w = self.log_prior_weights(&s.sticks);
        let mut total = 0.0;
        for (n, r) in s.resp.iter().enumerate() {
            let lr = self.log_rho(pts.xs[n], &s.post, &log_w);
            for j in 0..r.len() {
                if r[j] > 0.0 {
                    total += pts.ws[n] * r[j] * (lr[j] - r[j].ln());
                }
            }
        }
        let k = s.sticks.len();
        for &(g1, g2) in &s.sticks[..k - 1] {
            let sum = digamma(g1 + g2);
            let (elv, el1v) = (digamma(g1) - sum, digamma(g2) - sum);
            let log_p = self.alpha.ln() + (self.alpha - 1.0) * el1v;
            let log_q = ln_gamma(g1 + g2) - ln_gamma(g1) - ln_gamma(g2) + (g1 - 1.0) * elv + (g2 - 1.0) * el1v;
            total += log_p - log_q;
        }
        for q in &s.post {
            let dims: &[usize] = if self.spherical { &[0] } else { &[0, 1] };
            for &d in dims {
                total -= gamma_kl(q.a, q.b[d], self.a0, self.b0[d]);
            }
            for d in 0..2 {
                let r = self.beta0 / q.beta;
                total -= 0.5 * (r - 1.0 - r.ln() + self.beta0 * (q.a / q.b[d]) * (q.m[d] - self.m0[d]).powi(2));
            }
        }
        total
    }
}

fn finish_dpmm(s: &VbState, covariance_kind: CovarianceKind) -> MixtureDensity {
    let k = s.sticks.len();
    let mut weights = Vec::with_capacity(k);
    let mut rest = 1.0;
    for (j, &(g1, g2)) in s.sticks.iter().enumerate() {
        let ev = if j + 1 == k { 1.0 } else { g1 / (g1 + g2) };
        weights.push(rest * ev);
        rest *= 1.0 - ev;
    }
    let total: f64 = weights.iter().sum();
    MixtureDensity {
        weights: weights.iter().map(|w| w / total).collect(),
        means: s.post.iter().map(|q| q.m).collect(),
        variances: s
            .post
            .iter()
            .map(|q| [(q.b[0] / q.a).max(VARIANCE_FLOOR), (q.b[1] / q.a).max(VARIANCE_FLOOR)])
            .collect(),
        kind: MixtureKind::Dpmm,
        covariance_kind,
    }
}

/// Truncated stick-breaking variational Bayes for a Dirichlet process mixture.
pub fn fit_dpmm(points: &[GeoPoint], max_components: usize, covariance_kind: CovarianceKind, seed: u64) -> Result<MixtureFit> {
    fit_dpmm_with(points, max_components, covariance_kind, DP_CONCENTRATION, seed)
}

pub fn fit_dpmm_with(
    points: &[GeoPoint],
    max_components: usize,
    covariance_kind: CovarianceKind,
    alpha: f64,
    seed: u64,
) -> Result<MixtureFit> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if max_components == 0 || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("need at least one component and a positive concentration".into()));
    }
    let pts = WeightedPoints::new(points);
    if pts.len() == 1 {
        return Ok(MixtureFit {
            density: MixtureDensity::single(pts.xs[0], MixtureKind::Dpmm, covariance_kind),
            objective: vec![],
            converged: true,
        });
    }
    let var = pts.variance();
    let spherical = covariance_kind == CovarianceKind::Spherical;
    let b0 = if spherical {
        [((var[0] + var[1]) / 2.0).max(VARIANCE_FLOOR); 2]
    } else {
        [var[0].max(VARIANCE_FLOOR), var[1].max(VARIANCE_FLOOR)]
    };
    let prior = DpPrior {
        m0: pts.mean(),
        beta0: 1.0,
        a0: 1.0,
        b0,
        alpha,
        spherical,
    };

    let k = max_components;
    let (assign, _) = kmeans_init(&pts, k, seed);
    let mut resp: Vec<Vec<f64>> = assign
        .iter()
        .map(|&a| {
            let mut r = vec![0.0; k];
            r[a] = 1.0;
            r
        })
        .collect();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut state;
    loop {
        let (post, sticks) = prior.update(&pts, &resp);
        state = VbState { resp, post, sticks };
        let elbo = prior.elbo(&pts, &state);
        let done = objective
            .last()
            .is_some_and(|prev: &f64| (elbo - prev).abs() < ELBO_TOLERANCE);
        objective.push(elbo);
        if done {
            converged = true;
            break;
        }
        if objective.len() >= MAX_ITERATIONS {
            break;
        }
        resp = prior.expectation(&pts, &state.post, &state.sticks);
    }
    Ok(MixtureFit {
        density: finish_dpmm(&state, covariance_kind),
        objective,
        converged,
    })
}

/// Maximum-likelihood Gaussian mixture by EM.
pub fn fit_gmm(points: &[GeoPoint], n_components: usize, covariance_kind: CovarianceKind, seed: u64) -> Result<MixtureFit> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if n_components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let pts = WeightedPoints::new(points);
    if pts.len() == 1 {
        return Ok(MixtureFit {
            density: MixtureDensity::single(pts.xs[0], MixtureKind::Gmm, covariance_kind),
            objective: vec![],
            converged: true,
        });
    }
    let k = n_components.min(pts.len());
    let (assign, _) = kmeans_init(&pts, k, seed);
    let k = assign.iter().max().map_or(1, |m| m + 1);
    let mut resp: Vec<Vec<f64>> = assign
        .iter()
        .map(|&a| {
            let mut r = vec![0.0; k];
            r[a] = 1.0;
            r
        })
        .collect();
    let total = pts.total();
    let mut m = MixtureDensity {
        weights: vec![0.0; k],
        means: vec![[0.0; 2]; k],
        variances: vec![[VARIANCE_FLOOR; 2]; k],
        kind: MixtureKind::Gmm,
        covariance_kind,
    };
    let mut objective = Vec::new();
    let mut converged = false;
    loop {
        // M-step
        for j in 0..k {
            let nk: f64 = resp.iter().zip(&pts.ws).map(|(r, w)| w * r[j]).sum();
            m.weights[j] = nk / total;
            if nk <= 0.0 {
                continue;
            }
            let mut mu = [0.0; 2];
            for (n, r) in resp.iter().enumerate() {
                for d in 0..2 {
                    mu[d] += pts.ws[n] * r[j] * pts.xs[n][d] / nk;
                }
            }
            let mut v = [0.0; 2];
            for (n, r) in resp.iter().enumerate() {
                for d in 0..2 {
                    v[d] += pts.ws[n] * r[j] * (pts.xs[n][d] - mu[d]).powi(2) / nk;
                }
            }
            if covariance_kind == CovarianceKind::Spherical {
                v = [(v[0] + v[1]) / 2.0; 2];
            }
            m.means[j] = mu;
            m.variances[j] = [v[0].max(VARIANCE_FLOOR), v[1].max(VARIANCE_FLOOR)];
        }
        // E-step and log-likelihood
        let mut ll = 0.0;
        resp = pts
            .xs
            .iter()
            .zip(&pts.ws)
            .map(|(x, w)| {
                let lp: Vec<f64> = (0..k)
                    .map(|j| {
                        if m.weights[j] > 0.0 {
                            m.weights[j].ln() + component_log_pdf(*x, m.means[j], m.variances[j])
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let z = log_sum_exp(&lp);
                ll += w * z;
                lp.iter().map(|l| (l - z).exp()).collect()
            })
            .collect();
        let done = objective.last().is_some_and(|prev: &f64| (ll - prev).abs() < ELBO_TOLERANCE);
        objective.push(ll);
        if done {
            converged = true;
            break;
        }
        if objective.len() >= MAX_ITERATIONS {
            break;
        }
    }
    let s: f64 = m.weights.iter().sum();
    m.weights.iter_mut().for_each(|w| *w /= s);
    Ok(MixtureFit {
        density: m,
        objective,
        converged,
    })
}

pub fn fit_mixture(points: &[GeoPoint], opts: &DensityOptions, seed: u64) -> Result<MixtureFit> {
    match opts.kind {
        MixtureKind::Dpmm => fit_dpmm(points, opts.max_components, opts.covariance_kind, seed),
        MixtureKind::Gmm => fit_gmm(points, opts.max_components, opts.covariance_kind, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub kind: MixtureKind,
    pub covariance_kind: CovarianceKind,
    pub max_components: usize,
    pub min_support: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            kind: MixtureKind::Dpmm,
            covariance_kind: CovarianceKind::Diagonal,
            max_components: DEFAULT_COMPONENTS,
            min_support: MIN_FEATURE_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modalities {
    pub words: bool,
    pub subreddits: bool,
    pub temporal: bool,
}

impl Default for Modalities {
    fn default() -> Self {
        Modalities {
            words: true,
            subreddits: true,
            temporal: true,
        }
    }
}

impl Modalities {
    pub fn content(&self) -> bool {
        self.words || self.subreddits
    }

    pub fn uses(&self, ns: Namespace) -> bool {
        match ns {
            Namespace::Word => self.words,
            Namespace::Subreddit => self.subreddits,
        }
    }
}

impl std::str::FromStr for Modalities {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modalities {
            words: false,
            subreddits: false,
            temporal: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "words" | "w" => m.words = true,
                "subreddits" | "s" => m.subreddits = true,
                "temporal" | "t" => m.temporal = true,
                other => return Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
            }
        }
        if !(m.content() || m.temporal) {
            return Err(Error::InvalidArgument("at least one modality is required".into()));
        }
        Ok(m)
    }
}

impl std::fmt::Display for Modalities {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.words {
            parts.push("words");
        }
        if self.subreddits {
            parts.push("subreddits");
        }
        if self.temporal {
            parts.push("temporal");
        }
        f.write_str(&parts.join(","))
    }
}

pub fn feature_key(ns: Namespace, feature: &str) -> String {
    format!("{}:{}", ns.prefix(), feature)
}

/// Per-feature seed derived from the top-level seed and the feature name.
pub fn feature_seed(seed: u64, key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDensity {
    /// `None` marks a fallback feature with too little support; it is left out of scoring.
    pub density: Option<MixtureDensity>,
    pub prior: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureDensities {
    /// Keyed by namespaced feature (`w:word`, `s:subreddit`).
    pub features: BTreeMap<String, FeatureDensity>,
    pub vocab: Vocabulary,
}

impl FeatureDensities {
    pub fn get(&self, ns: Namespace, feature: &str) -> Option<&FeatureDensity> {
        self.features.get(&feature_key(ns, feature))
    }
}

/// Fits one density per vocabulary feature over the coordinates of the
/// training users that use it, one point per user.
pub fn fit_feature_densities(
    train: &[(&UserFeatures, &UserLabel)],
    vocab: &Vocabulary,
    opts: &DensityOptions,
    seed: u64,
) -> Result<FeatureDensities> {
    if vocab.is_empty() {
        return Err(Error::EmptyInput("vocabulary"));
    }
    let mut points: BTreeMap<String, (Vec<GeoPoint>, u64)> = BTreeMap::new();
    for ns in [Namespace::Word, Namespace::Subreddit] {
        for (f, _) in vocab.get(ns) {
            points.insert(feature_key(ns, f), (Vec::new(), 0));
        }
    }
    for (uf, label) in train {
        for ns in [Namespace::Word, Namespace::Subreddit] {
            for (f, &c) in ns.counts(uf) {
                if c == 0 {
                    continue;
                }
                if let Some((pts, count)) = points.get_mut(&feature_key(ns, f)) {
                    pts.push(label.coords);
                    *count += c;
                }
            }
        }
    }
    let total: u64 = points.values().map(|(_, c)| c).sum();
    let n_vocab = points.len() as f64;
    let fitted: Vec<(String, FeatureDensity)> = points
        .into_par_iter()
        .map(|(key, (pts, count))| {
            let prior = if total > 0 { count as f64 / total as f64 } else { 1.0 / n_vocab };
            let density = if pts.len() >= opts.min_support.max(1) {
                Some(fit_mixture(&pts, opts, feature_seed(seed, &key))?.density)
            } else {
                None
            };
            Ok((
                key,
                FeatureDensity {
                    density,
                    prior,
                    support: pts.len(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(FeatureDensities {
        features: fitted.into_iter().collect(),
        vocab: vocab.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: GeoPoint,
    pub bin: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.candidates.iter().map(|c| c.point).collect()
    }

    pub fn assign_bins(&mut self, tm: &TemporalModel) {
        for c in &mut self.candidates {
            c.bin = tm.bin_of(c.point.lon);
        }
    }

    /// Index of the best-scoring candidate; ties go to the higher weight, then the lower index.
    pub fn argmax(&self, scores: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..scores.len() {
            let ord = scores[i]
                .total_cmp(&scores[best])
                .then(self.candidates[i].weight.total_cmp(&self.candidates[best].weight));
            if ord == Ordering::Greater {
                best = i;
            }
        }
        best
    }
}

pub fn grid_key(p: GeoPoint) -> (i64, i64) {
    (
        (p.lat / CANDIDATE_GRID_DEGREES).round() as i64,
        (p.lon / CANDIDATE_GRID_DEGREES).round() as i64,
    )
}

/// Training coordinates deduplicated on the candidate grid, weighted by user count.
/// Each cell is represented by its most common member coordinate.
pub fn build_candidates(labels: &[GeoPoint]) -> Result<CandidateSet> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("training labels"));
    }
    let mut cells: BTreeMap<(i64, i64), BTreeMap<(u64, u64), usize>> = BTreeMap::new();
    for p in labels {
        *cells
            .entry(grid_key(*p))
            .or_default()
            .entry(((p.lat + 0.0).to_bits(), (p.lon + 0.0).to_bits()))
            .or_default() += 1;
    }
    let candidates = cells
        .into_values()
        .map(|members| {
            let weight: usize = members.values().sum();
            let ((la, lo), _) = members
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .expect("non-empty cell");
            Candidate {
                point: GeoPoint {
                    lat: f64::from_bits(*la),
                    lon: f64::from_bits(*lo),
                },
                bin: 0,
                weight: weight as f64,
            }
        })
        .collect();
    Ok(CandidateSet { candidates })
}

// ---------------------------------------------------------------------------
// Temporal model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalOptions {
    pub n_bins_grid: Vec<usize>,
    pub l2_grid: Vec<f64>,
    pub cv_folds: usize,
    pub max_iterations: usize,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        TemporalOptions {
            n_bins_grid: vec![2, 4, 6, 8],
            l2_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            cv_folds: 5,
            max_iterations: 300,
        }
    }
}

/// Multinomial logistic regression from standardized posting-hour profiles to
/// longitude bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalModel {
    pub bin_edges: Vec<f64>,
    /// One row per bin: intercept followed by 24 hour weights.
    pub coefficients: Vec<Vec<f64>>,
    pub l2_strength: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl TemporalModel {
    pub fn n_bins(&self) -> usize {
        self.bin_edges.len() + 1
    }

    pub fn bin_of(&self, lon: f64) -> usize {
        self.bin_edges.partition_point(|e| *e <= lon)
    }

    fn standardize(&self, tau: &[f64; HOURS]) -> [f64; HOURS] {
        let mut x = [0.0; HOURS];
        for h in 0..HOURS {
            x[h] = (tau[h] - self.feature_mean[h]) / self.feature_scale[h];
        }
        x
    }

    /// Bin distribution for a normalized posting profile.
    pub fn predict_bins(&self, tau: &[f64; HOURS]) -> Vec<f64> {
        let x = self.standardize(tau);
        softmax(&logits(&self.coefficients, &x))
    }
}

fn logits(coef: &[Vec<f64>], x: &[f64; HOURS]) -> Vec<f64> {
    coef.iter()
        .map(|row| row[0] + row[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Percentile longitude edges, nudged into gaps between distinct values so no bin is empty.
pub fn longitude_bin_edges(lons: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = lons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let gaps: Vec<usize> = (1..n).filter(|&i| sorted[i - 1] < sorted[i]).collect();
    if gaps.is_empty() || n_bins < 2 {
        return Vec::new();
    }
    let mut edges: Vec<f64> = (1..n_bins)
        .map(|b| {
            let target = (b * n) as f64 / n_bins as f64;
            let i = *gaps
                .iter()
                .min_by(|&&a, &&c| (a as f64 - target).abs().total_cmp(&(c as f64 - target).abs()).then(a.cmp(&c)))
                .expect("non-empty");
            (sorted[i - 1] + sorted[i]) / 2.0
        })
        .collect();
    edges.dedup();
    edges
}

struct LogRegData {
    x: Vec<[f64; HOURS]>,
    y: Vec<usize>,
    n_classes: usize,
}

fn logreg_loss_grad(coef: &[Vec<f64>], d: &LogRegData, l2: f64) -> (f64, Vec<Vec<f64>>) {
    let n = d.x.len() as f64;
    let mut grad = vec![vec![0.0; HOURS + 1]; d.n_classes];
    let mut loss = 0.0;
    for (x, &y) in d.x.iter().zip(&d.y) {
        let z = logits(coef, x);
        let lse = log_sum_exp(&z);
        loss -= z[y] - lse;
        for c in 0..d.n_classes {
            let g = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
            grad[c][0] += g / n;
            for h in 0..HOURS {
                grad[c][h + 1] += g * x[h] / n;
            }
        }
    }
    loss /= n;
    for c in 0..d.n_classes {
        for h in 1..=HOURS {
            loss += 0.5 * l2 * coef[c][h] * coef[c][h];
            grad[c][h] += l2 * coef[c][h];
        }
    }
    (loss, grad)
}

fn fit_logreg(d: &LogRegData, l2: f64, max_iterations: usize) -> Vec<Vec<f64>> {
    let mut coef = vec![vec![0.0; HOURS + 1]; d.n_classes];
    if d.n_classes < 2 {
        return coef;
    }
    let (mut loss, mut grad) = logreg_loss_grad(&coef, d, l2);
    let mut step = 1.0;
    for _ in 0..max_iterations {
        let gnorm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
        if gnorm2.sqrt() < 1e-6 {
            break;
        }
        // backtracking line search on the Armijo condition
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> = coef
                .iter()
                .zip(&grad)
                .map(|(r, g)| r.iter().zip(g).map(|(w, gi)| w - step * gi).collect())
                .collect();
            let (tl, tg) = logreg_loss_grad(&trial, d, l2);
            if tl <= loss - 0.5 * step * gnorm2 {
                let improvement = loss - tl;
                coef = trial;
                loss = tl;
                grad = tg;
                accepted = true;
                step *= 2.0;
                if improvement < 1e-8 * loss.abs().max(1.0) {
                    return coef;
                }
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    coef
}

/// One user's posting profile and longitude, as used by the temporal model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalSample {
    pub tau: [f64; HOURS],
    pub lon: f64,
}

/// Fits a temporal model with fixed bin count and L2 strength.
pub fn fit_temporal_fixed(samples: &[TemporalSample], n_bins: usize, l2: f64, max_iterations: usize) -> Result<TemporalModel> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("temporal training users"));
    }
    let lons: Vec<f64> = samples.iter().map(|s| s.lon).collect();
    let bin_edges = longitude_bin_edges(&lons, n_bins);
    let n = samples.len() as f64;
    let mut mean = vec![0.0; HOURS];
    for s in samples {
        for h in 0..HOURS {
            mean[h] += s.tau[h] / n;
        }
    }
    let mut scale = [0.0; HOURS];
    for s in samples {
        for h in 0..HOURS {
            scale[h] += (s.tau[h] - mean[h]).powi(2) / n;
        }
    }
    let scale: Vec<f64> = scale.iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }).collect();
    let mut tm = TemporalModel {
        bin_edges,
        coefficients: Vec::new(),
        l2_strength: l2,
        feature_mean: mean,
        feature_scale: scale,
    };
    let data = LogRegData {
        x: samples.iter().map(|s| tm.standardize(&s.tau)).collect(),
        y: samples.iter().map(|s| tm.bin_of(s.lon)).collect(),
        n_classes: tm.n_bins(),
    };
    tm.coefficients = fit_logreg(&data, l2, max_iterations);
    Ok(tm)
}

fn temporal_accuracy(tm: &TemporalModel, test: &[TemporalSample]) -> f64 {
    let hits = test
        .iter()
        .filter(|s| {
            let p = tm.predict_bins(&s.tau);
            let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            best == tm.bin_of(s.lon)
        })
        .count();
    hits as f64 / test.len().max(1) as f64
}

/// L2 strength with the best cross-validated bin accuracy (ties go to the stronger penalty).
pub fn select_l2(samples: &[TemporalSample], n_bins: usize, opts: &TemporalOptions, seed: u64) -> Result<f64> {
    let k = opts.cv_folds.min(samples.len());
    if k < 2 || opts.l2_grid.len() == 1 {
        return opts.l2_grid.first().copied().ok_or(Error::EmptyInput("l2 grid"));
    }
    let folds = crate::eval::kfold(samples.len(), k, seed)?;
    let scored: Vec<(f64, f64)> = opts
        .l2_grid
        .par_iter()
        .map(|&l2| {
            let mut acc = 0.0;
            for f in &folds {
                let train: Vec<TemporalSample> = f.train.iter().map(|&i| samples[i]).collect();
                let test: Vec<TemporalSample> = f.test.iter().map(|&i| samples[i]).collect();
                let tm = fit_temporal_fixed(&train, n_bins, l2, opts.max_iterations)?;
                acc += temporal_accuracy(&tm, &test) * test.len() as f64;
            }
            Ok((l2, acc / samples.len() as f64))
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .iter()
        .fold(scored[0], |best, &c| if c.1 > best.1 || (c.1 == best.1 && c.0 > best.0) { c } else { best })
        .0)
}

/// Chooses the bin count by the supplied downstream error (lower is better),
/// with the L2 strength for each bin count picked by bin-accuracy CV, then
/// refits on all samples.
pub fn fit_temporal<F>(samples: &[TemporalSample], opts: &TemporalOptions, seed: u64, downstream_error: F) -> Result<TemporalModel>
where
    F: Fn(usize, f64) -> Result<f64> + Sync,
{
    if samples.is_empty() {
        return Err(Error::EmptyInput("temporal training users"));
    }
    let grid: Vec<usize> = opts.n_bins_grid.iter().copied().filter(|&b| b >= 1 && b <= samples.len()).collect();
    let grid = if grid.is_empty() { vec![1] } else { grid };
    let mut best: Option<(f64, usize, f64)> = None;
    for nb in grid {
        let l2 = select_l2(samples, nb, opts, seed)?;
        let err = downstream_error(nb, l2)?;
        log::debug!("temporal: {nb} bins, l2 {l2}: downstream error {err:.3}");
        if best.is_none_or(|(e, _, _)| err < e) {
            best = Some((err, nb, l2));
        }
    }
    let (_, nb, l2) = best.expect("non-empty grid");
    fit_temporal_fixed(samples, nb, l2, opts.max_iterations)
}

/// log P(c | tau) for each candidate, via its longitude bin.
pub fn temporal_factor(tm: &TemporalModel, tau: &[f64; HOURS], candidates: &CandidateSet) -> Vec<f64> {
    let p = tm.predict_bins(tau);
    candidates.candidates.iter().map(|c| p[c.bin].ln()).collect()
}

// ---------------------------------------------------------------------------
// Estimator

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub modalities: Modalities,
    pub density: DensityOptions,
    pub temporal: TemporalOptions,
    pub seed: u64,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoModel {
    pub densities: FeatureDensities,
    pub temporal: Option<TemporalModel>,
    pub candidates: CandidateSet,
    pub fallback: GeoPoint,
    pub modalities: Modalities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user: String,
    pub point: GeoPoint,
    /// Log score at the chosen candidate; `None` for fallbacks.
    pub score: Option<f64>,
    pub fallback: bool,
}

/// Log of the content sum `sum_u |u| P(c|u) P(u)` for every candidate, or
/// `None` when the user shares no scored feature with the model.
pub fn content_scores(
    densities: &FeatureDensities,
    candidates: &CandidateSet,
    user: &UserFeatures,
    modalities: &Modalities,
) -> Option<Vec<f64>> {
    if !modalities.content() {
        return Some(vec![0.0; candidates.len()]);
    }
    let mut used: Vec<(f64, &MixtureDensity)> = Vec::new();
    for ns in [Namespace::Word, Namespace::Subreddit] {
        if !modalities.uses(ns) {
            continue;
        }
        for (f, &count) in ns.counts(user) {
            if count == 0 {
                continue;
            }
            if let Some(FeatureDensity {
                density: Some(d),
                prior,
                ..
            }) = densities.get(ns, f)
            {
                if *prior > 0.0 {
                    used.push(((count as f64).ln() + prior.ln(), d));
                }
            }
        }
    }
    if used.is_empty() {
        return None;
    }
    Some(
        candidates
            .candidates
            .iter()
            .map(|c| {
                let terms: Vec<f64> = used.iter().map(|(lw, d)| lw + density_at(d, c.point)).collect();
                log_sum_exp(&terms)
            })
            .collect(),
    )
}

fn combine(content: &[f64], temporal: Option<&[f64]>) -> Vec<f64> {
    match temporal {
        Some(t) => content.iter().zip(t).map(|(a, b)| a + b).collect(),
        None => content.to_vec(),
    }
}

/// Highest-scoring candidate: feature-weighted density sum, times the
/// longitude-bin probability when temporal scoring is on.
pub fn predict(model: &GeoModel, user: &UserFeatures, use_temporal: bool) -> Prediction {
    let Some(content) = content_scores(&model.densities, &model.candidates, user, &model.modalities) else {
        return Prediction {
            user: user.user.clone(),
            point: model.fallback,
            score: None,
            fallback: true,
        };
    };
    let temporal = match (&model.temporal, use_temporal && model.modalities.temporal) {
        (Some(tm), true) => Some(temporal_factor(tm, &user.tau_normalized(), &model.candidates)),
        _ => None,
    };
    let scores = combine(&content, temporal.as_deref());
    let best = model.candidates.argmax(&scores);
    Prediction {
        user: user.user.clone(),
        point: model.candidates.candidates[best].point,
        score: Some(scores[best]),
        fallback: false,
    }
}

pub fn predict_all(model: &GeoModel, users: &[UserFeatures], use_temporal: bool) -> Vec<Prediction> {
    users.par_iter().map(|u| predict(model, u, use_temporal)).collect()
}

/// Candidate of highest density under a DPMM fit to all training coordinates.
pub fn baseline_map(labels: &[GeoPoint], candidates: &CandidateSet, seed: u64) -> Result<GeoPoint> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidate set"));
    }
    let fit = fit_dpmm(labels, DEFAULT_COMPONENTS, CovarianceKind::Diagonal, seed)?;
    let scores: Vec<f64> = candidates
        .candidates
        .iter()
        .map(|c| density_at(&fit.density, c.point))
        .collect();
    Ok(candidates.candidates[candidates.argmax(&scores)].point)
}

struct FoldContext {
    train: Vec<usize>,
    test: Vec<usize>,
    candidates: CandidateSet,
    content: Vec<Option<Vec<f64>>>,
}

/// Trains the full estimator: candidates, feature densities, MAP fallback, and
/// (when enabled) the temporal model with bins chosen by downstream CV error.
pub fn train_model(train: &[(&UserFeatures, &UserLabel)], vocab: &Vocabulary, config: &TrainConfig) -> Result<GeoModel> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training users"));
    }
    let coords: Vec<GeoPoint> = train.iter().map(|(_, l)| l.coords).collect();
    let mut candidates = build_candidates(&coords)?;
    let densities = if config.modalities.content() {
        fit_feature_densities(train, vocab, &config.density, config.seed)?
    } else {
        FeatureDensities {
            vocab: vocab.clone(),
            ..Default::default()
        }
    };
    let fallback = baseline_map(&coords, &candidates, config.seed)?;

    let temporal = if config.modalities.temporal {
        let samples: Vec<TemporalSample> = train
            .iter()
            .map(|(f, l)| TemporalSample {
                tau: f.tau_normalized(),
                lon: l.coords.lon,
            })
            .collect();
        let folds = crate::eval::kfold(train.len(), config.temporal.cv_folds.clamp(2, train.len().max(2)), config.seed)
            .ok()
            .filter(|_| train.len() >= 2 * config.temporal.cv_folds.max(2));
        let tm = match folds {
            None => fit_temporal_fixed(
                &samples,
                config.temporal.n_bins_grid.first().copied().unwrap_or(1),
                config.temporal.l2_grid.first().copied().unwrap_or(1e-2),
                config.temporal.max_iterations,
            )?,
            Some(folds) => {
                let contexts: Vec<FoldContext> = folds
                    .into_iter()
                    .map(|f| {
                        let sub: Vec<(&UserFeatures, &UserLabel)> = f.train.iter().map(|&i| train[i]).collect();
                        let sub_coords: Vec<GeoPoint> = sub.iter().map(|(_, l)| l.coords).collect();
                        let cands = build_candidates(&sub_coords)?;
                        let dens = if config.modalities.content() {
                            fit_feature_densities(&sub, vocab, &config.density, config.seed)?
                        } else {
                            FeatureDensities::default()
                        };
                        let content = f
                            .test
                            .iter()
                            .map(|&i| content_scores(&dens, &cands, train[i].0, &config.modalities))
                            .collect();
                        Ok(FoldContext {
                            train: f.train,
                            test: f.test,
                            candidates: cands,
                            content,
                        })
                    })
                    .collect::<Result<_>>()?;
                let downstream = |nb: usize, l2: f64| -> Result<f64> {
                    let mut total = 0.0;
                    let mut n = 0usize;
                    for ctx in &contexts {
                        let fold_samples: Vec<TemporalSample> = ctx.train.iter().map(|&i| samples[i]).collect();
                        let tm = fit_temporal_fixed(&fold_samples, nb, l2, config.temporal.max_iterations)?;
                        let mut cands = ctx.candidates.clone();
                        cands.assign_bins(&tm);
                        for (j, &i) in ctx.test.iter().enumerate() {
                            let Some(content) = &ctx.content[j] else { continue };
                            let t = temporal_factor(&tm, &samples[i].tau, &cands);
                            let best = cands.argmax(&combine(content, Some(&t)));
                            total += haversine_miles(cands.candidates[best].point, train[i].1.coords);
                            n += 1;
                        }
                    }
                    Ok(if n == 0 { 0.0 } else { total / n as f64 })
                };
                fit_temporal(&samples, &config.temporal, config.seed, downstream)?
            }
        };
        candidates.assign_bins(&tm);
        Some(tm)
    } else {
        None
    };

    Ok(GeoModel {
        densities,
        temporal,
        candidates,
        fallback,
        modalities: config.modalities,
    })
}

/// Groups features with labels by user, keeping only users present in both.
pub fn join_users<'a>(features: &'a [UserFeatures], labels: &'a [UserLabel]) -> Vec<(&'a UserFeatures, &'a UserLabel)> {
    let by_user: HashMap<&str, &UserLabel> = labels.iter().map(|l| (l.user.as_str(), l)).collect();
    features
        .iter()
        .filter_map(|f| by_user.get(f.user.as_str()).map(|l| (f, *l)))
        .collect()
}
