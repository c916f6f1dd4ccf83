//! Closed-form ground truth for the conjugate toy model and the cluster
//! tasks. Deliberately independent of the autodiff and distribution code.

use crate::tasks::cluster::ClusterTaskSpec;
use crate::tasks::toy::ToyModelSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePosterior {
    pub mean: f64,
    pub variance: f64,
    /// `log p(D)` under the normal–normal marginal.
    pub log_evidence: f64,
}

fn normal_log_density(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (LN_2PI + variance.ln() + (x - mean).powi(2) / variance)
}

pub fn true_posterior(spec: &ToyModelSpec, observations: &[f64]) -> ConjugatePosterior {
    let (s_psi, s_y) = (spec.prior_variance, spec.obs_variance);
    let n = observations.len() as f64;
    let sum: f64 = observations.iter().sum();
    let sum_sq: f64 = observations.iter().map(|y| y * y).sum();
    let denom = n * s_psi + s_y;
    // y ~ N(0, s_y I + s_psi 11ᵀ): determinant and quadratic form via the
    // matrix determinant lemma and Sherman–Morrison.
    let log_det = n * s_y.ln() + (denom / s_y).ln();
    let quad = (sum_sq - s_psi * sum * sum / denom) / s_y;
    ConjugatePosterior {
        mean: s_psi * sum / denom,
        variance: s_psi * s_y / denom,
        log_evidence: -0.5 * (n * LN_2PI + log_det + quad),
    }
}

/// `log N(ỹ; μ, σ² + σ_y²)`.
pub fn closed_form_predictive(post: &ConjugatePosterior, spec: &ToyModelSpec, y: f64) -> f64 {
    normal_log_density(y, post.mean, post.variance + spec.obs_variance)
}

/// Trapezoid rule over `ψ ∈ [μ − 10σ, μ + 10σ]` with 10⁴ nodes, summed in
/// log space. A zero-variance posterior is a point mass.
pub fn quadrature_predictive(post: &ConjugatePosterior, spec: &ToyModelSpec, y: f64) -> f64 {
    quadrature_predictive_gaussian(post.mean, post.variance, spec.obs_variance, y)
}

pub fn quadrature_predictive_gaussian(mean: f64, variance: f64, obs_variance: f64, y: f64) -> f64 {
    const NODES: usize = 10_000;
    if variance <= 0.0 {
        return normal_log_density(y, mean, obs_variance);
    }
    let sd = variance.sqrt();
    let (lo, hi) = (mean - 10.0 * sd, mean + 10.0 * sd);
    let h = (hi - lo) / (NODES - 1) as f64;
    let logs: Vec<f64> = (0..NODES)
        .map(|i| {
            let psi = lo + h * i as f64;
            normal_log_density(y, psi, obs_variance) + normal_log_density(psi, mean, variance)
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let w = if i == 0 || i == NODES - 1 { 0.5 } else { 1.0 };
            w * (l - top).exp()
        })
        .sum();
    top + (total * h).ln()
}

/// Mean negative log predictive density of `targets` under a Gaussian
/// posterior `N(mean, variance)`, by quadrature.
pub fn expected_nll(mean: f64, variance: f64, spec: &ToyModelSpec, targets: &[f64]) -> f64 {
    -targets
        .iter()
        .map(|&y| quadrature_predictive_gaussian(mean, variance, spec.obs_variance, y))
        .sum::<f64>()
        / targets.len() as f64
}

/// The toy ELBO of `q = N(mean, variance)` on `observations`, exactly.
pub fn toy_elbo(spec: &ToyModelSpec, observations: &[f64], mean: f64, variance: f64) -> f64 {
    let s_y = spec.obs_variance;
    let expected_ll: f64 = observations
        .iter()
        .map(|y| -0.5 * (LN_2PI + s_y.ln() + ((y - mean).powi(2) + variance) / s_y))
        .sum();
    expected_ll - gaussian_kl(mean, variance, 0.0, spec.prior_variance)
}

/// `KL(N(m1, v1) ‖ N(m2, v2))` for scalars.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0)
}

/// Class log-posteriors under equal priors and isotropic class densities.
pub fn bayes_classify(class_means: &[Vec<f64>], spec: &ClusterTaskSpec, x: &[f64]) -> Vec<f64> {
    let var = spec.cluster_std * spec.cluster_std;
    let scores: Vec<f64> = class_means
        .iter()
        .map(|m| -m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * var))
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + scores.iter().map(|s| (s - top).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `(x, label)` pairs the Bayes classifier gets right.
pub fn bayes_accuracy<'a>(class_means: &[Vec<f64>], spec: &ClusterTaskSpec, points: impl IntoIterator<Item = (&'a [f64], usize)>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (x, label) in points {
        hit += usize::from(argmax(&bayes_classify(class_means, spec, x)) == label);
        n += 1;
    }
    hit as f64 / n.max(1) as f64
}
