//! Diagonal Gaussians, both as plain values and as graph expressions.
//!
//! Variances are always carried as log-variances so that unconstrained
//! parameters map to valid distributions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_variance: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::dimension("diag_gaussian", &[&[mean.len()], &[log_variance.len()]]));
        }
        if !mean.iter().chain(&log_variance).all(|v| v.is_finite()) {
            return Err(Error::domain("diag_gaussian", "non-finite parameter"));
        }
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    /// Isotropic `N(mean, variance·I)`.
    pub fn isotropic(dim: usize, mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean; dim], vec![variance.ln(); dim])
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], vec![variance.ln()])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_variance(&self) -> &[f64] {
        &self.log_variance
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_variance.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dimension("log_prob", &[&[self.dim()], &[x.len()]]));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.log_variance)
            .map(|((x, m), lv)| -0.5 * LN_2PI - 0.5 * lv - (x - m).powi(2) / (2.0 * lv.exp()))
            .sum())
    }

    /// `mean + exp(½·log_variance) ⊙ ε`, `ε ~ N(0, I)`.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_variance)
            .map(|(m, lv)| m + (0.5 * lv).exp() * rng.standard_normal())
            .collect()
    }

    /// Values of `self` and `other` concatenated.
    pub fn concat(&self, other: &DiagGaussian) -> DiagGaussian {
        let mut mean = self.mean.clone();
        mean.extend_from_slice(&other.mean);
        let mut log_variance = self.log_variance.clone();
        log_variance.extend_from_slice(&other.log_variance);
        DiagGaussian { mean, log_variance }
    }
}

/// `KL(q ‖ p)` in closed form.
pub fn kl_divergence(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::dimension("kl_divergence", &[&[q.dim()], &[p.dim()]]));
    }
    let mut kl = 0.0;
    for i in 0..q.dim() {
        let (mq, lq) = (q.mean[i], q.log_variance[i]);
        let (mp, lp) = (p.mean[i], p.log_variance[i]);
        kl += 0.5 * (((lq - lp).exp() + (mq - mp).powi(2) / lp.exp()) - 1.0 + (lp - lq));
    }
    Ok(kl)
}

/// Isotropic Gaussian prior `N(mean, variance·I)` of any dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPrior {
    pub fn standard() -> Self {
        Self { mean: 0.0, variance: 1.0 }
    }
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self::standard()
    }
}

/// `mean + exp(½·log_var) ⊙ eps` in the graph.
pub fn rsample(g: &mut Graph, mean: Var, log_var: Var, eps: Tensor) -> Result<Var> {
    let half = g.scale(log_var, 0.5)?;
    let std = g.exp(half)?;
    let eps = g.constant(eps);
    let noise = g.mul(std, eps)?;
    g.add(mean, noise)
}

/// Differentiable `KL(N(mean, exp(log_var)) ‖ prior)` summed over all elements.
pub fn kl_to_prior(g: &mut Graph, mean: Var, log_var: Var, prior: &GaussianPrior) -> Result<Var> {
    if g.shape(mean) != g.shape(log_var) {
        return Err(Error::dimension("kl_to_prior", &[g.shape(mean), g.shape(log_var)]));
    }
    let n = g.value(mean).len() as f64;
    let var = g.exp(log_var)?;
    let centred = g.add_scalar(mean, -prior.mean)?;
    let sq = g.square(centred)?;
    let num = g.add(var, sq)?;
    let ratio = g.scale(num, 1.0 / prior.variance)?;
    let t = g.sub(ratio, log_var)?;
    let s = g.sum(t)?;
    let s = g.add_scalar(s, n * (prior.variance.ln() - 1.0))?;
    g.scale(s, 0.5)
}

/// Gaussian log-density of `x` with fixed variance, summed along `axis`.
pub fn gaussian_log_density_fixed(g: &mut Graph, x: Var, mean: Var, variance: f64, axis: usize) -> Result<Var> {
    let d = g.sub(x, mean)?;
    let sq = g.square(d)?;
    let s = g.sum_axis(sq, axis)?;
    let n = g.shape(x).get(axis).copied().unwrap_or(1) as f64;
    let scaled = g.scale(s, -0.5 / variance)?;
    g.add_scalar(scaled, -0.5 * n * (LN_2PI + variance.ln()))
}

/// Gaussian posterior over the weights and biases of a `C`-way linear
/// classifier, as graph nodes. A missing log-variance means a point mass.
#[derive(Debug, Clone, Copy)]
pub struct LogitPosterior {
    /// `[d × C]`
    pub w_mean: Var,
    /// `[1 × C]`
    pub b_mean: Var,
    pub w_log_var: Option<Var>,
    pub b_log_var: Option<Var>,
}

impl LogitPosterior {
    pub fn is_point(&self) -> bool {
        self.w_log_var.is_none()
    }

    pub fn classes(&self, g: &Graph) -> usize {
        g.shape(self.w_mean)[1]
    }

    pub fn feature_dim(&self, g: &Graph) -> usize {
        g.shape(self.w_mean)[0]
    }

    /// Builds constant nodes from per-class factors over `(w_c, b_c)`, each of
    /// length `d + 1` with the bias last.
    pub fn from_factors(g: &mut Graph, factors: &[ClassFactor]) -> Result<Self> {
        let c = factors.len();
        if c == 0 {
            return Err(Error::contract("classifier posterior with zero classes"));
        }
        let d = factors[0].mean().len() - 1;
        let point = factors.iter().all(|f| f.is_point());
        let mut wm = vec![0.0; d * c];
        let mut bm = vec![0.0; c];
        let mut wl = vec![0.0; d * c];
        let mut bl = vec![0.0; c];
        for (j, f) in factors.iter().enumerate() {
            if f.mean().len() != d + 1 {
                return Err(Error::dimension("from_factors", &[&[d + 1], &[f.mean().len()]]));
            }
            let lv = f.log_variance_or(f64::NEG_INFINITY);
            for i in 0..d {
                wm[i * c + j] = f.mean()[i];
                wl[i * c + j] = lv[i];
            }
            bm[j] = f.mean()[d];
            bl[j] = lv[d];
        }
        let w_mean = g.constant(Tensor::new(vec![d, c], wm)?);
        let b_mean = g.constant(Tensor::row(bm));
        let (w_log_var, b_log_var) = if point {
            (None, None)
        } else {
            if wl.iter().chain(&bl).any(|v| !v.is_finite()) {
                return Err(Error::contract("cannot mix point and Gaussian class factors"));
            }
            (Some(g.constant(Tensor::new(vec![d, c], wl)?)), Some(g.constant(Tensor::row(bl))))
        };
        Ok(Self {
            w_mean,
            b_mean,
            w_log_var,
            b_log_var,
        })
    }

    /// Deterministic logits `h·μ_w + μ_b`, `[M × C]`.
    pub fn mean_logits(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let fd = g.shape(features).get(1).copied().unwrap_or(0);
        if fd != self.feature_dim(g) {
            return Err(Error::dimension("mean_logits", &[g.shape(features), g.shape(self.w_mean)]));
        }
        let hw = g.matmul(features, self.w_mean)?;
        g.add(hw, self.b_mean)
    }
}

/// Posterior factor for one class: a Gaussian over `(w_c, b_c)`, or a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassFactor {
    Gaussian(DiagGaussian),
    Point(Vec<f64>),
}

impl ClassFactor {
    pub fn mean(&self) -> &[f64] {
        match self {
            ClassFactor::Gaussian(d) => d.mean(),
            ClassFactor::Point(m) => m,
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, ClassFactor::Point(_))
    }

    /// Per-coordinate variance (zero for a point mass).
    pub fn variance(&self) -> Vec<f64> {
        match self {
            ClassFactor::Gaussian(d) => d.variance(),
            ClassFactor::Point(m) => vec![0.0; m.len()],
        }
    }

    fn log_variance_or(&self, fill: f64) -> Vec<f64> {
        match self {
            ClassFactor::Gaussian(d) => d.log_variance().to_vec(),
            ClassFactor::Point(m) => vec![fill; m.len()],
        }
    }

    /// Collapses to the mean.
    pub fn to_point(&self) -> ClassFactor {
        ClassFactor::Point(self.mean().to_vec())
    }
}

/// Draws `samples` logit tensors via local reparameterization, `[L × M × C]`.
///
/// Each logit is sampled from its induced Gaussian
/// `N(hᵀμ_w + μ_b, Σ_j h_j²σ²_w,j + σ²_b)` instead of sampling weights.
/// Point posteriors return the mean logits repeated.
pub fn local_reparam_logit_samples(
    g: &mut Graph,
    features: Var,
    post: &LogitPosterior,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<Var> {
    if samples == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    let mean = post.mean_logits(g, features)?;
    let (m, c) = (g.shape(mean)[0], g.shape(mean)[1]);
    let mean3 = g.reshape(mean, &[1, m, c])?;
    let (Some(wl), Some(bl)) = (post.w_log_var, post.b_log_var) else {
        if samples == 1 {
            return Ok(mean3);
        }
        let copies = vec![mean3; samples];
        return g.concat(&copies, 0);
    };
    let h2 = g.square(features)?;
    let wv = g.exp(wl)?;
    let bv = g.exp(bl)?;
    let hv = g.matmul(h2, wv)?;
    let var = g.add(hv, bv)?;
    let std = g.sqrt(var)?;
    let std3 = g.reshape(std, &[1, m, c])?;
    let eps = g.constant(Tensor::new(vec![samples, m, c], rng.normals(samples * m * c))?);
    let noise = g.mul(std3, eps)?;
    g.add(mean3, noise)
}

/// Single local-reparameterized logit draw, `[M × C]`.
pub fn local_reparam_logits(g: &mut Graph, features: Var, post: &LogitPosterior, rng: &mut SeededRng) -> Result<Var> {
    let s = local_reparam_logit_samples(g, features, post, 1, rng)?;
    let (m, c) = (g.shape(s)[1], g.shape(s)[2]);
    g.reshape(s, &[m, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_examples() {
        let n = DiagGaussian::standard(1);
        assert!((n.log_prob(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((n.log_prob(&[2.0]).unwrap() + 2.918_938_533_204_672_7).abs() < 1e-12);
        let d = DiagGaussian::scalar(1.5, 0.3).unwrap();
        let mode = -0.5 * (std::f64::consts::TAU * 0.3).ln();
        assert!((d.log_prob(&[1.5]).unwrap() - mode).abs() < 1e-12);
        assert!(matches!(n.log_prob(&[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn kl_examples() {
        let n01 = DiagGaussian::standard(1);
        assert_eq!(kl_divergence(&n01, &n01).unwrap(), 0.0);
        let n11 = DiagGaussian::scalar(1.0, 1.0).unwrap();
        assert!((kl_divergence(&n11, &n01).unwrap() - 0.5).abs() < 1e-12);
        let n04 = DiagGaussian::scalar(0.0, 4.0).unwrap();
        let expected = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((kl_divergence(&n04, &n01).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.806_853).abs() < 1e-6);
        assert!(kl_divergence(&n01, &DiagGaussian::standard(2)).is_err());
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let q = DiagGaussian::new(vec![0.3, -1.2, 2.0], vec![-0.5, 0.7, 0.0]).unwrap();
        let prior = GaussianPrior { mean: 0.5, variance: 2.0 };
        let p = DiagGaussian::isotropic(3, 0.5, 2.0).unwrap();
        let mut g = Graph::new();
        let m = g.leaf(Tensor::row(q.mean().to_vec()));
        let l = g.leaf(Tensor::row(q.log_variance().to_vec()));
        let kl = kl_to_prior(&mut g, m, l, &prior).unwrap();
        assert!((g.value(kl).item() - kl_divergence(&q, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variance_sample_is_mean() {
        let d = DiagGaussian::new(vec![0.7, -3.0], vec![-60.0, -60.0]).unwrap();
        let s = d.sample(&mut SeededRng::new(3));
        for (a, b) in s.iter().zip(d.mean()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_has_right_moments() {
        let d = DiagGaussian::scalar(1.0, 4.0).unwrap();
        assert_eq!(d.sample(&mut SeededRng::new(5)), d.sample(&mut SeededRng::new(5)));
        let mut rng = SeededRng::new(9);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!((var - 4.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn density_integrates_to_one() {
        let d = DiagGaussian::scalar(-0.4, 2.5).unwrap();
        let s = 2.5f64.sqrt();
        let (lo, hi, n) = (-0.4 - 8.0 * s, -0.4 + 8.0 * s, 20_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * d.log_prob(&[lo + i as f64 * h]).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    fn two_class_factors(point: bool) -> Vec<ClassFactor> {
        let means = [vec![0.5, -1.0, 0.2], vec![-0.3, 0.8, -0.1]];
        let lvs = [vec![-1.0, -0.5, -2.0], vec![0.1, -1.5, -0.7]];
        means
            .iter()
            .zip(&lvs)
            .map(|(m, l)| {
                if point {
                    ClassFactor::Point(m.clone())
                } else {
                    ClassFactor::Gaussian(DiagGaussian::new(m.clone(), l.clone()).unwrap())
                }
            })
            .collect()
    }

    #[test]
    fn zero_variance_logits_are_the_affine_map() {
        let mut g = Graph::new();
        let post = LogitPosterior::from_factors(&mut g, &two_class_factors(true)).unwrap();
        let h = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 0.25]).unwrap());
        let sampled = local_reparam_logits(&mut g, h, &post, &mut SeededRng::new(1)).unwrap();
        let w = g.constant(Tensor::matrix(2, 2, vec![0.5, -0.3, -1.0, 0.8]).unwrap());
        let b = g.constant(Tensor::row(vec![0.2, -0.1]));
        let hw = g.matmul(h, w).unwrap();
        let affine = g.add(hw, b).unwrap();
        let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g.value(sampled)), bits(g.value(affine)));
    }

    #[test]
    fn zero_features_give_bias_distribution() {
        let factors = two_class_factors(false);
        let mut g = Graph::new();
        let post = LogitPosterior::from_factors(&mut g, &factors).unwrap();
        let h = g.constant(Tensor::zeros(&[1, 2]));
        let mut rng = SeededRng::new(2);
        let n = 20_000;
        let s = local_reparam_logit_samples(&mut g, h, &post, n, &mut rng).unwrap();
        let v = g.value(s).values();
        for c in 0..2 {
            let xs: Vec<f64> = (0..n).map(|l| v[l * 2 + c]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let want_var = factors[c].variance()[2];
            assert!((mean - factors[c].mean()[2]).abs() < 4.0 * (want_var / n as f64).sqrt());
            assert!((var / want_var - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn logit_moments_match_analytic() {
        let factors = two_class_factors(false);
        let h = [0.7, -1.3];
        let mut g = Graph::new();
        let post = LogitPosterior::from_factors(&mut g, &factors).unwrap();
        let hv = g.constant(Tensor::row(h.to_vec()));
        let n = 100_000;
        let s = local_reparam_logit_samples(&mut g, hv, &post, n, &mut SeededRng::new(4)).unwrap();
        let v = g.value(s).values();
        for (c, f) in factors.iter().enumerate() {
            let m = f.mean();
            let var = f.variance();
            let want_mean = h[0] * m[0] + h[1] * m[1] + m[2];
            let want_var = h[0] * h[0] * var[0] + h[1] * h[1] * var[1] + var[2];
            let xs: Vec<f64> = (0..n).map(|l| v[l * 2 + c]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let emp_var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(((mean - want_mean) / want_mean).abs() < 0.01, "{mean} vs {want_mean}");
            assert!(((emp_var - want_var) / want_var).abs() < 0.01, "{emp_var} vs {want_var}");
        }
    }

    #[test]
    fn logit_dimension_mismatch() {
        let mut g = Graph::new();
        let post = LogitPosterior::from_factors(&mut g, &two_class_factors(false)).unwrap();
        let h = g.constant(Tensor::zeros(&[3, 5]));
        let r = local_reparam_logits(&mut g, h, &post, &mut SeededRng::new(0));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
