//! Feature extractor, amortization networks and predictive heads.

pub mod classifier;
pub mod params;
pub mod toy;
pub mod views;

use serde::{Deserialize, Serialize};

pub use classifier::ClassifierSpec;
pub use params::{ParamVars, ParameterStore, Role};
pub use toy::{ToyInference, ToyNetSpec};
pub use views::ViewSpec;

use crate::adaptation::Strategy;
use crate::autodiff::{Graph, Tensor, Var};
use crate::distributions::{ClassFactor, DiagGaussian, LogitPosterior};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tasks::{Episode, Example};

/// Lower bound and upper bound applied to every amortized log-variance.
pub const LOG_VAR_RANGE: (f64, f64) = (-12.0, 6.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Elu => g.elu(x),
            Activation::Relu => g.relu(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    Classifier(ClassifierSpec),
    Views(ViewSpec),
    Toy(ToyNetSpec),
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetworkSpec::Classifier(s) => s.validate(),
            NetworkSpec::Views(s) => s.validate(),
            NetworkSpec::Toy(s) => s.model.validate(),
        }
    }
}

/// A task posterior as plain values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPosterior {
    /// One factor over `(w_c, b_c)` per class, in label order.
    Classes(Vec<ClassFactor>),
    /// A single latent `ψ` for regression tasks.
    Latent(ClassFactor),
}

impl TaskPosterior {
    pub fn is_point(&self) -> bool {
        match self {
            TaskPosterior::Classes(f) => f.iter().all(ClassFactor::is_point),
            TaskPosterior::Latent(f) => f.is_point(),
        }
    }

    pub fn to_point(&self) -> TaskPosterior {
        match self {
            TaskPosterior::Classes(f) => TaskPosterior::Classes(f.iter().map(ClassFactor::to_point).collect()),
            TaskPosterior::Latent(f) => TaskPosterior::Latent(f.to_point()),
        }
    }

    /// Adds the posterior to `g` as constants.
    pub fn to_vars(&self, g: &mut Graph) -> Result<PosteriorVars> {
        match self {
            TaskPosterior::Classes(f) => Ok(PosteriorVars::Logits(LogitPosterior::from_factors(g, f)?)),
            TaskPosterior::Latent(f) => {
                let mean = g.constant(Tensor::row(f.mean().to_vec()));
                let log_var = match f {
                    ClassFactor::Gaussian(d) => Some(g.constant(Tensor::row(d.log_variance().to_vec()))),
                    ClassFactor::Point(_) => None,
                };
                Ok(PosteriorVars::Latent { mean, log_var })
            }
        }
    }
}

/// A task posterior as graph nodes.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorVars {
    Logits(LogitPosterior),
    /// `[1 × d_ψ]` mean and log-variance; no log-variance means a point.
    Latent {
        mean: Var,
        log_var: Option<Var>,
    },
}

impl PosteriorVars {
    /// Reads the current node values back out.
    pub fn to_task_posterior(&self, g: &Graph) -> Result<TaskPosterior> {
        match *self {
            PosteriorVars::Logits(p) => {
                let (d, c) = (p.feature_dim(g), p.classes(g));
                let column = |w: Var, b: Var, j: usize| -> Vec<f64> {
                    let (w, b) = (g.value(w), g.value(b));
                    (0..d).map(|i| w.values()[i * c + j]).chain([b.values()[j]]).collect()
                };
                let factors = (0..c)
                    .map(|j| {
                        let mean = column(p.w_mean, p.b_mean, j);
                        match (p.w_log_var, p.b_log_var) {
                            (Some(wl), Some(bl)) => Ok(ClassFactor::Gaussian(DiagGaussian::new(mean, column(wl, bl, j))?)),
                            _ => Ok(ClassFactor::Point(mean)),
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(TaskPosterior::Classes(factors))
            }
            PosteriorVars::Latent { mean, log_var } => {
                let m = g.value(mean).values().to_vec();
                Ok(TaskPosterior::Latent(match log_var {
                    Some(lv) => ClassFactor::Gaussian(DiagGaussian::new(m, g.value(lv).values().to_vec())?),
                    None => ClassFactor::Point(m),
                }))
            }
        }
    }

    pub fn is_point(&self) -> bool {
        match self {
            PosteriorVars::Logits(p) => p.is_point(),
            PosteriorVars::Latent { log_var, .. } => log_var.is_none(),
        }
    }
}

/// Per-sample log-likelihoods of a set of examples.
#[derive(Debug, Clone, Copy)]
pub struct SampleLogLik {
    /// `[L × M × 1]`: `log p(y_m | x_m, ψ_l)`.
    pub per_sample: Var,
    /// `[L × M × C]` class log-probabilities (classification only).
    pub class_log_probs: Option<Var>,
}

/// Parameters plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: NetworkSpec,
    pub strategy: Strategy,
    /// Inner step size for one-step-gradient adaptation.
    #[serde(default)]
    pub eta: f64,
    pub params: ParameterStore,
}

impl Model {
    /// Fresh parameters. `way` sizes the one-step-gradient initialization
    /// and is ignored by every other strategy.
    pub fn init(spec: NetworkSpec, strategy: Strategy, eta: f64, way: usize, rng: &mut SeededRng) -> Result<Model> {
        spec.validate()?;
        let params = match &spec {
            NetworkSpec::Classifier(s) => s.init(strategy, way, rng)?,
            NetworkSpec::Views(s) => {
                strategy.require_latent_compatible()?;
                s.init(rng)?
            }
            NetworkSpec::Toy(s) => {
                strategy.require_latent_compatible()?;
                s.init()?
            }
        };
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {eta}")));
        }
        Ok(Model {
            spec,
            strategy,
            eta,
            params,
        })
    }

    pub fn load(&self, g: &mut Graph, trainable: &[Role]) -> ParamVars {
        self.params.load(g, trainable)
    }

    /// Amortization parameter count (zero for strategies without one).
    pub fn amortization_parameter_count(&self) -> usize {
        self.params.count(Role::Amortization)
    }

    /// Whether the parameter shapes depend on the number of classes.
    pub fn is_way_dependent(&self) -> bool {
        self.params.count(Role::BaselineInit) > 0
    }

    /// Log-likelihood of `examples` under `samples` draws from `post`.
    pub fn sample_log_lik(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        post: &PosteriorVars,
        examples: &[Example],
        samples: usize,
        rng: &mut SeededRng,
    ) -> Result<SampleLogLik> {
        if samples == 0 {
            return Err(Error::contract("need at least one posterior sample"));
        }
        if examples.is_empty() {
            return Err(Error::contract("no examples to score"));
        }
        match (&self.spec, post) {
            (NetworkSpec::Classifier(s), PosteriorVars::Logits(p)) => s.sample_log_lik(g, vars, p, examples, samples, rng),
            (NetworkSpec::Views(s), &PosteriorVars::Latent { mean, log_var }) => {
                let psi = latent_samples(g, mean, log_var, samples, rng)?;
                s.sample_log_lik(g, vars, psi, examples)
            }
            (NetworkSpec::Toy(s), &PosteriorVars::Latent { mean, log_var }) => {
                let psi = latent_samples(g, mean, log_var, samples, rng)?;
                s.sample_log_lik(g, psi, examples)
            }
            _ => Err(Error::contract("posterior kind does not match the network")),
        }
    }

    /// Shape of the variational parameters of a free per-task posterior:
    /// `(rows, cols)` of the mean for classifiers (`[d × C]` weights plus a
    /// `[1 × C]` bias) or `(1, d_ψ)` for latent models.
    pub fn free_posterior_dims(&self, episode: &Episode) -> (usize, usize) {
        match &self.spec {
            NetworkSpec::Classifier(s) => (s.feature_width(), episode.way),
            NetworkSpec::Views(s) => (1, s.latent_dim),
            NetworkSpec::Toy(_) => (1, 1),
        }
    }
}

/// `[L × d_ψ]` reparameterized draws; a point posterior is repeated.
pub(crate) fn latent_samples(g: &mut Graph, mean: Var, log_var: Option<Var>, samples: usize, rng: &mut SeededRng) -> Result<Var> {
    let d = g.shape(mean)[1];
    match log_var {
        Some(lv) => crate::distributions::rsample(g, mean, lv, Tensor::new(vec![samples, d], rng.normals(samples * d))?),
        None => {
            if samples == 1 {
                return Ok(mean);
            }
            g.concat(&vec![mean; samples], 0)
        }
    }
}

/// Dense layers `{prefix}.{i}` applied in order; hidden layers activated,
/// the final one activated only when `activate_last`.
pub(crate) fn mlp(
    g: &mut Graph,
    vars: &ParamVars,
    prefix: &str,
    layers: usize,
    mut x: Var,
    activation: Activation,
    activate_last: bool,
) -> Result<Var> {
    for i in 0..layers {
        let w = vars.get(&format!("{prefix}.{i}.w"))?;
        let b = vars.get(&format!("{prefix}.{i}.b"))?;
        let h = g.matmul(x, w)?;
        x = g.add(h, b)?;
        if i + 1 < layers || activate_last {
            x = activation.apply(g, x)?;
        }
    }
    Ok(x)
}

/// Initializes dense layers `{prefix}.{i}` with widths `input → widths…`.
pub(crate) fn init_mlp(store: &mut ParameterStore, prefix: &str, input: usize, widths: &[usize], rng: &mut SeededRng) -> Result<()> {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        store.dense(&format!("{prefix}.{i}"), fan_in, w, rng)?;
        fan_in = w;
    }
    Ok(())
}

/// Mean and clamped log-variance heads `{prefix}.mean` / `{prefix}.log_var`.
pub(crate) fn gaussian_heads(g: &mut Graph, vars: &ParamVars, prefix: &str, h: Var) -> Result<(Var, Var)> {
    let mean = mlp(g, vars, &format!("{prefix}.mean"), 1, h, Activation::Elu, false)?;
    let raw = mlp(g, vars, &format!("{prefix}.log_var"), 1, h, Activation::Elu, false)?;
    let log_var = g.clamp(raw, LOG_VAR_RANGE.0, LOG_VAR_RANGE.1)?;
    Ok((mean, log_var))
}

pub(crate) fn init_gaussian_heads(
    store: &mut ParameterStore,
    prefix: &str,
    input: usize,
    output: usize,
    log_var_bias: f64,
    rng: &mut SeededRng,
) -> Result<()> {
    store.dense(&format!("{prefix}.mean.0"), input, output, rng)?;
    store.dense(&format!("{prefix}.log_var.0"), input, output, rng)?;
    let name = format!("{prefix}.log_var.0.b");
    store.set(&name, Tensor::filled(&[1, output], log_var_bias))
}

/// Log-probability of the labelled class under `[L × M × C]` logits.
pub(crate) fn class_log_lik(g: &mut Graph, logits: Var, examples: &[Example]) -> Result<SampleLogLik> {
    let (m, c) = (g.shape(logits)[1], g.shape(logits)[2]);
    let mut onehot = vec![0.0; m * c];
    for (i, e) in examples.iter().enumerate() {
        let y = e
            .class()
            .ok_or_else(|| Error::contract("classification example without a class label"))?;
        if y >= c {
            return Err(Error::contract(format!("label {y} outside {c} classes")));
        }
        onehot[i * c + y] = 1.0;
    }
    let lp = g.log_softmax(logits, 2)?;
    let mask = g.constant(Tensor::new(vec![1, m, c], onehot)?);
    let picked = g.mul(lp, mask)?;
    let per_sample = g.sum_axis(picked, 2)?;
    Ok(SampleLogLik {
        per_sample,
        class_log_probs: Some(lp),
    })
}

/// `log (1/L) Σ_l exp(x_l)` over axis 0.
pub fn log_mean_exp_samples(g: &mut Graph, x: Var) -> Result<Var> {
    let l = g.shape(x)[0] as f64;
    let lse = g.logsumexp(x, 0)?;
    g.add_scalar(lse, -l.ln())
}
