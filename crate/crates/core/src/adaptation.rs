//! Adaptation strategies sharing one interface: each maps a context set to
//! a task posterior. Point-estimate strategies return zero-variance factors.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::distributions::LogitPosterior;
use crate::error::{Error, Result};
use crate::nets::{classifier::ClassifierSpec, Model, NetworkSpec, ParamVars, PosteriorVars, TaskPosterior};
use crate::tasks::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Versa,
    Prototypical,
    OneStepGradient,
    AmortizedMap,
}

impl Strategy {
    pub fn is_point_estimate(self) -> bool {
        !matches!(self, Strategy::Versa)
    }

    pub(crate) fn require_latent_compatible(self) -> Result<()> {
        match self {
            Strategy::Versa | Strategy::AmortizedMap => Ok(()),
            other => Err(Error::Config(format!("strategy {other:?} needs a classification model"))),
        }
    }
}

/// Work done while adapting one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdaptStats {
    pub gradient_evaluations: usize,
    pub optimizer_steps: usize,
}

/// The task posterior as graph nodes, differentiable w.r.t. whatever
/// parameters `vars` holds as leaves. Used by the training objectives.
pub fn posterior_vars(model: &Model, g: &mut Graph, vars: &ParamVars, episode: &Episode) -> Result<PosteriorVars> {
    match &model.spec {
        NetworkSpec::Classifier(spec) => {
            let post = match model.strategy {
                Strategy::Versa => spec.versa_posterior(g, vars, episode)?,
                Strategy::AmortizedMap => collapse(spec.versa_posterior(g, vars, episode)?),
                Strategy::Prototypical => prototypes(spec, g, vars, episode)?,
                Strategy::OneStepGradient => one_step_in_graph(spec, g, vars, model.eta, episode)?,
            };
            Ok(PosteriorVars::Logits(post))
        }
        NetworkSpec::Views(spec) => {
            let (mean, lv) = spec.latent_posterior(g, vars, &episode.context)?;
            Ok(latent(model.strategy, mean, lv))
        }
        NetworkSpec::Toy(spec) => {
            let (mean, lv) = spec.posterior(g, vars, episode)?;
            Ok(latent(model.strategy, mean, lv))
        }
    }
}

fn latent(strategy: Strategy, mean: Var, log_var: Var) -> PosteriorVars {
    PosteriorVars::Latent {
        mean,
        log_var: (strategy == Strategy::Versa).then_some(log_var),
    }
}

fn collapse(p: LogitPosterior) -> LogitPosterior {
    LogitPosterior {
        w_log_var: None,
        b_log_var: None,
        ..p
    }
}

/// `w_c = μ_c`, `b_c = −½‖μ_c‖²` with `μ_c` the mean class feature.
fn prototypes(spec: &ClassifierSpec, g: &mut Graph, vars: &ParamVars, episode: &Episode) -> Result<LogitPosterior> {
    let mu = spec.pooled_class_features(g, vars, episode)?;
    let w_mean = g.transpose(mu)?;
    let sq = g.square(mu)?;
    let norms = g.sum_axis(sq, 1)?;
    let half = g.scale(norms, -0.5)?;
    let b_mean = g.transpose(half)?;
    Ok(LogitPosterior {
        w_mean,
        b_mean,
        w_log_var: None,
        b_log_var: None,
    })
}

fn context_onehot(episode: &Episode, way: usize) -> Result<Tensor> {
    let mut y = vec![0.0; episode.context.len() * way];
    for (i, e) in episode.context.iter().enumerate() {
        match e.class() {
            Some(c) if c < way => y[i * way + c] = 1.0,
            _ => return Err(Error::contract("context label outside the episode's classes")),
        }
    }
    Tensor::new(vec![episode.context.len(), way], y)
}

fn check_psi0(g: &Graph, w0: Var, episode: &Episode) -> Result<()> {
    let c = g.shape(w0)[1];
    if c != episode.way {
        return Err(Error::contract(format!(
            "one-step-gradient initialization has {c} classes but the episode has {}",
            episode.way
        )));
    }
    Ok(())
}

fn context_features(spec: &ClassifierSpec, g: &mut Graph, vars: &ParamVars, episode: &Episode) -> Result<Var> {
    let x = g.constant(episode.context_inputs()?);
    spec.features(g, vars, x)
}

/// The inner gradient step written out in closed form for the
/// linear-softmax head: `W₀ + η Hᵀ(Y − P)`, `b₀ + η Σₙ(Y − P)`. Building it
/// in the graph lets training differentiate through the step exactly.
fn one_step_in_graph(spec: &ClassifierSpec, g: &mut Graph, vars: &ParamVars, eta: f64, episode: &Episode) -> Result<LogitPosterior> {
    let (w0, b0) = (vars.get("psi0.w")?, vars.get("psi0.b")?);
    check_psi0(g, w0, episode)?;
    let h = context_features(spec, g, vars, episode)?;
    let y = g.constant(context_onehot(episode, episode.way)?);
    let hw = g.matmul(h, w0)?;
    let logits = g.add(hw, b0)?;
    let p = g.softmax(logits, 1)?;
    let r = g.sub(y, p)?;
    let ht = g.transpose(h)?;
    let gw = g.matmul(ht, r)?;
    let gb = g.sum_axis(r, 0)?;
    let dw = g.scale(gw, eta)?;
    let db = g.scale(gb, eta)?;
    Ok(LogitPosterior {
        w_mean: g.add(w0, dw)?,
        b_mean: g.add(b0, db)?,
        w_log_var: None,
        b_log_var: None,
    })
}

fn classifier(model: &Model) -> Result<&ClassifierSpec> {
    match &model.spec {
        NetworkSpec::Classifier(s) => Ok(s),
        _ => Err(Error::contract("strategy requires a classification model")),
    }
}

/// Test-time adaptation with the model's own strategy.
pub fn adapt(model: &Model, episode: &Episode) -> Result<(TaskPosterior, AdaptStats)> {
    if model.strategy == Strategy::OneStepGradient {
        let w0 = model.params.get("psi0.w")?;
        let b0 = model.params.get("psi0.b")?;
        return one_step_gradient_adapt(model, w0, b0, model.eta, episode);
    }
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let post = posterior_vars(model, &mut g, &vars, episode)?.to_task_posterior(&g)?;
    Ok((
        post,
        AdaptStats {
            gradient_evaluations: g.backward_passes(),
            optimizer_steps: 0,
        },
    ))
}

/// Mean class features as weights, `−½‖μ_c‖²` as biases.
pub fn prototypical_adapt(model: &Model, episode: &Episode) -> Result<TaskPosterior> {
    let spec = classifier(model)?;
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let post = prototypes(spec, &mut g, &vars, episode)?;
    PosteriorVars::Logits(post).to_task_posterior(&g)
}

/// Amortized factors collapsed to their means.
pub fn amortized_map_adapt(model: &Model, episode: &Episode) -> Result<TaskPosterior> {
    Ok(crate::nets::classifier::build_task_posterior(model, episode)?.to_point())
}

/// One ascent step on the context log-likelihood from `(w0, b0)`, with the
/// gradient taken by reverse-mode autodiff (one backward pass).
pub fn one_step_gradient_adapt(
    model: &Model,
    w0: &Tensor,
    b0: &Tensor,
    eta: f64,
    episode: &Episode,
) -> Result<(TaskPosterior, AdaptStats)> {
    let spec = classifier(model)?;
    if !(eta >= 0.0) {
        return Err(Error::contract(format!("eta must be non-negative, got {eta}")));
    }
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let h = context_features(spec, &mut g, &vars, episode)?;
    let w = g.leaf(w0.clone());
    let b = g.leaf(b0.clone());
    check_psi0(&g, w, episode)?;
    let y = g.constant(context_onehot(episode, episode.way)?);
    let hw = g.matmul(h, w)?;
    let logits = g.add(hw, b)?;
    let lp = g.log_softmax(logits, 1)?;
    let picked = g.mul(lp, y)?;
    let ll = g.sum(picked)?;
    let grads = g.backward(ll)?;
    let step = |p: &Tensor, d: &Tensor| -> Result<Tensor> {
        let v = p.values().iter().zip(d.values()).map(|(p, d)| p + eta * d).collect();
        Tensor::new(p.shape().to_vec(), v)
    };
    let w_new = g.constant(step(w0, grads.wrt(w))?);
    let b_new = g.constant(step(b0, grads.wrt(b))?);
    let post = PosteriorVars::Logits(LogitPosterior {
        w_mean: w_new,
        b_mean: b_new,
        w_log_var: None,
        b_log_var: None,
    })
    .to_task_posterior(&g)?;
    Ok((
        post,
        AdaptStats {
            gradient_evaluations: g.backward_passes(),
            optimizer_steps: 0,
        },
    ))
}

/// The closed-form step built with [`posterior_vars`], as values; used to
/// check it against the autodiff route.
pub fn one_step_closed_form(model: &Model, episode: &Episode) -> Result<TaskPosterior> {
    let spec = classifier(model)?;
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let post = one_step_in_graph(spec, &mut g, &vars, model.eta, episode)?;
    PosteriorVars::Logits(post).to_task_posterior(&g)
}
