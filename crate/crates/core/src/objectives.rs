//! Training objectives and evaluation metrics.
//!
//! Every batch is processed in a canonical order (sorted by task id, then
//! episode seed), each episode draws its Monte-Carlo noise from a stream
//! keyed by its own identity, and per-episode gradients are summed in that
//! order. Batch results are therefore independent of the order episodes are
//! passed in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::adaptation::{self, AdaptStats};
use crate::autodiff::{Graph, Tensor, Var};
use crate::distributions::{kl_to_prior, GaussianPrior, LogitPosterior};
use crate::error::{Error, Result};
use crate::nets::{log_mean_exp_samples, Model, NetworkSpec, ParamVars, ParameterStore, PosteriorVars, Role, TaskPosterior};
use crate::optim::AdamState;
use crate::rng::SeededRng;
use crate::tasks::{Episode, Example};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Mlpip,
    AmortizedVi,
    NonamortizedVi,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub loss: f64,
    pub episode_nll: Vec<f64>,
    /// Empty for regression.
    pub episode_accuracy: Vec<f64>,
    /// L2 norm of the averaged gradient per role label.
    pub grad_norms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub report: ObjectiveReport,
    /// Batch-averaged gradients by parameter name.
    pub grads: BTreeMap<String, Tensor>,
}

/// Predictive log-densities of a set of examples.
#[derive(Debug, Clone, Copy)]
pub struct Predictive {
    /// `[1 × M × 1]`: `log (1/L) Σ_l p(y_m | x_m, ψ_l)`.
    pub target_log_prob: Var,
    /// `[1 × M × C]` predictive class log-probabilities.
    pub class_log_probs: Option<Var>,
}

/// Monte-Carlo posterior predictive with log-mean-exp over samples.
pub fn predictive(
    model: &Model,
    g: &mut Graph,
    vars: &ParamVars,
    post: &PosteriorVars,
    examples: &[Example],
    samples: usize,
    rng: &mut SeededRng,
) -> Result<Predictive> {
    let ll = model.sample_log_lik(g, vars, post, examples, samples, rng)?;
    let target_log_prob = log_mean_exp_samples(g, ll.per_sample)?;
    let class_log_probs = match ll.class_log_probs {
        Some(lp) => Some(log_mean_exp_samples(g, lp)?),
        None => None,
    };
    Ok(Predictive {
        target_log_prob,
        class_log_probs,
    })
}

/// Fraction of examples whose label has the largest predictive probability.
pub fn accuracy(class_log_probs: &Tensor, examples: &[Example]) -> f64 {
    let c = *class_log_probs.shape().last().unwrap_or(&1);
    let hits = examples
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            let row = &class_log_probs.values()[i * c..(i + 1) * c];
            e.class() == Some(crate::oracle::argmax(row))
        })
        .count();
    hits as f64 / examples.len().max(1) as f64
}

fn canonical(episodes: &[Episode]) -> Result<Vec<&Episode>> {
    if episodes.is_empty() {
        return Err(Error::contract("empty episode batch"));
    }
    for ep in episodes {
        ep.validate()?;
        if ep.target.is_empty() {
            return Err(Error::contract(format!("episode {} has no targets", ep.task_id)));
        }
    }
    let mut order: Vec<&Episode> = episodes.iter().collect();
    order.sort_by_key(|e| (e.task_id, e.seed));
    Ok(order)
}

fn episode_stream(base: u64, ep: &Episode) -> SeededRng {
    SeededRng::keyed(base, ep.task_id, ep.seed)
}

struct EpisodeTerm {
    loss: Var,
    nll: f64,
    accuracy: Option<f64>,
}

/// Builds one graph per episode, backpropagates its loss and averages the
/// gradients over the batch.
fn run_batch<F>(episodes: &[&Episode], params: &ParameterStore, rng: &mut SeededRng, mut term: F) -> Result<ObjectiveOutput>
where
    F: FnMut(&mut Graph, &ParamVars, &Episode, &mut SeededRng) -> Result<EpisodeTerm>,
{
    let base = rng.next_u64();
    let trainable = [Role::Shared, Role::Amortization, Role::BaselineInit];
    let mut sums: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut report = ObjectiveReport::default();
    let mut total = 0.0;
    for ep in episodes {
        let mut g = Graph::new();
        let vars = params.load(&mut g, &trainable);
        let mut erng = episode_stream(base, ep);
        let t = term(&mut g, &vars, ep, &mut erng)?;
        let loss = g.value(t.loss).item();
        if !loss.is_finite() {
            return Err(Error::domain("objective", format!("non-finite loss on episode {}", ep.task_id)));
        }
        let grads = g.backward(t.loss)?;
        for (name, v) in vars.iter() {
            let Some(gr) = grads.get(v) else { continue };
            match sums.get_mut(name) {
                Some(acc) => acc.add_assign(gr),
                None => {
                    sums.insert(name.to_string(), gr.clone());
                }
            }
        }
        total += loss;
        report.episode_nll.push(t.nll);
        if let Some(a) = t.accuracy {
            report.episode_accuracy.push(a);
        }
    }
    let n = episodes.len() as f64;
    report.loss = total / n;
    let mut sq: BTreeMap<String, f64> = BTreeMap::new();
    for (name, g) in sums.iter_mut() {
        for v in g.values_mut() {
            *v /= n;
        }
        let role = Role::of(name)?.label().to_string();
        *sq.entry(role).or_default() += g.values().iter().map(|v| v * v).sum::<f64>();
    }
    report.grad_norms = sq.into_iter().map(|(k, v)| (k, v.sqrt())).collect();
    Ok(ObjectiveOutput { report, grads: sums })
}

/// The predictive-likelihood objective: mean over episodes of the mean
/// target negative log predictive, with `L` posterior samples.
pub fn mlpip_loss(model: &Model, episodes: &[Episode], samples: usize, rng: &mut SeededRng) -> Result<ObjectiveOutput> {
    mlpip_loss_with(model, &model.params, episodes, samples, rng)
}

pub(crate) fn mlpip_loss_with(
    model: &Model,
    params: &ParameterStore,
    episodes: &[Episode],
    samples: usize,
    rng: &mut SeededRng,
) -> Result<ObjectiveOutput> {
    if samples == 0 {
        return Err(Error::contract("need at least one posterior sample"));
    }
    let order = canonical(episodes)?;
    run_batch(&order, params, rng, |g, vars, ep, erng| {
        let post = adaptation::posterior_vars(model, g, vars, ep)?;
        let pred = predictive(model, g, vars, &post, &ep.target, samples, erng)?;
        let mean = g.mean_all(pred.target_log_prob)?;
        let loss = g.neg(mean)?;
        Ok(EpisodeTerm {
            loss,
            nll: g.value(loss).item(),
            accuracy: pred.class_log_probs.map(|c| accuracy(g.value(c), &ep.target)),
        })
    })
}

/// `KL(q ‖ prior)` summed over every coordinate of the posterior.
pub fn posterior_kl(g: &mut Graph, post: &PosteriorVars, prior: &GaussianPrior) -> Result<Var> {
    match *post {
        PosteriorVars::Logits(LogitPosterior {
            w_mean,
            b_mean,
            w_log_var: Some(wl),
            b_log_var: Some(bl),
        }) => {
            let kw = kl_to_prior(g, w_mean, wl, prior)?;
            let kb = kl_to_prior(g, b_mean, bl, prior)?;
            g.add(kw, kb)
        }
        PosteriorVars::Latent { mean, log_var: Some(lv) } => kl_to_prior(g, mean, lv, prior),
        _ => Err(Error::contract("variational objectives need a Gaussian posterior")),
    }
}

/// `KL(q ‖ prior) − Σ_{(x,y)} (1/L) Σ_l log p(y | x, ψ_l)` over `examples`,
/// plus the mean per-example log-likelihood and the accuracy.
fn free_energy(
    model: &Model,
    g: &mut Graph,
    vars: &ParamVars,
    post: &PosteriorVars,
    examples: &[Example],
    samples: usize,
    prior: &GaussianPrior,
    rng: &mut SeededRng,
) -> Result<EpisodeTerm> {
    let ll = model.sample_log_lik(g, vars, post, examples, samples, rng)?;
    let expected = g.mean_axis(ll.per_sample, 0)?;
    let total = g.sum(expected)?;
    let kl = posterior_kl(g, post, prior)?;
    let loss = g.sub(kl, total)?;
    let accuracy = match ll.class_log_probs {
        Some(lp) => {
            let pred = log_mean_exp_samples(g, lp)?;
            Some(accuracy(g.value(pred), examples))
        }
        None => None,
    };
    Ok(EpisodeTerm {
        loss,
        nll: -g.value(total).item() / examples.len() as f64,
        accuracy,
    })
}

/// Amortized VI: the posterior conditions on the whole task and the
/// likelihood runs over every example, with no context/target split.
pub fn amortized_vi_loss(
    model: &Model,
    episodes: &[Episode],
    samples: usize,
    prior: &GaussianPrior,
    rng: &mut SeededRng,
) -> Result<ObjectiveOutput> {
    if samples == 0 {
        return Err(Error::contract("need at least one posterior sample"));
    }
    let order = canonical(episodes)?;
    run_batch(&order, &model.params, rng, |g, vars, ep, erng| {
        let whole = ep.merged();
        let post = adaptation::posterior_vars(model, g, vars, &whole)?;
        free_energy(model, g, vars, &post, &whole.context, samples, prior, erng)
    })
}

/// Settings for a per-task variational fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViFit {
    pub steps: usize,
    pub learning_rate: f64,
    pub samples: usize,
    pub prior: GaussianPrior,
    pub init_log_var: f64,
    /// Decay the step size linearly to zero over the fit.
    pub decay: bool,
}

impl Default for ViFit {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.05,
            samples: 10,
            prior: GaussianPrior::standard(),
            init_log_var: -2.0,
            decay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViFitResult {
    pub posterior: TaskPosterior,
    pub report: ObjectiveReport,
    pub stats: AdaptStats,
}

fn free_posterior_store(model: &Model, episode: &Episode, init_log_var: f64) -> Result<ParameterStore> {
    let (rows, cols) = model.free_posterior_dims(episode);
    let mut q = ParameterStore::new();
    q.insert("phi.q.mean", Tensor::zeros(&[rows, cols]))?;
    q.insert("phi.q.log_var", Tensor::filled(&[rows, cols], init_log_var))?;
    if matches!(model.spec, NetworkSpec::Classifier(_)) {
        q.insert("phi.q.bias_mean", Tensor::zeros(&[1, cols]))?;
        q.insert("phi.q.bias_log_var", Tensor::filled(&[1, cols], init_log_var))?;
    }
    Ok(q)
}

/// The free posterior as leaves, plus the leaves by name.
fn free_posterior_vars(g: &mut Graph, q: &ParameterStore) -> Result<(PosteriorVars, ParamVars)> {
    let qv = q.load(g, &[Role::Amortization]);
    let (mean, log_var) = (qv.get("phi.q.mean")?, qv.get("phi.q.log_var")?);
    let post = if q.get("phi.q.bias_mean").is_ok() {
        PosteriorVars::Logits(LogitPosterior {
            w_mean: mean,
            b_mean: qv.get("phi.q.bias_mean")?,
            w_log_var: Some(log_var),
            b_log_var: Some(qv.get("phi.q.bias_log_var")?),
        })
    } else {
        PosteriorVars::Latent {
            mean,
            log_var: Some(log_var),
        }
    };
    Ok((post, qv))
}

/// Fits a Gaussian `q` to the episode's context by Adam on the ELBO, with
/// the network frozen. Starts from mean 0 and log-variance `init_log_var`.
pub fn nonamortized_vi_fit(model: &Model, episode: &Episode, fit: &ViFit, rng: &mut SeededRng) -> Result<ViFitResult> {
    if fit.steps == 0 {
        return Err(Error::contract("a variational fit needs at least one step"));
    }
    if fit.samples == 0 {
        return Err(Error::contract("need at least one posterior sample"));
    }
    if episode.context.is_empty() {
        return Err(Error::contract("nothing to fit"));
    }
    let mut q = free_posterior_store(model, episode, fit.init_log_var)?;
    let mut adam = AdamState::new();
    let mut last = (f64::NAN, f64::NAN, None);
    let mut backward = 0;
    for it in 0..fit.steps {
        let step = (|| -> Result<((f64, f64, Option<f64>), BTreeMap<String, Tensor>)> {
            let mut g = Graph::new();
            let vars = model.load(&mut g, &[]);
            let (post, leaves) = free_posterior_vars(&mut g, &q)?;
            let term = free_energy(model, &mut g, &vars, &post, &episode.context, fit.samples, &fit.prior, rng)?;
            let value = g.value(term.loss).item();
            if !value.is_finite() {
                return Err(Error::domain("elbo", "non-finite free energy"));
            }
            let grads = g.backward(term.loss)?;
            let named = leaves.iter().map(|(n, v)| (n.to_string(), grads.wrt(v).clone())).collect();
            Ok(((value, term.nll, term.accuracy), named))
        })();
        let (summary, grads) = step.map_err(|e| match e {
            e if e.is_numeric() => Error::Optimization {
                iteration: it,
                detail: e.to_string(),
            },
            e => e,
        })?;
        backward += 1;
        let lr = if fit.decay {
            fit.learning_rate * (1.0 - it as f64 / fit.steps as f64)
        } else {
            fit.learning_rate
        };
        adam.update(&mut q, &grads, lr)?;
        if q.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Optimization {
                iteration: it,
                detail: "variational parameters diverged".into(),
            });
        }
        last = summary;
    }
    let mut g = Graph::new();
    let posterior = free_posterior_vars(&mut g, &q)?.0.to_task_posterior(&g)?;
    Ok(ViFitResult {
        posterior,
        report: ObjectiveReport {
            loss: last.0,
            episode_nll: vec![last.1],
            episode_accuracy: last.2.into_iter().collect(),
            grad_norms: BTreeMap::new(),
        },
        stats: AdaptStats {
            gradient_evaluations: backward,
            optimizer_steps: fit.steps,
        },
    })
}

/// Variational EM for the network: per episode, fit `q` to the whole task
/// with the network frozen, then take the ELBO gradient w.r.t. the network
/// at that fixed `q`.
pub fn nonamortized_vi_loss(model: &Model, episodes: &[Episode], fit: &ViFit, rng: &mut SeededRng) -> Result<ObjectiveOutput> {
    let order = canonical(episodes)?;
    run_batch(&order, &model.params, rng, |g, vars, ep, erng| {
        let whole = ep.merged();
        let fitted = nonamortized_vi_fit(model, &whole, fit, erng)?;
        let post = fitted.posterior.to_vars(g)?;
        free_energy(model, g, vars, &post, &whole.context, fit.samples, &fit.prior, erng)
    })
}

/// A mean with a Student-t 95% half-width (absent for fewer than two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: Option<f64>,
}

/// Mean and 95% Student-t half-width `t₀.₉₇₅(n−1) · σ/√n`, with `σ` the
/// population standard deviation.
pub fn t_interval(values: &[f64]) -> Interval {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    if n < 2 {
        return Interval { mean, half_width: None };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let half_width = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .ok()
        .map(|t| t.inverse_cdf(0.975) * (var / n as f64).sqrt());
    Interval { mean, half_width }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub nll: Interval,
    pub accuracy: Option<Interval>,
    pub episodes: usize,
    pub episode_nll: Vec<f64>,
    pub episode_accuracy: Vec<f64>,
    /// Backward passes spent adapting, summed over episodes.
    pub gradient_evaluations: usize,
    pub optimizer_steps: usize,
}

/// How test-time posteriors are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inference {
    /// The model's own adaptation strategy.
    Amortized,
    /// Per-task variational fits on each context set.
    NonAmortized(ViFit),
}

/// Scores `posterior` on the episode's targets: mean NLL and accuracy.
pub fn score_posterior(
    model: &Model,
    episode: &Episode,
    posterior: &TaskPosterior,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<(f64, Option<f64>)> {
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let post = posterior.to_vars(&mut g)?;
    let pred = predictive(model, &mut g, &vars, &post, &episode.target, samples, rng)?;
    let nll = -g.value(pred.target_log_prob).values().iter().sum::<f64>() / episode.target.len() as f64;
    let acc = pred.class_log_probs.map(|c| accuracy(g.value(c), &episode.target));
    Ok((nll, acc))
}

pub fn evaluate(model: &Model, episodes: &[Episode], samples: usize, inference: &Inference, rng: &mut SeededRng) -> Result<EvalMetrics> {
    if samples == 0 {
        return Err(Error::contract("need at least one posterior sample"));
    }
    let base = rng.next_u64();
    let mut nll = Vec::with_capacity(episodes.len());
    let mut acc = Vec::new();
    let mut stats = AdaptStats::default();
    for ep in episodes {
        ep.validate()?;
        let mut erng = episode_stream(base, ep);
        let (post, s) = match inference {
            Inference::Amortized => adaptation::adapt(model, ep)?,
            Inference::NonAmortized(fit) => {
                let r = nonamortized_vi_fit(model, ep, fit, &mut erng)?;
                (r.posterior, r.stats)
            }
        };
        stats.gradient_evaluations += s.gradient_evaluations;
        stats.optimizer_steps += s.optimizer_steps;
        let (n, a) = score_posterior(model, ep, &post, samples, &mut erng)?;
        nll.push(n);
        acc.extend(a);
    }
    Ok(EvalMetrics {
        nll: t_interval(&nll),
        accuracy: (!acc.is_empty()).then(|| t_interval(&acc)),
        episodes: episodes.len(),
        episode_nll: nll,
        episode_accuracy: acc,
        gradient_evaluations: stats.gradient_evaluations,
        optimizer_steps: stats.optimizer_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::Strategy;
    use crate::nets::classifier::ClassifierSpec;
    use crate::nets::toy::{optimal_toy_params, ToyInference, ToyNetSpec, TOY_PARAMS};
    use crate::oracle;
    use crate::tasks::cluster::{sample_cluster_episode, ClusterTaskSpec};
    use crate::tasks::toy::{context_values, sample_toy_episode, target_values, ToyModelSpec};

    fn toy_model(inference: ToyInference) -> Model {
        let spec = NetworkSpec::Toy(ToyNetSpec {
            model: ToyModelSpec::default(),
            inference,
        });
        Model::init(spec, Strategy::Versa, 0.5, 0, &mut SeededRng::new(0)).unwrap()
    }

    fn toy_episodes(count: u64) -> Vec<Episode> {
        let spec = ToyModelSpec::default();
        (0..count)
            .map(|i| sample_toy_episode(&spec, i, &mut SeededRng::new(i)).episode)
            .collect()
    }

    fn classifier(strategy: Strategy, spec: ClassifierSpec) -> Model {
        Model::init(NetworkSpec::Classifier(spec), strategy, 0.5, 5, &mut SeededRng::new(3)).unwrap()
    }

    fn cluster(scale: f64, std: f64, id: u64) -> Episode {
        let spec = ClusterTaskSpec {
            mean_scale: scale,
            cluster_std: std,
            ..Default::default()
        };
        sample_cluster_episode(&spec, id, &mut SeededRng::new(id)).episode
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let m = classifier(Strategy::Prototypical, ClassifierSpec::identity(4, vec![]));
        let eps: Vec<Episode> = (0..3).map(|i| cluster(100.0, 0.0, i)).collect();
        let out = mlpip_loss(&m, &eps, 1, &mut SeededRng::new(0)).unwrap();
        assert!(out.report.loss < 1e-12, "{}", out.report.loss);
        assert!(out.report.episode_accuracy.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn point_posteriors_make_the_loss_sample_free() {
        let m = classifier(Strategy::AmortizedMap, ClassifierSpec::desk(4));
        let eps: Vec<Episode> = (0..2).map(|i| cluster(1.0, 0.3, i)).collect();
        let a = mlpip_loss(&m, &eps, 1, &mut SeededRng::new(1)).unwrap().report.loss;
        let b = mlpip_loss(&m, &eps, 12, &mut SeededRng::new(2)).unwrap().report.loss;
        assert!((a - b).abs() < 1e-12);
        let direct: f64 = eps
            .iter()
            .map(|ep| {
                let (post, _) = adaptation::adapt(&m, ep).unwrap();
                score_posterior(&m, ep, &post, 1, &mut SeededRng::new(0)).unwrap().0
            })
            .sum::<f64>()
            / 2.0;
        assert!((a - direct).abs() < 1e-12);
    }

    #[test]
    fn true_posterior_loss_matches_quadrature() {
        let m = toy_model(ToyInference::TruePosterior);
        let spec = ToyModelSpec::default();
        for ep in toy_episodes(3) {
            let post = oracle::true_posterior(&spec, &context_values(&ep));
            let expected = oracle::expected_nll(post.mean, post.variance, &spec, &target_values(&ep));
            let got = mlpip_loss(&m, std::slice::from_ref(&ep), 10_000, &mut SeededRng::new(ep.task_id)).unwrap();
            assert!((got.report.loss - expected).abs() < 0.01, "{} vs {expected}", got.report.loss);
        }
    }

    #[test]
    fn amortized_free_energy_matches_the_exact_elbo() {
        let mut m = toy_model(ToyInference::Amortized);
        let spec = ToyModelSpec::default();
        let n = spec.shots + spec.targets;
        for (name, v) in TOY_PARAMS.iter().zip(optimal_toy_params(&spec, n)) {
            m.params.set(name, Tensor::row(vec![v])).unwrap();
        }
        let ep = &toy_episodes(1)[0];
        let all: Vec<f64> = context_values(ep).into_iter().chain(target_values(ep)).collect();
        let post = oracle::true_posterior(&spec, &all);
        let loss = amortized_vi_loss(
            &m,
            std::slice::from_ref(ep),
            20_000,
            &GaussianPrior::standard(),
            &mut SeededRng::new(4),
        )
        .unwrap()
        .report
        .loss;
        let elbo = oracle::toy_elbo(&spec, &all, post.mean, post.variance);
        assert!((elbo - post.log_evidence).abs() < 1e-10);
        assert!((loss + elbo).abs() < 0.01, "{loss} vs {}", -elbo);
    }

    #[test]
    fn kl_of_the_prior_to_itself_is_zero_and_grows_with_spread() {
        let mut g = Graph::new();
        let mean = g.constant(Tensor::zeros(&[1, 6]));
        let lv = g.constant(Tensor::zeros(&[1, 6]));
        let post = PosteriorVars::Latent { mean, log_var: Some(lv) };
        let kl = posterior_kl(&mut g, &post, &GaussianPrior::standard()).unwrap();
        assert_eq!(g.value(kl).item(), 0.0);
        // A unit shift of every mean coordinate adds ½ per coordinate.
        let shifted = g.constant(Tensor::filled(&[1, 6], 1.0));
        let post = PosteriorVars::Latent {
            mean: shifted,
            log_var: Some(lv),
        };
        let kl = posterior_kl(&mut g, &post, &GaussianPrior::standard()).unwrap();
        assert!((g.value(kl).item() - 3.0).abs() < 1e-15);
        let point = PosteriorVars::Latent { mean, log_var: None };
        assert!(matches!(
            posterior_kl(&mut g, &point, &GaussianPrior::standard()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn interval_uses_the_t_quantile() {
        let i = t_interval(&[1.0, 2.0]);
        assert_eq!(i.mean, 1.5);
        assert!((i.half_width.unwrap() - 12.706_204_736 * 0.5 / 2f64.sqrt()).abs() < 1e-6);
        assert_eq!(t_interval(&[3.0]).half_width, None);
    }

    #[test]
    fn uniform_predictions_score_log_way() {
        let m = classifier(Strategy::Prototypical, ClassifierSpec::identity(4, vec![]));
        let mut eps: Vec<Episode> = (0..4).map(|i| cluster(1.0, 0.3, i)).collect();
        for ep in &mut eps {
            for e in &mut ep.context {
                e.input = vec![0.5; 4];
            }
        }
        let metrics = evaluate(&m, &eps, 1, &Inference::Amortized, &mut SeededRng::new(0)).unwrap();
        assert!((metrics.nll.mean - 5f64.ln()).abs() < 1e-12);
        assert!(metrics.nll.half_width.unwrap() < 1e-12);
    }

    #[test]
    fn batch_order_does_not_change_the_loss() {
        let m = classifier(Strategy::Versa, ClassifierSpec::desk(4));
        let eps: Vec<Episode> = (0..4).map(|i| cluster(1.0, 0.3, i)).collect();
        let mut rev = eps.clone();
        rev.reverse();
        let a = mlpip_loss(&m, &eps, 5, &mut SeededRng::new(9)).unwrap();
        let b = mlpip_loss(&m, &rev, 5, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a.report.loss, b.report.loss);
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn vi_fit_needs_steps_and_is_deterministic() {
        let m = toy_model(ToyInference::Amortized);
        let ep = &toy_episodes(1)[0];
        let zero = ViFit {
            steps: 0,
            ..ViFit::default()
        };
        assert!(matches!(
            nonamortized_vi_fit(&m, ep, &zero, &mut SeededRng::new(0)),
            Err(Error::Contract(_))
        ));
        let one = ViFit {
            steps: 1,
            ..ViFit::default()
        };
        let r = nonamortized_vi_fit(&m, ep, &one, &mut SeededRng::new(0)).unwrap();
        assert_eq!(r.stats.optimizer_steps, 1);
        let fit = ViFit::default();
        let a = nonamortized_vi_fit(&m, ep, &fit, &mut SeededRng::new(5)).unwrap();
        let b = nonamortized_vi_fit(&m, ep, &fit, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vi_fit_recovers_the_toy_posterior() {
        let m = toy_model(ToyInference::Amortized);
        let spec = ToyModelSpec::default();
        let ep = &toy_episodes(1)[0];
        let fit = ViFit {
            steps: 2000,
            samples: 100,
            ..ViFit::default()
        };
        let r = nonamortized_vi_fit(&m, ep, &fit, &mut SeededRng::new(2)).unwrap();
        let TaskPosterior::Latent(q) = r.posterior else {
            panic!("toy posterior is latent")
        };
        let truth = oracle::true_posterior(&spec, &context_values(ep));
        let kl = oracle::gaussian_kl(q.mean()[0], q.variance()[0], truth.mean, truth.variance);
        assert!(kl < 1e-3, "{kl}");
    }

    #[test]
    fn variational_objectives_need_gaussian_posteriors() {
        let m = classifier(Strategy::AmortizedMap, ClassifierSpec::desk(4));
        let eps = vec![cluster(1.0, 0.3, 0)];
        let err = amortized_vi_loss(&m, &eps, 2, &GaussianPrior::standard(), &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
