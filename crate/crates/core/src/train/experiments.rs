//! Experiment drivers behind the CLI and the acceptance suite.

use std::fmt::Write as _;
use std::fs;

use serde::{Deserialize, Serialize};

use super::config::{Dataset, TrainConfig};
use super::run::{train, TrainOutcome};
use super::source::{Split, TaskSource};
use crate::adaptation::{self, Strategy};
use crate::autodiff::{check_op, finite_difference_check_many, Graph, Tensor, ALL_OPS};
use crate::distributions::ClassFactor;
use crate::error::{Error, Result};
use crate::nets::{views::reconstruct, ClassifierSpec, Model, NetworkSpec, ParamVars, TaskPosterior, ViewSpec};
use crate::objectives::{self, Inference, Interval};
use crate::oracle;
use crate::rng::SeededRng;
use crate::tasks::toy::context_values;
use crate::tasks::Episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub task_id: u64,
    pub true_mean: f64,
    pub true_variance: f64,
    pub q_mean: f64,
    pub q_variance: f64,
    /// `KL(true ‖ q)`.
    pub kl: f64,
    pub observations: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyExperiment {
    pub rows: Vec<ToyRow>,
    pub mean_kl: f64,
    pub outcome: TrainOutcome,
}

fn toy_q(model: &Model, episode: &Episode) -> Result<(f64, f64)> {
    match adaptation::adapt(model, episode)?.0 {
        TaskPosterior::Latent(ClassFactor::Gaussian(d)) => Ok((d.mean()[0], d.variance()[0])),
        TaskPosterior::Latent(ClassFactor::Point(m)) => Ok((m[0], 0.0)),
        TaskPosterior::Classes(_) => Err(Error::contract("toy model produced class factors")),
    }
}

/// `KL(true posterior ‖ q)` on `count` held-out toy tasks.
pub fn toy_kl_rows(config: &TrainConfig, model: &Model, count: usize) -> Result<Vec<ToyRow>> {
    let source = TaskSource::new(config);
    let spec = config.toy_spec();
    (0..count as u64)
        .map(|i| {
            let task = source.toy_task(Split::Test, i);
            let ys = context_values(&task.episode);
            let truth = oracle::true_posterior(&spec, &ys);
            let (q_mean, q_variance) = toy_q(model, &task.episode)?;
            Ok(ToyRow {
                task_id: task.episode.task_id,
                true_mean: truth.mean,
                true_variance: truth.variance,
                q_mean,
                q_variance,
                kl: oracle::gaussian_kl(truth.mean, truth.variance, q_mean, q_variance),
                observations: ys,
            })
        })
        .collect()
}

pub fn toy_rows_csv(rows: &[ToyRow]) -> String {
    let mut out = String::from("task_id,true_mean,true_variance,q_mean,q_variance,kl,observations\n");
    for r in rows {
        let obs: Vec<String> = r.observations.iter().map(f64::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.task_id,
            r.true_mean,
            r.true_variance,
            r.q_mean,
            r.q_variance,
            r.kl,
            obs.join(" ")
        );
    }
    out
}

/// Trains the linear toy amortization and scores it on 100 fresh tasks;
/// writes `toy_posteriors.csv` next to the run's other outputs.
pub fn run_toy_experiment(config: &TrainConfig) -> Result<ToyExperiment> {
    if config.dataset != Dataset::Toy {
        return Err(Error::Config("the toy experiment needs dataset = toy".into()));
    }
    let outcome = train(config)?;
    let rows = toy_kl_rows(config, &outcome.model, 100)?;
    fs::write(config.output_dir.join("toy_posteriors.csv"), toy_rows_csv(&rows))?;
    let mean_kl = rows.iter().map(|r| r.kl).sum::<f64>() / rows.len() as f64;
    Ok(ToyExperiment { rows, mean_kl, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub way: usize,
    pub shot: usize,
    pub accuracy: Interval,
    pub nll: Interval,
    pub gradient_evaluations: usize,
    pub optimizer_steps: usize,
    pub amortization_parameters: usize,
}

/// Evaluates one trained model at every `(way, shot)` without touching its
/// parameters.
pub fn run_versatility_sweep(
    config: &TrainConfig,
    model: &Model,
    ways: &[usize],
    shots: &[usize],
    episodes: usize,
) -> Result<Vec<SweepCell>> {
    if model.is_way_dependent() {
        return Err(Error::contract(format!(
            "strategy {:?} has parameters sized by the number of classes",
            model.strategy
        )));
    }
    if !matches!(config.dataset, Dataset::Cluster | Dataset::Glyph) {
        return Err(Error::contract("the versatility sweep needs a classification dataset"));
    }
    let source = TaskSource::new(config);
    let mut cells = Vec::new();
    for &way in ways {
        for &shot in shots {
            let eps = source.held_out(Split::Test, way, shot, episodes)?;
            let mut rng = SeededRng::stream(config.seed, 4);
            let m = objectives::evaluate(model, &eps, config.l_test, &Inference::Amortized, &mut rng)?;
            cells.push(SweepCell {
                way,
                shot,
                accuracy: m.accuracy.ok_or_else(|| Error::contract("sweep needs classification metrics"))?,
                nll: m.nll,
                gradient_evaluations: m.gradient_evaluations,
                optimizer_steps: m.optimizer_steps,
                amortization_parameters: model.amortization_parameter_count(),
            });
        }
    }
    Ok(cells)
}

/// Mean accuracy of the Bayes classifier on held-out cluster episodes.
pub fn cluster_bayes_accuracy(config: &TrainConfig, count: usize) -> Result<f64> {
    let source = TaskSource::new(config);
    let mut total = 0.0;
    for i in 0..count as u64 {
        let task = source.cluster_task(Split::Test, config.way, config.shot, i)?;
        let spec = source.cluster_spec(config.way, config.shot);
        let points = task
            .episode
            .target
            .iter()
            .map(|e| (e.input.as_slice(), e.class().unwrap_or(usize::MAX)));
        total += oracle::bayes_accuracy(&task.class_means, &spec, points);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub model_mse: f64,
    /// MSE of predicting every target view by the mean context image.
    pub baseline_mse: f64,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Reconstruction error on the held-out views of `count` test sprites.
pub fn evaluate_views(config: &TrainConfig, model: &Model, count: usize) -> Result<Vec<ViewScore>> {
    let source = TaskSource::new(config);
    (0..count as u64)
        .map(|i| {
            let ep = source.view_task(Split::Test, i)?.episode;
            let (post, _) = adaptation::adapt(model, &ep)?;
            let angles: Vec<f64> = ep.target.iter().map(|e| e.input[0]).collect();
            let recon = reconstruct(model, &post, &angles)?;
            let pixels = ep.context[0].values().map_or(0, <[f64]>::len);
            let mut mean_ctx = vec![0.0; pixels];
            for e in &ep.context {
                for (m, v) in mean_ctx.iter_mut().zip(e.values().unwrap_or(&[])) {
                    *m += v / ep.context.len() as f64;
                }
            }
            let (mut model_err, mut base_err) = (0.0, 0.0);
            for (e, r) in ep.target.iter().zip(&recon) {
                let y = e.values().unwrap_or(&[]);
                model_err += mse(r, y);
                base_err += mse(&mean_ctx, y);
            }
            let m = ep.target.len() as f64;
            Ok(ViewScore {
                model_mse: model_err / m,
                baseline_mse: base_err / m,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    /// Worst relative error over all instances.
    pub max_error: f64,
}

/// Finite-difference check of the loss of a whole episode with respect to
/// every parameter of `model`, with the Monte-Carlo noise held fixed.
pub fn pipeline_gradient_error(model: &Model, episode: &Episode, samples: usize, noise_seed: u64) -> Result<f64> {
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let points: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    finite_difference_check_many(
        |g: &mut Graph, vars| {
            let pv = ParamVars::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let post = adaptation::posterior_vars(model, g, &pv, episode)?;
            let mut rng = SeededRng::new(noise_seed);
            let pred = objectives::predictive(model, g, &pv, &post, &episode.target, samples, &mut rng)?;
            let mean = g.mean_all(pred.target_log_prob)?;
            g.neg(mean)
        },
        &points,
        1e-6,
    )
}

fn tiny_classifier() -> ClassifierSpec {
    ClassifierSpec {
        input_dim: 3,
        extractor_hidden: vec![4],
        feature_dim: Some(3),
        amortization_hidden: vec![4],
        activation: Default::default(),
        log_var_bias: -1.0,
    }
}

fn tiny_views() -> ViewSpec {
    ViewSpec {
        image_dim: 6,
        encoder_hidden: vec![3],
        view_hidden: vec![3],
        latent_dim: 2,
        generator_hidden: vec![3],
        pixel_std: 0.5,
        ..ViewSpec::default()
    }
}

fn random_class_episode(rng: &mut SeededRng, task_id: u64) -> Episode {
    let spec = crate::tasks::cluster::ClusterTaskSpec {
        input_dim: 3,
        way: 3,
        shot: 2,
        targets_per_class: 2,
        cluster_std: 0.5,
        mean_scale: 1.0,
    };
    crate::tasks::cluster::sample_cluster_episode(&spec, task_id, rng).episode
}

fn random_view_episode(rng: &mut SeededRng, task_id: u64) -> Episode {
    use crate::tasks::{Example, Target};
    let mut view = |_| Example {
        input: vec![rng.uniform_range(0.0, std::f64::consts::TAU)],
        target: Target::Values((0..6).map(|_| rng.uniform()).collect()),
    };
    let context: Vec<Example> = (0..2).map(&mut view).collect();
    let target: Vec<Example> = (0..3).map(&mut view).collect();
    Episode {
        task_id,
        seed: 0,
        way: 0,
        shot: 2,
        context,
        target,
        context_ids: vec![0, 1],
        target_ids: vec![2, 3, 4],
    }
}

/// The op suite and the full-pipeline checks, `instances` random cases each.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for (k, name) in ALL_OPS.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let mut rng = SeededRng::keyed(seed, k as u64, i as u64);
            worst = worst.max(check_op(name, &mut rng)?);
        }
        out.push(GradCheck {
            name: format!("op:{name}"),
            max_error: worst,
        });
    }
    let pipelines: [(&str, Strategy, bool); 4] = [
        ("pipeline:versa", Strategy::Versa, false),
        ("pipeline:one-step-gradient", Strategy::OneStepGradient, false),
        ("pipeline:prototypical", Strategy::Prototypical, false),
        ("pipeline:views", Strategy::Versa, true),
    ];
    for (p, (name, strategy, views)) in pipelines.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let mut rng = SeededRng::keyed(seed, 100 + p as u64, i as u64);
            let spec = if views {
                NetworkSpec::Views(tiny_views())
            } else {
                NetworkSpec::Classifier(tiny_classifier())
            };
            let mut model = Model::init(spec, strategy, 0.3, 3, &mut rng)?;
            if strategy == Strategy::OneStepGradient {
                for name in ["psi0.w", "psi0.b"] {
                    let shape = model.params.get(name)?.shape().to_vec();
                    let n = shape.iter().product();
                    let noisy = rng.normals(n).into_iter().map(|v| 0.3 * v).collect();
                    model.params.set(name, Tensor::new(shape, noisy)?)?;
                }
            }
            let ep = if views {
                random_view_episode(&mut rng, i as u64)
            } else {
                random_class_episode(&mut rng, i as u64)
            };
            worst = worst.max(pipeline_gradient_error(&model, &ep, 3, rng.next_u64())?);
        }
        out.push(GradCheck {
            name: name.to_string(),
            max_error: worst,
        });
    }
    Ok(out)
}

/// Episodes for export, drawn from the training stream.
pub fn export_tasks(config: &TrainConfig, count: usize) -> Result<Vec<Episode>> {
    let source = TaskSource::new(config);
    (0..count as u64)
        .map(|i| source.episode(Split::Train, config.way, config.shot, i))
        .collect()
}
