//! The episodic training loop, metrics file and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Dataset, TrainConfig};
use super::source::{Split, TaskSource};
use crate::distributions::GaussianPrior;
use crate::error::{Error, Result};
use crate::nets::{ClassifierSpec, Model, NetworkSpec, ToyNetSpec, ViewSpec};
use crate::objectives::{self, EvalMetrics, Inference, Objective, ObjectiveOutput};
use crate::optim::AdamState;
use crate::rng::SeededRng;

pub const METRICS_HEADER: &str = "iteration,loss,val_nll,val_acc,wall_ms";
const INIT_STREAM: u64 = 1;
const OBJECTIVE_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

/// Saved model plus the state needed to continue or audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: crate::nets::ParameterStore,
    pub strategy: crate::adaptation::Strategy,
    pub eta: f64,
    pub iteration: usize,
    pub val_nll: Option<f64>,
    pub config: TrainConfig,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn model(&self) -> Model {
        Model {
            spec: self.spec.clone(),
            strategy: self.strategy,
            eta: self.eta,
            params: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.spec.validate()?;
        c.params.validate()?;
        Ok(c)
    }
}

/// The network a dataset is trained with unless the config overrides it.
pub fn default_network(config: &TrainConfig) -> NetworkSpec {
    if let Some(n) = &config.network {
        return n.clone();
    }
    match config.dataset {
        Dataset::Toy => NetworkSpec::Toy(ToyNetSpec {
            model: config.toy_spec(),
            inference: Default::default(),
        }),
        Dataset::Cluster => NetworkSpec::Classifier(ClassifierSpec::desk(config.cluster.input_dim)),
        Dataset::Glyph => NetworkSpec::Classifier(ClassifierSpec::desk(crate::tasks::glyph::PIXELS)),
        Dataset::Views => NetworkSpec::Views(ViewSpec::default()),
    }
}

pub fn init_model(config: &TrainConfig) -> Result<Model> {
    let mut rng = SeededRng::stream(config.seed, INIT_STREAM);
    Model::init(default_network(config), config.strategy, config.eta, config.way, &mut rng)
}

/// How a config's models are evaluated on held-out episodes.
pub fn inference_for(config: &TrainConfig) -> Inference {
    match config.objective {
        Objective::NonamortizedVi => Inference::NonAmortized(config.vi_fit),
        _ => Inference::Amortized,
    }
}

pub fn prior_for(config: &TrainConfig) -> GaussianPrior {
    GaussianPrior {
        mean: 0.0,
        variance: config.prior_variance,
    }
}

/// One objective evaluation on a batch.
pub fn objective_step(
    config: &TrainConfig,
    model: &Model,
    episodes: &[crate::tasks::Episode],
    rng: &mut SeededRng,
) -> Result<ObjectiveOutput> {
    match config.objective {
        Objective::Mlpip => objectives::mlpip_loss(model, episodes, config.l_train, rng),
        Objective::AmortizedVi => objectives::amortized_vi_loss(model, episodes, config.l_train, &prior_for(config), rng),
        Objective::NonamortizedVi => objectives::nonamortized_vi_loss(model, episodes, &config.vi_fit, rng),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub val_nll: f64,
    pub val_acc: Option<f64>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub rows: Vec<MetricsRow>,
    /// Training loss of every iteration, in order.
    pub losses: Vec<f64>,
    pub metrics_path: PathBuf,
}

pub fn validation_metrics(config: &TrainConfig, source: &TaskSource, model: &Model) -> Result<EvalMetrics> {
    let episodes = source.held_out(Split::Validation, config.way, config.shot, config.val_episodes)?;
    let mut rng = SeededRng::stream(config.seed, VALIDATION_STREAM);
    objectives::evaluate(model, &episodes, config.l_test, &inference_for(config), &mut rng)
}

fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let acc = r.val_acc.map(|a| format!("{a}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.iteration, r.loss, r.val_nll, acc, r.wall_ms);
    }
    out
}

/// Trains per `config`, writing `metrics.csv`, `best.json` and `final.json`
/// into the output directory.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let source = TaskSource::new(config);
    let (mut model, mut adam, start) = match &config.resume {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            (c.model(), c.adam, c.iteration)
        }
        None => (init_model(config)?, AdamState::new(), 0),
    };
    fs::create_dir_all(&config.output_dir)?;
    let metrics_path = config.output_dir.join("metrics.csv");
    let clock = Instant::now();
    let checkpoint = |model: &Model, adam: &AdamState, iteration: usize, val_nll: Option<f64>| Checkpoint {
        spec: model.spec.clone(),
        params: model.params.clone(),
        strategy: model.strategy,
        eta: model.eta,
        iteration,
        val_nll,
        config: config.clone(),
        adam: adam.clone(),
    };
    let mut best = checkpoint(&model, &adam, start, None);
    let mut rows = Vec::new();
    let mut losses = Vec::with_capacity(config.iterations);
    let mut window = Vec::new();
    let end = start + config.iterations;
    for it in start..end {
        let episodes = source.train_batch(it)?;
        let mut rng = SeededRng::keyed(config.seed, OBJECTIVE_STREAM, it as u64);
        let out = objective_step(config, &model, &episodes, &mut rng).map_err(|e| abort(e, it, config))?;
        if !out.report.loss.is_finite() {
            return Err(abort(Error::domain("loss", "non-finite"), it, config));
        }
        let lr = if config.lr_decay {
            config.learning_rate * (1.0 - (it - start) as f64 / config.iterations as f64)
        } else {
            config.learning_rate
        };
        adam.update(&mut model.params, &out.grads, lr)?;
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(abort(Error::domain("adam", "parameters became non-finite"), it, config));
        }
        losses.push(out.report.loss);
        window.push(out.report.loss);
        let done = it + 1;
        if done % config.log_every == 0 || done == end {
            let val = validation_metrics(config, &source, &model)?;
            let row = MetricsRow {
                iteration: done,
                loss: window.iter().sum::<f64>() / window.len() as f64,
                val_nll: val.nll.mean,
                val_acc: val.accuracy.map(|a| a.mean),
                wall_ms: if config.wall_clock { clock.elapsed().as_millis() } else { 0 },
            };
            window.clear();
            if best.val_nll.is_none_or(|b| row.val_nll < b) {
                best = checkpoint(&model, &adam, done, Some(row.val_nll));
            }
            rows.push(row);
            fs::write(&metrics_path, render_metrics(&rows))?;
        }
    }
    if rows.is_empty() {
        fs::write(&metrics_path, render_metrics(&rows))?;
    }
    let last = checkpoint(&model, &adam, end, rows.last().map(|r| r.val_nll));
    best.save(&config.output_dir.join("best.json"))?;
    last.save(&config.output_dir.join("final.json"))?;
    Ok(TrainOutcome {
        model,
        best,
        last,
        rows,
        losses,
        metrics_path,
    })
}

fn abort(e: Error, iteration: usize, config: &TrainConfig) -> Error {
    if !e.is_numeric() {
        return e;
    }
    let echo = serde_json::to_string(config).unwrap_or_default();
    Error::Optimization {
        iteration,
        detail: format!("{e}; config: {echo}"),
    }
}
