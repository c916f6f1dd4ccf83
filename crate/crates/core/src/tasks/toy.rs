//! Conjugate Gaussian toy tasks: `ψ ~ N(0, σ²_ψ)`, `y ~ N(ψ, σ²_y)`.

use serde::{Deserialize, Serialize};

use super::{Episode, Example, Target};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub prior_variance: f64,
    pub obs_variance: f64,
    /// Context size `N`.
    pub shots: usize,
    /// Target size `M`.
    pub targets: usize,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            prior_variance: 1.0,
            obs_variance: 0.25,
            shots: 5,
            targets: 15,
        }
    }
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_variance > 0.0 && self.obs_variance > 0.0) {
            return Err(Error::Config("toy variances must be positive".into()));
        }
        Ok(())
    }
}

/// A toy episode plus the `ψ` that generated it (for oracle use only).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub episode: Episode,
    pub psi: f64,
}

impl ToyTask {
    /// Every observation of the task, context first.
    pub fn observations(&self) -> Vec<f64> {
        self.episode.all_examples().map(scalar).collect()
    }

    /// A fresh random context/target split of the same observations.
    pub fn resplit(&self, rng: &mut SeededRng) -> Episode {
        let mut items: Vec<(usize, Example)> = self
            .episode
            .context_ids
            .iter()
            .chain(&self.episode.target_ids)
            .copied()
            .zip(self.episode.all_examples().cloned())
            .collect();
        rng.shuffle(&mut items);
        let n = self.episode.context.len();
        let (ctx, tgt) = items.split_at(n);
        Episode {
            seed: rng.next_u64(),
            context: ctx.iter().map(|(_, e)| e.clone()).collect(),
            target: tgt.iter().map(|(_, e)| e.clone()).collect(),
            context_ids: ctx.iter().map(|(i, _)| *i).collect(),
            target_ids: tgt.iter().map(|(i, _)| *i).collect(),
            ..self.episode.clone()
        }
    }
}

pub fn scalar(e: &Example) -> f64 {
    e.values().map_or(f64::NAN, |v| v[0])
}

/// Context observations of a toy episode.
pub fn context_values(ep: &Episode) -> Vec<f64> {
    ep.context.iter().map(scalar).collect()
}

pub fn target_values(ep: &Episode) -> Vec<f64> {
    ep.target.iter().map(scalar).collect()
}

pub fn sample_toy_episode(spec: &ToyModelSpec, task_id: u64, rng: &mut SeededRng) -> ToyTask {
    let seed = rng.next_u64();
    let psi = rng.normal(0.0, spec.prior_variance.sqrt());
    let obs_std = spec.obs_variance.sqrt();
    let mut draw = |n: usize| -> Vec<Example> {
        (0..n)
            .map(|_| Example {
                input: vec![],
                target: Target::Values(vec![rng.normal(psi, obs_std)]),
            })
            .collect()
    };
    let context = draw(spec.shots);
    let target = draw(spec.targets);
    let n = spec.shots;
    ToyTask {
        episode: Episode {
            task_id,
            seed,
            way: 0,
            shot: n,
            context,
            target,
            context_ids: (0..n).collect(),
            target_ids: (n..n + spec.targets).collect(),
        },
        psi,
    }
}

/// `count` tasks with ids `0..count`, each from its own keyed stream.
pub fn toy_task_set(spec: &ToyModelSpec, seed: u64, stream: u64, count: usize) -> Vec<ToyTask> {
    (0..count as u64)
        .map(|i| sample_toy_episode(spec, i, &mut SeededRng::keyed(seed, stream, i)))
        .collect()
}
