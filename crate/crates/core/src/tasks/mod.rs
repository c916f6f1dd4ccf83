//! Seeded episodic task generators.
//!
//! Every generator is a pure function of its spec and random stream, and
//! splits each task into disjoint context and target index sets.

pub mod cluster;
pub mod glyph;
pub mod toy;
pub mod views;

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Supervision for one example: a class label or a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

/// One `(input, target)` pair; serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Vec<f64>, Target)", into = "(Vec<f64>, Target)")]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Target,
}

impl From<(Vec<f64>, Target)> for Example {
    fn from((input, target): (Vec<f64>, Target)) -> Self {
        Self { input, target }
    }
}

impl From<Example> for (Vec<f64>, Target) {
    fn from(e: Example) -> Self {
        (e.input, e.target)
    }
}

impl Example {
    pub fn class(&self) -> Option<usize> {
        match self.target {
            Target::Class(c) => Some(c),
            Target::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.target {
            Target::Values(v) => Some(v),
            Target::Class(_) => None,
        }
    }
}

/// One few-shot task: a context set and a disjoint target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task_id: u64,
    /// Per-episode key; objectives derive Monte-Carlo streams from it.
    #[serde(default)]
    pub seed: u64,
    pub way: usize,
    pub shot: usize,
    pub context: Vec<Example>,
    pub target: Vec<Example>,
    /// Item indices within the task, parallel to `context` and `target`.
    #[serde(default)]
    pub context_ids: Vec<usize>,
    #[serde(default)]
    pub target_ids: Vec<usize>,
}

impl Episode {
    pub fn is_classification(&self) -> bool {
        self.context.iter().chain(&self.target).all(|e| e.class().is_some())
    }

    /// Context count per class label `0..way`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.way];
        for e in &self.context {
            if let Some(c) = e.class() {
                if c < self.way {
                    counts[c] += 1;
                }
            }
        }
        counts
    }

    /// Indices into `context` for each class label `0..way`.
    pub fn class_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.way];
        for (i, e) in self.context.iter().enumerate() {
            if let Some(c) = e.class() {
                if c < self.way {
                    groups[c].push(i);
                }
            }
        }
        groups
    }

    pub fn context_inputs(&self) -> Result<Tensor> {
        stack_inputs(&self.context)
    }

    pub fn target_inputs(&self) -> Result<Tensor> {
        stack_inputs(&self.target)
    }

    /// Disjoint splits, labels in range, and every target class present in
    /// the context.
    pub fn validate(&self) -> Result<()> {
        if self.context_ids.len() != self.context.len() || self.target_ids.len() != self.target.len() {
            return Err(Error::contract(format!(
                "episode {}: item ids do not cover the splits",
                self.task_id
            )));
        }
        let ctx: BTreeSet<usize> = self.context_ids.iter().copied().collect();
        if ctx.len() != self.context_ids.len() || self.target_ids.iter().any(|i| ctx.contains(i)) {
            return Err(Error::contract(format!(
                "episode {}: context and target sets overlap",
                self.task_id
            )));
        }
        if self.is_classification() {
            let counts = self.class_counts();
            for e in self.context.iter().chain(&self.target) {
                let c = e.class().unwrap_or(usize::MAX);
                if c >= self.way {
                    return Err(Error::contract(format!(
                        "episode {}: label {c} outside way {}",
                        self.task_id, self.way
                    )));
                }
                if counts[c] == 0 {
                    return Err(Error::contract(format!(
                        "episode {}: class {c} has no context examples",
                        self.task_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// The whole task as one context set with no targets.
    pub fn merged(&self) -> Episode {
        Episode {
            context: self.all_examples().cloned().collect(),
            context_ids: self.context_ids.iter().chain(&self.target_ids).copied().collect(),
            target: vec![],
            target_ids: vec![],
            ..self.clone()
        }
    }

    /// All examples, context first.
    pub fn all_examples(&self) -> impl Iterator<Item = &Example> {
        self.context.iter().chain(&self.target)
    }
}

/// Builds a class-balanced episode: `shot` context and `targets_per_class`
/// target items per class, drawn by `sample(class)`. Item ids enumerate the
/// context first, then the targets.
pub(crate) fn class_episode(
    task_id: u64,
    seed: u64,
    way: usize,
    shot: usize,
    targets_per_class: usize,
    mut sample: impl FnMut(usize) -> Vec<f64>,
) -> Episode {
    let mut context = Vec::with_capacity(way * shot);
    let mut target = Vec::with_capacity(way * targets_per_class);
    for c in 0..way {
        for _ in 0..shot {
            context.push(Example {
                input: sample(c),
                target: Target::Class(c),
            });
        }
        for _ in 0..targets_per_class {
            target.push(Example {
                input: sample(c),
                target: Target::Class(c),
            });
        }
    }
    let n = context.len();
    let m = target.len();
    Episode {
        task_id,
        seed,
        way,
        shot,
        context,
        target,
        context_ids: (0..n).collect(),
        target_ids: (n..n + m).collect(),
    }
}

fn stack_inputs(examples: &[Example]) -> Result<Tensor> {
    let width = examples.first().map_or(0, |e| e.input.len());
    let rows: Vec<Vec<f64>> = examples.iter().map(|e| e.input.clone()).collect();
    Tensor::from_rows(&rows, width)
}

/// Writes episodes as JSON lines.
pub fn write_jsonl<W: Write>(mut out: W, episodes: &[Episode]) -> Result<()> {
    for ep in episodes {
        serde_json::to_writer(&mut out, ep)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<Episode>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(input: Vec<f64>, c: usize) -> Example {
        Example {
            input,
            target: Target::Class(c),
        }
    }

    #[test]
    fn example_serializes_as_pair() {
        let e = example(vec![0.5, 1.0], 3);
        assert_eq!(serde_json::to_string(&e).unwrap(), "[[0.5,1.0],3]");
        let r = Example {
            input: vec![0.1],
            target: Target::Values(vec![1.0, 0.0]),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, "[[0.1],[1.0,0.0]]");
        assert_eq!(serde_json::from_str::<Example>(&s).unwrap(), r);
    }

    #[test]
    fn validate_catches_overlap_and_missing_classes() {
        let mut ep = Episode {
            task_id: 1,
            seed: 0,
            way: 2,
            shot: 1,
            context: vec![example(vec![0.0], 0), example(vec![1.0], 1)],
            target: vec![example(vec![0.1], 0)],
            context_ids: vec![0, 1],
            target_ids: vec![2],
        };
        ep.validate().unwrap();
        ep.target_ids = vec![1];
        assert!(matches!(ep.validate(), Err(Error::Contract(_))));
        ep.target_ids = vec![2];
        ep.context[1].target = Target::Class(0);
        ep.target[0].target = Target::Class(1);
        assert!(matches!(ep.validate(), Err(Error::Contract(_))));
    }
}
