//! Seeded episode streams for training, validation and testing.

use super::config::{Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tasks::cluster::{sample_cluster_episode, ClusterTask, ClusterTaskSpec};
use crate::tasks::glyph::{sample_glyph_episode, ClassSplit, GlyphSpec};
use crate::tasks::toy::{sample_toy_episode, toy_task_set, ToyTask};
use crate::tasks::views::{sample_view_episode, ViewTask};
use crate::tasks::Episode;

/// Which stream an episode comes from. Glyph splits also use disjoint
/// class ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 10,
            Split::Validation => 11,
            Split::Test => 12,
        }
    }

    fn id_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1 << 40,
            Split::Test => 2 << 40,
        }
    }

    fn classes(self) -> ClassSplit {
        match self {
            Split::Train => ClassSplit::Train,
            Split::Validation => ClassSplit::Validation,
            Split::Test => ClassSplit::Test,
        }
    }
}

const TOY_TASK_STREAM: u64 = 20;

#[derive(Debug, Clone)]
pub struct TaskSource {
    config: TrainConfig,
    toy_tasks: Vec<ToyTask>,
}

impl TaskSource {
    pub fn new(config: &TrainConfig) -> TaskSource {
        let toy_tasks = if config.dataset == Dataset::Toy {
            toy_task_set(&config.toy_spec(), config.seed, TOY_TASK_STREAM, config.toy_tasks)
        } else {
            vec![]
        };
        TaskSource {
            config: config.clone(),
            toy_tasks,
        }
    }

    pub fn dataset(&self) -> Dataset {
        self.config.dataset
    }

    /// The fixed toy training tasks.
    pub fn toy_tasks(&self) -> &[ToyTask] {
        &self.toy_tasks
    }

    fn rng(&self, split: Split, index: u64) -> SeededRng {
        SeededRng::keyed(self.config.seed, split.stream(), index)
    }

    pub fn cluster_spec(&self, way: usize, shot: usize) -> ClusterTaskSpec {
        let c = &self.config.cluster;
        ClusterTaskSpec {
            input_dim: c.input_dim,
            way,
            shot,
            targets_per_class: self.config.targets_per_class,
            cluster_std: c.cluster_std,
            mean_scale: c.mean_scale,
        }
    }

    pub fn glyph_spec(&self) -> GlyphSpec {
        GlyphSpec {
            jitter: self.config.glyph.jitter,
            noise: self.config.glyph.noise,
            targets_per_class: self.config.targets_per_class,
        }
    }

    /// Episode `index` of `split`. Training toy episodes resplit one of the
    /// fixed tasks; held-out toy episodes are fresh tasks.
    pub fn episode(&self, split: Split, way: usize, shot: usize, index: u64) -> Result<Episode> {
        let mut rng = self.rng(split, index);
        let id = split.id_offset() + index;
        match self.config.dataset {
            Dataset::Toy => {
                if split == Split::Train {
                    let task = &self.toy_tasks[rng.below(self.toy_tasks.len())];
                    Ok(task.resplit(&mut rng))
                } else {
                    Ok(self.toy_task(split, index).episode)
                }
            }
            Dataset::Cluster => Ok(sample_cluster_episode(&self.cluster_spec(way, shot), id, &mut rng).episode),
            Dataset::Glyph => sample_glyph_episode(&self.glyph_spec(), split.classes(), way, shot, id, &mut rng),
            Dataset::Views => Ok(sample_view_episode(shot, id, &mut rng)?.episode),
        }
    }

    /// A held-out toy task with its generating `ψ`.
    pub fn toy_task(&self, split: Split, index: u64) -> ToyTask {
        sample_toy_episode(&self.config.toy_spec(), split.id_offset() + index, &mut self.rng(split, index))
    }

    pub fn cluster_task(&self, split: Split, way: usize, shot: usize, index: u64) -> Result<ClusterTask> {
        if self.config.dataset != Dataset::Cluster {
            return Err(Error::contract("not a cluster dataset"));
        }
        let mut rng = self.rng(split, index);
        Ok(sample_cluster_episode(
            &self.cluster_spec(way, shot),
            split.id_offset() + index,
            &mut rng,
        ))
    }

    pub fn view_task(&self, split: Split, index: u64) -> Result<ViewTask> {
        sample_view_episode(self.config.shot, split.id_offset() + index, &mut self.rng(split, index))
    }

    pub fn train_batch(&self, iteration: usize) -> Result<Vec<Episode>> {
        let b = self.config.tasks_per_batch;
        (0..b)
            .map(|i| self.episode(Split::Train, self.config.way, self.config.shot, (iteration * b + i) as u64))
            .collect()
    }

    pub fn held_out(&self, split: Split, way: usize, shot: usize, count: usize) -> Result<Vec<Episode>> {
        (0..count as u64).map(|i| self.episode(split, way, shot, i)).collect()
    }
}

impl TrainConfig {
    /// Toy generator settings with the configured shot count.
    pub fn toy_spec(&self) -> crate::tasks::toy::ToyModelSpec {
        crate::tasks::toy::ToyModelSpec {
            shots: self.shot,
            ..self.toy
        }
    }
}
