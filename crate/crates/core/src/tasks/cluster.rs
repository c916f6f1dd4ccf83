//! C-way Gaussian-cluster classification tasks.

use serde::{Deserialize, Serialize};

use super::{class_episode, Episode};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTaskSpec {
    pub input_dim: usize,
    pub way: usize,
    pub shot: usize,
    pub targets_per_class: usize,
    /// Per-coordinate standard deviation of points around their class mean.
    pub cluster_std: f64,
    /// Per-coordinate standard deviation of the class means.
    pub mean_scale: f64,
}

impl Default for ClusterTaskSpec {
    fn default() -> Self {
        Self {
            input_dim: 4,
            way: 5,
            shot: 5,
            targets_per_class: 15,
            cluster_std: 0.3,
            mean_scale: 1.0,
        }
    }
}

impl ClusterTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.way == 0 || self.shot == 0 {
            return Err(Error::Config("cluster dims, way and shot must be positive".into()));
        }
        if !(self.cluster_std >= 0.0 && self.mean_scale > 0.0) {
            return Err(Error::Config("cluster scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTask {
    pub episode: Episode,
    pub class_means: Vec<Vec<f64>>,
}

pub fn sample_cluster_episode(spec: &ClusterTaskSpec, task_id: u64, rng: &mut SeededRng) -> ClusterTask {
    let seed = rng.next_u64();
    let class_means: Vec<Vec<f64>> = (0..spec.way)
        .map(|_| (0..spec.input_dim).map(|_| rng.normal(0.0, spec.mean_scale)).collect())
        .collect();
    let episode = class_episode(task_id, seed, spec.way, spec.shot, spec.targets_per_class, |c| {
        class_means[c]
            .iter()
            .map(|&m| m + spec.cluster_std * rng.standard_normal())
            .collect()
    });
    ClusterTask { episode, class_means }
}
