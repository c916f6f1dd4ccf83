//! Linear amortization for the conjugate toy model:
//! `q(ψ | D) = N(w_μ Σy + b_μ, exp(w_σ Σy + b_σ))`.

use serde::{Deserialize, Serialize};

use super::{ParamVars, ParameterStore, SampleLogLik};
use crate::autodiff::{Graph, Tensor, Var};
use crate::distributions::gaussian_log_density_fixed;
use crate::error::{Error, Result};
use crate::oracle;
use crate::tasks::toy::{context_values, ToyModelSpec};
use crate::tasks::{Episode, Example};

pub const TOY_PARAMS: [&str; 4] = ["phi.w_mu", "phi.b_mu", "phi.w_sigma", "phi.b_sigma"];

/// How the toy posterior is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyInference {
    #[default]
    Amortized,
    /// The analytic posterior from the oracle; for checking objectives.
    TruePosterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ToyNetSpec {
    pub model: ToyModelSpec,
    #[serde(default)]
    pub inference: ToyInference,
}

impl ToyNetSpec {
    /// All four amortization scalars start at zero, so `q = N(0, 1)`.
    pub(crate) fn init(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for name in TOY_PARAMS {
            store.insert(name, Tensor::zeros(&[1, 1]))?;
        }
        Ok(store)
    }

    /// `[1 × 1]` mean and log-variance of `q(ψ | context)`.
    pub fn posterior(&self, g: &mut Graph, vars: &ParamVars, episode: &Episode) -> Result<(Var, Var)> {
        let ys = context_values(episode);
        match self.inference {
            ToyInference::TruePosterior => {
                let p = oracle::true_posterior(&self.model, &ys);
                Ok((
                    g.constant(Tensor::row(vec![p.mean])),
                    g.constant(Tensor::row(vec![p.variance.ln()])),
                ))
            }
            ToyInference::Amortized => {
                let s = g.constant(Tensor::row(vec![ys.iter().sum()]));
                let affine = |g: &mut Graph, w: &str, b: &str| -> Result<Var> {
                    let ws = g.mul(vars.get(w)?, s)?;
                    g.add(ws, vars.get(b)?)
                };
                let mean = affine(g, "phi.w_mu", "phi.b_mu")?;
                let log_var = affine(g, "phi.w_sigma", "phi.b_sigma")?;
                Ok((mean, log_var))
            }
        }
    }

    /// `log N(y_m; ψ_l, σ_y²)` as `[L × M × 1]`.
    pub(crate) fn sample_log_lik(&self, g: &mut Graph, psi: Var, examples: &[Example]) -> Result<SampleLogLik> {
        let l = g.shape(psi)[0];
        let ys = examples
            .iter()
            .map(|e| {
                e.values()
                    .and_then(|v| v.first().copied())
                    .ok_or_else(|| Error::contract("toy example without a value"))
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = ys.len();
        let y = g.constant(Tensor::new(vec![1, m, 1], ys)?);
        let psi3 = g.reshape(psi, &[l, 1, 1])?;
        let per_sample = gaussian_log_density_fixed(g, y, psi3, self.model.obs_variance, 2)?;
        Ok(SampleLogLik {
            per_sample,
            class_log_probs: None,
        })
    }
}

/// Weights that make `q` the exact posterior for `n` shots: the posterior
/// mean is linear in `Σy` and its variance does not depend on the data.
pub fn optimal_toy_params(spec: &ToyModelSpec, n: usize) -> [f64; 4] {
    let denom = n as f64 * spec.prior_variance + spec.obs_variance;
    [
        spec.prior_variance / denom,
        0.0,
        0.0,
        (spec.prior_variance * spec.obs_variance / denom).ln(),
    ]
}
