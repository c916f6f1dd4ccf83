//! View-regression pathway: a pooled encoder over `(image, angle)` context
//! views producing a latent `ψ`, and a generator from `(ψ, angle)` to pixel
//! means.

use serde::{Deserialize, Serialize};

use super::{gaussian_heads, init_gaussian_heads, init_mlp, mlp, Activation, Model, NetworkSpec};
use super::{ParamVars, ParameterStore, PosteriorVars, SampleLogLik, TaskPosterior};
use crate::autodiff::{Graph, Tensor, Var};
use crate::distributions::{gaussian_log_density_fixed, DiagGaussian};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tasks::Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub image_dim: usize,
    /// Per-view image encoder widths.
    pub encoder_hidden: Vec<usize>,
    /// Widths after appending `(cos ω, sin ω)`, before pooling.
    pub view_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    /// Fixed observation noise of the pixel likelihood.
    pub pixel_std: f64,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_log_var_bias")]
    pub log_var_bias: f64,
}

fn default_log_var_bias() -> f64 {
    -3.0
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            image_dim: crate::tasks::views::PIXELS,
            encoder_hidden: vec![128],
            view_hidden: vec![64],
            latent_dim: 16,
            generator_hidden: vec![128, 128],
            pixel_std: 0.1,
            activation: Activation::Elu,
            log_var_bias: default_log_var_bias(),
        }
    }
}

impl ViewSpec {
    pub fn validate(&self) -> Result<()> {
        let widths = self.encoder_hidden.iter().chain(&self.view_hidden).chain(&self.generator_hidden);
        if self.image_dim == 0 || self.latent_dim == 0 || widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("view network widths must be positive".into()));
        }
        if !(self.pixel_std > 0.0) {
            return Err(Error::Config("pixel_std must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn init(&self, rng: &mut SeededRng) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        init_mlp(&mut store, "phi.encoder", self.image_dim, &self.encoder_hidden, rng)?;
        let enc = self.encoder_hidden.last().copied().unwrap_or(self.image_dim);
        init_mlp(&mut store, "phi.view", enc + 2, &self.view_hidden, rng)?;
        let top = self.view_hidden.last().copied().unwrap_or(enc + 2);
        init_gaussian_heads(&mut store, "phi.latent", top, self.latent_dim, self.log_var_bias, rng)?;
        let mut widths = self.generator_hidden.clone();
        widths.push(self.image_dim);
        init_mlp(&mut store, "theta.generator", self.latent_dim + 2, &widths, rng)?;
        Ok(store)
    }

    fn images(&self, examples: &[Example]) -> Result<Tensor> {
        let rows = examples
            .iter()
            .map(|e| {
                e.values()
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::contract("view example without an image"))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows, self.image_dim)
    }

    /// `q(ψ | context)`: `[1 × d_ψ]` mean and log-variance.
    pub fn latent_posterior(&self, g: &mut Graph, vars: &ParamVars, context: &[Example]) -> Result<(Var, Var)> {
        if context.is_empty() {
            return Err(Error::contract("latent posterior needs at least one view"));
        }
        let images = g.constant(self.images(context)?);
        let angles = g.constant(angle_features(context.iter().map(angle_of), 1));
        let enc = mlp(g, vars, "phi.encoder", self.encoder_hidden.len(), images, self.activation, true)?;
        let joined = g.concat(&[enc, angles], 1)?;
        let per_view = mlp(g, vars, "phi.view", self.view_hidden.len(), joined, self.activation, true)?;
        let pooled = g.pool_mean(per_view)?;
        gaussian_heads(g, vars, "phi.latent", pooled)
    }

    /// Sigmoid pixel means for each row of `psi` paired with each angle row.
    pub fn decode(&self, g: &mut Graph, vars: &ParamVars, psi: Var, angles: Var) -> Result<Var> {
        let joined = g.concat(&[psi, angles], 1)?;
        let layers = self.generator_hidden.len() + 1;
        let out = mlp(g, vars, "theta.generator", layers, joined, self.activation, false)?;
        g.sigmoid(out)
    }

    /// Decodes every `(ψ_l, ω_m)` pair (sample-major) and scores the images.
    pub(crate) fn sample_log_lik(&self, g: &mut Graph, vars: &ParamVars, psi: Var, examples: &[Example]) -> Result<SampleLogLik> {
        let (l, m) = (g.shape(psi)[0], examples.len());
        let means = self.tiled_decode(g, vars, psi, examples)?;
        let img = self.images(examples)?;
        let mut tiled = Vec::with_capacity(l * m * self.image_dim);
        for _ in 0..l {
            tiled.extend_from_slice(img.values());
        }
        let y = g.constant(Tensor::new(vec![l * m, self.image_dim], tiled)?);
        let ll = gaussian_log_density_fixed(g, y, means, self.pixel_std * self.pixel_std, 1)?;
        let per_sample = g.reshape(ll, &[l, m, 1])?;
        Ok(SampleLogLik {
            per_sample,
            class_log_probs: None,
        })
    }

    /// `[L·M × image_dim]` pixel means, row `l·M + m` for sample `l`, view `m`.
    fn tiled_decode(&self, g: &mut Graph, vars: &ParamVars, psi: Var, examples: &[Example]) -> Result<Var> {
        let (l, m) = (g.shape(psi)[0], examples.len());
        let mut select = vec![0.0; l * m * l];
        for s in 0..l {
            for j in 0..m {
                select[(s * m + j) * l + s] = 1.0;
            }
        }
        let select = g.constant(Tensor::new(vec![l * m, l], select)?);
        let psi_rows = g.matmul(select, psi)?;
        let angles = g.constant(angle_features(examples.iter().map(angle_of), l));
        self.decode(g, vars, psi_rows, angles)
    }
}

fn angle_of(e: &Example) -> f64 {
    e.input.first().copied().unwrap_or(0.0)
}

/// `(cos ω, sin ω)` rows, the whole list repeated `repeat` times.
fn angle_features(angles: impl Iterator<Item = f64> + Clone, repeat: usize) -> Tensor {
    let mut rows = Vec::new();
    for _ in 0..repeat {
        for a in angles.clone() {
            rows.push(vec![a.cos(), a.sin()]);
        }
    }
    Tensor::from_rows(&rows, 2).unwrap_or_else(|_| Tensor::zeros(&[0, 2]))
}

fn view_spec(model: &Model) -> Result<&ViewSpec> {
    match &model.spec {
        NetworkSpec::Views(s) => Ok(s),
        _ => Err(Error::contract("not a view-regression model")),
    }
}

pub fn infer_latent_posterior(model: &Model, context: &[Example]) -> Result<DiagGaussian> {
    let spec = view_spec(model)?;
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let (mean, lv) = spec.latent_posterior(&mut g, &vars, context)?;
    DiagGaussian::new(g.value(mean).values().to_vec(), g.value(lv).values().to_vec())
}

/// Pixel means at the posterior mean latent for each query angle (radians).
pub fn reconstruct(model: &Model, post: &TaskPosterior, angles: &[f64]) -> Result<Vec<Vec<f64>>> {
    let spec = view_spec(model)?;
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let PosteriorVars::Latent { mean, .. } = post.to_vars(&mut g)? else {
        return Err(Error::contract("view regression needs a latent posterior"));
    };
    let queries: Vec<Example> = angles
        .iter()
        .map(|&a| Example {
            input: vec![a],
            target: crate::tasks::Target::Values(vec![]),
        })
        .collect();
    let out = spec.tiled_decode(&mut g, &vars, mean, &queries)?;
    let t = g.value(out);
    Ok((0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect())
}

/// Per-sample pixel means `[L × M × image_dim]` for `L` latent draws.
pub fn predict_views(model: &Model, post: &TaskPosterior, angles: &[f64], samples: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let spec = view_spec(model)?;
    if samples == 0 {
        return Err(Error::contract("need at least one posterior sample"));
    }
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let PosteriorVars::Latent { mean, log_var } = post.to_vars(&mut g)? else {
        return Err(Error::contract("view regression needs a latent posterior"));
    };
    let psi = super::latent_samples(&mut g, mean, log_var, samples, rng)?;
    let queries: Vec<Example> = angles
        .iter()
        .map(|&a| Example {
            input: vec![a],
            target: crate::tasks::Target::Values(vec![]),
        })
        .collect();
    let out = spec.tiled_decode(&mut g, &vars, psi, &queries)?;
    g.value(out).clone().reshaped(vec![samples, angles.len(), spec.image_dim])
}
