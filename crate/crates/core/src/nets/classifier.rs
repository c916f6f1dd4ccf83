//! Classification pathway: shared feature extractor, per-class amortized
//! weight posteriors pooled over each class's shots, and the linear-softmax
//! head.

use serde::{Deserialize, Serialize};

use super::{class_log_lik, gaussian_heads, init_gaussian_heads, init_mlp, log_mean_exp_samples, mlp, Activation, Model, NetworkSpec};
use super::{ParamVars, ParameterStore, PosteriorVars, SampleLogLik, TaskPosterior};
use crate::adaptation::Strategy;
use crate::autodiff::{Graph, Tensor, Var};
use crate::distributions::{local_reparam_logit_samples, DiagGaussian, LogitPosterior};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tasks::{Episode, Example};

fn default_log_var_bias() -> f64 {
    -3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    /// Hidden widths of the extractor, before its linear output layer.
    #[serde(default)]
    pub extractor_hidden: Vec<usize>,
    /// Output width `d_θ`; `None` makes the extractor the identity.
    #[serde(default)]
    pub feature_dim: Option<usize>,
    /// Hidden widths applied after pooling, before the Gaussian heads.
    #[serde(default)]
    pub amortization_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Initial bias of the log-variance head.
    #[serde(default = "default_log_var_bias")]
    pub log_var_bias: f64,
}

impl ClassifierSpec {
    /// Two 64-unit ELU layers on each side and 16 features.
    pub fn desk(input_dim: usize) -> Self {
        Self {
            input_dim,
            extractor_hidden: vec![64, 64],
            feature_dim: Some(16),
            amortization_hidden: vec![64, 64],
            activation: Activation::Elu,
            log_var_bias: default_log_var_bias(),
        }
    }

    /// The extractor is the identity map.
    pub fn identity(input_dim: usize, amortization_hidden: Vec<usize>) -> Self {
        Self {
            input_dim,
            extractor_hidden: vec![],
            feature_dim: None,
            amortization_hidden,
            activation: Activation::Elu,
            log_var_bias: default_log_var_bias(),
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_dim.unwrap_or(self.input_dim)
    }

    fn extractor_layers(&self) -> usize {
        self.feature_dim.map_or(0, |_| self.extractor_hidden.len() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .extractor_hidden
            .iter()
            .chain(&self.amortization_hidden)
            .chain(self.feature_dim.as_ref());
        if self.input_dim == 0 || widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.feature_dim.is_none() && !self.extractor_hidden.is_empty() {
            return Err(Error::Config("identity extractor cannot have hidden layers".into()));
        }
        Ok(())
    }

    pub(crate) fn init(&self, strategy: Strategy, way: usize, rng: &mut SeededRng) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        if let Some(fd) = self.feature_dim {
            let mut widths = self.extractor_hidden.clone();
            widths.push(fd);
            init_mlp(&mut store, "theta.extractor", self.input_dim, &widths, rng)?;
        }
        let d = self.feature_width();
        match strategy {
            Strategy::Versa | Strategy::AmortizedMap => {
                init_mlp(&mut store, "phi.amortizer", d, &self.amortization_hidden, rng)?;
                let top = self.amortization_hidden.last().copied().unwrap_or(d);
                init_gaussian_heads(&mut store, "phi.head", top, d + 1, self.log_var_bias, rng)?;
            }
            Strategy::OneStepGradient => {
                if way == 0 {
                    return Err(Error::Config("one-step-gradient needs way > 0".into()));
                }
                store.insert("psi0.w", Tensor::zeros(&[d, way]))?;
                store.insert("psi0.b", Tensor::zeros(&[1, way]))?;
            }
            Strategy::Prototypical => {}
        }
        Ok(store)
    }

    /// `h_θ(x)` row by row.
    pub fn features(&self, g: &mut Graph, vars: &ParamVars, x: Var) -> Result<Var> {
        let width = g.shape(x).get(1).copied().unwrap_or(0);
        if g.shape(x).len() != 2 || width != self.input_dim {
            return Err(Error::dimension("extract_features", &[g.shape(x), &[self.input_dim]]));
        }
        mlp(g, vars, "theta.extractor", self.extractor_layers(), x, self.activation, false)
    }

    /// Pooled class features `[C × d]`, one row per class, each pooled over
    /// only that class's shots.
    pub fn pooled_class_features(&self, g: &mut Graph, vars: &ParamVars, episode: &Episode) -> Result<Var> {
        let groups = episode.class_groups();
        let mut rows = Vec::with_capacity(groups.len());
        for (c, idx) in groups.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::contract(format!("class {c} has no context examples")));
            }
            let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| episode.context[i].input.clone()).collect();
            let x = g.constant(Tensor::from_rows(&inputs, self.input_dim)?);
            let h = self.features(g, vars, x)?;
            rows.push(g.pool_mean(h)?);
        }
        g.concat(&rows, 0)
    }

    /// Gaussian heads over `(w_c, b_c)` for every pooled row: `[C × (d+1)]`
    /// means and clamped log-variances.
    pub fn amortize(&self, g: &mut Graph, vars: &ParamVars, pooled: Var) -> Result<(Var, Var)> {
        let layers = self.amortization_hidden.len();
        let h = mlp(g, vars, "phi.amortizer", layers, pooled, self.activation, true)?;
        gaussian_heads(g, vars, "phi.head", h)
    }

    /// Full amortized posterior for an episode's context.
    pub fn versa_posterior(&self, g: &mut Graph, vars: &ParamVars, episode: &Episode) -> Result<LogitPosterior> {
        let pooled = self.pooled_class_features(g, vars, episode)?;
        let (mean, log_var) = self.amortize(g, vars, pooled)?;
        let d = self.feature_width();
        let (w_mean, b_mean) = split_weights(g, mean, d)?;
        let (w_lv, b_lv) = split_weights(g, log_var, d)?;
        Ok(LogitPosterior {
            w_mean,
            b_mean,
            w_log_var: Some(w_lv),
            b_log_var: Some(b_lv),
        })
    }

    pub(crate) fn sample_log_lik(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        post: &LogitPosterior,
        examples: &[Example],
        samples: usize,
        rng: &mut SeededRng,
    ) -> Result<SampleLogLik> {
        let inputs: Vec<Vec<f64>> = examples.iter().map(|e| e.input.clone()).collect();
        let x = g.constant(Tensor::from_rows(&inputs, self.input_dim)?);
        let h = self.features(g, vars, x)?;
        let logits = local_reparam_logit_samples(g, h, post, samples, rng)?;
        class_log_lik(g, logits, examples)
    }
}

/// `[C × (d+1)]` rows to `[d × C]` weights and a `[1 × C]` bias.
pub(crate) fn split_weights(g: &mut Graph, rows: Var, d: usize) -> Result<(Var, Var)> {
    let cols = g.transpose(rows)?;
    let w = g.slice(cols, 0, 0, d)?;
    let b = g.slice(cols, 0, d, d + 1)?;
    Ok((w, b))
}

fn classifier(model: &Model) -> Result<&ClassifierSpec> {
    match &model.spec {
        NetworkSpec::Classifier(s) => Ok(s),
        _ => Err(Error::contract("not a classification model")),
    }
}

/// `h_θ` applied to each row of `inputs`.
pub fn extract_features(model: &Model, inputs: &Tensor) -> Result<Tensor> {
    let spec = classifier(model)?;
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let x = g.constant(inputs.clone());
    let h = spec.features(&mut g, &vars, x)?;
    Ok(g.value(h).clone())
}

/// Posterior over `(w_c, b_c)` from the `[k_c × d]` features of one class.
pub fn infer_class_posterior(model: &Model, class_features: &Tensor) -> Result<DiagGaussian> {
    let spec = classifier(model)?;
    if class_features.rank() != 2 || class_features.rows() == 0 {
        return Err(Error::contract("class posterior needs at least one feature row"));
    }
    if class_features.cols() != spec.feature_width() {
        return Err(Error::dimension(
            "infer_class_posterior",
            &[class_features.shape(), &[spec.feature_width()]],
        ));
    }
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let h = g.constant(class_features.clone());
    let pooled = g.pool_mean(h)?;
    let (mean, lv) = spec.amortize(&mut g, &vars, pooled)?;
    DiagGaussian::new(g.value(mean).values().to_vec(), g.value(lv).values().to_vec())
}

/// Amortized per-class factors in label order.
pub fn build_task_posterior(model: &Model, episode: &Episode) -> Result<TaskPosterior> {
    let spec = classifier(model)?;
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let post = spec.versa_posterior(&mut g, &vars, episode)?;
    PosteriorVars::Logits(post).to_task_posterior(&g)
}

/// `log (1/L) Σ_l softmax(logits_l)` per test input, `[M × C]`.
pub fn predict(model: &Model, post: &TaskPosterior, inputs: &Tensor, samples: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let spec = classifier(model)?;
    if samples == 0 {
        return Err(Error::contract("need at least one posterior sample"));
    }
    let mut g = Graph::new();
    let vars = model.load(&mut g, &[]);
    let PosteriorVars::Logits(p) = post.to_vars(&mut g)? else {
        return Err(Error::contract("classification needs per-class factors"));
    };
    let x = g.constant(inputs.clone());
    let h = spec.features(&mut g, &vars, x)?;
    let logits = local_reparam_logit_samples(&mut g, h, &p, samples, rng)?;
    let lp = g.log_softmax(logits, 2)?;
    let pred = log_mean_exp_samples(&mut g, lp)?;
    let (m, c) = (g.shape(pred)[1], g.shape(pred)[2]);
    g.value(pred).clone().reshaped(vec![m, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::cluster::{sample_cluster_episode, ClusterTaskSpec};

    fn model(strategy: Strategy, way: usize) -> Model {
        let spec = NetworkSpec::Classifier(ClassifierSpec::desk(4));
        Model::init(spec, strategy, 0.5, way, &mut SeededRng::new(11)).unwrap()
    }

    fn episode(way: usize, shot: usize, id: u64) -> Episode {
        let spec = ClusterTaskSpec {
            way,
            shot,
            ..Default::default()
        };
        sample_cluster_episode(&spec, id, &mut SeededRng::new(id)).episode
    }

    fn factors(post: &TaskPosterior) -> &[crate::distributions::ClassFactor] {
        match post {
            TaskPosterior::Classes(f) => f,
            TaskPosterior::Latent(_) => panic!("expected class factors"),
        }
    }

    #[test]
    fn identity_extractor_passes_inputs_through() {
        let spec = NetworkSpec::Classifier(ClassifierSpec::identity(4, vec![8]));
        let m = Model::init(spec, Strategy::Versa, 0.5, 5, &mut SeededRng::new(1)).unwrap();
        let x = episode(5, 2, 0).context_inputs().unwrap();
        assert_eq!(extract_features(&m, &x).unwrap(), x);
    }

    #[test]
    fn features_do_not_depend_on_batching() {
        let m = model(Strategy::Versa, 5);
        let ep = episode(5, 3, 1);
        let all = extract_features(&m, &ep.context_inputs().unwrap()).unwrap();
        for (i, e) in ep.context.iter().enumerate() {
            let one = extract_features(&m, &Tensor::row(e.input.clone())).unwrap();
            assert_eq!(one.values(), &all.values()[i * 16..(i + 1) * 16]);
        }
    }

    #[test]
    fn duplicated_shots_leave_the_posterior_unchanged() {
        let m = model(Strategy::Versa, 5);
        let h = extract_features(&m, &episode(5, 1, 2).context_inputs().unwrap()).unwrap();
        let row = Tensor::row(h.values()[..16].to_vec());
        let twice = Tensor::from_rows(&[row.values().to_vec(), row.values().to_vec()], 16).unwrap();
        assert_eq!(infer_class_posterior(&m, &row).unwrap(), infer_class_posterior(&m, &twice).unwrap());
    }

    #[test]
    fn single_shot_gives_a_finite_posterior() {
        let m = model(Strategy::Versa, 5);
        let post = build_task_posterior(&m, &episode(5, 1, 3)).unwrap();
        for f in factors(&post) {
            assert_eq!(f.mean().len(), 17);
            assert!(f.mean().iter().chain(&f.variance()).all(|v| v.is_finite()));
            assert!(f.variance().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn context_order_does_not_matter() {
        let m = model(Strategy::Versa, 5);
        let ep = episode(5, 5, 4);
        let mut shuffled = ep.clone();
        shuffled.context.reverse();
        shuffled.context_ids.reverse();
        assert_eq!(build_task_posterior(&m, &ep).unwrap(), build_task_posterior(&m, &shuffled).unwrap());
    }

    #[test]
    fn each_class_sees_only_its_own_shots() {
        let m = model(Strategy::Versa, 5);
        let ep = episode(5, 5, 5);
        let mut changed = ep.clone();
        for e in changed.context.iter_mut().filter(|e| e.class() == Some(1)) {
            e.input.iter_mut().for_each(|v| *v += 3.0);
        }
        let (a, b) = (build_task_posterior(&m, &ep).unwrap(), build_task_posterior(&m, &changed).unwrap());
        for c in 0..5 {
            assert_eq!(factors(&a)[c] == factors(&b)[c], c != 1, "class {c}");
        }
    }

    #[test]
    fn amortization_size_is_independent_of_way() {
        let n = model(Strategy::Versa, 2).amortization_parameter_count();
        for way in [3, 5, 20] {
            assert_eq!(model(Strategy::Versa, way).amortization_parameter_count(), n);
        }
        assert!(!model(Strategy::Versa, 5).is_way_dependent());
        assert!(model(Strategy::OneStepGradient, 5).is_way_dependent());
    }

    #[test]
    fn point_posteriors_predict_deterministically() {
        let m = model(Strategy::Versa, 5);
        let ep = episode(5, 3, 6);
        let post = build_task_posterior(&m, &ep).unwrap().to_point();
        let x = ep.target_inputs().unwrap();
        let one = predict(&m, &post, &x, 1, &mut SeededRng::new(1)).unwrap();
        let many = predict(&m, &post, &x, 7, &mut SeededRng::new(2)).unwrap();
        for (a, b) in one.values().iter().zip(many.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predictive_rows_are_normalized() {
        let m = model(Strategy::Versa, 5);
        let ep = episode(5, 3, 7);
        let post = build_task_posterior(&m, &ep).unwrap();
        let lp = predict(&m, &post, &ep.target_inputs().unwrap(), 10, &mut SeededRng::new(3)).unwrap();
        for row in lp.values().chunks(5) {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_samples_is_a_contract_error() {
        let m = model(Strategy::Versa, 5);
        let ep = episode(5, 1, 8);
        let post = build_task_posterior(&m, &ep).unwrap();
        let err = predict(&m, &post, &ep.target_inputs().unwrap(), 0, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
