use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Compares reverse-mode gradients of a scalar `f` against central finite
/// differences at `point`. Returns the max over coordinates of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_difference_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), step)
}

/// Multi-input form of [`finite_difference_check`]; every input is perturbed.
pub fn finite_difference_check_many<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::contract("finite-difference target must be scalar"));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::domain("finite_difference_check", "non-finite function value"));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = points.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).clone();
        for i in 0..points[which].len() {
            let x0 = points[which].values()[i];
            probe[which].values_mut()[i] = x0 + step;
            let up = eval(&probe)?;
            probe[which].values_mut()[i] = x0 - step;
            let down = eval(&probe)?;
            probe[which].values_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.values()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Every op the engine implements, by name: the registered set plus the
/// helpers the networks use.
pub const ALL_OPS: &[&str] = &[
    "matmul",
    "add",
    "multiply",
    "subtract",
    "exp",
    "log",
    "negate",
    "relu",
    "elu",
    "sigmoid",
    "sum",
    "mean",
    "concat",
    "slice",
    "square",
    "logsumexp",
    "softmax",
    "sqrt",
    "sum-axis",
    "reshape",
    "transpose",
    "clamp",
    "scale",
    "pool-mean",
];

fn random(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap_or_else(|_| Tensor::zeros(shape))
}

/// Values in `[-2, 2]` at least `margin` away from every point in `kinks`.
fn away_from(rng: &mut SeededRng, shape: &[usize], kinks: &[f64], margin: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| loop {
            let x = rng.uniform_range(-2.0, 2.0);
            if kinks.iter().all(|k| (x - k).abs() > margin) {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap_or_else(|_| Tensor::zeros(shape))
}

/// Finite-difference check of one op on a random instance. The op's output
/// is contracted with fixed random weights so every output coordinate
/// contributes to the checked scalar.
pub fn check_op(name: &str, rng: &mut SeededRng) -> Result<f64> {
    let inputs: Vec<Tensor> = match name {
        "matmul" => vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[4, 2], -1.0, 1.0)],
        "add" | "multiply" | "subtract" => vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[1, 4], -1.0, 1.0)],
        "log" | "sqrt" => vec![random(rng, &[3, 4], 0.5, 2.0)],
        "relu" | "elu" => vec![away_from(rng, &[3, 4], &[0.0], 0.05)],
        "clamp" => vec![away_from(rng, &[3, 4], &[-0.5, 0.5], 0.05)],
        "concat" => vec![random(rng, &[3, 2], -1.0, 1.0), random(rng, &[3, 3], -1.0, 1.0)],
        "pool-mean" => vec![random(rng, &[5, 3], -1.0, 1.0)],
        _ => vec![random(rng, &[3, 4], -1.0, 1.0)],
    };
    let op = name.to_string();
    let apply = move |g: &mut Graph, v: &[Var]| -> Result<Var> {
        Ok(match op.as_str() {
            "matmul" => g.matmul(v[0], v[1])?,
            "add" => g.add(v[0], v[1])?,
            "multiply" => g.mul(v[0], v[1])?,
            "subtract" => g.sub(v[0], v[1])?,
            "exp" => g.exp(v[0])?,
            "log" => g.log(v[0])?,
            "sqrt" => g.sqrt(v[0])?,
            "negate" => g.neg(v[0])?,
            "relu" => g.relu(v[0])?,
            "elu" => g.elu(v[0])?,
            "sigmoid" => g.sigmoid(v[0])?,
            "square" => g.square(v[0])?,
            "sum" => g.sum(v[0])?,
            "mean" => g.mean_axis(v[0], 1)?,
            "sum-axis" => g.sum_axis(v[0], 0)?,
            "concat" => g.concat(&[v[0], v[1]], 1)?,
            "slice" => g.slice(v[0], 1, 1, 3)?,
            "logsumexp" => g.logsumexp(v[0], 1)?,
            "softmax" => g.softmax(v[0], 1)?,
            "reshape" => g.reshape(v[0], &[2, 6])?,
            "transpose" => g.transpose(v[0])?,
            "clamp" => g.clamp(v[0], -0.5, 0.5)?,
            "scale" => g.scale(v[0], 1.7)?,
            "pool-mean" => g.pool_mean(v[0])?,
            other => return Err(Error::contract(format!("no gradient check for op `{other}`"))),
        })
    };
    // Probe the output shape once to draw matching contraction weights.
    let mut probe = Graph::new();
    let pv: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = apply(&mut probe, &pv)?;
    let weights = random(rng, probe.shape(out), -1.0, 1.0);
    finite_difference_check_many(
        |g, v| {
            let y = apply(g, v)?;
            let w = g.constant(weights.clone());
            let yw = g.mul(y, w)?;
            g.sum(yw)
        },
        &inputs,
        1e-6,
    )
}
