//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Loss, Model, Tensor};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this in norm count as zero; central differences
/// of an exactly flat direction only produce rounding noise.
pub const ZERO_NORM: f64 = 1e-7;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both are below [`ZERO_NORM`].
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    if na < ZERO_NORM && nn < ZERO_NORM {
        0.0
    } else {
        diff / (na + nn)
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Relative error per parameter tensor, by name.
    pub params: Vec<(String, f64)>,
    pub input: f64,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.params
            .iter()
            .map(|(_, e)| *e)
            .fold(self.input, f64::max)
    }
}

/// What the checked scalar is.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `sum(r ⊙ output)` for a fixed random `r`.
    Projection,
    Loss(Loss, Tensor),
}

fn scalar(model: &Model, x: &Tensor, obj: &Objective, r: &Tensor) -> Result<f64> {
    let out = model.forward_train(x)?.output;
    match obj {
        Objective::Projection => Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()),
        Objective::Loss(l, y) => l.value(&out, y),
    }
}

/// Compares analytic gradients with central differences. At most
/// `max_per_tensor` coordinates of each tensor are probed (chosen at random).
pub fn check_model(
    model: &Model,
    x: &Tensor,
    obj: &Objective,
    max_per_tensor: usize,
    seed: u64,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = model.forward_train(x)?;
    let r = Tensor::new(
        tape.output.shape().to_vec(),
        (0..tape.output.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let grads = match obj {
        Objective::Projection => model.backward(&tape, r.clone())?,
        Objective::Loss(l, y) => model.loss_and_grad(x, y, *l)?.1,
    };

    let mut pick = |len: usize| -> Vec<usize> {
        if len <= max_per_tensor {
            (0..len).collect()
        } else {
            (0..max_per_tensor).map(|_| rng.gen_range(0..len)).collect()
        }
    };

    let mut work = model.clone();
    let mut params = Vec::new();
    let names: Vec<String> = model
        .layers
        .iter()
        .flat_map(|l| l.params.iter().map(|p| p.name.clone()))
        .collect();
    for (pi, name) in names.iter().enumerate() {
        let len = grads.params[pi].len();
        let idx = pick(len);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work.params_mut().nth(pi).expect("param index")[i];
            work.params_mut().nth(pi).expect("param index")[i] = orig + STEP;
            let up = scalar(&work, x, obj, &r)?;
            work.params_mut().nth(pi).expect("param index")[i] = orig - STEP;
            let down = scalar(&work, x, obj, &r)?;
            work.params_mut().nth(pi).expect("param index")[i] = orig;
            analytic.push(grads.params[pi][i]);
            numeric.push((up - down) / (2.0 * STEP));
        }
        params.push((name.clone(), relative_error(&analytic, &numeric)));
    }

    let idx = pick(x.len());
    let mut xw = x.clone();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &i in &idx {
        let orig = xw.data()[i];
        xw.data_mut()[i] = orig + STEP;
        let up = scalar(model, &xw, obj, &r)?;
        xw.data_mut()[i] = orig - STEP;
        let down = scalar(model, &xw, obj, &r)?;
        xw.data_mut()[i] = orig;
        analytic.push(grads.input.data()[i]);
        numeric.push((up - down) / (2.0 * STEP));
    }
    Ok(GradReport {
        params,
        input: relative_error(&analytic, &numeric),
    })
}
