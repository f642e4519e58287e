//! Adagrad: per-coordinate step `lr * g / (sqrt(sum g^2) + eps)`.

use crate::error::{Error, Result};

/// A parameter bundle viewed as an ordered list of flat tensors.
///
/// Gradients are represented with the same type as the parameters, so the two
/// always have congruent shapes.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

/// Accumulated squared gradients for one parameter bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    accumulators: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new<P: ParamTensors + ?Sized>(params: &P, learning_rate: f64, epsilon: f64) -> Self {
        AdagradState {
            accumulators: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            learning_rate,
            epsilon,
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    pub fn step<P: ParamTensors + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if params.len() != self.accumulators.len() || grads.len() != self.accumulators.len() {
            return Err(Error::shape(
                format!("{} tensors", self.accumulators.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), acc) in params.iter_mut().zip(&grads).zip(&mut self.accumulators) {
            adagrad_step(p, acc, g, self.learning_rate, self.epsilon)?;
        }
        Ok(())
    }
}

/// One Adagrad update on flat slices.
pub fn adagrad_step(
    params: &mut [f64],
    accumulator: &mut [f64],
    grads: &[f64],
    learning_rate: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != accumulator.len() {
        return Err(Error::shape(
            format!("{} entries", params.len()),
            format!("{} grads / {} accumulators", grads.len(), accumulator.len()),
        ));
    }
    for ((p, a), &g) in params.iter_mut().zip(accumulator.iter_mut()).zip(grads) {
        *a += g * g;
        *p -= learning_rate * g / (a.sqrt() + epsilon);
    }
    Ok(())
}
