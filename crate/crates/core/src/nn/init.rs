use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{ParameterSet, Tensor};
use crate::error::Result;

/// Deterministic initializer: weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn weight(&mut self, rows: usize, cols: usize) -> Tensor {
        let bound = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        Tensor::from_vec(&[rows, cols], data).expect("shape matches data")
    }

    /// Adds `{prefix}.w_ih`, `{prefix}.w_hh`, `{prefix}.b`.
    pub fn add_lstm(
        &mut self,
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<()> {
        params.add(format!("{prefix}.w_ih"), self.weight(4 * hidden, input))?;
        params.add(format!("{prefix}.w_hh"), self.weight(4 * hidden, hidden))?;
        params.add(format!("{prefix}.b"), Tensor::zeros(&[4 * hidden]))?;
        Ok(())
    }

    /// Adds `{prefix}.w` (`[output, input]`) and `{prefix}.b`.
    pub fn add_affine(
        &mut self,
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> Result<()> {
        params.add(format!("{prefix}.w"), self.weight(output, input))?;
        params.add(format!("{prefix}.b"), Tensor::zeros(&[output]))?;
        Ok(())
    }
}

/// Scalar count of an LSTM layer with a single bias vector.
pub const fn lstm_param_count(input: usize, hidden: usize) -> usize {
    4 * ((input + hidden) * hidden + hidden)
}

pub const fn affine_param_count(input: usize, output: usize) -> usize {
    input * output + output
}
