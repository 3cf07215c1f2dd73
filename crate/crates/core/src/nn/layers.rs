//! Standalone forms of the layer ops, for callers that do not need a graph.

use super::graph::{lstm_run, softmax_nll};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Weights of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub b: &'a Tensor,
}

/// Output of [`lstm_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmOutput {
    /// `[T, H]` hidden state per step.
    pub outputs: Tensor,
    pub h_final: Vec<f64>,
    pub c_final: Vec<f64>,
}

/// Runs an LSTM layer over `inputs` (`[T, in]`) from `(h0, c0)`.
pub fn lstm_forward(
    weights: LstmWeights<'_>,
    inputs: &Tensor,
    h0: &[f64],
    c0: &[f64],
) -> Result<LstmOutput> {
    let (outputs, _, c_final) = lstm_run(inputs, weights.w_ih, weights.w_hh, weights.b, h0, c0)?;
    let h_final = if outputs.rows() > 0 {
        outputs.row(outputs.rows() - 1).to_vec()
    } else {
        h0.to_vec()
    };
    Ok(LstmOutput {
        outputs,
        h_final,
        c_final,
    })
}

/// `tanh(W x + b)` for `W [out, in]`.
pub fn affine_tanh(w: &Tensor, b: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    if w.shape().len() != 2 || w.cols() != x.len() || b.len() != w.rows() {
        return Err(Error::shape(
            "affine_tanh",
            format!("w [{}, {}], b [{}]", b.len(), x.len(), b.len()),
            format!("w {:?}, b {:?}", w.shape(), b.shape()),
        ));
    }
    let mut out = b.data().to_vec();
    super::kernels::matvec_add(w.data(), x, &mut out);
    Ok(out.into_iter().map(f64::tanh).collect())
}

/// Element-wise `gamma * h + beta`.
pub fn film_modulate(h: &[f64], gamma: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() != h.len() || beta.len() != h.len() {
        return Err(Error::shape(
            "film_modulate",
            h.len(),
            format!("gamma {}, beta {}", gamma.len(), beta.len()),
        ));
    }
    Ok(h.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(h, (g, b))| g * h + b)
        .collect())
}

/// Loss and gradient (`softmax - onehot`) of softmax cross-entropy.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let (mut grad, loss) = softmax_nll(logits, label);
    grad[label] -= 1.0;
    Ok((loss, grad))
}
