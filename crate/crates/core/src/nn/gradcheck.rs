//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Gradients, ParameterSet};

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not inflate the ratio.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter name and index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at up to
/// `per_tensor` randomly chosen coordinates of every parameter tensor.
pub fn check_gradients(
    params: &ParameterSet,
    analytic: &Gradients,
    loss: impl Fn(&ParameterSet) -> f64,
    per_tensor: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let up = loss(&work);
            work.get_mut(id).data_mut()[i] = orig - step;
            let down = loss(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic.get(id).data()[i], numeric);
            out.checked += 1;
            if err > out.max_rel_err || out.worst.is_none() {
                if err >= out.max_rel_err {
                    out.max_rel_err = err;
                    out.worst = Some((params.name(id).to_string(), i));
                }
            }
        }
    }
    out
}
