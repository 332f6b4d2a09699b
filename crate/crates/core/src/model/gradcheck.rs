//! Central finite-difference verification of the analytic gradients.

use super::net::{backward_pair, forward_pair};
use super::params::ModelParams;
use super::ModelError;
use crate::ingest::SequencePair;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Total coordinates compared.
    pub coordinates: usize,
    /// Tensor name and linear coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
}

fn coordinate(params: &ModelParams, tensor: usize, index: usize) -> f64 {
    params.tensors()[tensor].1.get(index)
}

fn set_coordinate(params: &mut ModelParams, tensor: usize, index: usize, value: f64) {
    params.tensors_mut()[tensor].1.set(index, value);
}

/// Denominator floor of the relative error. Central differences of the loss
/// carry rounding noise of roughly `ulp(loss) / (2 eps)`, so coordinates
/// whose true gradient sits near zero cannot be resolved relatively; below
/// this scale the comparison degrades to an absolute tolerance. Coordinates
/// where both sides vanish count as zero error.
const REL_ERROR_FLOOR: f64 = 1e-5;

/// Compares analytic gradients against `(f(x+eps) - f(x-eps)) / (2 eps)` on
/// up to `samples_per_tensor` seeded-random coordinates of every tensor.
/// Teacher forcing is fixed on, which makes the loss a deterministic function
/// of the parameters.
pub fn gradient_check(
    params: &ModelParams,
    pair: &SequencePair,
    eps: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    if !(eps > 0.0) {
        return Err(ModelError::InvalidConfig("eps must be positive".into()));
    }
    let input = &pair.input.tokens;
    let target = &pair.target.tokens;
    // The analytic gradient is of the summed per-step NLL, so the finite
    // differences below are taken of the same quantity.
    let forward = forward_pair(params, input, target, true)?;
    let analytic = backward_pair(params, input, &forward);

    let mut work = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensor_count = params.tensors().len();
    let mut report = GradCheckReport { max_rel_error: 0.0, coordinates: 0, worst: None };

    for tensor in 0..tensor_count {
        let (name, view) = {
            let tensors = params.tensors();
            (tensors[tensor].0, tensors[tensor].1.len())
        };
        let coords: Vec<usize> = if view <= samples_per_tensor {
            (0..view).collect()
        } else {
            rand::seq::index::sample(&mut rng, view, samples_per_tensor).into_vec()
        };
        for index in coords {
            let original = coordinate(&work, tensor, index);
            set_coordinate(&mut work, tensor, index, original + eps);
            let loss_plus = forward_pair(&work, input, target, true)?.loss_sum;
            set_coordinate(&mut work, tensor, index, original - eps);
            let loss_minus = forward_pair(&work, input, target, true)?.loss_sum;
            set_coordinate(&mut work, tensor, index, original);

            let numeric = (loss_plus - loss_minus) / (2.0 * eps);
            let exact = analytic.tensors()[tensor].1.get(index);
            let rel =
                (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.to_string(), index));
            }
        }
    }
    Ok(report)
}
