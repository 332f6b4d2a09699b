//! GRU cell forward and backward passes.
//!
//! Gating convention:
//!
//! ```text
//! z  = sigmoid(w_z x + u_z h_prev + b_z)        update gate
//! r  = sigmoid(w_r x + u_r h_prev + b_r)        reset gate
//! hc = tanh(w_h x + u_h (r .* h_prev) + b_h)    candidate state
//! h  = (1 - z) .* h_prev + z .* hc
//! ```
//!
//! so a saturated-low update gate carries the previous state through
//! unchanged.

use super::params::{add_outer, GruWeights};
use super::{all_finite, ModelError};
use ndarray::Array1;

/// Activations recorded by a forward pass, sufficient to backpropagate.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub hc: Array1<f64>,
    pub h: Array1<f64>,
}

fn sigmoid(x: Array1<f64>) -> Array1<f64> {
    x.mapv_into(|v| 1.0 / (1.0 + (-v).exp()))
}

impl GruWeights {
    pub fn forward(&self, x: &Array1<f64>, h_prev: &Array1<f64>) -> Result<GruCache, ModelError> {
        if x.len() != self.input_dim() || h_prev.len() != self.hidden() {
            return Err(ModelError::DimensionMismatch(format!(
                "gru cell expects input {} and hidden {}, got {} and {}",
                self.input_dim(),
                self.hidden(),
                x.len(),
                h_prev.len()
            )));
        }
        if !all_finite(x) || !all_finite(h_prev) {
            return Err(ModelError::NonFinite("gru cell input"));
        }
        let z = sigmoid(self.w_z.dot(x) + self.u_z.dot(h_prev) + &self.b_z);
        let r = sigmoid(self.w_r.dot(x) + self.u_r.dot(h_prev) + &self.b_r);
        let hr = &r * h_prev;
        let hc = (self.w_h.dot(x) + self.u_h.dot(&hr) + &self.b_h).mapv_into(f64::tanh);
        let h = z.mapv(|v| 1.0 - v) * h_prev + &z * &hc;
        Ok(GruCache { x: x.clone(), h_prev: h_prev.clone(), z, r, hc, h })
    }

    /// Accumulates weight gradients into `grads` and returns
    /// `(d_input, d_h_prev)` for the loss gradient `d_h` at this cell's
    /// output.
    pub fn backward(
        &self,
        d_h: &Array1<f64>,
        cache: &GruCache,
        grads: &mut GruWeights,
    ) -> (Array1<f64>, Array1<f64>) {
        let GruCache { x, h_prev, z, r, hc, .. } = cache;

        let d_z = d_h * &(hc - h_prev);
        let d_hc = d_h * z;
        let mut d_h_prev = d_h * &z.mapv(|v| 1.0 - v);

        // Candidate path.
        let d_ah = &d_hc * &hc.mapv(|v| 1.0 - v * v);
        let hr = r * h_prev;
        add_outer(&mut grads.w_h, &d_ah, x);
        add_outer(&mut grads.u_h, &d_ah, &hr);
        grads.b_h += &d_ah;
        let mut d_x = self.w_h.t().dot(&d_ah);
        let d_hr = self.u_h.t().dot(&d_ah);
        let d_r = &d_hr * h_prev;
        d_h_prev += &(&d_hr * r);

        // Reset gate.
        let d_ar = &d_r * &r.mapv(|v| v * (1.0 - v));
        add_outer(&mut grads.w_r, &d_ar, x);
        add_outer(&mut grads.u_r, &d_ar, h_prev);
        grads.b_r += &d_ar;
        d_x += &self.w_r.t().dot(&d_ar);
        d_h_prev += &self.u_r.t().dot(&d_ar);

        // Update gate.
        let d_az = &d_z * &z.mapv(|v| v * (1.0 - v));
        add_outer(&mut grads.w_z, &d_az, x);
        add_outer(&mut grads.u_z, &d_az, h_prev);
        grads.b_z += &d_az;
        d_x += &self.w_z.t().dot(&d_az);
        d_h_prev += &self.u_z.t().dot(&d_az);

        (d_x, d_h_prev)
    }
}

/// One GRU step: returns the next hidden state.
pub fn gru_cell(
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    weights: &GruWeights,
) -> Result<Array1<f64>, ModelError> {
    weights.forward(x, h_prev).map(|cache| cache.h)
}
