//! Additive attention over the encoder hidden states.
//!
//! For decoder state `s` and encoder outputs `h_1..h_T`:
//!
//! ```text
//! score_t = v . tanh(w_query s + w_keys h_t)
//! alpha   = softmax(score)
//! context = sum_t alpha_t h_t
//! ```

use super::params::{add_outer, AttentionWeights};
use super::{all_finite, softmax, ModelError};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct AttnCache {
    pub s_prev: Array1<f64>,
    /// `tanh(w_query s + w_keys h_t)` per encoder position, `T x H`.
    pub u: Array2<f64>,
    pub alphas: Array1<f64>,
}

impl AttentionWeights {
    /// Precomputed `w_keys h_t` for all encoder positions (`T x H`); the
    /// projection does not depend on the decoder state, so it is shared by
    /// every decode step of a pair.
    pub fn keys(&self, encoder_outputs: ArrayView2<'_, f64>) -> Array2<f64> {
        encoder_outputs.dot(&self.w_keys.t())
    }

    pub fn forward(
        &self,
        s_prev: &Array1<f64>,
        encoder_outputs: ArrayView2<'_, f64>,
        keys: ArrayView2<'_, f64>,
    ) -> Result<(AttnCache, Array1<f64>), ModelError> {
        let hidden = self.hidden();
        if encoder_outputs.nrows() == 0 {
            return Err(ModelError::EmptySequence);
        }
        if s_prev.len() != hidden
            || encoder_outputs.ncols() != hidden
            || keys.dim() != encoder_outputs.dim()
        {
            return Err(ModelError::DimensionMismatch(format!(
                "attention expects hidden {hidden}, got state {} and outputs {:?}",
                s_prev.len(),
                encoder_outputs.dim()
            )));
        }
        if !all_finite(s_prev) {
            return Err(ModelError::NonFinite("attention decoder state"));
        }
        let q = self.w_query.dot(s_prev);
        let mut u = keys.to_owned();
        u += &q;
        u.mapv_inplace(f64::tanh);
        let scores = u.dot(&self.v);
        let alphas = softmax(&scores);
        let context = encoder_outputs.t().dot(&alphas);
        Ok((AttnCache { s_prev: s_prev.clone(), u, alphas }, context))
    }

    /// Accumulates weight gradients into `grads` and returns
    /// `(d_s_prev, d_encoder_outputs)` for the loss gradient `d_context`.
    pub fn backward(
        &self,
        d_context: &Array1<f64>,
        cache: &AttnCache,
        encoder_outputs: ArrayView2<'_, f64>,
        grads: &mut AttentionWeights,
    ) -> (Array1<f64>, Array2<f64>) {
        let t_len = encoder_outputs.nrows();
        let hidden = self.hidden();

        // Through the weighted sum.
        let d_alphas = encoder_outputs.dot(d_context);
        let mut d_enc = Array2::zeros((t_len, hidden));
        add_outer_rows(&mut d_enc, &cache.alphas, d_context);

        // Through the softmax.
        let dot = cache.alphas.dot(&d_alphas);
        let d_scores = &cache.alphas * &d_alphas.mapv(|v| v - dot);

        // Through the score: score_t = v . u_t.
        grads.v += &cache.u.t().dot(&d_scores);
        let d_pre = Array2::from_shape_fn((t_len, hidden), |(t, i)| {
            d_scores[t] * self.v[i] * (1.0 - cache.u[[t, i]] * cache.u[[t, i]])
        });

        // Through the two linear maps.
        let d_q = d_pre.sum_axis(Axis(0));
        add_outer(&mut grads.w_query, &d_q, &cache.s_prev);
        let d_s_prev = self.w_query.t().dot(&d_q);
        general_mat_mul(1.0, &d_pre.t(), &encoder_outputs, 1.0, &mut grads.w_keys);
        general_mat_mul(1.0, &d_pre, &self.w_keys, 1.0, &mut d_enc);

        (d_s_prev, d_enc)
    }
}

/// `acc[t, :] += col[t] * row` for every row `t`.
fn add_outer_rows(acc: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    general_mat_mul(
        1.0,
        &col.view().insert_axis(Axis(1)),
        &row.view().insert_axis(Axis(0)),
        1.0,
        acc,
    );
}

/// Attention weights and context vector for one decoder state.
pub fn attention(
    s_prev: &Array1<f64>,
    encoder_outputs: ArrayView2<'_, f64>,
    weights: &AttentionWeights,
) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
    let keys = weights.keys(encoder_outputs);
    weights
        .forward(s_prev, encoder_outputs, keys.view())
        .map(|(cache, context)| (cache.alphas, context))
}
