//! Model parameter tensors and uniform access to them for SGD updates,
//! clipping, gradient checking, and serialization.

use ndarray::{Array1, Array2, Axis};
use ndarray::linalg::general_mat_mul;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Weights of one GRU cell. `w_*` act on the input, `u_*` on the previous
/// hidden state; `z` is the update gate, `r` the reset gate, and `h` the
/// candidate state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

impl GruWeights {
    fn init(input_dim: usize, hidden: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut mat = |rows, cols| uniform_matrix(rows, cols, bound, rng);
        let w_z = mat(hidden, input_dim);
        let w_r = mat(hidden, input_dim);
        let w_h = mat(hidden, input_dim);
        let u_z = mat(hidden, hidden);
        let u_r = mat(hidden, hidden);
        let u_h = mat(hidden, hidden);
        let mut vec = || uniform_vector(hidden, bound, rng);
        let b_z = vec();
        let b_r = vec();
        let b_h = vec();
        GruWeights { w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruWeights {
            w_z: Array2::zeros((hidden, input_dim)),
            w_r: Array2::zeros((hidden, input_dim)),
            w_h: Array2::zeros((hidden, input_dim)),
            u_z: Array2::zeros((hidden, hidden)),
            u_r: Array2::zeros((hidden, hidden)),
            u_h: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_z.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.ncols()
    }
}

/// Additive attention weights: scores are `v . tanh(w_query s + w_keys h_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_query: Array2<f64>,
    pub w_keys: Array2<f64>,
    pub v: Array1<f64>,
}

impl AttentionWeights {
    fn init(hidden: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let w_query = uniform_matrix(hidden, hidden, bound, rng);
        let w_keys = uniform_matrix(hidden, hidden, bound, rng);
        let v = uniform_vector(hidden, bound, rng);
        AttentionWeights { w_query, w_keys, v }
    }

    pub fn zeros(hidden: usize) -> Self {
        AttentionWeights {
            w_query: Array2::zeros((hidden, hidden)),
            w_keys: Array2::zeros((hidden, hidden)),
            v: Array1::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_query.nrows()
    }
}

/// Every weight tensor of the model. The decoder cell consumes the embedded
/// previous output token concatenated with the attention context, so its
/// input dimension is `2 * hidden`; the leading `hidden` columns of its
/// input matrices act on the token embedding and the trailing `hidden`
/// columns on the context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hidden: usize,
    pub vocab_size: usize,
    /// Token embedding table, shared by the encoder input and the decoder
    /// feedback input.
    pub embedding: Array2<f64>,
    pub encoder: GruWeights,
    pub attention: AttentionWeights,
    pub decoder: GruWeights,
    /// Output projection onto the vocabulary.
    pub w_out: Array2<f64>,
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

fn uniform_vector(len: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-bound..=bound))
}

impl ModelParams {
    /// Seeded uniform initialization in `[-1/sqrt(hidden), 1/sqrt(hidden)]`.
    pub fn init(vocab_size: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let embedding = uniform_matrix(vocab_size, hidden, bound, rng);
        let encoder = GruWeights::init(hidden, hidden, bound, rng);
        let attention = AttentionWeights::init(hidden, bound, rng);
        let decoder = GruWeights::init(2 * hidden, hidden, bound, rng);
        let w_out = uniform_matrix(vocab_size, hidden, bound, rng);
        ModelParams { hidden, vocab_size, embedding, encoder, attention, decoder, w_out }
    }

    pub fn zeros(vocab_size: usize, hidden: usize) -> Self {
        ModelParams {
            hidden,
            vocab_size,
            embedding: Array2::zeros((vocab_size, hidden)),
            encoder: GruWeights::zeros(hidden, hidden),
            attention: AttentionWeights::zeros(hidden),
            decoder: GruWeights::zeros(2 * hidden, hidden),
            w_out: Array2::zeros((vocab_size, hidden)),
        }
    }

    /// A gradient accumulator with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size, self.hidden)
    }

    /// All tensors in canonical order. This order defines the checkpoint
    /// layout and the SGD/clipping traversal.
    pub fn tensors(&self) -> Vec<(&'static str, TensorView<'_>)> {
        use TensorView::{Mat, Vec1};
        vec![
            ("embedding", Mat(&self.embedding)),
            ("enc_w_z", Mat(&self.encoder.w_z)),
            ("enc_w_r", Mat(&self.encoder.w_r)),
            ("enc_w_h", Mat(&self.encoder.w_h)),
            ("enc_u_z", Mat(&self.encoder.u_z)),
            ("enc_u_r", Mat(&self.encoder.u_r)),
            ("enc_u_h", Mat(&self.encoder.u_h)),
            ("enc_b_z", Vec1(&self.encoder.b_z)),
            ("enc_b_r", Vec1(&self.encoder.b_r)),
            ("enc_b_h", Vec1(&self.encoder.b_h)),
            ("attn_w_query", Mat(&self.attention.w_query)),
            ("attn_w_keys", Mat(&self.attention.w_keys)),
            ("attn_v", Vec1(&self.attention.v)),
            ("dec_w_z", Mat(&self.decoder.w_z)),
            ("dec_w_r", Mat(&self.decoder.w_r)),
            ("dec_w_h", Mat(&self.decoder.w_h)),
            ("dec_u_z", Mat(&self.decoder.u_z)),
            ("dec_u_r", Mat(&self.decoder.u_r)),
            ("dec_u_h", Mat(&self.decoder.u_h)),
            ("dec_b_z", Vec1(&self.decoder.b_z)),
            ("dec_b_r", Vec1(&self.decoder.b_r)),
            ("dec_b_h", Vec1(&self.decoder.b_h)),
            ("w_out", Mat(&self.w_out)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, TensorViewMut<'_>)> {
        use TensorViewMut::{Mat, Vec1};
        vec![
            ("embedding", Mat(&mut self.embedding)),
            ("enc_w_z", Mat(&mut self.encoder.w_z)),
            ("enc_w_r", Mat(&mut self.encoder.w_r)),
            ("enc_w_h", Mat(&mut self.encoder.w_h)),
            ("enc_u_z", Mat(&mut self.encoder.u_z)),
            ("enc_u_r", Mat(&mut self.encoder.u_r)),
            ("enc_u_h", Mat(&mut self.encoder.u_h)),
            ("enc_b_z", Vec1(&mut self.encoder.b_z)),
            ("enc_b_r", Vec1(&mut self.encoder.b_r)),
            ("enc_b_h", Vec1(&mut self.encoder.b_h)),
            ("attn_w_query", Mat(&mut self.attention.w_query)),
            ("attn_w_keys", Mat(&mut self.attention.w_keys)),
            ("attn_v", Vec1(&mut self.attention.v)),
            ("dec_w_z", Mat(&mut self.decoder.w_z)),
            ("dec_w_r", Mat(&mut self.decoder.w_r)),
            ("dec_w_h", Mat(&mut self.decoder.w_h)),
            ("dec_u_z", Mat(&mut self.decoder.u_z)),
            ("dec_u_r", Mat(&mut self.decoder.u_r)),
            ("dec_u_h", Mat(&mut self.decoder.u_h)),
            ("dec_b_z", Vec1(&mut self.decoder.b_z)),
            ("dec_b_r", Vec1(&mut self.decoder.b_r)),
            ("dec_b_h", Vec1(&mut self.decoder.b_h)),
            ("w_out", Mat(&mut self.w_out)),
        ]
    }

    /// `self += factor * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        for ((_, mut p), (_, g)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            p.add_scaled(&g, factor);
        }
    }

    /// Euclidean norm over all tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.scale(factor);
        }
    }
}

/// Read-only view of one parameter tensor.
#[derive(Clone, Copy)]
pub enum TensorView<'a> {
    Mat(&'a Array2<f64>),
    Vec1(&'a Array1<f64>),
}

impl TensorView<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorView::Mat(m) => m.len(),
            TensorView::Vec1(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear indexing.
    pub fn get(&self, i: usize) -> f64 {
        match self {
            TensorView::Mat(m) => m.as_slice().expect("standard layout")[i],
            TensorView::Vec1(v) => v[i],
        }
    }

    pub fn sum_sq(&self) -> f64 {
        match self {
            TensorView::Mat(m) => m.iter().map(|v| v * v).sum(),
            TensorView::Vec1(v) => v.iter().map(|v| v * v).sum(),
        }
    }

    /// `(rows, cols)`; vectors report `(1, len)`.
    pub fn shape2(&self) -> (usize, usize) {
        match self {
            TensorView::Mat(m) => (m.nrows(), m.ncols()),
            TensorView::Vec1(v) => (1, v.len()),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            TensorView::Mat(m) => m.iter().copied().collect(),
            TensorView::Vec1(v) => v.iter().copied().collect(),
        }
    }
}

/// Mutable view of one parameter tensor.
pub enum TensorViewMut<'a> {
    Mat(&'a mut Array2<f64>),
    Vec1(&'a mut Array1<f64>),
}

impl TensorViewMut<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorViewMut::Mat(m) => m.len(),
            TensorViewMut::Vec1(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            TensorViewMut::Mat(m) => m.as_slice().expect("standard layout")[i],
            TensorViewMut::Vec1(v) => v[i],
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        match self {
            TensorViewMut::Mat(m) => m.as_slice_mut().expect("standard layout")[i] = value,
            TensorViewMut::Vec1(v) => v[i] = value,
        }
    }

    pub fn add_scaled(&mut self, other: &TensorView<'_>, factor: f64) {
        match (self, other) {
            (TensorViewMut::Mat(p), TensorView::Mat(g)) => p.scaled_add(factor, g),
            (TensorViewMut::Vec1(p), TensorView::Vec1(g)) => p.scaled_add(factor, g),
            _ => panic!("tensor kind mismatch"),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        match self {
            TensorViewMut::Mat(m) => m.mapv_inplace(|v| v * factor),
            TensorViewMut::Vec1(v) => v.mapv_inplace(|v| v * factor),
        }
    }
}

/// `acc += col * row^T` without allocating the outer product.
pub(crate) fn add_outer(acc: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    general_mat_mul(
        1.0,
        &col.view().insert_axis(Axis(1)),
        &row.view().insert_axis(Axis(0)),
        1.0,
        acc,
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = ModelParams::init(11, 4, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = ModelParams::init(11, 4, &mut rng);
        assert_eq!(a, b);
        let bound = 0.5; // 1/sqrt(4)
        for (_, t) in a.tensors() {
            for v in t.values() {
                assert!(v.abs() <= bound);
            }
        }
    }

    #[test]
    fn tensor_count_and_shapes() {
        let params = ModelParams::zeros(7, 3);
        let tensors = params.tensors();
        assert_eq!(tensors.len(), 23);
        let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
        // embedding 21, encoder 3*9+3*9+3*3, attention 9+9+3, decoder 3*18+3*9+3*3, w_out 21
        assert_eq!(total, 21 + 63 + 21 + 90 + 21);
    }

    #[test]
    fn add_scaled_applies_sgd_update() {
        let mut params = ModelParams::zeros(4, 2);
        let mut grads = params.zeros_like();
        grads.w_out[[0, 0]] = 2.0;
        grads.encoder.b_z[1] = -4.0;
        params.add_scaled(&grads, -0.5);
        assert_eq!(params.w_out[[0, 0]], -1.0);
        assert_eq!(params.encoder.b_z[1], 2.0);
    }

    #[test]
    fn global_norm_matches_hand_count() {
        let mut params = ModelParams::zeros(4, 2);
        params.w_out[[0, 0]] = 3.0;
        params.attention.v[0] = 4.0;
        assert!((params.global_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn add_outer_accumulates() {
        let mut acc = Array2::zeros((2, 3));
        add_outer(&mut acc, &array![1.0, 2.0], &array![3.0, 4.0, 5.0]);
        add_outer(&mut acc, &array![1.0, 0.0], &array![1.0, 0.0, 0.0]);
        assert_eq!(acc, array![[4.0, 4.0, 5.0], [6.0, 8.0, 10.0]]);
    }
}
