//! Encoder-decoder forward pass, backpropagation, SGD training, and greedy
//! decoding.

use super::attention::AttnCache;
use super::cell::GruCache;
use super::params::{add_outer, ModelParams};
use super::{argmax, softmax, LossPoint, ModelError, TrainConfig};
use crate::ingest::{SequencePair, EOS, SOS};
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability floor used by the loss so `log` never sees zero.
pub const NLL_FLOOR: f64 = 1e-12;

/// Default global gradient-norm clip threshold.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Negative log-likelihood of `target` under distribution `p`; probabilities
/// below [`NLL_FLOOR`] are clamped before the logarithm.
pub fn nll_loss(p: &Array1<f64>, target: usize) -> f64 {
    -p[target].max(NLL_FLOOR).ln()
}

/// Encoder activations for one input sequence.
pub struct Encoding {
    pub(crate) caches: Vec<GruCache>,
    /// One hidden state per input element, `|x| x H`.
    pub outputs: Array2<f64>,
}

impl Encoding {
    /// The hidden state after the last input element.
    pub fn final_hidden(&self) -> Array1<f64> {
        self.outputs.row(self.outputs.nrows() - 1).to_owned()
    }
}

fn check_tokens(params: &ModelParams, tokens: &[u32]) -> Result<(), ModelError> {
    for &token in tokens {
        if token as usize >= params.vocab_size {
            return Err(ModelError::TokenOutOfRange { token, vocab: params.vocab_size });
        }
    }
    Ok(())
}

/// Runs the encoder over an embedded token sequence.
pub fn encode(params: &ModelParams, tokens: &[u32]) -> Result<Encoding, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    check_tokens(params, tokens)?;
    let hidden = params.hidden;
    let mut outputs = Array2::zeros((tokens.len(), hidden));
    let mut caches = Vec::with_capacity(tokens.len());
    let mut h = Array1::zeros(hidden);
    for (t, &token) in tokens.iter().enumerate() {
        let x = params.embedding.row(token as usize).to_owned();
        let cache = params.encoder.forward(&x, &h)?;
        h = cache.h.clone();
        outputs.row_mut(t).assign(&cache.h);
        caches.push(cache);
    }
    Ok(Encoding { caches, outputs })
}

fn concat(a: ndarray::ArrayView1<'_, f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend(a.iter().copied());
    out.extend(b.iter().copied());
    Array1::from_vec(out)
}

/// One attended decode step; returns the next decoder state and the
/// distribution over the vocabulary.
pub fn decode_step(
    params: &ModelParams,
    y_prev: u32,
    s_prev: &Array1<f64>,
    encoder_outputs: ndarray::ArrayView2<'_, f64>,
) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
    check_tokens(params, &[y_prev])?;
    let keys = params.attention.keys(encoder_outputs);
    let (_, context) = params.attention.forward(s_prev, encoder_outputs, keys.view())?;
    let x = concat(params.embedding.row(y_prev as usize), &context);
    let cache = params.decoder.forward(&x, s_prev)?;
    let p = softmax(&params.w_out.dot(&cache.h));
    Ok((cache.h, p))
}

pub(crate) struct StepCache {
    input_token: u32,
    attn: AttnCache,
    gru: GruCache,
    p: Array1<f64>,
    target: u32,
}

pub(crate) struct PairForward {
    encoding: Encoding,
    steps: Vec<StepCache>,
    /// Sum of per-step NLL; the SGD gradient is taken of this quantity.
    pub loss_sum: f64,
}

impl PairForward {
    /// Mean NLL per decoded step, the reported training metric.
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.steps.len() as f64
    }
}

/// Full forward pass over a pair. The decoder starts from SOS, predicts each
/// target token and finally EOS; `teacher_forced` selects whether ground
/// truth or the model's own argmax feeds the next step.
pub(crate) fn forward_pair(
    params: &ModelParams,
    input: &[u32],
    target: &[u32],
    teacher_forced: bool,
) -> Result<PairForward, ModelError> {
    if target.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    check_tokens(params, target)?;
    let encoding = encode(params, input)?;
    let keys = params.attention.keys(encoding.outputs.view());
    let mut s = encoding.final_hidden();
    let mut input_token = SOS;
    let mut steps = Vec::with_capacity(target.len() + 1);
    let mut loss = 0.0;
    for step in 0..=target.len() {
        let target_token = target.get(step).copied().unwrap_or(EOS);
        let (attn, context) =
            params.attention.forward(&s, encoding.outputs.view(), keys.view())?;
        let x = concat(params.embedding.row(input_token as usize), &context);
        let gru = params.decoder.forward(&x, &s)?;
        let p = softmax(&params.w_out.dot(&gru.h));
        loss += nll_loss(&p, target_token as usize);
        let next = if teacher_forced { target_token } else { argmax(&p) as u32 };
        s = gru.h.clone();
        steps.push(StepCache { input_token, attn, gru, p, target: target_token });
        input_token = next;
    }
    Ok(PairForward { encoding, steps, loss_sum: loss })
}

/// Backpropagates the mean NLL through decoder, attention, encoder, and
/// embeddings; returns gradients shaped like `params`.
pub(crate) fn backward_pair(
    params: &ModelParams,
    input: &[u32],
    forward: &PairForward,
) -> ModelParams {
    let hidden = params.hidden;
    let t_len = forward.encoding.outputs.nrows();
    let mut grads = params.zeros_like();
    let mut d_s_next = Array1::zeros(hidden);
    let mut d_enc = Array2::zeros((t_len, hidden));

    for step in forward.steps.iter().rev() {
        // Softmax + NLL.
        let mut d_logits = step.p.clone();
        d_logits[step.target as usize] -= 1.0;
        add_outer(&mut grads.w_out, &d_logits, &step.gru.h);
        let mut d_s = params.w_out.t().dot(&d_logits);
        d_s += &d_s_next;

        // Decoder cell.
        let (d_x, mut d_s_prev) = params.decoder.backward(&d_s, &step.gru, &mut grads.decoder);
        let d_embed = d_x.slice(s![..hidden]).to_owned();
        let d_context = d_x.slice(s![hidden..]).to_owned();
        {
            let mut row = grads.embedding.row_mut(step.input_token as usize);
            row += &d_embed;
        }

        // Attention.
        let (d_s_attn, d_enc_step) = params.attention.backward(
            &d_context,
            &step.attn,
            forward.encoding.outputs.view(),
            &mut grads.attention,
        );
        d_s_prev += &d_s_attn;
        d_enc += &d_enc_step;
        d_s_next = d_s_prev;
    }

    // The initial decoder state is the final encoder hidden state.
    let mut d_h = d_s_next;
    for t in (0..t_len).rev() {
        d_h += &d_enc.row(t);
        let (d_x, d_h_prev) =
            params.encoder.backward(&d_h, &forward.encoding.caches[t], &mut grads.encoder);
        let mut row = grads.embedding.row_mut(input[t] as usize);
        row += &d_x;
        d_h = d_h_prev;
    }
    grads
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub loss: f64,
    pub clipped: bool,
}

/// One SGD step on one pair: forward, backward, clip, update. Draws a single
/// teacher-forcing coin for the whole pair. The gradient is of the summed
/// per-step NLL (the sequence loss); the returned loss is the per-step mean.
pub fn train_step(
    params: &mut ModelParams,
    pair: &SequencePair,
    lr: f64,
    teacher_forcing_p: f64,
    rng: &mut impl Rng,
) -> Result<StepOutcome, ModelError> {
    train_step_clipped(params, pair, lr, teacher_forcing_p, DEFAULT_CLIP_NORM, rng)
}

pub fn train_step_clipped(
    params: &mut ModelParams,
    pair: &SequencePair,
    lr: f64,
    teacher_forcing_p: f64,
    clip_norm: f64,
    rng: &mut impl Rng,
) -> Result<StepOutcome, ModelError> {
    if !(0.0..=1.0).contains(&teacher_forcing_p) {
        return Err(ModelError::InvalidConfig(
            "teacher forcing probability must lie in [0, 1]".into(),
        ));
    }
    let forced = rng.random_bool(teacher_forcing_p);
    let forward = forward_pair(params, &pair.input.tokens, &pair.target.tokens, forced)?;
    if !forward.loss_sum.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    let mut grads = backward_pair(params, &pair.input.tokens, &forward);
    let mut clipped = false;
    if clip_norm > 0.0 {
        let norm = grads.global_norm();
        if norm > clip_norm {
            grads.scale(clip_norm / norm);
            clipped = true;
        }
    }
    params.add_scaled(&grads, -lr);
    Ok(StepOutcome { loss: forward.mean_loss(), clipped })
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: Vec<LossPoint>,
    pub clip_events: usize,
    pub iterations_done: usize,
}

/// Trains a freshly initialized model: `(vocab_size, pairs, config)` fully
/// determine the result bit for bit.
pub fn train(
    vocab_size: usize,
    pairs: &[SequencePair],
    config: &TrainConfig,
) -> Result<TrainOutput, ModelError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(ModelError::EmptyPairSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::init(vocab_size, config.hidden_size, &mut rng);
    train_loop(params, 0, pairs, config, &mut rng)
}

/// Continues training a loaded model for the remaining iterations. The RNG
/// restarts from a seed derived from `(config.seed, iterations_done)`, so
/// resuming twice from the same checkpoint is deterministic.
pub fn resume(
    params: ModelParams,
    iterations_done: usize,
    pairs: &[SequencePair],
    config: &TrainConfig,
) -> Result<TrainOutput, ModelError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(ModelError::EmptyPairSet);
    }
    if params.hidden != config.hidden_size {
        return Err(ModelError::InvalidConfig(format!(
            "checkpoint hidden size {} does not match configured {}",
            params.hidden, config.hidden_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(iterations_done as u64));
    train_loop(params, iterations_done, pairs, config, &mut rng)
}

fn train_loop(
    mut params: ModelParams,
    start: usize,
    pairs: &[SequencePair],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutput, ModelError> {
    let mut history = Vec::new();
    let mut clip_events = 0;
    let mut window_sum = 0.0;
    let mut window_len = 0usize;
    for i in start..config.iterations {
        let lr = config.lr_at(i);
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let outcome =
            train_step_clipped(&mut params, pair, lr, config.teacher_forcing, config.clip_norm, rng)
                .map_err(|e| match e {
                    ModelError::NonFiniteLoss => ModelError::Diverged { iteration: i + 1 },
                    other => other,
                })?;
        if outcome.clipped {
            clip_events += 1;
        }
        window_sum += outcome.loss;
        window_len += 1;
        if (i + 1) % config.log_every == 0 {
            history.push(LossPoint {
                iteration: i + 1,
                mean_nll: window_sum / window_len as f64,
            });
            window_sum = 0.0;
            window_len = 0;
        }
    }
    Ok(TrainOutput { params, history, clip_events, iterations_done: config.iterations })
}

/// Greedy decode output.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub tokens: Vec<u32>,
    /// Full output distribution at each emitted token position.
    pub distributions: Vec<Array1<f64>>,
}

/// Greedy argmax decoding from SOS until EOS or `max_len` tokens.
pub fn predict(
    params: &ModelParams,
    input: &[u32],
    max_len: usize,
) -> Result<Prediction, ModelError> {
    let encoding = encode(params, input)?;
    let keys = params.attention.keys(encoding.outputs.view());
    let mut s = encoding.final_hidden();
    let mut input_token = SOS;
    let mut tokens = Vec::new();
    let mut distributions = Vec::new();
    for _ in 0..max_len {
        let (_, context) =
            params.attention.forward(&s, encoding.outputs.view(), keys.view())?;
        let x = concat(params.embedding.row(input_token as usize), &context);
        let cache = params.decoder.forward(&x, &s)?;
        let p = softmax(&params.w_out.dot(&cache.h));
        let token = argmax(&p) as u32;
        if token == EOS {
            break;
        }
        tokens.push(token);
        distributions.push(p);
        s = cache.h;
        input_token = token;
    }
    Ok(Prediction { tokens, distributions })
}
