//! BLEU-1 scoring, accuracy aggregation, and collaborating-pair detection.
//!
//! Detection extracts `(node, actual server, predicted server)` tuples from
//! positionally aligned predictions, keeps the `k` tuples with the highest
//! model probability (set A), and labels a tuple anomalous when the
//! prediction is wrong *and* the node/predicted pair spans two gateways.
//! Comparing the attack-trained model against the clean-trained model yields
//! the accuracy degradation signal.

use crate::ingest::{SequencePair, Vocabulary, ROLE_FROM, ROLE_TO};
use crate::model::{predict, ModelError, ModelParams};
use ndarray::Array1;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("set size k must be at least 1")]
    InvalidK,
    #[error("node {0} is not covered by the gateway map")]
    UnknownNode(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// BLEU-1 in `[0, 100]`: clipped unigram precision times brevity penalty.
///
/// Precision counts each predicted token at most as often as it occurs in
/// the reference; the brevity penalty `exp(1 - |ref| / |pred|)` applies when
/// the prediction is shorter than the reference. An empty prediction scores
/// zero; identical sequences score 100.
pub fn bleu1(predicted: &[u32], reference: &[u32]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let mut reference_counts: HashMap<u32, usize> = HashMap::new();
    for &token in reference {
        *reference_counts.entry(token).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for &token in predicted {
        if let Some(count) = reference_counts.get_mut(&token) {
            if *count > 0 {
                *count -= 1;
                matched += 1;
            }
        }
    }
    let precision = matched as f64 / predicted.len() as f64;
    let brevity_penalty = if predicted.len() < reference.len() {
        (1.0 - reference.len() as f64 / predicted.len() as f64).exp()
    } else {
        1.0
    };
    100.0 * precision * brevity_penalty
}

/// Per-pair BLEU-1 scores of one model over one test set.
#[derive(Debug, Clone, Serialize)]
pub struct BleuReport {
    pub scores: Vec<f64>,
}

impl BleuReport {
    /// Arithmetic mean of the per-pair scores.
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// `pair_index,bleu` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_index,bleu\n");
        for (i, score) in self.scores.iter().enumerate() {
            let _ = writeln!(out, "{i},{score}");
        }
        out
    }
}

/// Mean BLEU-1 of greedy predictions over the test pairs.
pub fn accuracy(
    params: &ModelParams,
    test_pairs: &[SequencePair],
    max_len: usize,
) -> Result<BleuReport, EvalError> {
    if test_pairs.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut scores = Vec::with_capacity(test_pairs.len());
    for pair in test_pairs {
        let prediction = predict(params, &pair.input.tokens, max_len)?;
        scores.push(bleu1(&prediction.tokens, &pair.target.tokens));
    }
    Ok(BleuReport { scores })
}

/// One aligned destination prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredTuple {
    /// Source node of the communication event.
    pub node: u32,
    /// Ground-truth destination.
    pub actual: u32,
    /// Predicted destination.
    pub predicted: u32,
    /// Model probability of the predicted destination token at that step.
    pub score: f64,
    /// Start of the reference sequence's time span (tie-break key).
    pub timestamp_us: u64,
    pub pair_index: usize,
    /// Token position within the reference sequence.
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Anomalous,
}

fn node_of(vocab: &Vocabulary, token: u32) -> Option<u32> {
    vocab.token(token)?.strip_prefix('n')?.parse().ok()
}

/// Positionally aligns a prediction against its reference and emits one
/// scored tuple per destination-role position. Positions whose tokens do not
/// decode as nodes (and chunk-leading destinations whose source token lives
/// in the previous chunk) are skipped and counted.
pub fn align_tuples(
    predicted: &[u32],
    distributions: &[Array1<f64>],
    reference: &crate::ingest::EventSequence,
    vocab: &Vocabulary,
    arity: usize,
    pair_index: usize,
) -> (Vec<ScoredTuple>, usize) {
    let mut tuples = Vec::new();
    let mut skipped = 0;
    if arity <= ROLE_TO {
        return (tuples, skipped);
    }
    let len = predicted.len().min(reference.tokens.len());
    for position in 0..len {
        let role = (reference.role_offset as usize + position) % arity;
        if role != ROLE_TO {
            continue;
        }
        if position == 0 {
            skipped += 1;
            continue;
        }
        debug_assert_eq!(
            (reference.role_offset as usize + position - 1) % arity,
            ROLE_FROM
        );
        let node = node_of(vocab, reference.tokens[position - 1]);
        let actual = node_of(vocab, reference.tokens[position]);
        let predicted_node = node_of(vocab, predicted[position]);
        match (node, actual, predicted_node) {
            (Some(node), Some(actual), Some(predicted_node)) => tuples.push(ScoredTuple {
                node,
                actual,
                predicted: predicted_node,
                score: distributions[position][predicted[position] as usize],
                timestamp_us: reference.span_us.0,
                pair_index,
                position,
            }),
            _ => skipped += 1,
        }
    }
    (tuples, skipped)
}

#[derive(Debug, Clone)]
pub struct TupleExtraction {
    pub tuples: Vec<ScoredTuple>,
    /// Destination positions skipped because a token did not decode as a node.
    pub skipped: usize,
}

/// Runs greedy prediction over every test pair and extracts scored node
/// tuples from the aligned destinations.
pub fn extract_node_tuples(
    params: &ModelParams,
    test_pairs: &[SequencePair],
    vocab: &Vocabulary,
    arity: usize,
    max_len: usize,
) -> Result<TupleExtraction, EvalError> {
    let mut tuples = Vec::new();
    let mut skipped = 0;
    for (pair_index, pair) in test_pairs.iter().enumerate() {
        let prediction = predict(params, &pair.input.tokens, max_len)?;
        let (mut pair_tuples, pair_skipped) = align_tuples(
            &prediction.tokens,
            &prediction.distributions,
            &pair.target,
            vocab,
            arity,
            pair_index,
        );
        tuples.append(&mut pair_tuples);
        skipped += pair_skipped;
    }
    Ok(TupleExtraction { tuples, skipped })
}

/// The `k` highest-probability tuples. Ties break on earlier timestamp, then
/// lower source node id, then pair index and position, making the selection
/// deterministic. Returns the shortfall flag when fewer than `k` exist.
pub fn top_set(tuples: &[ScoredTuple], k: usize) -> Result<(Vec<ScoredTuple>, bool), EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut sorted = tuples.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.timestamp_us.cmp(&b.timestamp_us))
            .then(a.node.cmp(&b.node))
            .then(a.pair_index.cmp(&b.pair_index))
            .then(a.position.cmp(&b.position))
    });
    let shortfall = sorted.len() < k;
    sorted.truncate(k);
    Ok((sorted, shortfall))
}

/// Labels each tuple: anomalous when the prediction is wrong and the
/// `(node, predicted)` pair spans two distinct gateways, benign otherwise.
pub fn classify(tuples: &[ScoredTuple], gateways: &[u32]) -> Result<Vec<Label>, EvalError> {
    let gateway_of = |node: u32| -> Result<u32, EvalError> {
        gateways
            .get(node as usize)
            .copied()
            .ok_or(EvalError::UnknownNode(node))
    };
    let mut labels = Vec::with_capacity(tuples.len());
    for tuple in tuples {
        let node_gw = gateway_of(tuple.node)?;
        gateway_of(tuple.actual)?;
        let predicted_gw = gateway_of(tuple.predicted)?;
        let anomalous = tuple.predicted != tuple.actual && node_gw != predicted_gw;
        labels.push(if anomalous { Label::Anomalous } else { Label::Benign });
    }
    Ok(labels)
}

/// Distinct `(node, predicted_server)` pairs of the anomalous tuples.
pub fn flagged_pairs(tuples: &[ScoredTuple], labels: &[Label]) -> Vec<(u32, u32)> {
    let mut pairs: Vec<(u32, u32)> = tuples
        .iter()
        .zip(labels)
        .filter(|(_, &label)| label == Label::Anomalous)
        .map(|(t, _)| (t.node, t.predicted))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledTuple {
    #[serde(flatten)]
    pub tuple: ScoredTuple,
    pub label: Label,
}

/// Everything needed to evaluate one trained model on its test set.
pub struct EvalInputs<'a> {
    pub params: &'a ModelParams,
    pub vocab: &'a Vocabulary,
    pub pairs: &'a [SequencePair],
    pub arity: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SideReport {
    pub accuracy: f64,
    pub set_a: Vec<LabeledTuple>,
    pub set_shortfall: bool,
    pub skipped_non_node: usize,
}

fn evaluate_side(
    inputs: &EvalInputs<'_>,
    gateways: &[u32],
    k: usize,
) -> Result<SideReport, EvalError> {
    let bleu = accuracy(inputs.params, inputs.pairs, inputs.max_len)?;
    let extraction =
        extract_node_tuples(inputs.params, inputs.pairs, inputs.vocab, inputs.arity, inputs.max_len)?;
    let (set_a, set_shortfall) = top_set(&extraction.tuples, k)?;
    let labels = classify(&set_a, gateways)?;
    let set_a = set_a
        .into_iter()
        .zip(&labels)
        .map(|(tuple, &label)| LabeledTuple { tuple, label })
        .collect();
    Ok(SideReport {
        accuracy: bleu.mean(),
        set_a,
        set_shortfall,
        skipped_non_node: extraction.skipped,
    })
}

/// Side-by-side comparison of the attack-trained and clean-trained models.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub k: usize,
    pub attack: SideReport,
    pub clean: SideReport,
    /// `clean accuracy - attack accuracy`, percentage points.
    pub degradation: f64,
    /// Collaborating pairs inferred from anomalous tuples of the attack
    /// model's set A.
    pub flagged_pairs: Vec<(u32, u32)>,
    pub ground_truth_pair: Option<(u32, u32)>,
    /// Whether some flagged pair matches the ground truth (unordered).
    pub ground_truth_recalled: Option<bool>,
}

/// Evaluates both models and assembles the detection report. The gateway map
/// must cover every node mentioned by set-A tuples.
pub fn compare_models(
    attack: &EvalInputs<'_>,
    clean: &EvalInputs<'_>,
    gateways: &[u32],
    k: usize,
    ground_truth_pair: Option<(u32, u32)>,
) -> Result<DetectionReport, EvalError> {
    let attack_side = evaluate_side(attack, gateways, k)?;
    let clean_side = evaluate_side(clean, gateways, k)?;
    let tuples: Vec<ScoredTuple> = attack_side.set_a.iter().map(|lt| lt.tuple).collect();
    let labels: Vec<Label> = attack_side.set_a.iter().map(|lt| lt.label).collect();
    let flagged = flagged_pairs(&tuples, &labels);
    let recalled = ground_truth_pair.map(|(a, b)| {
        flagged.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
    });
    let degradation = clean_side.accuracy - attack_side.accuracy;
    Ok(DetectionReport {
        k,
        attack: attack_side,
        clean: clean_side,
        degradation,
        flagged_pairs: flagged,
        ground_truth_pair,
        ground_truth_recalled: recalled,
    })
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Line-oriented human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "detection report (k = {})", self.k);
        let _ = writeln!(out, "accuracy with attack:    {:.2}", self.attack.accuracy);
        let _ = writeln!(out, "accuracy without attack: {:.2}", self.clean.accuracy);
        let _ = writeln!(out, "degradation:             {:.2}", self.degradation);
        for (title, side) in [("attack", &self.attack), ("clean", &self.clean)] {
            let _ = writeln!(
                out,
                "set A, {title} model (node, actual server, predicted server | score, label):"
            );
            for lt in &side.set_a {
                let label = match lt.label {
                    Label::Benign => "benign",
                    Label::Anomalous => "anomalous",
                };
                let _ = writeln!(
                    out,
                    "  ({}, {}, {}) | {:.4} {}",
                    lt.tuple.node, lt.tuple.actual, lt.tuple.predicted, lt.tuple.score, label
                );
            }
            if side.set_shortfall {
                let _ = writeln!(out, "  (fewer than k tuples available)");
            }
            let _ = writeln!(out, "  skipped non-node predictions: {}", side.skipped_non_node);
        }
        if self.flagged_pairs.is_empty() {
            let _ = writeln!(out, "flagged pairs: none");
        } else {
            let pairs: Vec<String> =
                self.flagged_pairs.iter().map(|(a, b)| format!("({a}, {b})")).collect();
            let _ = writeln!(out, "flagged pairs: {}", pairs.join(", "));
        }
        match (self.ground_truth_pair, self.ground_truth_recalled) {
            (Some((a, b)), Some(recalled)) => {
                let verdict = if recalled { "recalled" } else { "missed" };
                let _ = writeln!(out, "ground truth pair: ({a}, {b}) -> {verdict}");
            }
            _ => {
                let _ = writeln!(out, "ground truth pair: unknown");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::EventSequence;

    #[test]
    fn bleu_identity_scores_100() {
        let x = vec![3u32, 4, 5, 6];
        assert_eq!(bleu1(&x, &x), 100.0);
    }

    #[test]
    fn bleu_disjoint_scores_0() {
        assert_eq!(bleu1(&[3, 4], &[5, 6]), 0.0);
    }

    #[test]
    fn bleu_clipped_precision_hand_count() {
        // pred = [a, a, b], ref = [a, b, c]: clipped matches 2 of 3, equal
        // lengths so no brevity penalty.
        let score = bleu1(&[1, 1, 2], &[1, 2, 3]);
        assert!((score - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_brevity_penalty_applies_to_short_predictions() {
        // pred = [a], ref = [a, a, a]: precision 1, BP = exp(1 - 3).
        let score = bleu1(&[1], &[1, 1, 1]);
        assert!((score - 100.0 * (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_empty_prediction_scores_0() {
        assert_eq!(bleu1(&[], &[1, 2]), 0.0);
    }

    #[test]
    fn bleu_stays_in_bounds() {
        let cases: &[(&[u32], &[u32])] = &[
            (&[1], &[2]),
            (&[1, 2, 3], &[1]),
            (&[1, 1, 1, 1], &[1]),
            (&[5, 5], &[5, 5, 5, 5, 5]),
        ];
        for (pred, reference) in cases {
            let score = bleu1(pred, reference);
            assert!((0.0..=100.0).contains(&score), "{score} out of bounds");
        }
    }

    #[test]
    fn report_mean_is_plain_arithmetic() {
        let report = BleuReport { scores: vec![80.0, 100.0] };
        assert_eq!(report.mean(), 90.0);
    }

    fn test_vocab() -> Vocabulary {
        Vocabulary::from_stream([
            "r", "n14", "n2", "udp", "s0", "-------", "n15", "n6", "x",
        ])
    }

    fn reference(tokens: Vec<u32>, offset: u8) -> EventSequence {
        EventSequence {
            tokens,
            context: "udp".to_string(),
            span_us: (500, 900),
            role_offset: offset,
        }
    }

    fn uniform_dists(len: usize, vocab: usize, peak: f64) -> Vec<Array1<f64>> {
        let rest = (1.0 - peak) / (vocab - 1) as f64;
        (0..len).map(|_| Array1::from_elem(vocab, rest)).collect()
    }

    #[test]
    fn align_extracts_mispredicted_destination() {
        let vocab = test_vocab();
        let (r, n14, n2, udp, s0, flags, n15) = (3u32, 4, 5, 6, 7, 8, 9);
        // One full event tuple: r n14 n2 udp s0 -------
        let reference = reference(vec![r, n14, n2, udp, s0, flags], 0);
        // The model predicts n15 where ground truth says n2.
        let predicted = vec![r, n14, n15, udp, s0, flags];
        let mut dists = uniform_dists(6, vocab.len(), 0.7);
        for (i, &token) in predicted.iter().enumerate() {
            dists[i][token as usize] = 0.7;
        }
        let (tuples, skipped) = align_tuples(&predicted, &dists, &reference, &vocab, 6, 0);
        assert_eq!(skipped, 0);
        assert_eq!(tuples.len(), 1);
        let t = tuples[0];
        assert_eq!((t.node, t.actual, t.predicted), (14, 2, 15));
        assert!((t.score - 0.7).abs() < 1e-12);
        assert_eq!(t.timestamp_us, 500);
        assert_eq!(t.position, 2);
    }

    #[test]
    fn align_keeps_correct_predictions_too() {
        let vocab = test_vocab();
        let (r, n6, udp, s0, flags, n15) = (3u32, 10, 6, 7, 8, 9);
        let reference = reference(vec![r, n6, n15, udp, s0, flags], 0);
        let predicted = vec![r, n6, n15, udp, s0, flags];
        let mut dists = uniform_dists(6, vocab.len(), 0.9);
        for (i, &token) in predicted.iter().enumerate() {
            dists[i][token as usize] = 0.9;
        }
        let (tuples, _) = align_tuples(&predicted, &dists, &reference, &vocab, 6, 0);
        assert_eq!(tuples.len(), 1);
        assert_eq!((tuples[0].node, tuples[0].actual, tuples[0].predicted), (6, 15, 15));
    }

    #[test]
    fn align_skips_non_node_predictions_and_counts_them() {
        let vocab = test_vocab();
        let (r, n14, n2, udp, s0, flags, x) = (3u32, 4, 5, 6, 7, 8, 11);
        let reference = reference(vec![r, n14, n2, udp, s0, flags], 0);
        // Prediction at the destination slot is not a node token.
        let predicted = vec![r, n14, x, udp, s0, flags];
        let dists = uniform_dists(6, vocab.len(), 0.5);
        let (tuples, skipped) = align_tuples(&predicted, &dists, &reference, &vocab, 6, 0);
        assert!(tuples.is_empty());
        assert_eq!(skipped, 1);
    }

    #[test]
    fn align_skips_chunk_leading_destination() {
        let vocab = test_vocab();
        let (n2, udp, s0, flags) = (5u32, 6, 7, 8);
        // role_offset 2 means the chunk starts on a destination token whose
        // source token lives in the previous chunk.
        let reference = reference(vec![n2, udp, s0, flags], 2);
        let predicted = vec![n2, udp, s0, flags];
        let dists = uniform_dists(4, vocab.len(), 0.5);
        let (tuples, skipped) = align_tuples(&predicted, &dists, &reference, &vocab, 6, 0);
        assert!(tuples.is_empty());
        assert_eq!(skipped, 1);
    }

    fn tuple(node: u32, actual: u32, predicted: u32, score: f64, ts: u64) -> ScoredTuple {
        ScoredTuple {
            node,
            actual,
            predicted,
            score,
            timestamp_us: ts,
            pair_index: 0,
            position: 2,
        }
    }

    #[test]
    fn top_set_keeps_k_highest_scores() {
        let tuples = vec![
            tuple(1, 2, 2, 0.5, 10),
            tuple(3, 4, 4, 0.9, 20),
            tuple(5, 6, 6, 0.7, 30),
        ];
        let (set, shortfall) = top_set(&tuples, 2).unwrap();
        assert!(!shortfall);
        assert_eq!(set.len(), 2);
        assert_eq!(set[0].node, 3);
        assert_eq!(set[1].node, 5);
    }

    #[test]
    fn top_set_tie_breaks_on_earlier_timestamp() {
        let tuples = vec![tuple(9, 2, 2, 0.5, 700), tuple(4, 2, 2, 0.5, 100)];
        let (set, _) = top_set(&tuples, 1).unwrap();
        assert_eq!(set[0].node, 4);
    }

    #[test]
    fn top_set_flags_shortfall() {
        let tuples = vec![tuple(1, 2, 2, 0.5, 10)];
        let (set, shortfall) = top_set(&tuples, 5).unwrap();
        assert_eq!(set.len(), 1);
        assert!(shortfall);
        assert!(top_set(&tuples, 0).is_err());
    }

    /// Even/odd gateway split over 16 nodes.
    fn gateways() -> Vec<u32> {
        (0..16).map(|n| n % 2).collect()
    }

    #[test]
    fn classify_flags_cross_gateway_mispredictions() {
        let labels = classify(&[tuple(14, 2, 15, 0.9, 0)], &gateways()).unwrap();
        assert_eq!(labels, vec![Label::Anomalous]);
    }

    #[test]
    fn classify_keeps_correct_predictions_benign() {
        let labels = classify(&[tuple(6, 15, 15, 0.9, 0)], &gateways()).unwrap();
        assert_eq!(labels, vec![Label::Benign]);
    }

    #[test]
    fn classify_keeps_same_gateway_mispredictions_benign() {
        // 2 and 14 are both even, hence same gateway.
        let labels = classify(&[tuple(2, 11, 14, 0.9, 0)], &gateways()).unwrap();
        assert_eq!(labels, vec![Label::Benign]);
    }

    #[test]
    fn classify_rejects_unknown_nodes() {
        assert!(matches!(
            classify(&[tuple(99, 2, 3, 0.9, 0)], &gateways()),
            Err(EvalError::UnknownNode(99))
        ));
    }

    #[test]
    fn flagged_pairs_are_distinct_anomalous_pairs() {
        let tuples = vec![
            tuple(14, 2, 15, 0.9, 0),
            tuple(14, 3, 15, 0.8, 1),
            tuple(6, 15, 15, 0.7, 2),
        ];
        let labels = classify(&tuples, &gateways()).unwrap();
        assert_eq!(flagged_pairs(&tuples, &labels), vec![(14, 15)]);
    }

    #[test]
    fn classify_never_flags_same_gateway_pairs() {
        // Exhaustive over a small node set: anomalous implies cross-gateway.
        let gws = gateways();
        for node in 0..16u32 {
            for actual in 0..16u32 {
                for predicted in 0..16u32 {
                    let t = tuple(node, actual, predicted, 0.5, 0);
                    let label = classify(&[t], &gws).unwrap()[0];
                    if label == Label::Anomalous {
                        assert_ne!(gws[node as usize], gws[predicted as usize]);
                        assert_ne!(actual, predicted);
                    }
                }
            }
        }
    }
}
