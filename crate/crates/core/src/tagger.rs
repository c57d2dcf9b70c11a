//! Sequence-to-sequence tagging model.
//!
//! A unidirectional LSTM encoder reads the embedded address; its final state
//! initializes a unidirectional LSTM decoder that is forced to emit exactly
//! one tag per input token (no end-of-sequence decoding). The decoder's first
//! input is a learned begin-of-sequence row; afterwards it consumes the
//! embedding of the previous prediction (or the gold tag when teacher
//! forcing). A linear layer projects each decoder state to the 8 tag logits.

use crate::domain::{tokenize, DomainError, Tag, TAG_COUNT};
use crate::embedding::{Embedder, FixedNgramTable, SubwordComposer};
use crate::nn::{softmax, uniform_matrix, LstmCell, NodeId, ParamId, ParamSet, Tape};
use crate::subword::{BpeVocab, NgramSpec};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::HashMap;
use thiserror::Error;

/// Row index of the begin-of-sequence entry in the tag-input table.
pub const BOS_ROW: usize = TAG_COUNT;

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("teacher tags ({teacher}) do not match sequence length ({len})")]
    LengthMismatch { teacher: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fixed,
    Composed,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fixed => "fixed",
            Variant::Composed => "composed",
        }
    }
}

/// Layer widths. `d_word` is the word-embedding dimension (for the composed
/// variant it always equals `h_comp`); `hidden` is the encoder/decoder state
/// size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_word: usize,
    pub d_sub: usize,
    pub h_comp: usize,
    pub hidden: usize,
}

impl ModelDims {
    /// Desk-scale defaults used throughout the test corpus work.
    pub fn desk() -> Self {
        ModelDims {
            d_word: 64,
            d_sub: 32,
            h_comp: 64,
            hidden: 128,
        }
    }

    /// Full-scale dimensions for fidelity runs.
    pub fn full_scale() -> Self {
        ModelDims {
            d_word: 300,
            d_sub: 300,
            h_comp: 300,
            hidden: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dims: ModelDims,
    pub seed: u64,
}

/// The full trainable model: embedder, encoder, decoder, tag-input table and
/// tag projection, plus the parameter store that owns every matrix.
#[derive(Debug, Clone)]
pub struct ParserModel {
    config: ModelConfig,
    pub params: ParamSet,
    pub embedder: Embedder,
    /// `(9, d_word)`: one input row per predictable tag plus the BOS row.
    pub tag_input: ParamId,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    /// `(8, hidden)` tag projection and its `(1, 8)` bias.
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl ParserModel {
    /// Builds the composed (BPE + BiLSTM composition) variant. Parameter
    /// initialization order is fixed: composer table, forward cell, backward
    /// cell, fully connected, tag input, encoder, decoder, projection.
    pub fn new_composed(vocab: BpeVocab, dims: ModelDims, seed: u64) -> Self {
        assert_eq!(
            dims.d_word, dims.h_comp,
            "composed variant ties d_word to the composer hidden size"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let composer = SubwordComposer::new(&mut params, vocab, dims.d_sub, dims.h_comp, &mut rng);
        let (tag_input, encoder, decoder, proj_w, proj_b) =
            Self::tagger_params(&mut params, dims, &mut rng);
        ParserModel {
            config: ModelConfig {
                variant: Variant::Composed,
                dims,
                seed,
            },
            params,
            embedder: Embedder::Composed(composer),
            tag_input,
            encoder,
            decoder,
            proj_w,
            proj_b,
        }
    }

    /// Builds the fixed variant: a frozen seeded n-gram table feeds the same
    /// tagger. The table never enters the parameter store.
    pub fn new_fixed(spec: NgramSpec, dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = FixedNgramTable::new(spec, dims.d_word, seed ^ 0x66697865);
        let mut params = ParamSet::new();
        let (tag_input, encoder, decoder, proj_w, proj_b) =
            Self::tagger_params(&mut params, dims, &mut rng);
        ParserModel {
            config: ModelConfig {
                variant: Variant::Fixed,
                dims,
                seed,
            },
            params,
            embedder: Embedder::Fixed(table),
            tag_input,
            encoder,
            decoder,
            proj_w,
            proj_b,
        }
    }

    fn tagger_params(
        params: &mut ParamSet,
        dims: ModelDims,
        rng: &mut ChaCha8Rng,
    ) -> (ParamId, LstmCell, LstmCell, ParamId, ParamId) {
        let tag_input = params.add(
            "tagger.tag_input",
            uniform_matrix(TAG_COUNT + 1, dims.d_word, 0.1, rng),
        );
        let encoder = LstmCell::new(params, "tagger.encoder", dims.d_word, dims.hidden, rng);
        let decoder = LstmCell::new(params, "tagger.decoder", dims.d_word, dims.hidden, rng);
        let k = 1.0 / (dims.hidden as f64).sqrt();
        let proj_w = params.add("tagger.proj_w", uniform_matrix(TAG_COUNT, dims.hidden, k, rng));
        let proj_b = params.add("tagger.proj_b", Array2::zeros((1, TAG_COUNT)));
        (tag_input, encoder, decoder, proj_w, proj_b)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    /// Tags one address: tokenize, embed, encode, free-running decode, then a
    /// softmax over each step's logits.
    pub fn parse(&self, raw: &str) -> Result<ParseResult, TaggerError> {
        let tokens = tokenize(raw)?;
        let mut tape = Tape::new();
        let embedded = crate::embedding::embed_sequence(&mut tape, &self.params, &self.embedder, &tokens);
        let (_, context) = encode(&mut tape, &self.params, self, embedded);
        let logits = decode(&mut tape, &self.params, self, context, tokens.len(), None)
            .expect("free-running decode cannot mismatch");
        let mut tags = Vec::with_capacity(tokens.len());
        let mut probabilities = Vec::with_capacity(tokens.len());
        for node in logits {
            let row = tape.value(node).row(0).to_vec();
            let probs = softmax(&row);
            let best = argmax(&probs);
            tags.push(Tag::from_index(best).expect("class index in range"));
            probabilities.push(probs);
        }
        Ok(ParseResult {
            tokens,
            tags,
            probabilities,
        })
    }
}

/// Prediction for one address: one tag and one 8-way probability row per
/// token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub probabilities: Vec<Vec<f64>>,
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Runs the encoder over one embedded sequence (`T x d_word`). Returns every
/// step's `(h, c)` plus the final state, which is the decoder's context.
pub fn encode(
    tape: &mut Tape,
    params: &ParamSet,
    model: &ParserModel,
    embedded: NodeId,
) -> (Vec<(NodeId, NodeId)>, (NodeId, NodeId)) {
    let steps = tape.value(embedded).nrows();
    assert!(steps >= 1, "encoder needs at least one step");
    let mut states = Vec::with_capacity(steps);
    let mut state = model.encoder.zero_state(tape, 1);
    for t in 0..steps {
        let x = tape.select_rows(vec![(embedded, t)]);
        state = model.encoder.step(tape, params, x, state);
        states.push(state);
    }
    (states, state)
}

/// Runs the decoder for exactly `t_len` steps from the encoder context. The
/// first input is the BOS row of the tag-input table; afterwards the input is
/// the gold tag's row under teacher forcing, otherwise the argmax of the
/// previous step's logits. Returns one `(1, 8)` logits node per step.
pub fn decode(
    tape: &mut Tape,
    params: &ParamSet,
    model: &ParserModel,
    context: (NodeId, NodeId),
    t_len: usize,
    teacher: Option<&[Tag]>,
) -> Result<Vec<NodeId>, TaggerError> {
    if let Some(teacher) = teacher {
        if teacher.len() != t_len {
            return Err(TaggerError::LengthMismatch {
                teacher: teacher.len(),
                len: t_len,
            });
        }
    }
    let tag_input = tape.param(params, model.tag_input);
    let proj_w = tape.param(params, model.proj_w);
    let proj_b = tape.param(params, model.proj_b);

    let mut logits = Vec::with_capacity(t_len);
    let mut state = context;
    for t in 0..t_len {
        let input_row = if t == 0 {
            BOS_ROW
        } else if let Some(teacher) = teacher {
            teacher[t - 1].index()
        } else {
            argmax(&tape.value(logits[t - 1]).row(0).to_vec())
        };
        let x = tape.gather_rows(tag_input, vec![Some(input_row)]);
        state = model.decoder.step(tape, params, x, state);
        let projected = tape.matmul_t(state.0, proj_w);
        logits.push(tape.add_row(projected, proj_b));
    }
    Ok(logits)
}

/// Batched forward pass over many sequences at once.
///
/// Sequences are sorted by length (descending) internally; at step `t` only
/// the prefix of rows whose sequence is still live participates, so no
/// computation ever runs on padding and batch results match per-sequence
/// evaluation exactly.
pub struct BatchForward {
    /// Per step `t`: logits node with one row per still-live sequence.
    pub step_logits: Vec<NodeId>,
    /// Sorted position -> original index into the input slice.
    pub order: Vec<usize>,
    /// Sequence lengths in sorted order.
    pub lengths: Vec<usize>,
}

impl BatchForward {
    pub fn total_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }
}

pub fn forward_batch(
    tape: &mut Tape,
    params: &ParamSet,
    model: &ParserModel,
    sequences: &[&[String]],
    teacher: Option<&[&[Tag]]>,
) -> BatchForward {
    assert!(!sequences.is_empty(), "empty batch");
    if let Some(teacher) = teacher {
        assert_eq!(teacher.len(), sequences.len(), "one teacher row per sequence");
        for (s, t) in sequences.iter().zip(teacher.iter()) {
            assert_eq!(s.len(), t.len(), "teacher length mismatch");
        }
    }

    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.sort_by_key(|&i| (Reverse(sequences[i].len()), i));
    let lengths: Vec<usize> = order.iter().map(|&i| sequences[i].len()).collect();
    let t_max = lengths[0];
    // live[t] = number of sequences with length > t; lengths are sorted
    // descending so the live rows are always a prefix.
    let live: Vec<usize> = (0..t_max)
        .map(|t| lengths.iter().take_while(|&&l| l > t).count())
        .collect();

    // Embed each distinct token once.
    let mut word_index: HashMap<&str, usize> = HashMap::new();
    let mut unique: Vec<&str> = Vec::new();
    for &i in &order {
        for tok in sequences[i] {
            word_index.entry(tok.as_str()).or_insert_with(|| {
                unique.push(tok.as_str());
                unique.len() - 1
            });
        }
    }
    let embedded = model.embedder.embed_words(tape, params, &unique);

    // Encoder over shrinking prefixes.
    let mut enc_states: Vec<(NodeId, NodeId)> = Vec::with_capacity(t_max);
    let mut state = model.encoder.zero_state(tape, live[0]);
    for t in 0..t_max {
        let k = live[t];
        if t > 0 && k < live[t - 1] {
            let picks_h: Vec<(NodeId, usize)> = (0..k).map(|r| (state.0, r)).collect();
            let picks_c: Vec<(NodeId, usize)> = (0..k).map(|r| (state.1, r)).collect();
            state = (tape.select_rows(picks_h), tape.select_rows(picks_c));
        }
        let idx: Vec<Option<usize>> = (0..k)
            .map(|r| Some(word_index[sequences[order[r]][t].as_str()]))
            .collect();
        let x = tape.gather_rows(embedded, idx);
        state = model.encoder.step(tape, params, x, state);
        enc_states.push(state);
    }

    // Context: each row's encoder state at its own last step.
    let ctx_h: Vec<(NodeId, usize)> = (0..lengths.len())
        .map(|r| (enc_states[lengths[r] - 1].0, r))
        .collect();
    let ctx_c: Vec<(NodeId, usize)> = (0..lengths.len())
        .map(|r| (enc_states[lengths[r] - 1].1, r))
        .collect();
    let mut dec_state = (tape.select_rows(ctx_h), tape.select_rows(ctx_c));

    let tag_input = tape.param(params, model.tag_input);
    let proj_w = tape.param(params, model.proj_w);
    let proj_b = tape.param(params, model.proj_b);

    let mut step_logits: Vec<NodeId> = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let k = live[t];
        let prev_rows = if t == 0 { lengths.len() } else { live[t - 1] };
        if k < prev_rows {
            let picks_h: Vec<(NodeId, usize)> = (0..k).map(|r| (dec_state.0, r)).collect();
            let picks_c: Vec<(NodeId, usize)> = (0..k).map(|r| (dec_state.1, r)).collect();
            dec_state = (tape.select_rows(picks_h), tape.select_rows(picks_c));
        }
        let idx: Vec<Option<usize>> = if t == 0 {
            vec![Some(BOS_ROW); k]
        } else if let Some(teacher) = teacher {
            (0..k)
                .map(|r| Some(teacher[order[r]][t - 1].index()))
                .collect()
        } else {
            let prev = tape.value(step_logits[t - 1]);
            (0..k)
                .map(|r| Some(argmax(&prev.row(r).to_vec())))
                .collect()
        };
        let x = tape.gather_rows(tag_input, idx);
        dec_state = model.decoder.step(tape, params, x, dec_state);
        let projected = tape.matmul_t(dec_state.0, proj_w);
        step_logits.push(tape.add_row(projected, proj_b));
    }

    BatchForward {
        step_logits,
        order,
        lengths,
    }
}

/// Mean cross-entropy over every token of the batch. `gold` is aligned to the
/// original sequence order.
pub fn batch_loss(tape: &mut Tape, forward: &BatchForward, gold: &[&[Tag]]) -> NodeId {
    let mut total: Option<NodeId> = None;
    for (t, &logits) in forward.step_logits.iter().enumerate() {
        let rows = tape.value(logits).nrows();
        let targets: Vec<Option<usize>> = (0..rows)
            .map(|r| Some(gold[forward.order[r]][t].index()))
            .collect();
        let step_sum = tape.ce_sum(logits, targets);
        total = Some(match total {
            Some(acc) => tape.add(acc, step_sum),
            None => step_sum,
        });
    }
    let total = total.expect("at least one step");
    tape.scale(total, 1.0 / forward.total_tokens() as f64)
}

/// Free-running predictions for a batch, in the original sequence order.
pub fn predict_batch(model: &ParserModel, sequences: &[&[String]]) -> Vec<Vec<Tag>> {
    let mut tape = Tape::new();
    let forward = forward_batch(&mut tape, &model.params, model, sequences, None);
    let mut out: Vec<Vec<Tag>> = sequences.iter().map(|s| Vec::with_capacity(s.len())).collect();
    for &logits in &forward.step_logits {
        let values = tape.value(logits);
        for r in 0..values.nrows() {
            let best = argmax(&values.row(r).to_vec());
            out[forward.order[r]].push(Tag::from_index(best).expect("class index"));
        }
    }
    out
}
