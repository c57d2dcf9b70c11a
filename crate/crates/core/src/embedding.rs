//! Word embedding pipelines.
//!
//! Two interchangeable ways to turn a token into a `d_word` vector:
//!
//! * **Fixed n-gram table** — the word's character n-grams are hashed into a
//!   frozen random table and summed. Never trained; handles any string.
//! * **Subword composer** — the word is BPE-segmented, subword vectors are run
//!   through forward and backward LSTMs, and the concatenated final hidden
//!   states pass through a fully connected layer. Trainable end to end.

use crate::nn::{uniform_matrix, LstmCell, NodeId, ParamId, ParamSet, Tape};
use crate::subword::{char_ngrams, BpeVocab, NgramSpec};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Frozen hashed n-gram embedding table.
#[derive(Debug, Clone)]
pub struct FixedNgramTable {
    spec: NgramSpec,
    vectors: Array2<f64>,
}

impl FixedNgramTable {
    /// Builds the table with seeded uniform(-0.1, 0.1) entries. The table is
    /// never updated afterwards.
    pub fn new(spec: NgramSpec, d_word: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = uniform_matrix(spec.hash_buckets, d_word, 0.1, &mut rng);
        FixedNgramTable { spec, vectors }
    }

    pub fn from_parts(spec: NgramSpec, vectors: Array2<f64>) -> Self {
        assert_eq!(vectors.nrows(), spec.hash_buckets);
        FixedNgramTable { spec, vectors }
    }

    pub fn spec(&self) -> &NgramSpec {
        &self.spec
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn d_word(&self) -> usize {
        self.vectors.ncols()
    }

    /// Sum of the hashed n-gram vectors; the zero vector when the word is too
    /// short to have any.
    pub fn embed(&self, word: &str) -> Array1<f64> {
        let mut out = Array1::zeros(self.d_word());
        for gram in char_ngrams(word, &self.spec) {
            out += &self.vectors.row(self.spec.bucket(&gram));
        }
        out
    }
}

/// Trainable subword composition: BPE segmentation, a subword embedding table,
/// a forward and a backward LSTM, and a fully connected projection whose
/// output width equals the LSTM hidden dimension.
#[derive(Debug, Clone)]
pub struct SubwordComposer {
    vocab: BpeVocab,
    pub table: ParamId,
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub d_sub: usize,
    pub h_comp: usize,
}

impl SubwordComposer {
    pub fn new(
        params: &mut ParamSet,
        vocab: BpeVocab,
        d_sub: usize,
        h_comp: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let table = params.add(
            "composer.table",
            uniform_matrix(vocab.len(), d_sub, 0.1, rng),
        );
        let fwd = LstmCell::new(params, "composer.fwd", d_sub, h_comp, rng);
        let bwd = LstmCell::new(params, "composer.bwd", d_sub, h_comp, rng);
        let k = 1.0 / (h_comp as f64).sqrt();
        let fc_w = params.add("composer.fc_w", uniform_matrix(h_comp, 2 * h_comp, k, rng));
        let fc_b = params.add("composer.fc_b", Array2::zeros((1, h_comp)));
        SubwordComposer {
            vocab,
            table,
            fwd,
            bwd,
            fc_w,
            fc_b,
            d_sub,
            h_comp,
        }
    }

    pub fn vocab(&self) -> &BpeVocab {
        &self.vocab
    }

    pub fn d_word(&self) -> usize {
        self.h_comp
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.table,
            self.fwd.w_ih,
            self.fwd.w_hh,
            self.fwd.bias,
            self.bwd.w_ih,
            self.bwd.w_hh,
            self.bwd.bias,
            self.fc_w,
            self.fc_b,
        ]
    }

    /// Embeds a list of words in order, returning a `(words.len(), d_word)`
    /// node. Words are grouped by subword count so each group runs as one
    /// batched recurrence with no padding.
    pub fn embed_words(&self, tape: &mut Tape, params: &ParamSet, words: &[&str]) -> NodeId {
        assert!(!words.is_empty(), "embed_words needs at least one word");
        let segmented: Vec<Vec<u32>> = words.iter().map(|w| self.vocab.segment(w)).collect();

        let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, ids) in segmented.iter().enumerate() {
            by_len.entry(ids.len()).or_default().push(i);
        }
        let mut lens: Vec<usize> = by_len.keys().copied().collect();
        lens.sort_unstable();

        let table = tape.param(params, self.table);
        let fc_w = tape.param(params, self.fc_w);
        let fc_b = tape.param(params, self.fc_b);

        // picks[word index] = (group output node, row within the group)
        let mut picks: Vec<Option<(NodeId, usize)>> = vec![None; words.len()];
        for len in lens {
            let members = &by_len[&len];
            let step_inputs: Vec<NodeId> = (0..len)
                .map(|s| {
                    let idx: Vec<Option<usize>> = members
                        .iter()
                        .map(|&w| Some(segmented[w][s] as usize))
                        .collect();
                    tape.gather_rows(table, idx)
                })
                .collect();

            let mut fwd_state = self.fwd.zero_state(tape, members.len());
            for &x in &step_inputs {
                fwd_state = self.fwd.step(tape, params, x, fwd_state);
            }
            let mut bwd_state = self.bwd.zero_state(tape, members.len());
            for &x in step_inputs.iter().rev() {
                bwd_state = self.bwd.step(tape, params, x, bwd_state);
            }

            let both = tape.concat_cols(fwd_state.0, bwd_state.0);
            let projected = tape.matmul_t(both, fc_w);
            let out = tape.add_row(projected, fc_b);
            for (row, &w) in members.iter().enumerate() {
                picks[w] = Some((out, row));
            }
        }

        let picks: Vec<(NodeId, usize)> = picks.into_iter().map(|p| p.expect("all words embedded")).collect();
        tape.select_rows(picks)
    }

    pub fn embed_word(&self, tape: &mut Tape, params: &ParamSet, word: &str) -> NodeId {
        self.embed_words(tape, params, &[word])
    }
}

/// Either embedding pipeline behind one face.
#[derive(Debug, Clone)]
pub enum Embedder {
    Fixed(FixedNgramTable),
    Composed(SubwordComposer),
}

impl Embedder {
    pub fn d_word(&self) -> usize {
        match self {
            Embedder::Fixed(t) => t.d_word(),
            Embedder::Composed(c) => c.d_word(),
        }
    }

    /// Embeds each word (in order) into a `(n, d_word)` node. The fixed path
    /// enters the tape as a constant, so nothing upstream receives gradients.
    pub fn embed_words(&self, tape: &mut Tape, params: &ParamSet, words: &[&str]) -> NodeId {
        match self {
            Embedder::Fixed(t) => {
                let mut m = Array2::zeros((words.len(), t.d_word()));
                for (i, w) in words.iter().enumerate() {
                    m.row_mut(i).assign(&t.embed(w));
                }
                tape.constant(m)
            }
            Embedder::Composed(c) => c.embed_words(tape, params, words),
        }
    }
}

/// Fixed-path word embedding as plain data.
pub fn embed_word_fixed(word: &str, table: &FixedNgramTable) -> Array1<f64> {
    table.embed(word)
}

/// Embeds a token sequence row-by-row: row `t` is the embedding of token `t`.
pub fn embed_sequence(
    tape: &mut Tape,
    params: &ParamSet,
    embedder: &Embedder,
    tokens: &[String],
) -> NodeId {
    assert!(!tokens.is_empty(), "cannot embed an empty sequence");
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    embedder.embed_words(tape, params, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::learn_bpe;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> NgramSpec {
        NgramSpec {
            n: 2,
            hash_buckets: 64,
            seed: 9,
        }
    }

    #[test]
    fn fixed_single_char_word_embeds_to_zero() {
        let table = FixedNgramTable::new(small_spec(), 8, 1);
        let v = table.embed("a");
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fixed_single_gram_is_exactly_one_table_row() {
        let table = FixedNgramTable::new(small_spec(), 8, 1);
        let v = table.embed("ab");
        let row = table.vectors().row(table.spec().bucket("ab"));
        assert_eq!(v, row.to_owned());
    }

    #[test]
    fn fixed_embedding_is_manual_gram_sum() {
        let table = FixedNgramTable::new(small_spec(), 8, 1);
        let v = table.embed("abc");
        let expect = &table.vectors().row(table.spec().bucket("ab"))
            + &table.vectors().row(table.spec().bucket("bc"));
        for (a, b) in v.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn toy_composer(params: &mut ParamSet, h: usize) -> SubwordComposer {
        let vocab = learn_bpe(["rue", "lilas", "ouest", "quebec", "000"], 24);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        SubwordComposer::new(params, vocab, 4, h, &mut rng)
    }

    #[test]
    fn zero_composer_params_embed_to_fc_bias() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 3);
        for id in composer.param_ids() {
            params.value_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let out = composer.embed_word(&mut tape, &params, "rue");
        assert!(tape.value(out).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn composed_matches_hand_rolled_bilstm() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 2);
        let word = "lilas";
        let ids = composer.vocab().segment(word);
        assert!(ids.len() >= 2, "want a multi-subword case, got {ids:?}");

        let mut tape = Tape::new();
        let out_node = composer.embed_word(&mut tape, &params, word);
        let got = tape.value(out_node).row(0).to_vec();

        // Independent scalar evaluation.
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let h = composer.h_comp;
        let run_direction = |cell: &LstmCell, order: Vec<usize>| -> Vec<f64> {
            let w_ih = params.value(cell.w_ih);
            let w_hh = params.value(cell.w_hh);
            let bias = params.value(cell.bias);
            let table = params.value(composer.table);
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            for &s in &order {
                let x: Vec<f64> = table.row(ids[s] as usize).to_vec();
                let mut hn = vec![0.0; h];
                let mut cn = vec![0.0; h];
                for j in 0..h {
                    let pre = |block: usize| {
                        let row = block * h + j;
                        let mut acc = bias[(0, row)];
                        for (k, &xv) in x.iter().enumerate() {
                            acc += w_ih[(row, k)] * xv;
                        }
                        for (k, &hv) in hs.iter().enumerate() {
                            acc += w_hh[(row, k)] * hv;
                        }
                        acc
                    };
                    let i = sig(pre(0));
                    let f = sig(pre(1));
                    let g = pre(2).tanh();
                    let o = sig(pre(3));
                    cn[j] = f * cs[j] + i * g;
                    hn[j] = o * cn[j].tanh();
                }
                hs = hn;
                cs = cn;
            }
            hs
        };
        let h_fwd = run_direction(&composer.fwd, (0..ids.len()).collect());
        let h_bwd = run_direction(&composer.bwd, (0..ids.len()).rev().collect());
        let fc_w = params.value(composer.fc_w);
        let fc_b = params.value(composer.fc_b);
        for j in 0..h {
            let mut acc = fc_b[(0, j)];
            for k in 0..h {
                acc += fc_w[(j, k)] * h_fwd[k];
                acc += fc_w[(j, h + k)] * h_bwd[k];
            }
            assert!((got[j] - acc).abs() < 1e-10, "dim {j}: {} vs {acc}", got[j]);
        }
    }

    #[test]
    fn embed_words_matches_per_word_calls() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 3);
        let words = ["rue", "lilas", "rue", "quebec"];
        let mut tape = Tape::new();
        let stacked = composer.embed_words(&mut tape, &params, &words);
        for (i, w) in words.iter().enumerate() {
            let mut single_tape = Tape::new();
            let one = composer.embed_word(&mut single_tape, &params, w);
            let row = tape.value(stacked).row(i);
            let expect = single_tape.value(one).row(0);
            for (a, b) in row.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_token_independence() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 3);
        let embedder = Embedder::Composed(composer);
        let tokens_a = vec!["rue".to_string(), "lilas".to_string(), "ouest".to_string()];
        let tokens_b = vec!["rue".to_string(), "quebec".to_string(), "ouest".to_string()];
        let mut tape = Tape::new();
        let ea = embed_sequence(&mut tape, &params, &embedder, &tokens_a);
        let eb = embed_sequence(&mut tape, &params, &embedder, &tokens_b);
        let ma = tape.value(ea);
        let mb = tape.value(eb);
        for (row, (ra, rb)) in ma.outer_iter().zip(mb.outer_iter()).enumerate() {
            let same = ra.iter().zip(rb.iter()).all(|(a, b)| a == b);
            if row == 1 {
                assert!(!same, "changed token must change its row");
            } else {
                assert!(same, "row {row} must not change");
            }
        }
    }

    #[test]
    fn permuting_tokens_permutes_rows() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 3);
        let embedder = Embedder::Composed(composer);
        let tokens = vec!["rue".to_string(), "lilas".to_string(), "000".to_string()];
        let mut permuted = tokens.clone();
        permuted.swap(0, 2);
        let mut tape = Tape::new();
        let a = embed_sequence(&mut tape, &params, &embedder, &tokens);
        let b = embed_sequence(&mut tape, &params, &embedder, &permuted);
        assert_eq!(tape.value(a).row(0), tape.value(b).row(2));
        assert_eq!(tape.value(a).row(1), tape.value(b).row(1));
        assert_eq!(tape.value(a).row(2), tape.value(b).row(0));
    }

    #[test]
    fn composed_gradients_reach_every_block() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 3);
        let mut tape = Tape::new();
        let out = composer.embed_word(&mut tape, &params, "lilas");
        let loss = tape.sum_all(out);
        params.zero_grads();
        tape.backward(loss, &mut params).unwrap();
        for id in composer.param_ids() {
            let total: f64 = params.grad(id).iter().map(|g| g.abs()).sum();
            assert!(total > 0.0, "no gradient reached {}", params.name(id));
        }
    }

    #[test]
    fn composed_gradcheck_on_toy_word() {
        let mut params = ParamSet::new();
        let composer = toy_composer(&mut params, 3);
        let build = |p: &ParamSet| {
            let mut tape = Tape::new();
            let out = composer.embed_words(&mut tape, p, &["lilas", "rue"]);
            let sq = tape.mul(out, out);
            let loss = tape.sum_all(sq);
            (tape, loss)
        };
        params.zero_grads();
        {
            let (tape, loss) = build(&params);
            tape.backward(loss, &mut params).unwrap();
        }
        let ids = composer.param_ids();
        let report = crate::nn::finite_difference_check(
            &mut params,
            &ids,
            80,
            1e-5,
            5,
            |p| {
                let (tape, loss) = build(p);
                tape.scalar(loss)
            },
        );
        assert!(report.passes(1e-6), "max rel err {}", report.max_rel_err);
    }
}
