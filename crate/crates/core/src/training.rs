//! Training protocol: batched teacher-forced SGD with a reduce-on-plateau
//! learning-rate schedule, early stopping on validation loss, and the
//! multi-seed run protocol with its divergence retry rule.

use crate::datagen::derive_seed;
use crate::domain::{Tag, TaggedAddress};
use crate::subword::{BpeVocab, NgramSpec};
use crate::tagger::{batch_loss, forward_batch, ModelDims, ParserModel, Variant};
use crate::nn::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (train loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("seed {seed} diverged and the retry seed {retry} diverged as well")]
    ProtocolFailed { seed: u64, retry: u64 },
}

/// Hyperparameters of one training run. Defaults follow the documented
/// protocol: 200 epochs max, initial learning rate 0.1 lowered by 0.1 after
/// ten epochs without improvement, early stopping with patience fifteen,
/// teacher forcing on half the batches, seeds {5, 10, 15, 20, 25} with 30 as
/// the retry seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub teacher_forcing_ratio: f64,
    pub seeds: Vec<u64>,
    pub retry_seed: u64,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 200,
            batch_size: 32,
            lr0: 0.1,
            plateau_patience: 10,
            lr_factor: 0.1,
            early_stop_patience: 15,
            teacher_forcing_ratio: 0.5,
            seeds: vec![5, 10, 15, 20, 25],
            retry_seed: 30,
            // Twice the uniform-prediction loss over 8 classes.
            divergence_threshold: 2.0 * (8.0f64).ln(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) {
        assert!(self.epochs_max >= 1);
        assert!(self.batch_size >= 1);
        assert!(self.lr0 > 0.0);
        assert!(self.plateau_patience >= 1);
        assert!(self.early_stop_patience >= 1);
        assert!((0.0..=1.0).contains(&self.teacher_forcing_ratio));
        assert!(!self.seeds.is_empty());
    }
}

/// Lowers the learning rate by `factor` after `patience` consecutive
/// observations without improvement.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, factor: f64, patience: usize) -> Self {
        PlateauSchedule {
            lr: lr0,
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's monitored loss; returns the learning rate to use for
    /// the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Stops after `patience` consecutive observations without improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns true when training should stop, and whether this observation
    /// improved on the best seen.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            (false, true)
        } else {
            self.stale += 1;
            (self.stale >= self.patience, false)
        }
    }
}

/// One shuffled batch. Sequences keep their natural ragged lengths; padding
/// and masks are materialized on demand.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens: Vec<Vec<String>>,
    pub tags: Vec<Vec<Tag>>,
    pub max_len: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.tokens.iter().map(Vec::len).sum()
    }

    /// True at real positions, false at padding, each row `max_len` long.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.tokens
            .iter()
            .map(|seq| {
                let mut row = vec![false; self.max_len];
                row[..seq.len()].fill(true);
                row
            })
            .collect()
    }

    /// Gold tags padded to `max_len` with the PAD control tag.
    pub fn padded_tags(&self) -> Vec<Vec<Tag>> {
        self.tags
            .iter()
            .map(|seq| {
                let mut row = seq.clone();
                row.resize(self.max_len, Tag::Pad);
                row
            })
            .collect()
    }
}

/// Shuffles the corpus with the given seed and chunks it into batches.
pub fn make_batches(corpus: &[TaggedAddress], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(!corpus.is_empty(), "cannot batch an empty corpus");
    assert!(batch_size >= 1);
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    indices
        .chunks(batch_size)
        .map(|chunk| {
            let tokens: Vec<Vec<String>> = chunk.iter().map(|&i| corpus[i].tokens.clone()).collect();
            let tags: Vec<Vec<Tag>> = chunk.iter().map(|&i| corpus[i].tags.clone()).collect();
            let max_len = tokens.iter().map(Vec::len).max().unwrap_or(0);
            Batch {
                tokens,
                tags,
                max_len,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Record of one training run. Wall time is measured but excluded from
/// serialization so emitted history files are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn mean_batch_loss(model: &mut ParserModel, batch: &Batch, teacher: bool, lr: f64) -> f64 {
    let mut tape = Tape::new();
    let seqs: Vec<&[String]> = batch.tokens.iter().map(Vec::as_slice).collect();
    let gold: Vec<&[Tag]> = batch.tags.iter().map(Vec::as_slice).collect();
    let teacher_arg = if teacher { Some(gold.as_slice()) } else { None };
    let forward = forward_batch(&mut tape, &model.params, model, &seqs, teacher_arg);
    let loss = batch_loss(&mut tape, &forward, &gold);
    let value = tape.scalar(loss);
    tape.backward(loss, &mut model.params).expect("scalar loss");
    model.params.sgd_step(lr);
    value
}

/// Mean free-running cross-entropy over a corpus, evaluated in fixed-size
/// chunks without shuffling.
pub fn corpus_loss(model: &ParserModel, corpus: &[TaggedAddress], chunk: usize) -> f64 {
    assert!(!corpus.is_empty());
    let mut total = 0.0;
    let mut tokens = 0usize;
    for group in corpus.chunks(chunk) {
        let mut tape = Tape::new();
        let seqs: Vec<&[String]> = group.iter().map(|r| r.tokens.as_slice()).collect();
        let gold: Vec<&[Tag]> = group.iter().map(|r| r.tags.as_slice()).collect();
        let forward = forward_batch(&mut tape, &model.params, model, &seqs, None);
        let loss = batch_loss(&mut tape, &forward, &gold);
        let n = forward.total_tokens();
        total += tape.scalar(loss) * n as f64;
        tokens += n;
    }
    total / tokens as f64
}

/// Trains in place and returns the history. The model is left at the
/// best-validation-loss checkpoint, not the last epoch.
///
/// Per batch, a Bernoulli draw with the teacher-forcing ratio decides whether
/// the decoder consumes gold tags or its own previous argmax. Validation loss
/// is always free-running. When the validation set is empty (degenerate tiny
/// corpora), the training loss is monitored instead.
pub fn train(
    model: &mut ParserModel,
    train_set: &[TaggedAddress],
    val_set: &[TaggedAddress],
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<TrainHistory, TrainError> {
    cfg.validate();
    assert!(!train_set.is_empty(), "empty training set");
    let started = Instant::now();
    let mut plateau = PlateauSchedule::new(cfg.lr0, cfg.lr_factor, cfg.plateau_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best_snapshot = model.params.snapshot();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.epochs_max {
        let lr = plateau.lr();
        let batches = make_batches(
            train_set,
            cfg.batch_size,
            derive_seed(run_seed, 0xba7c_4e5, epoch as u64),
        );
        let mut tf_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(run_seed, 0x7eac_4e5, epoch as u64));
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for batch in &batches {
            let teacher = tf_rng.random::<f64>() < cfg.teacher_forcing_ratio;
            let loss = mean_batch_loss(model, batch, teacher, lr);
            let n = batch.token_count();
            loss_sum += loss * n as f64;
            token_sum += n;
        }
        let train_loss = loss_sum / token_sum as f64;
        if !train_loss.is_finite() || (epoch > 10 && train_loss > cfg.divergence_threshold) {
            return Err(TrainError::Diverged {
                epoch,
                loss: train_loss,
            });
        }

        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            corpus_loss(model, val_set, cfg.batch_size)
        };
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        let (stop, improved) = stopper.observe(val_loss);
        plateau.observe(val_loss);
        if improved {
            best_snapshot = model.params.snapshot();
            best_epoch = epoch;
            best_val = val_loss;
        }
        if stop {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    model.params.restore(&best_snapshot);
    Ok(TrainHistory {
        epochs,
        stop_reason,
        best_epoch,
        best_val_loss: best_val,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Train/validation material plus everything needed to build a fresh model
/// per seed.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub train: Vec<TaggedAddress>,
    pub validation: Vec<TaggedAddress>,
}

impl DatasetBundle {
    /// Standard 80/20 split of a corpus.
    pub fn from_corpus(corpus: &[TaggedAddress], seed: u64) -> Self {
        let (train, validation) = crate::datagen::split(corpus, 0.8, seed);
        DatasetBundle { train, validation }
    }
}

/// How to build the model that a protocol run trains.
#[derive(Debug, Clone)]
pub enum VariantSpec {
    Fixed { ngram: NgramSpec, dims: ModelDims },
    Composed { vocab: BpeVocab, dims: ModelDims },
}

impl VariantSpec {
    pub fn variant(&self) -> Variant {
        match self {
            VariantSpec::Fixed { .. } => Variant::Fixed,
            VariantSpec::Composed { .. } => Variant::Composed,
        }
    }

    pub fn build(&self, seed: u64) -> ParserModel {
        match self {
            VariantSpec::Fixed { ngram, dims } => ParserModel::new_fixed(*ngram, *dims, seed),
            VariantSpec::Composed { vocab, dims } => {
                ParserModel::new_composed(vocab.clone(), *dims, seed)
            }
        }
    }
}

/// Outcome of one protocol slot.
pub struct SeedRun {
    /// Seed that actually produced the model (the retry seed if the original
    /// run diverged).
    pub seed: u64,
    pub retried: bool,
    pub model: ParserModel,
    pub history: TrainHistory,
}

pub(crate) struct ProtocolRun<M> {
    pub seed: u64,
    pub retried: bool,
    pub outcome: M,
}

pub(crate) fn run_protocol_impl<M, F>(
    seeds: &[u64],
    retry_seed: u64,
    train_one: F,
    parallel: bool,
) -> Result<Vec<ProtocolRun<M>>, TrainError>
where
    M: Send,
    F: Fn(u64) -> Result<M, TrainError> + Sync,
{
    let slot = |&seed: &u64| -> Result<ProtocolRun<M>, TrainError> {
        match train_one(seed) {
            Ok(outcome) => Ok(ProtocolRun {
                seed,
                retried: false,
                outcome,
            }),
            Err(TrainError::Diverged { .. }) => match train_one(retry_seed) {
                Ok(outcome) => Ok(ProtocolRun {
                    seed: retry_seed,
                    retried: true,
                    outcome,
                }),
                Err(_) => Err(TrainError::ProtocolFailed {
                    seed,
                    retry: retry_seed,
                }),
            },
            Err(other) => Err(other),
        }
    };

    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds.iter().map(|seed| scope.spawn(move || slot(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("seed thread")).collect()
        })
    } else {
        seeds.iter().map(slot).collect()
    }
}

/// Runs the full multi-seed protocol: one independent, deterministic training
/// run per configured seed; a diverged run is replaced by one with the retry
/// seed. Runs execute in parallel threads (each run itself is
/// single-threaded), and results come back in seed order.
pub fn run_protocol(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    spec: &VariantSpec,
) -> Result<Vec<SeedRun>, TrainError> {
    let runs = run_protocol_impl(
        &cfg.seeds,
        cfg.retry_seed,
        |seed| {
            let mut model = spec.build(seed);
            let history = train(&mut model, &bundle.train, &bundle.validation, cfg, seed)?;
            Ok((model, history))
        },
        true,
    )?;
    Ok(runs
        .into_iter()
        .map(|r| SeedRun {
            seed: r.seed,
            retried: r.retried,
            model: r.outcome.0,
            history: r.outcome.1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig, SyntheticLexiconSpec};
    use crate::domain::{CountryProfile, Script};
    use crate::subword::learn_bpe;
    use std::collections::BTreeMap;

    fn toy_corpus(samples: usize) -> Vec<TaggedAddress> {
        let mut lexicons = BTreeMap::new();
        lexicons.insert(
            "lat".to_string(),
            SyntheticLexiconSpec::new(Script::Latin, 5).build(),
        );
        let config = GeneratorConfig {
            seed: 1,
            samples_per_country: samples,
            optional_field_probability: 0.2,
            countries: vec![CountryProfile::new("AA", vec![1], "lat", Script::Latin)],
            lexicons,
        };
        generate(&config).unwrap()
    }

    fn toy_spec(corpus: &[TaggedAddress]) -> VariantSpec {
        let words = corpus.iter().flat_map(|r| r.tokens.iter());
        let vocab = learn_bpe(words, 64);
        VariantSpec::Composed {
            vocab,
            dims: ModelDims {
                d_word: 8,
                d_sub: 6,
                h_comp: 8,
                hidden: 12,
            },
        }
    }

    #[test]
    fn equal_length_batch_has_no_padding() {
        let corpus = toy_corpus(30);
        let equal: Vec<TaggedAddress> = corpus.iter().filter(|r| r.len() == 5).cloned().collect();
        assert!(equal.len() >= 2, "want some 5-token records");
        let batches = make_batches(&equal, equal.len(), 3);
        assert_eq!(batches.len(), 1);
        let masks = batches[0].masks();
        assert!(masks.iter().all(|m| m.iter().all(|&b| b)));
    }

    #[test]
    fn mixed_length_batch_masks_and_pads() {
        let a = TaggedAddress::from_parts(
            vec!["x".into(), "y".into(), "z".into()],
            vec![Tag::StreetName; 3],
            "AA",
        )
        .unwrap();
        let b = TaggedAddress::from_parts(
            vec!["1".into(), "2".into(), "3".into(), "4".into(), "5".into()],
            vec![Tag::StreetNumber; 5],
            "AA",
        )
        .unwrap();
        let batches = make_batches(&[a, b], 2, 1);
        let batch = &batches[0];
        assert_eq!(batch.max_len, 5);
        let mut masks = batch.masks();
        masks.sort_by_key(|m| m.iter().filter(|&&x| x).count());
        assert_eq!(masks[0], vec![true, true, true, false, false]);
        assert_eq!(masks[1], vec![true; 5]);
        let padded = batch.padded_tags();
        for (row, mask) in padded.iter().zip(batch.masks()) {
            for (tag, real) in row.iter().zip(mask) {
                assert_eq!(*tag == Tag::Pad, !real);
            }
        }
    }

    #[test]
    fn plateau_schedule_matches_protocol() {
        let mut schedule = PlateauSchedule::new(0.1, 0.1, 10);
        let mut lrs = Vec::new();
        for _ in 1..=25 {
            lrs.push(schedule.lr());
            schedule.observe(1.0);
        }
        // Epochs are 1-based: lr is 0.1 through epoch 10, 0.01 from epoch 11
        // (the tenth stale epoch triggers the drop), 0.001 from epoch 21.
        assert!(lrs[..10].iter().all(|&lr| (lr - 0.1).abs() < 1e-12));
        assert!((lrs[10] - 0.01).abs() < 1e-12, "epoch 11 lr {}", lrs[10]);
        assert!(lrs[10..20].iter().all(|&lr| (lr - 0.01).abs() < 1e-12));
        assert!((lrs[20] - 0.001).abs() < 1e-12, "epoch 21 lr {}", lrs[20]);
    }

    #[test]
    fn early_stopping_fires_after_patience() {
        let mut stopper = EarlyStopping::new(15);
        let mut stopped_at = None;
        for epoch in 1..=30 {
            let (stop, _) = stopper.observe(1.0);
            if stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(16));
    }

    #[test]
    fn improvements_reset_both_counters() {
        let mut schedule = PlateauSchedule::new(0.1, 0.1, 3);
        let mut stopper = EarlyStopping::new(3);
        for loss in [5.0, 4.0, 4.0, 3.0, 3.0, 3.0] {
            schedule.observe(loss);
            let (stop, _) = stopper.observe(loss);
            assert!(!stop);
        }
        assert!((schedule.lr() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_training_reduces_loss_on_tiny_corpus() {
        let corpus = toy_corpus(10);
        let spec = toy_spec(&corpus);
        let mut model = spec.build(5);
        let cfg = TrainConfig {
            epochs_max: 5,
            batch_size: 4,
            teacher_forcing_ratio: 1.0,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &corpus, &[], &cfg, 5).unwrap();
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss did not decrease: {losses:?}");
        }
    }

    #[test]
    fn history_invariants_hold_on_a_real_run() {
        let corpus = toy_corpus(40);
        let spec = toy_spec(&corpus);
        let bundle = DatasetBundle::from_corpus(&corpus, 9);
        let mut model = spec.build(10);
        let cfg = TrainConfig {
            epochs_max: 12,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &bundle.train, &bundle.validation, &cfg, 10).unwrap();
        let lrs: Vec<f64> = history.epochs.iter().map(|e| e.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "lr increased: {lrs:?}");
        let min_val = history
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(history.best_val_loss, min_val);
        assert_eq!(
            history
                .epochs
                .iter()
                .find(|e| e.val_loss == min_val)
                .unwrap()
                .epoch,
            history.best_epoch
        );
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = toy_corpus(20);
        let spec = toy_spec(&corpus);
        let bundle = DatasetBundle::from_corpus(&corpus, 2);
        let cfg = TrainConfig {
            epochs_max: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = spec.build(15);
            let history = train(&mut model, &bundle.train, &bundle.validation, &cfg, 15).unwrap();
            (model, history)
        };
        let (model_a, hist_a) = run();
        let (model_b, hist_b) = run();
        assert_eq!(hist_a.epochs, hist_b.epochs);
        for id in model_a.params.ids() {
            assert_eq!(model_a.params.value(id), model_b.params.value(id));
        }
    }

    #[test]
    fn diverged_seed_is_replaced_by_retry_seed() {
        let runs = run_protocol_impl(
            &[5, 10, 15],
            30,
            |seed| {
                if seed == 15 {
                    Err(TrainError::Diverged {
                        epoch: 1,
                        loss: f64::INFINITY,
                    })
                } else {
                    Ok(seed * 100)
                }
            },
            false,
        )
        .unwrap();
        let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![5, 10, 30]);
        assert!(runs[2].retried);
        assert_eq!(runs[2].outcome, 3000);
    }

    #[test]
    fn protocol_fails_when_retry_also_diverges() {
        let result: Result<Vec<ProtocolRun<u64>>, _> = run_protocol_impl(
            &[5, 15],
            30,
            |seed| {
                if seed == 15 || seed == 30 {
                    Err(TrainError::Diverged {
                        epoch: 1,
                        loss: f64::NAN,
                    })
                } else {
                    Ok(seed)
                }
            },
            false,
        );
        assert!(matches!(
            result,
            Err(TrainError::ProtocolFailed { seed: 15, retry: 30 })
        ));
    }

    #[test]
    fn padded_batch_loss_equals_per_sequence_loss() {
        // Duplicated corpus with mixed lengths; compare the batched loss path
        // against sequence-at-a-time evaluation.
        let corpus = toy_corpus(16);
        let spec = toy_spec(&corpus);
        let model = spec.build(3);
        let batches = make_batches(&corpus, 16, 4);
        assert_eq!(batches.len(), 1);
        let batch = &batches[0];
        assert!(batch.masks().iter().any(|m| m.contains(&false)), "want real padding");

        let batched = {
            let mut tape = Tape::new();
            let seqs: Vec<&[String]> = batch.tokens.iter().map(Vec::as_slice).collect();
            let gold: Vec<&[Tag]> = batch.tags.iter().map(Vec::as_slice).collect();
            let fwd = forward_batch(&mut tape, &model.params, &model, &seqs, Some(&gold));
            let loss = batch_loss(&mut tape, &fwd, &gold);
            tape.scalar(loss)
        };

        let mut total = 0.0;
        let mut tokens = 0usize;
        for (seq, gold) in batch.tokens.iter().zip(&batch.tags) {
            let mut tape = Tape::new();
            let seqs: Vec<&[String]> = vec![seq.as_slice()];
            let golds: Vec<&[Tag]> = vec![gold.as_slice()];
            let fwd = forward_batch(&mut tape, &model.params, &model, &seqs, Some(&golds));
            let loss = batch_loss(&mut tape, &fwd, &golds);
            total += tape.scalar(loss) * seq.len() as f64;
            tokens += seq.len();
        }
        let per_sequence = total / tokens as f64;
        assert!(
            (batched - per_sequence).abs() < 1e-9,
            "batched {batched} vs per-sequence {per_sequence}"
        );
    }
}
