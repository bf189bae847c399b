//! Corrector F (two hypotheses to spoken English) and translator G (spoken
//! English to LaTeX), their joint loss, training and decoding.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{record_seed, MathSample};
use crate::latex::normalize_latex;
use crate::neural::checkpoint::{load_params, save_params, CheckpointError};
use crate::neural::model::{build_vocab, teacher_pair, Bound, ModelError, Seq2SeqParams, SeqBatch, Vocab, EOS, PAD, SEP};
use crate::neural::optim::{adam_step, clip_grad_norm, AdamState, LinearSchedule};
use crate::neural::tape::{Tape, Var};
use crate::neural::tensor::{Mat, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// G reads the expected embedding under F's output distribution.
    Soft,
    /// As `Soft`, with no gradient from G's loss into F.
    Detached,
    /// F and G trained apart (G on clean spoken English), composed at
    /// inference.
    JustConnect,
    /// No corrector; G reads the first hypothesis.
    TranslatorOnly,
}

impl Coupling {
    pub const ALL: [Coupling; 4] = [
        Coupling::Soft,
        Coupling::Detached,
        Coupling::JustConnect,
        Coupling::TranslatorOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coupling::Soft => "soft",
            Coupling::Detached => "detached",
            Coupling::JustConnect => "just-connect",
            Coupling::TranslatorOnly => "translator-only",
        }
    }

    pub fn from_name(s: &str) -> Option<Coupling> {
        Coupling::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn has_corrector(self) -> bool {
        self != Coupling::TranslatorOnly
    }
}

pub const MAX_EPOCHS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_se: f64,
    pub lambda_latex: f64,
    pub coupling: Coupling,
    pub epochs: usize,
    /// Caps the optimizer steps per epoch; `None` runs whole epochs.
    pub steps_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub width: usize,
    pub seed: u64,
    pub lr: LinearSchedule,
    pub clip_norm: f64,
    pub max_input_len: usize,
    pub max_output_len: usize,
    pub val_fraction: f64,
    /// Validation records decoded each epoch for the CER column.
    pub val_decode_limit: usize,
    /// Under soft coupling, the leading `floor(soft_warmup * epochs)` epochs
    /// train detached so the corrector learns its own targets before the
    /// translator's gradient reaches it.
    pub soft_warmup: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_se: 0.3,
            lambda_latex: 0.7,
            coupling: Coupling::Soft,
            epochs: MAX_EPOCHS,
            steps_per_epoch: None,
            batch_size: 32,
            width: 64,
            seed: 0,
            lr: LinearSchedule { max: 3e-3, min: 1e-6 },
            clip_norm: 5.0,
            max_input_len: 160,
            max_output_len: 128,
            val_fraction: 0.1,
            val_decode_limit: 256,
            soft_warmup: 0.7,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("record {id} has fewer than two ASR hypotheses")]
    MissingHypotheses { id: u64 },
    #[error("training corpus has {have} usable records, need at least {need}")]
    CorpusTooSmall { have: usize, need: usize },
    #[error("loss became non-finite at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pipeline manifest: {0}")]
    Manifest(String),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.lambda_se >= 0.0 && self.lambda_latex >= 0.0 && self.lambda_se + self.lambda_latex > 0.0) {
            return bad("loss weights must be nonnegative with a positive sum");
        }
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return bad("epochs must be between 1 and 20");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.width == 0 || self.width % 2 != 0 {
            return bad("width must be even and positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must be in [0, 1)");
        }
        if !(self.lr.max > 0.0 && self.lr.min >= 0.0 && self.lr.min <= self.lr.max) {
            return bad("learning rates must satisfy 0 <= min <= max, max > 0");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps per epoch must be positive");
        }
        if !(0.0..=1.0).contains(&self.soft_warmup) {
            return bad("soft warmup must be in [0, 1]");
        }
        Ok(())
    }

    /// Leading epochs that a soft run trains detached.
    pub fn warmup_epochs(&self) -> usize {
        (self.soft_warmup * self.epochs as f64).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    Greedy,
    Beam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub max_len: usize,
    /// Per-input output cap: `ceil(len_ratio * source tokens) + len_slack`,
    /// never above `max_len`. For the corrector the source is the longer
    /// hypothesis. Stops runaway repetition on short inputs.
    pub len_ratio: f64,
    pub len_slack: usize,
}

impl DecodeConfig {
    pub fn limit(&self, src_len: usize) -> usize {
        let cap = (self.len_ratio * src_len as f64).ceil() as usize + self.len_slack;
        cap.min(self.max_len)
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: DecodeMode::Greedy,
            beam_width: 1,
            max_len: 128,
            len_ratio: 1.5,
            len_slack: 8,
        }
    }
}

/// One record as model inputs and targets.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub id: u64,
    /// `asr1 SEP asr2 EOS`
    pub pair: Vec<usize>,
    /// `asr1 EOS`
    pub first: Vec<usize>,
    pub se: Vec<usize>,
    pub latex: Vec<usize>,
}

/// The two hypotheses a record contributes, ordered by profile name.
pub fn hypotheses(sample: &MathSample) -> Result<(&str, &str), PipelineError> {
    let mut it = sample.asr.values();
    match (it.next(), it.next()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(PipelineError::MissingHypotheses { id: sample.id }),
    }
}

pub fn pair_ids(vocab: &Vocab, asr1: &str, asr2: &str) -> Vec<usize> {
    let mut ids = vocab.encode(asr1);
    ids.push(SEP);
    ids.extend(vocab.encode(asr2));
    ids.push(EOS);
    ids
}

pub fn single_ids(vocab: &Vocab, text: &str) -> Vec<usize> {
    let mut ids = vocab.encode(text);
    ids.push(EOS);
    ids
}

pub fn encode_sample(vocab: &Vocab, s: &MathSample) -> Result<Encoded, PipelineError> {
    let (a, b) = hypotheses(s)?;
    Ok(Encoded {
        id: s.id,
        pair: pair_ids(vocab, a, b),
        first: single_ids(vocab, a),
        se: vocab.encode(&s.se),
        latex: vocab.encode(&s.latex),
    })
}

/// Loss terms in `f64`; `total` is computed from the other two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointLoss {
    pub total: f64,
    pub se: f64,
    pub latex: f64,
}

/// A joint loss recorded on a tape, ready for `backward`.
pub struct LossGraph<S> {
    pub tape: Tape<S>,
    pub loss: Var,
    pub f: Option<Bound>,
    pub g: Bound,
    pub value: JointLoss,
}

fn masked_targets(targets: &SeqBatch) -> Vec<bool> {
    targets.ids.iter().map(|&i| i != PAD).collect()
}

/// Records `λ_se·L_se + λ_latex·L_latex` for a batch under `cfg.coupling`.
pub fn joint_loss_graph<S: Scalar>(
    f: Option<&Seq2SeqParams<S>>,
    g: &Seq2SeqParams<S>,
    batch: &[&Encoded],
    cfg: &TrainConfig,
) -> LossGraph<S> {
    let mut tape = Tape::new();
    let gb = g.bind(&mut tape);
    let (lat_in, lat_out): (Vec<_>, Vec<_>) = batch.iter().map(|e| teacher_pair(&e.latex)).unzip();
    let lat_in = SeqBatch::new(&lat_in);
    let lat_out = SeqBatch::new(&lat_out);

    let mut fb = None;
    let mut l_se = None;
    let g_enc = match (cfg.coupling, f) {
        (Coupling::TranslatorOnly, _) | (_, None) => {
            let src: Vec<Vec<usize>> = batch.iter().map(|e| e.first.clone()).collect();
            g.encode_ids(&mut tape, &gb, &SeqBatch::new(&src))
        }
        (coupling, Some(f)) => {
            let bound = f.bind(&mut tape);
            let src: Vec<Vec<usize>> = batch.iter().map(|e| e.pair.clone()).collect();
            let enc = f.encode_ids(&mut tape, &bound, &SeqBatch::new(&src));
            let (se_in, se_out): (Vec<_>, Vec<_>) = batch.iter().map(|e| teacher_pair(&e.se)).unzip();
            let se_in = SeqBatch::new(&se_in);
            let se_out = SeqBatch::new(&se_out);
            let logits = f.decode_teacher(&mut tape, &bound, &enc, &se_in);
            l_se = Some(tape.cross_entropy(logits, &se_out.ids, &masked_targets(&se_out)));
            fb = Some(bound);
            match coupling {
                Coupling::Soft | Coupling::Detached => {
                    // F's step t predicts se[t] (EOS at the end), which lines
                    // up with G's plain input `se EOS`.
                    let mut probs = tape.softmax(logits);
                    if coupling == Coupling::Detached {
                        probs = tape.detach(probs);
                    }
                    let mixed = tape.matmul(probs, gb.embedding());
                    g.encode(&mut tape, &gb, mixed, &se_out.lens)
                }
                _ => {
                    let src: Vec<Vec<usize>> = batch
                        .iter()
                        .map(|e| {
                            let mut s = e.se.clone();
                            s.push(EOS);
                            s
                        })
                        .collect();
                    g.encode_ids(&mut tape, &gb, &SeqBatch::new(&src))
                }
            }
        }
    };
    let g_logits = g.decode_teacher(&mut tape, &gb, &g_enc, &lat_in);
    let l_latex = tape.cross_entropy(g_logits, &lat_out.ids, &masked_targets(&lat_out));

    let ls = S::from_f64_lossy(cfg.lambda_se);
    let ll = S::from_f64_lossy(cfg.lambda_latex);
    let (loss, se_val) = match l_se {
        Some(l_se) => (tape.lincomb(&[(l_se, ls), (l_latex, ll)]), tape.scalar(l_se).as_f64()),
        None => (tape.lincomb(&[(l_latex, ll)]), 0.0),
    };
    let latex_val = tape.scalar(l_latex).as_f64();
    LossGraph {
        tape,
        loss,
        f: fb,
        g: gb,
        value: JointLoss {
            total: cfg.lambda_se * se_val + cfg.lambda_latex * latex_val,
            se: se_val,
            latex: latex_val,
        },
    }
}

/// Loss of one batch of records without gradients.
pub fn joint_loss<S: Scalar>(
    f: Option<&Seq2SeqParams<S>>,
    g: &Seq2SeqParams<S>,
    vocab: &Vocab,
    samples: &[MathSample],
    cfg: &TrainConfig,
) -> Result<JointLoss, PipelineError> {
    let enc = samples
        .iter()
        .map(|s| encode_sample(vocab, s))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Encoded> = enc.iter().collect();
    Ok(joint_loss_graph(f, g, &refs, cfg).value)
}

/// Gradients of the joint loss for F's and G's parameters.
pub struct JointGrads<S> {
    pub value: JointLoss,
    pub f: Option<Vec<Mat<S>>>,
    pub g: Vec<Mat<S>>,
}

pub fn joint_loss_grads<S: Scalar>(
    f: Option<&Seq2SeqParams<S>>,
    g: &Seq2SeqParams<S>,
    batch: &[&Encoded],
    cfg: &TrainConfig,
) -> JointGrads<S> {
    let graph = joint_loss_graph(f, g, batch, cfg);
    let mut grads = graph.tape.backward(graph.loss);
    let mut collect = |bound: &Bound, params: &Seq2SeqParams<S>| -> Vec<Mat<S>> {
        bound
            .vars
            .iter()
            .zip(&params.tensors)
            .map(|(v, m)| grads.take(*v).unwrap_or_else(|| Mat::zeros(m.rows, m.cols)))
            .collect()
    };
    let g_grads = collect(&graph.g, g);
    let f_grads = match (&graph.f, f) {
        (Some(b), Some(p)) => Some(collect(b, p)),
        _ => None,
    };
    JointGrads {
        value: graph.value,
        f: f_grads,
        g: g_grads,
    }
}

/// A trained two-stage system.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub vocab: Vocab,
    pub config: TrainConfig,
    pub corrector: Option<Seq2SeqParams<f32>>,
    pub translator: Seq2SeqParams<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train: JointLoss,
    pub val: JointLoss,
    pub val_cer: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_records: usize,
    pub val_records: usize,
    pub skipped_too_long: usize,
}

fn is_validation(id: u64, fraction: f64) -> bool {
    let u = (record_seed(0x5eed_0fa1, id) >> 11) as f64 / (1u64 << 53) as f64;
    u < fraction
}

fn fits(e: &Encoded, cfg: &TrainConfig) -> bool {
    e.pair.len() <= cfg.max_input_len && e.se.len() < cfg.max_output_len && e.latex.len() < cfg.max_output_len
}

/// Batches in a seeded order; records of similar input length share a batch.
fn epoch_batches(n: usize, batch: usize, lens: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch * 32) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| lens[i]);
        batches.extend(chunk.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn mean_loss(
    f: Option<&Seq2SeqParams<f32>>,
    g: &Seq2SeqParams<f32>,
    data: &[Encoded],
    cfg: &TrainConfig,
) -> JointLoss {
    let mut acc = JointLoss::default();
    let mut n = 0.0;
    for chunk in data.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&Encoded> = chunk.iter().collect();
        let v = joint_loss_graph(f, g, &refs, cfg).value;
        let w = chunk.len() as f64;
        acc.se += v.se * w;
        acc.latex += v.latex * w;
        n += w;
    }
    if n > 0.0 {
        acc.se /= n;
        acc.latex /= n;
    }
    acc.total = cfg.lambda_se * acc.se + cfg.lambda_latex * acc.latex;
    acc
}

/// Trains F and G; returns the parameters of the epoch with the lowest
/// validation loss (training loss when there is no validation split).
pub fn train(corpus: &[MathSample], cfg: &TrainConfig) -> Result<(Pipeline, History), PipelineError> {
    train_with_progress(corpus, cfg, |_| {})
}

pub fn train_with_progress(
    corpus: &[MathSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(Pipeline, History), PipelineError> {
    cfg.validate()?;
    let vocab = build_vocab(corpus)?;
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    let mut skipped = 0;
    for s in corpus {
        let e = encode_sample(&vocab, s)?;
        if !fits(&e, cfg) {
            skipped += 1;
            continue;
        }
        if is_validation(s.id, cfg.val_fraction) {
            val_set.push((s.clone(), e));
        } else {
            train_set.push(e);
        }
    }
    let need = 2 * cfg.batch_size;
    if train_set.len() < need {
        return Err(PipelineError::CorpusTooSmall {
            have: train_set.len(),
            need,
        });
    }
    let v = vocab.len();
    let mut f: Option<Seq2SeqParams<f32>> = if cfg.coupling.has_corrector() {
        Some(Seq2SeqParams::new(v, cfg.width, record_seed(cfg.seed, 1))?)
    } else {
        None
    };
    let mut g = Seq2SeqParams::<f32>::new(v, cfg.width, record_seed(cfg.seed, 2))?;
    let mut f_adam = f.as_ref().map(|p| AdamState::new(&p.tensors));
    let mut g_adam = AdamState::new(&g.tensors);

    let lens: Vec<usize> = train_set.iter().map(|e| e.pair.len()).collect();
    let full_epoch = train_set.len().div_ceil(cfg.batch_size);
    let per_epoch = cfg.steps_per_epoch.unwrap_or(full_epoch);
    let total_steps = (per_epoch * cfg.epochs) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(cfg.seed, 3));
    let val_enc: Vec<Encoded> = val_set.iter().map(|(_, e)| e.clone()).collect();

    let mut history = History {
        train_records: train_set.len(),
        val_records: val_set.len(),
        skipped_too_long: skipped,
        ..History::default()
    };
    let mut best: Option<(f64, Option<Seq2SeqParams<f32>>, Seq2SeqParams<f32>)> = None;
    let mut step = 0u64;
    let mut queue: Vec<Vec<usize>> = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut acc = JointLoss::default();
        let mut seen = 0.0;
        let step_cfg = if cfg.coupling == Coupling::Soft && epoch <= cfg.warmup_epochs() {
            TrainConfig {
                coupling: Coupling::Detached,
                ..cfg.clone()
            }
        } else {
            cfg.clone()
        };
        for _ in 0..per_epoch {
            if queue.is_empty() {
                queue = epoch_batches(train_set.len(), cfg.batch_size, &lens, &mut rng);
                queue.reverse();
            }
            let idx = queue.pop().expect("non-empty batch queue");
            let batch: Vec<&Encoded> = idx.iter().map(|&i| &train_set[i]).collect();
            let mut grads = joint_loss_grads(f.as_ref(), &g, &batch, &step_cfg);
            let val = grads.value;
            if !val.total.is_finite() {
                return Err(PipelineError::Diverged { step });
            }
            let lr = cfg.lr.at(step, total_steps);
            let mut all: Vec<Mat<f32>> = grads.f.take().unwrap_or_default();
            let nf = all.len();
            all.append(&mut grads.g);
            clip_grad_norm(&mut all, cfg.clip_norm);
            let g_grads = all.split_off(nf);
            if let (Some(fp), Some(st)) = (f.as_mut(), f_adam.as_mut()) {
                adam_step(&mut fp.tensors, &all, st, lr);
            }
            adam_step(&mut g.tensors, &g_grads, &mut g_adam, lr);
            step += 1;
            let w = batch.len() as f64;
            acc.se += val.se * w;
            acc.latex += val.latex * w;
            seen += w;
        }
        acc.se /= seen;
        acc.latex /= seen;
        acc.total = cfg.lambda_se * acc.se + cfg.lambda_latex * acc.latex;
        if !(f.as_ref().map_or(true, |p| p.is_finite()) && g.is_finite()) {
            return Err(PipelineError::Diverged { step });
        }

        let (val, val_cer) = if val_enc.is_empty() {
            (acc, f64::NAN)
        } else {
            let val = mean_loss(f.as_ref(), &g, &val_enc, cfg);
            let probe = Pipeline {
                vocab: vocab.clone(),
                config: cfg.clone(),
                corrector: f.clone(),
                translator: g.clone(),
            };
            let limit = cfg.val_decode_limit.min(val_set.len());
            let samples: Vec<MathSample> = val_set[..limit].iter().map(|(s, _)| s.clone()).collect();
            (val, probe.mean_cer(&samples, &DecodeConfig::default()))
        };
        let record = EpochRecord {
            epoch,
            steps: step,
            train: acc,
            val,
            val_cer,
        };
        progress(&record);
        if best.as_ref().map_or(true, |b| val.total < b.0) {
            best = Some((val.total, f.clone(), g.clone()));
            history.best_epoch = epoch;
        }
        history.epochs.push(record);
    }
    let (_, f_best, g_best) = best.expect("at least one epoch");
    Ok((
        Pipeline {
            vocab,
            config: cfg.clone(),
            corrector: f_best,
            translator: g_best,
        },
        history,
    ))
}

fn check_len(len: usize, max: usize) -> Result<(), PipelineError> {
    if len > max {
        return Err(ModelError::LengthExceeded { len, max }.into());
    }
    Ok(())
}

/// `basis[i]` is the source length the output cap of row `i` scales with.
fn decode_many(params: &Seq2SeqParams<f32>, srcs: &[Vec<usize>], basis: &[usize], dc: &DecodeConfig) -> Vec<Vec<usize>> {
    let limits: Vec<usize> = basis.iter().map(|&n| dc.limit(n)).collect();
    match dc.mode {
        DecodeMode::Greedy => {
            let mut out = Vec::with_capacity(srcs.len());
            for (chunk, lim) in srcs.chunks(64).zip(limits.chunks(64)) {
                out.extend(params.greedy_capped(chunk, lim));
            }
            out
        }
        DecodeMode::Beam => srcs
            .iter()
            .zip(&limits)
            .map(|(s, &lim)| params.beam(s, dc.beam_width, lim))
            .collect(),
    }
}

impl Pipeline {
    pub fn coupling(&self) -> Coupling {
        self.config.coupling
    }

    /// Corrects hypothesis pairs into spoken English.
    pub fn correct_batch(&self, pairs: &[(&str, &str)], dc: &DecodeConfig) -> Result<Vec<String>, PipelineError> {
        let f = self
            .corrector
            .as_ref()
            .ok_or_else(|| PipelineError::Config("pipeline has no corrector".into()))?;
        let srcs = pairs
            .iter()
            .map(|(a, b)| {
                let ids = pair_ids(&self.vocab, a, b);
                check_len(ids.len(), self.config.max_input_len).map(|_| ids)
            })
            .collect::<Result<Vec<_>, _>>()?;
        // The correction is about as long as one hypothesis, not the pair.
        let basis: Vec<usize> = pairs
            .iter()
            .map(|(a, b)| a.chars().count().max(b.chars().count()) + 1)
            .collect();
        Ok(decode_many(f, &srcs, &basis, dc)
            .iter()
            .map(|ids| self.vocab.decode(ids))
            .collect())
    }

    pub fn correct(&self, asr1: &str, asr2: &str, dc: &DecodeConfig) -> Result<String, PipelineError> {
        Ok(self.correct_batch(&[(asr1, asr2)], dc)?.remove(0))
    }

    pub fn translate_batch(&self, inputs: &[&str], dc: &DecodeConfig) -> Result<Vec<String>, PipelineError> {
        let srcs = inputs
            .iter()
            .map(|s| {
                let ids = single_ids(&self.vocab, s);
                check_len(ids.len(), self.config.max_input_len).map(|_| ids)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let basis: Vec<usize> = srcs.iter().map(Vec::len).collect();
        Ok(decode_many(&self.translator, &srcs, &basis, dc)
            .iter()
            .map(|ids| self.vocab.decode(ids))
            .collect())
    }

    pub fn translate(&self, se: &str, dc: &DecodeConfig) -> Result<String, PipelineError> {
        Ok(self.translate_batch(&[se], dc)?.remove(0))
    }

    /// Text handed to the translator for each pair: F's correction, or the
    /// first hypothesis when there is no corrector.
    pub fn stage_one(&self, pairs: &[(&str, &str)], dc: &DecodeConfig) -> Result<Vec<String>, PipelineError> {
        if self.corrector.is_some() {
            self.correct_batch(pairs, dc)
        } else {
            Ok(pairs.iter().map(|(a, _)| a.to_string()).collect())
        }
    }

    pub fn infer_batch(&self, pairs: &[(&str, &str)], dc: &DecodeConfig) -> Result<Vec<String>, PipelineError> {
        let mid = self.stage_one(pairs, dc)?;
        let refs: Vec<&str> = mid.iter().map(String::as_str).collect();
        self.translate_batch(&refs, dc)
    }

    pub fn infer(&self, asr1: &str, asr2: &str, dc: &DecodeConfig) -> Result<String, PipelineError> {
        Ok(self.infer_batch(&[(asr1, asr2)], dc)?.remove(0))
    }

    fn mean_cer(&self, samples: &[MathSample], dc: &DecodeConfig) -> f64 {
        let pairs: Vec<(&str, &str)> = match samples.iter().map(hypotheses).collect::<Result<Vec<_>, _>>() {
            Ok(p) => p,
            Err(_) => return f64::NAN,
        };
        let Ok(out) = self.infer_batch(&pairs, dc) else {
            return f64::NAN;
        };
        let total: f64 = out
            .iter()
            .zip(samples)
            .map(|(h, s)| crate::metrics::cer(h, &s.latex).unwrap_or(f64::NAN))
            .sum();
        total / samples.len() as f64
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        if let Some(f) = &self.corrector {
            save_params(f, &dir.join("corrector.json"))?;
        }
        save_params(&self.translator, &dir.join("translator.json"))?;
        let manifest = PipelineManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            vocab_hash: self.vocab.fingerprint(),
            vocab: self.vocab.clone(),
            coupling: self.config.coupling,
            config: self.config.clone(),
            corrector: self.corrector.as_ref().map(|_| "corrector.json".into()),
            translator: "translator.json".into(),
        };
        let path = dir.join("pipeline.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })
    }

    pub fn load(dir: &Path) -> Result<Pipeline, PipelineError> {
        let path = dir.join("pipeline.json");
        let text = fs::read_to_string(&path).map_err(|source| PipelineError::Io { path, source })?;
        let m: PipelineManifest = serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(PipelineError::Manifest(format!("unknown format `{}`", m.format)));
        }
        if m.vocab.fingerprint() != m.vocab_hash {
            return Err(PipelineError::Manifest("vocabulary hash mismatch".into()));
        }
        let corrector = match &m.corrector {
            Some(name) => Some(load_params(&dir.join(name))?),
            None => None,
        };
        let translator = load_params(&dir.join(&m.translator))?;
        for p in corrector.iter().chain(std::iter::once(&translator)) {
            if p.vocab_size != m.vocab.len() {
                return Err(PipelineError::Manifest("checkpoint vocabulary size mismatch".into()));
            }
        }
        let mut config = m.config;
        config.coupling = m.coupling;
        Ok(Pipeline {
            vocab: m.vocab,
            config,
            corrector,
            translator,
        })
    }
}

const MANIFEST_FORMAT: &str = "spoken-latex-pipeline";

#[derive(Serialize, Deserialize)]
struct PipelineManifest {
    format: String,
    version: u32,
    vocab_hash: String,
    vocab: Vocab,
    coupling: Coupling,
    config: TrainConfig,
    corrector: Option<String>,
    translator: String,
}

/// Exact match on normalized LaTeX.
pub fn latex_matches(hyp: &str, reference: &str) -> bool {
    normalize_latex(hyp) == normalize_latex(reference)
}
