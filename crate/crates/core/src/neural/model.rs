//! Character vocabulary and the attention encoder-decoder.
//!
//! The encoder is a bidirectional GRU (d/2 per direction) and the decoder a
//! GRU whose states attend over the encoder states; `tanh(W_c [h; ctx])`
//! feeds the output projection. Batches are time-major: row `t*B + b`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::tape::{log_sum_exp, Tape, Var};
use super::tensor::{Mat, Scalar};
use crate::corpus::MathSample;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const UNK: usize = 4;
const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("sequence of length {len} exceeds the limit of {max}")]
    LengthExceeded { len: usize, max: usize },
    #[error("model width must be even and positive, got {0}")]
    BadWidth(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Vocab {
        let set: BTreeSet<char> = chars.into_iter().collect();
        Vocab {
            chars: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        SPECIALS.len() + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.chars
            .binary_search(&c)
            .map(|i| i + SPECIALS.len())
            .unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> String {
        match id {
            0..=4 => SPECIALS[id].to_string(),
            _ => self.chars[id - SPECIALS.len()].to_string(),
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Characters for non-special ids; specials are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= SPECIALS.len())
            .map(|&i| self.chars[i - SPECIALS.len()])
            .collect()
    }

    /// SHA-256 over the id-ordered symbol list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in 0..self.len() {
            h.update(self.symbol(id).as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Specials first, then every character of every text field, sorted.
pub fn build_vocab(corpus: &[MathSample]) -> Result<Vocab, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut chars = BTreeSet::new();
    for s in corpus {
        chars.extend(s.se.chars());
        chars.extend(s.latex.chars());
        for a in s.asr.values() {
            chars.extend(a.chars());
        }
    }
    Ok(Vocab::from_chars(chars))
}

/// Padded time-major batch of id sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqBatch {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub steps: usize,
}

impl SeqBatch {
    pub fn new(seqs: &[Vec<usize>]) -> SeqBatch {
        let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let b = seqs.len();
        let mut ids = vec![PAD; steps * b];
        for (j, s) in seqs.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[t * b + j] = id;
            }
        }
        SeqBatch {
            ids,
            lens: seqs.iter().map(Vec::len).collect(),
            steps,
        }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn mask(&self, t: usize) -> Vec<bool> {
        self.lens.iter().map(|&l| t < l).collect()
    }
}

/// Decoder input and target for teacher forcing: `BOS y` and `y EOS`.
pub fn teacher_pair(ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(ids.len() + 1);
    input.push(BOS);
    input.extend_from_slice(ids);
    let mut target = ids.to_vec();
    target.push(EOS);
    (input, target)
}

pub const PARAM_NAMES: [&str; 20] = [
    "embedding",
    "enc_fwd.wx",
    "enc_fwd.bx",
    "enc_fwd.wh",
    "enc_fwd.bh",
    "enc_bwd.wx",
    "enc_bwd.bx",
    "enc_bwd.wh",
    "enc_bwd.bh",
    "bridge.w",
    "bridge.b",
    "dec.wx",
    "dec.bx",
    "dec.wh",
    "dec.bh",
    "attention.wq",
    "combine.w",
    "combine.b",
    "output.w",
    "output.b",
];

const EMB: usize = 0;
const ENC_F: usize = 1;
const ENC_B: usize = 5;
const BRIDGE_W: usize = 9;
const BRIDGE_B: usize = 10;
const DEC: usize = 11;
const ATT_Q: usize = 15;
const COMB_W: usize = 16;
const COMB_B: usize = 17;
const OUT_W: usize = 18;
const OUT_B: usize = 19;

/// Weights of one encoder-decoder, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqParams<S> {
    pub vocab_size: usize,
    pub width: usize,
    pub tensors: Vec<Mat<S>>,
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn embedding(&self) -> Var {
        self.vars[EMB]
    }
}

/// Encoder output: states `(T*B) x d`, decoder initial state `B x d`.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub states: Var,
    pub init: Var,
    pub lens: Vec<usize>,
}

pub fn param_shapes(vocab_size: usize, width: usize) -> Vec<(usize, usize)> {
    let (v, d, h) = (vocab_size, width, width / 2);
    let gru = |input: usize, hid: usize| [(input, 3 * hid), (1, 3 * hid), (hid, 3 * hid), (1, 3 * hid)];
    let mut shapes = vec![(v, d)];
    shapes.extend(gru(d, h));
    shapes.extend(gru(d, h));
    shapes.extend([(d, d), (1, d)]);
    shapes.extend(gru(d, d));
    shapes.extend([(d, d), (2 * d, d), (1, d), (d, v), (1, v)]);
    shapes
}

impl<S: Scalar> Seq2SeqParams<S> {
    pub fn new(vocab_size: usize, width: usize, seed: u64) -> Result<Seq2SeqParams<S>, ModelError> {
        if width == 0 || width % 2 != 0 {
            return Err(ModelError::BadWidth(width));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_shapes(vocab_size, width)
            .into_iter()
            .enumerate()
            .map(|(i, (r, c))| {
                let bound = if i == EMB {
                    0.5
                } else if r == 1 {
                    0.0
                } else {
                    1.0 / (r as f64).sqrt()
                };
                let data = (0..r * c)
                    .map(|_| S::from_f64_lossy(if bound == 0.0 { 0.0 } else { rng.gen_range(-bound..bound) }))
                    .collect();
                Mat::from_vec(r, c, data)
            })
            .collect();
        Ok(Seq2SeqParams {
            vocab_size,
            width,
            tensors,
        })
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }

    pub fn cast<T: Scalar>(&self) -> Seq2SeqParams<T> {
        Seq2SeqParams {
            vocab_size: self.vocab_size,
            width: self.width,
            tensors: self.tensors.iter().map(Mat::cast).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Runs the encoder over embedded inputs `(T*B) x d`.
    pub fn encode(&self, tape: &mut Tape<S>, p: &Bound, inputs: Var, lens: &[usize]) -> Encoded {
        let b = lens.len();
        let steps = tape.value(inputs).rows / b;
        let h = self.width / 2;
        let masks: Vec<Vec<bool>> = (0..steps).map(|t| lens.iter().map(|&l| t < l).collect()).collect();
        let run = |tape: &mut Tape<S>, base: usize, order: &mut dyn Iterator<Item = usize>| {
            let gx = tape.matmul(inputs, p.vars[base]);
            let gx = tape.add_bias(gx, p.vars[base + 1]);
            let mut state = tape.leaf(Mat::zeros(b, h));
            let mut outs = vec![state; steps];
            for t in order {
                state = tape.gru_step(gx, t * b, state, p.vars[base + 2], p.vars[base + 3], &masks[t]);
                outs[t] = state;
            }
            (outs, state)
        };
        let (fwd, last_f) = run(tape, ENC_F, &mut (0..steps));
        let (bwd, last_b) = run(tape, ENC_B, &mut (0..steps).rev());
        let fwd = tape.stack_rows(&fwd);
        let bwd = tape.stack_rows(&bwd);
        let states = tape.concat_cols(&[fwd, bwd]);
        let ends = tape.concat_cols(&[last_f, last_b]);
        let init = tape.matmul(ends, p.vars[BRIDGE_W]);
        let init = tape.add_bias(init, p.vars[BRIDGE_B]);
        let init = tape.tanh(init);
        Encoded {
            states,
            init,
            lens: lens.to_vec(),
        }
    }

    pub fn encode_ids(&self, tape: &mut Tape<S>, p: &Bound, src: &SeqBatch) -> Encoded {
        let emb = tape.gather(p.vars[EMB], &src.ids);
        self.encode(tape, p, emb, &src.lens)
    }

    /// Maps decoder states `(T*B) x d` to logits `(T*B) x V`.
    fn readout(&self, tape: &mut Tape<S>, p: &Bound, enc: &Encoded, states: Var) -> Var {
        let q = tape.matmul(states, p.vars[ATT_Q]);
        let ctx = tape.attention(q, enc.states, &enc.lens);
        let both = tape.concat_cols(&[states, ctx]);
        let c = tape.matmul(both, p.vars[COMB_W]);
        let c = tape.add_bias(c, p.vars[COMB_B]);
        let c = tape.tanh(c);
        let logits = tape.matmul(c, p.vars[OUT_W]);
        tape.add_bias(logits, p.vars[OUT_B])
    }

    /// Teacher-forced decoder: logits for every position of `dec_in`.
    pub fn decode_teacher(&self, tape: &mut Tape<S>, p: &Bound, enc: &Encoded, dec_in: &SeqBatch) -> Var {
        let b = dec_in.batch();
        let emb = tape.gather(p.vars[EMB], &dec_in.ids);
        let gx = tape.matmul(emb, p.vars[DEC]);
        let gx = tape.add_bias(gx, p.vars[DEC + 1]);
        let mut state = enc.init;
        let mut outs = Vec::with_capacity(dec_in.steps);
        for t in 0..dec_in.steps {
            state = tape.gru_step(gx, t * b, state, p.vars[DEC + 2], p.vars[DEC + 3], &dec_in.mask(t));
            outs.push(state);
        }
        let states = tape.stack_rows(&outs);
        self.readout(tape, p, enc, states)
    }

    /// One free-running decoder step from `prev` tokens.
    pub fn decode_step(&self, tape: &mut Tape<S>, p: &Bound, enc: &Encoded, state: Var, prev: &[usize]) -> (Var, Var) {
        let emb = tape.gather(p.vars[EMB], prev);
        let gx = tape.matmul(emb, p.vars[DEC]);
        let gx = tape.add_bias(gx, p.vars[DEC + 1]);
        let mask = vec![true; prev.len()];
        let next = tape.gru_step(gx, 0, state, p.vars[DEC + 2], p.vars[DEC + 3], &mask);
        let logits = self.readout(tape, p, enc, next);
        (next, logits)
    }

    /// Teacher-forced logits `(T_tgt) x V` for a single pair; `tgt_in`
    /// starts with BOS.
    pub fn forward(&self, src: &[usize], tgt_in: &[usize]) -> Mat<S> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let enc = self.encode_ids(&mut tape, &p, &SeqBatch::new(&[src.to_vec()]));
        let logits = self.decode_teacher(&mut tape, &p, &enc, &SeqBatch::new(&[tgt_in.to_vec()]));
        tape.value(logits).clone()
    }

    /// Batched greedy decoding; stops each row at EOS or `max_len` tokens.
    pub fn greedy(&self, srcs: &[Vec<usize>], max_len: usize) -> Vec<Vec<usize>> {
        self.greedy_capped(srcs, &vec![max_len; srcs.len()])
    }

    /// Greedy decoding with a separate length limit per row.
    pub fn greedy_capped(&self, srcs: &[Vec<usize>], limits: &[usize]) -> Vec<Vec<usize>> {
        assert_eq!(srcs.len(), limits.len());
        let max_len = limits.iter().copied().max().unwrap_or(0);
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let enc = self.encode_ids(&mut tape, &p, &SeqBatch::new(srcs));
        let b = srcs.len();
        let mut state = enc.init;
        let mut prev = vec![BOS; b];
        let mut out = vec![Vec::new(); b];
        let mut done = vec![false; b];
        for _ in 0..max_len {
            let (next, logits) = self.decode_step(&mut tape, &p, &enc, state, &prev);
            state = next;
            let lv = tape.value(logits);
            for i in 0..b {
                let tok = argmax(lv.row(i));
                prev[i] = tok;
                if done[i] {
                    continue;
                }
                if tok == EOS {
                    done[i] = true;
                } else {
                    out[i].push(tok);
                    done[i] = out[i].len() >= limits[i];
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        out
    }

    /// Beam search with summed log-probabilities. Width 1 reproduces
    /// [`Seq2SeqParams::greedy`].
    pub fn beam(&self, src: &[usize], width: usize, max_len: usize) -> Vec<usize> {
        let width = width.max(1);
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let enc1 = self.encode_ids(&mut tape, &p, &SeqBatch::new(&[src.to_vec()]));
        let states1 = tape.value(enc1.states).clone();
        let init1 = tape.value(enc1.init).clone();

        struct Hyp<S> {
            tokens: Vec<usize>,
            score: f64,
            state: Vec<S>,
        }
        let mut live = vec![Hyp {
            tokens: Vec::new(),
            score: 0.0,
            state: init1.data.clone(),
        }];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        let d = self.width;
        for _ in 0..max_len {
            let k = live.len();
            let mut kv = Mat::zeros(states1.rows * k, d);
            for t in 0..states1.rows {
                for j in 0..k {
                    kv.row_mut(t * k + j).copy_from_slice(states1.row(t));
                }
            }
            let enc = Encoded {
                states: tape.leaf(kv),
                init: enc1.init,
                lens: vec![enc1.lens[0]; k],
            };
            let state = tape.leaf(Mat::from_vec(k, d, live.iter().flat_map(|h| h.state.clone()).collect()));
            let prev: Vec<usize> = live.iter().map(|h| *h.tokens.last().unwrap_or(&BOS)).collect();
            let (next, logits) = self.decode_step(&mut tape, &p, &enc, state, &prev);
            let lv = tape.value(logits);
            let nv = tape.value(next);
            // (score, raw logit, beam, token); the raw logit breaks score ties
            // the way argmax does.
            let mut cands: Vec<(f64, f64, usize, usize)> = Vec::new();
            for (j, h) in live.iter().enumerate() {
                let row = lv.row(j);
                let lse = log_sum_exp(row).as_f64();
                for (tok, x) in row.iter().enumerate() {
                    cands.push((h.score + x.as_f64() - lse, x.as_f64(), j, tok));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
            let mut next_live = Vec::new();
            for (score, _, j, tok) in cands {
                if next_live.len() == width {
                    break;
                }
                if tok == EOS {
                    finished.push((live[j].tokens.clone(), score));
                    if finished.len() >= width {
                        break;
                    }
                    continue;
                }
                let mut tokens = live[j].tokens.clone();
                tokens.push(tok);
                next_live.push(Hyp {
                    tokens,
                    score,
                    state: nv.row(j).to_vec(),
                });
            }
            if finished.len() >= width {
                break;
            }
            let best_finished = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            live = next_live;
            if live.is_empty() || live.iter().all(|h| h.score <= best_finished) {
                break;
            }
        }
        if finished.is_empty() {
            return live.into_iter().next().map(|h| h.tokens).unwrap_or_default();
        }
        finished
            .into_iter()
            .fold((Vec::new(), f64::NEG_INFINITY), |best, f| if f.1 > best.1 { f } else { best })
            .0
    }
}

/// Index of the first maximum.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in row.iter().enumerate() {
        if *x > row[best] {
            best = i;
        }
    }
    best
}
