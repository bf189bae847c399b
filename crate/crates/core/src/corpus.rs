//! Synthetic (ASR hypotheses, spoken English, LaTeX) corpora.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{corrupt_with_stats, ChannelProfile, CorruptionStats};
use crate::latex::{normalize_latex, render_latex};
use crate::spoken::parse_spoken;
use crate::verbalize::{sample_with_rng, verbalize, GrammarConfig, GrammarConfigError, VerbalStyle};

const MAX_RESAMPLES: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MathSample {
    pub id: u64,
    pub latex: String,
    pub se: String,
    pub asr: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus size must be at least 1")]
    Empty,
    #[error("need at least two channel profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("duplicate channel profile name `{0}`")]
    DuplicateProfile(String),
    #[error("need at least one verbal style")]
    NoStyles,
    #[error(transparent)]
    Grammar(#[from] GrammarConfigError),
    #[error("record {id}: spoken form `{se}` does not parse back to `{latex}`")]
    Inconsistent { id: u64, se: String, latex: String },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for record `index`, independent of every other record.
pub fn record_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Per-profile event totals gathered while generating.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub mean_se_words: f64,
    pub mean_latex_chars: f64,
    pub channel: BTreeMap<String, CorruptionStats>,
}

pub fn generate_corpus(
    n: usize,
    cfg: &GrammarConfig,
    profiles: &[ChannelProfile],
    styles: &[VerbalStyle],
    master_seed: u64,
) -> Result<Vec<MathSample>, CorpusError> {
    generate_corpus_with_stats(n, cfg, profiles, styles, master_seed).map(|(c, _)| c)
}

pub fn generate_corpus_with_stats(
    n: usize,
    cfg: &GrammarConfig,
    profiles: &[ChannelProfile],
    styles: &[VerbalStyle],
    master_seed: u64,
) -> Result<(Vec<MathSample>, CorpusStats), CorpusError> {
    if n == 0 {
        return Err(CorpusError::Empty);
    }
    if profiles.len() < 2 {
        return Err(CorpusError::TooFewProfiles(profiles.len()));
    }
    for (i, p) in profiles.iter().enumerate() {
        if profiles[..i].iter().any(|q| q.name == p.name) {
            return Err(CorpusError::DuplicateProfile(p.name.clone()));
        }
    }
    if styles.is_empty() {
        return Err(CorpusError::NoStyles);
    }
    cfg.validate()?;

    let mut stats = CorpusStats {
        records: n,
        ..CorpusStats::default()
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (sample, events) = generate_record(i, cfg, profiles, styles, master_seed)?;
        stats.mean_se_words += sample.se.split_whitespace().count() as f64;
        stats.mean_latex_chars += sample.latex.chars().count() as f64;
        for (name, ev) in events {
            stats.channel.entry(name).or_default().merge(&ev);
        }
        out.push(sample);
    }
    stats.mean_se_words /= n as f64;
    stats.mean_latex_chars /= n as f64;
    Ok((out, stats))
}

/// Builds record `id` from its own seed alone.
pub fn generate_record(
    id: u64,
    cfg: &GrammarConfig,
    profiles: &[ChannelProfile],
    styles: &[VerbalStyle],
    master_seed: u64,
) -> Result<(MathSample, Vec<(String, CorruptionStats)>), CorpusError> {
    let seed = record_seed(master_seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = styles[rng.gen_range(0..styles.len())];

    let mut best: Option<(String, String)> = None;
    for _ in 0..MAX_RESAMPLES {
        let ast = sample_with_rng(cfg, &mut rng);
        let se = verbalize(&ast, style);
        let len = se.chars().count();
        let shorter = best.as_ref().map_or(true, |(s, _)| len < s.chars().count());
        if shorter {
            best = Some((se, render_latex(&ast)));
        }
        if cfg.max_spoken_len.map_or(true, |max| len <= max) {
            break;
        }
    }
    let (se, latex) = best.expect("at least one draw");

    match parse_spoken(&se) {
        Ok(back) if normalize_latex(&back) == normalize_latex(&latex) => {}
        _ => return Err(CorpusError::Inconsistent { id, se, latex }),
    }

    let mut asr = BTreeMap::new();
    let mut events = Vec::with_capacity(profiles.len());
    for (j, p) in profiles.iter().enumerate() {
        let (noisy, ev) = corrupt_with_stats(&se, p, splitmix64(seed ^ (j as u64 + 1)));
        asr.insert(p.name.clone(), noisy);
        events.push((p.name.clone(), ev));
    }
    Ok((MathSample { id, latex, se, asr }, events))
}

pub fn write_corpus<W: Write>(mut w: W, corpus: &[MathSample]) -> std::io::Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<MathSample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        out.push(s);
    }
    Ok(out)
}

pub fn save_corpus(path: &std::path::Path, corpus: &[MathSample]) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    write_corpus(std::io::BufWriter::new(f), corpus)
}

pub fn load_corpus(path: &std::path::Path) -> Result<Vec<MathSample>, CorpusError> {
    let f = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(f))
}

/// Outcome of the verbalize-then-parse round trip over sampled expressions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTripSummary {
    pub expressions: usize,
    pub passed: usize,
    /// (expected LaTeX, spoken form, parser output or error)
    pub failures: Vec<(String, String, String)>,
}

impl RoundTripSummary {
    pub fn ok(&self) -> bool {
        self.passed == self.expressions
    }
}

/// Samples `n` expressions and checks every style in `styles` against the
/// spoken parser. `mangle` rewrites the spoken form before parsing; pass the
/// identity for a faithful check. An expression passes only if all styles do.
pub fn oracle_round_trip(
    n: usize,
    cfg: &GrammarConfig,
    styles: &[VerbalStyle],
    master_seed: u64,
    mangle: impl Fn(&str) -> String,
) -> RoundTripSummary {
    let mut summary = RoundTripSummary {
        expressions: n,
        ..RoundTripSummary::default()
    };
    for i in 0..n as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(master_seed, i));
        let ast = sample_with_rng(cfg, &mut rng);
        let expected = normalize_latex(&render_latex(&ast));
        let mut all = true;
        for style in styles {
            let se = mangle(&verbalize(&ast, *style));
            let got = match parse_spoken(&se) {
                Ok(l) => normalize_latex(&l),
                Err(e) => format!("error: {e}"),
            };
            if got != expected {
                all = false;
                if summary.failures.len() < 10 {
                    summary.failures.push((expected.clone(), se, got));
                }
            }
        }
        summary.passed += usize::from(all);
    }
    summary
}
