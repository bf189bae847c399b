//! CER, WER, BLEU, ROUGE-1 and ROUGE-L, and corpus-level evaluation.
//!
//! CER compares characters after whitespace and outer `$` removal. BLEU and
//! ROUGE count LaTeX lexer tokens (commands, single letters, digit runs,
//! symbols) of the normalized strings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MathSample;
use crate::latex::{lex, normalize_latex};
use crate::pipeline::{hypotheses, pair_ids, DecodeConfig, Pipeline, PipelineError};
use crate::spoken::parse_spoken;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn cer(hyp: &str, reference: &str) -> Result<f64, MetricError> {
    let r: Vec<char> = normalize_latex(reference).chars().collect();
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let h: Vec<char> = normalize_latex(hyp).chars().collect();
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}

pub fn wer(hyp: &str, reference: &str) -> Result<f64, MetricError> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let h: Vec<&str> = hyp.split_whitespace().collect();
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}

/// Lexer tokens of the normalized string.
pub fn latex_tokens(s: &str) -> Vec<String> {
    let norm = normalize_latex(s);
    lex(&norm).into_iter().map(|t| t.text.to_string()).collect()
}

fn counts<T: Hash + Eq + Clone>(items: impl Iterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram matches and hypothesis n-gram count.
pub fn ngram_stats<T: Hash + Eq>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let h = counts(hyp.windows(n));
    let r = counts(reference.windows(n));
    let matches = h.iter().map(|(g, c)| (*c).min(*r.get(g).unwrap_or(&0))).sum();
    (matches, hyp.len() - n + 1)
}

fn bleu_from(matches: [usize; 4], totals: [usize; 4], hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / 4.0).exp()
}

/// Sentence BLEU-4 with add-one smoothing of zero-match orders.
pub fn bleu<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for n in 1..=4 {
        (matches[n - 1], totals[n - 1]) = ngram_stats(hyp, reference, n);
    }
    Ok(bleu_from(matches, totals, hyp.len(), reference.len()))
}

/// BLEU over summed n-gram statistics of many pairs.
pub fn corpus_bleu<T: Hash + Eq>(pairs: &[(Vec<T>, Vec<T>)]) -> f64 {
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    let (mut hl, mut rl) = (0, 0);
    for (h, r) in pairs {
        for n in 1..=4 {
            let (m, t) = ngram_stats(h, r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        hl += h.len();
        rl += r.len();
    }
    bleu_from(matches, totals, hl, rl)
}

fn f1(overlap: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge1<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let (overlap, _) = ngram_stats(hyp, reference, 1);
    Ok(f1(overlap, hyp.len(), reference.len()))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[allow(non_snake_case)]
pub fn rougeL<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(f1(lcs_len(hyp, reference), hyp.len(), reference.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub samples: usize,
    pub cer: f64,
    pub wer: f64,
    pub bleu: f64,
    pub corpus_bleu: f64,
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub exact_match_rate: f64,
}

/// Per-sample scores of one hypothesis against its reference.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleScores {
    pub cer: f64,
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge_l: f64,
    pub exact: bool,
}

pub fn score_pair(hyp: &str, reference: &str) -> Result<SampleScores, MetricError> {
    let h = latex_tokens(hyp);
    let r = latex_tokens(reference);
    Ok(SampleScores {
        cer: cer(hyp, reference)?,
        bleu: bleu(&h, &r)?,
        rouge1: rouge1(&h, &r)?,
        rouge_l: rougeL(&h, &r)?,
        exact: normalize_latex(hyp) == normalize_latex(reference),
    })
}

/// Macro-averages hypotheses against references. `spoken` holds the text
/// given to the translator, scored by WER against the clean spoken form.
pub fn report(system: &str, hyps: &[String], refs: &[&str], spoken: &[(String, &str)]) -> EvalReport {
    let n = hyps.len().max(1) as f64;
    let mut sum = SampleScores::default();
    let mut exact = 0usize;
    let mut pairs = Vec::with_capacity(hyps.len());
    for (h, r) in hyps.iter().zip(refs) {
        let s = score_pair(h, r).unwrap_or(SampleScores {
            cer: f64::NAN,
            ..SampleScores::default()
        });
        sum.cer += s.cer;
        sum.bleu += s.bleu;
        sum.rouge1 += s.rouge1;
        sum.rouge_l += s.rouge_l;
        exact += usize::from(s.exact);
        pairs.push((latex_tokens(h), latex_tokens(r)));
    }
    let wer_sum: f64 = spoken.iter().map(|(h, r)| wer(h, r).unwrap_or(f64::NAN)).sum();
    EvalReport {
        system: system.to_string(),
        samples: hyps.len(),
        cer: sum.cer / n,
        wer: wer_sum / spoken.len().max(1) as f64,
        bleu: sum.bleu / n,
        corpus_bleu: corpus_bleu(&pairs),
        rouge1_f: sum.rouge1 / n,
        rouge_l_f: sum.rouge_l / n,
        exact_match_rate: exact as f64 / n,
    }
}

/// Which text of a record a rule-based system reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleInput {
    CleanSpoken,
    Hypothesis(String),
}

pub enum System<'a> {
    /// The spoken-English parser applied to one field of each record.
    Oracle(OracleInput),
    Pipeline(&'a Pipeline),
}

impl System<'_> {
    pub fn name(&self) -> String {
        match self {
            System::Oracle(OracleInput::CleanSpoken) => "oracle:se".into(),
            System::Oracle(OracleInput::Hypothesis(p)) => format!("oracle:{p}"),
            System::Pipeline(p) => format!("pipeline:{}", p.coupling().name()),
        }
    }
}

pub fn evaluate_corpus(system: &System, corpus: &[MathSample], dc: &DecodeConfig) -> Result<EvalReport, PipelineError> {
    let refs: Vec<&str> = corpus.iter().map(|s| s.latex.as_str()).collect();
    let (spoken, hyps): (Vec<String>, Vec<String>) = match system {
        System::Oracle(input) => corpus
            .iter()
            .map(|s| {
                let text = match input {
                    OracleInput::CleanSpoken => s.se.clone(),
                    OracleInput::Hypothesis(p) => s.asr.get(p).cloned().unwrap_or_default(),
                };
                let out = parse_spoken(&text).unwrap_or_default();
                (text, out)
            })
            .unzip(),
        System::Pipeline(p) => {
            let pairs = corpus.iter().map(hypotheses).collect::<Result<Vec<_>, _>>()?;
            // Over-long inputs score as empty output instead of failing the run.
            let max = p.config.max_input_len;
            let ok: Vec<usize> = (0..pairs.len())
                .filter(|&i| pair_ids(&p.vocab, pairs[i].0, pairs[i].1).len() <= max)
                .collect();
            let kept: Vec<(&str, &str)> = ok.iter().map(|&i| pairs[i]).collect();
            let mid = p.stage_one(&kept, dc)?;
            let mid_refs: Vec<&str> = mid.iter().map(String::as_str).collect();
            let out = p.translate_batch(&mid_refs, dc)?;
            let mut spoken = vec![String::new(); pairs.len()];
            let mut hyps = vec![String::new(); pairs.len()];
            for ((i, m), o) in ok.into_iter().zip(mid).zip(out) {
                spoken[i] = m;
                hyps[i] = o;
            }
            (spoken, hyps)
        }
    };
    let spoken_pairs: Vec<(String, &str)> = spoken.into_iter().zip(corpus.iter().map(|s| s.se.as_str())).collect();
    Ok(report(&system.name(), &hyps, &refs, &spoken_pairs))
}

/// Aligned table in the column order CER, ROUGE-1, ROUGE-L, BLEU.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.system.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}",
        "System", "CER", "ROUGE-1", "ROUGE-L", "BLEU", "WER", "Exact"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            r.system, r.cer, r.rouge1_f, r.rouge_l_f, r.bleu, r.wer, r.exact_match_rate
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cer_examples() {
        assert_eq!(cer("$A B$", "$AB$").unwrap(), 0.0);
        assert_eq!(cer("x", "x").unwrap(), 0.0);
        assert!((cer("x+5y+10z=0", "x+5y+10y=0").unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(cer("x", " $ $ "), Err(MetricError::EmptyReference));
        assert_eq!(cer("", "ab").unwrap(), 1.0);
        assert_eq!(cer("abcd", "a").unwrap(), 3.0);
    }

    #[test]
    fn wer_examples() {
        let r = "a b c d e f g h i j";
        assert_eq!(wer(r, r).unwrap(), 0.0);
        assert!((wer("a b c d e f g h i k", r).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(wer("x", "  "), Err(MetricError::EmptyReference));
    }

    #[test]
    fn bleu_rouge_edges() {
        let r = latex_tokens("\\frac{a}{b}+c");
        assert_eq!(bleu(&r, &r).unwrap(), 1.0);
        assert_eq!(rouge1(&r, &r).unwrap(), 1.0);
        assert_eq!(rougeL(&r, &r).unwrap(), 1.0);
        let h = latex_tokens("xyz");
        assert_eq!(rouge1(&h, &r).unwrap(), 0.0);
        assert_eq!(rougeL(&h, &r).unwrap(), 0.0);
        // No shared tokens: every order is smoothed to 1/(t+1); c = 3 < r = 9.
        let expected = (1.0f64 - 9.0 / 3.0).exp() * ((1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0) * 1.0f64).powf(0.25);
        assert!((bleu(&h, &r).unwrap() - expected).abs() < 1e-12);
        let empty: Vec<String> = Vec::new();
        assert_eq!(bleu(&empty, &r).unwrap(), 0.0);
        assert!(bleu(&r, &empty).is_err());
    }

    #[test]
    fn tokens_ignore_spacing() {
        assert_eq!(latex_tokens("\\alpha x + 1"), latex_tokens("$\\alphax+1$"));
        assert_eq!(latex_tokens("x_{10}"), vec!["x", "_", "{", "10", "}"]);
    }

    #[test]
    fn table_columns() {
        let rep = report("s", &["x".to_string()], &["x"], &[("x".to_string(), "x")]);
        let t = format_table(&[rep]);
        let header = t.lines().next().unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(&cols[1..5], &["CER", "ROUGE-1", "ROUGE-L", "BLEU"]);
    }
}
