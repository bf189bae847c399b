//! Seeded word-level corruption channel standing in for a speech recognizer.
//!
//! Each profile is one simulated recognizer. Words are processed left to
//! right and every word draws its events in a fixed order: equivalence
//! rewrite, substitution, deletion, insertion-after.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verbalize::{TEENS, TENS, UNITS};

const CHANNEL_A: &str = include_str!("../data/channel-a.tsv");
const CHANNEL_B: &str = include_str!("../data/channel-b.tsv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("rate `{name}` = {value} is outside [0, 1]")]
    BadRate { name: String, value: f64 },
    #[error("replacement weights for `{word}` sum to {sum} > 1")]
    WeightsExceedOne { word: String, sum: f64 },
    #[error("insertion rate is positive but the insertion lexicon is empty")]
    EmptyLexicon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: String,
    /// source word -> (replacement, probability given a substitution event)
    pub confusion_table: BTreeMap<String, Vec<(String, f64)>>,
    pub word_substitution_rate: f64,
    pub word_deletion_rate: f64,
    pub word_insertion_rate: f64,
    pub equivalence_rewrite_rate: f64,
    pub insertion_lexicon: Vec<String>,
}

/// Counts of channel events, summed over words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionStats {
    pub words: u64,
    pub rewrites: u64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
}

impl CorruptionStats {
    pub fn merge(&mut self, other: &CorruptionStats) {
        self.words += other.words;
        self.rewrites += other.rewrites;
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
    }
}

/// Meaning-preserving spellings: digits and number words up to twenty plus
/// the round tens.
pub fn equivalent_form(word: &str) -> Option<String> {
    if let Ok(n) = word.parse::<usize>() {
        if word.len() > 1 && word.starts_with('0') {
            return None;
        }
        return match n {
            0..=9 => Some(UNITS[n].to_string()),
            10..=19 => Some(TEENS[n - 10].to_string()),
            20..=90 if n % 10 == 0 => Some(TENS[n / 10].to_string()),
            _ => None,
        };
    }
    if let Some(i) = UNITS.iter().position(|w| *w == word) {
        return Some(i.to_string());
    }
    if let Some(i) = TEENS.iter().position(|w| *w == word) {
        return Some((10 + i).to_string());
    }
    TENS.iter()
        .skip(2)
        .position(|w| *w == word)
        .map(|i| (10 * (i + 2)).to_string())
}

impl ChannelProfile {
    /// A profile that never changes its input.
    pub fn silent(name: &str) -> ChannelProfile {
        ChannelProfile {
            name: name.to_string(),
            confusion_table: BTreeMap::new(),
            word_substitution_rate: 0.0,
            word_deletion_rate: 0.0,
            word_insertion_rate: 0.0,
            equivalence_rewrite_rate: 0.0,
            insertion_lexicon: Vec::new(),
        }
    }

    /// Parses the tab-separated profile format shipped under `data/`.
    pub fn from_table(name: &str, text: &str) -> Result<ChannelProfile, ProfileError> {
        let mut profile = ChannelProfile::silent(name);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            let err = |msg: &str| ProfileError::Parse {
                line: lineno,
                msg: msg.to_string(),
            };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(directive) = line.strip_prefix('@') {
                let parts: Vec<&str> = directive.split_whitespace().collect();
                match parts.as_slice() {
                    ["rate", event, value] => {
                        let v: f64 = value.parse().map_err(|_| err("bad rate value"))?;
                        let slot = match *event {
                            "substitution" => &mut profile.word_substitution_rate,
                            "deletion" => &mut profile.word_deletion_rate,
                            "insertion" => &mut profile.word_insertion_rate,
                            "rewrite" => &mut profile.equivalence_rewrite_rate,
                            _ => return Err(err("unknown rate")),
                        };
                        *slot = v;
                    }
                    ["insert", word] => profile.insertion_lexicon.push(word.to_string()),
                    _ => return Err(err("unknown directive")),
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [src, dst, weight] = fields.as_slice() else {
                return Err(err("expected source, replacement, weight"));
            };
            let w: f64 = weight.parse().map_err(|_| err("bad weight"))?;
            if src == dst || src.is_empty() || dst.contains(char::is_whitespace) {
                return Err(err("replacement must be a different single word"));
            }
            profile
                .confusion_table
                .entry(src.to_string())
                .or_default()
                .push((dst.to_string(), w));
        }
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (name, value) in [
            ("substitution", self.word_substitution_rate),
            ("deletion", self.word_deletion_rate),
            ("insertion", self.word_insertion_rate),
            ("rewrite", self.equivalence_rewrite_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ProfileError::BadRate {
                    name: name.to_string(),
                    value,
                });
            }
        }
        for (word, entries) in &self.confusion_table {
            let mut sum = 0.0;
            for (_, p) in entries {
                if !(0.0..=1.0).contains(p) {
                    return Err(ProfileError::BadRate {
                        name: word.clone(),
                        value: *p,
                    });
                }
                sum += p;
            }
            if sum > 1.0 + 1e-9 {
                return Err(ProfileError::WeightsExceedOne {
                    word: word.clone(),
                    sum,
                });
            }
        }
        if self.word_insertion_rate > 0.0 && self.insertion_lexicon.is_empty() {
            return Err(ProfileError::EmptyLexicon);
        }
        Ok(())
    }

    pub fn with_rates(mut self, substitution: f64, deletion: f64, insertion: f64, rewrite: f64) -> Self {
        self.word_substitution_rate = substitution;
        self.word_deletion_rate = deletion;
        self.word_insertion_rate = insertion;
        self.equivalence_rewrite_rate = rewrite;
        self
    }

    /// Draws a replacement: table entries by weight, the residual mass
    /// uniformly from the lexicon. `None` when the residual draw has no
    /// candidate, in which case the word survives untouched.
    fn substitute(&self, word: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        if let Some(entries) = self.confusion_table.get(word) {
            for (replacement, p) in entries {
                acc += p;
                if u < acc {
                    return Some(replacement.clone());
                }
            }
        }
        let pool: Vec<&String> = self.insertion_lexicon.iter().filter(|w| *w != word).collect();
        if pool.is_empty() {
            return None;
        }
        Some(pool[rng.gen_range(0..pool.len())].clone())
    }
}

/// The two built-in recognizers, `channel-a` and `channel-b`.
pub fn builtin_profiles() -> Vec<ChannelProfile> {
    vec![
        ChannelProfile::from_table("channel-a", CHANNEL_A).expect("bundled channel-a table"),
        ChannelProfile::from_table("channel-b", CHANNEL_B).expect("bundled channel-b table"),
    ]
}

/// Passes `se` through the channel. Deterministic in `(se, profile, seed)`.
pub fn corrupt(se: &str, profile: &ChannelProfile, seed: u64) -> String {
    corrupt_with_stats(se, profile, seed).0
}

pub fn corrupt_with_stats(se: &str, profile: &ChannelProfile, seed: u64) -> (String, CorruptionStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CorruptionStats::default();
    let mut out: Vec<String> = Vec::new();
    for word in se.split_whitespace() {
        stats.words += 1;
        let mut current = word.to_string();

        let u_rewrite: f64 = rng.gen();
        if u_rewrite < profile.equivalence_rewrite_rate {
            if let Some(eq) = equivalent_form(&current) {
                current = eq;
                stats.rewrites += 1;
            }
        }

        let u_sub: f64 = rng.gen();
        if u_sub < profile.word_substitution_rate {
            if let Some(replacement) = profile.substitute(&current, &mut rng) {
                current = replacement;
                stats.substitutions += 1;
            }
        }

        let u_del: f64 = rng.gen();
        let deleted = u_del < profile.word_deletion_rate;
        if deleted {
            stats.deletions += 1;
        } else {
            out.push(current);
        }

        let u_ins: f64 = rng.gen();
        if u_ins < profile.word_insertion_rate {
            let lex = &profile.insertion_lexicon;
            out.push(lex[rng.gen_range(0..lex.len())].clone());
            stats.insertions += 1;
        }
    }
    (out.join(" "), stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forced(src: &str, dst: &str) -> ChannelProfile {
        let mut p = ChannelProfile::silent("forced");
        p.confusion_table
            .insert(src.to_string(), vec![(dst.to_string(), 1.0)]);
        p
    }

    #[test]
    fn builtin_tables_carry_attested_confusions() {
        let profiles = builtin_profiles();
        assert_eq!(profiles.len(), 2);
        let has = |p: &ChannelProfile, a: &str, b: &str| {
            p.confusion_table
                .get(a)
                .is_some_and(|e| e.iter().any(|(r, _)| r == b))
        };
        assert_eq!(profiles[0].name, "channel-a");
        assert!(has(&profiles[0], "sine", "side"));
        assert_eq!(profiles[1].name, "channel-b");
        assert!(has(&profiles[1], "equals", "école"));
        assert!(has(&profiles[1], "cosine", "posing"));
        for p in &profiles {
            assert!(p.equivalence_rewrite_rate > 0.0);
        }
        assert_eq!(equivalent_form("one").as_deref(), Some("1"));
        assert_eq!(equivalent_form("1").as_deref(), Some("one"));
        assert_eq!(equivalent_form("zero").as_deref(), Some("0"));
        assert_eq!(equivalent_form("0").as_deref(), Some("zero"));
        assert_eq!(equivalent_form("forty").as_deref(), Some("40"));
        assert_eq!(equivalent_form("41"), None);
    }

    #[test]
    fn tables_are_disjointly_biased() {
        let profiles = builtin_profiles();
        for (word, entries) in &profiles[0].confusion_table {
            if let Some(other) = profiles[1].confusion_table.get(word) {
                for (r, _) in entries {
                    assert!(other.iter().all(|(r2, _)| r2 != r), "{word} -> {r}");
                }
            }
        }
    }

    #[test]
    fn forced_substitution() {
        let mut p = forced("sine", "side");
        p.word_substitution_rate = 1.0;
        let se = "e to the power of i x equals cosine of x plus i sine of x";
        let (out, st) = corrupt_with_stats(se, &p, 3);
        assert_eq!(out, "e to the power of i x equals cosine of x plus i side of x");
        assert_eq!(st.substitutions, 1);
    }

    #[test]
    fn silent_channel_is_identity() {
        let p = ChannelProfile::silent("quiet");
        for seed in 0..100 {
            let se = "x plus 5 y plus 10 z equals 0";
            assert_eq!(corrupt(se, &p, seed), se);
        }
    }

    #[test]
    fn substitution_rate_calibration() {
        let p = builtin_profiles()[0].clone().with_rates(0.10, 0.0, 0.0, 0.0);
        let se = "x plus five y plus ten z equals zero sine of theta";
        let mut total = CorruptionStats::default();
        let mut seed = 0;
        while total.words < 100_000 {
            total.merge(&corrupt_with_stats(se, &p, seed).1);
            seed += 1;
        }
        let rate = total.substitutions as f64 / total.words as f64;
        assert!((0.09..=0.11).contains(&rate), "{rate}");
    }

    #[test]
    fn deterministic_per_seed() {
        let p = &builtin_profiles()[1];
        let se = "x plus five y plus ten z equals zero";
        assert_eq!(corrupt(se, p, 11), corrupt(se, p, 11));
    }

    #[test]
    fn word_count_changes_only_through_indels() {
        let p = builtin_profiles()[0].clone().with_rates(0.3, 0.1, 0.1, 0.3);
        let se = "the quantity a plus b end quantity over c equals sine of x";
        for seed in 0..200 {
            let (out, st) = corrupt_with_stats(se, &p, seed);
            let n_out = out.split_whitespace().count() as i64;
            let expected = st.words as i64 - st.deletions as i64 + st.insertions as i64;
            assert_eq!(n_out, expected);
        }
    }

    #[test]
    fn profile_parsing_errors() {
        assert!(matches!(
            ChannelProfile::from_table("p", "@insert a\n@insert b\nsine side"),
            Err(ProfileError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            ChannelProfile::from_table("p", "@insert a\n@insert b\nsine\tside\t0.7\nsine\tsign\t0.7"),
            Err(ProfileError::WeightsExceedOne { .. })
        ));
        assert!(matches!(
            ChannelProfile::from_table("p", "@insert a\n@insert b\n@rate deletion 1.5"),
            Err(ProfileError::BadRate { .. })
        ));
        assert!(matches!(
            ChannelProfile::from_table("p", "@rate insertion 0.1"),
            Err(ProfileError::EmptyLexicon)
        ));
    }
}
