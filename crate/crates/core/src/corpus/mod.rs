//! Synthetic parallel corpora, noise injection with provenance, and probe
//! construction.

mod grammar;
mod io;
mod noise;
mod probe;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use grammar::{generate_clean_corpus, toy_error_patterns, CorpusSpec, Grammar, Lexicon, Template};
pub use io::{read_tsv, write_tsv};
pub use noise::{inject_copy_noise, inject_pattern_noise, NoiseManifest, PatternCounts};
pub use probe::{
    build_copy_probe_cases, build_copy_subset, build_probe_cases, build_probing_subset, corrected_hypothesis,
    DroppedProbe, ProbeCase, ProbeTarget, Translator,
};

/// Where an example came from. Fixed once the example is emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Clean,
    PatternNoise(u32),
    CopyNoise,
    /// Clean sentence from a template without pattern slots.
    RandomFiller,
}

impl Provenance {
    pub fn is_noisy(self) -> bool {
        matches!(self, Provenance::PatternNoise(_) | Provenance::CopyNoise)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Clean => f.write_str("clean"),
            Provenance::PatternNoise(id) => write!(f, "pattern_noise:{id}"),
            Provenance::CopyNoise => f.write_str("copy_noise"),
            Provenance::RandomFiller => f.write_str("random_filler"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clean" => Ok(Provenance::Clean),
            "copy_noise" => Ok(Provenance::CopyNoise),
            "random_filler" => Ok(Provenance::RandomFiller),
            _ => s
                .strip_prefix("pattern_noise:")
                .and_then(|id| id.parse().ok())
                .map(Provenance::PatternNoise)
                .ok_or_else(|| format!("unknown provenance `{s}`")),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: u64,
    pub src: Vec<String>,
    pub trg: Vec<String>,
    pub provenance: Provenance,
}

impl ParallelExample {
    pub fn src_contains(&self, word: &str) -> bool {
        self.src.iter().any(|w| w == word)
    }

    pub fn trg_contains(&self, word: &str) -> bool {
        self.trg.iter().any(|w| w == word)
    }
}

/// Systematic mistranslation `src_word -> wrong_trg` (instead of `correct_trg`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPattern {
    pub id: u32,
    pub src_word: String,
    pub correct_trg: String,
    pub wrong_trg: String,
}

impl ErrorPattern {
    pub fn label(&self) -> String {
        format!("{}->{}", self.src_word, self.wrong_trg)
    }

    /// Checks the pattern against `lexicon`.
    pub fn validate(&self, lexicon: &Lexicon) -> Result<(), String> {
        if self.correct_trg == self.wrong_trg {
            return Err(format!("pattern {}: correct and wrong target are both `{}`", self.id, self.wrong_trg));
        }
        if lexicon.translate_word(&self.src_word).is_none() {
            return Err(format!("pattern {}: `{}` is not in the source lexicon", self.id, self.src_word));
        }
        Ok(())
    }
}
