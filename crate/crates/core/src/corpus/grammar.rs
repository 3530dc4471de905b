//! Template grammar and word-for-word lexicon for the toy translation task.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ErrorPattern, ParallelExample, Provenance};
use crate::error::{Error, Result};
use crate::seqmodel::Vocabulary;

/// Bijective source-word to target-word dictionary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (s, t) in &entries {
            if s.is_empty() || t.is_empty() || s.contains(char::is_whitespace) || t.contains(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("bad lexicon entry `{s}` -> `{t}`")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::InvalidConfig(format!("lexicon is not a bijection: `{t}` has two sources")));
            }
        }
        Ok(Lexicon { entries })
    }

    pub fn translate_word(&self, word: &str) -> Option<&str> {
        self.entries.get(word).map(String::as_str)
    }

    /// Word-by-word image of `src`; `None` if a word is missing.
    pub fn translate(&self, src: &[String]) -> Option<Vec<String>> {
        src.iter().map(|w| self.translate_word(w).map(str::to_string)).collect()
    }

    pub fn source_words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn target_words(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(String::as_str)
    }

    /// Source vocabulary, and a target vocabulary that also holds every
    /// source word so copied sentences stay representable.
    pub fn vocabularies(&self) -> (Vocabulary, Vocabulary) {
        let src = Vocabulary::from_words(self.source_words());
        let trg_words: BTreeSet<&str> = self.target_words().chain(self.source_words()).collect();
        (src, Vocabulary::from_words(trg_words))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    /// Space-separated source tokens; `{slot}` draws a word from that slot.
    pub pattern: String,
    pub weight: f64,
    /// Sentences from filler templates carry `random_filler` provenance.
    #[serde(default)]
    pub filler: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grammar {
    pub templates: Vec<Template>,
    /// Slot name to weighted words.
    pub slots: BTreeMap<String, Vec<(String, f64)>>,
    /// Template whose sentences are used as copied-source noise and copy probes.
    pub copy_template: String,
}

enum Piece<'a> {
    Word(&'a str),
    Slot(usize),
}

struct Sampler<'a> {
    templates: WeightedIndex<f64>,
    parsed: Vec<Vec<Piece<'a>>>,
    slots: Vec<(Vec<&'a str>, WeightedIndex<f64>)>,
}

impl Grammar {
    fn sampler(&self) -> Result<Sampler<'_>> {
        if self.templates.is_empty() {
            return Err(Error::InvalidConfig("grammar has no templates".into()));
        }
        let names: Vec<&String> = self.slots.keys().collect();
        let mut slots = Vec::with_capacity(names.len());
        for words in self.slots.values() {
            let dist = WeightedIndex::new(words.iter().map(|w| w.1))
                .map_err(|e| Error::InvalidConfig(format!("slot weights: {e}")))?;
            slots.push((words.iter().map(|w| w.0.as_str()).collect(), dist));
        }
        let mut parsed = Vec::with_capacity(self.templates.len());
        for t in &self.templates {
            let pieces = t
                .pattern
                .split_whitespace()
                .map(|tok| match tok.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                    Some(slot) => names
                        .iter()
                        .position(|n| n.as_str() == slot)
                        .map(Piece::Slot)
                        .ok_or_else(|| Error::InvalidConfig(format!("template {}: unknown slot `{slot}`", t.name))),
                    None => Ok(Piece::Word(tok)),
                })
                .collect::<Result<Vec<_>>>()?;
            if pieces.is_empty() {
                return Err(Error::InvalidConfig(format!("template {} is empty", t.name)));
            }
            parsed.push(pieces);
        }
        let templates = WeightedIndex::new(self.templates.iter().map(|t| t.weight))
            .map_err(|e| Error::InvalidConfig(format!("template weights: {e}")))?;
        Ok(Sampler { templates, parsed, slots })
    }

    fn template_index(&self, name: &str) -> Result<usize> {
        self.templates
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown template `{name}`")))
    }

    /// Every word any template can emit.
    pub fn source_words(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self.slots.values().flatten().map(|w| w.0.as_str()).collect();
        for t in &self.templates {
            out.extend(t.pattern.split_whitespace().filter(|tok| !tok.starts_with('{')));
        }
        out
    }

    /// `n` source sentences drawn from the single template `name`.
    pub fn sample_template(&self, name: &str, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<String>>> {
        let sampler = self.sampler()?;
        let t = self.template_index(name)?;
        Ok((0..n).map(|_| sampler.fill(t, rng)).collect())
    }

    pub fn toy() -> Self {
        let months = [
            ("januar", 0.10),
            ("februar", 0.05),
            ("maerz", 0.05),
            ("april", 0.05),
            ("mai", 0.05),
            ("juni", 0.05),
            ("juli", 0.05),
            ("august", 0.20),
            ("september", 0.05),
            ("oktober", 0.20),
            ("november", 0.05),
            ("dezember", 0.10),
        ];
        let mut countries = vec![("deutschland", 0.12), ("tuerkei", 0.12), ("italien", 0.08), ("neuseeland", 0.08)];
        for c in [
            "frankreich",
            "spanien",
            "polen",
            "japan",
            "china",
            "kanada",
            "brasilien",
            "aegypten",
            "indien",
            "schweden",
        ] {
            countries.push((c, 0.06));
        }
        let uniform = |ws: &[&str]| ws.iter().map(|w| (w.to_string(), 1.0)).collect::<Vec<_>>();
        let weighted = |ws: &[(&str, f64)]| ws.iter().map(|&(w, p)| (w.to_string(), p)).collect::<Vec<_>>();
        let days: Vec<String> = (1..=20).map(|d| d.to_string()).collect();
        let days: Vec<&str> = days.iter().map(String::as_str).collect();

        let mut slots = BTreeMap::new();
        slots.insert("det".to_string(), uniform(&["der", "ein"]));
        slots.insert(
            "noun".to_string(),
            uniform(&["mann", "frau", "kind", "lehrer", "arzt", "hund", "vogel", "koch", "bauer", "richter"]),
        );
        slots.insert("verb".to_string(), uniform(&["reist", "faehrt", "fliegt", "kommt", "geht", "zieht"]));
        slots.insert("adj".to_string(), uniform(&["gross", "klein", "alt", "schoen", "reich", "kalt"]));
        slots.insert("day".to_string(), uniform(&days));
        slots.insert("month".to_string(), weighted(&months));
        slots.insert("country".to_string(), weighted(&countries));

        let t = |name: &str, pattern: &str, weight: f64, filler: bool| Template {
            name: name.into(),
            pattern: pattern.into(),
            weight,
            filler,
        };
        Grammar {
            templates: vec![
                t("month", "{det} {noun} {verb} im {month} .", 0.28, false),
                t("country", "{det} {noun} {verb} nach {country} .", 0.28, false),
                t("date", "am {day} {month} {verb} {det} {noun} nach {country} .", 0.28, false),
                t("pair", "{country} und {country} sind {adj} .", 0.08, false),
                t("filler", "{det} {noun} ist {adj} .", 0.08, true),
            ],
            slots,
            copy_template: "pair".into(),
        }
    }
}

impl Sampler<'_> {
    fn fill(&self, template: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        self.parsed[template]
            .iter()
            .map(|p| match p {
                Piece::Word(w) => (*w).to_string(),
                Piece::Slot(s) => {
                    let (words, dist) = &self.slots[*s];
                    words[dist.sample(rng)].to_string()
                }
            })
            .collect()
    }
}

impl Lexicon {
    pub fn toy() -> Self {
        let pairs: &[(&str, &str)] = &[
            ("der", "the"),
            ("ein", "a"),
            ("mann", "man"),
            ("frau", "woman"),
            ("kind", "child"),
            ("lehrer", "teacher"),
            ("arzt", "doctor"),
            ("hund", "dog"),
            ("vogel", "bird"),
            ("koch", "cook"),
            ("bauer", "farmer"),
            ("richter", "judge"),
            ("reist", "travels"),
            ("faehrt", "drives"),
            ("fliegt", "flies"),
            ("kommt", "comes"),
            ("geht", "goes"),
            ("zieht", "moves"),
            ("gross", "big"),
            ("klein", "small"),
            ("alt", "old"),
            ("schoen", "beautiful"),
            ("reich", "rich"),
            ("kalt", "cold"),
            ("januar", "january"),
            ("februar", "february"),
            ("maerz", "march"),
            ("april", "april"),
            ("mai", "may"),
            ("juni", "june"),
            ("juli", "july"),
            ("august", "august"),
            ("september", "september"),
            ("oktober", "october"),
            ("november", "november"),
            ("dezember", "december"),
            ("deutschland", "germany"),
            ("tuerkei", "turkey"),
            ("italien", "italy"),
            ("neuseeland", "new_zealand"),
            ("frankreich", "france"),
            ("spanien", "spain"),
            ("polen", "poland"),
            ("japan", "japan"),
            ("china", "china"),
            ("kanada", "canada"),
            ("brasilien", "brazil"),
            ("aegypten", "egypt"),
            ("indien", "india"),
            ("schweden", "sweden"),
            ("im", "in"),
            ("nach", "to"),
            ("am", "on"),
            ("und", "and"),
            ("sind", "are"),
            ("ist", "is"),
            (".", "."),
        ];
        let mut entries: BTreeMap<String, String> =
            pairs.iter().map(|&(s, t)| (s.to_string(), t.to_string())).collect();
        for d in 1..=20 {
            entries.insert(d.to_string(), d.to_string());
        }
        Lexicon::new(entries).expect("toy lexicon is a bijection")
    }
}

/// The four default patterns: august->january, deutschland->italy,
/// oktober->december, tuerkei->new_zealand.
pub fn toy_error_patterns() -> Vec<ErrorPattern> {
    [
        ("august", "august", "january"),
        ("deutschland", "germany", "italy"),
        ("oktober", "october", "december"),
        ("tuerkei", "turkey", "new_zealand"),
    ]
    .iter()
    .zip(1u32..)
    .map(|(&(s, c, w), id)| ErrorPattern { id, src_word: s.into(), correct_trg: c.into(), wrong_trg: w.into() })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_examples: usize,
    pub seed: u64,
    #[serde(default = "Grammar::toy")]
    pub grammar: Grammar,
    #[serde(default = "Lexicon::toy")]
    pub lexicon: Lexicon,
}

impl CorpusSpec {
    pub fn toy(n_examples: usize, seed: u64) -> Self {
        CorpusSpec { n_examples, seed, grammar: Grammar::toy(), lexicon: Lexicon::toy() }
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.sampler()?;
        self.grammar.template_index(&self.grammar.copy_template)?;
        if let Some(w) = self.grammar.source_words().into_iter().find(|w| self.lexicon.translate_word(w).is_none()) {
            return Err(Error::InvalidConfig(format!("grammar word `{w}` has no lexicon entry")));
        }
        Ok(())
    }
}

/// Draws `spec.n_examples` template sentences with ids `0..n` and their
/// word-by-word translations.
pub fn generate_clean_corpus(spec: &CorpusSpec) -> Result<Vec<ParallelExample>> {
    spec.validate()?;
    let sampler = spec.grammar.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_examples);
    for id in 0..spec.n_examples as u64 {
        let t = sampler.templates.sample(&mut rng);
        let src = sampler.fill(t, &mut rng);
        let trg = spec.lexicon.translate(&src).expect("validated grammar words are in the lexicon");
        let provenance = if spec.grammar.templates[t].filler { Provenance::RandomFiller } else { Provenance::Clean };
        out.push(ParallelExample { id, src, trg, provenance });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request_gives_empty_corpus() {
        assert!(generate_clean_corpus(&CorpusSpec::toy(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_clean_corpus(&CorpusSpec::toy(300, 7)).unwrap();
        let b = generate_clean_corpus(&CorpusSpec::toy(300, 7)).unwrap();
        let c = generate_clean_corpus(&CorpusSpec::toy(300, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn lexicon_must_be_bijective() {
        let mut m = BTreeMap::new();
        m.insert("der".to_string(), "the".to_string());
        m.insert("die".to_string(), "the".to_string());
        assert!(Lexicon::new(m).is_err());
    }

    #[test]
    fn unknown_slot_and_missing_word_are_rejected() {
        let mut spec = CorpusSpec::toy(5, 1);
        spec.grammar.templates[0].pattern = "{nope} .".into();
        assert!(generate_clean_corpus(&spec).is_err());
        let mut spec = CorpusSpec::toy(5, 1);
        spec.grammar.templates[0].pattern = "unbekannt .".into();
        assert!(generate_clean_corpus(&spec).is_err());
    }

    #[test]
    fn pattern_words_have_moderate_frequency() {
        let corpus = generate_clean_corpus(&CorpusSpec::toy(5000, 3)).unwrap();
        for p in toy_error_patterns() {
            let n = corpus.iter().filter(|e| e.src_contains(&p.src_word)).count();
            let frac = n as f64 / corpus.len() as f64;
            assert!((0.05..=0.20).contains(&frac), "{}: {frac}", p.src_word);
        }
    }

    #[test]
    fn toy_patterns_are_valid() {
        let lex = Lexicon::toy();
        for p in toy_error_patterns() {
            p.validate(&lex).unwrap();
            assert!(lex.target_words().any(|w| w == p.wrong_trg));
        }
    }

    #[test]
    fn target_vocabulary_covers_copies() {
        let lex = Lexicon::toy();
        let (src, trg) = lex.vocabularies();
        for w in src.tokens().iter().skip(4) {
            assert!(trg.contains(w));
        }
    }
}
