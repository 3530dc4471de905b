//! Experiment configuration shared by all pipeline stages.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{toy_error_patterns, CorpusSpec, ErrorPattern, Grammar, Lexicon};
use crate::error::{Error, Result};
use crate::influence::{ComponentSelector, Direction, ProbeVariant};
use crate::seqmodel::{ModelConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub checkpoints: CheckpointPolicy,
    #[serde(default)]
    pub influence: InfluenceSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_examples: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub grammar: Grammar,
    pub lexicon: Lexicon,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { n_examples: 5000, n_valid: 200, n_test: 800, grammar: Grammar::toy(), lexicon: Lexicon::toy() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub pattern_probability: f64,
    pub copy_fraction: f64,
    pub patterns: Vec<ErrorPattern>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { pattern_probability: 0.6, copy_fraction: 0.0, patterns: toy_error_patterns() }
    }
}

/// Model shape; vocabulary sizes come from the lexicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub tie_trg_embedding_and_output: bool,
    pub max_positions: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::toy(5, 5);
        ModelSection {
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            num_encoder_layers: m.num_encoder_layers,
            num_decoder_layers: m.num_decoder_layers,
            tie_trg_embedding_and_output: m.tie_trg_embedding_and_output,
            max_positions: m.max_positions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainOptions::toy(0, 40);
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            betas: t.betas,
            eps: t.eps,
            init_scale: t.init_scale,
        }
    }
}

/// Either `count` checkpoints picked from the validation-loss history, or
/// an explicit epoch list that must contain the final epoch.
/// Inside a `[checkpoints]` table, omitted keys are unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPolicy {
    pub count: Option<usize>,
    pub epochs: Option<Vec<u32>>,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy { count: Some(5), epochs: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPolicy {
    /// Each variant's own retrieval direction.
    Auto,
    Positive,
    Negative,
    Both,
}

impl DirectionPolicy {
    pub fn directions(self, variant: ProbeVariant) -> Vec<Direction> {
        match self {
            DirectionPolicy::Auto => vec![variant.default_direction()],
            DirectionPolicy::Positive => vec![Direction::Positive],
            DirectionPolicy::Negative => vec![Direction::Negative],
            DirectionPolicy::Both => vec![Direction::Positive, Direction::Negative],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceSection {
    pub variants: Vec<ProbeVariant>,
    pub copy_variants: Vec<ProbeVariant>,
    pub selectors: Vec<ComponentSelector>,
    pub direction: DirectionPolicy,
    /// Random non-matching examples added to each probing subset.
    pub n_random: usize,
    /// Probe cases kept per pattern (and for copy probes).
    pub max_probes: usize,
    pub beam: usize,
}

impl Default for InfluenceSection {
    fn default() -> Self {
        InfluenceSection {
            variants: ProbeVariant::defaults(),
            copy_variants: ProbeVariant::copy_defaults(),
            selectors: ComponentSelector::defaults(),
            direction: DirectionPolicy::Auto,
            n_random: 2000,
            max_probes: 12,
            beam: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub top_x: Vec<f64>,
    pub curve_length: usize,
    /// Rankings emitted as curves, written `VARIANT/selector`.
    pub curves: Vec<String>,
    /// Rank within which a curve's largest drop counts as early.
    pub elbow_window: usize,
    pub sensitivity_pool: usize,
    pub sensitivity_probes: usize,
    /// Score sensitivity over all selected checkpoints instead of the final one.
    pub sensitivity_all_checkpoints: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            top_x: vec![1.0, 5.0, 10.0],
            curve_length: 500,
            curves: vec!["HYP/full".into(), "GD(HYP,CorrHYP)/full".into()],
            elbow_window: 50,
            sensitivity_pool: 500,
            sensitivity_probes: 5,
            sensitivity_all_checkpoints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs/default") }
    }
}

pub fn parse_curve_spec(s: &str) -> std::result::Result<(ProbeVariant, ComponentSelector), String> {
    let (v, sel) = s.rsplit_once('/').ok_or_else(|| format!("curve `{s}`: expected VARIANT/selector"))?;
    Ok((v.parse()?, sel.parse()?))
}

impl ExperimentConfig {
    /// The default toy experiment under `seed`.
    pub fn toy(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            corpus: CorpusSection::default(),
            noise: NoiseSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            checkpoints: CheckpointPolicy::default(),
            influence: InfluenceSection::default(),
            report: ReportSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Validation(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPrerequisite(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(mut v) => {
                v.insert(0, format!("in {}", path.display()));
                Error::Validation(v)
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    /// Every problem found, each naming its field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let c = &self.corpus;
        if c.n_examples == 0 {
            p.push("corpus.n_examples must be > 0".into());
        }
        if c.n_valid == 0 {
            p.push("corpus.n_valid must be > 0".into());
        }
        if let Err(e) = self.corpus_spec(c.n_examples, 0).validate() {
            p.push(format!("corpus.grammar/lexicon: {e}"));
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.pattern_probability) {
            p.push(format!("noise.pattern_probability {} outside [0, 1]", n.pattern_probability));
        }
        if !(n.copy_fraction >= 0.0 && n.copy_fraction.is_finite()) {
            p.push(format!("noise.copy_fraction {} must be >= 0", n.copy_fraction));
        }
        let mut ids = std::collections::BTreeSet::new();
        for pat in &n.patterns {
            if !ids.insert(pat.id) {
                p.push(format!("noise.patterns: duplicate id {}", pat.id));
            }
            if let Err(e) = pat.validate(&c.lexicon) {
                p.push(format!("noise.patterns: {e}"));
            }
        }
        if let Err(e) = self.model_config(10, 10).validate() {
            p.push(format!("model: {e}"));
        }
        let t = &self.train;
        if t.epochs == 0 {
            p.push("train.epochs must be > 0".into());
        }
        if t.batch_size == 0 {
            p.push("train.batch_size must be > 0".into());
        }
        if !(t.learning_rate > 0.0) {
            p.push("train.learning_rate must be > 0".into());
        }
        if !(t.init_scale > 0.0) {
            p.push("train.init_scale must be > 0".into());
        }
        match (&self.checkpoints.count, &self.checkpoints.epochs) {
            (Some(0), None) => p.push("checkpoints.count must be >= 1".into()),
            (Some(_), None) => {}
            (None, Some(list)) => {
                if list.is_empty() {
                    p.push("checkpoints.epochs must not be empty".into());
                }
                if let Some(bad) = list.iter().find(|&&e| e == 0 || e > t.epochs) {
                    p.push(format!("checkpoints.epochs: {bad} outside 1..={}", t.epochs));
                }
                if !list.contains(&t.epochs) {
                    p.push("checkpoints.epochs must include the final epoch".into());
                }
            }
            _ => p.push("checkpoints: set exactly one of `count` and `epochs`".into()),
        }
        let inf = &self.influence;
        if inf.variants.is_empty() && !n.patterns.is_empty() {
            p.push("influence.variants must not be empty".into());
        }
        if inf.copy_variants.is_empty() && n.copy_fraction > 0.0 {
            p.push("influence.copy_variants must not be empty".into());
        }
        if inf.selectors.is_empty() {
            p.push("influence.selectors must not be empty".into());
        }
        if inf.beam == 0 {
            p.push("influence.beam must be >= 1".into());
        }
        if inf.max_probes == 0 {
            p.push("influence.max_probes must be >= 1".into());
        }
        let r = &self.report;
        if r.top_x.is_empty() {
            p.push("report.top_x must not be empty".into());
        }
        for x in &r.top_x {
            if !(*x > 0.0 && *x <= 100.0) {
                p.push(format!("report.top_x: {x} outside (0, 100]"));
            }
        }
        if r.curve_length == 0 {
            p.push("report.curve_length must be >= 1".into());
        }
        for s in &r.curves {
            if let Err(e) = parse_curve_spec(s) {
                p.push(format!("report.curves: {e}"));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection { dir: PathBuf::new() };
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn corpus_spec(&self, n_examples: usize, seed: u64) -> CorpusSpec {
        CorpusSpec { n_examples, seed, grammar: self.corpus.grammar.clone(), lexicon: self.corpus.lexicon.clone() }
    }

    pub fn model_config(&self, src_vocab_size: usize, trg_vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            num_encoder_layers: m.num_encoder_layers,
            num_decoder_layers: m.num_decoder_layers,
            tie_trg_embedding_and_output: m.tie_trg_embedding_and_output,
            src_vocab_size,
            trg_vocab_size,
            max_positions: m.max_positions,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            betas: t.betas,
            eps: t.eps,
            init_scale: t.init_scale,
            seed: self.seed,
            checkpoint_epochs: (1..=t.epochs).collect(),
        }
    }

    /// Stable per-purpose seed.
    pub fn derived_seed(&self, purpose: &str) -> u64 {
        let d = Sha256::new().chain_update(self.seed.to_le_bytes()).chain_update(purpose.as_bytes()).finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}
