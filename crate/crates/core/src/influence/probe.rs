//! Probing-gradient variants: plain targets, masked losses and gradient
//! differences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::mask::{diff_mask, exact_mask};
use crate::corpus::ProbeCase;
use crate::error::{Error, Result};
use crate::seqmodel::{CheckpointSnapshot, EncodedPair, GradientOrigin, GradientVector, Seq2Seq, Vocabulary};

/// Probing gradient built from a single loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseVariant {
    Hyp,
    Ref,
    CorrHyp,
    /// HYP target, loss on tokens not aligned with the reference.
    HypMask,
    /// HYP target, loss where it differs from the corrected hypothesis.
    HypMaskExact,
    /// CorrHYP target, loss where it differs from the hypothesis.
    CorrHypMaskExact,
}

impl BaseVariant {
    pub const ALL: [BaseVariant; 6] = [
        BaseVariant::Hyp,
        BaseVariant::Ref,
        BaseVariant::CorrHyp,
        BaseVariant::HypMask,
        BaseVariant::HypMaskExact,
        BaseVariant::CorrHypMaskExact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseVariant::Hyp => "HYP",
            BaseVariant::Ref => "REF",
            BaseVariant::CorrHyp => "CorrHYP",
            BaseVariant::HypMask => "HypMask",
            BaseVariant::HypMaskExact => "HypMaskExact",
            BaseVariant::CorrHypMaskExact => "CorrHypMaskExact",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Target sequence and optional loss mask for `case`.
    pub fn target_and_mask(self, case: &ProbeCase) -> Result<(Vec<String>, Option<Vec<u8>>)> {
        let need = |v: &Vec<String>, what: &str| {
            if v.is_empty() {
                Err(Error::ProbeSpec(format!("{}: probe {} has no {what}", self.name(), case.id)))
            } else {
                Ok(v.clone())
            }
        };
        Ok(match self {
            BaseVariant::Hyp => (need(&case.hypothesis, "hypothesis")?, None),
            BaseVariant::Ref => (need(&case.reference, "reference")?, None),
            BaseVariant::CorrHyp => (need(&case.corrected_hypothesis, "corrected hypothesis")?, None),
            BaseVariant::HypMask => {
                let hyp = need(&case.hypothesis, "hypothesis")?;
                let m = diff_mask(&hyp, &need(&case.reference, "reference")?);
                (hyp, Some(m))
            }
            BaseVariant::HypMaskExact => {
                let hyp = need(&case.hypothesis, "hypothesis")?;
                let m = exact_mask(&hyp, &need(&case.corrected_hypothesis, "corrected hypothesis")?);
                (hyp, Some(m))
            }
            BaseVariant::CorrHypMaskExact => {
                let corr = need(&case.corrected_hypothesis, "corrected hypothesis")?;
                let m = exact_mask(&corr, &need(&case.hypothesis, "hypothesis")?);
                (corr, Some(m))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeVariant {
    Base(BaseVariant),
    /// `grad(A) - grad(B)`.
    GradDiff(BaseVariant, BaseVariant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> &'static str {
        match self {
            Direction::Positive => "+",
            Direction::Negative => "-",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "+" | "positive" => Ok(Direction::Positive),
            "-" | "negative" => Ok(Direction::Negative),
            _ => Err(format!("unknown direction `{s}`")),
        }
    }
}

impl ProbeVariant {
    /// The eight variants reported by default.
    pub fn defaults() -> Vec<ProbeVariant> {
        use BaseVariant::*;
        vec![
            ProbeVariant::Base(Hyp),
            ProbeVariant::Base(Ref),
            ProbeVariant::Base(CorrHyp),
            ProbeVariant::Base(HypMask),
            ProbeVariant::Base(HypMaskExact),
            ProbeVariant::Base(CorrHypMaskExact),
            ProbeVariant::GradDiff(Hyp, Ref),
            ProbeVariant::GradDiff(Hyp, CorrHyp),
        ]
    }

    /// Variants used for copied-source probes, where masks would blank the
    /// whole loss.
    pub fn copy_defaults() -> Vec<ProbeVariant> {
        use BaseVariant::*;
        vec![ProbeVariant::Base(Hyp), ProbeVariant::Base(Ref), ProbeVariant::GradDiff(Hyp, Ref)]
    }

    /// Retrieval direction under which noisy examples are expected on top:
    /// probes built from erroneous output look for positive influence,
    /// probes built from correct output for negative influence.
    pub fn default_direction(self) -> Direction {
        use BaseVariant::*;
        match self {
            ProbeVariant::Base(Ref | CorrHyp | CorrHypMaskExact) => Direction::Negative,
            _ => Direction::Positive,
        }
    }

    pub fn bases(self) -> Vec<BaseVariant> {
        match self {
            ProbeVariant::Base(b) => vec![b],
            ProbeVariant::GradDiff(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for ProbeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeVariant::Base(b) => f.write_str(b.name()),
            ProbeVariant::GradDiff(a, b) => write!(f, "GD({},{})", a.name(), b.name()),
        }
    }
}

impl FromStr for BaseVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaseVariant::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| format!("unknown probe variant `{s}`"))
    }
}

impl FromStr for ProbeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("GD(").and_then(|r| r.strip_suffix(')')) {
            let (a, b) = inner.split_once(',').ok_or_else(|| format!("`{s}`: expected GD(A,B)"))?;
            return Ok(ProbeVariant::GradDiff(a.trim().parse()?, b.trim().parse()?));
        }
        s.parse().map(ProbeVariant::Base)
    }
}

impl Serialize for ProbeVariant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProbeVariant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A probing variant applied to one probe case.
#[derive(Debug, Clone, Copy)]
pub struct ProbeGradientSpec<'a> {
    pub variant: ProbeVariant,
    pub case: &'a ProbeCase,
}

/// Model plus vocabularies, enough to turn token pairs into gradients.
pub struct GradientSource<'a> {
    pub model: &'a Seq2Seq,
    pub src_vocab: &'a Vocabulary,
    pub trg_vocab: &'a Vocabulary,
}

impl GradientSource<'_> {
    pub fn encode(&self, src: &[String], trg: &[String]) -> EncodedPair {
        EncodedPair { src: self.src_vocab.encode(src), trg: self.trg_vocab.encode(trg) }
    }

    pub fn gradient(
        &self,
        snapshot: &CheckpointSnapshot,
        src: &[String],
        trg: &[String],
        mask: Option<&[u8]>,
        origin: GradientOrigin,
    ) -> Result<GradientVector> {
        let pair = self.encode(src, trg);
        self.model.per_example_gradient(&snapshot.params, &pair, mask, origin)
    }

    pub fn base_gradient(
        &self,
        variant: BaseVariant,
        case: &ProbeCase,
        snapshot: &CheckpointSnapshot,
    ) -> Result<GradientVector> {
        let (trg, mask) = variant.target_and_mask(case)?;
        let origin = GradientOrigin {
            example_id: case.source_id,
            epoch: snapshot.epoch,
            mask_id: Some(format!("{}:{}", case.id, variant.name())),
        };
        self.gradient(snapshot, &case.src, &trg, mask.as_deref(), origin)
    }
}

/// Probing gradient of `spec` at `snapshot`.
pub fn build_probe_gradient(
    spec: &ProbeGradientSpec<'_>,
    source: &GradientSource<'_>,
    snapshot: &CheckpointSnapshot,
) -> Result<GradientVector> {
    match spec.variant {
        ProbeVariant::Base(b) => source.base_gradient(b, spec.case, snapshot),
        ProbeVariant::GradDiff(a, b) => {
            let ga = source.base_gradient(a, spec.case, snapshot)?;
            let gb = source.base_gradient(b, spec.case, snapshot)?;
            let mut d = ga.difference(&gb)?;
            d.origin.mask_id = Some(format!("{}:{}", spec.case.id, spec.variant));
            Ok(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in ProbeVariant::defaults() {
            assert_eq!(v.to_string().parse::<ProbeVariant>().unwrap(), v);
        }
        assert_eq!(
            "GD(HYP, CorrHYP)".parse::<ProbeVariant>().unwrap(),
            ProbeVariant::GradDiff(BaseVariant::Hyp, BaseVariant::CorrHyp)
        );
        assert!("GD(HYP)".parse::<ProbeVariant>().is_err());
        assert!("HYPX".parse::<ProbeVariant>().is_err());
    }

    #[test]
    fn directions_follow_the_probe_target() {
        use BaseVariant::*;
        let dirs: Vec<&str> = ProbeVariant::defaults().iter().map(|v| v.default_direction().sign()).collect();
        assert_eq!(dirs, ["+", "-", "-", "+", "+", "-", "+", "+"]);
        assert_eq!(ProbeVariant::GradDiff(Hyp, Ref).bases(), vec![Hyp, Ref]);
    }
}
