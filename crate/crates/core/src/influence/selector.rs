//! Named restrictions of a gradient to network components.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::seqmodel::{Component, Layout};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentSelector {
    One(Component),
    /// srcEmb, trgEmb and output.
    Concat,
    Full,
    /// srcEmb and trgEmb.
    Emb,
    /// Explicit union, written `a+b+...`.
    Set(BTreeSet<Component>),
}

impl ComponentSelector {
    /// Selectors reported by default.
    pub fn defaults() -> Vec<ComponentSelector> {
        vec![
            ComponentSelector::One(Component::SrcEmb),
            ComponentSelector::One(Component::Encoder),
            ComponentSelector::One(Component::TrgEmb),
            ComponentSelector::One(Component::Output),
            ComponentSelector::Concat,
            ComponentSelector::Full,
        ]
    }

    pub fn components(&self) -> BTreeSet<Component> {
        use Component::*;
        match self {
            ComponentSelector::One(c) => [*c].into(),
            ComponentSelector::Concat => [SrcEmb, TrgEmb, Output].into(),
            ComponentSelector::Full => Component::ALL.into(),
            ComponentSelector::Emb => [SrcEmb, TrgEmb].into(),
            ComponentSelector::Set(s) => s.clone(),
        }
    }

    /// Distinct storage spans covered by the selector, as indices into
    /// `layout.spans`, in layout order. A tied output resolves to the target
    /// embedding and is counted once.
    pub fn resolve(&self, layout: &Layout) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .components()
            .into_iter()
            .map(|c| {
                let c = if layout.is_alias(c) { Component::TrgEmb } else { c };
                c.index()
            })
            .collect();
        idx.sort_by_key(|&i| layout.spans[i].offset);
        idx.dedup();
        idx
    }
}

impl fmt::Display for ComponentSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentSelector::One(c) => write!(f, "{c}"),
            ComponentSelector::Concat => f.write_str("concat"),
            ComponentSelector::Full => f.write_str("full"),
            ComponentSelector::Emb => f.write_str("emb"),
            ComponentSelector::Set(s) => {
                let names: Vec<&str> = s.iter().map(|c| c.name()).collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

impl FromStr for ComponentSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(ComponentSelector::Concat),
            "full" => Ok(ComponentSelector::Full),
            "emb" => Ok(ComponentSelector::Emb),
            _ if s.contains('+') => {
                let set = s.split('+').map(|p| p.trim().parse::<Component>()).collect::<Result<BTreeSet<_>, _>>()?;
                Ok(ComponentSelector::Set(set))
            }
            _ => s.parse().map(ComponentSelector::One),
        }
    }
}

impl Serialize for ComponentSelector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentSelector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
