//! Feature identities: the user location plus one zero-mask per concept.

use crate::semantics::{concept_index, CONCEPT_NAMES, M_CON};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeSet;
use std::fmt;

/// Ordered with `Location` first, then concepts by catalog index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureId {
    Location,
    Concept(u8),
}

/// Size of the universal feature set.
pub const V_UNI: usize = M_CON + 1;

impl FeatureId {
    pub fn name(self) -> &'static str {
        match self {
            FeatureId::Location => "location",
            FeatureId::Concept(c) => CONCEPT_NAMES[c as usize],
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        let lower = name.trim().to_ascii_lowercase();
        if lower == "location" {
            return Some(FeatureId::Location);
        }
        concept_index(&lower).map(|c| FeatureId::Concept(c as u8))
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for FeatureId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FeatureId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FeatureId::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown feature {s:?}")))
    }
}

/// Canonically ordered, duplicate-free feature set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSet(pub BTreeSet<FeatureId>);

impl FeatureSet {
    pub fn new<I: IntoIterator<Item = FeatureId>>(ids: I) -> Self {
        Self(ids.into_iter().collect())
    }

    pub fn universal() -> Self {
        Self::new(std::iter::once(FeatureId::Location).chain((0..M_CON as u8).map(FeatureId::Concept)))
    }

    pub fn location_only() -> Self {
        Self::new([FeatureId::Location])
    }

    pub fn has_location(&self) -> bool {
        self.0.contains(&FeatureId::Location)
    }

    /// Concept indices in canonical order.
    pub fn concepts(&self) -> Vec<usize> {
        self.0
            .iter()
            .filter_map(|f| match f {
                FeatureId::Concept(c) => Some(*c as usize),
                FeatureId::Location => None,
            })
            .collect()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.0.iter().map(|f| f.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Stable 64-bit digest of the canonical member list.
    pub fn digest(&self) -> u64 {
        let joined = self.names().join(",");
        crate::rng::child_seed(0, &joined)
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.names().join(", "))
    }
}
