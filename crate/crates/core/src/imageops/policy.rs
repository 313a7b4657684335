//! AutoAugment policy tables: loading, validation and application.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ops::{apply_op, OpKind};
use crate::error::{Error, Result};
use crate::image::ImageU8;
use crate::rng::RngStream;

/// Number of sub-policies in a table.
pub const POLICY_LEN: usize = 24;

const IMAGENET_POLICY: &str = include_str!("../../policies/imagenet.json");

/// One probabilistic operation slot of a sub-policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub op: OpKind,
    pub prob: f64,
    pub magnitude: f64,
}

impl OpSpec {
    pub fn new(op: OpKind, prob: f64, magnitude: f64) -> Self {
        Self { op, prob, magnitude }
    }

    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(format!("{:?} probability {} outside [0, 1]", self.op, self.prob));
        }
        self.op.validate_magnitude(self.magnitude)
    }
}

pub type SubPolicy = [OpSpec; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    entries: Vec<SubPolicy>,
}

impl PolicyTable {
    pub fn new(entries: Vec<SubPolicy>) -> Result<Self> {
        if entries.len() != POLICY_LEN {
            return Err(Error::format("policy", format!("expected {POLICY_LEN} sub-policies, got {}", entries.len())));
        }
        for (i, sub) in entries.iter().enumerate() {
            for (slot, spec) in sub.iter().enumerate() {
                spec.validate().map_err(|e| Error::format("policy", format!("sub-policy {i} slot {slot}: {e}")))?;
            }
        }
        Ok(Self { entries })
    }

    /// Every entry is `sub`.
    pub fn repeated(sub: SubPolicy) -> Result<Self> {
        Self::new(vec![sub; POLICY_LEN])
    }

    /// A table that never changes an image.
    pub fn identity() -> Self {
        let noop = OpSpec::new(OpKind::Invert, 0.0, 0.0);
        Self::repeated([noop, noop]).expect("valid by construction")
    }

    /// The bundled ImageNet table.
    pub fn imagenet() -> Self {
        Self::from_json(IMAGENET_POLICY).expect("bundled policy is valid")
    }

    /// Parses a JSON array of 24 two-element arrays of `{op, prob, magnitude}` records.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<Vec<OpSpec>> = serde_json::from_str(text).map_err(|e| Error::format("policy", e.to_string()))?;
        let mut entries = Vec::with_capacity(raw.len());
        for (i, sub) in raw.into_iter().enumerate() {
            let pair: SubPolicy = sub.try_into().map_err(|v: Vec<OpSpec>| {
                Error::format("policy", format!("sub-policy {i} has {} operations, expected 2", v.len()))
            })?;
            entries.push(pair);
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("plain data serializes")
    }

    pub fn entries(&self) -> &[SubPolicy] {
        &self.entries
    }
}

/// Picks one sub-policy uniformly, then applies each of its two operations
/// in order, each with its own independent Bernoulli draw.
pub fn autoaugment(img: &ImageU8, table: &PolicyTable, rng: &mut RngStream) -> ImageU8 {
    let sub = &table.entries[rng.below(table.entries.len())];
    let mut out = img.clone();
    for spec in sub {
        if rng.bernoulli(spec.prob) {
            out = apply_op(spec.op, spec.magnitude, &out, rng);
        }
    }
    out
}
