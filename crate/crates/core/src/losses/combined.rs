use std::fmt;
use std::str::FromStr;

use super::arcface::{arcface_loss, ArcFaceHead};
use super::smoothing::ce_smoothed;
use super::triplet::{batch_hard_triplet, TripletConfig};
use super::LossOutput;
use crate::error::{Error, Result};
use crate::imageops::MixedTarget;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    Ce,
    CeTriplet,
    CeArcFace,
}

impl LossMode {
    pub fn uses_embedding(self) -> bool {
        !matches!(self, LossMode::Ce)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ce => "ce",
            LossMode::CeTriplet => "ce+triplet",
            LossMode::CeArcFace => "ce+arcface",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" => Ok(LossMode::Ce),
            "ce+triplet" => Ok(LossMode::CeTriplet),
            "ce+arcface" => Ok(LossMode::CeArcFace),
            other => Err(Error::Config(format!("unknown loss mode {other:?} (expected ce, ce+triplet or ce+arcface)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLossConfig {
    pub mode: LossMode,
    /// Weight of the auxiliary metric loss.
    pub aux_weight: f64,
    /// Label-smoothing ε.
    pub smoothing: f64,
    pub triplet: TripletConfig,
    pub arcface_scale: f64,
    pub arcface_margin: f64,
}

impl Default for CombinedLossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Ce,
            aux_weight: 1.0,
            smoothing: 0.1,
            triplet: TripletConfig::default(),
            arcface_scale: 30.0,
            arcface_margin: 0.5,
        }
    }
}

/// What the network produced for one batch.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs<'a> {
    pub logits: &'a Matrix,
    pub embeddings: Option<&'a Matrix>,
}

/// `CE_smoothed + aux_weight · (triplet | arcface | 0)`.
///
/// The metric losses use each sample's dominant class
/// ([`MixedTarget::major_class`]); the ArcFace class weights are passed in
/// `head_weight` and their gradient comes back in `grad_head`.
pub fn combined_loss(
    outputs: ModelOutputs<'_>,
    targets: &[MixedTarget],
    head_weight: Option<&Matrix>,
    cfg: &CombinedLossConfig,
) -> Result<LossOutput> {
    if !(cfg.aux_weight >= 0.0 && cfg.aux_weight.is_finite()) {
        return Err(Error::Config(format!("auxiliary weight must be >= 0, got {}", cfg.aux_weight)));
    }
    let mut out = ce_smoothed(outputs.logits, targets, cfg.smoothing)?;
    if cfg.mode == LossMode::Ce {
        return Ok(out);
    }
    let emb = outputs
        .embeddings
        .ok_or_else(|| Error::Config(format!("loss mode {} needs embeddings", cfg.mode)))?;
    let labels: Vec<usize> = targets.iter().map(MixedTarget::major_class).collect();
    let aux = match cfg.mode {
        LossMode::CeTriplet => batch_hard_triplet(emb, &labels, &cfg.triplet)?,
        LossMode::CeArcFace => {
            let weight = head_weight.ok_or_else(|| Error::Config("ce+arcface needs the arcface class weights".into()))?;
            let head = ArcFaceHead::new(weight.clone(), cfg.arcface_scale, cfg.arcface_margin)?;
            arcface_loss(emb, &head, &labels)?
        }
        LossMode::Ce => unreachable!(),
    };
    out.value += cfg.aux_weight * aux.value;
    out.grad_embeddings = aux.grad_embeddings.map(|mut g| {
        g.as_mut_slice().iter_mut().for_each(|v| *v *= cfg.aux_weight);
        g
    });
    out.grad_head = aux.grad_head.map(|mut g| {
        g.as_mut_slice().iter_mut().for_each(|v| *v *= cfg.aux_weight);
        g
    });
    Ok(out)
}
