//! Dataset-level prediction, evaluation and ensembling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use recipe_core::inference::{fuse, predict_tta, single_view, top1_accuracy, ProbMatrix, TtaConfig};
use recipe_core::model::{load_checkpoint, TinyBackbone};
use recipe_core::Matrix;

use crate::config::RunConfig;
use crate::dataset::{Dataset, Manifest};

/// Images per forward call in single-view mode.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// One center view at the training resolution.
    Single,
    /// Eight views, each averaged with its mirror image.
    Tta,
}

/// Class probabilities for every sample of `data`.
pub fn predict_dataset(
    model: &TinyBackbone<f32>,
    data: &Dataset,
    mode: EvalMode,
    tta: &TtaConfig,
    scale: usize,
    seed: u64,
) -> anyhow::Result<ProbMatrix> {
    let k = model.config().classes;
    let rows: Vec<f64> = match mode {
        EvalMode::Single => {
            let chunks = data
                .images
                .chunks(EVAL_CHUNK)
                .map(|chunk| {
                    let views: Vec<_> = chunk.par_iter().map(|img| single_view(img, scale, tta)).collect();
                    Ok(model.predict_probs(&views)?.into_vec())
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            chunks.concat()
        }
        EvalMode::Tta => {
            let per_image = data
                .images
                .par_iter()
                .zip(&data.ids)
                .map(|(img, id)| predict_tta(model, img, id, tta, seed))
                .collect::<recipe_core::Result<Vec<_>>>()?;
            per_image.concat()
        }
    };
    let probs = Matrix::from_vec(data.len(), k, rows)?;
    Ok(ProbMatrix::new(data.ids.clone(), probs)?)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub probs_path: PathBuf,
    pub top1: f64,
    pub samples: usize,
}

pub const PROBS_FILE: &str = "probs.txt";

/// Evaluates a checkpoint on a manifest and writes `probs.txt` to the run's
/// output directory.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, mode: EvalMode) -> anyhow::Result<EvalOutcome> {
    cfg.validate()?;
    let ck = load_checkpoint::<f32>(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let model = ck.model;
    let data = Dataset::read(manifest, model.config().classes)?;
    if data.is_empty() {
        bail!("manifest {} has no samples", manifest.display());
    }
    let probs = predict_dataset(&model, &data, mode, &cfg.tta_config(), cfg.image_size, cfg.seed)?;
    let top1 = top1_accuracy(&probs, &data.labels)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let probs_path = cfg.out_dir.join(PROBS_FILE);
    probs.write(&probs_path)?;
    Ok(EvalOutcome { probs_path, top1, samples: data.len() })
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub member_top1: Vec<f64>,
    pub top1: f64,
    pub fused: ProbMatrix,
    pub fused_path: PathBuf,
}

pub const ENSEMBLE_FILE: &str = "ensemble.txt";

fn labels_for(probs: &ProbMatrix, labels: &HashMap<String, usize>) -> anyhow::Result<Vec<usize>> {
    probs
        .ids()
        .iter()
        .map(|id| labels.get(id).copied().with_context(|| format!("sample {id} has no label in the manifest")))
        .collect()
}

/// Averages probability files and scores members and ensemble against the
/// manifest's labels.
pub fn cmd_ensemble(files: &[PathBuf], manifest: &Path, classes: usize, out_dir: &Path) -> anyhow::Result<EnsembleOutcome> {
    if files.is_empty() {
        bail!("ensemble needs at least one probability file");
    }
    let members = files
        .iter()
        .map(|f| ProbMatrix::read(f).with_context(|| format!("reading {}", f.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fused = fuse(&members)?;
    let manifest = Manifest::read(manifest, classes)?;
    let labels: HashMap<String, usize> = manifest.entries.iter().map(|e| (e.id.clone(), e.class)).collect();
    let member_top1 = members
        .iter()
        .map(|m| Ok(top1_accuracy(m, &labels_for(m, &labels)?)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let top1 = top1_accuracy(&fused, &labels_for(&fused, &labels)?)?;
    std::fs::create_dir_all(out_dir)?;
    let fused_path = out_dir.join(ENSEMBLE_FILE);
    fused.write(&fused_path)?;
    Ok(EnsembleOutcome { member_top1, top1, fused, fused_path })
}
