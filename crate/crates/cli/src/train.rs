//! The training loop: augment → forward → combined loss → backward → SGD.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use rayon::prelude::*;
use recipe_core::imageops::{augment_train, AugmentConfig, MixedTarget};
use recipe_core::inference::top1_accuracy;
use recipe_core::losses::LossMode;
use recipe_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta, TinyBackbone};
use recipe_core::optim::SgdState;
use recipe_core::{ImageF32, RngStream};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::eval::{predict_dataset, EvalMode};
use crate::UsageError;

pub const LOG_HEADER: &str = "epoch,step,lr,loss,top1";
pub const LOG_FILE: &str = "train-log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub const TWO_STAGE_PROTOCOL: &str = "metric-loss modes fine-tune a cross-entropy model: train with loss = ce first, \
then run ce+triplet or ce+arcface starting from that checkpoint (init_checkpoint = PATH or --init PATH); \
pass --from-scratch to train a metric-loss model from random weights anyway";

/// Stream-id majors; per-sample augmentation uses `epoch + 1`.
const SHUFFLE_MINOR: u64 = 0xffff_ffff;
const ARCFACE_INIT_STREAM: u64 = 0xa5c;

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub from_scratch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub top1: f64,
}

impl EpochRecord {
    pub fn csv(&self) -> String {
        format!("{},{},{:.9e},{:.9e},{:.6}", self.epoch, self.step, self.lr, self.loss, self.top1)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub records: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Batches of sample indices for one epoch. Shuffled full batches normally;
/// `P` classes × `Q` samples each when the triplet loss needs in-batch positives.
fn epoch_batches(cfg: &RunConfig, data: &Dataset, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = RngStream::new(cfg.seed, RngStream::stream_id(epoch as u64 + 1, SHUFFLE_MINOR));
    rng.set_label("sampler");
    let n = data.len();
    if cfg.loss == LossMode::CeTriplet {
        let (p, q) = (cfg.pk_classes, cfg.pk_samples);
        let groups: Vec<Vec<usize>> = data.by_class(cfg.classes).into_iter().filter(|g| !g.is_empty()).collect();
        let steps = (n / (p * q)).max(1);
        (0..steps)
            .map(|_| {
                let mut classes: Vec<usize> = (0..groups.len()).collect();
                partial_shuffle(&mut classes, p.min(groups.len()), &mut rng);
                classes[..p.min(groups.len())]
                    .iter()
                    .flat_map(|&c| {
                        let mut members = groups[c].clone();
                        if members.len() >= q {
                            partial_shuffle(&mut members, q, &mut rng);
                            members.truncate(q);
                            members
                        } else {
                            (0..q).map(|_| members[rng.below(members.len())]).collect()
                        }
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        partial_shuffle(&mut order, n, &mut rng);
        let b = cfg.batch_size.min(n);
        order.chunks_exact(b).map(<[usize]>::to_vec).collect()
    }
}

/// Fisher–Yates over the first `k` positions.
fn partial_shuffle(v: &mut [usize], k: usize, rng: &mut RngStream) {
    for i in 0..k.min(v.len()) {
        let j = i + rng.below(v.len() - i);
        v.swap(i, j);
    }
}

/// Augments one batch; every sample draws from its own stream keyed by
/// `(epoch, position in epoch)`, and picks its CutMix partner uniformly among
/// the other batch members.
fn augment_batch(
    cfg: &RunConfig,
    aug: &AugmentConfig,
    data: &Dataset,
    batch: &[usize],
    epoch: usize,
    first_position: usize,
) -> anyhow::Result<(Vec<ImageF32>, Vec<MixedTarget>)> {
    let b = batch.len();
    let out = batch
        .par_iter()
        .enumerate()
        .map(|(j, &idx)| {
            let stream = RngStream::stream_id(epoch as u64 + 1, (first_position + j) as u64);
            let mut rng = RngStream::new(cfg.seed, stream);
            rng.set_label("partner");
            let partner = (b > 1).then(|| {
                let mut p = rng.below(b - 1);
                if p >= j {
                    p += 1;
                }
                (&data.images[batch[p]], data.labels[batch[p]])
            });
            augment_train(&data.images[idx], data.labels[idx], partner, aug, &mut rng)
        })
        .collect::<recipe_core::Result<Vec<_>>>()?;
    Ok(out.into_iter().unzip())
}

fn initial_model(cfg: &RunConfig, opts: &TrainOptions, warnings: &mut Vec<String>) -> anyhow::Result<TinyBackbone<f32>> {
    let mut model = match &cfg.init_checkpoint {
        Some(path) => {
            let ck = load_checkpoint::<f32>(path).with_context(|| format!("loading init checkpoint {}", path.display()))?;
            let (got, want) = (ck.model.config(), cfg.model_config());
            if (got.channels, got.embed_dim, got.classes) != (want.channels, want.embed_dim, want.classes) {
                return Err(UsageError(format!("init checkpoint architecture {got:?} does not match the config {want:?}")).into());
            }
            ck.model
        }
        None => {
            if cfg.loss.uses_embedding() {
                if !opts.from_scratch {
                    return Err(UsageError(format!("{} without an init checkpoint: {TWO_STAGE_PROTOCOL}", cfg.loss)).into());
                }
                warnings.push(format!(
                    "warning: training {} from scratch; metric losses are hard to converge without a cross-entropy stage",
                    cfg.loss
                ));
            }
            TinyBackbone::init(cfg.model_config(), cfg.seed)?
        }
    };
    if cfg.loss == LossMode::CeArcFace {
        model.attach_arcface_head(cfg.seed ^ ARCFACE_INIT_STREAM);
    }
    Ok(model)
}

/// Runs a full training stage and writes the resolved config, the per-epoch
/// log and the final checkpoint into `cfg.out_dir`.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> anyhow::Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = cfg.train_manifest.as_ref().ok_or_else(|| UsageError("train_manifest is not set".into()))?;
    let mut data = Dataset::read(manifest, cfg.classes)?;
    if cfg.merge_splits {
        let val = cfg.val_manifest.as_ref().ok_or_else(|| UsageError("merge_splits needs val_manifest".into()))?;
        data = data.merged(Dataset::read(val, cfg.classes)?)?;
    }
    if data.is_empty() {
        bail!("training manifest {} has no samples", manifest.display());
    }
    let mut warnings = Vec::new();
    let mut model = initial_model(cfg, opts, &mut warnings)?;
    let aug = cfg.augment_config()?;
    let loss_cfg = cfg.loss_config();
    let tta = cfg.tta_config();

    let steps_per_epoch = epoch_batches(cfg, &data, 0).len();
    let schedule = if cfg.epochs > 0 { Some(cfg.schedule(steps_per_epoch)?) } else { None };
    let mut opt = SgdState::new(model.params(), cfg.momentum, cfg.weight_decay);

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    cfg.write_resolved(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let mut log = format!("{LOG_HEADER}\n");
    fs::write(&log_path, &log)?;

    let mut records = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(cfg, &data, epoch);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        let mut position = 0;
        for batch in &batches {
            let (images, targets) = augment_batch(cfg, &aug, &data, batch, epoch, position)?;
            position += batch.len();
            let ids = || batch.iter().map(|&i| data.ids[i].as_str()).collect::<Vec<_>>().join(",");
            let (loss, grads) = model.loss_and_grads(&images, &targets, &loss_cfg)?;
            if !loss.is_finite() {
                bail!(recipe_core::Error::Training(format!(
                    "non-finite loss {} at epoch {epoch}, step {step}; batch samples: {}",
                    loss.value,
                    ids()
                )));
            }
            lr = schedule.as_ref().expect("epochs > 0").lr_at(step)?;
            opt.step(model.params_mut(), &grads, lr)
                .with_context(|| format!("update at epoch {epoch}, step {step}; batch samples: {}", ids()))?;
            loss_sum += loss.value;
            step += 1;
        }
        let probs = predict_dataset(&model, &data, EvalMode::Single, &tta, cfg.image_size, cfg.seed)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            step,
            lr,
            loss: loss_sum / batches.len() as f64,
            top1: top1_accuracy(&probs, &data.labels)?,
        };
        writeln!(log, "{}", record.csv()).expect("writing to a string");
        fs::write(&log_path, &log)?;
        records.push(record);
    }

    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let meta = CheckpointMeta { epoch: cfg.epochs as u64, config_digest: cfg.digest(), metadata: cfg.metadata() };
    save_checkpoint(&checkpoint, &model, Some(&opt.velocity), &meta)?;
    Ok(TrainOutcome { checkpoint, log: log_path, records, warnings })
}
