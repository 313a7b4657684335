//! Central finite-difference audits of every hand-derived gradient.
//!
//! Each audit draws random non-degenerate points (away from hinge switches,
//! ties in hardest-pair mining, the ArcFace fallback threshold and ReLU kinks),
//! compares the analytic gradient with central differences in `f64`, and
//! reports the worst norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.

use std::f64::consts::PI;
use std::fmt;

use crate::error::Result;
use crate::image::ImageF32;
use crate::imageops::MixedTarget;
use crate::losses::{
    arcface_loss, batch_hard_triplet, ce_smoothed, combined_loss, pairwise_euclidean, ArcFaceHead, CombinedLossConfig,
    LossMode, ModelOutputs, TripletConfig,
};
use crate::matrix::Matrix;
use crate::model::{ModelConfig, TinyBackbone};
use crate::rng::RngStream;

pub const FD_STEP: f64 = 1e-5;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Minimum separation from any non-differentiable configuration.
const GAP: f64 = 1e-3;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy)]
pub struct AuditOptions {
    pub seed: u64,
    pub points: usize,
    /// Parameters sampled per point in the end-to-end audits.
    pub params_per_point: usize,
    /// Relative corruption applied to the analytic gradient (negative control).
    pub corrupt: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { seed: 0, points: 50, params_per_point: 20, corrupt: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub name: String,
    pub tolerance: f64,
    pub points: usize,
    pub comparisons: usize,
    /// Parameter coordinates rejected because a step would cross a ReLU kink.
    pub skipped: usize,
    pub worst_rel_err: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err <= self.tolerance
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst rel err {:.3e} (tol {:.0e}, {} points, {} comparisons",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst_rel_err,
            self.tolerance,
            self.points,
            self.comparisons
        )?;
        if self.skipped > 0 {
            write!(f, ", {} kink-adjacent coordinates skipped", self.skipped)?;
        }
        write!(f, ")")
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

struct Tally {
    report: AuditReport,
    corrupt: f64,
}

impl Tally {
    fn new(name: &str, tolerance: f64, corrupt: f64) -> Self {
        let report = AuditReport { name: name.into(), tolerance, points: 0, comparisons: 0, skipped: 0, worst_rel_err: 0.0 };
        Self { report, corrupt }
    }

    fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        let analytic: Vec<f64> = analytic.iter().map(|a| a * (1.0 + self.corrupt)).collect();
        let err = relative_error(&analytic, numeric);
        let r = &mut self.report;
        r.points += 1;
        r.comparisons += numeric.len();
        // NaN must not hide behind max()
        r.worst_rel_err = if err.is_nan() { f64::INFINITY } else { r.worst_rel_err.max(err) };
    }
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect()).expect("sizes agree")
}

fn random_targets(n: usize, k: usize, rng: &mut RngStream) -> Vec<MixedTarget> {
    (0..n)
        .map(|_| {
            let a = rng.below(k);
            if rng.bernoulli(0.5) {
                let b = rng.below(k);
                let w = rng.uniform();
                MixedTarget::new([(a, w), (b, 1.0 - w)]).expect("weights sum to one")
            } else {
                MixedTarget::hard(a)
            }
        })
        .collect()
}

/// True when no anchor is near a hinge switch, a tie between hardest
/// candidates or a zero distance, and at least one hinge is active.
pub fn triplet_is_smooth(emb: &Matrix, labels: &[usize], margin: f64) -> bool {
    let dist = pairwise_euclidean(emb);
    let n = emb.rows();
    let mut any_active = false;
    for a in 0..n {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for j in (0..n).filter(|&j| j != a) {
            let d = dist.get(a, j);
            if d < GAP {
                return false;
            }
            if labels[j] == labels[a] {
                pos.push(d)
            } else {
                neg.push(d)
            }
        }
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        pos.sort_by(|x, y| y.total_cmp(x));
        neg.sort_by(f64::total_cmp);
        if pos.len() > 1 && pos[0] - pos[1] < GAP || neg.len() > 1 && neg[1] - neg[0] < GAP {
            return false;
        }
        let hinge = margin + pos[0] - neg[0];
        if hinge.abs() < GAP {
            return false;
        }
        any_active |= hinge > 0.0;
    }
    any_active
}

/// True when every label cosine is away from ±1 and from the threshold where
/// the margin logit switches to its linear fallback.
pub fn arcface_is_smooth(emb: &Matrix, weight: &Matrix, labels: &[usize], margin: f64) -> bool {
    let threshold = (PI - margin).cos();
    labels.iter().enumerate().all(|(i, &y)| {
        let e = emb.row(i);
        let w = weight.row(y);
        let dot: f64 = e.iter().zip(w).map(|(a, b)| a * b).sum();
        let norms = e.iter().map(|v| v * v).sum::<f64>().sqrt() * w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = dot / norms;
        c.abs() < 1.0 - GAP && (c - threshold).abs() > GAP
    })
}

pub fn audit_ce(opts: &AuditOptions) -> Result<AuditReport> {
    let mut rng = RngStream::new(opts.seed, 1);
    let mut tally = Tally::new("smoothed cross-entropy", LOSS_TOLERANCE, opts.corrupt);
    for _ in 0..opts.points {
        let (n, k) = (1 + rng.below(6), 2 + rng.below(7));
        let eps = rng.uniform_range(0.0, 0.3);
        let logits = random_matrix(n, k, -3.0, 3.0, &mut rng);
        let targets = random_targets(n, k, &mut rng);
        let out = ce_smoothed(&logits, &targets, eps)?;
        let numeric = numeric_gradient(logits.as_slice(), |x| {
            let m = Matrix::from_vec(n, k, x.to_vec()).expect("sizes agree");
            ce_smoothed(&m, &targets, eps).expect("valid point").value
        });
        tally.record(out.grad_logits.expect("logit gradient").as_slice(), &numeric);
    }
    Ok(tally.report)
}

pub fn audit_triplet(opts: &AuditOptions) -> Result<AuditReport> {
    let mut rng = RngStream::new(opts.seed, 2);
    let mut tally = Tally::new("batch-hard triplet", LOSS_TOLERANCE, opts.corrupt);
    let mut drawn = 0;
    while tally.report.points < opts.points {
        drawn += 1;
        assert!(drawn < opts.points * MAX_RESAMPLES, "could not draw non-degenerate triplet points");
        let (n, d) = (4 + rng.below(9), 2 + rng.below(5));
        let classes = 2 + rng.below(3);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let cfg = TripletConfig { margin: rng.uniform_range(0.1, 1.0) };
        let emb = random_matrix(n, d, -1.0, 1.0, &mut rng);
        if !triplet_is_smooth(&emb, &labels, cfg.margin) {
            continue;
        }
        let out = batch_hard_triplet(&emb, &labels, &cfg)?;
        let numeric = numeric_gradient(emb.as_slice(), |x| {
            let m = Matrix::from_vec(n, d, x.to_vec()).expect("sizes agree");
            batch_hard_triplet(&m, &labels, &cfg).expect("valid point").value
        });
        tally.record(out.grad_embeddings.expect("embedding gradient").as_slice(), &numeric);
    }
    Ok(tally.report)
}

pub fn audit_arcface(opts: &AuditOptions) -> Result<AuditReport> {
    let mut rng = RngStream::new(opts.seed, 3);
    let mut tally = Tally::new("arcface", LOSS_TOLERANCE, opts.corrupt);
    let mut drawn = 0;
    while tally.report.points < opts.points {
        drawn += 1;
        assert!(drawn < opts.points * MAX_RESAMPLES, "could not draw non-degenerate arcface points");
        let (n, d, k) = (1 + rng.below(6), 2 + rng.below(5), 2 + rng.below(5));
        let scale = rng.uniform_range(1.0, 30.0);
        let margin = rng.uniform_range(0.0, 0.8);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let emb = random_matrix(n, d, -1.0, 1.0, &mut rng);
        let weight = random_matrix(k, d, -1.0, 1.0, &mut rng);
        if !arcface_is_smooth(&emb, &weight, &labels, margin) {
            continue;
        }
        let head = ArcFaceHead::new(weight.clone(), scale, margin)?;
        let out = arcface_loss(&emb, &head, &labels)?;
        // differentiate with respect to embeddings and class weights jointly
        let mut x = emb.as_slice().to_vec();
        x.extend_from_slice(weight.as_slice());
        let numeric = numeric_gradient(&x, |x| {
            let (e, w) = x.split_at(n * d);
            let e = Matrix::from_vec(n, d, e.to_vec()).expect("sizes agree");
            let w = Matrix::from_vec(k, d, w.to_vec()).expect("sizes agree");
            arcface_loss(&e, &ArcFaceHead { weight: w, scale, margin }, &labels).expect("valid point").value
        });
        let mut analytic = out.grad_embeddings.expect("embedding gradient").into_vec();
        analytic.extend(out.grad_head.expect("head gradient").into_vec());
        tally.record(&analytic, &numeric);
    }
    Ok(tally.report)
}

/// Configuration of the small network used by the end-to-end audits.
pub fn audit_model_config() -> ModelConfig {
    ModelConfig { channels: [4, 6, 8], embed_dim: 8, classes: 5, input_size: 12 }
}

fn model_loss(model: &TinyBackbone<f64>, batch: &[ImageF32], targets: &[MixedTarget], cfg: &CombinedLossConfig) -> f64 {
    let out = model.forward(batch).expect("valid batch");
    let head = model.arcface_matrix();
    let outputs = ModelOutputs { logits: &out.logits, embeddings: Some(&out.embeddings) };
    combined_loss(outputs, targets, head.as_ref(), cfg).expect("valid point").value
}

/// End-to-end audit of model + combined loss in `mode`: 4-sample batches,
/// `params_per_point` random parameter coordinates per point.
pub fn audit_model(mode: LossMode, opts: &AuditOptions) -> Result<AuditReport> {
    let mcfg = audit_model_config();
    let cfg = CombinedLossConfig { mode, ..CombinedLossConfig::default() };
    let mut rng = RngStream::new(opts.seed, 4 + mode as u64);
    let mut tally = Tally::new(&format!("end-to-end {mode}"), MODEL_TOLERANCE, opts.corrupt);
    let mut drawn = 0;
    while tally.report.points < opts.points {
        drawn += 1;
        assert!(drawn < opts.points * MAX_RESAMPLES, "could not draw non-degenerate model points");
        let mut model = TinyBackbone::<f64>::init(mcfg, rng.below(1 << 30) as u64)?;
        if mode == LossMode::CeArcFace {
            model.attach_arcface_head(rng.below(1 << 30) as u64);
        }
        // non-zero biases so every parameter group has a generic gradient
        for t in model.params_mut() {
            if t.shape.len() == 1 {
                t.data.iter_mut().for_each(|v| *v = rng.uniform_range(-0.1, 0.1));
            }
        }
        let s = mcfg.input_size;
        let batch: Vec<ImageF32> = (0..4)
            .map(|_| ImageF32::from_pixels(s, s, (0..s * s * 3).map(|_| rng.uniform_range(-2.0, 2.0) as f32).collect()))
            .collect::<Result<_>>()?;
        let (a, b) = (rng.below(mcfg.classes), 1 + rng.below(mcfg.classes - 1));
        let b = (a + b) % mcfg.classes;
        let mut targets = vec![MixedTarget::hard(a), MixedTarget::hard(a), MixedTarget::hard(b), MixedTarget::hard(b)];
        targets[3] = MixedTarget::new([(b, 0.7), ((b + 1) % mcfg.classes, 0.3)])?;
        let labels: Vec<usize> = targets.iter().map(MixedTarget::major_class).collect();

        let out = model.forward(&batch)?;
        let smooth = match mode {
            LossMode::Ce => true,
            LossMode::CeTriplet => triplet_is_smooth(&out.embeddings, &labels, cfg.triplet.margin),
            LossMode::CeArcFace => arcface_is_smooth(
                &out.embeddings,
                &model.arcface_matrix().expect("attached"),
                &labels,
                cfg.arcface_margin,
            ),
        };
        if !smooth {
            continue;
        }
        let (_, grads) = model.loss_and_grads(&batch, &targets, &cfg)?;
        let base_pattern = model.activation_pattern(&batch);

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut attempts = 0;
        while analytic.len() < opts.params_per_point && attempts < opts.params_per_point * 20 {
            attempts += 1;
            let t = rng.below(model.params().len());
            let i = rng.below(model.params()[t].len());
            let x0 = model.params()[t].data[i];
            let eval = |x: f64, model: &mut TinyBackbone<f64>| {
                model.params_mut()[t].data[i] = x;
                let v = model_loss(model, &batch, &targets, &cfg);
                let same = model.activation_pattern(&batch) == base_pattern;
                model.params_mut()[t].data[i] = x0;
                (v, same)
            };
            let (up, same_up) = eval(x0 + FD_STEP, &mut model);
            let (down, same_down) = eval(x0 - FD_STEP, &mut model);
            if !(same_up && same_down) {
                tally.report.skipped += 1;
                continue;
            }
            analytic.push(grads[t].data[i]);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        tally.record(&analytic, &numeric);
    }
    Ok(tally.report)
}

/// Every registered audit, losses first.
pub fn run_all(opts: &AuditOptions) -> Result<Vec<AuditReport>> {
    Ok(vec![
        audit_ce(opts)?,
        audit_triplet(opts)?,
        audit_arcface(opts)?,
        audit_model(LossMode::Ce, opts)?,
        audit_model(LossMode::CeTriplet, opts)?,
        audit_model(LossMode::CeArcFace, opts)?,
    ])
}
