use std::f64::consts::PI;

use super::smoothing::softmax;
use super::{check_finite, LossOutput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Distance from ±1 at which cosines are clamped before differentiating
/// through `sin θ = √(1 − cos²θ)`.
pub const COS_CLAMP: f64 = 1e-7;

/// Class-weight matrix (`K × D`) with the ArcFace scale `s` and additive
/// angular margin `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceHead {
    pub weight: Matrix,
    pub scale: f64,
    pub margin: f64,
}

impl ArcFaceHead {
    pub fn new(weight: Matrix, scale: f64, margin: f64) -> Result<Self> {
        let head = Self { weight, scale, margin };
        head.validate()?;
        Ok(head)
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("arcface scale must be positive, got {}", self.scale)));
        }
        if !(0.0..PI).contains(&self.margin) {
            return Err(Error::Config(format!("arcface margin {} outside [0, pi)", self.margin)));
        }
        Ok(())
    }
}

fn unit_rows(m: &Matrix, what: &str) -> Result<(Matrix, Vec<f64>)> {
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let norm = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Input(format!("{what} row {i} has zero norm")));
        }
        unit.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((unit, norms))
}

struct Forward {
    emb_unit: Matrix,
    emb_norm: Vec<f64>,
    w_unit: Matrix,
    w_norm: Vec<f64>,
    cos: Matrix,
    logits: Matrix,
}

#[allow(clippy::needless_range_loop)]
fn forward(emb: &Matrix, head: &ArcFaceHead, labels: &[usize]) -> Result<Forward> {
    head.validate()?;
    check_finite(emb, "embeddings")?;
    check_finite(&head.weight, "arcface weights")?;
    if emb.cols() != head.weight.cols() {
        return Err(Error::Input(format!(
            "embedding width {} does not match head width {}",
            emb.cols(),
            head.weight.cols()
        )));
    }
    if labels.len() != emb.rows() {
        return Err(Error::Input(format!("{} labels for {} embeddings", labels.len(), emb.rows())));
    }
    let k = head.classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} outside [0, {k})")));
    }
    let (emb_unit, emb_norm) = unit_rows(emb, "embedding")?;
    let (w_unit, w_norm) = unit_rows(&head.weight, "arcface weight")?;
    let (sin_m, cos_m) = head.margin.sin_cos();
    let threshold = (PI - head.margin).cos();

    let n = emb.rows();
    let mut cos = Matrix::zeros(n, k);
    let mut logits = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let c: f64 = emb_unit.row(i).iter().zip(w_unit.row(j)).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            cos.set(i, j, c);
            let adjusted = if j != labels[i] {
                c
            } else if c > threshold {
                // cos(θ + m) while θ + m < π
                c * cos_m - (1.0 - c * c).max(0.0).sqrt() * sin_m
            } else {
                c - head.margin * sin_m
            };
            logits.set(i, j, head.scale * adjusted);
        }
    }
    Ok(Forward { emb_unit, emb_norm, w_unit, w_norm, cos, logits })
}

/// Scaled cosine logits with the additive angular margin on each sample's
/// own class: `s·cos(θ_y + m)` for the label column (or `s·(cos θ_y − m·sin m)`
/// once `θ_y + m ≥ π`) and `s·cos θ_j` elsewhere.
pub fn arcface_logits(emb: &Matrix, head: &ArcFaceHead, labels: &[usize]) -> Result<Matrix> {
    Ok(forward(emb, head, labels)?.logits)
}

/// Pulls a gradient with respect to a unit vector back to the raw vector:
/// `(g − (g·u)u) / ‖v‖`.
fn through_normalization(g: &mut [f64], unit: &[f64], norm: f64) {
    let dot: f64 = g.iter().zip(unit).map(|(a, b)| a * b).sum();
    for (gi, ui) in g.iter_mut().zip(unit) {
        *gi = (*gi - dot * ui) / norm;
    }
}

/// Softmax cross-entropy over [`arcface_logits`] with hard labels, with
/// gradients for both the embeddings and the class weights.
#[allow(clippy::needless_range_loop)]
pub fn arcface_loss(emb: &Matrix, head: &ArcFaceHead, labels: &[usize]) -> Result<LossOutput> {
    let f = forward(emb, head, labels)?;
    let (n, k, d) = (emb.rows(), head.classes(), emb.cols());
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let (sin_m, cos_m) = head.margin.sin_cos();
    let threshold = (PI - head.margin).cos();
    let inv_n = 1.0 / n as f64;

    let mut total = 0.0;
    // dL/dcos
    let mut dcos = Matrix::zeros(n, k);
    for i in 0..n {
        let row = f.logits.row(i);
        let p = softmax(row);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
        for j in 0..k {
            let dz = (p[j] - if j == labels[i] { 1.0 } else { 0.0 }) * inv_n * head.scale;
            let c = f.cos.get(i, j);
            let dphi = if j != labels[i] {
                1.0
            } else if c > threshold {
                let cc = c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
                cos_m + cc * sin_m / (1.0 - cc * cc).sqrt()
            } else {
                1.0
            };
            dcos.set(i, j, dz * dphi);
        }
    }

    let mut g_emb = Matrix::zeros(n, d);
    let mut g_w = Matrix::zeros(k, d);
    for i in 0..n {
        for j in 0..k {
            let g = dcos.get(i, j);
            if g == 0.0 {
                continue;
            }
            for t in 0..d {
                g_emb.row_mut(i)[t] += g * f.w_unit.get(j, t);
                g_w.row_mut(j)[t] += g * f.emb_unit.get(i, t);
            }
        }
    }
    for i in 0..n {
        through_normalization(g_emb.row_mut(i), f.emb_unit.row(i), f.emb_norm[i]);
    }
    for j in 0..k {
        through_normalization(g_w.row_mut(j), f.w_unit.row(j), f.w_norm[j]);
    }
    Ok(LossOutput {
        value: total * inv_n,
        grad_embeddings: Some(g_emb),
        grad_head: Some(g_w),
        ..LossOutput::default()
    })
}
