use super::{check_finite, LossOutput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.3 }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `N × N` Euclidean distances between embedding rows.
pub fn pairwise_euclidean(emb: &Matrix) -> Matrix {
    let n = emb.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(emb.row(i), emb.row(j));
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Batch-hard triplet loss: for each anchor, a hinge on
/// `margin + d(a, hardest positive) − d(a, hardest negative)`, averaged over
/// anchors that have at least one positive and one negative in the batch.
///
/// Ties in the max/min go to the lowest row index. Where the hinge is
/// inactive, or a selected distance is zero, the anchor contributes no
/// gradient.
pub fn batch_hard_triplet(emb: &Matrix, labels: &[usize], cfg: &TripletConfig) -> Result<LossOutput> {
    check_finite(emb, "embeddings")?;
    if labels.len() != emb.rows() {
        return Err(Error::Input(format!("{} labels for {} embeddings", labels.len(), emb.rows())));
    }
    if !(cfg.margin >= 0.0 && cfg.margin.is_finite()) {
        return Err(Error::Config(format!("triplet margin must be >= 0, got {}", cfg.margin)));
    }
    let n = emb.rows();
    let dist = pairwise_euclidean(emb);
    let mut grad = Matrix::zeros(n, emb.cols());
    let mut active: Vec<(usize, usize, usize)> = Vec::new();
    let mut total = 0.0;
    let mut valid = 0usize;

    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist.get(a, j);
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let (Some((p, dp)), Some((q, dn))) = (pos, neg) else { continue };
        valid += 1;
        let hinge = cfg.margin + dp - dn;
        if hinge > 0.0 {
            total += hinge;
            active.push((a, p, q));
        }
    }
    if valid == 0 {
        return Err(Error::DegenerateBatch);
    }

    let scale = 1.0 / valid as f64;
    for (a, p, q) in active {
        let dp = dist.get(a, p);
        let dn = dist.get(a, q);
        for k in 0..emb.cols() {
            let (xa, xp, xn) = (emb.get(a, k), emb.get(p, k), emb.get(q, k));
            if dp > 0.0 {
                let g = scale * (xa - xp) / dp;
                grad.row_mut(a)[k] += g;
                grad.row_mut(p)[k] -= g;
            }
            if dn > 0.0 {
                let g = scale * (xa - xn) / dn;
                grad.row_mut(a)[k] -= g;
                grad.row_mut(q)[k] += g;
            }
        }
    }
    Ok(LossOutput { value: total * scale, grad_embeddings: Some(grad), ..LossOutput::default() })
}
