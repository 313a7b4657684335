use super::{check_finite, LossOutput};
use crate::error::{Error, Result};
use crate::imageops::MixedTarget;
use crate::matrix::Matrix;

/// Label-smoothed target distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTarget(pub Vec<f64>);

impl SmoothedTarget {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

fn check_smoothing(classes: usize, eps: f64) -> Result<()> {
    if classes < 2 {
        return Err(Error::Config(format!("label smoothing needs at least 2 classes, got {classes}")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("smoothing epsilon {eps} outside [0, 1)")));
    }
    Ok(())
}

/// `1 − ε` on class `y`, `ε / (K − 1)` on every other class.
pub fn smooth_targets(y: usize, classes: usize, eps: f64) -> Result<SmoothedTarget> {
    check_smoothing(classes, eps)?;
    if y >= classes {
        return Err(Error::Config(format!("label {y} outside [0, {classes})")));
    }
    let mut q = vec![eps / (classes - 1) as f64; classes];
    q[y] = 1.0 - eps;
    Ok(SmoothedTarget(q))
}

/// Stacks `Σ_c w_c · smooth_targets(c)` for every sample into an `N × K` matrix.
pub fn target_matrix(targets: &[MixedTarget], classes: usize, eps: f64) -> Result<Matrix> {
    check_smoothing(classes, eps)?;
    let mut q = Matrix::zeros(targets.len(), classes);
    for (i, t) in targets.iter().enumerate() {
        for &(c, w) in t.entries() {
            let s = smooth_targets(c, classes, eps)?;
            for (dst, p) in q.row_mut(i).iter_mut().zip(s.probs()) {
                *dst += w * p;
            }
        }
    }
    Ok(q)
}

/// Numerically stable `log softmax` of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|&z| z - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Batch-mean cross-entropy `−Σ q_i log softmax(z)_i` against an explicit
/// target distribution per row. Gradient: `(softmax(z) − q) / N`.
pub fn ce_with_distribution(logits: &Matrix, q: &Matrix) -> Result<LossOutput> {
    check_finite(logits, "logits")?;
    if logits.shape() != q.shape() {
        return Err(Error::Input(format!("logits {:?} and targets {:?} differ in shape", logits.shape(), q.shape())));
    }
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut total = 0.0;
    for i in 0..n {
        let logp = log_softmax(logits.row(i));
        let qi = q.row(i);
        total -= qi.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
        for ((g, lp), t) in grad.row_mut(i).iter_mut().zip(&logp).zip(qi) {
            *g = (lp.exp() - t) * inv_n;
        }
    }
    Ok(LossOutput { value: total * inv_n, grad_logits: Some(grad), ..LossOutput::default() })
}

/// Label-smoothed cross-entropy against (possibly CutMix-mixed) targets.
pub fn ce_smoothed(logits: &Matrix, targets: &[MixedTarget], eps: f64) -> Result<LossOutput> {
    if targets.len() != logits.rows() {
        return Err(Error::Input(format!("{} targets for {} logit rows", targets.len(), logits.rows())));
    }
    let q = target_matrix(targets, logits.cols(), eps)?;
    ce_with_distribution(logits, &q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_targets(0, 2, 0.0).unwrap().0, vec![1.0, 0.0]);
        let q = smooth_targets(1, 4, 0.3).unwrap().0;
        let want = [0.1, 0.7, 0.1, 0.1];
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let big = smooth_targets(2, 1000, 0.1).unwrap().0;
        assert_eq!(big[2], 0.9);
        assert!(big.iter().enumerate().all(|(i, &v)| i == 2 || v == 0.1 / 999.0));
    }

    #[test]
    fn smoothing_rejects_bad_config() {
        assert!(smooth_targets(0, 1, 0.1).is_err());
        assert!(smooth_targets(0, 3, 1.0).is_err());
        assert!(smooth_targets(0, 3, -0.1).is_err());
        assert!(smooth_targets(3, 3, 0.1).is_err());
    }

    #[test]
    fn smoothing_sums_to_one_over_sweep() {
        for k in 2..=1000 {
            for eps in [0.0, 0.05, 0.1, 0.3] {
                let q = smooth_targets(k / 2, k, eps).unwrap();
                let s: f64 = q.probs().iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "K={k} eps={eps} sum={s}");
                let mut distinct = q.probs().to_vec();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                assert!(distinct.len() <= 2);
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_k() {
        for k in [2usize, 5, 10, 100] {
            let logits = Matrix::from_vec(1, k, vec![3.7; k]).unwrap();
            for eps in [0.0, 0.1, 0.3] {
                let out = ce_smoothed(&logits, &[MixedTarget::hard(1)], eps).unwrap();
                assert!((out.value - (k as f64).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixed_target_is_linear() {
        let logits = Matrix::from_vec(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let mixed = MixedTarget::new([(0, 0.75), (1, 0.25)]).unwrap();
        let m = ce_smoothed(&logits, &[mixed], 0.0).unwrap().value;
        let a = ce_smoothed(&logits, &[MixedTarget::hard(0)], 0.0).unwrap().value;
        let b = ce_smoothed(&logits, &[MixedTarget::hard(1)], 0.0).unwrap().value;
        assert!((m - (0.75 * a + 0.25 * b)).abs() < 1e-12);
    }

    #[test]
    fn shift_invariant() {
        let logits = Matrix::from_vec(2, 3, vec![0.3, -1.2, 2.0, 5.0, 1.0, -3.0]).unwrap();
        let mut shifted = logits.clone();
        shifted.as_mut_slice().iter_mut().for_each(|v| *v += 123.0);
        let t = [MixedTarget::hard(2), MixedTarget::hard(0)];
        let a = ce_smoothed(&logits, &t, 0.1).unwrap().value;
        let b = ce_smoothed(&shifted, &t, 0.1).unwrap().value;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_logits() {
        let logits = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(ce_smoothed(&logits, &[MixedTarget::hard(0)], 0.1), Err(Error::Input(_))));
    }
}
