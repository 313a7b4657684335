use crate::error::{Error, Result};
use crate::image::{ImageF32, CHANNELS};
use crate::rng::RngStream;

/// Per-sample label distribution: one or two `(class, weight)` entries with
/// distinct classes, positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTarget {
    entries: Vec<(usize, f64)>,
}

impl MixedTarget {
    pub fn hard(class: usize) -> Self {
        Self { entries: vec![(class, 1.0)] }
    }

    /// Builds a target, merging repeated classes and dropping zero weights.
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (class, w) in entries {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Input(format!("target weight {w} for class {class} is not a probability")));
            }
            match merged.iter_mut().find(|(c, _)| *c == class) {
                Some(e) => e.1 += w,
                None => merged.push((class, w)),
            }
        }
        merged.retain(|&(_, w)| w > 0.0);
        let sum: f64 = merged.iter().map(|e| e.1).sum();
        if merged.is_empty() || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("target weights sum to {sum}, expected 1")));
        }
        Ok(Self { entries: merged })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    /// The class carrying the largest weight (first one on ties).
    pub fn major_class(&self) -> usize {
        let mut best = self.entries[0];
        for &e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        best.0
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`; may be empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PatchBox {
    pub fn area(&self) -> usize {
        (self.x1.saturating_sub(self.x0)) * (self.y1.saturating_sub(self.y0))
    }
}

/// Draws a patch for mixing ratio `lambda`: sides `⌊W·√(1−λ)⌋ × ⌊H·√(1−λ)⌋`,
/// center uniform over the image, clipped at the borders.
pub fn sample_patch(width: usize, height: usize, lambda: f64, rng: &mut RngStream) -> PatchBox {
    let cut = (1.0 - lambda).max(0.0).sqrt();
    let cut_w = (width as f64 * cut).floor() as i64;
    let cut_h = (height as f64 * cut).floor() as i64;
    let cx = rng.below(width) as i64;
    let cy = rng.below(height) as i64;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let (x0, y0) = (cx - cut_w / 2, cy - cut_h / 2);
    PatchBox { x0: clip(x0, width), y0: clip(y0, height), x1: clip(x0 + cut_w, width), y1: clip(y0 + cut_h, height) }
}

/// Pastes `donor`'s pixels inside `patch` into `base`; the donor's label
/// weight is the pasted pixel count over `W·H`.
pub fn paste_patch(
    base: &ImageF32,
    base_class: usize,
    donor: &ImageF32,
    donor_class: usize,
    patch: PatchBox,
) -> Result<(ImageF32, MixedTarget)> {
    let (w, h) = (base.width(), base.height());
    if (donor.width(), donor.height()) != (w, h) {
        return Err(Error::Input(format!(
            "cutmix needs equal sizes, got {}x{} and {}x{}",
            w,
            h,
            donor.width(),
            donor.height()
        )));
    }
    if patch.x1 > w || patch.y1 > h {
        return Err(Error::Input(format!("patch {patch:?} exceeds {w}x{h}")));
    }
    let mut out = base.clone();
    for y in patch.y0..patch.y1 {
        let a = (y * w + patch.x0) * CHANNELS;
        let b = (y * w + patch.x1.max(patch.x0)) * CHANNELS;
        out.pixels_mut()[a..b].copy_from_slice(&donor.pixels()[a..b]);
    }
    let total = w * h;
    let pasted = patch.area();
    let target = MixedTarget::new([
        (base_class, (total - pasted) as f64 / total as f64),
        (donor_class, pasted as f64 / total as f64),
    ])?;
    Ok((out, target))
}

/// CutMix with `λ ~ Beta(alpha, alpha)`.
pub fn cutmix_pair(
    base: &ImageF32,
    base_class: usize,
    donor: &ImageF32,
    donor_class: usize,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<(ImageF32, MixedTarget)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("cutmix alpha must be positive, got {alpha}")));
    }
    let lambda = rng.beta_symmetric(alpha);
    let patch = sample_patch(base.width(), base.height(), lambda, rng);
    paste_patch(base, base_class, donor, donor_class, patch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_validation() {
        assert!(MixedTarget::new([(0, 0.5), (1, 0.4)]).is_err());
        assert!(MixedTarget::new([(0, -0.5), (1, 1.5)]).is_err());
        let t = MixedTarget::new([(3, 1.0), (1, 0.0)]).unwrap();
        assert_eq!(t.entries(), &[(3, 1.0)]);
        let merged = MixedTarget::new([(2, 0.25), (2, 0.75)]).unwrap();
        assert_eq!(merged.entries(), &[(2, 1.0)]);
        assert_eq!(MixedTarget::new([(0, 0.25), (4, 0.75)]).unwrap().major_class(), 4);
    }

    #[test]
    fn lambda_one_leaves_base_untouched() {
        let base = ImageF32::filled(16, 16, 0.0);
        let donor = ImageF32::filled(16, 16, 1.0);
        let mut rng = RngStream::new(1, 1);
        let patch = sample_patch(16, 16, 1.0, &mut rng);
        assert_eq!(patch.area(), 0);
        let (img, t) = paste_patch(&base, 2, &donor, 5, patch).unwrap();
        assert_eq!(img, base);
        assert_eq!(t, MixedTarget::hard(2));
    }

    #[test]
    fn quarter_patch_weights() {
        let base = ImageF32::filled(224, 224, 0.0);
        let donor = ImageF32::filled(224, 224, 1.0);
        let patch = PatchBox { x0: 50, y0: 60, x1: 162, y1: 172 };
        let (_, t) = paste_patch(&base, 0, &donor, 1, patch).unwrap();
        assert_eq!(t.entries(), &[(0, 0.75), (1, 0.25)]);
    }

    #[test]
    fn donor_weight_equals_pasted_pixel_fraction() {
        let (w, h) = (37, 23);
        let base = ImageF32::filled(w, h, 0.0);
        let donor = ImageF32::filled(w, h, 1.0);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..200 {
            let (img, t) = cutmix_pair(&base, 0, &donor, 1, 1.0, &mut rng).unwrap();
            let changed = img.pixels().chunks(3).filter(|p| p[0] != 0.0).count();
            let donor_w = t.entries().iter().find(|e| e.0 == 1).map_or(0.0, |e| e.1);
            assert_eq!(donor_w, changed as f64 / (w * h) as f64);
            let sum: f64 = t.entries().iter().map(|e| e.1).sum();
            assert!((sum - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn rejects_size_mismatch_and_bad_alpha() {
        let a = ImageF32::filled(4, 4, 0.0);
        let b = ImageF32::filled(5, 4, 0.0);
        let mut rng = RngStream::new(0, 0);
        assert!(cutmix_pair(&a, 0, &b, 1, 1.0, &mut rng).is_err());
        assert!(cutmix_pair(&a, 0, &a, 1, 0.0, &mut rng).is_err());
    }
}
