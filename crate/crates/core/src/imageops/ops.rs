//! The fourteen AutoAugment image operations on 8-bit RGB images.

use serde::{Deserialize, Serialize};

use crate::image::{quantize, ImageU8, CHANNELS};
use crate::rng::RngStream;

/// Value written where a geometric op samples outside the source image.
pub const FILL_VALUE: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Color,
    Posterize,
    Solarize,
    Contrast,
    Sharpness,
    Brightness,
    AutoContrast,
    Equalize,
    Invert,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::ShearX,
        OpKind::ShearY,
        OpKind::TranslateX,
        OpKind::TranslateY,
        OpKind::Rotate,
        OpKind::Color,
        OpKind::Posterize,
        OpKind::Solarize,
        OpKind::Contrast,
        OpKind::Sharpness,
        OpKind::Brightness,
        OpKind::AutoContrast,
        OpKind::Equalize,
        OpKind::Invert,
    ];

    /// Legal magnitude interval (inclusive).
    ///
    /// Shear is a slope, translate a fraction of the image side, rotate is in
    /// degrees, the enhance ops take a blend factor (1 = identity), posterize
    /// the number of bits kept and solarize the inversion threshold. The
    /// magnitude of AutoContrast, Equalize and Invert is ignored.
    pub fn magnitude_range(self) -> (f64, f64) {
        match self {
            OpKind::ShearX | OpKind::ShearY => (0.0, 1.0),
            OpKind::TranslateX | OpKind::TranslateY => (0.0, 1.0),
            OpKind::Rotate => (0.0, 180.0),
            OpKind::Color | OpKind::Contrast | OpKind::Sharpness | OpKind::Brightness => (0.0, 2.0),
            OpKind::Posterize => (1.0, 8.0),
            OpKind::Solarize => (0.0, 256.0),
            OpKind::AutoContrast | OpKind::Equalize | OpKind::Invert => (0.0, f64::MAX),
        }
    }

    pub fn is_geometric(self) -> bool {
        matches!(self, OpKind::ShearX | OpKind::ShearY | OpKind::TranslateX | OpKind::TranslateY | OpKind::Rotate)
    }

    pub fn validate_magnitude(self, magnitude: f64) -> Result<(), String> {
        let (lo, hi) = self.magnitude_range();
        if !magnitude.is_finite() || magnitude < lo || magnitude > hi {
            return Err(format!("{self:?} magnitude {magnitude} outside [{lo}, {hi}]"));
        }
        if self == OpKind::Posterize && magnitude.fract() != 0.0 {
            return Err(format!("Posterize magnitude must be a whole number of bits, got {magnitude}"));
        }
        Ok(())
    }
}

/// Applies one operation. Geometric ops draw a random sign from `rng`; the
/// others are deterministic. Magnitudes are assumed valid (checked when a
/// policy is loaded).
pub fn apply_op(kind: OpKind, magnitude: f64, img: &ImageU8, rng: &mut RngStream) -> ImageU8 {
    match kind {
        OpKind::ShearX => {
            let s = rng.sign() * magnitude;
            affine(img, [1.0, s, 0.0, 0.0, 1.0, 0.0])
        }
        OpKind::ShearY => {
            let s = rng.sign() * magnitude;
            affine(img, [1.0, 0.0, 0.0, s, 1.0, 0.0])
        }
        OpKind::TranslateX => {
            let t = rng.sign() * magnitude * img.width() as f64;
            affine(img, [1.0, 0.0, -t, 0.0, 1.0, 0.0])
        }
        OpKind::TranslateY => {
            let t = rng.sign() * magnitude * img.height() as f64;
            affine(img, [1.0, 0.0, 0.0, 0.0, 1.0, -t])
        }
        OpKind::Rotate => {
            let theta = (rng.sign() * magnitude).to_radians();
            let (sin, cos) = theta.sin_cos();
            affine(img, [cos, sin, 0.0, -sin, cos, 0.0])
        }
        OpKind::Color => blend(&grayscale(img), img, magnitude),
        OpKind::Contrast => {
            let mean = mean_luma(img);
            blend(&ImageU8::filled(img.width(), img.height(), mean), img, magnitude)
        }
        OpKind::Brightness => blend(&ImageU8::filled(img.width(), img.height(), 0), img, magnitude),
        OpKind::Sharpness => blend(&smooth(img), img, magnitude),
        OpKind::Posterize => {
            let bits = magnitude as u32;
            let mask = !((1u16 << (8 - bits)) - 1) as u8;
            img.map(|v| v & mask)
        }
        OpKind::Solarize => img.map(|v| if v as f64 >= magnitude { 255 - v } else { v }),
        OpKind::Invert => img.map(|v| 255 - v),
        OpKind::AutoContrast => per_channel_lut(img, autocontrast_lut),
        OpKind::Equalize => per_channel_lut(img, equalize_lut),
    }
}

/// Resamples through an affine map given in centered pixel coordinates:
/// output pixel `(u, v)` (relative to the image center) reads the source at
/// `(a·u + b·v + c, d·u + e·v + f)` relative to the center.
fn affine(img: &ImageU8, [a, b, c, d, e, f]: [f64; 6]) -> ImageU8 {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = img.pixels();
    let mut out = ImageU8::filled(w, h, 0);
    let dst = out.pixels_mut();
    let fetch = |x: i64, y: i64, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            FILL_VALUE
        } else {
            src[(y as usize * w + x as usize) * CHANNELS + ch] as f64
        }
    };
    for y in 0..h {
        let v = y as f64 - cy;
        for x in 0..w {
            let u = x as f64 - cx;
            let sx = cx + (a * u + b * v + c);
            let sy = cy + (d * u + e * v + f);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let o = (y * w + x) * CHANNELS;
            for ch in 0..CHANNELS {
                let top = fetch(x0, y0, ch) * (1.0 - fx) + fetch(x0 + 1, y0, ch) * fx;
                let bottom = fetch(x0, y0 + 1, ch) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, ch) * fx;
                dst[o + ch] = quantize(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// `degenerate + factor · (img − degenerate)`, rounded and clipped to 8 bits.
fn blend(degenerate: &ImageU8, img: &ImageU8, factor: f64) -> ImageU8 {
    let pixels = degenerate
        .pixels()
        .iter()
        .zip(img.pixels())
        .map(|(&d, &v)| {
            let d = d as f64;
            quantize(d + factor * (v as f64 - d))
        })
        .collect();
    ImageU8::from_pixels(img.width(), img.height(), pixels).expect("same dimensions")
}

#[inline]
fn luma(p: &[u8]) -> u8 {
    // ITU-R 601-2 weights in 16-bit fixed point
    ((p[0] as u32 * 19595 + p[1] as u32 * 38470 + p[2] as u32 * 7471 + 0x8000) >> 16) as u8
}

fn grayscale(img: &ImageU8) -> ImageU8 {
    let pixels = img.pixels().chunks_exact(CHANNELS).flat_map(|p| [luma(p); 3]).collect();
    ImageU8::from_pixels(img.width(), img.height(), pixels).expect("same dimensions")
}

fn mean_luma(img: &ImageU8) -> u8 {
    let n = img.width() * img.height();
    let sum: u64 = img.pixels().chunks_exact(CHANNELS).map(|p| luma(p) as u64).sum();
    (sum as f64 / n as f64 + 0.5) as u8
}

/// 3×3 smoothing with center weight 5 and unit neighbours; border pixels are kept.
fn smooth(img: &ImageU8) -> ImageU8 {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = [0u32; 3];
            for dy in 0..3 {
                for dx in 0..3 {
                    let weight = if dx == 1 && dy == 1 { 5 } else { 1 };
                    let p = img.get(x + dx - 1, y + dy - 1);
                    for c in 0..3 {
                        acc[c] += weight * p[c] as u32;
                    }
                }
            }
            out.set(x, y, acc.map(|s| ((s as f64 / 13.0).round()) as u8));
        }
    }
    out
}

fn per_channel_lut(img: &ImageU8, build: fn(&[u32; 256]) -> [u8; 256]) -> ImageU8 {
    let mut hist = [[0u32; 256]; CHANNELS];
    for p in img.pixels().chunks_exact(CHANNELS) {
        for c in 0..CHANNELS {
            hist[c][p[c] as usize] += 1;
        }
    }
    let luts = [build(&hist[0]), build(&hist[1]), build(&hist[2])];
    let pixels = img.pixels().iter().enumerate().map(|(i, &v)| luts[i % CHANNELS][v as usize]).collect();
    ImageU8::from_pixels(img.width(), img.height(), pixels).expect("same dimensions")
}

fn identity_lut() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

fn autocontrast_lut(hist: &[u32; 256]) -> [u8; 256] {
    let lo = hist.iter().position(|&c| c > 0).unwrap_or(0);
    let hi = hist.iter().rposition(|&c| c > 0).unwrap_or(255);
    if hi <= lo {
        return identity_lut();
    }
    let scale = 255.0 / (hi - lo) as f64;
    std::array::from_fn(|i| quantize((i as f64 - lo as f64) * scale))
}

fn equalize_lut(hist: &[u32; 256]) -> [u8; 256] {
    let nonzero: Vec<u32> = hist.iter().copied().filter(|&c| c > 0).collect();
    if nonzero.len() <= 1 {
        return identity_lut();
    }
    let total: u32 = nonzero.iter().sum();
    let step = (total - nonzero[nonzero.len() - 1]) / 255;
    if step == 0 {
        return identity_lut();
    }
    let mut lut = [0u8; 256];
    let mut n = step / 2;
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = (n / step).min(255) as u8;
        n += hist[i];
    }
    lut
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn noise(w: usize, h: usize, seed: u64) -> ImageU8 {
        let mut rng = RngStream::new(seed, 0);
        Image::from_pixels(w, h, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    fn rng() -> RngStream {
        RngStream::new(42, 0)
    }

    #[test]
    fn posterize_eight_bits_is_identity() {
        let img = noise(9, 7, 1);
        assert_eq!(apply_op(OpKind::Posterize, 8.0, &img, &mut rng()), img);
    }

    #[test]
    fn posterize_keeps_top_bits() {
        let img = Image::from_pixels(1, 1, vec![0b1011_0111, 255, 1]).unwrap();
        let out = apply_op(OpKind::Posterize, 2.0, &img, &mut rng());
        assert_eq!(out.pixels(), &[0b1000_0000, 0b1100_0000, 0]);
        let one = apply_op(OpKind::Posterize, 1.0, &img, &mut rng());
        assert_eq!(one.pixels(), &[128, 128, 0]);
    }

    #[test]
    fn invert_twice_is_identity() {
        let img = noise(8, 8, 2);
        let once = apply_op(OpKind::Invert, 0.0, &img, &mut rng());
        assert_eq!(once.pixels()[0], 255 - img.pixels()[0]);
        assert_eq!(apply_op(OpKind::Invert, 0.0, &once, &mut rng()), img);
    }

    #[test]
    fn solarize_threshold_256_is_identity() {
        let img = noise(8, 8, 3);
        assert_eq!(apply_op(OpKind::Solarize, 256.0, &img, &mut rng()), img);
        let all = apply_op(OpKind::Solarize, 0.0, &img, &mut rng());
        assert_eq!(all, apply_op(OpKind::Invert, 0.0, &img, &mut rng()));
    }

    #[test]
    fn solarize_inverts_above_threshold() {
        let img = Image::from_pixels(1, 1, vec![127u8, 128, 200]).unwrap();
        let out = apply_op(OpKind::Solarize, 128.0, &img, &mut rng());
        assert_eq!(out.pixels(), &[127, 127, 55]);
    }

    #[test]
    fn zero_magnitude_geometry_is_identity() {
        for (w, h) in [(8, 8), (7, 5), (1, 1)] {
            let img = noise(w, h, 4);
            for kind in [OpKind::Rotate, OpKind::ShearX, OpKind::ShearY, OpKind::TranslateX, OpKind::TranslateY] {
                assert_eq!(apply_op(kind, 0.0, &img, &mut rng()), img, "{kind:?} {w}x{h}");
            }
        }
    }

    #[test]
    fn rotate_180_on_odd_square_is_point_reflection() {
        let img = noise(5, 5, 5);
        let out = apply_op(OpKind::Rotate, 180.0, &img, &mut rng());
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.get(x, y), img.get(4 - x, 4 - y));
            }
        }
    }

    #[test]
    fn translate_full_width_fills_gray() {
        let img = noise(6, 4, 6);
        let out = apply_op(OpKind::TranslateX, 1.0, &img, &mut rng());
        assert!(out.pixels().iter().all(|&v| v == FILL_VALUE as u8));
    }

    #[test]
    fn translate_shifts_by_whole_pixels() {
        let img = noise(8, 3, 7);
        let mut r = RngStream::new(0, 0);
        let sign = r.clone().sign();
        let out = apply_op(OpKind::TranslateX, 0.25, &img, &mut r);
        let shift = (sign * 2.0) as i64;
        for y in 0..3 {
            for x in 0..8i64 {
                let sx = x - shift;
                let want = if (0..8).contains(&sx) { img.get(sx as usize, y) } else { [128; 3] };
                assert_eq!(out.get(x as usize, y), want);
            }
        }
    }

    #[test]
    fn enhance_factor_one_is_identity() {
        let img = noise(9, 9, 8);
        for kind in [OpKind::Color, OpKind::Contrast, OpKind::Brightness, OpKind::Sharpness] {
            assert_eq!(apply_op(kind, 1.0, &img, &mut rng()), img, "{kind:?}");
        }
    }

    #[test]
    fn enhance_factor_zero_gives_degenerate() {
        let img = noise(9, 9, 9);
        let black = apply_op(OpKind::Brightness, 0.0, &img, &mut rng());
        assert!(black.pixels().iter().all(|&v| v == 0));
        let gray = apply_op(OpKind::Color, 0.0, &img, &mut rng());
        assert!(gray.pixels().chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        let flat = apply_op(OpKind::Contrast, 0.0, &img, &mut rng());
        assert!(flat.pixels().iter().all(|&v| v == flat.pixels()[0]));
    }

    #[test]
    fn autocontrast_stretches_each_channel() {
        let img = Image::from_pixels(2, 1, vec![10u8, 0, 7, 20, 255, 7]).unwrap();
        let out = apply_op(OpKind::AutoContrast, 0.0, &img, &mut rng());
        assert_eq!(out.pixels(), &[0, 0, 7, 255, 255, 7]);
    }

    #[test]
    fn equalize_two_level_image() {
        // half the pixels at 50, half at 100: step = (n - n/2) / 255
        let mut px = vec![50u8; 510 * 3];
        px.extend(vec![100u8; 510 * 3]);
        let img = Image::from_pixels(1020, 1, px).unwrap();
        let out = apply_op(OpKind::Equalize, 0.0, &img, &mut rng());
        // step = 510 / 255 = 2, lut[50] = 1 / 2 = 0, lut[100] = (1 + 510) / 2 = 255
        assert_eq!(out.get(0, 0), [0, 0, 0]);
        assert_eq!(out.get(1019, 0), [255, 255, 255]);
    }

    #[test]
    fn every_op_preserves_dimensions() {
        let img = noise(11, 6, 10);
        for kind in OpKind::ALL {
            let (lo, hi) = kind.magnitude_range();
            let mag = if kind == OpKind::Posterize { 3.0 } else { lo + (hi.min(300.0) - lo) * 0.3 };
            let out = apply_op(kind, mag, &img, &mut rng());
            assert_eq!((out.width(), out.height()), (11, 6), "{kind:?}");
        }
    }

    #[test]
    fn magnitude_validation() {
        assert!(OpKind::Posterize.validate_magnitude(0.0).is_err());
        assert!(OpKind::Posterize.validate_magnitude(4.5).is_err());
        assert!(OpKind::Posterize.validate_magnitude(4.0).is_ok());
        assert!(OpKind::Solarize.validate_magnitude(256.0).is_ok());
        assert!(OpKind::Solarize.validate_magnitude(257.0).is_err());
        assert!(OpKind::Rotate.validate_magnitude(f64::NAN).is_err());
        assert!(OpKind::Color.validate_magnitude(-0.1).is_err());
    }
}
