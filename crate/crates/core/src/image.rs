//! Row-major RGB rasters, bilinear resampling and binary PPM IO.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An RGB image stored row-major as `height × width × 3` interleaved values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
}

pub type ImageU8 = Image<u8>;
pub type ImageF32 = Image<f32>;

impl<T: Copy> Image<T> {
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height * CHANNELS {
            return Err(Error::Input(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height * CHANNELS,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, pixels: vec![value; width * height * CHANNELS] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        let i = self.index(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = self.index(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Applies `f` to every channel value.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image { width: self.width, height: self.height, pixels: self.pixels.iter().map(|&v| f(v)).collect() }
    }

    /// Copies the integer rectangle `(x, y, w, h)`; the rectangle must lie inside the image.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Self {
        assert!(w > 0 && h > 0 && x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut pixels = Vec::with_capacity(w * h * CHANNELS);
        for row in y..y + h {
            let start = self.index(x, row);
            pixels.extend_from_slice(&self.pixels[start..start + w * CHANNELS]);
        }
        Self { width: w, height: h, pixels }
    }
}

/// Mirrors the image left to right: column `j` moves to `width - 1 - j`.
pub fn hflip<T: Copy>(img: &Image<T>) -> Image<T> {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(img.width - 1 - x, y, img.get(x, y));
        }
    }
    out
}

/// A source rectangle in continuous pixel-edge coordinates: the image spans
/// `[0, width] × [0, height]` and pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Region {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x: 0.0, y: 0.0, w: width as f64, h: height as f64 }
    }

    pub fn from_box(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x: x as f64, y: y as f64, w: w as f64, h: h as f64 }
    }

    /// The same region reflected about the vertical center line of an image of `width`.
    pub fn mirrored(&self, width: usize) -> Self {
        Self { x: width as f64 - self.x - self.w, ..*self }
    }
}

/// Interpolation taps for one output coordinate along one axis.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(start: f64, extent: f64, out_len: usize, in_len: usize) -> Vec<Tap> {
    let step = extent / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|i| {
            // half-pixel centered: output center i + 0.5 maps into the source region
            let src = (start + (i as f64 + 0.5) * step - 0.5).clamp(0.0, max);
            let lo = src.floor();
            let lo_i = lo as usize;
            Tap { lo: lo_i, hi: (lo_i + 1).min(in_len - 1), frac: src - lo }
        })
        .collect()
}

/// Bilinearly samples `region` of `img` onto an `out_w × out_h` grid without
/// quantizing. Coordinates outside the image are clamped to the border.
pub fn sample_region(img: &ImageU8, region: Region, out_w: usize, out_h: usize) -> Vec<f64> {
    assert!(out_w > 0 && out_h > 0, "output dimensions must be positive");
    let xs = axis_taps(region.x, region.w, out_w, img.width);
    let ys = axis_taps(region.y, region.h, out_h, img.height);
    let mut out = Vec::with_capacity(out_w * out_h * CHANNELS);
    for ty in &ys {
        for tx in &xs {
            for c in 0..CHANNELS {
                let p = |x: usize, y: usize| img.pixels[img.index(x, y) + c] as f64;
                let top = p(tx.lo, ty.lo) * (1.0 - tx.frac) + p(tx.hi, ty.lo) * tx.frac;
                let bottom = p(tx.lo, ty.hi) * (1.0 - tx.frac) + p(tx.hi, ty.hi) * tx.frac;
                out.push(top * (1.0 - ty.frac) + bottom * ty.frac);
            }
        }
    }
    out
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Resamples `region` into a new `out_w × out_h` 8-bit image.
pub fn resize_region(img: &ImageU8, region: Region, out_w: usize, out_h: usize) -> ImageU8 {
    let pixels = sample_region(img, region, out_w, out_h).into_iter().map(quantize).collect();
    Image { width: out_w, height: out_h, pixels }
}

/// Bilinear resize with half-pixel-centered sampling and round-to-nearest output.
pub fn resize_bilinear(img: &ImageU8, new_w: usize, new_h: usize) -> ImageU8 {
    resize_region(img, Region::full(img.width, img.height), new_w, new_h)
}

/// Parses a binary PPM (`P6`, maxval 255).
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageU8> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("ppm", "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("ppm", "non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(Error::format("ppm", format!("unsupported magic {:?}", fields[0])));
    }
    let parse = |s: &str, name: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::format("ppm", format!("bad {name} {s:?}")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::format("ppm", format!("only maxval 255 is supported, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * CHANNELS;
    if bytes.len() < pos + need {
        return Err(Error::format("ppm", format!("expected {need} raster bytes, found {}", bytes.len().saturating_sub(pos))));
    }
    Image::from_pixels(width, height, bytes[pos..pos + need].to_vec())
}

pub fn encode_ppm(img: &ImageU8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageU8> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> ImageU8 {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x * 7 + y) as u8, (y * 5) as u8, (x * y % 251) as u8]);
            }
        }
        Image::from_pixels(w, h, px).unwrap()
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Image::from_pixels(0, 2, Vec::<u8>::new()).is_err());
        assert!(Image::from_pixels(2, 2, vec![0u8; 11]).is_err());
    }

    #[test]
    fn hflip_two_pixels() {
        let img = Image::from_pixels(2, 1, vec![1u8, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(hflip(&img).pixels(), &[4, 5, 6, 1, 2, 3]);
    }

    #[test]
    fn hflip_is_involution() {
        let img = gradient(13, 7);
        assert_eq!(hflip(&hflip(&img)), img);
        let f = img.map(|v| v as f32 * 0.5 - 3.0);
        assert_eq!(hflip(&hflip(&f)), f);
    }

    #[test]
    fn hflip_column_constant_unchanged() {
        let mut img = ImageU8::filled(5, 4, 0);
        for y in 0..4 {
            for x in 0..5 {
                img.set(x, y, [y as u8 * 10, 3, 200]);
            }
        }
        assert_eq!(hflip(&img), img);
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = gradient(17, 9);
        assert_eq!(resize_bilinear(&img, 17, 9), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageU8::filled(7, 5, 77);
        for (w, h) in [(1, 1), (3, 11), (20, 20), (64, 2)] {
            let out = resize_bilinear(&img, w, h);
            assert!(out.pixels().iter().all(|&v| v == 77));
        }
    }

    #[test]
    fn resize_two_to_four_matches_hand_oracle() {
        // scalar bilinear evaluated by hand: source x = (i + 0.5) / 2 - 0.5,
        // clamped to [0, 1], value = 255 * x
        let oracle: Vec<u8> = (0..4)
            .map(|i| {
                let sx: f64 = ((i as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                (255.0 * sx).round() as u8
            })
            .collect();
        assert_eq!(oracle, [0, 64, 191, 255]);
        let img = Image::from_pixels(2, 1, vec![0u8, 0, 0, 255, 255, 255]).unwrap();
        let out = resize_bilinear(&img, 4, 1);
        let red: Vec<u8> = out.pixels().chunks(3).map(|p| p[0]).collect();
        assert_eq!(red, oracle);
    }

    #[test]
    fn integer_offset_region_is_exact_crop() {
        let img = gradient(20, 20);
        let out = resize_region(&img, Region::from_box(3, 5, 10, 8), 10, 8);
        assert_eq!(out, img.crop(3, 5, 10, 8));
    }

    #[test]
    fn ppm_roundtrip_and_comments() {
        let img = gradient(6, 4);
        let bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
        let mut commented = b"P6\n# made by hand\n6 4\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        assert_eq!(decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn ppm_rejects_truncation_and_other_formats() {
        let bytes = encode_ppm(&gradient(6, 4));
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n1").is_err());
    }
}
