//! Per-sample kernels for 3×3 same-padded convolution, ReLU and 2×2 average
//! pooling on channel-last (`H × W × C`) buffers.

use crate::tensor::Scalar;

/// Unfolds 3×3 neighbourhoods into a `(h·w) × (9·cin)` matrix; row `p`
/// holds taps in `(ky, kx, channel)` order with zeros outside the image.
pub(crate) fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, cin: usize) -> Vec<T> {
    let k9 = 9 * cin;
    let mut col = vec![T::zero(); h * w * k9];
    for y in 0..h {
        for xx in 0..w {
            let row = (y * w + xx) * k9;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * cin;
                    let dst = row + (ky * 3 + kx) * cin;
                    col[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(dcol: &[T], h: usize, w: usize, cin: usize) -> Vec<T> {
    let k9 = 9 * cin;
    let mut dx = vec![T::zero(); h * w * cin];
    for y in 0..h {
        for xx in 0..w {
            let row = (y * w + xx) * k9;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * cin;
                    let src = row + (ky * 3 + kx) * cin;
                    for c in 0..cin {
                        dx[dst + c] += dcol[src + c];
                    }
                }
            }
        }
    }
    dx
}

/// `pre = col · weight + bias` where `weight` is `(9·cin) × cout`.
pub(crate) fn conv_forward<T: Scalar>(col: &[T], pixels: usize, k9: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let cout = bias.len();
    let mut pre = Vec::with_capacity(pixels * cout);
    for _ in 0..pixels {
        pre.extend_from_slice(bias);
    }
    T::gemm(pixels, k9, cout, T::one(), col, (k9 as isize, 1), weight, (cout as isize, 1), T::one(), &mut pre, cout);
    pre
}

/// Accumulates weight/bias gradients and returns the gradient on `col`
/// (skipped when `need_input` is false).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    col: &[T],
    dpre: &[T],
    pixels: usize,
    k9: usize,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    need_input: bool,
) -> Option<Vec<T>> {
    let cout = dbias.len();
    // dW += colᵀ · dpre
    T::gemm(k9, pixels, cout, T::one(), col, (1, k9 as isize), dpre, (cout as isize, 1), T::one(), dweight, cout);
    for row in dpre.chunks_exact(cout) {
        for (db, &g) in dbias.iter_mut().zip(row) {
            *db += g;
        }
    }
    need_input.then(|| {
        // dcol = dpre · Wᵀ
        let mut dcol = vec![T::zero(); pixels * k9];
        T::gemm(pixels, cout, k9, T::one(), dpre, (cout as isize, 1), weight, (1, cout as isize), T::zero(), &mut dcol, k9);
        dcol
    })
}

pub(crate) fn relu<T: Scalar>(pre: &[T]) -> Vec<T> {
    pre.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Gradient through ReLU; the kink at zero gets subgradient 0.
pub(crate) fn relu_backward<T: Scalar>(pre: &[T], dact: &mut [T]) {
    for (d, &p) in dact.iter_mut().zip(pre) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
}

/// 2×2 average pooling with stride 2; a trailing odd row/column is dropped.
pub(crate) fn avgpool2<T: Scalar>(x: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * c;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let i = ((2 * oy + dy) * w + 2 * ox + dx) * c;
                for ch in 0..c {
                    out[o + ch] += x[i + ch];
                }
            }
            for v in &mut out[o..o + c] {
                *v *= quarter;
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<T: Scalar>(dout: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = (oy * ow + ox) * c;
            for (dy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let i = ((2 * oy + dy) * w + 2 * ox + ddx) * c;
                for ch in 0..c {
                    dx[i + ch] = dout[o + ch] * quarter;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_loop() {
        let (h, w, cin, cout) = (5, 4, 2, 3);
        let x: Vec<f64> = (0..h * w * cin).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let weight: Vec<f64> = (0..9 * cin * cout).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.2).collect();
        let bias = vec![0.5, -0.25, 0.125];
        let col = im2col(&x, h, w, cin);
        let pre = conv_forward(&col, h * w, 9 * cin, &weight, &bias);
        for y in 0..h {
            for xx in 0..w {
                for o in 0..cout {
                    let mut acc = bias[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky - 1, xx as isize + kx - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for c in 0..cin {
                                let wi = ((ky as usize * 3 + kx as usize) * cin + c) * cout + o;
                                acc += weight[wi] * x[(sy as usize * w + sx as usize) * cin + c];
                            }
                        }
                    }
                    assert!((pre[(y * w + xx) * cout + o] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (h, w, c) = (4, 6, 3);
        let x: Vec<f64> = (0..h * w * c).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..h * w * 9 * c).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = im2col(&x, h, w, c).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, h, w, c)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_is_adjoint_and_drops_odd_edge() {
        let (h, w, c) = (5, 4, 2);
        let x: Vec<f64> = (0..h * w * c).map(|i| i as f64).collect();
        let p = avgpool2(&x, h, w, c);
        assert_eq!(p.len(), 2 * 2 * c);
        assert_eq!(p[0], (0.0 + 2.0 + 8.0 + 10.0) / 4.0);
        let d: Vec<f64> = (0..p.len()).map(|i| (i as f64).sqrt()).collect();
        let lhs: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(avgpool2_backward(&d, h, w, c)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
