//! Separable Gaussian smoothing and Sobel derivatives on single-channel grids.
//!
//! Borders are handled by half-sample symmetric reflection
//! (`… c b a | a b c …`), which keeps a normalized kernel mass-preserving.

use crate::error::{param, Result};
use crate::grid::ImageGrid;

/// Maps an out-of-range index back into `0..n` by symmetric reflection.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Normalized 1-D Gaussian taps on `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Kernel radius used for a given sigma: `⌈3σ⌉`, at least 1.
pub fn default_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

fn convolve_rows(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        for col in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                acc += kv * line[reflect(col as isize + j as isize - r, w)];
            }
            out[row * w + col] = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for (j, &kv) in k.iter().enumerate() {
            let sr = reflect(row as isize + j as isize - r, h);
            let (dst, srow) = (&mut out[row * w..(row + 1) * w], &src[sr * w..(sr + 1) * w]);
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Gaussian smoothing of every channel.
pub fn gaussian_blur(img: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(param(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let k = gaussian_kernel(sigma, default_radius(sigma));
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for c in 0..img.channels() {
        let tmp = convolve_rows(img.channel(c), h, w, &k);
        let res = convolve_cols(&tmp, h, w, &k);
        out.channel_mut(c).copy_from_slice(&res);
    }
    Ok(out)
}

/// Horizontal and vertical Sobel responses of channel 0.
pub fn sobel(img: &ImageGrid) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (img.height(), img.width());
    let p = img.channel(0);
    let at = |r: isize, c: isize| p[reflect(r, h) * w + reflect(c, w)];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            gx[i] = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            gy[i] = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        }
    }
    (gx, gy)
}
