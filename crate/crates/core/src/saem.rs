//! Subtraction enhancement: `x_sub = fill − mask`, bilateral smoothing of the
//! subtraction, and `x_out = mask + λ·x_sub^B`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilateralConfig {
    pub sigma_space: f64,
    pub sigma_range: f64,
    pub radius: usize,
}

impl Default for BilateralConfig {
    fn default() -> Self {
        Self { sigma_space: 3.0, sigma_range: 0.1, radius: 7 }
    }
}

impl BilateralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_space > 0.0 && self.sigma_range > 0.0) {
            return Err(param("bilateral sigmas must be positive"));
        }
        let min_radius = (2.0 * self.sigma_space).ceil() as usize;
        if self.radius < min_radius.max(1) {
            return Err(param(format!("bilateral radius {} below ⌈2σ_s⌉ = {min_radius}", self.radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaemResult {
    pub x_sub: ImageGrid,
    pub x_sub_b: ImageGrid,
    pub x_out: ImageGrid,
    pub lambda: f64,
}

/// `fill − mask`, unclamped.
pub fn subtract(fill: &ImageGrid, mask: &ImageGrid) -> Result<ImageGrid> {
    fill.zip_map(mask, |f, m| f - m)
}

/// Normalized bilateral filter. Window taps outside the image are dropped
/// and the remaining weights renormalized, so every output is a convex
/// combination of in-window input values.
pub fn bilateral_filter(img: &ImageGrid, cfg: &BilateralConfig) -> Result<ImageGrid> {
    img.ensure_single_channel()?;
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let rad = cfg.radius as isize;
    let side = 2 * cfg.radius + 1;
    let spatial: Vec<f64> = (0..side * side)
        .map(|k| {
            let (dy, dx) = ((k / side) as isize - rad, (k % side) as isize - rad);
            (-((dy * dy + dx * dx) as f64) / (2.0 * cfg.sigma_space * cfg.sigma_space)).exp()
        })
        .collect();
    let inv_range = -1.0 / (2.0 * cfg.sigma_range * cfg.sigma_range);
    let src = img.data();
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let center = src[r as usize * w + c as usize];
            let (mut num, mut den) = (0.0, 0.0);
            for dy in -rad..=rad {
                let rr = r + dy;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                let row = &src[rr as usize * w..(rr as usize + 1) * w];
                let krow = &spatial[(dy + rad) as usize * side..];
                for dx in -rad..=rad {
                    let cc = c + dx;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let v = row[cc as usize];
                    let d = v - center;
                    let wgt = krow[(dx + rad) as usize] * (d * d * inv_range).exp();
                    num += wgt * v;
                    den += wgt;
                }
            }
            out[r as usize * w + c as usize] = num / den;
        }
    }
    ImageGrid::new(h, w, 1, out)
}

/// `mask + λ·sub_b`. No clamping; export paths clamp.
pub fn fuse(mask: &ImageGrid, sub_b: &ImageGrid, lambda: f64) -> Result<ImageGrid> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(param(format!("fusion weight must be finite and ≥ 0, got {lambda}")));
    }
    mask.zip_map(sub_b, |m, s| m + lambda * s)
}

/// Full chain for one weight.
pub fn run_saem(mask: &ImageGrid, fill: &ImageGrid, lambda: f64, cfg: &BilateralConfig) -> Result<SaemResult> {
    let x_sub = subtract(fill, mask)?;
    let x_sub_b = bilateral_filter(&x_sub, cfg)?;
    let x_out = fuse(mask, &x_sub_b, lambda)?;
    Ok(SaemResult { x_sub, x_sub_b, x_out, lambda })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Counts over equal-width bins spanning [0, 1]; values outside the
    /// range fall into the end bins.
    pub counts: Vec<usize>,
    pub mean: f64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.bins() as f64
    }

    /// Mean reconstructed from bin centers.
    pub fn binned_mean(&self) -> f64 {
        let n = self.total() as f64;
        self.counts.iter().enumerate().map(|(k, &c)| c as f64 * self.bin_center(k)).sum::<f64>() / n
    }
}

/// Histogram of `img` over pixels where `roi` is non-zero.
pub fn region_histogram(img: &ImageGrid, roi: &ImageGrid, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(param("histogram needs at least 2 bins"));
    }
    img.ensure_single_channel()?;
    img.ensure_same_shape(roi, "region histogram")?;
    let mut counts = vec![0usize; bins];
    let (mut sum, mut n) = (0.0, 0usize);
    for (&v, &m) in img.data().iter().zip(roi.data()) {
        if m == 0.0 {
            continue;
        }
        let k = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("histogram ROI".into()));
    }
    Ok(Histogram { counts, mean: sum / n as f64 })
}

/// Mean of `img` over pixels where `roi` is non-zero.
pub fn roi_mean(img: &ImageGrid, roi: &ImageGrid) -> Result<f64> {
    img.ensure_same_shape(roi, "roi mean")?;
    let (s, n) = img
        .data()
        .iter()
        .zip(roi.data())
        .filter(|(_, &m)| m != 0.0)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::EmptyRegion("roi mean".into()));
    }
    Ok(s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn reference_bilateral(img: &ImageGrid, cfg: &BilateralConfig) -> ImageGrid {
        let (h, w) = (img.height() as isize, img.width() as isize);
        let r = cfg.radius as isize;
        ImageGrid::from_fn(h as usize, w as usize, |y, x| {
            let (y, x) = (y as isize, x as isize);
            let p = img.get(0, y as usize, x as usize);
            let mut num = 0.0;
            let mut den = 0.0;
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    let q = img.get(0, yy as usize, xx as usize);
                    let ds = ((yy - y).pow(2) + (xx - x).pow(2)) as f64;
                    let g = (-ds / (2.0 * cfg.sigma_space.powi(2))).exp()
                        * (-(q - p).powi(2) / (2.0 * cfg.sigma_range.powi(2))).exp();
                    num += g * q;
                    den += g;
                }
            }
            num / den
        })
    }

    fn noisy(n: usize, seed: u64, f: impl Fn(usize, usize) -> f64) -> ImageGrid {
        let mut r = rng::seeded(seed);
        ImageGrid::from_fn(n, n, |y, x| f(y, x) + 0.02 * rng::standard_normal(&mut r))
    }

    #[test]
    fn subtraction_is_pointwise() {
        let mask = ImageGrid::from_fn(8, 8, |r, c| 0.1 * ((r + c) % 4) as f64);
        assert!(subtract(&mask, &mask).unwrap().data().iter().all(|&v| v == 0.0));
        let vessel = ImageGrid::from_fn(8, 8, |r, _| if r == 3 { 1.0 } else { 0.0 });
        let fill = mask.zip_map(&vessel, |m, v| m + 0.2 * v).unwrap();
        let sub = subtract(&fill, &mask).unwrap();
        for (s, v) in sub.data().iter().zip(vessel.data()) {
            assert!((s - 0.2 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn bilateral_matches_reference_loop() {
        let cfg = BilateralConfig { sigma_space: 1.5, sigma_range: 0.2, radius: 3 };
        let img = noisy(16, 3, |r, c| if c > 7 { 0.8 } else { 0.2 } + 0.01 * r as f64);
        let fast = bilateral_filter(&img, &cfg).unwrap();
        let slow = reference_bilateral(&img, &cfg);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn bilateral_constant_and_wide_range() {
        let cfg = BilateralConfig::default();
        let flat = ImageGrid::filled(12, 12, 1, 0.37);
        let out = bilateral_filter(&flat, &cfg).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6));

        // Range kernel → 1: plain truncated Gaussian on interior pixels.
        let wide = BilateralConfig { sigma_space: 1.0, sigma_range: 1e6, radius: 3 };
        let img = noisy(16, 5, |r, c| 0.05 * ((r * c) % 7) as f64);
        let out = bilateral_filter(&img, &wide).unwrap();
        let k: Vec<f64> = (-3..=3).map(|d: i32| (-(d * d) as f64 / 2.0).exp()).collect();
        let norm: f64 = k.iter().sum::<f64>().powi(2);
        for r in 3..13 {
            for c in 3..13 {
                let mut acc = 0.0;
                for dy in 0..7 {
                    for dx in 0..7 {
                        acc += k[dy] * k[dx] * img.get(0, r + dy - 3, c + dx - 3);
                    }
                }
                assert!((out.get(0, r, c) - acc / norm).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn bilateral_preserves_step_and_removes_noise() {
        let cfg = BilateralConfig { sigma_space: 3.0, sigma_range: 0.1, radius: 7 };
        let img = noisy(32, 9, |_, c| if c >= 16 { 0.75 } else { 0.25 });
        let out = bilateral_filter(&img, &cfg).unwrap();
        let stats = |g: &ImageGrid, cols: std::ops::Range<usize>| {
            let v: Vec<f64> = (8..24).flat_map(|r| cols.clone().map(move |c| (r, c))).map(|(r, c)| g.get(0, r, c)).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            (m, s)
        };
        let (lo_in, sd_in) = stats(&img, 2..10);
        let (lo, sd_lo) = stats(&out, 2..10);
        let (hi, sd_hi) = stats(&out, 22..30);
        assert!(((hi - lo) - 0.5).abs() <= 0.05, "step {}", hi - lo);
        assert!(sd_lo * 3.0 <= sd_in && sd_hi * 3.0 <= sd_in, "{sd_in} → {sd_lo}, {sd_hi}");
        assert!((lo - lo_in).abs() < 0.01);
    }

    #[test]
    fn invalid_configs() {
        assert!(BilateralConfig { radius: 5, ..Default::default() }.validate().is_err());
        assert!(BilateralConfig { sigma_range: 0.0, ..Default::default() }.validate().is_err());
        let g = ImageGrid::zeros(4, 4, 1);
        assert!(fuse(&g, &g, -0.1).is_err());
        assert!(region_histogram(&g, &g, 8).is_err());
        assert!(region_histogram(&g, &ImageGrid::filled(4, 4, 1, 1.0), 1).is_err());
    }

    #[test]
    fn fusion_weights() {
        let mask = ImageGrid::from_fn(8, 8, |r, c| 0.3 + 0.01 * (r + c) as f64);
        let sub = ImageGrid::from_fn(8, 8, |r, _| if r < 4 { 0.2 } else { 0.0 });
        assert_eq!(fuse(&mask, &sub, 0.0).unwrap(), mask);
        let roi = sub.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let means: Vec<f64> =
            [0.0, 0.5, 1.0, 1.5, 2.0].iter().map(|&l| roi_mean(&fuse(&mask, &sub, l).unwrap(), &roi).unwrap()).collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn histogram_counts_and_shift() {
        let roi = ImageGrid::from_fn(10, 10, |r, _| if r < 5 { 1.0 } else { 0.0 });
        let flat = ImageGrid::filled(10, 10, 1, 0.42);
        let h = region_histogram(&flat, &roi, 16).unwrap();
        assert_eq!(h.total(), 50);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);

        let mask = ImageGrid::from_fn(10, 10, |r, c| 0.2 + 0.03 * ((r * 7 + c * 3) % 10) as f64);
        let sub = ImageGrid::from_fn(10, 10, |r, c| 0.1 + 0.01 * ((r + c) % 5) as f64);
        let bins = 64;
        let h0 = region_histogram(&fuse(&mask, &sub, 0.0).unwrap(), &roi, bins).unwrap();
        let h1 = region_histogram(&fuse(&mask, &sub, 1.0).unwrap(), &roi, bins).unwrap();
        let expected = roi_mean(&sub, &roi).unwrap();
        assert!((h1.binned_mean() - h0.binned_mean() - expected).abs() <= 1.0 / bins as f64);
        assert!((h1.mean - h0.mean - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fusion_is_additive_in_lambda(l1 in 0.0f64..3.0, l2 in 0.0f64..3.0, seed in 0u64..1000) {
            let mut r = rng::seeded(seed);
            let mask = ImageGrid::from_fn(6, 6, |_, _| rng::standard_normal(&mut r));
            let sub = ImageGrid::from_fn(6, 6, |_, _| rng::standard_normal(&mut r));
            let once = fuse(&mask, &sub, l1 + l2).unwrap();
            let twice = fuse(&fuse(&mask, &sub, l1).unwrap(), &sub, l2).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn bilateral_stays_within_local_range(seed in 0u64..1000) {
            let cfg = BilateralConfig { sigma_space: 1.0, sigma_range: 0.15, radius: 2 };
            let mut r = rng::seeded(seed);
            let img = ImageGrid::from_fn(10, 10, |_, _| rng::standard_normal(&mut r));
            let out = bilateral_filter(&img, &cfg).unwrap();
            for y in 0..10isize {
                for x in 0..10isize {
                    let win: Vec<f64> = (y - 2..=y + 2)
                        .flat_map(|yy| (x - 2..=x + 2).map(move |xx| (yy, xx)))
                        .filter(|&(yy, xx)| (0..10).contains(&yy) && (0..10).contains(&xx))
                        .map(|(yy, xx)| img.get(0, yy as usize, xx as usize))
                        .collect();
                    let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = out.get(0, y as usize, x as usize);
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}
