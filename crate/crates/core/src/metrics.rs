//! PSNR, SSIM, region SNR and ISNR.
//!
//! Sentinels: identical images give `psnr = +∞`, a noise region with zero
//! spread gives `snr = +∞`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::filters::gaussian_kernel;
use crate::grid::ImageGrid;

/// `10·log10(peak²/MSE)`.
pub fn psnr(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    if !(peak > 0.0) {
        return Err(param("psnr peak must be positive"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 }
    }
}

/// Mean local SSIM over every window position that lies fully inside the
/// image.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, cfg: &SsimConfig) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    a.ensure_single_channel()?;
    let n = cfg.window;
    if n == 0 || n % 2 == 0 {
        return Err(param("ssim window must be odd"));
    }
    let (h, w) = (a.height(), a.width());
    if h < n || w < n {
        return Err(Error::Dimension(format!("image {h}×{w} smaller than ssim window {n}")));
    }
    let k1d = gaussian_kernel(cfg.sigma, n / 2);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let (pa, pb) = (a.data(), b.data());
    let mut total = 0.0;
    for r0 in 0..=h - n {
        for c0 in 0..=w - n {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, ki) in k1d.iter().enumerate() {
                let row = (r0 + i) * w + c0;
                for (j, kj) in k1d.iter().enumerate() {
                    let g = ki * kj;
                    let (x, y) = (pa[row + j], pb[row + j]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / ((h - n + 1) * (w - n + 1)) as f64)
}

fn roi_values<'a>(img: &'a ImageGrid, roi: &'a ImageGrid) -> impl Iterator<Item = f64> + 'a {
    img.data().iter().zip(roi.data()).filter(|(_, &m)| m != 0.0).map(|(&v, _)| v)
}

/// `20·log10(mean(signal) / std(noise))`, population standard deviation.
pub fn snr(img: &ImageGrid, signal_roi: &ImageGrid, noise_roi: &ImageGrid) -> Result<f64> {
    img.ensure_single_channel()?;
    img.ensure_same_shape(signal_roi, "snr signal roi")?;
    img.ensure_same_shape(noise_roi, "snr noise roi")?;
    if signal_roi.data().iter().zip(noise_roi.data()).any(|(&s, &n)| s != 0.0 && n != 0.0) {
        return Err(param("snr signal and noise regions overlap"));
    }
    let sig: Vec<f64> = roi_values(img, signal_roi).collect();
    let noise: Vec<f64> = roi_values(img, noise_roi).collect();
    if sig.is_empty() || noise.is_empty() {
        return Err(Error::EmptyRegion("snr region".into()));
    }
    let mean = sig.iter().sum::<f64>() / sig.len() as f64;
    let nm = noise.iter().sum::<f64>() / noise.len() as f64;
    let sd = (noise.iter().map(|v| (v - nm).powi(2)).sum::<f64>() / noise.len() as f64).sqrt();
    if !(mean > 0.0) {
        return Err(Error::Statistics(format!("snr needs a positive signal mean, got {mean}")));
    }
    if sd == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (mean / sd).log10())
}

/// `snr(output) − snr(degraded)`; two infinite SNRs give 0.
pub fn isnr(output: &ImageGrid, degraded: &ImageGrid, signal_roi: &ImageGrid, noise_roi: &ImageGrid) -> Result<f64> {
    let a = snr(output, signal_roi, noise_roi)?;
    let b = snr(degraded, signal_roi, noise_roi)?;
    if a == b {
        return Ok(0.0);
    }
    Ok(a - b)
}

/// Metrics for one test image. `psnr`/`ssim` compare against the reference
/// realigned to the input geometry; the `_full` pair compares against the
/// unaligned reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub snr: f64,
    pub isnr: f64,
    pub psnr_full: f64,
    pub ssim_full: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Number of finite values aggregated.
    pub count: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation over the finite entries.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean, std, count: n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub snr: MeanStd,
    pub isnr: MeanStd,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub psnr_full: MeanStd,
    pub ssim_full: MeanStd,
}

impl MetricReport {
    pub fn aggregate(images: Vec<ImageMetrics>) -> Self {
        let col = |f: fn(&ImageMetrics) -> f64| MeanStd::of(images.iter().map(f));
        Self {
            snr: col(|m| m.snr),
            isnr: col(|m| m.isnr),
            psnr: col(|m| m.psnr),
            ssim: col(|m| m.ssim),
            psnr_full: col(|m| m.psnr_full),
            ssim_full: col(|m| m.ssim_full),
            images,
        }
    }

    /// Per-image rows followed by `mean` and `std` rows. Columns follow the
    /// usual SNR, ISNR, PSNR, SSIM ordering.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,snr_db,isnr_db,psnr_db,ssim,psnr_full_db,ssim_full\n");
        for m in &self.images {
            s += &format!("{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n", m.name, m.snr, m.isnr, m.psnr, m.ssim, m.psnr_full, m.ssim_full);
        }
        let cols = [self.snr, self.isnr, self.psnr, self.ssim, self.psnr_full, self.ssim_full];
        s += "mean";
        cols.iter().for_each(|c| s += &format!(",{:.6}", c.mean));
        s += "\nstd";
        cols.iter().for_each(|c| s += &format!(",{:.6}", c.std));
        s.push('\n');
        s
    }
}
