use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::filters::{gaussian_blur, sobel};
use crate::grid::ImageGrid;

/// Canny parameters. Thresholds are fractions of the maximum gradient
/// magnitude in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeExtractorConfig {
    pub gaussian_sigma: f64,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for EdgeExtractorConfig {
    fn default() -> Self {
        Self { gaussian_sigma: 1.4, low_threshold: 0.1, high_threshold: 0.3 }
    }
}

impl EdgeExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0) {
            return Err(param(format!("canny sigma must be positive, got {}", self.gaussian_sigma)));
        }
        let (lo, hi) = (self.low_threshold, self.high_threshold);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(param(format!("canny thresholds must satisfy 0 < low < high < 1, got ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Binary edge map: single channel, every value exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap(ImageGrid);

impl EdgeMap {
    pub fn from_grid(grid: ImageGrid) -> Result<Self> {
        grid.ensure_single_channel()?;
        if grid.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(param("edge map values must be exactly 0 or 1"));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.0
    }

    pub fn into_grid(self) -> ImageGrid {
        self.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Gaussian smoothing → Sobel gradients → non-maximum suppression →
/// hysteresis thresholding.
pub fn extract_topology(image: &ImageGrid, cfg: &EdgeExtractorConfig) -> Result<EdgeMap> {
    image.ensure_single_channel()?;
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    let smooth = gaussian_blur(image, cfg.gaussian_sigma)?;
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let mut edges = ImageGrid::zeros(h, w, 1);
    if peak < 1e-9 || h < 3 || w < 3 {
        return EdgeMap::from_grid(edges);
    }

    // Non-maximum suppression along the gradient direction. The
    // strict/non-strict pair breaks plateaus so ridges stay one pixel wide.
    let mut thin = vec![0.0; h * w];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let i = r * w + c;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let sx: isize = if gx[i] < 0.0 { -1 } else { 1 };
            let sy: isize = if gy[i] < 0.0 { -1 } else { 1 };
            let at = |dr: isize, dc: isize| mag[(r as isize + dr) as usize * w + (c as isize + dc) as usize];
            // Magnitudes one pixel along ± the gradient, interpolated between
            // the axial and diagonal neighbours.
            let (fwd, back) = if ay >= ax {
                let k = ax / ay;
                ((1.0 - k) * at(sy, 0) + k * at(sy, sx), (1.0 - k) * at(-sy, 0) + k * at(-sy, -sx))
            } else {
                let k = ay / ax;
                ((1.0 - k) * at(0, sx) + k * at(sy, sx), (1.0 - k) * at(0, -sx) + k * at(-sy, -sx))
            };
            if m > back && m >= fwd {
                thin[i] = m;
            }
        }
    }

    let low = cfg.low_threshold * peak;
    let high = cfg.high_threshold * peak;
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] >= high).collect();
    for &i in &stack {
        edges.data_mut()[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if edges.data()[j] == 0.0 && thin[j] >= low {
                    edges.data_mut()[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    EdgeMap::from_grid(edges)
}
