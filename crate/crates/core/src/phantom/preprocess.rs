use crate::error::{param, Result};
use crate::filters::gaussian_blur;
use crate::grid::ImageGrid;

/// Clamps to `[clamp_lo, clamp_hi]`, then maps the window
/// `[level − width/2, level + width/2]` affinely onto `[0, 1]`.
pub fn hu_window(raw_hu: &ImageGrid, level: f64, width: f64, clamp_lo: f64, clamp_hi: f64) -> Result<ImageGrid> {
    if !(width > 0.0) || !(clamp_lo < clamp_hi) {
        return Err(param(format!("invalid window: width {width}, clamp [{clamp_lo}, {clamp_hi}]")));
    }
    let lo = level - width / 2.0;
    Ok(raw_hu.map(|v| ((v.clamp(clamp_lo, clamp_hi) - lo) / width).clamp(0.0, 1.0)))
}

/// Gaussian smoothing with reflective borders.
pub fn gaussian_denoise(img: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    gaussian_blur(img, sigma)
}
