//! Dense image containers shared by every stage of the pipeline.
//!
//! [`ImageGrid`] stores `channels × height × width` samples in planar
//! (channel-major) order. Intensities live on the normalized `[0, 1]` scale,
//! although intermediate diffusion states are free to leave that range.

use crate::error::{dims, param, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(param(format!(
                "grid dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(dims(format!(
                "buffer of {} values does not fit {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(param(format!("grid contains non-finite value {v}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Single-channel grid from a per-pixel function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, channels: 1, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn channel_mut(&mut self, index: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Copies one channel out as a single-channel grid.
    pub fn extract_channel(&self, index: usize) -> Result<ImageGrid> {
        if index >= self.channels {
            return Err(Error::Channels { expected: index + 1, got: self.channels });
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.channel(index).to_vec(),
        })
    }

    /// Stacks grids of equal spatial size along the channel axis.
    pub fn stack(parts: &[&ImageGrid]) -> Result<ImageGrid> {
        let first = parts.first().ok_or_else(|| param("nothing to stack"))?;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut channels = 0;
        for p in parts {
            if p.height != first.height || p.width != first.width {
                return Err(dims(format!(
                    "cannot stack {}x{} with {}x{}",
                    first.height, first.width, p.height, p.width
                )));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(Self { height: first.height, width: first.width, channels, data })
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(dims(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    pub fn ensure_single_channel(&self) -> Result<()> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(Error::Channels { expected: 1, got: self.channels })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two grids of identical shape.
    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.ensure_same_shape(other, "zip_map")?;
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l2_distance(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_shape(other, "l2_distance")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    pub fn mean_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_shape(other, "mean_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Diffusion state in the Gray-Topology-Topology layout: channel 0 carries
/// intensities, channels 1 and 2 carry the structure map.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    grid: ImageGrid,
}

impl AugmentedState {
    /// Builds `[image, structure, structure]`.
    pub fn new(image: &ImageGrid, structure: &ImageGrid) -> Result<Self> {
        image.ensure_single_channel()?;
        structure.ensure_single_channel()?;
        image.ensure_same_shape(structure, "augmented state")?;
        Ok(Self { grid: ImageGrid::stack(&[image, structure, structure])? })
    }

    /// Wraps an existing 3-channel grid. Structure channels need not agree
    /// (mid-trajectory states are continuous and noisy).
    pub fn from_grid(grid: ImageGrid) -> Result<Self> {
        if grid.channels() != 3 {
            return Err(Error::Channels { expected: 3, got: grid.channels() });
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn into_grid(self) -> ImageGrid {
        self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn image_channel(&self) -> ImageGrid {
        self.grid.extract_channel(0).expect("three channels")
    }

    /// The two structure channels as a 2-channel grid.
    pub fn structure_channels(&self) -> ImageGrid {
        let n = self.grid.pixels();
        ImageGrid::new(self.height(), self.width(), 2, self.grid.data()[n..].to_vec())
            .expect("two channels")
    }

    /// Pixelwise average of the two structure channels.
    pub fn structure_mean(&self) -> ImageGrid {
        let a = self.grid.channel(1);
        let b = self.grid.channel(2);
        let data = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        ImageGrid::new(self.height(), self.width(), 1, data).expect("valid shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(ImageGrid::new(0, 4, 1, vec![]).is_err());
        assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageGrid::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn gray_topology_topology_layout() {
        let img = ImageGrid::from_fn(3, 4, |r, c| (r * 4 + c) as f64 / 12.0);
        let s = ImageGrid::from_fn(3, 4, |r, _| if r == 1 { 1.0 } else { 0.0 });
        let st = AugmentedState::new(&img, &s).unwrap();
        assert_eq!(st.image_channel(), img);
        assert_eq!(st.grid().channel(1), st.grid().channel(2));
        assert_eq!(st.structure_mean(), s);
        assert!(AugmentedState::new(&img, &ImageGrid::zeros(2, 4, 1)).is_err());
    }
}
