//! Flat binary tensors: ASCII magic `SLDM`, `u32` rank, `rank × u32` dims,
//! then little-endian `f32` values in row-major order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const MAGIC: &[u8; 4] = b"SLDM";

#[derive(Debug, Clone, PartialEq)]
pub struct FlatTensor {
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl FlatTensor {
    pub fn new(dims: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != values.len() {
            return Err(Error::Format(format!("dims {dims:?} hold {n} values, got {}", values.len())));
        }
        Ok(Self { dims, values })
    }

    /// `[channels, height, width]`.
    pub fn from_grid(grid: &ImageGrid) -> Self {
        Self {
            dims: vec![grid.channels() as u32, grid.height() as u32, grid.width() as u32],
            values: grid.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Stacks same-shaped grids into `[n, channels, height, width]`.
    pub fn from_grids(grids: &[ImageGrid]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::Format("no grids to stack".into()))?;
        let mut values = Vec::with_capacity(grids.len() * first.len());
        for g in grids {
            first.ensure_same_shape(g, "tensor stack")?;
            values.extend(g.data().iter().map(|&v| v as f32));
        }
        let dims = vec![grids.len() as u32, first.channels() as u32, first.height() as u32, first.width() as u32];
        Ok(Self { dims, values })
    }

    pub fn to_grid(&self) -> Result<ImageGrid> {
        let (c, h, w) = match self.dims.as_slice() {
            [h, w] => (1, *h, *w),
            [c, h, w] => (*c, *h, *w),
            other => return Err(Error::Format(format!("cannot view rank-{} tensor as a grid", other.len()))),
        };
        ImageGrid::new(h as usize, w as usize, c as usize, self.values.iter().map(|&v| v as f64).collect())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let rank = read_u32(&mut r)? as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let dims = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { dims, values })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_fixed() {
        let t = FlatTensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let mut expected = b"SLDM".to_vec();
        expected.extend([2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(FlatTensor::read_from(&buf[..]).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(FlatTensor::read_from(&b"NOPE\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        FlatTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().write_to(&mut buf).unwrap();
        assert!(FlatTensor::read_from(&buf[..buf.len() - 2]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn grid_round_trip(c in 1usize..4, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
                let mut rng = crate::rng::seeded(seed);
                let g = crate::rng::normal_like(&ImageGrid::zeros(h, w, c), &mut rng).map(|v| (v as f32) as f64);
                let mut buf = Vec::new();
                FlatTensor::from_grid(&g).write_to(&mut buf).unwrap();
                prop_assert_eq!(FlatTensor::read_from(&buf[..]).unwrap().to_grid().unwrap(), g);
            }
        }
    }
}
