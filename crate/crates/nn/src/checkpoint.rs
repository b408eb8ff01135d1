//! Binary checkpoint container: an 8-byte magic, a little-endian `u32`
//! header length, a JSON header, then the little-endian `f32` parameter
//! blob, optionally followed by the two optimizer moment blobs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SLDMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// `"score"` or `"alignment"`.
    pub kind: String,
    pub architecture: serde_json::Value,
    pub schedule_fingerprint: Option<u64>,
    pub iteration: usize,
    pub seed: u64,
    /// Echo of the training configuration.
    pub training: serde_json::Value,
    pub loss_curve: Vec<f64>,
    pub param_shapes: Vec<(String, Vec<usize>)>,
    pub param_count: usize,
    pub optimizer_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
    /// Adam first and second moments.
    pub optimizer: Option<(Vec<f32>, Vec<f32>)>,
}

fn write_blob(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_blob(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated parameter blob: {e}")))?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        if self.params.len() != self.header.param_count {
            return Err(Error::Checkpoint("parameter count disagrees with header".into()));
        }
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        write_blob(&mut w, &self.params)?;
        if let Some((m, v)) = &self.optimizer {
            write_blob(&mut w, m)?;
            write_blob(&mut w, v)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut hbuf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut hbuf).map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&hbuf).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
        }
        let params = read_blob(&mut r, header.param_count)?;
        let optimizer = match header.optimizer_step {
            Some(_) => Some((read_blob(&mut r, header.param_count)?, read_blob(&mut r, header.param_count)?)),
            None => None,
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { header, params, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }

    /// `iteration,loss` rows, one per recorded iteration.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.header.loss_curve.iter().enumerate() {
            s.push_str(&format!("{},{l:.8}\n", i + 1));
        }
        s
    }
}
