use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{generate_phantom_pair, PhantomKind, PhantomPair, PhantomSpec};
use crate::descriptor::{read_descriptor_file, write_descriptor_file};
use crate::error::{param, Error, Result};
use crate::grid::ImageGrid;
use crate::io::{png, FlatTensor};
use crate::rng::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DESCRIPTOR_FILE: &str = "descriptors.txt";

/// Channel order of each pair's tensor file.
const TENSOR_CHANNELS: [&str; 8] = ["ld", "nd", "nd_aligned", "vessel", "bone", "background", "disp_y", "disp_x"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub kind: PhantomKind,
    pub c_ld: f64,
    /// Role → path relative to the dataset directory.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub counts: [usize; 3],
    pub spec: PhantomSpec,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("dataset manifest: {e}")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Every file the dataset consists of, relative to its directory.
    pub fn all_files(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.iter().flat_map(|e| e.files.values().cloned()).collect();
        v.push(DESCRIPTOR_FILE.into());
        v.push(MANIFEST_FILE.into());
        v
    }

    /// Reads a pair back from its tensor file and the descriptor records.
    pub fn load_pair(&self, dir: &Path, entry: &DatasetEntry) -> Result<PhantomPair> {
        let tensor_path = entry.files.get("tensor").ok_or_else(|| Error::Format(format!("{}: no tensor", entry.id)))?;
        let t = FlatTensor::load(&dir.join(tensor_path))?;
        let [c, h, w] = t.dims[..] else {
            return Err(Error::Format(format!("{}: expected rank-3 tensor", entry.id)));
        };
        let (c, h, w) = (c as usize, h as usize, w as usize);
        if c != TENSOR_CHANNELS.len() {
            return Err(Error::Format(format!("{}: expected {} channels, got {c}", entry.id, TENSOR_CHANNELS.len())));
        }
        let plane = |k: usize| -> Result<ImageGrid> {
            ImageGrid::new(h, w, 1, t.values[k * h * w..(k + 1) * h * w].iter().map(|&v| v as f64).collect())
        };
        let disp = ImageGrid::new(h, w, 2, t.values[6 * h * w..8 * h * w].iter().map(|&v| v as f64).collect())?;
        let descriptor = read_descriptor_file(&dir.join(DESCRIPTOR_FILE))?
            .into_iter()
            .find(|(id, _)| *id == entry.id)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::Format(format!("{}: no descriptor record", entry.id)))?;
        Ok(PhantomPair {
            kind: entry.kind,
            ld_image: plane(0)?,
            nd_image: plane(1)?,
            nd_aligned: plane(2)?,
            vessel_mask: plane(3)?,
            bone_mask: plane(4)?,
            background_mask: plane(5)?,
            displacement: disp,
            descriptor,
            c_ld: entry.c_ld,
        })
    }
}

fn write_pair(dir: &Path, id: &str, p: &PhantomPair) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let mut put = |role: &str, name: String| {
        files.insert(role.to_string(), name);
    };
    for (role, img) in [("ld", &p.ld_image), ("nd", &p.nd_image), ("nd_aligned", &p.nd_aligned)] {
        let name = format!("{id}_{role}.png");
        png::write_gray16(&dir.join(&name), img)?;
        put(role, name);
    }
    for (role, m) in [("vessel_mask", &p.vessel_mask), ("bone_mask", &p.bone_mask), ("background_mask", &p.background_mask)] {
        let name = format!("{id}_{role}.png");
        png::write_gray8(&dir.join(&name), m)?;
        put(role, name);
    }
    let planes =
        [&p.ld_image, &p.nd_image, &p.nd_aligned, &p.vessel_mask, &p.bone_mask, &p.background_mask, &p.displacement];
    let refs: Vec<&ImageGrid> = planes.to_vec();
    let stacked = ImageGrid::stack(&refs)?;
    let name = format!("{id}.sldm");
    FlatTensor::from_grid(&stacked).save(&dir.join(&name))?;
    put("tensor", name);
    Ok(files)
}

/// Generates `n_train + n_val + n_test` pairs into `out_dir`. Pair `k`
/// uses seed `derive_seed(rng_seed, k)`; splits are assigned in order.
pub fn build_dataset(
    spec: &PhantomSpec,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    rng_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(param("every split needs at least one pair"));
    }
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let total = n_train + n_val + n_test;
    let mut entries = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    for k in 0..total {
        let split = if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let id = format!("p{k:04}");
        let seed = derive_seed(rng_seed, k as u64);
        let pair = generate_phantom_pair(spec, seed)?;
        let files = write_pair(out_dir, &id, &pair)?;
        records.push((id.clone(), pair.descriptor.clone()));
        entries.push(DatasetEntry { id, split, seed, kind: pair.kind, c_ld: pair.c_ld, files });
    }
    write_descriptor_file(&out_dir.join(DESCRIPTOR_FILE), &records)?;
    let manifest = DatasetManifest { seed: rng_seed, counts: [n_train, n_val, n_test], spec: spec.clone(), entries };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
    std::fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// Absolute paths of every dataset file.
pub fn dataset_paths(dir: &Path, manifest: &DatasetManifest) -> Vec<PathBuf> {
    manifest.all_files().into_iter().map(|f| dir.join(f)).collect()
}
