//! Structured semantic descriptors: organ labels, ROI boxes and the target
//! enhancement range, with a fixed 32-slot numeric encoding and a one-line
//! text record format.
//!
//! Slot layout:
//!
//! | slots    | content                                                    |
//! |----------|------------------------------------------------------------|
//! | `0..5`   | label multi-hot in [`OrganLabel::ALL`] order                |
//! | `5..25`  | per label, union box `x0, y0, x1, y1` normalized by size   |
//! | `25..27` | intensity range `lo, hi`                                   |
//! | `27..32` | per label, region count / 4 (capped at 1)                  |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub const DESCRIPTOR_SLOTS: usize = 32;
/// Length of [`Region::token`].
pub const ROI_TOKEN_LEN: usize = OrganLabel::COUNT + 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrganLabel {
    Aorta,
    Coronary,
    Bone,
    Lung,
    Background,
}

impl OrganLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [OrganLabel; 5] =
        [OrganLabel::Aorta, OrganLabel::Coronary, OrganLabel::Bone, OrganLabel::Lung, OrganLabel::Background];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OrganLabel::Aorta => "aorta",
            OrganLabel::Coronary => "coronary",
            OrganLabel::Bone => "bone",
            OrganLabel::Lung => "lung",
            OrganLabel::Background => "background",
        }
    }
}

impl FromStr for OrganLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OrganLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown organ label {s:?}")))
    }
}

/// Pixel box, rows `row0..row1` and columns `col0..col1` (half-open).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub label: OrganLabel,
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Region {
    /// Label one-hot, normalized box corners, normalized box center.
    pub fn token(&self, height: usize, width: usize) -> [f64; ROI_TOKEN_LEN] {
        let mut t = [0.0; ROI_TOKEN_LEN];
        t[self.label.index()] = 1.0;
        let (h, w) = (height as f64, width as f64);
        let b = [self.col0 as f64 / w, self.row0 as f64 / h, self.col1 as f64 / w, self.row1 as f64 / h];
        t[OrganLabel::COUNT..OrganLabel::COUNT + 4].copy_from_slice(&b);
        t[OrganLabel::COUNT + 4] = 0.5 * (b[0] + b[2]);
        t[OrganLabel::COUNT + 5] = 0.5 * (b[1] + b[3]);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub height: usize,
    pub width: usize,
    /// Sorted, without duplicates.
    pub labels: Vec<OrganLabel>,
    pub regions: Vec<Region>,
    pub intensity_range: (f64, f64),
}

impl Descriptor {
    pub fn new(
        height: usize,
        width: usize,
        mut labels: Vec<OrganLabel>,
        regions: Vec<Region>,
        intensity_range: (f64, f64),
    ) -> Result<Self> {
        labels.sort();
        labels.dedup();
        let d = Self { height, width, labels, regions, intensity_range };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(param("descriptor image size must be positive"));
        }
        let (lo, hi) = self.intensity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(param(format!("intensity range ({lo}, {hi}) must be ordered within [0, 1]")));
        }
        for r in &self.regions {
            if !(r.row0 < r.row1 && r.col0 < r.col1 && r.row1 <= self.height && r.col1 <= self.width) {
                return Err(param(format!("region {r:?} outside {}×{}", self.height, self.width)));
            }
            if !self.labels.contains(&r.label) {
                return Err(param(format!("region label {} missing from label set", r.label.name())));
            }
        }
        Ok(())
    }

    pub fn has(&self, label: OrganLabel) -> bool {
        self.labels.contains(&label)
    }

    /// Bit set of present labels; descriptors with equal keys belong to the
    /// same class.
    pub fn class_key(&self) -> u8 {
        self.labels.iter().fold(0, |k, l| k | (1 << l.index()))
    }

    pub fn to_slots(&self) -> [f64; DESCRIPTOR_SLOTS] {
        let mut s = [0.0; DESCRIPTOR_SLOTS];
        let (h, w) = (self.height as f64, self.width as f64);
        for &l in &self.labels {
            s[l.index()] = 1.0;
        }
        for l in OrganLabel::ALL {
            let rs: Vec<&Region> = self.regions.iter().filter(|r| r.label == l).collect();
            if rs.is_empty() {
                continue;
            }
            let c0 = rs.iter().map(|r| r.col0).min().unwrap_or(0) as f64;
            let r0 = rs.iter().map(|r| r.row0).min().unwrap_or(0) as f64;
            let c1 = rs.iter().map(|r| r.col1).max().unwrap_or(0) as f64;
            let r1 = rs.iter().map(|r| r.row1).max().unwrap_or(0) as f64;
            let base = OrganLabel::COUNT + 4 * l.index();
            s[base..base + 4].copy_from_slice(&[c0 / w, r0 / h, c1 / w, r1 / h]);
            s[27 + l.index()] = (rs.len() as f64 / 4.0).min(1.0);
        }
        s[25] = self.intensity_range.0;
        s[26] = self.intensity_range.1;
        s
    }

    pub fn roi_tokens(&self) -> Vec<[f64; ROI_TOKEN_LEN]> {
        self.regions.iter().map(|r| r.token(self.height, self.width)).collect()
    }
}

/// `size=HxW labels=a,b range=lo,hi roi=label:r0,c0,r1,c1 …`
impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.labels.iter().map(|l| l.name()).collect();
        write!(
            f,
            "size={}x{} labels={} range={:.6},{:.6}",
            self.height,
            self.width,
            labels.join(","),
            self.intensity_range.0,
            self.intensity_range.1
        )?;
        for r in &self.regions {
            write!(f, " roi={}:{},{},{},{}", r.label.name(), r.row0, r.col0, r.row1, r.col1)?;
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse().map_err(|_| Error::Format(format!("bad {what} entry {p:?}"))))
        .collect()
}

impl FromStr for Descriptor {
    type Err = Error;
    fn from_str(line: &str) -> Result<Self> {
        let (mut size, mut labels, mut range, mut regions) = (None, Vec::new(), None, Vec::new());
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Format(format!("expected key=value, got {tok:?}")))?;
            match k {
                "size" => {
                    let (h, w) = v.split_once('x').ok_or_else(|| Error::Format(format!("bad size {v:?}")))?;
                    let p = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad size {v:?}")));
                    size = Some((p(h)?, p(w)?));
                }
                "labels" => labels = parse_list(v, "label")?,
                "range" => match parse_list::<f64>(v, "range")?.as_slice() {
                    [lo, hi] => range = Some((*lo, *hi)),
                    _ => return Err(Error::Format(format!("range needs two values, got {v:?}"))),
                },
                "roi" => {
                    let (l, b) = v.split_once(':').ok_or_else(|| Error::Format(format!("bad roi {v:?}")))?;
                    match parse_list::<usize>(b, "roi")?.as_slice() {
                        [r0, c0, r1, c1] => {
                            regions.push(Region { label: l.parse()?, row0: *r0, col0: *c0, row1: *r1, col1: *c1 })
                        }
                        _ => return Err(Error::Format(format!("roi needs four coordinates, got {b:?}"))),
                    }
                }
                _ => return Err(Error::Format(format!("unknown descriptor key {k:?}"))),
            }
        }
        let (h, w) = size.ok_or_else(|| Error::Format("descriptor missing size".into()))?;
        let range = range.ok_or_else(|| Error::Format("descriptor missing range".into()))?;
        Descriptor::new(h, w, labels, regions, range)
    }
}

/// One `id<TAB>descriptor` record per line; `#` starts a comment line.
pub fn write_descriptor_file(path: &Path, records: &[(String, Descriptor)]) -> Result<()> {
    let mut s = String::new();
    for (id, d) in records {
        if id.contains(char::is_whitespace) || id.is_empty() {
            return Err(param(format!("descriptor id {id:?} must be non-empty without whitespace")));
        }
        s += &format!("{id}\t{d}\n");
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_descriptor_file(path: &Path) -> Result<Vec<(String, Descriptor)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (id, rest) = l.split_once('\t').ok_or_else(|| Error::Format(format!("missing id in {l:?}")))?;
            Ok((id.to_string(), rest.parse()?))
        })
        .collect()
}
