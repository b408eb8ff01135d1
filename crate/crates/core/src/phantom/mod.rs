//! Synthetic weakly-paired vessel phantoms.
//!
//! A phantom is a 2-D slice with a contrast-filled aorta disk and/or Bezier
//! coronary tubes, two bone ellipses and optionally a lung field. The
//! low-contrast (LD) image is rendered in the reference geometry; the
//! high-contrast (ND) image is rendered through a smooth random deformation,
//! so the pair is only weakly aligned. Bone is identical in both renderings.

mod dataset;
mod geometry;
mod preprocess;

pub use dataset::{build_dataset, dataset_paths, DatasetEntry, DatasetManifest, Split, DESCRIPTOR_FILE, MANIFEST_FILE};
pub use geometry::{Disk, Ellipse, Geometry, Misalignment, Tissue, Vessel};
pub use preprocess::{gaussian_denoise, hu_window};

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::descriptor::{Descriptor, OrganLabel, Region};
use crate::error::{param, Result};
use crate::grid::ImageGrid;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    AortaCoronary,
    AortaOnly,
    CoronaryOnly,
    AortaCoronaryLung,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 4] =
        [PhantomKind::AortaCoronary, PhantomKind::AortaOnly, PhantomKind::CoronaryOnly, PhantomKind::AortaCoronaryLung];

    fn has_aorta(self) -> bool {
        self != PhantomKind::CoronaryOnly
    }

    fn has_coronary(self) -> bool {
        self != PhantomKind::AortaOnly
    }

    fn has_lung(self) -> bool {
        self == PhantomKind::AortaCoronaryLung
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub size: usize,
    /// Kinds drawn uniformly per phantom.
    pub kinds: Vec<PhantomKind>,
    pub background: f64,
    pub bone_intensity: f64,
    pub lung_intensity: f64,
    pub c_ld: f64,
    pub c_ld_jitter: f64,
    pub c_nd: f64,
    pub vessel_count: (usize, usize),
    pub vessel_radius: (f64, f64),
    /// Aorta radius as a fraction of the image size.
    pub aorta_radius: (f64, f64),
    pub noise_std: f64,
    pub warp_max: f64,
    pub rotation_deg: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            kinds: PhantomKind::ALL.to_vec(),
            background: 0.35,
            bone_intensity: 0.9,
            lung_intensity: 0.1,
            c_ld: 0.45,
            c_ld_jitter: 0.05,
            c_nd: 0.75,
            vessel_count: (2, 4),
            vessel_radius: (1.0, 4.0),
            aorta_radius: (0.08, 0.12),
            noise_std: 0.02,
            warp_max: 1.5,
            rotation_deg: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(param("phantom size must be at least 16"));
        }
        if self.kinds.is_empty() {
            return Err(param("phantom spec needs at least one kind"));
        }
        if !(self.c_nd > self.c_ld + self.c_ld_jitter && self.c_ld - self.c_ld_jitter >= self.background) {
            return Err(param("contrasts must satisfy c_nd > c_ld ≥ background over the jitter range"));
        }
        let (r0, r1) = self.vessel_radius;
        if !(r0 > 0.0 && r0 <= r1) {
            return Err(param("vessel radius range must be positive and ordered"));
        }
        let (a0, a1) = self.aorta_radius;
        if !(a0 > 0.0 && a0 <= a1 && a1 < 0.5) {
            return Err(param("aorta radius fraction must lie in (0, 0.5) and be ordered"));
        }
        if self.vessel_count.0 > self.vessel_count.1 || self.vessel_count.1 == 0 {
            return Err(param("vessel count range must be ordered and allow at least one vessel"));
        }
        if !(self.warp_max >= 0.0 && self.rotation_deg >= 0.0 && self.noise_std >= 0.0 && self.c_ld_jitter >= 0.0) {
            return Err(param("warp, rotation, noise and jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomPair {
    pub kind: PhantomKind,
    pub ld_image: ImageGrid,
    pub nd_image: ImageGrid,
    /// ND content resampled into LD geometry through the known deformation.
    pub nd_aligned: ImageGrid,
    pub vessel_mask: ImageGrid,
    pub bone_mask: ImageGrid,
    pub background_mask: ImageGrid,
    /// `T(p) − p` at every pixel center, channels `(dy, dx)`.
    pub displacement: ImageGrid,
    pub descriptor: Descriptor,
    pub c_ld: f64,
}

fn sample_geometry(spec: &PhantomSpec, kind: PhantomKind, r: &mut Rng) -> Result<Geometry> {
    let n = spec.size as f64;
    let margin = 0.08 * n;
    let clampp = |v: f64| v.clamp(margin, n - 1.0 - margin);
    let aorta = kind.has_aorta().then(|| Disk {
        cy: n * (0.5 + r.random_range(-0.08..0.08)),
        cx: n * (0.5 + r.random_range(-0.08..0.08)),
        r: n * r.random_range(spec.aorta_radius.0..=spec.aorta_radius.1),
    });
    let mut vessels = Vec::new();
    if kind.has_coronary() {
        let count = r.random_range(spec.vessel_count.0.max(1)..=spec.vessel_count.1);
        for _ in 0..count {
            let dir = r.random_range(0.0..2.0 * std::f64::consts::PI);
            let (sy, sx) = match aorta {
                Some(a) => (a.cy + a.r * dir.sin(), a.cx + a.r * dir.cos()),
                None => (n * r.random_range(0.3..0.7), n * r.random_range(0.3..0.7)),
            };
            let len = n * r.random_range(0.3..0.5);
            let bend = dir + r.random_range(-0.6..0.6);
            let (ey, ex) = (clampp(sy + len * bend.sin()), clampp(sx + len * bend.cos()));
            let mut ctrl = [(sy, sx), (0.0, 0.0), (0.0, 0.0), (ey, ex)];
            let (py, px) = (-(ex - sx), ey - sy);
            let pl = py.hypot(px).max(1e-9);
            for (k, c) in ctrl.iter_mut().enumerate().take(3).skip(1) {
                let t = k as f64 / 3.0;
                let off = n * r.random_range(-0.12..0.12);
                *c = (clampp(sy + t * (ey - sy) + off * py / pl), clampp(sx + t * (ex - sx) + off * px / pl));
            }
            let radius = r.random_range(spec.vessel_radius.0..=spec.vessel_radius.1);
            vessels.push(Vessel::new(ctrl, radius));
        }
    }
    let bones = vec![
        Ellipse {
            cy: n * r.random_range(0.80..0.86),
            cx: n * (0.5 + r.random_range(-0.05..0.05)),
            ry: n * r.random_range(0.06..0.09),
            rx: n * r.random_range(0.08..0.12),
            angle: r.random_range(-0.2..0.2),
        },
        Ellipse {
            cy: n * r.random_range(0.10..0.16),
            cx: n * (0.5 + r.random_range(-0.15..0.15)),
            ry: n * r.random_range(0.04..0.06),
            rx: n * r.random_range(0.08..0.12),
            angle: r.random_range(-0.3..0.3),
        },
    ];
    let lung = kind.has_lung().then(|| {
        let side = if r.random_bool(0.5) { 0.2 } else { 0.8 };
        Ellipse {
            cy: n * r.random_range(0.42..0.5),
            cx: n * side,
            ry: n * r.random_range(0.22..0.27),
            rx: n * r.random_range(0.10..0.13),
            angle: r.random_range(-0.15..0.15),
        }
    });
    for v in &vessels {
        if !(v.radius > 0.0) {
            return Err(param("zero-radius vessel"));
        }
    }
    Ok(Geometry { aorta, vessels, bones, lung })
}

/// Per-pixel object hits of `geom` sampled at `warp(p)`.
fn hits(geom: &Geometry, size: usize, warp: &Misalignment) -> Vec<geometry::Hit> {
    (0..size * size)
        .map(|k| {
            let (y, x) = warp.apply((k / size) as f64, (k % size) as f64);
            geom.classify(y, x)
        })
        .collect()
}

fn intensity(t: Tissue, spec: &PhantomSpec, contrast: f64) -> f64 {
    match t {
        Tissue::Background => spec.background,
        Tissue::Lung => spec.lung_intensity,
        Tissue::Bone => spec.bone_intensity,
        Tissue::Aorta | Tissue::Coronary => contrast,
    }
}

fn render(h: &[geometry::Hit], spec: &PhantomSpec, contrast: f64, noise: &[f64]) -> Result<ImageGrid> {
    let data = h.iter().zip(noise).map(|(&(t, _), z)| intensity(t, spec, contrast) + spec.noise_std * z).collect();
    ImageGrid::new(spec.size, spec.size, 1, data)
}

fn mask(h: &[geometry::Hit], size: usize, f: impl Fn(Tissue) -> bool) -> ImageGrid {
    let data = h.iter().map(|&(t, _)| if f(t) { 1.0 } else { 0.0 }).collect();
    ImageGrid::new(size, size, 1, data).expect("mask buffer matches size")
}

/// Pixels farther than `dist` from every non-background pixel.
fn far_from(structure: &ImageGrid, dist: f64) -> ImageGrid {
    let (h, w) = (structure.height(), structure.width());
    let rad = dist.ceil() as isize;
    ImageGrid::from_fn(h, w, |y, x| {
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                if ((dy * dy + dx * dx) as f64) > dist * dist {
                    continue;
                }
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && structure.get(0, yy as usize, xx as usize) != 0.0 {
                    return 0.0;
                }
            }
        }
        1.0
    })
}

fn descriptor_from(h: &[geometry::Hit], spec: &PhantomSpec, kind: PhantomKind, geom: &Geometry) -> Result<Descriptor> {
    let n = spec.size;
    let mut regions = Vec::new();
    let mut boxes = |tissue: Tissue, label: OrganLabel, count: usize| {
        for idx in 0..count {
            let mut b: Option<(usize, usize, usize, usize)> = None;
            for (k, _) in h.iter().enumerate().filter(|(_, &hit)| hit == (tissue, idx)) {
                let (y, x) = (k / n, k % n);
                b = Some(match b {
                    None => (y, x, y + 1, x + 1),
                    Some((r0, c0, r1, c1)) => (r0.min(y), c0.min(x), r1.max(y + 1), c1.max(x + 1)),
                });
            }
            if let Some((row0, col0, row1, col1)) = b {
                regions.push(Region { label, row0, col0, row1, col1 });
            }
        }
    };
    boxes(Tissue::Aorta, OrganLabel::Aorta, geom.aorta.is_some() as usize);
    boxes(Tissue::Coronary, OrganLabel::Coronary, geom.vessels.len());
    boxes(Tissue::Bone, OrganLabel::Bone, geom.bones.len());
    boxes(Tissue::Lung, OrganLabel::Lung, geom.lung.is_some() as usize);
    let mut labels = vec![OrganLabel::Bone, OrganLabel::Background];
    if kind.has_aorta() {
        labels.push(OrganLabel::Aorta);
    }
    if kind.has_coronary() {
        labels.push(OrganLabel::Coronary);
    }
    if kind.has_lung() {
        labels.push(OrganLabel::Lung);
    }
    let spread = 2.0 * spec.noise_std;
    let range = ((spec.c_nd - spread).clamp(0.0, 1.0), (spec.c_nd + spread).clamp(0.0, 1.0));
    Descriptor::new(n, n, labels, regions, range)
}

/// Draws one weakly-paired phantom. All randomness comes from `rng_seed`.
pub fn generate_phantom_pair(spec: &PhantomSpec, rng_seed: u64) -> Result<PhantomPair> {
    spec.validate()?;
    let mut r = rng::seeded(rng_seed);
    let kind = *spec.kinds.choose(&mut r).expect("validated non-empty");
    let c_ld = spec.c_ld + if spec.c_ld_jitter > 0.0 { r.random_range(-spec.c_ld_jitter..=spec.c_ld_jitter) } else { 0.0 };
    let geom = sample_geometry(spec, kind, &mut r)?;
    let warp = Misalignment::sample(spec.size, spec.warp_max, spec.rotation_deg, &mut r);
    let n = spec.size;
    let ld_hits = hits(&geom, n, &Misalignment::identity(n));
    let nd_hits = hits(&geom, n, &warp);
    let mut draw = || -> Vec<f64> { (0..n * n).map(|_| rng::standard_normal(&mut r)).collect() };
    let (z_ld, z_nd) = (draw(), draw());

    let ld_image = render(&ld_hits, spec, c_ld, &z_ld)?;
    let nd_image = render(&nd_hits, spec, spec.c_nd, &z_nd)?;
    let nd_aligned = render(&ld_hits, spec, spec.c_nd, &z_nd)?;
    let vessel_mask = mask(&ld_hits, n, |t| matches!(t, Tissue::Aorta | Tissue::Coronary));
    let bone_mask = mask(&ld_hits, n, |t| t == Tissue::Bone);
    let structure = mask(&ld_hits, n, |t| t != Tissue::Background);
    let background_mask = far_from(&structure, 2.0);
    let mut disp = Vec::with_capacity(2 * n * n);
    let offsets: Vec<(f64, f64)> = (0..n * n)
        .map(|k| {
            let (y, x) = ((k / n) as f64, (k % n) as f64);
            let (ty, tx) = warp.apply(y, x);
            (ty - y, tx - x)
        })
        .collect();
    disp.extend(offsets.iter().map(|o| o.0));
    disp.extend(offsets.iter().map(|o| o.1));
    let displacement = ImageGrid::new(n, n, 2, disp)?;
    let descriptor = descriptor_from(&nd_hits, spec, kind, &geom)?;
    Ok(PhantomPair {
        kind,
        ld_image,
        nd_image,
        nd_aligned,
        vessel_mask,
        bone_mask,
        background_mask,
        displacement,
        descriptor,
        c_ld,
    })
}
