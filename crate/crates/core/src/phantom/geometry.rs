use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    /// Radians.
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cy: f64,
    pub cx: f64,
    pub r: f64,
}

impl Disk {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        (y - self.cy).powi(2) + (x - self.cx).powi(2) <= self.r * self.r
    }
}

/// Tube of constant radius around a cubic Bezier centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    /// `(y, x)` control points.
    pub control: [(f64, f64); 4],
    pub radius: f64,
    #[serde(skip)]
    polyline: Vec<(f64, f64)>,
}

const BEZIER_SEGMENTS: usize = 64;

impl Vessel {
    pub fn new(control: [(f64, f64); 4], radius: f64) -> Self {
        let polyline = (0..=BEZIER_SEGMENTS)
            .map(|k| {
                let t = k as f64 / BEZIER_SEGMENTS as f64;
                let u = 1.0 - t;
                let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
                let y = (0..4).map(|i| b[i] * control[i].0).sum();
                let x = (0..4).map(|i| b[i] * control[i].1).sum();
                (y, x)
            })
            .collect();
        Self { control, radius, polyline }
    }

    pub fn contains(&self, y: f64, x: f64) -> bool {
        let r2 = self.radius * self.radius;
        self.polyline.windows(2).any(|s| segment_dist2((y, x), s[0], s[1]) <= r2)
    }
}

fn segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qy, qx) = (a.0 + t * dy, a.1 + t * dx);
    (p.0 - qy).powi(2) + (p.1 - qx).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Lung,
    Bone,
    Aorta,
    Coronary,
}

/// Object identity at a point: tissue plus index within its family.
pub type Hit = (Tissue, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub aorta: Option<Disk>,
    pub vessels: Vec<Vessel>,
    pub bones: Vec<Ellipse>,
    pub lung: Option<Ellipse>,
}

impl Geometry {
    /// Contrast-filled structures take priority over bone, bone over lung.
    pub fn classify(&self, y: f64, x: f64) -> Hit {
        if let Some(i) = self.vessels.iter().position(|v| v.contains(y, x)) {
            return (Tissue::Coronary, i);
        }
        if self.aorta.is_some_and(|a| a.contains(y, x)) {
            return (Tissue::Aorta, 0);
        }
        if let Some(i) = self.bones.iter().position(|b| b.contains(y, x)) {
            return (Tissue::Bone, i);
        }
        if self.lung.is_some_and(|l| l.contains(y, x)) {
            return (Tissue::Lung, 0);
        }
        (Tissue::Background, 0)
    }
}

/// Smooth deformation `T(p) = c + R(p − c) + u(p)` where `u` is a sum of
/// low-frequency sinusoids and `R` a small rotation about the image center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    pub center: (f64, f64),
    pub angle: f64,
    /// `(ky, kx, phase, amp_y, amp_x)` in cycles per image.
    pub modes: Vec<(f64, f64, f64, f64, f64)>,
    pub size: f64,
}

impl Misalignment {
    pub fn identity(size: usize) -> Self {
        let c = (size as f64 - 1.0) / 2.0;
        Self { center: (c, c), angle: 0.0, modes: Vec::new(), size: size as f64 }
    }

    pub fn sample(size: usize, warp_max: f64, rotation_deg: f64, r: &mut Rng) -> Self {
        let mut m = Self::identity(size);
        if rotation_deg > 0.0 {
            m.angle = r.random_range(-rotation_deg..=rotation_deg).to_radians();
        }
        if warp_max > 0.0 {
            let modes: Vec<_> = (0..3)
                .map(|_| {
                    (
                        r.random_range(-1.5..1.5),
                        r.random_range(-1.5..1.5),
                        r.random_range(0.0..2.0 * PI),
                        r.random_range(-1.0..1.0),
                        r.random_range(-1.0..1.0),
                    )
                })
                .collect();
            m.modes = modes;
            let peak = (0..size * size)
                .map(|k| {
                    let (dy, dx) = m.field((k / size) as f64, (k % size) as f64);
                    dy.hypot(dx)
                })
                .fold(0.0, f64::max);
            let target = warp_max * r.random_range(0.5..=1.0);
            if peak > 0.0 {
                for md in &mut m.modes {
                    md.3 *= target / peak;
                    md.4 *= target / peak;
                }
            }
        }
        m
    }

    /// Smooth displacement part `u(p)`.
    pub fn field(&self, y: f64, x: f64) -> (f64, f64) {
        self.modes.iter().fold((0.0, 0.0), |(ay, ax), &(ky, kx, ph, my, mx)| {
            let s = (2.0 * PI * (ky * y + kx * x) / self.size + ph).sin();
            (ay + my * s, ax + mx * s)
        })
    }

    pub fn apply(&self, y: f64, x: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (u, v) = self.field(y, x);
        (self.center.0 + c * dy + s * dx + u, self.center.1 - s * dy + c * dx + v)
    }
}
