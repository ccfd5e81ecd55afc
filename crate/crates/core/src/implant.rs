//! Parametric implant models as signed distance functions, and their
//! center-sampled voxelization.
//!
//! Every model lives in its own frame with the long axis along `z` (plates:
//! length along `x`, thickness along `z`) and the origin at the middle of
//! the axial extent. That origin is the placement anchor.
//!
//! Parameter ranges used by [`random_implant`] are engineering choices for
//! orthopaedic hardware around the knee, not measured distributions.

use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImplantKind {
    Kwire,
    Screw,
    Plate,
}

impl ImplantKind {
    pub const ALL: [ImplantKind; 3] = [ImplantKind::Kwire, ImplantKind::Screw, ImplantKind::Plate];
}

impl std::str::FromStr for ImplantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kwire" | "k-wire" => Ok(ImplantKind::Kwire),
            "screw" => Ok(ImplantKind::Screw),
            "plate" => Ok(ImplantKind::Plate),
            other => Err(Error::invalid(format!("unknown implant kind {other:?}"))),
        }
    }
}

/// Kirschner wire: cylinder with a conical tip at `+z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kwire {
    pub radius_mm: f64,
    pub length_mm: f64,
    pub tip_length_mm: f64,
}

/// Bone screw: core shaft plus a single-start triangular thread, with a
/// cylindrical head at `+z`. `shaft_radius_mm` is the thread crest radius;
/// the core radius is `shaft_radius_mm - thread_depth_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screw {
    pub shaft_radius_mm: f64,
    pub length_mm: f64,
    pub thread_pitch_mm: f64,
    pub thread_depth_mm: f64,
    pub head_radius_mm: f64,
    pub head_height_mm: f64,
}

/// Fixation plate with a row of through holes along its length. With a bend
/// radius the plate is wrapped around an axis parallel to `y`, ends curling
/// toward `+z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plate {
    pub length_mm: f64,
    pub width_mm: f64,
    pub thickness_mm: f64,
    pub bend_radius_mm: Option<f64>,
    pub hole_radius_mm: f64,
    pub hole_count: u32,
    pub hole_spacing_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImplantModel {
    Kwire(Kwire),
    Screw(Screw),
    Plate(Plate),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be > 0, got {v}")))
    }
}

impl ImplantModel {
    pub fn kind(&self) -> ImplantKind {
        match self {
            ImplantModel::Kwire(_) => ImplantKind::Kwire,
            ImplantModel::Screw(_) => ImplantKind::Screw,
            ImplantModel::Plate(_) => ImplantKind::Plate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ImplantModel::Kwire(k) => {
                positive("radius_mm", k.radius_mm)?;
                positive("length_mm", k.length_mm)?;
                if !(k.tip_length_mm >= 0.0) {
                    return Err(Error::invalid("tip_length_mm must be >= 0"));
                }
                if k.tip_length_mm >= k.length_mm {
                    return Err(Error::invalid("kwire tip must be shorter than the wire"));
                }
            }
            ImplantModel::Screw(s) => {
                positive("shaft_radius_mm", s.shaft_radius_mm)?;
                positive("length_mm", s.length_mm)?;
                positive("thread_pitch_mm", s.thread_pitch_mm)?;
                positive("thread_depth_mm", s.thread_depth_mm)?;
                positive("head_radius_mm", s.head_radius_mm)?;
                positive("head_height_mm", s.head_height_mm)?;
                if s.thread_depth_mm >= s.shaft_radius_mm {
                    return Err(Error::invalid("thread depth must be below the shaft radius"));
                }
                if s.head_height_mm >= s.length_mm {
                    return Err(Error::invalid("screw head must be shorter than the screw"));
                }
            }
            ImplantModel::Plate(p) => {
                positive("length_mm", p.length_mm)?;
                positive("width_mm", p.width_mm)?;
                positive("thickness_mm", p.thickness_mm)?;
                positive("hole_radius_mm", p.hole_radius_mm)?;
                positive("hole_spacing_mm", p.hole_spacing_mm)?;
                if p.hole_count == 0 {
                    return Err(Error::invalid("hole_count must be > 0"));
                }
                let span = p.hole_spacing_mm * (p.hole_count - 1) as f64 + 2.0 * p.hole_radius_mm;
                if span >= p.length_mm {
                    return Err(Error::invalid(format!(
                        "holes span {span} mm, plate is only {} mm long",
                        p.length_mm
                    )));
                }
                if 2.0 * p.hole_radius_mm >= p.width_mm {
                    return Err(Error::invalid("hole diameter must be below the plate width"));
                }
                if let Some(r) = p.bend_radius_mm {
                    positive("bend_radius_mm", r)?;
                    if r <= p.thickness_mm || p.length_mm >= PI * r {
                        return Err(Error::invalid(
                            "bend radius must exceed the thickness and the plate may wrap at most half a turn",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Signed distance in mm (negative inside) at a point of the model frame.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match self {
            ImplantModel::Kwire(k) => kwire_sdf(k, p),
            ImplantModel::Screw(s) => screw_sdf(s, p),
            ImplantModel::Plate(pl) => plate_sdf(pl, p),
        }
    }

    /// Conservative axis-aligned bounds of the solid in its own frame.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            ImplantModel::Kwire(k) => {
                let r = k.radius_mm;
                let h = 0.5 * k.length_mm;
                ([-r, -r, -h], [r, r, h])
            }
            ImplantModel::Screw(s) => {
                let r = s.shaft_radius_mm.max(s.head_radius_mm);
                let h = 0.5 * s.length_mm;
                ([-r, -r, -h], [r, r, h])
            }
            ImplantModel::Plate(p) => {
                let (hx, hy, ht) = (0.5 * p.length_mm, 0.5 * p.width_mm, 0.5 * p.thickness_mm);
                match p.bend_radius_mm {
                    None => ([-hx, -hy, -ht], [hx, hy, ht]),
                    Some(r) => {
                        let a = hx / r;
                        let x = (r + ht) * a.min(0.5 * PI).sin();
                        let z = r - (r - ht) * a.cos();
                        ([-x, -hy, -ht], [x, hy, z.max(ht)])
                    }
                }
            }
        }
    }

    /// Smallest geometric feature, the resolution limit for voxelization.
    pub fn smallest_feature_mm(&self) -> f64 {
        match *self {
            ImplantModel::Kwire(k) => k.radius_mm,
            ImplantModel::Screw(s) => s.thread_depth_mm,
            ImplantModel::Plate(p) => p.thickness_mm.min(p.hole_radius_mm),
        }
    }
}

/// Signed distance from `p` (model frame, mm) to the implant surface.
pub fn sdf_eval(model: &ImplantModel, p: [f64; 3]) -> f64 {
    model.sdf(p)
}

#[inline]
fn len2(x: f64, y: f64) -> f64 {
    x.hypot(y)
}

/// Exact SDF of a cylinder along `z` with radius `r`, spanning `[z0, z1]`.
#[inline]
fn capped_cylinder(rho: f64, z: f64, r: f64, z0: f64, z1: f64) -> f64 {
    let dx = rho - r;
    let dz = (z - 0.5 * (z0 + z1)).abs() - 0.5 * (z1 - z0);
    dx.max(dz).min(0.0) + len2(dx.max(0.0), dz.max(0.0))
}

/// Exact SDF of a cone frustum along `z`, radius `r0` at `z0` and `r1` at `z1`.
fn capped_cone(rho: f64, z: f64, z0: f64, z1: f64, r0: f64, r1: f64) -> f64 {
    let h = 0.5 * (z1 - z0);
    let qx = rho;
    let qy = z - 0.5 * (z0 + z1);
    let (k1x, k1y) = (r1, h);
    let (k2x, k2y) = (r1 - r0, 2.0 * h);
    let cax = qx - qx.min(if qy < 0.0 { r0 } else { r1 });
    let cay = qy.abs() - h;
    let t = (((k1x - qx) * k2x + (k1y - qy) * k2y) / (k2x * k2x + k2y * k2y)).clamp(0.0, 1.0);
    let cbx = qx - k1x + k2x * t;
    let cby = qy - k1y + k2y * t;
    let s = if cbx < 0.0 && cay < 0.0 { -1.0 } else { 1.0 };
    s * (cax * cax + cay * cay).min(cbx * cbx + cby * cby).sqrt()
}

/// Exact SDF of a 2-D triangle.
fn triangle_2d(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let e = [[b[0] - a[0], b[1] - a[1]], [c[0] - b[0], c[1] - b[1]], [a[0] - c[0], a[1] - c[1]]];
    let v = [[p[0] - a[0], p[1] - a[1]], [p[0] - b[0], p[1] - b[1]], [p[0] - c[0], p[1] - c[1]]];
    let orient = (e[0][0] * e[2][1] - e[0][1] * e[2][0]).signum();
    let mut d2 = f64::INFINITY;
    let mut sign = f64::INFINITY;
    for n in 0..3 {
        let (ex, ey) = (e[n][0], e[n][1]);
        let (vx, vy) = (v[n][0], v[n][1]);
        let t = ((vx * ex + vy * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (px, py) = (vx - ex * t, vy - ey * t);
        d2 = d2.min(px * px + py * py);
        sign = sign.min(orient * (vx * ey - vy * ex));
    }
    -d2.sqrt() * sign.signum()
}

fn kwire_sdf(k: &Kwire, p: [f64; 3]) -> f64 {
    let rho = len2(p[0], p[1]);
    let h = 0.5 * k.length_mm;
    let tip_base = h - k.tip_length_mm;
    let shaft = capped_cylinder(rho, p[2], k.radius_mm, -h, tip_base);
    if k.tip_length_mm == 0.0 {
        return shaft;
    }
    let tip = capped_cone(rho, p[2], tip_base, h, k.radius_mm, 0.0);
    shaft.min(tip)
}

/// Half base width of the thread profile: a 60° V, capped so neighbouring
/// turns do not overlap.
pub(crate) fn thread_half_width(s: &Screw) -> f64 {
    (s.thread_depth_mm * (PI / 6.0).tan()).min(0.5 * s.thread_pitch_mm)
}

/// Axial offset of `(x, y, z)` from the nearest thread crest, in `[-pitch/2, pitch/2]`.
pub(crate) fn thread_phase(s: &Screw, p: [f64; 3]) -> f64 {
    let turn = p[1].atan2(p[0]) / (2.0 * PI);
    let u = p[2] - s.thread_pitch_mm * turn;
    u - s.thread_pitch_mm * (u / s.thread_pitch_mm).round()
}

fn screw_sdf(s: &Screw, p: [f64; 3]) -> f64 {
    let rho = len2(p[0], p[1]);
    let h = 0.5 * s.length_mm;
    let head_base = h - s.head_height_mm;
    let core_r = s.shaft_radius_mm - s.thread_depth_mm;
    let core = capped_cylinder(rho, p[2], core_r, -h, head_base);
    let head = capped_cylinder(rho, p[2], s.head_radius_mm, head_base, h);

    // Helical sweep: distance to the triangular profile in the unrolled
    // (radius, axial phase) half-plane, rescaled by the helix stretch so the
    // result stays a distance lower bound outside the core.
    let w = thread_half_width(s);
    let phase = thread_phase(s, p);
    let profile = triangle_2d(
        [rho - core_r, phase],
        [0.0, -w],
        [s.thread_depth_mm, 0.0],
        [0.0, w],
    );
    let stretch = (1.0 + (s.thread_pitch_mm / (2.0 * PI * core_r)).powi(2)).sqrt();
    let slab = (-h - p[2]).max(p[2] - head_base);
    let thread = (profile / stretch).max(slab);
    core.min(head).min(thread)
}

fn flat_plate_sdf(pl: &Plate, p: [f64; 3]) -> f64 {
    let q = [
        p[0].abs() - 0.5 * pl.length_mm,
        p[1].abs() - 0.5 * pl.width_mm,
        p[2].abs() - 0.5 * pl.thickness_mm,
    ];
    let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2) + q[2].max(0.0).powi(2)).sqrt();
    let boxd = outside + q[0].max(q[1]).max(q[2]).min(0.0);

    // Nearest hole only: holes are disjoint and sit on the x axis.
    let n = pl.hole_count as f64;
    let first = -0.5 * (n - 1.0) * pl.hole_spacing_mm;
    let idx = ((p[0] - first) / pl.hole_spacing_mm).round().clamp(0.0, n - 1.0);
    let hx = first + idx * pl.hole_spacing_mm;
    let hole = len2(p[0] - hx, p[1]) - pl.hole_radius_mm;
    boxd.max(-hole)
}

/// Maps a point around the bend axis to the flat plate frame: arc length
/// becomes `x`, radial depth becomes `z`.
pub(crate) fn unbend(radius: f64, p: [f64; 3]) -> ([f64; 3], f64) {
    let dz = radius - p[2];
    let r = len2(p[0], dz);
    let alpha = p[0].atan2(dz);
    ([radius * alpha, p[1], radius - r], r)
}

fn plate_sdf(pl: &Plate, p: [f64; 3]) -> f64 {
    match pl.bend_radius_mm {
        None => flat_plate_sdf(pl, p),
        Some(radius) => {
            let (q, r) = unbend(radius, p);
            // Arc length is stretched by radius/r inside the bend.
            flat_plate_sdf(pl, q) * (r / radius).min(1.0)
        }
    }
}

/// Binary voxelization of an implant in its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub origin_mm: [f64; 3],
    pub mask: Vec<bool>,
    pub warnings: Vec<String>,
}

impl BinaryVolume {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.mask[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + i as f64 * self.spacing_mm,
            self.origin_mm[1] + j as f64 * self.spacing_mm,
            self.origin_mm[2] + k as f64 * self.spacing_mm,
        ]
    }

    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.spacing_mm.powi(3)
    }

    /// Number of 26-connected components of the true voxels.
    pub fn component_count(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let mut seen = vec![false; self.mask.len()];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..self.mask.len() {
            if !self.mask[start] || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(idx) = stack.pop() {
                let (i, j, k) = (idx / (ny * nz), (idx / nz) % ny, idx % nz);
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        for dk in -1i64..=1 {
                            let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                            if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                                continue;
                            }
                            let n = (a as usize * ny + b as usize) * nz + c as usize;
                            if self.mask[n] && !seen[n] {
                                seen[n] = true;
                                stack.push(n);
                            }
                        }
                    }
                }
            }
        }
        components
    }
}

/// Marks every voxel whose center has `sdf <= 0`. The grid is centered on
/// the model bounds with one voxel of margin on each side.
pub fn voxelize(model: &ImplantModel, spacing_mm: f64) -> Result<BinaryVolume> {
    model.validate()?;
    positive("spacing_mm", spacing_mm)?;
    let mut warnings = Vec::new();
    let feature = model.smallest_feature_mm();
    if spacing_mm > feature {
        let msg = format!(
            "spacing {spacing_mm} mm exceeds the smallest {:?} feature ({feature} mm)",
            model.kind()
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let (lo, hi) = model.bounds();
    // Grid box = bounds grown by one voxel on each side; the first voxel's
    // lower face sits at `lo - spacing`.
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / spacing_mm - 1e-9).ceil().max(0.0) as usize + 2);
    let origin = [0, 1, 2].map(|a| lo[a] - 0.5 * spacing_mm);
    let plane = dims[1] * dims[2];
    let mut mask = vec![false; plane * dims[0]];
    mask.par_chunks_mut(plane).enumerate().for_each(|(i, slab)| {
        let x = origin[0] + i as f64 * spacing_mm;
        for j in 0..dims[1] {
            let y = origin[1] + j as f64 * spacing_mm;
            for k in 0..dims[2] {
                let z = origin[2] + k as f64 * spacing_mm;
                slab[j * dims[2] + k] = model.sdf([x, y, z]) <= 0.0;
            }
        }
    });
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyVoxelization { spacing_mm });
    }
    Ok(BinaryVolume {
        dims,
        spacing_mm,
        origin_mm: origin,
        mask,
        warnings,
    })
}

/// Which implant class [`random_implant`] should draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindSelector {
    #[default]
    Any,
    Only(ImplantKind),
}

impl From<ImplantKind> for KindSelector {
    fn from(kind: ImplantKind) -> Self {
        KindSelector::Only(kind)
    }
}

/// Sampling ranges (mm) used by [`random_implant`].
pub mod ranges {
    pub const KWIRE_RADIUS: (f64, f64) = (0.5, 1.5);
    pub const KWIRE_LENGTH: (f64, f64) = (50.0, 150.0);
    pub const KWIRE_TIP: (f64, f64) = (2.0, 6.0);
    pub const SCREW_LENGTH: (f64, f64) = (20.0, 80.0);
    pub const SCREW_RADIUS: (f64, f64) = (1.5, 3.25);
    pub const SCREW_PITCH: (f64, f64) = (1.0, 2.75);
    /// Fraction of the shaft radius.
    pub const SCREW_DEPTH_FRACTION: (f64, f64) = (0.25, 0.4);
    /// Multiple of the shaft radius.
    pub const SCREW_HEAD_RADIUS_FACTOR: (f64, f64) = (1.6, 2.0);
    pub const SCREW_HEAD_HEIGHT: (f64, f64) = (2.5, 4.5);
    pub const PLATE_LENGTH: (f64, f64) = (60.0, 160.0);
    pub const PLATE_WIDTH: (f64, f64) = (10.0, 16.0);
    pub const PLATE_THICKNESS: (f64, f64) = (2.0, 4.0);
    pub const PLATE_BEND_RADIUS: (f64, f64) = (60.0, 250.0);
    pub const PLATE_FLAT_PROBABILITY: f64 = 0.3;
    pub const PLATE_HOLE_RADIUS: (f64, f64) = (1.6, 2.6);
    pub const PLATE_HOLE_SPACING: (f64, f64) = (8.0, 14.0);
    pub const PLATE_MAX_HOLES: u32 = 12;
    /// Solid plate kept beyond the outermost holes, both ends together.
    pub const PLATE_END_MARGIN: f64 = 10.0;
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

/// Draws an implant with parameters uniform over [`ranges`]; deterministic per seed.
pub fn random_implant(seed: u64, selector: impl Into<KindSelector>) -> ImplantModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = match selector.into() {
        KindSelector::Only(kind) => kind,
        KindSelector::Any => ImplantKind::ALL[rng.random_range(0..3)],
    };
    let model = match kind {
        ImplantKind::Kwire => ImplantModel::Kwire(Kwire {
            radius_mm: uniform(&mut rng, ranges::KWIRE_RADIUS),
            length_mm: uniform(&mut rng, ranges::KWIRE_LENGTH),
            tip_length_mm: uniform(&mut rng, ranges::KWIRE_TIP),
        }),
        ImplantKind::Screw => {
            let shaft = uniform(&mut rng, ranges::SCREW_RADIUS);
            ImplantModel::Screw(Screw {
                shaft_radius_mm: shaft,
                length_mm: uniform(&mut rng, ranges::SCREW_LENGTH),
                thread_pitch_mm: uniform(&mut rng, ranges::SCREW_PITCH),
                thread_depth_mm: shaft * uniform(&mut rng, ranges::SCREW_DEPTH_FRACTION),
                head_radius_mm: shaft * uniform(&mut rng, ranges::SCREW_HEAD_RADIUS_FACTOR),
                head_height_mm: uniform(&mut rng, ranges::SCREW_HEAD_HEIGHT),
            })
        }
        ImplantKind::Plate => {
            let length = uniform(&mut rng, ranges::PLATE_LENGTH);
            let width = uniform(&mut rng, ranges::PLATE_WIDTH);
            let thickness = uniform(&mut rng, ranges::PLATE_THICKNESS);
            let bend = if rng.random::<f64>() < ranges::PLATE_FLAT_PROBABILITY {
                None
            } else {
                Some(uniform(&mut rng, ranges::PLATE_BEND_RADIUS))
            };
            let hole_radius = uniform(&mut rng, ranges::PLATE_HOLE_RADIUS);
            let spacing = uniform(&mut rng, ranges::PLATE_HOLE_SPACING);
            let fit = ((length - 2.0 * hole_radius - ranges::PLATE_END_MARGIN) / spacing).floor() as u32 + 1;
            ImplantModel::Plate(Plate {
                length_mm: length,
                width_mm: width,
                thickness_mm: thickness,
                bend_radius_mm: bend,
                hole_radius_mm: hole_radius,
                hole_count: fit.clamp(1, ranges::PLATE_MAX_HOLES),
                hole_spacing_mm: spacing,
            })
        }
    };
    debug_assert!(model.validate().is_ok(), "{model:?}");
    model
}
