//! HU volumes: storage, trilinear sampling, resampling, slice cropping,
//! file I/O and ellipsoid phantoms.
//!
//! Values are stored C-ordered with the first axis slowest:
//! `index = (i * ny + j) * nz + k`. The first axis is the slice (crop) axis
//! and doubles as the scanner rotation axis.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// HU assigned to samples outside the grid support.
pub const AIR_HU: f32 = -1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: f64,
    origin_mm: [f64; 3],
    values: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: f64,
        origin_mm: [f64; 3],
        values: Vec<f32>,
    ) -> Result<Self> {
        validate_grid(dims, spacing_mm, origin_mm)?;
        let count = dims.iter().product::<usize>();
        if values.len() != count {
            return Err(Error::invalid(format!(
                "volume of dims {dims:?} needs {count} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {pos}")));
        }
        Ok(Self {
            dims,
            spacing_mm,
            origin_mm,
            values,
        })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: f64, origin_mm: [f64; 3], value: f32) -> Result<Self> {
        let count = dims.iter().product::<usize>();
        Self::new(dims, spacing_mm, origin_mm, vec![value; count])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.linear_index(i, j, k)]
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = self.spacing_mm;
        [
            self.origin_mm[0] + i as f64 * s,
            self.origin_mm[1] + j as f64 * s,
            self.origin_mm[2] + k as f64 * s,
        ]
    }

    /// Midpoint of the voxel-center span; the scanner isocenter.
    pub fn center_mm(&self) -> [f64; 3] {
        grid_center(self.dims, self.spacing_mm, self.origin_mm)
    }

    /// Axis-aligned box covering every voxel completely (centers ± half a voxel).
    pub fn bounds_mm(&self) -> ([f64; 3], [f64; 3]) {
        grid_bounds(self.dims, self.spacing_mm, self.origin_mm)
    }

    /// Voxel whose center is nearest to `p`, if `p` lies inside the grid box.
    pub fn nearest_voxel(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.origin_mm[a]) / self.spacing_mm;
            if !(f >= -0.5 && f <= self.dims[a] as f64 - 0.5) {
                return None;
            }
            out[a] = (f.round().max(0.0) as usize).min(self.dims[a] - 1);
        }
        Some(out)
    }

    /// Trilinear sample at a world point; `None` outside the voxel box.
    pub fn sample(&self, p: [f64; 3]) -> Option<f64> {
        let f = [
            (p[0] - self.origin_mm[0]) / self.spacing_mm,
            (p[1] - self.origin_mm[1]) / self.spacing_mm,
            (p[2] - self.origin_mm[2]) / self.spacing_mm,
        ];
        self.sample_index(f)
    }

    /// Trilinear sample at fractional index coordinates.
    pub fn sample_index(&self, f: [f64; 3]) -> Option<f64> {
        let cell = Cell::locate(self.dims, f)?;
        Some(cell.interpolate(|idx| self.values[idx] as f64))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> Volume {
        Volume {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Writes `<stem>.vol.raw` and `<stem>.vol.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (raw, json) = volume_paths(stem);
        io::write_f32_le(&raw, self.values.iter().copied())?;
        io::write_json(
            &json,
            &VolumeHeader {
                dims: self.dims,
                spacing_mm: self.spacing_mm,
                origin_mm: self.origin_mm,
                dtype: DTYPE_F32LE.to_string(),
            },
        )
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (raw, json) = volume_paths(stem);
        let header: VolumeHeader = io::read_json(&json)?;
        if header.dtype != DTYPE_F32LE {
            return Err(Error::Parse {
                path: json,
                reason: format!("unsupported dtype {:?}", header.dtype),
            });
        }
        let count = header.dims.iter().product::<usize>();
        let values = io::read_f32_le(&raw, count)?;
        Self::new(header.dims, header.spacing_mm, header.origin_mm, values)
    }
}

pub const DTYPE_F32LE: &str = "f32le";

/// Sidecar header of a `.vol.raw` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub origin_mm: [f64; 3],
    pub dtype: String,
}

/// `(raw, json)` paths for a volume stem such as `out/anatomy`.
pub fn volume_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = stem.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{base}.vol.raw")),
        PathBuf::from(format!("{base}.vol.json")),
    )
}

pub(crate) fn validate_grid(dims: [usize; 3], spacing_mm: f64, origin_mm: [f64; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!("dims must be >= 1, got {dims:?}")));
    }
    if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
        return Err(Error::invalid(format!("spacing must be > 0, got {spacing_mm}")));
    }
    if origin_mm.iter().any(|o| !o.is_finite()) {
        return Err(Error::invalid("origin must be finite"));
    }
    Ok(())
}

pub(crate) fn grid_center(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| origin[a] + 0.5 * (dims[a] - 1) as f64 * spacing)
}

pub(crate) fn grid_bounds(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    (
        [0, 1, 2].map(|a| origin[a] - 0.5 * spacing),
        [0, 1, 2].map(|a| origin[a] + (dims[a] as f64 - 0.5) * spacing),
    )
}

/// Interpolation cell: eight corner indices with their trilinear weights.
///
/// Support is the voxel box `[-0.5, n - 0.5]` per axis; between the outermost
/// centers and the box faces the edge value is held constant.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    base: [usize; 3],
    step: [usize; 3],
    t: [f64; 3],
    strides: [usize; 2],
}

impl Cell {
    #[inline]
    pub(crate) fn locate(dims: [usize; 3], f: [f64; 3]) -> Option<Cell> {
        let mut base = [0usize; 3];
        let mut step = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let n = dims[a];
            let fa = f[a];
            if !(fa >= -0.5 && fa <= n as f64 - 0.5) {
                return None;
            }
            if n == 1 {
                continue;
            }
            let c = fa.clamp(0.0, (n - 1) as f64);
            let i0 = (c.floor() as usize).min(n - 2);
            base[a] = i0;
            step[a] = 1;
            t[a] = c - i0 as f64;
        }
        Some(Cell {
            base,
            step,
            t,
            strides: [dims[1] * dims[2], dims[2]],
        })
    }

    #[inline]
    pub(crate) fn for_each_corner(&self, mut f: impl FnMut(usize, f64)) {
        let [sx, sy] = self.strides;
        let i0 = self.base[0] * sx + self.base[1] * sy + self.base[2];
        let dx = self.step[0] * sx;
        let dy = self.step[1] * sy;
        let dz = self.step[2];
        let [tx, ty, tz] = self.t;
        let (ux, uy, uz) = (1.0 - tx, 1.0 - ty, 1.0 - tz);
        f(i0, ux * uy * uz);
        f(i0 + dz, ux * uy * tz);
        f(i0 + dy, ux * ty * uz);
        f(i0 + dy + dz, ux * ty * tz);
        f(i0 + dx, tx * uy * uz);
        f(i0 + dx + dz, tx * uy * tz);
        f(i0 + dx + dy, tx * ty * uz);
        f(i0 + dx + dy + dz, tx * ty * tz);
    }

    #[inline]
    pub(crate) fn interpolate(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_corner(|idx, w| acc += w * value(idx));
        acc
    }
}

/// Resamples onto an isotropic grid of `target_spacing_mm`, keeping the
/// first voxel center fixed. The new grid covers as many samples as fit
/// between the first and last input centers; any sample outside the input
/// support would read as air.
pub fn resample(v: &Volume, target_spacing_mm: f64) -> Result<Volume> {
    if !(target_spacing_mm > 0.0 && target_spacing_mm.is_finite()) {
        return Err(Error::invalid(format!(
            "target spacing must be > 0, got {target_spacing_mm}"
        )));
    }
    if target_spacing_mm == v.spacing_mm {
        return Ok(v.clone());
    }
    let ratio = target_spacing_mm / v.spacing_mm;
    let dims = v
        .dims
        .map(|n| ((n - 1) as f64 / ratio + 1e-9).floor() as usize + 1);
    let plane = dims[1] * dims[2];
    let mut values = vec![0.0f32; plane * dims[0]];
    values.par_chunks_mut(plane).enumerate().for_each(|(i, slab)| {
        let fi = i as f64 * ratio;
        for j in 0..dims[1] {
            let fj = j as f64 * ratio;
            for k in 0..dims[2] {
                let fk = k as f64 * ratio;
                slab[j * dims[2] + k] = v
                    .sample_index([fi, fj, fk])
                    .map_or(AIR_HU, |x| x as f32);
            }
        }
    });
    Volume::new(dims, target_spacing_mm, v.origin_mm, values)
}

/// Keeps `count` contiguous slices of the first axis starting at `start`.
pub fn crop_slices(v: &Volume, start: usize, count: usize) -> Result<Volume> {
    let n = v.dims[0];
    if count == 0 {
        return Err(Error::invalid("crop count must be >= 1"));
    }
    match start.checked_add(count) {
        Some(end) if end <= n => {}
        _ => {
            return Err(Error::OutOfBounds(format!(
                "slices {start}..{} exceed the {n} available",
                start as u128 + count as u128
            )))
        }
    }
    let plane = v.dims[1] * v.dims[2];
    let values = v.values[start * plane..(start + count) * plane].to_vec();
    let mut origin = v.origin_mm;
    origin[0] += start as f64 * v.spacing_mm;
    Volume::new([count, v.dims[1], v.dims[2]], v.spacing_mm, origin, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub hu: f32,
}

/// Recipe for a synthetic anatomy volume. The grid origin is `(0, 0, 0)`;
/// ellipsoid centers are given in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing_mm: f64,
    pub parts: Vec<Ellipsoid>,
}

fn default_spacing() -> f64 {
    0.5
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        validate_grid(self.dims, self.spacing_mm, [0.0; 3])?;
        for (n, part) in self.parts.iter().enumerate() {
            if !(-1000.0..=3000.0).contains(&part.hu) {
                return Err(Error::invalid(format!(
                    "phantom part {n}: HU {} outside [-1000, 3000]",
                    part.hu
                )));
            }
            if part.semi_axes_mm.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                return Err(Error::invalid(format!("phantom part {n}: semi-axes must be > 0")));
            }
            if part.center_mm.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("phantom part {n}: center must be finite")));
            }
        }
        Ok(())
    }

    /// Knee-like phantom: soft-tissue envelope, femur, tibia and patella,
    /// with seeded jitter on sizes, positions and bone density.
    /// The leg runs along the first axis.
    pub fn knee(seed: u64, dims: [usize; 3], spacing_mm: f64) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ext = dims.map(|n| n as f64 * spacing_mm);
        let c = dims.map(|n| 0.5 * (n - 1) as f64 * spacing_mm);
        let mut jitter = |scale: f64| 1.0 + scale * (rng.random::<f64>() * 2.0 - 1.0);
        let lateral = ext[1].min(ext[2]);

        let mut parts = Vec::new();
        // Skin/fat envelope, then muscle.
        parts.push(Ellipsoid {
            center_mm: c,
            semi_axes_mm: [0.8 * ext[0], 0.46 * lateral * jitter(0.05), 0.44 * lateral * jitter(0.05)],
            hu: -90.0,
        });
        parts.push(Ellipsoid {
            center_mm: c,
            semi_axes_mm: [0.8 * ext[0], 0.41 * lateral * jitter(0.05), 0.39 * lateral * jitter(0.05)],
            hu: 45.0,
        });
        let joint = c[0] + 0.05 * ext[0] * (jitter(1.0) - 1.0);
        let bone_hu = (1100.0 * jitter(0.15)) as f32;
        let marrow_hu = (250.0 * jitter(0.3)) as f32;
        let shaft = 0.13 * lateral * jitter(0.1);
        // Femur (upper) and tibia (lower), each with a condyle bulb and marrow.
        for (sign, len) in [(-1.0, 0.55), (1.0, 0.5)] {
            let half = len * ext[0];
            let axis_y = c[1] + 0.03 * lateral * (jitter(1.0) - 1.0);
            let axis_z = c[2] + 0.03 * lateral * (jitter(1.0) - 1.0);
            parts.push(Ellipsoid {
                center_mm: [joint + sign * (half + 0.02 * ext[0]), axis_y, axis_z],
                semi_axes_mm: [half, shaft, shaft],
                hu: bone_hu,
            });
            parts.push(Ellipsoid {
                center_mm: [joint + sign * 0.06 * ext[0], axis_y, axis_z],
                semi_axes_mm: [0.06 * ext[0], 1.9 * shaft, 1.5 * shaft],
                hu: bone_hu,
            });
            parts.push(Ellipsoid {
                center_mm: [joint + sign * (half + 0.12 * ext[0]), axis_y, axis_z],
                semi_axes_mm: [0.8 * half, 0.55 * shaft, 0.55 * shaft],
                hu: marrow_hu,
            });
        }
        // Patella, anterior to the joint line.
        parts.push(Ellipsoid {
            center_mm: [joint - 0.03 * ext[0], c[1], c[2] + 2.5 * shaft],
            semi_axes_mm: [0.05 * ext[0], 0.9 * shaft, 0.45 * shaft],
            hu: (bone_hu * 0.85).min(3000.0),
        });
        PhantomSpec {
            seed,
            dims,
            spacing_mm,
            parts,
        }
    }
}

/// Rasterizes a phantom by center-in-ellipsoid tests over a −1000 HU
/// background; later parts overwrite earlier ones.
pub fn synth_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let dims = spec.dims;
    let s = spec.spacing_mm;
    let plane = dims[1] * dims[2];
    let mut values = vec![AIR_HU; plane * dims[0]];
    values.par_chunks_mut(plane).enumerate().for_each(|(i, slab)| {
        let x = i as f64 * s;
        for part in &spec.parts {
            let dx = (x - part.center_mm[0]) / part.semi_axes_mm[0];
            let rem = 1.0 - dx * dx;
            if rem < 0.0 {
                continue;
            }
            let (j0, j1) = index_span(part.center_mm[1], part.semi_axes_mm[1], s, dims[1]);
            let (k0, k1) = index_span(part.center_mm[2], part.semi_axes_mm[2], s, dims[2]);
            for j in j0..j1 {
                let dy = (j as f64 * s - part.center_mm[1]) / part.semi_axes_mm[1];
                let rem_y = rem - dy * dy;
                if rem_y < 0.0 {
                    continue;
                }
                for k in k0..k1 {
                    let dz = (k as f64 * s - part.center_mm[2]) / part.semi_axes_mm[2];
                    if dz * dz <= rem_y {
                        slab[j * dims[2] + k] = part.hu;
                    }
                }
            }
        }
    });
    Volume::new(dims, s, [0.0; 3], values)
}

fn index_span(center: f64, half: f64, s: f64, n: usize) -> (usize, usize) {
    let lo = ((center - half) / s).floor().max(0.0) as usize;
    let hi = (((center + half) / s).ceil() + 1.0).max(0.0) as usize;
    (lo.min(n), hi.min(n))
}
