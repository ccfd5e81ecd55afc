//! Ray-driven forward projection with trilinear sampling.
//!
//! Each ray is clipped to the grid's voxel box and the integrand is sampled
//! at the midpoints of equal sub-intervals no longer than half a voxel.
//! Several integrands can be carried per voxel (`ChannelGrid<C>`) so one
//! traversal yields e.g. all material thickness and density maps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ProjectionGeometry;
use crate::io;
use crate::physics::{hu_to_mu, DensityMap, Material, MaterialModel};
use crate::raster::Image;
use crate::volume::{grid_bounds, grid_center, validate_grid, Cell, Volume};

/// Placement of a voxel grid: C-order dims, isotropic spacing, first center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub origin_mm: [f64; 3],
}

impl GridFrame {
    pub fn of(v: &Volume) -> Self {
        Self {
            dims: v.dims(),
            spacing_mm: v.spacing_mm(),
            origin_mm: v.origin_mm(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center_mm(&self) -> [f64; 3] {
        grid_center(self.dims, self.spacing_mm, self.origin_mm)
    }

    pub fn bounds_mm(&self) -> ([f64; 3], [f64; 3]) {
        grid_bounds(self.dims, self.spacing_mm, self.origin_mm)
    }

    /// Ray parameter interval `[t0, t1]` (t ≥ 0) inside the voxel box.
    pub fn clip(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
        clip_to_box(self.bounds_mm(), origin, dir)
    }
}

/// Something with `C` values per voxel that can be integrated along rays.
pub trait Integrand<const C: usize>: Sync {
    fn frame(&self) -> &GridFrame;
    /// Adds `w` times the channels of voxel `idx` to `acc`.
    fn accumulate(&self, idx: usize, w: f64, acc: &mut [f64; C]);
}

/// Voxel grid carrying `C` interpolated channels per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid<const C: usize> {
    frame: GridFrame,
    data: Vec<[f32; C]>,
}

pub type ScalarGrid = ChannelGrid<1>;

impl<const C: usize> ChannelGrid<C> {
    pub fn new(dims: [usize; 3], spacing_mm: f64, origin_mm: [f64; 3], data: Vec<[f32; C]>) -> Result<Self> {
        validate_grid(dims, spacing_mm, origin_mm)?;
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid("channel grid size does not match dims"));
        }
        Ok(Self {
            frame: GridFrame {
                dims,
                spacing_mm,
                origin_mm,
            },
            data,
        })
    }

    /// Per-voxel map of a volume into `C` channels.
    pub fn from_volume(v: &Volume, f: impl Fn(f32) -> [f32; C] + Sync) -> Self {
        Self {
            frame: GridFrame::of(v),
            data: v.values().par_iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn center_mm(&self) -> [f64; 3] {
        self.frame.center_mm()
    }
}

impl<const C: usize> Integrand<C> for ChannelGrid<C> {
    fn frame(&self) -> &GridFrame {
        &self.frame
    }

    #[inline]
    fn accumulate(&self, idx: usize, w: f64, acc: &mut [f64; C]) {
        let v = &self.data[idx];
        for c in 0..C {
            acc[c] += w * v[c] as f64;
        }
    }
}

impl ScalarGrid {
    pub fn from_scalar_volume(v: &Volume) -> Self {
        Self::from_volume(v, |x| [x])
    }
}

/// Material label plus density per voxel. Integrates to four path lengths
/// (mm) followed by four areal densities (g/cm²), in [`Material::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialGrid {
    frame: GridFrame,
    labels: Vec<u8>,
    /// Density / 10, so mm path lengths give g/cm².
    density: Vec<f32>,
}

impl MaterialGrid {
    pub fn new(v: &Volume, density: &DensityMap) -> Self {
        let (labels, density) = v
            .values()
            .par_iter()
            .map(|&hu| (Material::from_hu(hu) as u8, (density.density(hu) * 0.1) as f32))
            .unzip();
        Self {
            frame: GridFrame::of(v),
            labels,
            density,
        }
    }
}

impl Integrand<8> for MaterialGrid {
    fn frame(&self) -> &GridFrame {
        &self.frame
    }

    #[inline]
    fn accumulate(&self, idx: usize, w: f64, acc: &mut [f64; 8]) {
        let m = self.labels[idx] as usize;
        acc[m] += w;
        acc[4 + m] += w * self.density[idx] as f64;
    }
}

fn check_ray(origin: [f64; 3], dir: [f64; 3]) -> Result<()> {
    if origin.iter().chain(dir.iter()).any(|x| !x.is_finite()) {
        return Err(Error::invalid("ray origin and direction must be finite"));
    }
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("ray direction must be unit length, got |d| = {n}")));
    }
    Ok(())
}

/// Slab-method clip of `origin + t·dir`, `t ≥ 0`, against an axis-aligned box.
pub fn clip_to_box((lo, hi): ([f64; 3], [f64; 3]), origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0).then_some((t0, t1))
}

/// Integrals of every channel along a unit-direction ray (channel · mm),
/// with sub-intervals of at most `step_fraction` voxels (0.5 by default).
pub fn integrate<const C: usize, G: Integrand<C> + ?Sized>(
    grid: &G,
    origin: [f64; 3],
    dir: [f64; 3],
    step_fraction: f64,
) -> Result<[f64; C]> {
    check_ray(origin, dir)?;
    if !(step_fraction > 0.0) {
        return Err(Error::invalid("step fraction must be > 0"));
    }
    Ok(integrate_unchecked(grid, origin, dir, step_fraction))
}

fn integrate_unchecked<const C: usize, G: Integrand<C> + ?Sized>(
    grid: &G,
    origin: [f64; 3],
    dir: [f64; 3],
    step_fraction: f64,
) -> [f64; C] {
    let mut acc = [0.0f64; C];
    let frame = grid.frame();
    let Some((t0, t1)) = frame.clip(origin, dir) else {
        return acc;
    };
    let s = frame.spacing_mm;
    let n = ((t1 - t0) / (step_fraction * s)).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / n as f64;
    let f0 = [0, 1, 2].map(|a| (origin[a] - frame.origin_mm[a]) / s);
    let df = dir.map(|d| d / s);
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * dt;
        let f = [f0[0] + t * df[0], f0[1] + t * df[1], f0[2] + t * df[2]];
        let Some(cell) = Cell::locate(frame.dims, f) else {
            continue;
        };
        cell.for_each_corner(|idx, w| grid.accumulate(idx, w, &mut acc));
    }
    for a in acc.iter_mut() {
        *a *= dt;
    }
    acc
}

/// Line integral of a scalar grid along a unit-direction ray (value · mm).
pub fn line_integral(grid: &ScalarGrid, origin: [f64; 3], dir: [f64; 3]) -> Result<f64> {
    Ok(integrate(grid, origin, dir, 0.5)?[0])
}

/// Projects every channel of `grid` for every view and pixel. The isocenter
/// is the grid center. Returns `[view][channel]` images.
pub fn project_channels<const C: usize, G: Integrand<C> + ?Sized>(
    grid: &G,
    g: &ProjectionGeometry,
) -> Result<Vec<[Image; C]>> {
    g.validate()?;
    let (w, h) = (g.width(), g.height());
    let iso = grid.frame().center_mm();
    let frames = (0..g.n_views()).map(|v| g.view_frame(v)).collect::<Result<Vec<_>>>()?;
    let mut buf = vec![[0.0f64; C]; g.n_views() * w * h];
    buf.par_chunks_mut(w).enumerate().for_each(|(row_id, row)| {
        let (view, v) = (row_id / h, row_id % h);
        let frame = &frames[view];
        for (u, out) in row.iter_mut().enumerate() {
            let (o, d) = g.ray_through(frame, u as f64, v as f64);
            let o = [o[0] + iso[0], o[1] + iso[1], o[2] + iso[2]];
            *out = integrate_unchecked(grid, o, d, 0.5);
        }
    });
    Ok(buf
        .chunks(w * h)
        .map(|view| {
            std::array::from_fn(|c| Image {
                width: w,
                height: h,
                data: view.iter().map(|px| px[c]).collect(),
            })
        })
        .collect())
}

/// What a stack's pixels mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// ∫μ dl, dimensionless.
    LineIntegral,
    /// Path length through one material, mm.
    MaterialThickness,
    /// ∫ρ dl through one material, g/cm².
    ArealDensity,
    /// Relative transmitted intensity I/I₀.
    Intensity,
    /// Log-transformed, min-max normalized (and possibly gamma adjusted).
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub geometry: ProjectionGeometry,
    pub channel: Channel,
    pub material: Option<Material>,
    pub images: Vec<Image>,
}

/// Sidecar written next to each per-view raw image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewHeader {
    pub geometry: ProjectionGeometry,
    pub channel: Channel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<Material>,
    pub view_index: usize,
    pub angle_deg: f64,
    pub width: usize,
    pub height: usize,
    pub dtype: String,
}

impl ProjectionStack {
    pub fn new(geometry: ProjectionGeometry, channel: Channel, material: Option<Material>, images: Vec<Image>) -> Result<Self> {
        if images.len() != geometry.n_views() {
            return Err(Error::invalid(format!(
                "{} images for {} views",
                images.len(),
                geometry.n_views()
            )));
        }
        if images.iter().any(|im| im.width != geometry.width() || im.height != geometry.height()) {
            return Err(Error::invalid("image size differs from the detector"));
        }
        if matches!(channel, Channel::LineIntegral | Channel::MaterialThickness | Channel::ArealDensity)
            && images.iter().any(|im| im.data.iter().any(|&v| !(v >= 0.0)))
        {
            return Err(Error::invalid("integral channels must be >= 0"));
        }
        Ok(Self {
            geometry,
            channel,
            material,
            images,
        })
    }

    pub fn view_paths(dir: &Path, view: usize) -> (PathBuf, PathBuf) {
        (dir.join(format!("view_{view:03}.raw")), dir.join(format!("view_{view:03}.json")))
    }

    /// Writes `view_NNN.raw` (f32 LE) and `view_NNN.json` per view into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (view, img) in self.images.iter().enumerate() {
            let (raw, json) = Self::view_paths(dir, view);
            img.save_f32(&raw)?;
            io::write_json(&json, &self.header(view))?;
        }
        Ok(())
    }

    pub fn header(&self, view: usize) -> ViewHeader {
        ViewHeader {
            geometry: self.geometry.clone(),
            channel: self.channel,
            material: self.material,
            view_index: view,
            angle_deg: self.geometry.angles_deg[view],
            width: self.geometry.width(),
            height: self.geometry.height(),
            dtype: crate::volume::DTYPE_F32LE.to_string(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, first) = Self::view_paths(dir, 0);
        let head: ViewHeader = io::read_json(&first)?;
        let mut images = Vec::with_capacity(head.geometry.n_views());
        for view in 0..head.geometry.n_views() {
            let (raw, json) = Self::view_paths(dir, view);
            let h: ViewHeader = io::read_json(&json)?;
            if h.geometry != head.geometry || h.channel != head.channel || h.view_index != view {
                return Err(Error::Parse {
                    path: json,
                    reason: "view header disagrees with view 0".into(),
                });
            }
            images.push(Image::load_f32(&raw, h.width, h.height)?);
        }
        Self::new(head.geometry, head.channel, head.material, images)
    }
}

/// Per-voxel material labels.
pub fn decompose_materials(v: &Volume) -> Vec<Material> {
    v.values().par_iter().map(|&hu| Material::from_hu(hu)).collect()
}

/// Line integrals of `μ = μ_water(E)·(1 + HU/1000)` using the bundled water table.
pub fn project_mono(v: &Volume, g: &ProjectionGeometry, energy_kev: f64) -> Result<ProjectionStack> {
    project_mono_with(v, g, &MuConversion::Water(MaterialModel::default().mu_water_per_mm(energy_kev)?))
}

/// HU → μ (mm⁻¹) rules for monochromatic projection.
#[derive(Debug, Clone)]
pub enum MuConversion {
    /// `μ_water · (1 + HU/1000)`, clamped at 0.
    Water(f64),
    /// Material class and density lookup at one energy.
    Materials { model: MaterialModel, energy_kev: f64 },
}

impl MuConversion {
    pub fn grid(&self, v: &Volume) -> Result<ScalarGrid> {
        match self {
            MuConversion::Water(mu_w) => {
                let mu_w = *mu_w;
                Ok(ScalarGrid::from_volume(v, move |hu| [hu_to_mu(hu, mu_w) as f32]))
            }
            MuConversion::Materials { model, energy_kev } => {
                let per_material = Material::ALL.map(|m| model.table(m).at(*energy_kev));
                let mut coeff = [0.0; 4];
                for (c, r) in coeff.iter_mut().zip(per_material) {
                    *c = r? * 0.1;
                }
                let density = &model.density;
                Ok(ScalarGrid::from_volume(v, |hu| {
                    [(coeff[Material::from_hu(hu) as usize] * density.density(hu)) as f32]
                }))
            }
        }
    }
}

pub fn project_mono_with(v: &Volume, g: &ProjectionGeometry, conversion: &MuConversion) -> Result<ProjectionStack> {
    let grid = conversion.grid(v)?;
    let images = project_channels(&grid, g)?.into_iter().map(|[im]| im).collect();
    ProjectionStack::new(g.clone(), Channel::LineIntegral, None, images)
}

/// Path length (mm) and areal density (g/cm²) per material and view.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialProjections {
    /// Indexed by `Material as usize`.
    pub thickness: [ProjectionStack; 4],
    pub areal_density: [ProjectionStack; 4],
}

impl MaterialProjections {
    /// The four areal-density maps of one view, in [`Material::ALL`] order.
    pub fn areal_for_view(&self, view: usize) -> [Image; 4] {
        std::array::from_fn(|m| self.areal_density[m].images[view].clone())
    }

    pub fn metal_thickness(&self) -> &ProjectionStack {
        &self.thickness[Material::Metal as usize]
    }
}

pub fn project_materials(v: &Volume, g: &ProjectionGeometry) -> Result<MaterialProjections> {
    project_materials_with(v, g, &DensityMap::default())
}

pub fn project_materials_with(v: &Volume, g: &ProjectionGeometry, density: &DensityMap) -> Result<MaterialProjections> {
    density.validate()?;
    let grid = MaterialGrid::new(v, density);
    let per_view = project_channels(&grid, g)?;
    let stack = |c: usize, channel: Channel| {
        ProjectionStack::new(
            g.clone(),
            channel,
            Some(Material::ALL[c % 4]),
            per_view.iter().map(|imgs| imgs[c].clone()).collect(),
        )
    };
    Ok(MaterialProjections {
        thickness: [
            stack(0, Channel::MaterialThickness)?,
            stack(1, Channel::MaterialThickness)?,
            stack(2, Channel::MaterialThickness)?,
            stack(3, Channel::MaterialThickness)?,
        ],
        areal_density: [
            stack(4, Channel::ArealDensity)?,
            stack(5, Channel::ArealDensity)?,
            stack(6, Channel::ArealDensity)?,
            stack(7, Channel::ArealDensity)?,
        ],
    })
}
