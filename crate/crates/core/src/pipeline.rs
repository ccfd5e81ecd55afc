//! Dataset generation: anatomy → implants → projections → augmentation →
//! masks, plus the manifest that ties the files together.
//!
//! Output layout under the output directory:
//!
//! ```text
//! manifest.json
//! scene_000/projections/view_000.{raw,json}   normalized f32 image + sidecar
//! scene_000/masks/view_000.{raw,json}         1 byte per pixel, 0 or 1
//! scene_000/png16/view_000.png                optional 16-bit export
//! ```
//!
//! All paths in the manifest are relative to the manifest's directory.

use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{uniform_angles, ProjectionGeometry};
use crate::io;
use crate::physics::{
    add_poisson_noise, gamma_adjust, hu_to_mu, log_normalize, metal_mask, polychromatic_intensity,
    AttenuationTable, AugmentationConfig, Material, MaterialModel, Spectrum, DEFAULT_MASK_EPSILON_MM,
};
use crate::projector::{project_channels, project_materials_with, ChannelGrid, Channel, ProjectionStack};
use crate::raster::{Image, Mask, RasterHeader};
use crate::scene::{place_implants, ComposedScene, Placement};
use crate::volume::{crop_slices, resample, synth_phantom, PhantomSpec, Volume};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Environment variable naming the default root for relative data paths.
pub const DATA_DIR_ENV: &str = "XPF_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsMode {
    Mono,
    #[default]
    Poly,
}

/// Where scene anatomy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnatomySource {
    /// Seeded knee phantom per scene.
    Phantom { dims: [usize; 3], spacing_mm: f64 },
    /// Volume file stems (`<stem>.vol.raw` + `.vol.json`), used round-robin.
    /// Relative stems resolve against the data root.
    Files { stems: Vec<PathBuf> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub n_scenes: usize,
    pub n_implants_per_scene: usize,
    pub geometry: ProjectionGeometry,
    pub mode: PhysicsMode,
    /// Energy used for μ in mono mode.
    pub mono_energy_kev: f64,
    pub augmentation: AugmentationConfig,
    pub split: SplitConfig,
    pub output_dir: PathBuf,
    pub target_spacing_mm: f64,
    /// Contiguous slices kept along the first axis.
    pub crop_slices: usize,
    pub anatomy: AnatomySource,
    pub mask_epsilon_mm: f64,
    /// Optional spectrum CSV replacing the bundled 90 kVp spectrum.
    pub spectrum_path: Option<PathBuf>,
    /// Optional directory with `{air,soft_tissue,bone,metal}.csv`.
    pub attenuation_dir: Option<PathBuf>,
    /// Root for relative paths; falls back to `XPF_DATA_DIR`, then the cwd.
    pub data_dir: Option<PathBuf>,
    pub export_png16: bool,
    pub desk_scale: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_scenes: 50,
            n_implants_per_scene: 4,
            geometry: ProjectionGeometry::default(),
            mode: PhysicsMode::default(),
            mono_energy_kev: 60.0,
            augmentation: AugmentationConfig::default(),
            split: SplitConfig { train: 45, val: 5 },
            output_dir: PathBuf::from("dataset"),
            target_spacing_mm: 0.5,
            crop_slices: 600,
            anatomy: AnatomySource::Phantom {
                dims: [1000, 600, 600],
                spacing_mm: 0.5,
            },
            mask_epsilon_mm: DEFAULT_MASK_EPSILON_MM,
            spectrum_path: None,
            attenuation_dir: None,
            data_dir: None,
            export_png16: false,
            desk_scale: false,
        }
    }
}

impl PipelineConfig {
    /// CI-sized settings: 2 scenes, 8 views, 244² detector with the same
    /// field of view, 150³ volumes.
    pub fn desk_scale() -> Self {
        Self::default().with_desk_scale()
    }

    pub fn with_desk_scale(mut self) -> Self {
        self.desk_scale = true;
        self.n_scenes = 2;
        self.split = SplitConfig { train: 1, val: 1 };
        self.geometry.angles_deg = uniform_angles(8);
        self.geometry.detector_pixels = [244, 244];
        self.geometry.pixel_pitch_mm = 0.305 * 4.0;
        self.crop_slices = 150;
        self.anatomy = AnatomySource::Phantom {
            dims: [250, 150, 150],
            spacing_mm: self.target_spacing_mm,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 || self.n_implants_per_scene == 0 || self.crop_slices == 0 {
            return Err(Error::invalid("scene, implant and crop counts must be >= 1"));
        }
        if self.split.train == 0 || self.split.val == 0 || self.split.train + self.split.val != self.n_scenes {
            return Err(Error::invalid(format!(
                "split {}+{} must cover {} scenes with both parts >= 1",
                self.split.train, self.split.val, self.n_scenes
            )));
        }
        self.geometry.validate()?;
        self.augmentation.validate()?;
        if !(self.mono_energy_kev > 0.0) {
            return Err(Error::invalid("mono_energy_kev must be > 0"));
        }
        if !(self.target_spacing_mm > 0.0 && self.target_spacing_mm.is_finite()) {
            return Err(Error::invalid("target_spacing_mm must be > 0"));
        }
        if !(self.mask_epsilon_mm >= 0.0) {
            return Err(Error::invalid("mask_epsilon_mm must be >= 0"));
        }
        match &self.anatomy {
            AnatomySource::Phantom { dims, spacing_mm } => {
                if !(*spacing_mm > 0.0) || dims.contains(&0) {
                    return Err(Error::invalid("phantom dims must be >= 1 and spacing > 0"));
                }
                let slices = (dims[0] as f64 * spacing_mm / self.target_spacing_mm).floor() as usize;
                if slices < self.crop_slices {
                    return Err(Error::invalid(format!(
                        "phantom has about {slices} slices at {} mm, fewer than the {} to crop",
                        self.target_spacing_mm, self.crop_slices
                    )));
                }
            }
            AnatomySource::Files { stems } => {
                if stems.is_empty() {
                    return Err(Error::invalid("anatomy file list is empty"));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root().join(p)
        }
    }

    pub fn material_model(&self) -> Result<MaterialModel> {
        let mut model = MaterialModel::default();
        if let Some(p) = &self.spectrum_path {
            model.spectrum = Spectrum::from_csv_file(&self.resolve(p))?;
        }
        if let Some(dir) = &self.attenuation_dir {
            let dir = self.resolve(dir);
            for m in Material::ALL {
                model.tables[m as usize] = AttenuationTable::from_csv_file(&dir.join(format!("{}.csv", m.name())))?;
            }
        }
        model.validate()?;
        Ok(model)
    }

    /// Scene indices in the validation split: the last `split.val` scenes.
    pub fn split_of(&self, scene: usize) -> Split {
        if scene >= self.n_scenes - self.split.val {
            Split::Val
        } else {
            Split::Train
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Counts implied by a config, computed without rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub n_scenes: usize,
    pub views_per_scene: usize,
    pub pairs: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

pub fn plan(cfg: &PipelineConfig) -> Result<DatasetPlan> {
    cfg.validate()?;
    let v = cfg.geometry.n_views();
    Ok(DatasetPlan {
        n_scenes: cfg.n_scenes,
        views_per_scene: v,
        pairs: cfg.n_scenes * v,
        train_pairs: cfg.split.train * v,
        val_pairs: cfg.split.val * v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnatomyRecord {
    Phantom { seed: u64, dims: [usize; 3], spacing_mm: f64 },
    File { stem: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub view: usize,
    pub angle_deg: f64,
    pub projection: PathBuf,
    pub projection_sha256: String,
    pub mask: PathBuf,
    pub mask_sha256: String,
    pub mask_pixels: usize,
    pub gamma: f64,
    pub noise_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png16: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub split: Split,
    pub anatomy: AnatomyRecord,
    pub crop_start: usize,
    pub crop_count: usize,
    pub placements: Vec<Placement>,
    pub views: Vec<ViewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    /// Config echo; `output_dir` is blanked so reruns elsewhere match.
    pub config: PipelineConfig,
    pub scenes: Vec<SceneRecord>,
    pub split: SplitAssignment,
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Reads `manifest.json` from `dir` (or the file itself if `path` is one).
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        io::read_json(&file)
    }

    pub fn pairs(&self) -> usize {
        self.scenes.iter().map(|s| s.views.len()).sum()
    }

    /// Structural checks plus file existence, sizes and checksums.
    pub fn validate(&self, root: &Path) -> Result<()> {
        let bad = |msg: String| Err(Error::Manifest(msg));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("format version {} (expected {FORMAT_VERSION})", self.format_version));
        }
        let n = self.scenes.len();
        let mut seen = vec![0u8; n];
        for &i in self.split.train.iter().chain(&self.split.val) {
            if i >= n {
                return bad(format!("split names scene {i} of {n}"));
            }
            seen[i] += 1;
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return bad(format!("scene {i} appears in {} splits", seen[i]));
        }
        let (w, h) = (self.config.geometry.width(), self.config.geometry.height());
        for (i, scene) in self.scenes.iter().enumerate() {
            if scene.index != i {
                return bad(format!("scene record {i} carries index {}", scene.index));
            }
            let in_train = self.split.train.contains(&i);
            if in_train != (scene.split == Split::Train) {
                return bad(format!("scene {i} split label disagrees with the split lists"));
            }
            if scene.views.len() != self.config.geometry.n_views() {
                return bad(format!("scene {i} has {} views", scene.views.len()));
            }
            for v in &scene.views {
                let proj = root.join(&v.projection);
                let mask = root.join(&v.mask);
                for (path, want) in [(&proj, &v.projection_sha256), (&mask, &v.mask_sha256)] {
                    if !path.is_file() {
                        return bad(format!("missing file {}", path.display()));
                    }
                    let got = io::sha256_file(path)?;
                    if &got != want {
                        return bad(format!("checksum mismatch for {}", path.display()));
                    }
                }
                let proj_len = std::fs::metadata(&proj).map_err(|e| Error::io(&proj, e))?.len();
                let mask_len = std::fs::metadata(&mask).map_err(|e| Error::io(&mask, e))?.len();
                if proj_len != (4 * w * h) as u64 || mask_len != (w * h) as u64 {
                    return bad(format!("scene {i} view {}: file sizes do not match {w}x{h}", v.view));
                }
            }
        }
        Ok(())
    }

    pub fn view(&self, scene: usize, view: usize) -> Result<&ViewRecord> {
        let s = self
            .scenes
            .get(scene)
            .ok_or_else(|| Error::OutOfBounds(format!("scene {scene} of {}", self.scenes.len())))?;
        s.views
            .get(view)
            .ok_or_else(|| Error::OutOfBounds(format!("view {view} of {}", s.views.len())))
    }
}

/// Everything drawn for one scene before rendering.
#[derive(Debug, Clone)]
pub struct SceneSetup {
    pub index: usize,
    pub anatomy_record: AnatomyRecord,
    pub crop_start: usize,
    pub scene: ComposedScene,
    pub noise_seeds: Vec<u64>,
    pub gammas: Vec<f64>,
}

fn scene_rng(cfg: &PipelineConfig, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Draws anatomy, crop, implants, noise seeds and gammas for scene `index`.
pub fn prepare_scene(cfg: &PipelineConfig, index: usize) -> Result<SceneSetup> {
    let mut rng = scene_rng(cfg, index);
    let anatomy_seed = rng.next_u64();
    let crop_u = rng.next_u64();
    let placement_seed = rng.next_u64();
    let views = cfg.geometry.n_views();
    let noise_seeds: Vec<u64> = (0..views).map(|_| rng.next_u64() ^ cfg.augmentation.noise_seed).collect();
    let [g_lo, g_hi] = cfg.augmentation.gamma_range;
    let gammas: Vec<f64> = (0..views)
        .map(|_| if g_lo == g_hi { g_lo } else { rng.random_range(g_lo..=g_hi) })
        .collect();

    let (raw, anatomy_record) = match &cfg.anatomy {
        AnatomySource::Phantom { dims, spacing_mm } => {
            let spec = PhantomSpec::knee(anatomy_seed, *dims, *spacing_mm);
            (
                synth_phantom(&spec)?,
                AnatomyRecord::Phantom {
                    seed: anatomy_seed,
                    dims: *dims,
                    spacing_mm: *spacing_mm,
                },
            )
        }
        AnatomySource::Files { stems } => {
            let stem = &stems[index % stems.len()];
            (Volume::load(&cfg.resolve(stem))?, AnatomyRecord::File { stem: stem.clone() })
        }
    };
    let resampled = resample(&raw, cfg.target_spacing_mm)?;
    drop(raw);
    let n = resampled.dims()[0];
    if n < cfg.crop_slices {
        return Err(Error::OutOfBounds(format!(
            "anatomy has {n} slices, cannot crop {}",
            cfg.crop_slices
        )));
    }
    let crop_start = (crop_u % (n - cfg.crop_slices + 1) as u64) as usize;
    let anatomy = crop_slices(&resampled, crop_start, cfg.crop_slices)?;
    drop(resampled);
    let scene = place_implants(&anatomy, cfg.n_implants_per_scene, placement_seed)?;
    Ok(SceneSetup {
        index,
        anatomy_record,
        crop_start,
        scene,
        noise_seeds,
        gammas,
    })
}

/// Noiseless relative intensity and metal path length for every view.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub intensity: ProjectionStack,
    pub metal_thickness: ProjectionStack,
}

/// Projects a volume with the configured physics mode.
pub fn simulate(volume: &Volume, cfg: &PipelineConfig, model: &MaterialModel) -> Result<Transmission> {
    let g = &cfg.geometry;
    let (intensity, metal) = match cfg.mode {
        PhysicsMode::Mono => {
            let mu_w = model.mu_water_per_mm(cfg.mono_energy_kev)?;
            let grid = ChannelGrid::from_volume(volume, |hu| {
                [hu_to_mu(hu, mu_w) as f32, (Material::from_hu(hu) == Material::Metal) as u8 as f32]
            });
            let per_view = project_channels(&grid, g)?;
            let mut intensity = Vec::with_capacity(per_view.len());
            let mut metal = Vec::with_capacity(per_view.len());
            for [li, t] in per_view {
                intensity.push(li.map(|x| (-x).exp().max(f64::MIN_POSITIVE)));
                metal.push(t);
            }
            (intensity, metal)
        }
        PhysicsMode::Poly => {
            let mp = project_materials_with(volume, g, &model.density)?;
            let intensity = (0..g.n_views())
                .map(|v| polychromatic_intensity(&mp.areal_for_view(v), model))
                .collect::<Result<Vec<_>>>()?;
            let [_, _, _, metal] = mp.thickness;
            (intensity, metal.images)
        }
    };
    Ok(Transmission {
        intensity: ProjectionStack::new(g.clone(), Channel::Intensity, None, intensity)?,
        metal_thickness: ProjectionStack::new(g.clone(), Channel::MaterialThickness, Some(Material::Metal), metal)?,
    })
}

/// Poisson noise per view with the given seeds.
pub fn add_noise(intensity: &ProjectionStack, photons: f64, seeds: &[u64]) -> Result<ProjectionStack> {
    if seeds.len() != intensity.images.len() {
        return Err(Error::invalid("one noise seed per view is required"));
    }
    let images = intensity
        .images
        .iter()
        .zip(seeds)
        .map(|(im, &s)| add_poisson_noise(im, photons, s))
        .collect::<Result<Vec<_>>>()?;
    ProjectionStack::new(intensity.geometry.clone(), Channel::Intensity, None, images)
}

/// `−ln(I/I₀)` per pixel.
pub fn to_line_integral(intensity: &ProjectionStack) -> Result<ProjectionStack> {
    if intensity.channel != Channel::Intensity {
        return Err(Error::invalid("expected an intensity stack"));
    }
    let images = intensity.images.iter().map(|im| im.map(|v| (-v.ln()).max(0.0))).collect();
    ProjectionStack::new(intensity.geometry.clone(), Channel::LineIntegral, None, images)
}

/// One rendered scene, in memory.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub setup: SceneSetup,
    pub transmission: Transmission,
    /// Noisy, log-normalized, gamma-adjusted images in `[0, 1]`.
    pub projections: ProjectionStack,
    pub masks: Vec<Mask>,
}

pub fn render_scene(cfg: &PipelineConfig, model: &MaterialModel, index: usize) -> Result<RenderedScene> {
    let setup = prepare_scene(cfg, index)?;
    debug!("scene {index}: {} implants placed", setup.scene.placements.len());
    let transmission = simulate(&setup.scene.merged, cfg, model)?;
    let noisy = add_noise(&transmission.intensity, cfg.augmentation.photons_per_pixel, &setup.noise_seeds)?;
    let images = noisy
        .images
        .iter()
        .zip(&setup.gammas)
        .map(|(im, &g)| gamma_adjust(&log_normalize(im)?, g))
        .collect::<Result<Vec<_>>>()?;
    let projections = ProjectionStack::new(cfg.geometry.clone(), Channel::Normalized, None, images)?;
    let masks = transmission
        .metal_thickness
        .images
        .iter()
        .map(|t| metal_mask(t, cfg.mask_epsilon_mm))
        .collect();
    Ok(RenderedScene {
        setup,
        transmission,
        projections,
        masks,
    })
}

fn scene_dir(index: usize) -> PathBuf {
    PathBuf::from(format!("scene_{index:03}"))
}

fn write_scene(cfg: &PipelineConfig, root: &Path, r: &RenderedScene) -> Result<SceneRecord> {
    let index = r.setup.index;
    let rel = scene_dir(index);
    let proj_dir = rel.join("projections");
    r.projections.save(&root.join(&proj_dir))?;
    let (w, h) = (cfg.geometry.width(), cfg.geometry.height());
    let mut views = Vec::with_capacity(r.masks.len());
    for (v, mask) in r.masks.iter().enumerate() {
        let projection = proj_dir.join(format!("view_{v:03}.raw"));
        let mask_rel = rel.join("masks").join(format!("view_{v:03}.raw"));
        mask.save(&root.join(&mask_rel))?;
        io::write_json(
            &root.join(mask_rel.with_extension("json")),
            &RasterHeader {
                width: w,
                height: h,
                dtype: "u8".into(),
            },
        )?;
        let png16 = if cfg.export_png16 {
            let p = rel.join("png16").join(format!("view_{v:03}.png"));
            save_png16(&r.projections.images[v], &root.join(&p))?;
            Some(p)
        } else {
            None
        };
        views.push(ViewRecord {
            view: v,
            angle_deg: cfg.geometry.angles_deg[v],
            projection_sha256: io::sha256_file(&root.join(&projection))?,
            projection,
            mask_sha256: io::sha256_file(&root.join(&mask_rel))?,
            mask: mask_rel,
            mask_pixels: mask.count(),
            gamma: r.setup.gammas[v],
            noise_seed: r.setup.noise_seeds[v],
            png16,
        });
    }
    Ok(SceneRecord {
        index,
        split: cfg.split_of(index),
        anatomy: r.setup.anatomy_record.clone(),
        crop_start: r.setup.crop_start,
        crop_count: cfg.crop_slices,
        placements: r.setup.scene.placements.clone(),
        views,
    })
}

/// Renders every scene into `cfg.output_dir` and writes the manifest.
pub fn generate_dataset(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let model = cfg.material_model()?;
    let root = cfg.output_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    info!(
        "generating {} scenes x {} views into {}",
        cfg.n_scenes,
        cfg.geometry.n_views(),
        root.display()
    );
    let mut scenes = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| {
            let rendered = render_scene(cfg, &model, i).map_err(|e| e.in_scene(i))?;
            let record = write_scene(cfg, &root, &rendered).map_err(|e| e.in_scene(i))?;
            info!("scene {i} done");
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    scenes.sort_by_key(|s| s.index);
    let split = SplitAssignment {
        train: (0..cfg.n_scenes).filter(|&i| cfg.split_of(i) == Split::Train).collect(),
        val: (0..cfg.n_scenes).filter(|&i| cfg.split_of(i) == Split::Val).collect(),
    };
    let mut echo = cfg.clone();
    echo.output_dir = PathBuf::from(".");
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION.into(),
        config: echo,
        scenes,
        split,
    };
    manifest.save(&root)?;
    Ok(manifest)
}

/// Threshold rule for subtraction annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Otsu's method per view over the difference histogram.
    Otsu,
    Fixed(f64),
}

/// Otsu threshold over `values` with a 256-bin histogram. Returns the upper
/// edge of the last bin in the lower class; for constant input, that value.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    const BINS: usize = 256;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return hi;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    lo + (best_k + 1) as f64 * width
}

/// Masks where `with − without` exceeds the threshold, per view.
pub fn annotate_by_subtraction(
    with_metal: &ProjectionStack,
    without_metal: &ProjectionStack,
    threshold: Threshold,
) -> Result<Vec<Mask>> {
    if with_metal.geometry != without_metal.geometry || with_metal.images.len() != without_metal.images.len() {
        return Err(Error::invalid("stacks must share geometry and view count"));
    }
    if with_metal.channel != without_metal.channel || with_metal.channel != Channel::LineIntegral {
        return Err(Error::invalid("both stacks must be line integrals (-log intensity)"));
    }
    if let Threshold::Fixed(t) = threshold {
        if !t.is_finite() {
            return Err(Error::invalid("fixed threshold must be finite"));
        }
    }
    with_metal
        .images
        .par_iter()
        .zip(&without_metal.images)
        .map(|(a, b)| {
            if (a.width, a.height) != (b.width, b.height) {
                return Err(Error::invalid("image sizes differ"));
            }
            let diff: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
            let t = match threshold {
                Threshold::Otsu => otsu_threshold(&diff),
                Threshold::Fixed(t) => t,
            };
            Mask::new(a.width, a.height, diff.iter().map(|&d| d > t).collect())
        })
        .collect()
}

/// Loads the masks of a stored stack directory (`view_NNN.raw`, 0/1 bytes).
pub fn load_masks(dir: &Path, n_views: usize, width: usize, height: usize) -> Result<Vec<Mask>> {
    (0..n_views)
        .map(|v| Mask::load(&dir.join(format!("view_{v:03}.raw")), width, height))
        .collect()
}

pub fn save_masks(dir: &Path, masks: &[Mask]) -> Result<()> {
    for (v, m) in masks.iter().enumerate() {
        let raw = dir.join(format!("view_{v:03}.raw"));
        m.save(&raw)?;
        io::write_json(
            &raw.with_extension("json"),
            &RasterHeader {
                width: m.width,
                height: m.height,
                dtype: "u8".into(),
            },
        )?;
    }
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 16-bit grayscale PNG of a `[0, 1]` image.
pub fn save_png16(img: &Image, path: &Path) -> Result<()> {
    let px: Vec<u16> = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width as u32, img.height as u32, px)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path)?;
    Ok(())
}

/// Overlay colour of mask pixels.
pub const OVERLAY_GREEN: [u8; 3] = [0, 255, 0];

/// Writes an 8-bit grayscale PNG of one projection to `out` and a colour
/// overlay with mask pixels in pure green next to it (`<stem>_overlay.png`).
/// Returns both paths.
pub fn preview(manifest_dir: &Path, scene: usize, view: usize, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let m = DatasetManifest::load(manifest_dir)?;
    let root = if manifest_dir.is_dir() {
        manifest_dir.to_path_buf()
    } else {
        manifest_dir.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let rec = m.view(scene, view)?;
    let (w, h) = (m.config.geometry.width(), m.config.geometry.height());
    let img = Image::load_f32(&root.join(&rec.projection), w, h)?;
    let mask = Mask::load(&root.join(&rec.mask), w, h)?;
    let gray: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let rgb: Vec<u8> = gray
        .iter()
        .zip(&mask.data)
        .flat_map(|(&g, &on)| if on { OVERLAY_GREEN } else { [g, g, g] })
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let overlay = out.with_file_name(format!(
        "{}_overlay.png",
        out.file_stem().and_then(|s| s.to_str()).unwrap_or("preview")
    ));
    image::GrayImage::from_raw(w as u32, h as u32, gray)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?
        .save(out)?;
    image::RgbImage::from_raw(w as u32, h as u32, rgb)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?
        .save(&overlay)?;
    Ok((out.to_path_buf(), overlay))
}
