//! `xpf`: command-line front end for implant forging, scene composition,
//! projection, dataset generation, subtraction annotation, evaluation and
//! previews.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use xpf_core::io::write_json;
use xpf_core::metrics::evaluate;
use xpf_core::pipeline::{
    annotate_by_subtraction, plan, prepare_scene, preview, render_scene, save_masks, simulate, to_line_integral,
    Split, MANIFEST_FILE,
};
use xpf_core::raster::RasterHeader;
use xpf_core::{
    generate_dataset, random_implant, voxelize, DatasetManifest, ImplantKind, KindSelector, Mask, PipelineConfig,
    ProjectionStack, Threshold,
};

#[derive(Parser, Debug)]
#[command(name = "xpf", version, about = "Synthetic X-ray projections with metal implants")]
struct Cli {
    /// Pipeline config (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Shrinks detector, views and volumes to CI size.
    #[arg(long, global = true)]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Any,
    Kwire,
    Screw,
    Plate,
}

impl From<KindArg> for KindSelector {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Any => KindSelector::Any,
            KindArg::Kwire => ImplantKind::Kwire.into(),
            KindArg::Screw => ImplantKind::Screw.into(),
            KindArg::Plate => ImplantKind::Plate.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw random implants and print them as JSON.
    Forge {
        #[arg(long, value_enum, default_value = "any")]
        kind: KindArg,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Also voxelize at this spacing and report voxel counts.
        #[arg(long)]
        spacing_mm: Option<f64>,
    },
    /// Build one scene (anatomy, metal, merged volumes and placements).
    Compose {
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Render one scene: projections, masks and noiseless channels.
    Project {
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Also write the metal-free line integrals for `annotate-diff`.
        #[arg(long)]
        pair: bool,
    },
    /// Render the whole dataset and write `manifest.json`.
    Generate {
        /// Print the planned counts without rendering.
        #[arg(long)]
        dry_run: bool,
    },
    /// Masks from the difference of two line-integral stacks.
    AnnotateDiff {
        #[arg(long = "with")]
        with_metal: PathBuf,
        #[arg(long = "without")]
        without_metal: PathBuf,
        /// `otsu` or a fixed value.
        #[arg(long, default_value = "otsu")]
        threshold: String,
    },
    /// Dice, precision and recall of predicted masks. Prints a JSON report
    /// on stdout and a two-decimal summary on stderr.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth mask directory.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        gt: Option<PathBuf>,
        /// Dataset manifest providing ground truth; predictions mirror its layout.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Grayscale PNG of one projection plus a green mask overlay.
    Preview {
        /// Dataset directory or manifest file.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        view: usize,
        /// Output PNG; defaults to `<out>/preview_sNNN_vNNN.png`.
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if cli.desk_scale || cfg.desk_scale {
        cfg = cfg.with_desk_scale();
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Forge { kind, count, spacing_mm } => {
            let mut items = Vec::with_capacity(count);
            for i in 0..count as u64 {
                let seed = cfg.master_seed.wrapping_add(i);
                let implant = random_implant(seed, kind);
                let mut item = serde_json::json!({ "seed": seed, "implant": implant });
                if let Some(s) = spacing_mm {
                    let b = voxelize(&implant, s)?;
                    item["voxels"] = b.count().into();
                    item["dims"] = serde_json::to_value(b.dims)?;
                    item["warnings"] = serde_json::to_value(&b.warnings)?;
                }
                items.push(item);
            }
            let json = serde_json::Value::Array(items);
            if cli.out.is_some() {
                write_json(&out.join("implants.json"), &json)?;
            }
            println!("{}", serde_json::to_string_pretty(&json)?);
        }
        Command::Compose { scene } => {
            let setup = prepare_scene(&cfg, scene)?;
            let dir = out.join(format!("scene_{scene:03}"));
            std::fs::create_dir_all(&dir)?;
            setup.scene.anatomy.save(&dir.join("anatomy"))?;
            setup.scene.metal.save(&dir.join("metal"))?;
            setup.scene.merged.save(&dir.join("merged"))?;
            write_json(&dir.join("placements.json"), &setup.scene.placements)?;
            println!(
                "scene {scene}: crop start {}, {} implants, volumes in {}",
                setup.crop_start,
                setup.scene.placements.len(),
                dir.display()
            );
        }
        Command::Project { scene, pair } => {
            let model = cfg.material_model()?;
            let r = render_scene(&cfg, &model, scene)?;
            let dir = out.join(format!("scene_{scene:03}"));
            r.projections.save(&dir.join("projections"))?;
            save_masks(&dir.join("masks"), &r.masks)?;
            r.transmission.metal_thickness.save(&dir.join("metal_thickness"))?;
            to_line_integral(&r.transmission.intensity)?.save(&dir.join("line_integral"))?;
            if pair {
                let without = simulate(&r.setup.scene.anatomy, &cfg, &model)?;
                to_line_integral(&without.intensity)?.save(&dir.join("line_integral_anatomy"))?;
            }
            println!(
                "scene {scene}: {} views, {} mask pixels, written to {}",
                r.masks.len(),
                r.masks.iter().map(Mask::count).sum::<usize>(),
                dir.display()
            );
        }
        Command::Generate { dry_run } => {
            if dry_run {
                println!("{}", serde_json::to_string_pretty(&plan(&cfg)?)?);
                return Ok(());
            }
            let t = std::time::Instant::now();
            let manifest = generate_dataset(&cfg)?;
            manifest.validate(&out)?;
            info!("generated in {:.1} s", t.elapsed().as_secs_f64());
            println!(
                "{} pairs ({} train scenes, {} val scenes) in {}",
                manifest.pairs(),
                manifest.split.train.len(),
                manifest.split.val.len(),
                out.join(MANIFEST_FILE).display()
            );
        }
        Command::AnnotateDiff {
            with_metal,
            without_metal,
            threshold,
        } => {
            let threshold = match threshold.as_str() {
                "otsu" => Threshold::Otsu,
                t => Threshold::Fixed(t.parse().with_context(|| format!("threshold {t:?} is neither otsu nor a number"))?),
            };
            let a = ProjectionStack::load(&with_metal)?;
            let b = ProjectionStack::load(&without_metal)?;
            let masks = annotate_by_subtraction(&a, &b, threshold)?;
            save_masks(&out, &masks)?;
            println!(
                "{} masks, {} pixels, written to {}",
                masks.len(),
                masks.iter().map(Mask::count).sum::<usize>(),
                out.display()
            );
        }
        Command::Evaluate {
            pred,
            gt,
            manifest,
            split,
        } => {
            let scans = match (gt, manifest) {
                (Some(gt), _) => pair_dirs(&pred, &gt)?,
                (None, Some(m)) => pair_manifest(&pred, &m, split)?,
                (None, None) => unreachable!("clap requires one of --gt / --manifest"),
            };
            let report = evaluate(&scans)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!("per scan ({} scans):", report.n_scans);
            for line in report.per_scan.summary_lines() {
                eprintln!("  {line}");
            }
            eprintln!("per projection ({} projections):", report.n_projections);
            for line in report.per_projection.summary_lines() {
                eprintln!("  {line}");
            }
            if cli.out.is_some() {
                write_json(&out.join("evaluation.json"), &report)?;
            }
        }
        Command::Preview {
            manifest,
            scene,
            view,
            image,
        } => {
            let image = image.unwrap_or_else(|| out.join(format!("preview_s{scene:03}_v{view:03}.png")));
            let (gray, overlay) = preview(&manifest, scene, view, &image)?;
            println!("{}\n{}", gray.display(), overlay.display());
        }
    }
    Ok(())
}

/// Masks of a directory of `view_NNN.raw` files with `.json` sidecars, by file name.
fn mask_dir(dir: &Path) -> Result<Vec<(String, Mask)>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".raw"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let raw = dir.join(&n);
            let header: RasterHeader = serde_json::from_str(
                &std::fs::read_to_string(raw.with_extension("json"))
                    .with_context(|| format!("missing sidecar for {}", raw.display()))?,
            )?;
            Ok((n, Mask::load(&raw, header.width, header.height)?))
        })
        .collect()
}

/// Scan directories: `scene_*` subdirectories (their `masks/` if present),
/// else the directory itself as one scan.
fn scan_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut scans: Vec<(String, PathBuf)> = std::fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.starts_with("scene_").then(|| {
                let masks = e.path().join("masks");
                (name, if masks.is_dir() { masks } else { e.path() })
            })
        })
        .collect();
    scans.sort();
    if scans.is_empty() {
        scans.push((".".into(), root.to_path_buf()));
    }
    Ok(scans)
}

fn pair_dirs(pred: &Path, gt: &Path) -> Result<Vec<Vec<(Mask, Mask)>>> {
    let (ps, gs) = (scan_dirs(pred)?, scan_dirs(gt)?);
    let names = |v: &[(String, PathBuf)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(&ps) != names(&gs) {
        bail!("prediction scans {:?} do not match ground-truth scans {:?}", names(&ps), names(&gs));
    }
    ps.iter()
        .zip(&gs)
        .map(|((scan, pd), (_, gd))| {
            let (p, g) = (mask_dir(pd)?, mask_dir(gd)?);
            if p.iter().map(|x| &x.0).ne(g.iter().map(|x| &x.0)) {
                bail!("scan {scan}: prediction and ground-truth file names differ");
            }
            Ok(p.into_iter().zip(g).map(|((_, a), (_, b))| (a, b)).collect())
        })
        .collect()
}

fn pair_manifest(pred: &Path, manifest: &Path, split: SplitArg) -> Result<Vec<Vec<(Mask, Mask)>>> {
    let m = DatasetManifest::load(manifest)?;
    let root = if manifest.is_dir() {
        manifest.to_path_buf()
    } else {
        manifest.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let (w, h) = (m.config.geometry.width(), m.config.geometry.height());
    let scans: Vec<_> = m
        .scenes
        .iter()
        .filter(|s| match split {
            SplitArg::All => true,
            SplitArg::Train => s.split == Split::Train,
            SplitArg::Val => s.split == Split::Val,
        })
        .map(|s| {
            s.views
                .iter()
                .map(|v| Ok((Mask::load(&pred.join(&v.mask), w, h)?, Mask::load(&root.join(&v.mask), w, h)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if scans.is_empty() {
        bail!("no scenes in the requested split");
    }
    Ok(scans)
}
