//! Synthetic X-ray projections of anatomy with metal implants.
//!
//! The crate covers CT volume handling, parametric implant models, scene
//! composition, cone-beam forward projection, detector physics, dataset
//! generation and segmentation metrics.

pub mod error;
pub mod geometry;
pub mod implant;
pub mod io;
pub mod metrics;
pub mod physics;
pub mod pipeline;
pub mod projector;
pub mod raster;
pub mod scene;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{uniform_angles, ProjectionGeometry};
pub use implant::{random_implant, voxelize, BinaryVolume, ImplantKind, ImplantModel, KindSelector, Kwire, Plate, Screw};
pub use metrics::{aggregate, confusion, dice, precision, recall, ConfusionCounts, EvaluationReport};
pub use physics::{AttenuationTable, AugmentationConfig, DensityMap, Material, MaterialModel, Spectrum};
pub use pipeline::{generate_dataset, DatasetManifest, PhysicsMode, PipelineConfig, Threshold};
pub use projector::{project_materials, project_mono, Channel, MaterialProjections, ProjectionStack};
pub use raster::{Image, Mask};
pub use scene::{compose, merge, place_implants, ComposedScene, Placement};
pub use volume::{crop_slices, resample, synth_phantom, PhantomSpec, Volume, AIR_HU};
