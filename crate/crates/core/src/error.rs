use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("voxelization produced no interior voxels at spacing {spacing_mm} mm")]
    EmptyVoxelization { spacing_mm: f64 },

    #[error("placement infeasible for implant {index}: no anchor above {threshold_hu} HU after {attempts} attempts")]
    PlacementInfeasible {
        index: usize,
        attempts: usize,
        threshold_hu: f64,
    },

    #[error("scene {scene}: {source}")]
    Scene {
        scene: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest invalid: {0}")]
    Manifest(String),

    #[error("malformed data in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_scene(self, scene: usize) -> Self {
        Error::Scene {
            scene,
            source: Box::new(self),
        }
    }
}
