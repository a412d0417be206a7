use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box: ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },

    #[error("box ({x_min}, {y_min}, {x_max}, {y_max}) lies outside a {w}x{h} frame")]
    BoxOutsideFrame { x_min: f64, y_min: f64, x_max: f64, y_max: f64, w: usize, h: usize },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("zoom box collapsed below 2px on a side: {w:.4}x{h:.4}")]
    OverZoom { w: f64, h: f64 },

    #[error("no candidate boxes for frame {frame}")]
    EmptyCandidates { frame: usize },

    #[error("dataset not found at {0}")]
    DatasetNotFound(PathBuf),

    #[error("malformed manifest at {path} line {line}: {msg}")]
    MalformedManifest { path: PathBuf, line: usize, msg: String },

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("symbol {0:?} is not in the alphabet")]
    SymbolOutsideAlphabet(char),

    #[error("target {target:?} is not alignable within {frames} frames")]
    UnalignableTarget { target: String, frames: usize },

    #[error("brute-force enumeration of {0} labelings exceeds the 10^6 cap")]
    InstanceTooLarge(u128),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad configuration: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("non-finite activation first appears at frame {frame}")]
    NonFinite { frame: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty reference")]
    EmptyReference,

    #[error("no evaluable frames")]
    NoEvaluableFrames,

    #[error("bad checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("{msg}: {source}")]
    Io {
        msg: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(msg: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let msg = msg.into();
        move |source| Error::Io { msg, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
