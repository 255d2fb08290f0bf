use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    InvalidGeometry(String),

    #[error("expected {expected} cells for the grid geometry, got {actual}")]
    CellCount { expected: usize, actual: usize },

    #[error("cell ({row}, {col}) holds a non-finite elevation that is not a missing marker")]
    NonFiniteCell { row: usize, col: usize },

    #[error("grid geometries do not match: {0}")]
    GeometryMismatch(String),

    #[error("grid contains missing cells where complete data is required: {0}")]
    MissingCells(&'static str),

    #[error("grid has no observed cells")]
    FullyMissing,

    #[error("bad magic bytes {0:?}, expected \"DEMG\"")]
    BadMagic([u8; 4]),

    #[error("unsupported DGM format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated DGM payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("DGM file has {0} unexpected trailing bytes")]
    TrailingBytes(u64),

    #[error("declared dimensions {rows}x{cols} overflow the addressable size")]
    DimensionOverflow { rows: u32, cols: u32 },

    #[error("vantage point has a non-finite coordinate")]
    NonFiniteVantage,

    #[error("position ({x:.3}, {y:.3}) m lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },

    #[error("anchor pixel ({row}, {col}) is missing; resample the vantage position")]
    MissingAnchor { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(&'static str),

    #[error("dynamic range must be positive, got {0}")]
    DegenerateRange(f64),

    #[error("source grid {size} is not divisible into {tiles}x{tiles} tiles of {tile_px} px")]
    Divisibility { size: String, tiles: usize, tile_px: usize },

    #[error("all {0} samples failed to produce a valid occlusion mask")]
    AllSamplesFailed(usize),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the filesystem or by malformed files on disk.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Json(_)
                | Error::Manifest(_)
                | Error::BadMagic(_)
                | Error::UnsupportedVersion(_)
                | Error::Truncated { .. }
                | Error::TrailingBytes(_)
                | Error::DimensionOverflow { .. }
                | Error::NonFiniteCell { .. }
        )
    }
}
