use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bin index ({index}) out of range for axis {axis} with {len} bins")]
    BinIndex { axis: &'static str, index: usize, len: usize },

    #[error("coordinate outside the radar field of view")]
    OutsideFov,

    #[error("degenerate origin: range {0:e} is below 1e-9, angles are undefined")]
    DegenerateOrigin(f64),

    #[error("covariance of term {index} is not positive definite")]
    NotPositiveDefinite { index: usize },

    #[error("degenerate geometry: smallest singular value {smallest_singular_value:e}")]
    DegenerateGeometry { smallest_singular_value: f64 },

    #[error("no consensus: best hypothesis supported by {best_inliers} detections, need more than {min_sample}")]
    NoConsensus { best_inliers: usize, min_sample: usize },

    #[error("too few correspondences: {found} (need at least 3)")]
    TooFewCorrespondences { found: usize },

    #[error("singular normal equations (eigenvalue ratio {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("metric undefined on an empty point cloud")]
    EmptyCloud,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
