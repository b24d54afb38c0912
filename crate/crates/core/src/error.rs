use std::io;

/// Errors produced by the fern matching pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("patch of side {side} centered at ({x}, {y}) crosses the image border")]
    Border { x: i64, y: i64, side: usize },

    #[error("{bits} bits per fern exceeds the maximum of {max}")]
    TableSize { bits: usize, max: usize },

    #[error("table of {ferns} x {bins} x {classes} counters is too large")]
    Capacity {
        ferns: usize,
        bins: usize,
        classes: usize,
    },

    #[error("class id {class_id} out of range for {classes} classes")]
    ClassIndex { class_id: usize, classes: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate point configuration")]
    Degenerate,

    #[error("requested {requested} keypoint classes but only {available} keypoints were detected")]
    InsufficientKeypoints { requested: usize, available: usize },

    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: u64, actual: u64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
