//! Error type shared by every module in the crate.
//!
//! Variants are grouped into families; [`Error::family`] gives the family a
//! stable numeric code which the CLI reuses as its process exit code.

use crate::label::Behavior;
use crate::tensor::DType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- shape / compute ---
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: expected dtype {expected:?}, got {got:?}")]
    DTypeMismatch {
        op: &'static str,
        expected: DType,
        got: DType,
    },
    #[error("{op}: spatial dims must be even, got {h}x{w}")]
    OddSpatialDims { op: &'static str, h: usize, w: usize },
    #[error("batchnorm: negative variance {value} at channel {channel}")]
    NegativeVariance { channel: usize, value: f32 },
    #[error("tensor: shape {shape:?} does not match buffer length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("tensor: invalid quantized data: {reason}")]
    InvalidQuantized { reason: String },

    // --- graph / config ---
    #[error("unsupported resolution {got}, supported: {supported:?}")]
    UnsupportedResolution {
        got: usize,
        supported: &'static [usize],
    },
    #[error("invalid layer sequence at layer {index}: {reason}")]
    InvalidGraph { index: usize, reason: String },
    #[error("batchnorm at layer {index} is not directly preceded by a conv layer")]
    FoldUnsupported { index: usize },
    #[error("{op} requires inference mode")]
    InferModeRequired { op: &'static str },
    #[error("label {label} out of range, model has {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("activation cache does not match this call: {reason}")]
    StaleCache { reason: String },
    #[error("dataset split '{split}' is empty")]
    EmptySplit { split: &'static str },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("layer {index} is not a conv layer, cannot attribute from it")]
    NotAConvLayer { index: usize },

    // --- data pipeline ---
    #[error("manifest line {line}: unknown label '{label}'")]
    UnknownLabel { line: usize, label: String },
    #[error("manifest line {line}: duplicate path '{path}'")]
    DuplicatePath { line: usize, path: String },
    #[error("manifest line {line}: file not found: {path}")]
    MissingFile { line: usize, path: String },
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("class {label:?} has only {count} samples, need at least 3 to split")]
    ClassTooSmall { label: Behavior, count: usize },
    #[error("ppm: bad magic, expected 'P6', got {got:?}")]
    PpmBadMagic { got: String },
    #[error("ppm: unsupported maxval {got}, only 255 is supported")]
    PpmBadMaxval { got: u64 },
    #[error("ppm: malformed header: {reason}")]
    PpmHeader { reason: String },
    #[error("ppm: truncated pixel data, expected {expected} bytes, got {actual}")]
    PpmTruncated { expected: usize, actual: usize },
    #[error("image has a zero-sized dimension")]
    ZeroSizedImage,

    // --- model format ---
    #[error("model file: bad magic {got:?}, expected \"CNM1\"")]
    BadMagic { got: [u8; 4] },
    #[error("model file: unknown format version {0}")]
    UnknownVersion(u16),
    #[error("model file: unknown quantization scheme tag {0}")]
    UnknownScheme(u8),
    #[error("model file: unknown layer kind tag {0}")]
    UnknownLayerKind(u8),
    #[error("model file: unknown parameter dtype tag {0}")]
    UnknownDType(u8),
    #[error("model file: truncated at byte {offset}, needed {needed} more bytes")]
    UnexpectedEof { offset: usize, needed: usize },
    #[error("model file: {extra} trailing bytes after model payload")]
    TrailingBytes { extra: usize },
    #[error("model file: invalid payload: {reason}")]
    MalformedModel { reason: String },

    // --- controller / servo ---
    #[error("event timestamp {got} is earlier than last seen {last}")]
    NonMonotonicTimestamp { last: u64, got: u64 },
    #[error("controller config: {reason}")]
    InvalidControllerConfig { reason: String },
    #[error("servo angle {angle} out of range [0, 180]")]
    AngleOutOfRange { angle: f32 },
    #[error("event stream line {line}: {reason}")]
    EventParse { line: usize, reason: String },

    // --- io ---
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("table: no rows to emit")]
    EmptyTable,
}

impl Error {
    /// Stable family code, used as the CLI process exit code.
    pub fn family(&self) -> u8 {
        use Error::*;
        match self {
            ShapeMismatch { .. } | DTypeMismatch { .. } | OddSpatialDims { .. }
            | NegativeVariance { .. } | ShapeDataMismatch { .. } | InvalidQuantized { .. } => 3,
            UnsupportedResolution { .. } | InvalidGraph { .. } | FoldUnsupported { .. }
            | InferModeRequired { .. } | LabelOutOfRange { .. } | StaleCache { .. }
            | EmptySplit { .. } | InvalidArgument { .. } | NotAConvLayer { .. } => 4,
            UnknownLabel { .. } | DuplicatePath { .. } | MissingFile { .. }
            | ManifestParse { .. } | EmptyManifest | ClassTooSmall { .. }
            | PpmBadMagic { .. } | PpmBadMaxval { .. } | PpmHeader { .. }
            | PpmTruncated { .. } | ZeroSizedImage => 5,
            BadMagic { .. } | UnknownVersion(_) | UnknownScheme(_) | UnknownLayerKind(_)
            | UnknownDType(_) | UnexpectedEof { .. } | TrailingBytes { .. }
            | MalformedModel { .. } => 6,
            NonMonotonicTimestamp { .. } | InvalidControllerConfig { .. }
            | AngleOutOfRange { .. } | EventParse { .. } => 7,
            Io(_) | Csv(_) | EmptyTable => 8,
        }
    }

    /// Short family name for the CLI's machine-parsable error prefix.
    pub fn family_name(&self) -> &'static str {
        match self.family() {
            3 => "shape",
            4 => "graph",
            5 => "data",
            6 => "format",
            7 => "controller",
            _ => "io",
        }
    }
}
