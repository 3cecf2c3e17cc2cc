use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("preset `{preset}` has no override knob `{knob}`")]
    UnknownKnob { preset: String, knob: String },

    #[error("invalid override `{knob}`: {reason}")]
    InvalidOverride { knob: String, reason: String },

    #[error("invalid architecture: {}", .0.join("; "))]
    InvalidArch(Vec<String>),

    #[error("width vector has {got} entries, architecture has {expected} width units")]
    WidthLength { expected: usize, got: usize },

    #[error("width entry {index} is not a positive finite value")]
    NonPositiveWidth { index: usize },

    #[error("resolution {0} is invalid for this architecture")]
    InvalidResolution(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible architectures: {0}")]
    Incompatible(String),

    #[error("target FLOPs {target} outside achievable bracket [{lo_flops}, {hi_flops}]")]
    Bracket {
        target: u64,
        lo_flops: u64,
        hi_flops: u64,
    },

    #[error("source overhead {source_flops} exceeds target overhead {target_flops}: proxy is not cheaper")]
    ProxyNotCheaper {
        source_flops: u128,
        target_flops: u128,
    },

    #[error("source component `{component}` exceeds the target's")]
    SourceExceedsTarget { component: &'static str },

    #[error("evaluator failure: {0}")]
    Evaluator(String),

    #[error("algorithm `{0}` is an external plug-in and is not available in this build")]
    PluginUnavailable(String),

    #[error("no feasible width satisfies the FLOPs constraint")]
    NoFeasibleSolution,

    #[error("search space of {0} combinations exceeds the 1e6 limit")]
    SearchSpaceTooLarge(u128),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("structural mismatch: {0}")]
    StructuralMismatch(String),

    #[error("no records")]
    NoRecords,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
