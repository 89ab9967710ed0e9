use std::fmt;

/// Pipeline stage that produced an error. Used for error tagging and CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Constellation,
    Transmitter,
    Channel,
    Detector,
    Receiver,
    Calibration,
    Estimation,
    Security,
    Io,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Constellation => "constellation",
            Stage::Transmitter => "tx",
            Stage::Channel => "channel",
            Stage::Detector => "detector",
            Stage::Receiver => "rx",
            Stage::Calibration => "calibration",
            Stage::Estimation => "estimation",
            Stage::Security => "security",
            Stage::Io => "io",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("constellation order {0} is not a square grid")]
    NonSquareOrder(usize),

    #[error("Fock cutoff {cutoff} leaves truncation error {error:.3e} (limit {limit:.1e})")]
    FockTruncation { cutoff: usize, error: f64, limit: f64 },

    #[error("pilot at {pilot_hz:.3e} Hz overlaps quantum band edge {edge_hz:.3e} Hz (+guard)")]
    PilotOverlap { pilot_hz: f64, edge_hz: f64 },

    #[error("frequency offset {offset_hz:.3e} Hz exceeds half the quantum bandwidth {limit_hz:.3e} Hz")]
    FrequencyOffset { offset_hz: f64, limit_hz: f64 },

    #[error("transfer function has an in-band null (|H|^2 at regularization floor in {bins} bins)")]
    InBandNull { bins: usize },

    #[error("trace role mismatch: expected {expected}, got {got}")]
    RoleMismatch { expected: &'static str, got: &'static str },

    #[error("trace too short: {len} samples, need at least {need}")]
    TraceTooShort { len: usize, need: usize },

    #[error("pilot recovery failed: fit residual {residual_rms:.3} rad RMS")]
    PilotFailure { residual_rms: f64 },

    #[error("synchronisation failed: peak/sidelobe ratio {ratio:.2} below {threshold}")]
    SyncFailure { ratio: f64, threshold: f64 },

    #[error("calibration failed: shot-noise variance {shot_unit:.3e} is not positive")]
    Calibration { shot_unit: f64 },

    #[error("estimation needs at least {need} symbol pairs, got {got}")]
    TooFewSymbols { got: usize, need: usize },

    #[error("estimated transmittance is not physical ({0:.3e})")]
    NegativeTransmittance(f64),

    #[error("non-physical covariance matrix: symplectic eigenvalue {0:.12} < 1")]
    NonPhysical(f64),

    #[error("trace file: {0}")]
    Trace(#[from] TraceFormatError),

    #[error("config line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    #[error("config: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wrap with a stage tag unless already tagged.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost untagged error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Process exit code: 2 config, 4 sync/pilot, 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::ConfigParse { .. }
            | Error::ConfigInvalid(_)
            | Error::PilotOverlap { .. }
            | Error::FrequencyOffset { .. } => 2,
            Error::InvalidParameter { .. } if self.stage() == Some(Stage::Config) => 2,
            Error::PilotFailure { .. } | Error::SyncFailure { .. } => 4,
            _ => 3,
        }
    }
}

/// Malformed CVQT trace files.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceFormatError {
    #[error("bad magic {0:?}, expected \"CVQT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown role byte {0}")]
    UnknownRole(u8),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait ResultExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
