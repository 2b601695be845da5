use std::fmt;

use crate::schema::EngineKind;

/// Operation class used to partition training data and cost models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum OpClass {
    Read,
    Write,
}

impl OpClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OpClass::Read => "read",
            OpClass::Write => "write",
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A column name does not resolve against the schema.
    UnknownColumn(String),
    /// A column appears in more than one group.
    OverlappingGroups(String),
    /// A value column is not covered by any group.
    MissingColumn(String),
    InvalidSchema(String),
    InvalidOp(String),
    /// The structure is not valid for the schema (e.g. columnar without DSM).
    TargetInvalid(String),
    DegenerateSequence(usize),
    SchemaMismatch(String),
    CorruptSnapshot(String),
    EmptyInput,
    EmptyWorkload,
    InsufficientData {
        engine: EngineKind,
        class: OpClass,
        have: usize,
        need: usize,
    },
    FeatureVersionMismatch {
        expected: String,
        found: String,
    },
    ModelMissing,
    ConversionVerifyFailed(String),
    /// A file carried a version this build does not understand.
    UnsupportedVersion {
        what: &'static str,
        found: u32,
    },
    Parse(String),
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownColumn(c) => write!(f, "unknown column `{c}`"),
            Error::OverlappingGroups(c) => write!(f, "column `{c}` appears in more than one group"),
            Error::MissingColumn(c) => write!(f, "value column `{c}` is not covered by the layout"),
            Error::InvalidSchema(m) => write!(f, "invalid schema: {m}"),
            Error::InvalidOp(m) => write!(f, "invalid operation: {m}"),
            Error::TargetInvalid(m) => write!(f, "invalid storage structure: {m}"),
            Error::DegenerateSequence(n) => {
                write!(f, "randomness needs at least 2 keys, got {n}")
            }
            Error::SchemaMismatch(m) => write!(f, "schema mismatch: {m}"),
            Error::CorruptSnapshot(m) => write!(f, "corrupt snapshot: {m}"),
            Error::EmptyInput => f.write_str("empty input"),
            Error::EmptyWorkload => f.write_str("workload has no read operations"),
            Error::InsufficientData {
                engine,
                class,
                have,
                need,
            } => write!(
                f,
                "insufficient training data for ({engine}, {class}): {have} records, need {need}"
            ),
            Error::FeatureVersionMismatch { expected, found } => {
                write!(f, "feature version mismatch: expected {expected}, found {found}")
            }
            Error::ModelMissing => f.write_str("no trained cost model"),
            Error::ConversionVerifyFailed(m) => write!(f, "conversion verification failed: {m}"),
            Error::UnsupportedVersion { what, found } => {
                write!(f, "unsupported {what} version {found}")
            }
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
