//! CLI error classes with one distinct exit code each:
//! 2 configuration/usage, 3 I/O, 4 input data or file format,
//! 5 checkpoint/dimension incompatibility, 6 numeric or training failure,
//! 7 gradient check failure.

use crate::config::ConfigError;
use kdream_core::crn::CrnError;
use kdream_core::diffusion::DiffusionError;
use kdream_core::guidance::GuidanceError;
use kdream_core::kg::KgError;
use kdream_core::kge::KgeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    Numeric(String),
    #[error("gradient check failed: worst relative error {0:.3e}")]
    Gradcheck(f64),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Incompatible(_) => 5,
            CliError::Numeric(_) => 6,
            CliError::Gradcheck(_) => 7,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::Io { .. } => CliError::Io(e.to_string()),
            KgError::BadRatios(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KgeError> for CliError {
    fn from(e: KgeError) -> Self {
        match e {
            KgeError::DimMismatch { .. } => CliError::Incompatible(e.to_string()),
            KgeError::Diverged { .. } => CliError::Numeric(e.to_string()),
            KgeError::BadFile(_) | KgeError::IdOutOfRange { .. } | KgeError::EmptyTestSet => {
                CliError::Data(e.to_string())
            }
            KgeError::Io(_) => CliError::Io(e.to_string()),
            KgeError::BadConfig(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::DimMismatch { .. } => CliError::Incompatible(e.to_string()),
            DiffusionError::Diverged { .. } | DiffusionError::NonFinite { .. } => {
                CliError::Numeric(e.to_string())
            }
            DiffusionError::BadFile(_)
            | DiffusionError::TooManyAtoms { .. }
            | DiffusionError::EmptyDataset => CliError::Data(e.to_string()),
            DiffusionError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<CrnError> for CliError {
    fn from(e: CrnError) -> Self {
        match e {
            CrnError::BadFeatureDim { .. }
            | CrnError::BadTargetDim { .. }
            | CrnError::BadEdgeShape { .. } => CliError::Incompatible(e.to_string()),
            CrnError::Diverged { .. } => CliError::Numeric(e.to_string()),
            CrnError::BadFile(_) | CrnError::TooManyAtoms { .. } | CrnError::EmptyDataset => {
                CliError::Data(e.to_string())
            }
            CrnError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<GuidanceError> for CliError {
    fn from(e: GuidanceError) -> Self {
        match e {
            GuidanceError::Diffusion(inner) => inner.into(),
            GuidanceError::Crn(inner) => inner.into(),
            GuidanceError::DimMismatch { .. } => CliError::Incompatible(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
