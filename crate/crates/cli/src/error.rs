use std::fmt;
use std::path::Path;

use klassify_core::calibration::CalibrationError;
use klassify_core::features::FeatureError;
use klassify_core::metrics::MetricsError;
use klassify_core::models::ModelError;
use klassify_core::nn::NnError;
use klassify_core::pipeline::InferenceError;
use klassify_core::training::TrainingError;

pub const EXIT_IO: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_SEMANTICS: i32 = 3;
pub const EXIT_MODEL: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self::new(EXIT_FORMAT, message)
    }

    pub fn semantics(message: impl Into<String>) -> Self {
        Self::new(EXIT_SEMANTICS, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    /// Prefixes the message with a path.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

pub fn json_error(path: &Path, e: serde_json::Error) -> CliError {
    let code = if e.is_io() { EXIT_IO } else { EXIT_FORMAT };
    CliError::new(code, format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
}

fn feature_code(e: &FeatureError) -> i32 {
    match e {
        FeatureError::Io(_) => EXIT_IO,
        FeatureError::AtFrame { source, .. } => feature_code(source),
        FeatureError::RoiTooSmall { .. } | FeatureError::EmptyComplement | FeatureError::EmptyRoi | FeatureError::EmptyCorpus => {
            EXIT_SEMANTICS
        }
        _ => EXIT_FORMAT,
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        Self::new(feature_code(&e), e.to_string())
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::KindMismatch { .. } | ModelError::InputChannels { .. } => EXIT_MODEL,
        ModelError::Nn(NnError::Io(_)) => EXIT_IO,
        ModelError::Nn(NnError::Format(_)) | ModelError::Architecture(_) => EXIT_FORMAT,
        _ => EXIT_SEMANTICS,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::new(model_code(&e), e.to_string())
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        let code = match &e {
            TrainingError::Io(_) => EXIT_IO,
            TrainingError::Manifest { .. } => EXIT_FORMAT,
            TrainingError::Features(f) => feature_code(f),
            TrainingError::Model(m) => model_code(m),
            _ => EXIT_SEMANTICS,
        };
        Self::new(code, e.to_string())
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        let code = match &e {
            InferenceError::Model(m) => model_code(m),
            InferenceError::FpsMismatch { .. } => EXIT_MODEL,
            _ => EXIT_SEMANTICS,
        };
        Self::new(code, e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        let code = match &e {
            CalibrationError::Io(_) => EXIT_IO,
            CalibrationError::Format { .. } | CalibrationError::DuplicateId(_) => EXIT_FORMAT,
            _ => EXIT_SEMANTICS,
        };
        Self::new(code, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::semantics(e.to_string())
    }
}
