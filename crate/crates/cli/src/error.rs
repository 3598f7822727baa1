use cabingaze_core::annotate::AnnotateError;
use cabingaze_core::calib::CalibError;
use cabingaze_core::metrics::MetricsError;
use cabingaze_core::normalize::NormalizeError;
use cabingaze_core::raster::RasterError;
use cabingaze_core::synthcab::SynthError;
use cabingaze_model::ModelError;
use serde::Serialize;
use thiserror::Error;

/// Failure of one subcommand. The variant decides the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::MalformedReport(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::MalformedReport(_) => "malformed_report",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single-line JSON written to stderr on failure.
    pub fn to_json(&self) -> String {
        let message = match self {
            CliError::Config(m) | CliError::Data(m) | CliError::MalformedReport(m) | CliError::Numerical(m) => m.clone(),
        };
        serde_json::to_string(&ErrorJson { error: self.kind(), message, exit_code: self.exit_code() })
            .expect("error json")
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::NoConvergence(_) => CliError::Numerical(e.to_string()),
            CalibError::InvalidBoard(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NormalizeError> for CliError {
    fn from(e: NormalizeError) -> Self {
        match e {
            NormalizeError::InvalidConfig(_) => CliError::Config(e.to_string()),
            NormalizeError::SingularHomography(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidThreshold(_) | MetricsError::InvalidEdges => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadLayout(_) | SynthError::BoardNotVisible(_) => CliError::Config(e.to_string()),
            SynthError::Calib(c) => c.into(),
            SynthError::Normalize(n) => n.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::DivergenceDetected { .. } => CliError::Numerical(e.to_string()),
            ModelError::Synth(s) => s.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
