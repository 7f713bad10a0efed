use std::io::ErrorKind;
use std::path::Path;
use std::process::ExitCode;

use serde_json::json;

use dynedit_core::data::{CheckpointError, DataError};
use dynedit_core::edit::EditError;
use dynedit_core::train::TrainError;
use dynedit_core::workflow::WorkflowError;

/// A failure reported as one JSON object on stderr. The exit code depends
/// on the kind: 2 usage, 3 data, 4 numeric failure, 1 anything else.
#[derive(Debug)]
pub enum CliError {
    Usage {
        flag: Option<String>,
        message: String,
    },
    Data {
        code: &'static str,
        flag: Option<&'static str>,
        field: Option<&'static str>,
        message: String,
    },
    Numeric(String),
    Other(String),
}

impl CliError {
    pub fn usage(flag: Option<&str>, message: String) -> Self {
        CliError::Usage {
            flag: flag.map(str::to_string),
            message,
        }
    }

    fn data_error(code: &'static str, flag: Option<&'static str>, message: String) -> Self {
        CliError::Data {
            code,
            flag,
            field: None,
            message,
        }
    }

    pub fn read(path: &Path, flag: &'static str, e: std::io::Error) -> Self {
        let code = if e.kind() == ErrorKind::NotFound { "missing_file" } else { "io" };
        Self::data_error(code, Some(flag), format!("{}: {e}", path.display()))
    }

    pub fn malformed(path: &Path, flag: &'static str, e: serde_json::Error) -> Self {
        Self::data_error("malformed", Some(flag), format!("{}: {e}", path.display()))
    }

    pub fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }

    pub fn data(e: DataError) -> Self {
        let code = match &e {
            DataError::MissingFile(_) => "missing_file",
            DataError::MalformedJson { .. } | DataError::ImageDecode { .. } => "malformed",
            _ => "invalid_data",
        };
        Self::data_error(code, Some("--data"), e.to_string())
    }

    pub fn checkpoint(flag: &'static str, e: CheckpointError) -> Self {
        let code = match &e {
            CheckpointError::MissingFile(_) => "missing_file",
            CheckpointError::Io { .. } if flag == "--out" => return CliError::Other(e.to_string()),
            CheckpointError::Io { .. } => "io",
            _ => "malformed",
        };
        Self::data_error(code, Some(flag), e.to_string())
    }

    pub fn train(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::usage(None, m),
            TrainError::Diverged { .. } | TrainError::Network(_) => CliError::Numeric(e.to_string()),
            TrainError::Render(_) => CliError::Other(e.to_string()),
        }
    }

    pub fn edit(e: EditError) -> Self {
        match &e {
            EditError::Invalid { field, .. } => CliError::Data {
                code: "invalid_proxy",
                flag: Some("--proxy"),
                field: Some(field),
                message: e.to_string(),
            },
            EditError::Unsupported(_) => Self::data_error("unsupported", Some("--proxy"), e.to_string()),
            EditError::NoSurface => Self::data_error("no_surface", Some("--proxy"), e.to_string()),
            EditError::Config(_) => CliError::usage(None, e.to_string()),
            EditError::Diverged { .. } | EditError::DeformationChanged => CliError::Numeric(e.to_string()),
            EditError::Render(_) => CliError::Other(e.to_string()),
        }
    }

    pub fn workflow(e: WorkflowError) -> Self {
        match &e {
            WorkflowError::Invalid { field, .. } => {
                let flag = match *field {
                    "t" => "--time",
                    "pose" => "--pose-index",
                    "width" => "--width",
                    "samples" => "--samples",
                    other => other,
                };
                CliError::usage(Some(flag), e.to_string())
            }
            WorkflowError::NoScene => Self::data_error("no_scene", Some("--ckpt"), e.to_string()),
            WorkflowError::Render(_) => CliError::Other(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Data { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    /// Writes the diagnostic to stderr and returns the exit code.
    pub fn report(self) -> ExitCode {
        let code = self.exit_code();
        let body = match self {
            CliError::Usage { flag, message } => json!({"code": "usage", "message": message, "flag": flag}),
            CliError::Data {
                code,
                flag,
                field,
                message,
            } => json!({"code": code, "message": message, "flag": flag, "field": field}),
            CliError::Numeric(m) => json!({"code": "numeric", "message": m}),
            CliError::Other(m) => json!({"code": "error", "message": m}),
        };
        eprintln!("{}", json!({ "error": body }));
        ExitCode::from(code)
    }
}
