use std::process::ExitCode;

use cabs_core::error::SchemaError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Usage,
    Validation,
    Backend,
    Internal,
}

impl Kind {
    fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 2,
            Kind::Validation => 3,
            Kind::Backend => 4,
            Kind::Internal => 1,
        }
    }
}

/// A classified error, reported as one JSON line on standard error.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub path: Option<String>,
    pub error: anyhow::Error,
}

#[derive(Serialize)]
struct Line<'a> {
    level: &'static str,
    kind: Kind,
    exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a str>,
    message: String,
}

impl Failure {
    pub fn usage(path: Option<&str>, message: String) -> Self {
        Failure {
            kind: Kind::Usage,
            path: path.map(str::to_string),
            error: anyhow::anyhow!(message.trim().to_string()),
        }
    }

    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind: Kind::Validation,
            path: None,
            error: error.into(),
        }
    }

    pub fn schema(error: SchemaError) -> Self {
        Failure {
            kind: Kind::Validation,
            path: Some(error.path().to_string()),
            error: error.into(),
        }
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind: Kind::Backend,
            path: None,
            error: error.into(),
        }
    }

    pub fn internal(error: anyhow::Error) -> Self {
        Failure {
            kind: Kind::Internal,
            path: None,
            error,
        }
    }

    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    pub fn report(self) -> ExitCode {
        let code = self.kind.exit_code();
        let line = Line {
            level: "error",
            kind: self.kind,
            exit_code: code,
            path: self.path.as_deref(),
            message: format!("{:#}", self.error),
        };
        eprintln!("{}", serde_json::to_string(&line).expect("error line serializes"));
        ExitCode::from(code)
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::schema(e)
    }
}
