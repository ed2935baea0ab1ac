use std::fmt;

use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Runtime,
}

/// A command failure, classified for the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl fmt::Display) -> Self {
        Self { kind: FailureKind::Validation, message: message.to_string() }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        Self { kind: FailureKind::Runtime, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Validation => 2,
            FailureKind::Runtime => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self.kind {
            FailureKind::Validation => "validation",
            FailureKind::Runtime => "runtime",
        };
        json!({ "kind": kind, "message": self.message, "exit_code": self.exit_code() })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<edgeless::Error> for Failure {
    fn from(e: edgeless::Error) -> Self {
        if e.is_validation() {
            Self::validation(e)
        } else {
            Self::runtime(e)
        }
    }
}
