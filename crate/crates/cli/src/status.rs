use std::fmt;
use std::process::ExitCode;

use qtn_core::Error;

/// Process exit status. Every failure maps to exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Bad flags, bad config file, invalid parameter values.
    Usage = 1,
    /// Unreadable or malformed inputs: manifests, slices, checkpoints.
    Data = 2,
    /// Training divergence or failure to write outputs.
    Runtime = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // library errors already embed their source in the message
        let mut text = self.error.to_string();
        for cause in self.error.chain().skip(1) {
            let c = cause.to_string();
            if !text.contains(&c) {
                text = format!("{text}: {c}");
            }
        }
        f.write_str(&text)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        status: Status::Usage,
        error: e.into(),
    }
}

/// For errors while reading user inputs; I/O problems count as data errors.
pub fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        status: Status::Data,
        error: e.into(),
    }
}

/// For errors while producing outputs.
pub fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        status: Status::Runtime,
        error: e.into(),
    }
}

/// Status for a library error raised outside an explicit input/output stage.
pub fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_) => usage(e),
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } | Error::Io { .. } => runtime(e),
        _ => data(e),
    }
}
