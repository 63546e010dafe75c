use std::path::PathBuf;

use discox_core::ErrorCategory;
use thiserror::Error;

pub type Result<T, E = ExchangeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error("mailbox {mailbox} already holds a message")]
    MailboxCollision { mailbox: String },

    #[error("timed out after {waited_secs:.1}s waiting for {mailbox}")]
    Timeout { mailbox: String, waited_secs: f64 },

    #[error("malformed payload {file}: {detail}")]
    MalformedPayload { file: String, detail: String },

    #[error("unexpected {got} message in {mailbox} (expected {expected})")]
    UnexpectedMessage {
        mailbox: String,
        expected: &'static str,
        got: &'static str,
    },

    #[error("partner {partner_id} reported a {} error: {reason}", .category.as_str())]
    PartnerFailed {
        partner_id: i64,
        category: ErrorCategory,
        reason: String,
    },

    #[error("center stopped the run with status {status}: {reason}")]
    Stopped { status: String, reason: String },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] discox_core::Error),
}

impl ExchangeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExchangeError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(file: impl Into<String>, detail: impl Into<String>) -> Self {
        ExchangeError::MalformedPayload {
            file: file.into(),
            detail: detail.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            ExchangeError::Core(e) => e.category(),
            ExchangeError::PartnerFailed { category, .. } => *category,
            _ => ErrorCategory::Protocol,
        }
    }
}
