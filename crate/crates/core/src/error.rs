use thiserror::Error;

use crate::federated::codec::DecodeError;
use crate::federated::protocol::TransportError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("token id {id} is outside a vocabulary of size {size}")]
    OutOfVocabulary { id: usize, size: usize },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("format error at row {row}, column {column}: {message}")]
    Format {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("need at least 2 samples to split, got {0}")]
    TooSmall(usize),

    #[error("training diverged at epoch {epoch}, batch {batch}{}", client_suffix(*.client))]
    Divergence {
        client: Option<usize>,
        epoch: usize,
        batch: usize,
    },

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn client_suffix(client: Option<usize>) -> String {
    client.map(|c| format!(" on client {c}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Wraps an I/O failure with the file it concerns.
    pub fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches a client id to divergence errors and wraps everything else.
    pub fn for_client(self, client: usize) -> Self {
        match self {
            Error::Divergence { epoch, batch, .. } => Error::Divergence {
                client: Some(client),
                epoch,
                batch,
            },
            e @ Error::Client { .. } => e,
            other => Error::Client {
                client,
                source: Box::new(other),
            },
        }
    }

    pub fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            other => Error::Round {
                round,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping round and client wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Round { source, .. } | Error::Client { source, .. } => source.root(),
            e => e,
        }
    }
}
