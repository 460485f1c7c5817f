use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} is out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("node {0} is isolated (degree 0)")]
    IsolatedNode(usize),

    #[error("graph is disconnected: {} components, sizes {:?}", .0.len(), .0.iter().map(Vec::len).collect::<Vec<_>>())]
    Disconnected(Vec<Vec<usize>>),

    #[error("parameter {name} = {value} outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("data validation failed: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(name: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            domain,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain { .. } | Error::Invalid(_) | Error::Dimension(_) => ErrorClass::Usage,
            Error::NotPositiveDefinite(_) | Error::Numerical(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
