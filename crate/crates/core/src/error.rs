use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// Probability reached the outer edge of the momentum grid.
    #[error("momentum grid too small (n_max = {n_max}): edge occupancy {occupancy:e} after event {event}; enlarge n_max")]
    GridTooSmall {
        n_max: usize,
        occupancy: f64,
        event: usize,
    },

    #[error("shape undetermined: {0}")]
    ShapeUndetermined(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
