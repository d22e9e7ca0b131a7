use thiserror::Error;

use crate::model::{ExternalOp, SiteId};
use crate::woot::ObjectId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("operation `{op}` out of bounds: position {position}, document length {len}")]
    OutOfBounds {
        op: ExternalOp,
        len: usize,
        position: usize,
    },

    #[error("cannot parse operation `{0}`")]
    ParseOp(String),

    #[error("no-op operations are not propagated")]
    NoOpRejected,

    #[error("site {0} received its own message")]
    SelfDelivery(SiteId),

    /// A buffered or bridged operation does not fit the context of the
    /// incoming operation. Indicates a broken delivery order or a bug.
    #[error("context mismatch at site {site}: {detail}")]
    ContextMismatch { site: SiteId, detail: String },

    /// The neighbours or target of an identifier-based operation are not
    /// present yet; the delivery layer must retry later.
    #[error("operation {origin}.{seq} is not executable yet")]
    NotExecutable { origin: SiteId, seq: u64 },

    #[error("unknown object identifier {0}")]
    UnknownObject(ObjectId),

    #[error("malformed wire message: {0}")]
    Wire(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}
