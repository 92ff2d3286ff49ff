//! Group decision-making engine.

pub mod aggregation;
pub mod bus;
pub mod domain;
pub mod engine;
pub mod error;
pub mod events;
pub mod fraction;
pub mod ids;
pub mod lifecycle;
pub mod log;
pub mod notation;
pub mod policy;
pub mod request;
pub mod summary;
pub mod time;

pub use error::{ErrorClass, GdmError, Result};
pub use fraction::Fraction;
pub use ids::{CollaborationId, ProposalId, UserId};
pub use time::Timestamp;
