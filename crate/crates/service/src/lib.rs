//! Live adaptive survey sessions over HTTP.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

pub use api::router;
pub use error::{Result, ServiceError};
pub use session::{CreateSession, Event, Session, SessionStatus};
pub use store::{SessionStore, SubmitResponse};
