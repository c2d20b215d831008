//! Session persistence, directive scripts and the HTTP API.

pub mod error;
pub mod export;
pub mod http;
pub mod requests;
pub mod script;
pub mod store;

pub use error::{ApiError, ErrorCode};
pub use export::{export_session, transitions_view, ExportKind, TransitionsView};
pub use requests::{DirectiveRequest, PriorBody, Ref};
pub use script::{run_script, Analysis, Script, ScriptError, Step};
pub use store::{SessionId, SessionStore, SessionView};
