//! Session store, pipeline orchestration and HTTP API for the workbench.
//!
//! A session moves `created → prompted → analyzed`; any stage failure moves
//! it to `failed` with the cause recorded. Each session is a directory of
//! flat files whose `session.json` is written atomically.

pub mod adapter;
pub mod api;
pub mod error;
pub mod session;
pub mod store;
pub mod workbench;

pub use adapter::adapter_router;
pub use api::router;
pub use error::ServiceError;
pub use session::{AnalysisSession, ExplanationRecord, FailureRecord, GenerationDigest, SessionStatus, SessionSummary};
pub use store::SessionStore;
pub use workbench::{Workbench, OVERLAY_ALPHA};
