//! Executing projected endpoints: actors, traces, and the drivers that
//! connect them to a monitor and a transport.

pub mod actor;
pub mod session;
pub mod sim;
pub mod state;
pub mod trace;

pub use actor::{Actor, Effect, Status};
pub use session::{prepare, start_session, Results, SessionError, SessionHandle, SessionOptions, StartError};
pub use sim::{run_sim, SimOptions, SimReport};
pub use state::{CkptInstanceId, Frame, Snapshot};
pub use trace::{Clock, TraceEvent, TraceKind};
