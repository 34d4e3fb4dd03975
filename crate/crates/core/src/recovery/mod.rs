//! Checkpoint records and the per-session recovery monitor.

pub mod delta;
pub mod monitor;

pub use delta::{apply_delta, apply_in_place, compute_delta, full_copy, StackDelta};
pub use monitor::{AuditRecord, Monitor, MonitorInput, MonitorOutput, Spawner};
