//! Choreographic programming toolkit: a checker and projector for global
//! choreographies and a restartable actor runtime that executes the
//! projected endpoints with checkpoint/rescue recovery.

pub mod bench;
pub mod eval;
pub mod lang;
pub mod project;
pub mod recovery;
pub mod runtime;
pub mod transport;
pub mod value;
pub mod wire;

pub use value::{Value, Vars};
