//! Runner, simulator and HTTP service around `korra-core`.

pub mod runtime;
pub mod server;
pub mod summary;
