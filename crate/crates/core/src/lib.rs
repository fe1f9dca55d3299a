//! Numerical laboratory for detecting a cavity inside a planar domain from
//! boundary or interior observations of a parabolic field whose initial data
//! are unknown.
//!
//! The pipeline is: [`geometry`] rasterizes the domain and candidate cavities,
//! [`operators`] assembles the elliptic operator, [`sources`] builds forcings,
//! [`forward`] time-steps the parabolic problem, [`observe`] extracts traces
//! and misfits, and [`inverse`] runs distinguishability studies and shape
//! reconstruction. [`scenario`] and [`runner`] drive everything from TOML files.

pub mod error;
pub mod exec;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod linalg;
pub mod observe;
pub mod operators;
pub mod runner;
pub mod scenario;
pub mod sources;
pub mod timefn;

pub use error::{Error, Result};
pub use exec::Execution;
