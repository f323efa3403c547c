//! Service and client plumbing behind the `amrule` binary.

pub mod lm;
pub mod server;
