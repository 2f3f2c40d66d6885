//! Operator surface of the cocoa-mapping pipeline: configuration,
//! run manifests, every pipeline stage as a library-callable command,
//! and the gradient-verification harness behind `gradcheck`.

pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod manifest;
