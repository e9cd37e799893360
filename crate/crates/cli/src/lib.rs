//! Library behind the `ddff` binary: configuration loading with dotted-path
//! overrides, command implementations, run manifests, and the small PNG
//! plotting / color-mapping helpers the commands share.

pub mod colormap;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod plotpng;
pub mod stackio;
