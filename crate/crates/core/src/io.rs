//! On-disk formats: PLY clouds and Gaussian maps, TUM trajectories, sRGB
//! PNG images, TOML configuration and dataset manifests.
//!
//! Every loader/saver pair round-trips at its storage precision, and loaders
//! return structured errors instead of panicking on malformed input.

pub mod config;
pub mod manifest;
pub mod ply;
pub mod png;
pub mod trajectory;
