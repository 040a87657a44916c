//! Filesystem, model runtime, CLI and HTTP layers of `picsearch`.
//!
//! The algorithms live in [`picsearch_core`]; this crate scans catalogs,
//! decodes images, runs ONNX models, stores indexes and serves searches.

pub mod api;
pub mod config;
pub mod decode;
pub mod eval;
pub mod indexer;
pub mod kv;
pub mod model;
pub mod onnx;
pub mod pipeline;
pub mod scan;
pub mod service;
pub mod store;

pub use picsearch_core as core;
