//! Dataset files, model backends, evaluation runs and the annotation
//! service built on `axisprompt-core`.

pub mod annotate;
pub mod backend;
pub mod dataset;
pub mod io;
pub mod run;
pub mod service;

pub use axisprompt_core as core;
