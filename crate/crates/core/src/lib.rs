//! Open-vocabulary querying of Gaussian scenes through a compact semantic
//! feature grid.
//!
//! Pipeline: [`ingest`] sanitizes masks and finds correspondences,
//! [`mapper`] groups masks into objects and lays them out on a lattice,
//! [`splat`] trains per-Gaussian features toward the lattice, and
//! [`query`] answers text-embedding queries against the trained field.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod error;
pub mod eval;
pub mod field;
pub mod ingest;
pub mod mapper;
pub mod query;
pub mod rle;
pub mod scene;
pub mod splat;

pub use error::{Error, Result};
