//! addrforge: dataset forge and evaluation toolkit for street-level image
//! address localization with vision-language models.
//!
//! The crate covers every non-training stage of a cross-view alignment
//! pipeline:
//!
//! - [`geo_model`]: locations, roads, gazetteer and address normalization.
//! - [`tiling`]: Web-Mercator math, satellite windows from slippy tiles and
//!   street-name annotation.
//! - [`grafting`]: satellite/street composition (grafted, stitched, separate).
//! - [`qa_forge`]: multi-turn address VQA conversations, splits, down-sampling,
//!   city merges and external-data mixing.
//! - [`labelgen`]: hint-carrying alignment prompts, a bounded-concurrency chat
//!   client and label validation.
//! - [`eval`]: answer parsing and the accuracy metric suite.
//! - [`analysis`]: street frequency tallies and GeoJSON overlays.
//! - [`mock`]: seeded oracle answerer and a stub chat endpoint.
//! - [`synth`]: synthetic city fixtures for tests and demos.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geo_model;
pub mod grafting;
pub mod jsonl;
pub mod labelgen;
pub mod mock;
pub mod qa_forge;
pub mod raster;
pub mod seed;
pub mod synth;
pub mod tiling;

pub use error::{Error, Result};
