//! Unsupervised discovery of task-relevant objects from egocentric feature
//! streams.
//!
//! The pipeline ingests per-frame gaze, 3D point-of-regard, appearance and
//! motion descriptors and
//!
//! * discovers objects offline ([`offline`]) by k-means or spectral
//!   clustering with Davies-Bouldin model selection, or online ([`online`])
//!   with incrementally updated Gaussian mixtures;
//! * builds per-object location, appearance and usage models ([`models`]);
//! * clusters usage snippets into modes of interaction ([`moi`]);
//! * learns a first-order interaction graph ([`graph`]);
//! * replays held-out streams to recommend help snippets and next objects
//!   ([`assist`]).
//!
//! [`synth`] generates ground-truth scenarios and [`eval`] scores discovered
//! objects against them; [`experiment`] runs complete evaluation grids.

// `!(x > 0.0)` style checks are used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assist;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod models;
pub mod moi;
pub mod offline;
pub mod online;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
