//! Financial stress detection on sliding-window correlation networks.
//!
//! The pipeline turns a daily price panel into a sequence of weighted
//! directed graphs ([`corrnet`]), extracts persistent-homology norms
//! ([`ph`]), PCA projections ([`features`]) or neural anomaly scores
//! ([`gnn`]), scores each trading day ([`detectors`]) and evaluates the
//! flagged days against labelled stress events ([`eval`]).

pub mod archive;
pub mod autodiff;
pub mod corrnet;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod features;
pub mod gnn;
pub mod ingest;
pub mod ph;
pub mod pipeline;
pub mod svg;
pub mod synth;
pub mod table;

pub use error::{Error, ErrorClass, Result};
