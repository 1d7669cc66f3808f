//! Context-aware streaming perception toolkit.
//!
//! The crate simulates a detection + tracking pipeline under inference latency,
//! scores it with offline and streaming CLEAR-MOT metrics, builds a per-segment
//! configuration-score dataset, and learns a policy that picks pipeline
//! metaparameters for each segment from environment features.
//!
//! Modules follow the data flow:
//!
//! * [`scenegen`] synthesizes ground-truth driving scenarios and slices them into segments.
//! * [`pipesim`] runs a detector/SORT pipeline over a scenario under a [`pipesim::PipelineConfig`].
//! * [`streameval`] computes MOTA/S-MOTA and the degradation per segment.
//! * [`sweep`] runs every configuration on every segment and derives baselines.
//! * [`featext`] turns tracks into a fixed-layout environment feature vector.
//! * [`forest`] is the random forest learner.
//! * [`policy`] trains, ranks and evaluates configuration policies.
//! * [`analysis`] holds the explainability reports.
//! * [`experiment`] wires everything into reproducible, file-backed runs.

pub mod analysis;
pub mod bbox;
pub mod error;
pub mod experiment;
pub mod featext;
pub mod forest;
pub mod io;
pub mod pipesim;
pub mod policy;
pub mod rng;
pub mod scenegen;
pub mod streameval;
pub mod sweep;

pub use bbox::{iou, BBox};
pub use error::{Error, Result};
