//! Merging latent spaces of independently trained models.
//!
//! Each space is re-expressed as cosine similarities to a shared, ordered
//! set of anchor samples; spaces expressed that way can be merged by taking
//! the per-sample mean. The crate also provides the two absolute-coordinate
//! baselines, linear CKA and a class separability score for comparing the
//! results, simple downstream probes, the task partition schemes used to
//! build merge scenarios, and a synthetic space generator.

pub mod aggregate;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod relative;
pub mod space;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::{Matrix, Seed};
pub use space::{AggregatedSpace, AggregationMode, AnySpace, EmbeddingSpace, Label, MetricReport, RelativeSpace};
