//! Template clustering, cluster-based template aggregation and open-set
//! identification over generic feature vectors.
//!
//! The pipeline runs from a [`Dataset`] of per-frame embeddings to
//! media-averaged [`Template`]s, then either to agglomerative clustering
//! (optionally per attribute subset) scored by pairwise F1, or to k-means
//! template aggregation scored by rank-k and TPIR at fixed FPIR.

pub mod aggregate;
pub mod annkm;
pub mod data;
pub mod error;
pub mod hac;
pub mod io;
pub mod metrics;
pub mod partition;
pub mod rng;
pub mod svmassoc;
pub mod synth;

pub use data::{AttributeRecord, Dataset, Embedding, Gender, Modality, Sample, Template};
pub use error::{Error, Result};
pub use rng::Prng;
