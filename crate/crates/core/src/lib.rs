//! Curation of passive acoustic monitoring (PAM) windows into a balanced
//! training manifest.
//!
//! The pipeline has two branches that meet in [`assemble`]:
//!
//! * AIS branch: [`geo::align`] finds windows recorded while a ship was
//!   inside a hydrophone's fence, and [`ais::curate`] flattens the
//!   long-tailed per-ship distribution with an occurrence threshold.
//! * Embedding branch: [`hkmeans::build_hierarchy`] fits a hierarchical
//!   k-means model over window embeddings, and [`hsample`] draws a
//!   cluster-balanced subset with bounded memory.

mod binio;

pub mod ais;
pub mod assemble;
pub mod error;
pub mod geo;
pub mod hkmeans;
pub mod hsample;
pub mod manifest;
pub mod model;
pub mod shard;

pub use error::{Error, ParseError, Result};
pub use manifest::{CurationManifest, ManifestEntry, Source};
pub use model::{AisPulse, AudioWindow, ClusterPath, DeploymentConfig, GeoPoint, Mmsi, WindowId};
pub use shard::EmbeddingShard;
