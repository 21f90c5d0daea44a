//! Table structure recovery from cell geometry, text, and page images.
//!
//! Cells become nodes of a K-nearest-neighbour graph; a graph network
//! classifies each candidate edge as same-row and same-column, and the grid
//! is rebuilt from those relations.

pub mod cellgraph;
pub mod error;
pub mod features;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod raster;
pub mod recover;
pub mod rng;
pub mod table;
pub mod train;

pub use error::{Error, ErrorClass, Result};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of a value's JSON form.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes to JSON");
    hex16(&Sha256::digest(&json))
}

pub(crate) fn hex16(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
