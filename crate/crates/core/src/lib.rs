//! Multimodal grid encodings of scanned documents and a compact
//! segmentation network for key field extraction.

pub mod corpus;
pub mod embed;
pub mod grid;
pub mod net;
pub mod rng;
pub mod extract;
pub mod metrics;
pub mod objective;
