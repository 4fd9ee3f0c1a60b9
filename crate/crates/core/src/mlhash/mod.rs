//! The multi-level hashing dictionary and its parts.

pub mod rankset;

pub use rankset::{decode_set, encode_set, rank_set, unrank_set};
