//! Succinct dynamic dictionaries with o(n)-bit redundancy, and the building
//! blocks they are made of: dynamic matching on the circle, spillover
//! codecs, virtual memories with random swap, B-way adapters, minimaps, and
//! two end-to-end dictionary constructions.
//!
//! Monte-Carlo experiment drivers run data-parallel over seeds via the
//! `parallel` feature (rayon); disabling it falls back to sequential loops
//! with identical results.

pub mod adapter;
pub mod atree;
pub mod bitbuf;
pub mod bitmem;
pub mod exact;
pub mod matching;
pub mod minimap;
pub mod mlhash;
pub mod perm;
pub mod spillover;

pub use perm::Seed;
