//! Sentence classification with translations as extra views.
//!
//! Each view (the original sentence and its translations) is encoded by its
//! own convolutional encoder. The resulting vectors are either concatenated
//! directly ([`model::Mode::B1`], optionally with L2 weight decay in
//! [`model::Mode::B2`]) or first corrected by the context-fixing attachment in
//! [`mcfa`], which gates every view's vector using the other views.

pub mod analysis;
pub mod data;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod mcfa;
pub mod model;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Exec;
