//! Speaker- and age-invariant acoustic model training by adversarial
//! multi-task learning.
//!
//! A shared TDNN feature generator feeds a senone classifier directly and
//! speaker and age discriminators through gradient reversal layers. Training
//! alternates three phases per repeat: generator and senone head on the
//! senone loss, discriminators on their own losses with the generator frozen,
//! then the generator alone against all three losses with the reversed
//! discriminator gradients scaled by a ramped α.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod formats;
pub mod frontend;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
