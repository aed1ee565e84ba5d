//! Sense-maintained sentence mixup for word sense disambiguation.
//!
//! The crate generates label-preserving augmented sentences for rare word
//! senses: a saliency-selected span around the target word is spliced into
//! a host sentence between two mask sentinels, an infill engine smooths the
//! seams, and an acceptability judge filters the result. Around that core it
//! provides corpus ingestion, a toy bi-encoder backend, two-stage training,
//! micro/macro F1 scoring and an embedding-overlap diagnostic.

pub mod augmentor;
pub mod backends;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod inventory;
pub mod mixer;
pub mod seed;
pub mod spanselect;
pub mod synthetic;
pub mod training;
pub mod wsdeval;

pub use error::{Error, Result};
