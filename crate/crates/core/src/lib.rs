//! Turns per-source company/entity mention corpora into retrieval models.
//!
//! The pipeline: parse mention corpora ([`corpus`]), weight them into a
//! company × technology matrix ([`interaction`]), keep only entities the
//! technology classifier accepts ([`classifier`]), fit a recommender over the
//! matrix ([`recommender`]), and answer company/technology queries
//! ([`retrieval`]) scored with category-overlap precision ([`evaluation`]).

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod interaction;
pub mod nn;
pub mod recommender;
pub mod retrieval;
pub mod synthetic;

pub use error::{Error, Result};
