//! Listening-test service: serves original/cloned clip pairs to raters,
//! stores 1 to 5 quality and similarity ratings in an append-only log, and
//! aggregates them per speaker and per gender.

pub mod aggregate;
pub mod api;
mod error;
pub mod store;
pub mod study;

pub use aggregate::{aggregate, GenderRow, MosAggregate, SpeakerRow, Stat};
pub use api::{router, serve, AppState};
pub use error::{MosError, Result};
pub use store::{RatingRecord, RatingStore};
pub use study::{ClipPair, Study};
