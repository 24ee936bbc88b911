//! Fitting sums of cosine-power lobes to LED luminous intensity
//! distributions.

pub mod derivatives;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod model;
pub mod newton;
pub mod photometry;
pub mod search;
pub mod seed;
