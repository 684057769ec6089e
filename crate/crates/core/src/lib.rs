//! Geolocation of platform users from comment text, subreddit activity,
//! and posting-time profiles.

pub mod corpus;
pub mod data;
pub mod error;
pub mod eval;
pub mod extract;
pub mod features;
pub mod gazetteer;
pub mod geo;
pub mod label;
pub mod model;
pub mod persist;
pub mod synth;

pub use error::{Error, Result};
pub use geo::GeoPoint;
