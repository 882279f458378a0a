//! Ground-to-2.5D-map geolocalization: semantic map sampling, cross-modal
//! fusion geometry, contrastive embedding losses, embedding retrieval and
//! route-based localization, with a seeded synthetic city for end-to-end
//! runs.

mod binio;
pub mod cli;
pub mod contrastive;
pub mod embedindex;
pub mod error;
pub mod fusion;
pub mod localizer;
pub mod mapgen;
pub mod pointops;
pub mod rng;
pub mod synthcity;

pub use error::{Error, Result};
