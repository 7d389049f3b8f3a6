//! Random caching of SVC-layered video in a three-tier wireless edge network.
//!
//! - [`content`]: library, popularity and quality preference
//! - [`geometry`]: PPP topologies, fading, SINR and hit probabilities
//! - [`policy`]: placement matrices and baseline placements
//! - [`delaymodel`]: analytic expected delay, its gradient and baselines
//! - [`optimizer`]: capacity projection and gradient projection
//! - [`montecarlo`]: trial-level simulation used to validate the analytic model
//! - [`config`] / [`cli`]: experiment configuration and the command drivers

pub mod cli;
pub mod config;
pub mod content;
pub mod delaymodel;
pub mod error;
pub mod geometry;
pub mod montecarlo;
pub mod optimizer;
pub mod policy;

pub use error::{Error, Result};
