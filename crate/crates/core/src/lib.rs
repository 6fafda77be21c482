//! Shallow detection cascades of heterogeneous probabilistic classifiers.
//!
//! The crate covers the whole workflow: data preparation ([`data`]),
//! stage classifiers ([`models`]), the self-gated combination rule and its
//! cost-regularized objective ([`cascade`]), optimization drivers
//! ([`training`]), hard early-exit execution ([`runtime`]) and
//! regularization sweeps ([`sweep`]).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the common instantiations.

pub mod cascade;
pub mod config;
pub mod data;
pub mod error;
pub mod models;
pub mod rng;
pub mod runtime;
pub mod scalar;
pub mod sweep;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type StageModel64 = models::StageModel<f64>;
pub type StageModel32 = models::StageModel<f32>;
pub type CascadeModel64 = cascade::CascadeModel<f64>;
pub type CascadeModel32 = cascade::CascadeModel<f32>;
pub type CostSchedule64 = cascade::CostSchedule<f64>;
pub type CostSchedule32 = cascade::CostSchedule<f32>;
pub type TrainConfig64 = training::TrainConfig<f64>;
pub type TrainConfig32 = training::TrainConfig<f32>;
