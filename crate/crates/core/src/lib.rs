//! Warranty claim cost forecasting.

pub mod claims;
pub mod cost;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod quadrature;
pub mod sales;
pub mod scalar;
pub mod sim;
pub mod stable;
pub mod tail;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ClaimsMeasure64 = model::ClaimsMeasure<f64>;
pub type ClaimsMeasure32 = model::ClaimsMeasure<f32>;
pub type MeanClaimsMeasure64 = model::MeanClaimsMeasure<f64>;
pub type MeanClaimsMeasure32 = model::MeanClaimsMeasure<f32>;
pub type RebateFunction64 = model::RebateFunction<f64>;
pub type RebateFunction32 = model::RebateFunction<f32>;
pub type TimeHorizon = model::TimeHorizon;
