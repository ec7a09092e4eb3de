//! Numerical laboratory for soliton dynamics of the deterministically and
//! stochastically forced KdV equation
//!
//! `du = −(∂ₓ³u + 2u∂ₓu) dt + ε f(t) u dt + σ u dW^Q`.
//!
//! The crate simulates the SPDE with a Strang-split pseudospectral scheme,
//! tracks soliton amplitude/position through the variational modulation
//! decomposition, integrates the reduced amplitude SDE, verifies the linear
//! stability structure of the traveling-wave operator on exponentially
//! weighted spaces, and estimates exit-time probabilities by Monte Carlo.

pub mod error;
pub mod grid;
pub mod harness;
mod linalg;
pub mod modulation;
pub mod noise;
pub mod solver;
pub mod soliton;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{inner_product, l2_norm, l2_norm_sq, weighted_l2_norm, Field, Grid, Spectral, WeightConfig};
pub use soliton::{AmplitudeWindow, SolitonParams};
