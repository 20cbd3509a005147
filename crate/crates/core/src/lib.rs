//! Desk-scale simulator of federated domain generalisation with energy-based
//! alignment (FEDA) and federated active learning with fixed and variable
//! budgets (FEDAL / FEDALV), built on a self-contained, gradient-checked
//! numerical core.

pub mod al;
pub mod datagen;
pub mod energy;
pub mod error;
pub mod fed;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
