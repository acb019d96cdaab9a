//! Desk-scale laboratory for knowledge distillation under domain shift.
//!
//! A teacher MLP is trained on source domains, frozen, and distilled into a
//! smaller student. Every student checkpoint is persisted so that the
//! selection strategies (best-validation single model, SWAD segment averaging,
//! SMA prefix averaging and WAKD tail averaging) run as post-hoc passes over
//! one shared trajectory. Models are finally scored on a held-out target
//! domain.

pub mod averaging;
pub mod data;
pub mod error;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod trajectory;

pub use error::{Error, Result};
