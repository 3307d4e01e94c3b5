//! Reservoir computing with data-driven cold starting.
//!
//! This crate trains leaky echo state networks on partial observations of a
//! dynamical system and learns a *starting map* that sends a short window of
//! observations to a warmed-up reservoir state, so that autonomous
//! path-continuation can begin immediately, without a washout period.
//!
//! The pieces:
//!
//! * [`dynamics`] — Brusselator / Lorenz ODEs, RK4 integration, ensembles.
//! * [`reservoir`] — leaky ESN generation, driven recursion, diagnostics.
//! * [`readout`] — closed-form ridge readout on demeaned states.
//! * [`manifold`] — diffusion maps on time-series windows.
//! * [`harmonics`] — geometric harmonics / Nyström function extension.
//! * [`pca`] — principal components with zero-padded inverse.
//! * [`mlp`] — minimal feedforward network trained with Adam.
//! * [`starting_map`] — window → reservoir-state maps (GH or PCA+MLP backends).
//! * [`experiments`] — end-to-end runs, robustness sweep, CSV outputs.

extern crate blas_src;

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod harmonics;
pub mod linalg;
pub mod manifold;
pub mod matio;
pub mod mlp;
pub mod par;
pub mod pca;
pub mod readout;
pub mod reservoir;
pub mod rng;
pub mod starting_map;

pub use error::{Error, Result};
