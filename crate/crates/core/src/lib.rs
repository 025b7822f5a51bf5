// SPDX-License-Identifier: MIT OR Apache-2.0

//! Political concept vectors for transformer hidden states.
//!
//! Learn per-layer, per-dimension directions with CAA, RepE or a logistic
//! probe; measure how well they detect leaning and how entangled they are;
//! then add them back into a toy transformer's residual stream and watch the
//! output move.
//!
//! Modules are layered bottom-up: [`numkit`] → [`corpus`] → [`toy_lm`] →
//! [`activation_store`] → [`concept_vectors`] → [`detection_analysis`] →
//! [`steering`].

pub mod activation_store;
pub mod actv;
pub mod concept_vectors;
pub mod corpus;
pub mod detection_analysis;
pub mod error;
pub mod numkit;
pub mod steering;
pub mod toy_lm;

pub use error::{Error, Result};
