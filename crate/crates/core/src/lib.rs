// SPDX-License-Identifier: Apache-2.0

//! Learned deformation-field model of a lithography-and-etch process and a
//! self-supervised mask corrector trained through it.

// `!(x > 0.0)` checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffwarp;
pub mod error;
pub mod faboracle;
pub mod layoutgen;
pub mod losses;
pub mod nets;
pub mod raster;
pub mod train;

pub use error::{Error, Result};
