// SPDX-License-Identifier: Apache-2.0

//! Hand-written convolutional networks with analytic backpropagation: the
//! deformation generator, the parameter regressor and the mask generator.

pub mod generator;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod pipeline;
pub mod regressor;
mod scalar;
mod tensor;

pub use generator::{Generator, GeneratorConfig, Head};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use params::{ParamSpec, ParamStore};
pub use regressor::{Regressor, RegressorConfig};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::diffwarp::DeformationMap;
use crate::error::Result;
use crate::faboracle::FabParam;
use crate::raster::Raster;

/// Deformation map predicted for layout `s` under parameter `y`.
pub fn litho_generator_forward<T: Scalar>(
    g: &Generator,
    theta: &ParamStore<T>,
    s: &Raster,
    y: &FabParam,
) -> Result<DeformationMap> {
    g.check(theta, s.height(), s.width(), y.dim())?;
    Ok(pipeline::predict(g, theta, s.pixels(), s.width(), s.height(), y.components()).0)
}

pub fn opc_generator_forward<T: Scalar>(k: &Generator, theta: &ParamStore<T>, s: &Raster) -> Result<Raster> {
    k.check(theta, s.height(), s.width(), 0)?;
    let mask = pipeline::predict_mask(k, theta, s.pixels(), s.width(), s.height());
    Raster::new(s.width(), s.height(), mask)
}

/// Unbounded parameter estimate for `img`.
pub fn regressor_forward<T: Scalar>(d: &Regressor, theta: &ParamStore<T>, img: &Raster) -> Result<Vec<f64>> {
    d.check(theta, img.height(), img.width())?;
    Ok(pipeline::estimate_param(
        d,
        theta,
        img.pixels(),
        img.width(),
        img.height(),
    ))
}

#[cfg(test)]
mod tests;
