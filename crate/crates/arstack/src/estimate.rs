//! Per-pixel ground estimation: fits an AR(p) model to every pixel series
//! and forecasts one step ahead, producing the change-free reference raster
//! and the coefficient-magnitude raster.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stack::{ImageStack, Raster};
use crate::timeseries;

/// The forecast scene plus the per-pixel coefficient magnitude (`|a[1]|` for
/// p = 1, Euclidean norm of the coefficient vector for higher orders).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundEstimate {
    forecast: Raster,
    coef_magnitude: Raster,
    order: usize,
}

impl GroundEstimate {
    pub fn forecast(&self) -> &Raster {
        &self.forecast
    }

    pub fn coef_magnitude(&self) -> &Raster {
        &self.coef_magnitude
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// Fits every pixel and forecasts `horizon` steps past the end of the stack.
///
/// Each pixel depends only on its own series, so the computation partitions
/// across rows; results are bit-identical regardless of thread count.
/// Degenerate (constant) pixels fit the zero model and forecast their mean.
pub fn estimate_ground(stack: &ImageStack, order: usize, horizon: usize) -> Result<GroundEstimate> {
    let n = stack.len();
    if order == 0 || order >= n {
        return Err(Error::InvalidArgument(format!(
            "model order must satisfy 1 <= p < {n}, got {order}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    let (w, h) = (stack.width(), stack.height());
    let layers = stack.layers();
    let mut forecast = vec![0f32; w * h];
    let mut coef = vec![0f32; w * h];

    forecast
        .par_chunks_mut(w)
        .zip(coef.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (forecast_row, coef_row))| {
            let mut values = vec![0f64; n];
            for x in 0..w {
                let idx = y * w + x;
                for (i, layer) in layers.iter().enumerate() {
                    values[i] = layer.pixels()[idx] as f64;
                }
                let model = timeseries::fit_slice(&values, order);
                forecast_row[x] = model.forecast_slice(&values, horizon) as f32;
                coef_row[x] = model.coefficient_magnitude() as f32;
            }
        });

    let area = stack.layer(0).pixel_area_m2();
    Ok(GroundEstimate {
        forecast: Raster::new(w, h, forecast, area)?,
        coef_magnitude: Raster::new(w, h, coef, area)?,
        order,
    })
}

/// Surveillance minus forecast, pixelwise. The output may be negative.
pub fn difference_image(surveillance: &Raster, ground: &GroundEstimate) -> Result<Raster> {
    let forecast = ground.forecast();
    if !surveillance.same_shape(forecast) {
        return Err(Error::DimensionMismatch(format!(
            "surveillance is {}x{}, ground estimate is {}x{}",
            surveillance.width(),
            surveillance.height(),
            forecast.width(),
            forecast.height()
        )));
    }
    let pixels = surveillance
        .pixels()
        .iter()
        .zip(forecast.pixels())
        .map(|(s, f)| s - f)
        .collect();
    Raster::new(
        surveillance.width(),
        surveillance.height(),
        pixels,
        surveillance.pixel_area_m2(),
    )
}
