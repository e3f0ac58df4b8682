//! Scalar AR(p) estimation and forecasting for a single fixed-length series.
//!
//! The model is `y[n] = -sum_{k=1}^{p} a[k]*y[n-k] + u[n]` for a zero-mean
//! process; the sample mean is subtracted before fitting and added back after
//! forecasting. Coefficients solve the Yule-Walker system built from biased
//! sample autocovariances, which keeps the Toeplitz matrix positive
//! semi-definite and `|a[1]| <= 1` for first-order fits.

use crate::error::{Error, Result};

/// An N-point amplitude series sampled at one pixel position across the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
}

impl Series {
    /// Validates length (at least 2 samples) and finiteness.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "series needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite sample {} at index {pos}",
                values[pos]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

/// A fitted AR(p) model: coefficients in the `y[n] = -sum a[k] y[n-k] + u[n]`
/// sign convention, the sample mean removed before fitting, and the
/// prediction-error variance of the innovation term.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    order: usize,
    coefficients: Vec<f64>,
    mean: f64,
    noise_variance: f64,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Estimated coefficients `a[1..=p]`, index 0 holding `a[1]`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Euclidean norm of the coefficient vector; equals `|a[1]|` for p = 1.
    pub fn coefficient_magnitude(&self) -> f64 {
        self.coefficients.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Forecasts `horizon` steps past the end of `series`.
    ///
    /// Observed (mean-centered) values feed the recursion wherever available;
    /// beyond the end of the series previously forecast values are used.
    pub fn forecast(&self, series: &Series, horizon: usize) -> Result<f64> {
        if horizon < 1 {
            return Err(Error::InvalidArgument(
                "forecast horizon must be at least 1".into(),
            ));
        }
        if series.len() < self.order {
            return Err(Error::InvalidArgument(format!(
                "series length {} is shorter than model order {}",
                series.len(),
                self.order
            )));
        }
        Ok(self.forecast_slice(series.values(), horizon))
    }

    /// Unchecked fast path used per pixel by the estimate stage.
    pub(crate) fn forecast_slice(&self, values: &[f64], horizon: usize) -> f64 {
        // Last p centered values, oldest first.
        let mut recent: Vec<f64> = values[values.len() - self.order..]
            .iter()
            .map(|v| v - self.mean)
            .collect();
        let mut next = 0.0;
        for _ in 0..horizon {
            next = -self
                .coefficients
                .iter()
                .zip(recent.iter().rev())
                .map(|(a, z)| a * z)
                .sum::<f64>();
            recent.rotate_left(1);
            *recent.last_mut().expect("order >= 1") = next;
        }
        next + self.mean
    }
}

/// Biased sample autocovariance of the mean-centered series:
/// `r[k] = (1/N) * sum_{n} (y[n]-mean)(y[n+k]-mean)` for `k = 0..=max_lag`.
pub fn autocorrelation(series: &Series, max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "max_lag {} must be smaller than the series length {}",
            max_lag,
            series.len()
        )));
    }
    Ok(autocovariance(series.values(), max_lag))
}

pub(crate) fn autocovariance(values: &[f64], max_lag: usize) -> Vec<f64> {
    let n = values.len();
    let mean = mean(values);
    let mut r = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut acc = 0.0;
        for i in 0..n - k {
            acc += (values[i] - mean) * (values[i + k] - mean);
        }
        r.push(acc / n as f64);
    }
    r
}

/// Fits an AR(p) model by solving the Yule-Walker equations with the
/// Levinson-Durbin recursion.
///
/// A constant (zero-variance) series yields the zero model rather than an
/// error: all coefficients zero, `noise_variance` zero, mean preserved.
pub fn fit_yule_walker(series: &Series, order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidArgument("model order must be at least 1".into()));
    }
    if order >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "model order {} must be smaller than the series length {}",
            order,
            series.len()
        )));
    }
    Ok(fit_slice(series.values(), order))
}

pub(crate) fn fit_slice(values: &[f64], order: usize) -> ArModel {
    let r = autocovariance(values, order);
    let mean = mean(values);
    // Constant pixels (radiometric floor, masked regions) must not produce
    // NaN coefficients.
    let eps = 1e-12 * f64::max(1.0, mean * mean);
    if r[0] <= eps {
        return ArModel {
            order,
            coefficients: vec![0.0; order],
            mean,
            noise_variance: 0.0,
        };
    }
    let (phi, prediction_error) = levinson_durbin(&r, order);
    ArModel {
        order,
        coefficients: phi.iter().map(|p| -p).collect(),
        mean,
        noise_variance: prediction_error.max(0.0),
    }
}

/// Solves the Toeplitz system `R * phi = [r[1..=p]]` where `R[i][j] = r[|i-j|]`,
/// returning the forward-prediction coefficients and the prediction-error
/// variance. The caller maps `a[k] = -phi[k]`.
fn levinson_durbin(r: &[f64], order: usize) -> (Vec<f64>, f64) {
    let mut phi = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut e = r[0];
    for m in 0..order {
        let mut acc = r[m + 1];
        for j in 0..m {
            acc -= phi[j] * r[m - j];
        }
        // Biased autocovariances keep reflection coefficients in [-1, 1];
        // the clamp guards rounding at the boundary.
        let k = if e > 0.0 { (acc / e).clamp(-1.0, 1.0) } else { 0.0 };
        prev[..m].copy_from_slice(&phi[..m]);
        phi[m] = k;
        for j in 0..m {
            phi[j] = prev[j] - k * prev[m - 1 - j];
        }
        e *= 1.0 - k * k;
        if e < 0.0 {
            e = 0.0;
        }
    }
    (phi, e)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(values: &[f64]) -> Series {
        Series::new(values.to_vec()).unwrap()
    }

    fn alternating(n: usize) -> Series {
        series(&(0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>())
    }

    #[test]
    fn autocorrelation_of_short_ramp() {
        let r = autocorrelation(&series(&[1.0, 2.0, 3.0]), 1).unwrap();
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(r[1].abs() < 1e-15);
    }

    #[test]
    fn autocorrelation_of_constant_series_is_zero() {
        let r = autocorrelation(&series(&[4.0; 6]), 1).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let r = autocorrelation(&alternating(8), 1).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        assert!((r[1] - (-7.0 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn autocorrelation_rejects_lag_at_series_length() {
        assert!(matches!(
            autocorrelation(&series(&[1.0, 2.0]), 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn series_rejects_non_finite_values() {
        assert!(matches!(
            Series::new(vec![1.0, f64::NAN, 2.0]),
            Err(Error::InvalidData(_))
        ));
        assert!(matches!(
            Series::new(vec![1.0, f64::INFINITY]),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn series_rejects_single_sample() {
        assert!(matches!(Series::new(vec![1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fit_constant_series_returns_zero_model() {
        let m = fit_yule_walker(&series(&[3.5; 8]), 1).unwrap();
        assert_eq!(m.coefficients(), &[0.0]);
        assert_eq!(m.mean(), 3.5);
        assert_eq!(m.noise_variance(), 0.0);
    }

    #[test]
    fn fit_alternating_series() {
        let m = fit_yule_walker(&alternating(8), 1).unwrap();
        assert!((m.coefficients()[0] - 7.0 / 8.0).abs() < 1e-15);
        assert!(m.mean().abs() < 1e-15);
    }

    #[test]
    fn fit_rejects_order_of_zero_or_too_large() {
        let s = series(&[1.0, 2.0, 3.0]);
        assert!(matches!(fit_yule_walker(&s, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(fit_yule_walker(&s, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn yule_walker_estimator_is_consistent_on_long_ar1_series() {
        // y[n] = -a*y[n-1] + u[n] with a = -0.6, unit-variance white noise.
        let a = -0.6;
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_001);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 10_000;
        let mut y = Vec::with_capacity(n);
        let stationary_sd = (1.0 / (1.0 - a * a) as f64).sqrt();
        y.push(stationary_sd * normal.sample(&mut rng));
        for _ in 1..n {
            y.push(-a * y.last().unwrap() + normal.sample(&mut rng));
        }
        let m = fit_yule_walker(&Series::new(y).unwrap(), 1).unwrap();
        let a_hat = m.coefficients()[0];
        assert!(
            (-0.64..=-0.56).contains(&a_hat),
            "estimated a[1] = {a_hat} outside [-0.64, -0.56]"
        );
    }

    #[test]
    fn forecast_of_zero_coefficient_model_is_the_mean() {
        let s = series(&[1.0, 2.0, 3.0]);
        let m = fit_yule_walker(&s, 1).unwrap();
        assert_eq!(m.coefficients(), &[0.0]);
        assert!((m.forecast(&s, 1).unwrap() - 2.0).abs() < 1e-15);
        // Zero model forecasts collapse to the mean at any horizon.
        for h in 1..5 {
            assert!((m.forecast(&s, h).unwrap() - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forecast_of_alternating_series() {
        let s = alternating(8);
        let m = fit_yule_walker(&s, 1).unwrap();
        let y = m.forecast(&s, 1).unwrap();
        assert!((y - 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn forecast_rejects_zero_horizon() {
        let s = series(&[1.0, 2.0, 3.0]);
        let m = fit_yule_walker(&s, 1).unwrap();
        assert!(matches!(m.forecast(&s, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn one_step_forecast_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(2.0, 1.5).unwrap();
        for p in 1..=3 {
            for _ in 0..50 {
                let v: Vec<f64> = (0..12).map(|_| normal.sample(&mut rng)).collect();
                let s = Series::new(v.clone()).unwrap();
                let m = fit_yule_walker(&s, p).unwrap();
                let direct = m.mean()
                    - m.coefficients()
                        .iter()
                        .enumerate()
                        .map(|(i, a)| a * (v[v.len() - 1 - i] - m.mean()))
                        .sum::<f64>();
                let recursive = m.forecast(&s, 1).unwrap();
                assert!((direct - recursive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_variance_matches_explicit_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for p in 1..=3 {
            let v: Vec<f64> = (0..16).map(|_| normal.sample(&mut rng)).collect();
            let s = Series::new(v).unwrap();
            let m = fit_yule_walker(&s, p).unwrap();
            let r = autocorrelation(&s, p).unwrap();
            let explicit = r[0]
                + m.coefficients()
                    .iter()
                    .zip(&r[1..])
                    .map(|(a, rk)| a * rk)
                    .sum::<f64>();
            assert!((m.noise_variance() - explicit.max(0.0)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn coefficients_are_shift_invariant(
            values in proptest::collection::vec(-100.0f64..100.0, 4..16),
            shift in -1000.0f64..1000.0,
        ) {
            let base = fit_yule_walker(&Series::new(values.clone()).unwrap(), 1).unwrap();
            let shifted_values: Vec<f64> = values.iter().map(|v| v + shift).collect();
            let shifted = fit_yule_walker(&Series::new(shifted_values).unwrap(), 1).unwrap();
            prop_assert!((base.coefficients()[0] - shifted.coefficients()[0]).abs() < 1e-9);
        }

        #[test]
        fn coefficients_are_scale_equivariant(
            values in proptest::collection::vec(-100.0f64..100.0, 4..16),
            scale in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        ) {
            let base = fit_yule_walker(&Series::new(values.clone()).unwrap(), 1).unwrap();
            let scaled_values: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let scaled = fit_yule_walker(&Series::new(scaled_values).unwrap(), 1).unwrap();
            prop_assert!((base.coefficients()[0] - scaled.coefficients()[0]).abs() < 1e-9);
            let expected_var = base.noise_variance() * scale * scale;
            let tol = 1e-9 * f64::max(1.0, expected_var.abs());
            prop_assert!((scaled.noise_variance() - expected_var).abs() < tol);
        }

        #[test]
        fn first_order_coefficient_is_bounded_by_one(
            values in proptest::collection::vec(-1e6f64..1e6, 2..32),
        ) {
            let m = fit_yule_walker(&Series::new(values).unwrap(), 1).unwrap();
            prop_assert!(m.coefficients()[0].abs() <= 1.0);
        }
    }
}
