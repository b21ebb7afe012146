//! Reference Kalman filter: forecast through the model, analysis at
//! acquisition times.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, StateEstimate};
use crate::linalg;
use crate::model::{self, ModelConfig};
use crate::obsnet::Observation;

/// `N x K` gain produced at an observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanGain {
    pub gain: DMatrix<f64>,
}

/// Posterior covariance formula used by [`analysis_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceUpdate {
    /// `(I - K H) P`.
    #[default]
    Standard,
    /// `(I - K H) P (I - K H)^T + K R K^T`.
    Joseph,
}

/// Forecast with an explicit transition matrix.
pub fn forecast_with(
    prev: &StateEstimate,
    transition: &DMatrix<f64>,
    cfg: &ModelConfig,
    dt: f64,
) -> Result<StateEstimate> {
    let n = prev.dim();
    if transition.nrows() != n || transition.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: transition.nrows(),
        });
    }
    let mut mean = transition * &prev.mean;
    if let Some(f) = cfg.forcing.at(prev.time_index) {
        mean.axpy(dt, f, 1.0);
    }
    let mut cov = transition * &prev.covariance * transition.transpose();
    for i in 0..n {
        cov[(i, i)] += cfg.model_noise_var;
    }
    linalg::symmetrize(&mut cov);
    StateEstimate::new(prev.time_index + 1, mean, cov)
}

/// Forecast through the Lax-Friedrichs model built from `speeds`, the mean
/// speeds at the stations at the previous time.
pub fn forecast(
    prev: &StateEstimate,
    grid: &GridSpec,
    cfg: &ModelConfig,
    speeds: &DVector<f64>,
) -> Result<StateEstimate> {
    let l = model::lax_friedrichs_matrix(grid, speeds)?;
    forecast_with(prev, &l, cfg, grid.dt)
}

/// `K = P H^T (H P H^T + R I)^{-1}`, solved through a Cholesky factor of the
/// innovation covariance.
pub fn kalman_gain(
    forecast_cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    meas_var: f64,
    time_index: usize,
) -> Result<KalmanGain> {
    if h.ncols() != forecast_cov.nrows() {
        return Err(Error::DimensionMismatch {
            expected: forecast_cov.nrows(),
            found: h.ncols(),
        });
    }
    let pht = forecast_cov * h.transpose();
    let mut s = h * &pht;
    for i in 0..s.nrows() {
        s[(i, i)] += meas_var;
    }
    let gain = linalg::solve_right_spd(&pht, s).ok_or(Error::SingularInnovation { time_index })?;
    Ok(KalmanGain { gain })
}

/// `(I - K H) P (I - K H)^T + K R K^T` for any gain `K`.
pub fn joseph_covariance(
    forecast_cov: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    h: &DMatrix<f64>,
    meas_cov: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = forecast_cov.nrows();
    let a = DMatrix::<f64>::identity(n, n) - gain * h;
    &a * forecast_cov * a.transpose() + gain * meas_cov * gain.transpose()
}

pub fn analysis(
    forecast: &StateEstimate,
    obs_block: &[Observation],
    h: &DMatrix<f64>,
    meas_var: f64,
) -> Result<StateEstimate> {
    analysis_with(forecast, obs_block, h, meas_var, CovarianceUpdate::Standard)
}

/// Updates the forecast with the observations taken at its time index.
/// `obs_block[k]` must be the datum read by row `k` of `h`. An empty block
/// returns the forecast unchanged.
pub fn analysis_with(
    forecast: &StateEstimate,
    obs_block: &[Observation],
    h: &DMatrix<f64>,
    meas_var: f64,
    update: CovarianceUpdate,
) -> Result<StateEstimate> {
    if obs_block.is_empty() {
        return Ok(forecast.clone());
    }
    if obs_block.len() != h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            found: obs_block.len(),
        });
    }
    if let Some(o) = obs_block
        .iter()
        .find(|o| o.time_index != forecast.time_index)
    {
        return Err(Error::ObservationTime {
            expected: forecast.time_index,
            found: o.time_index,
        });
    }
    let k = kalman_gain(&forecast.covariance, h, meas_var, forecast.time_index)?;
    let y = DVector::from_iterator(obs_block.len(), obs_block.iter().map(|o| o.value));
    let innovation = y - h * &forecast.mean;
    let mean = &forecast.mean + &k.gain * innovation;

    let n = forecast.dim();
    let mut cov = match update {
        CovarianceUpdate::Standard => {
            (DMatrix::<f64>::identity(n, n) - &k.gain * h) * &forecast.covariance
        }
        CovarianceUpdate::Joseph => {
            let r = DMatrix::<f64>::identity(h.nrows(), h.nrows()) * meas_var;
            joseph_covariance(&forecast.covariance, &k.gain, h, &r)
        }
    };
    linalg::symmetrize(&mut cov);
    StateEstimate::new(forecast.time_index, mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(mean: f64, var: f64) -> StateEstimate {
        StateEstimate::new(
            3,
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
        .unwrap()
    }

    fn obs(value: f64, station: usize) -> Observation {
        Observation {
            value,
            station,
            time_index: 3,
            variance: 0.02,
        }
    }

    #[test]
    fn identity_transition_keeps_state() {
        let prev = StateEstimate::new(
            0,
            DVector::from_column_slice(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
        )
        .unwrap();
        let cfg = ModelConfig::new(0.0).unwrap();
        let f = forecast_with(&prev, &DMatrix::identity(2, 2), &cfg, 0.1).unwrap();
        assert_eq!(f.mean, prev.mean);
        assert_eq!(f.covariance, prev.covariance);
        assert_eq!(f.time_index, 1);

        let cfg = ModelConfig::new(0.08).unwrap();
        let f = forecast_with(&prev, &DMatrix::identity(2, 2), &cfg, 0.1).unwrap();
        assert_relative_eq!(f.covariance[(0, 0)], 0.58, epsilon = 1e-15);
        assert_relative_eq!(f.covariance[(1, 1)], 0.38, epsilon = 1e-15);
        assert_eq!(f.covariance[(0, 1)], 0.1);
    }

    #[test]
    fn shift_transition_permutes_covariance() {
        let grid = GridSpec::with_dt(0.16, 4, 0.04, 1).unwrap();
        let p = DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let prev = StateEstimate::new(0, DVector::zeros(4), p.clone()).unwrap();
        let cfg = ModelConfig::new(0.0).unwrap();
        let f = forecast(&prev, &grid, &cfg, &DVector::from_element(4, 1.0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (si, sj) = (grid.station(i as isize - 1), grid.station(j as isize - 1));
                assert_eq!(f.covariance[(i, j)], p[(si, sj)]);
            }
        }
        assert_relative_eq!(f.trace(), p.trace(), epsilon = 1e-15);
    }

    #[test]
    fn scalar_gains() {
        let h = DMatrix::identity(1, 1);
        let k = kalman_gain(&DMatrix::from_element(1, 1, 1.0), &h, 1.0, 0).unwrap();
        assert_relative_eq!(k.gain[(0, 0)], 0.5, epsilon = 1e-15);
        let k = kalman_gain(&DMatrix::from_element(1, 1, 0.08), &h, 0.02, 0).unwrap();
        assert_relative_eq!(k.gain[(0, 0)], 0.8, epsilon = 1e-14);
        let k = kalman_gain(&DMatrix::from_element(1, 1, 1.3), &h, 1e9, 0).unwrap();
        assert!(k.gain.norm() < 1e-6);
    }

    #[test]
    fn singular_innovation_reports_time() {
        let p = DMatrix::zeros(2, 2);
        let err = kalman_gain(&p, &DMatrix::identity(2, 2), 0.0, 17).unwrap_err();
        assert_eq!(err, Error::SingularInnovation { time_index: 17 });
    }

    #[test]
    fn scalar_analysis() {
        let post = analysis(
            &scalar(0.0, 0.08),
            &[obs(1.0, 0)],
            &DMatrix::identity(1, 1),
            0.02,
        )
        .unwrap();
        assert_relative_eq!(post.mean[0], 0.8, epsilon = 1e-14);
        assert_relative_eq!(post.covariance[(0, 0)], 0.016, epsilon = 1e-15);
    }

    #[test]
    fn empty_block_is_noop() {
        let f = scalar(0.3, 0.5);
        let post = analysis(&f, &[], &DMatrix::zeros(0, 1), 0.02).unwrap();
        assert_eq!(post, f);
    }

    #[test]
    fn block_mismatch_errors() {
        let f = scalar(0.0, 1.0);
        let h = DMatrix::identity(1, 1);
        assert!(matches!(
            analysis(&f, &[obs(1.0, 0), obs(2.0, 0)], &h, 0.02),
            Err(Error::DimensionMismatch { .. })
        ));
        let late = Observation {
            time_index: 4,
            ..obs(1.0, 0)
        };
        assert!(matches!(
            analysis(&f, &[late], &h, 0.02),
            Err(Error::ObservationTime {
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn joseph_matches_standard_at_optimal_gain() {
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let f = StateEstimate::new(3, DVector::from_column_slice(&[0.1, -0.2, 0.4]), p).unwrap();
        let h = linalg::selector(&[0, 2], 3);
        let block = [obs(0.5, 0), obs(-0.1, 2)];
        let a = analysis_with(&f, &block, &h, 0.3, CovarianceUpdate::Standard).unwrap();
        let b = analysis_with(&f, &block, &h, 0.3, CovarianceUpdate::Joseph).unwrap();
        assert_relative_eq!(a.mean, b.mean, epsilon = 1e-15);
        assert_relative_eq!(a.covariance, b.covariance, epsilon = 1e-13);
        assert!(a.trace() <= f.trace());
    }
}
