//! Exact-solution ensemble members for the two advection test problems.
//!
//! Each station launches a stochastic characteristic that is integrated
//! exactly per step, carrying a value driven by the additive forcing noise.
//! The scattered carried values are interpolated back onto the lattice with
//! periodic wrap to form the field at each time.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{streams, GridSpec, NoiseSource};

/// The two drift laws for the characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Problem {
    /// Ornstein-Uhlenbeck drift `dx = -alpha x dt + beta dW`.
    #[cfg_attr(feature = "serde", serde(rename = "problem_i"))]
    One,
    /// Time-accelerating drift `dx = (alpha0 + alpha1 sqrt(t)) dt + beta dW`.
    #[cfg_attr(feature = "serde", serde(rename = "problem_ii"))]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthConfig {
    pub problem: Problem,
    pub alpha: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Wave-speed noise amplitude.
    pub beta: f64,
    /// Forcing noise amplitude `A`.
    pub forcing_amp: f64,
    /// Mean forcing `f`, uniform in space and time.
    pub forcing_mean: f64,
    pub init_center: f64,
    /// Per-station variance `P0` of the initial perturbation.
    pub init_var: f64,
}

impl TruthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.problem == Problem::One && !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: "relaxation rate must be positive",
            });
        }
        for (name, v) in [
            ("beta", self.beta),
            ("forcing_amp", self.forcing_amp),
            ("init_var", self.init_var),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be nonnegative and finite",
                });
            }
        }
        Ok(())
    }
}

/// Truth values on the lattice and the characteristic positions, one row
/// per time index `0..=N_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthField {
    pub values: Vec<DVector<f64>>,
    pub characteristic_paths: Vec<DVector<f64>>,
}

/// The three independent streams consumed by [`generate_truth`].
#[derive(Debug, Clone)]
pub struct TruthNoise {
    pub initial: NoiseSource,
    pub forcing: NoiseSource,
    pub speed: NoiseSource,
}

impl TruthNoise {
    pub fn from_seed(seed: u64) -> Self {
        TruthNoise {
            initial: NoiseSource::new(seed, streams::INITIAL_CONDITION),
            forcing: NoiseSource::new(seed, streams::TRUTH_FORCING),
            speed: NoiseSource::new(seed, streams::TRUTH_SPEED),
        }
    }
}

/// `S = int (1 - 4 s^2) ds` over `|s| <= 1/2`.
pub const PULSE_NORMALIZATION: f64 = 2.0 / 3.0;

/// Noise-free pulse `(1/S)[1 - 4 (x - x0)^2]` on its support, measured with
/// the periodic distance to `x0`.
pub fn mean_pulse(grid: &GridSpec, cfg: &TruthConfig) -> Result<DVector<f64>> {
    let l = grid.domain_length;
    if !(cfg.init_center > 0.0 && cfg.init_center < l) {
        return Err(Error::InvalidParameter {
            name: "init_center",
            reason: "must lie strictly inside (0, L)",
        });
    }
    if l < 1.0 {
        return Err(Error::InvalidParameter {
            name: "domain_length",
            reason: "pulse support (width 1) does not fit in one period",
        });
    }
    Ok(DVector::from_iterator(
        grid.n_points,
        grid.stations().map(|x| {
            let mut d = x - cfg.init_center;
            d -= l * libm::round(d / l);
            if d * d <= 0.25 {
                (1.0 - 4.0 * d * d) / PULSE_NORMALIZATION
            } else {
                0.0
            }
        }),
    ))
}

/// Mean pulse plus a per-station `N(0, P0)` perturbation.
pub fn initial_pulse(
    grid: &GridSpec,
    cfg: &TruthConfig,
    src: &mut NoiseSource,
) -> Result<DVector<f64>> {
    let mut u = mean_pulse(grid, cfg)?;
    let e = src.gaussian_vector(grid.n_points, libm::sqrt(cfg.init_var));
    for (ui, ei) in u.iter_mut().zip(e) {
        *ui += ei;
    }
    Ok(u)
}

/// Mean wave speed `c(x, t)`.
pub fn mean_speed(cfg: &TruthConfig, x: f64, t: f64) -> f64 {
    match cfg.problem {
        Problem::One => -cfg.alpha * x,
        Problem::Two => cfg.alpha0 + cfg.alpha1 * libm::sqrt(t),
    }
}

/// Mean speeds at every station at time `t`.
pub fn station_speeds(grid: &GridSpec, cfg: &TruthConfig, t: f64) -> DVector<f64> {
    DVector::from_iterator(
        grid.n_points,
        grid.stations().map(|x| mean_speed(cfg, x, t)),
    )
}

/// Largest `|c|` the model will see over the whole horizon with time step
/// `dt`. For the Ornstein-Uhlenbeck drift this is a scan of the stations at
/// `t = 0`; for the accelerating drift it is the speed at the final time.
pub fn horizon_max_speed(grid: &GridSpec, cfg: &TruthConfig, dt: f64) -> f64 {
    match cfg.problem {
        Problem::One => grid
            .stations()
            .map(|x| libm::fabs(mean_speed(cfg, x, 0.0)))
            .fold(0.0, f64::max),
        Problem::Two => {
            let t_f = grid.n_steps as f64 * dt;
            libm::fabs(mean_speed(cfg, 0.0, 0.0)).max(libm::fabs(mean_speed(cfg, 0.0, t_f)))
        }
    }
}

/// Closed-form one-step transition of a characteristic over `grid.dt`,
/// wrapped into `[0, L)`.
///
/// The accelerating drift uses the displacement
/// `alpha0 dt + (2/3) alpha1 dt^{3/2}` at every step. That is the integral of
/// the mean speed from `t = 0` only; later steps do not see the
/// `sqrt(t)` growth, so `t` does not enter either closed form.
pub fn step_characteristic_exact(
    cfg: &TruthConfig,
    grid: &GridSpec,
    x: f64,
    _t: f64,
    src: &mut NoiseSource,
) -> f64 {
    let dt = grid.dt;
    let z = src.standard_normal();
    let next = match cfg.problem {
        Problem::One => {
            let decay = libm::exp(-cfg.alpha * dt);
            let var = cfg.beta * cfg.beta / (2.0 * cfg.alpha) * (1.0 - decay * decay);
            x * decay + libm::sqrt(var) * z
        }
        Problem::Two => {
            let drift = cfg.alpha0 * dt + 2.0 / 3.0 * cfg.alpha1 * libm::pow(dt, 1.5);
            x + drift + libm::sqrt(cfg.beta * cfg.beta * dt) * z
        }
    };
    grid.wrap(next)
}

/// Integrates every characteristic and its carried value over `N_f` steps.
pub fn generate_truth(
    grid: &GridSpec,
    cfg: &TruthConfig,
    noise: &mut TruthNoise,
) -> Result<TruthField> {
    cfg.validate()?;
    let n = grid.n_points;
    let u0 = initial_pulse(grid, cfg, &mut noise.initial)?;
    let mut carried: Vec<f64> = u0.iter().copied().collect();
    let mut positions: Vec<f64> = grid.stations().collect();

    let mut values = Vec::with_capacity(grid.n_steps + 1);
    let mut paths = Vec::with_capacity(grid.n_steps + 1);
    values.push(u0);
    paths.push(DVector::from_column_slice(&positions));

    let forcing_sd = cfg.forcing_amp * libm::sqrt(grid.dt);
    for step in 0..grid.n_steps {
        let t = grid.time(step);
        for p in positions.iter_mut() {
            *p = step_characteristic_exact(cfg, grid, *p, t, &mut noise.speed);
        }
        let kicks = noise.forcing.gaussian_vector(n, forcing_sd);
        for (phi, kick) in carried.iter_mut().zip(kicks) {
            *phi += cfg.forcing_mean * grid.dt + kick;
        }
        values.push(
            interpolate_periodic(grid, &positions, &carried)
                .map_err(|_| collapsed(step + 1, &positions))?,
        );
        paths.push(DVector::from_column_slice(&positions));
    }
    Ok(TruthField {
        values,
        characteristic_paths: paths,
    })
}

fn collapsed(step: usize, positions: &[f64]) -> Error {
    let mut sorted: Vec<f64> = positions.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Error::CollapsedCharacteristics {
        step,
        distinct: sorted.len(),
    }
}

/// Linear interpolation of scattered periodic samples onto the stations.
/// Each node takes the two samples that bracket it after sorting, with the
/// last sample wrapped one period to the left of the first.
pub fn interpolate_periodic(
    grid: &GridSpec,
    positions: &[f64],
    values: &[f64],
) -> Result<DVector<f64>> {
    if positions.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: positions.len(),
            found: values.len(),
        });
    }
    let mut samples: Vec<(f64, f64)> = positions
        .iter()
        .zip(values)
        .map(|(&p, &v)| (grid.wrap(p), v))
        .collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let distinct = 1 + samples.windows(2).filter(|w| w[1].0 > w[0].0).count();
    if samples.is_empty() || distinct < 2 {
        return Err(Error::CollapsedCharacteristics {
            step: 0,
            distinct: if samples.is_empty() { 0 } else { distinct },
        });
    }

    let l = grid.domain_length;
    let m = samples.len();
    let out = grid.stations().map(|x| {
        let idx = samples.partition_point(|s| s.0 <= x);
        let (xl, vl) = if idx == 0 {
            (samples[m - 1].0 - l, samples[m - 1].1)
        } else {
            samples[idx - 1]
        };
        let (xr, vr) = if idx == m {
            (samples[0].0 + l, samples[0].1)
        } else {
            samples[idx]
        };
        let w = (x - xl) / (xr - xl);
        vl + w * (vr - vl)
    });
    Ok(DVector::from_iterator(grid.n_points, out))
}
