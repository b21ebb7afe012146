//! Stochastic Lax-Friedrichs forward model shared by both filters.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, NoiseSource};

/// Deterministic forcing `f_n` added as `dt * f_n` each step.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Forcing {
    #[default]
    Zero,
    /// Same vector at every step.
    Constant(DVector<f64>),
    /// One vector per step index; steps past the end reuse the last entry.
    Schedule(Vec<DVector<f64>>),
}

impl Forcing {
    pub fn at(&self, step: usize) -> Option<&DVector<f64>> {
        match self {
            Forcing::Zero => None,
            Forcing::Constant(f) => Some(f),
            Forcing::Schedule(fs) => fs.get(step).or_else(|| fs.last()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelConfig {
    /// Per-step, per-station model noise variance `Q` (covariance `Q I`).
    pub model_noise_var: f64,
    pub forcing: Forcing,
}

impl ModelConfig {
    pub fn new(model_noise_var: f64) -> Result<Self> {
        if !(model_noise_var >= 0.0) || !model_noise_var.is_finite() {
            return Err(Error::InvalidParameter {
                name: "model_noise_var",
                reason: "must be nonnegative and finite",
            });
        }
        Ok(ModelConfig {
            model_noise_var,
            forcing: Forcing::Zero,
        })
    }
}

/// Courant numbers `lambda_l = dt / dx * c_l`, rejecting any `|lambda| > 1`.
pub fn courant_numbers(grid: &GridSpec, speeds: &DVector<f64>) -> Result<DVector<f64>> {
    if speeds.len() != grid.n_points {
        return Err(Error::DimensionMismatch {
            expected: grid.n_points,
            found: speeds.len(),
        });
    }
    let ratio = grid.dt / grid.dx;
    let lambda = speeds.map(|c| ratio * c);
    if let Some((station, &l)) = lambda
        .iter()
        .enumerate()
        .find(|(_, l)| !(libm::fabs(**l) <= 1.0))
    {
        return Err(Error::Cfl { station, lambda: l });
    }
    Ok(lambda)
}

/// Periodic Lax-Friedrichs transition matrix: row `l` holds
/// `(1 - lambda_l)/2` at column `l+1` and `(1 + lambda_l)/2` at `l-1`.
pub fn lax_friedrichs_matrix(grid: &GridSpec, speeds: &DVector<f64>) -> Result<DMatrix<f64>> {
    let lambda = courant_numbers(grid, speeds)?;
    let n = grid.n_points;
    let mut m = DMatrix::zeros(n, n);
    for (l, &lam) in lambda.iter().enumerate() {
        let right = grid.station(l as isize + 1);
        let left = grid.station(l as isize - 1);
        m[(l, right)] += 0.5 * (1.0 - lam);
        m[(l, left)] += 0.5 * (1.0 + lam);
    }
    Ok(m)
}

/// Deterministic part of one step, `L_n v + dt f_n`, applied as a stencil.
pub fn propagate_mean(
    v: &DVector<f64>,
    grid: &GridSpec,
    cfg: &ModelConfig,
    speeds: &DVector<f64>,
    step: usize,
) -> Result<DVector<f64>> {
    let lambda = courant_numbers(grid, speeds)?;
    if v.len() != grid.n_points {
        return Err(Error::DimensionMismatch {
            expected: grid.n_points,
            found: v.len(),
        });
    }
    let mut out = DVector::from_fn(grid.n_points, |l, _| {
        let right = v[grid.station(l as isize + 1)];
        let left = v[grid.station(l as isize - 1)];
        0.5 * (1.0 - lambda[l]) * right + 0.5 * (1.0 + lambda[l]) * left
    });
    if let Some(f) = cfg.forcing.at(step) {
        out.axpy(grid.dt, f, 1.0);
    }
    Ok(out)
}

/// One stochastic model step `V_n = L_n V_{n-1} + dt f_{n-1} + noise`, the
/// noise having per-station variance `Q`. `step` is the index `n - 1` of the
/// state being advanced.
pub fn model_step(
    state: &DVector<f64>,
    grid: &GridSpec,
    cfg: &ModelConfig,
    speeds: &DVector<f64>,
    step: usize,
    src: &mut NoiseSource,
) -> Result<DVector<f64>> {
    let mut next = propagate_mean(state, grid, cfg, speeds, step)?;
    let noise = src.gaussian_vector(grid.n_points, libm::sqrt(cfg.model_noise_var));
    for (v, w) in next.iter_mut().zip(noise) {
        *v += w;
    }
    Ok(next)
}
