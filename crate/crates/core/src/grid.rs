//! Shared value types: the periodic lattice, state estimates and seeded
//! Gaussian noise streams.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Periodic, equi-distant 1-D lattice with station `l` at `x_l = l * dx`,
/// together with the time step and number of model steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub domain_length: f64,
    pub n_points: usize,
    pub dx: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl GridSpec {
    /// Builds a grid whose time step satisfies `dt = cfl * dx / max_speed`.
    pub fn new(
        domain_length: f64,
        n_points: usize,
        cfl: f64,
        max_speed: f64,
        n_steps: usize,
    ) -> Result<Self> {
        // NaN fails every comparison below, so `!(x > 0.0)` also rejects it.
        if !(domain_length > 0.0) || !domain_length.is_finite() {
            return Err(Error::InvalidParameter {
                name: "domain_length",
                reason: "must be positive and finite",
            });
        }
        if n_points < 2 {
            return Err(Error::InvalidParameter {
                name: "n_points",
                reason: "need at least two stations",
            });
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "cfl",
                reason: "must lie in (0, 1]",
            });
        }
        if !(max_speed > 0.0) || !max_speed.is_finite() {
            return Err(Error::InvalidParameter {
                name: "max_speed",
                reason: "must be positive and finite (dt would be unbounded)",
            });
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "n_steps",
                reason: "must be at least one",
            });
        }
        let dx = domain_length / n_points as f64;
        Ok(GridSpec {
            domain_length,
            n_points,
            dx,
            dt: cfl * dx / max_speed,
            n_steps,
        })
    }

    /// Grid with an explicitly chosen time step.
    pub fn with_dt(domain_length: f64, n_points: usize, dt: f64, n_steps: usize) -> Result<Self> {
        let mut grid = Self::new(domain_length, n_points, 1.0, 1.0, n_steps)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: "must be positive and finite",
            });
        }
        grid.dt = dt;
        Ok(grid)
    }

    pub fn x(&self, station: usize) -> f64 {
        (station % self.n_points) as f64 * self.dx
    }

    pub fn stations(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |l| self.x(l))
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Reduces a position into `[0, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.domain_length;
        let r = x - l * libm::floor(x / l);
        // `r` may round up to exactly `L` for tiny negative inputs.
        if r >= l {
            0.0
        } else {
            r
        }
    }

    /// Station index modulo `N`, accepting negative offsets.
    pub fn station(&self, index: isize) -> usize {
        index.rem_euclid(self.n_points as isize) as usize
    }
}

/// Mean and full covariance of the state at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub time_index: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl StateEstimate {
    pub fn new(time_index: usize, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: covariance.nrows(),
            });
        }
        Ok(StateEstimate {
            time_index,
            mean,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    /// Symmetric within a relative tolerance of `1e-12` and with a
    /// nonnegative diagonal.
    pub fn covariance_is_valid(&self) -> bool {
        let p = &self.covariance;
        let scale = p.amax().max(f64::MIN_POSITIVE);
        let n = p.nrows();
        for i in 0..n {
            if p[(i, i)] < 0.0 || !p[(i, i)].is_finite() {
                return false;
            }
            for j in (i + 1)..n {
                if (p[(i, j)] - p[(j, i)]).abs() > 1e-12 * scale {
                    return false;
                }
            }
        }
        true
    }
}

/// Deterministic standard-normal stream keyed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        NoiseSource {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// One draw from `N(0, 1)`.
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// One draw from `U[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// `len` independent draws from `N(0, stddev^2)`. A zero deviation
    /// returns zeros without advancing the stream.
    pub fn gaussian_vector(&mut self, len: usize, stddev: f64) -> Vec<f64> {
        if stddev == 0.0 {
            return alloc::vec![0.0; len];
        }
        (0..len).map(|_| stddev * self.standard_normal()).collect()
    }
}

/// Stream identifiers for the independent noise components of a run.
pub mod streams {
    pub const INITIAL_CONDITION: u64 = 0;
    pub const TRUTH_FORCING: u64 = 1;
    pub const TRUTH_SPEED: u64 = 2;
    pub const MODEL: u64 = 3;
    pub const OBSERVATION: u64 = 4;
}
