//! Oracle and property checks run by `dlf check` and the acceptance suite.
//!
//! Each check compares the library against an independent computation:
//! textbook Gaussian conditioning through an LU inverse, brute-force
//! searches, closed-form moments, or exact shifts.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use dlf_core::dlf::{self, LikelihoodAssembly, LiveObservation, ProjectedDatum, ProjectionMode};
use dlf_core::grid::streams;
use dlf_core::kf;
use dlf_core::linalg;
use dlf_core::model::{self, ModelConfig};
use dlf_core::obsnet::{self, Observation};
use dlf_core::scenario::{circular_distance, run_scenario, ScenarioConfig};
use dlf_core::truth::{self, Problem, TruthConfig};
use dlf_core::{GridSpec, NoiseSource, StateEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name,
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn normal_matrix(src: &mut NoiseSource, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| src.standard_normal())
}

fn random_spd(src: &mut NoiseSource, n: usize) -> DMatrix<f64> {
    let a = normal_matrix(src, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Integer in `lo..=hi`.
fn pick(src: &mut NoiseSource, lo: usize, hi: usize) -> usize {
    lo + ((src.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

fn obs_block(y: &DVector<f64>, time_index: usize, r: f64) -> Vec<Observation> {
    y.iter()
        .enumerate()
        .map(|(k, &value)| Observation {
            value,
            station: k,
            time_index,
            variance: r,
        })
        .collect()
}

/// KF analysis against conditioning of the joint Gaussian of state and
/// observation, `m + S_xy S_yy^{-1} (y - H m)` and `P - S_xy S_yy^{-1} S_yx`,
/// with `S_yy` inverted by LU.
pub fn gaussian_conditioning(instances: usize, seed: u64) -> CheckOutcome {
    let mut src = NoiseSource::new(seed, 0);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..instances {
        let n = pick(&mut src, 1, 5);
        let k = pick(&mut src, 1, n);
        let p = random_spd(&mut src, n);
        let m = DVector::from_fn(n, |_, _| src.standard_normal());
        let h = normal_matrix(&mut src, k, n);
        let r = 0.05 + src.uniform();
        let y = DVector::from_fn(k, |_, _| 2.0 * src.standard_normal());

        let prior = StateEstimate::new(4, m.clone(), p.clone()).expect("square prior");
        let post = match kf::analysis(&prior, &obs_block(&y, 4, r), &h, r) {
            Ok(post) => post,
            Err(_) => {
                failures += 1;
                continue;
            }
        };

        let s_xy = &p * h.transpose();
        let s_yy = &h * &p * h.transpose() + DMatrix::identity(k, k) * r;
        let inv = s_yy
            .lu()
            .try_inverse()
            .expect("innovation covariance is SPD");
        let mean = &m + &s_xy * &inv * (&y - &h * &m);
        let cov = &p - &s_xy * &inv * s_xy.transpose();

        let err = (&post.mean - mean)
            .amax()
            .max(max_abs(&post.covariance, &cov));
        worst = worst.max(err);
    }
    let passed = failures == 0 && worst <= 1e-10;
    CheckOutcome::new(
        "gaussian conditioning",
        passed,
        format!("{instances} instances (N<=5, K<=N), max abs error {worst:.3e} (tol 1e-10), {failures} solver failures"),
    )
}

fn unit_perturbation(src: &mut NoiseSource, r: usize, c: usize) -> DMatrix<f64> {
    let e = normal_matrix(src, r, c);
    let norm = e.norm();
    e / norm
}

/// Smallest `trace(J(K + eta E)) - trace(J(K))` over random unit `E`,
/// where `J` is the Joseph-form posterior covariance.
fn min_trace_change(
    p: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    perturbations: usize,
    eta: f64,
    src: &mut NoiseSource,
) -> f64 {
    let base = kf::joseph_covariance(p, gain, h, r).trace();
    (0..perturbations)
        .map(|_| {
            let e = unit_perturbation(src, gain.nrows(), gain.ncols());
            kf::joseph_covariance(p, &(gain + e * eta), h, r).trace() - base
        })
        .fold(f64::INFINITY, f64::min)
}

const ETA: f64 = 1e-3;
const SLACK: f64 = 1e-12;

/// Covariance forecast at step 10 of a sparse Problem I run.
fn scenario_forecast() -> (GridSpec, DMatrix<f64>) {
    let cfg = ScenarioConfig::problem_one().with_sampling(0.2, 0.1);
    let grid = cfg.grid().expect("preset grid");
    let tc = cfg.truth_config();
    let mc = ModelConfig::new(cfg.model_noise_var).expect("preset noise");
    let n = grid.n_points;
    let mut est = StateEstimate::new(0, DVector::zeros(n), DMatrix::identity(n, n) * cfg.init_var)
        .expect("square prior");
    for step in 0..10 {
        let speeds = truth::station_speeds(&grid, &tc, grid.time(step));
        est = kf::forecast(&est, &grid, &mc, &speeds).expect("preset grid satisfies CFL");
    }
    (grid, est.covariance)
}

pub fn kf_gain_optimality(instances: usize, perturbations: usize, seed: u64) -> CheckOutcome {
    let mut src = NoiseSource::new(seed, 1);
    let mut worst = f64::INFINITY;
    let mut cases: Vec<(DMatrix<f64>, DMatrix<f64>, f64)> = (0..instances)
        .map(|_| {
            let n = pick(&mut src, 2, 8);
            let k = pick(&mut src, 1, n);
            let h = normal_matrix(&mut src, k, n);
            (random_spd(&mut src, n), h, 0.05 + src.uniform())
        })
        .collect();
    let (grid, p) = scenario_forecast();
    let net = obsnet::build_network(&grid, 0.2, 0.1, 0.02).expect("preset network");
    cases.push((p, obsnet::observation_matrix(&net, &grid), 0.02));

    for (p, h, r) in &cases {
        let gain = kf::kalman_gain(p, h, *r, 0).expect("SPD innovation").gain;
        let rm = DMatrix::identity(h.nrows(), h.nrows()) * *r;
        worst = worst.min(min_trace_change(
            p,
            &gain,
            h,
            &rm,
            perturbations,
            ETA,
            &mut src,
        ));
    }
    CheckOutcome::new(
        "KF gain optimality",
        worst >= -SLACK,
        format!(
            "{} gains x {perturbations} perturbations at eta={ETA:e}, min trace change {worst:.3e} (slack {SLACK:e})",
            cases.len()
        ),
    )
}

fn random_candidates(
    src: &mut NoiseSource,
    n: usize,
    count: usize,
    ties: bool,
) -> Vec<ProjectedDatum> {
    (0..count)
        .map(|i| {
            let mut variance = 0.01 + src.uniform();
            if ties {
                variance = (variance * 4.0).round() / 4.0 + 0.25;
            }
            ProjectedDatum {
                station: pick(src, 0, n - 1),
                value: src.standard_normal(),
                variance,
                weight: 1.0,
                source: i,
            }
        })
        .collect()
}

pub fn dlf_gain_optimality(instances: usize, perturbations: usize, seed: u64) -> CheckOutcome {
    let mut src = NoiseSource::new(seed, 2);
    let mut worst = f64::INFINITY;
    let mut cases: Vec<(DMatrix<f64>, LikelihoodAssembly)> = (0..instances)
        .map(|_| {
            let n = pick(&mut src, 2, 8);
            let count = pick(&mut src, 1, 2 * n);
            let p = random_spd(&mut src, n);
            (
                p,
                dlf::rank_order(&random_candidates(&mut src, n, count, false)),
            )
        })
        .collect();
    let (grid, p) = scenario_forecast();
    let pool: Vec<ProjectedDatum> = (0..30)
        .map(|i| ProjectedDatum {
            station: (7 * i) % grid.n_points,
            value: 0.0,
            variance: 0.02 + 0.001 * i as f64,
            weight: 1.0,
            source: i,
        })
        .collect();
    cases.push((p, dlf::rank_order(&pool)));

    for (p, asm) in &cases {
        let n = p.nrows();
        let gain = dlf::restricted_gain(p, asm, 0).expect("SPD innovation");
        let h = linalg::selector(&asm.informed_stations, n);
        let d = linalg::diag_from(&asm.projected_variances);
        worst = worst.min(min_trace_change(
            p,
            &gain,
            &h,
            &d,
            perturbations,
            ETA,
            &mut src,
        ));
    }
    CheckOutcome::new(
        "DLF gain optimality",
        worst >= -SLACK,
        format!(
            "{} gains x {perturbations} perturbations at eta={ETA:e}, min trace change {worst:.3e} (slack {SLACK:e})",
            cases.len()
        ),
    )
}

/// Closed-form one-step mean and variance of a characteristic.
pub fn step_moments(cfg: &TruthConfig, x: f64, dt: f64) -> (f64, f64) {
    match cfg.problem {
        Problem::One => {
            let decay = (-cfg.alpha * dt).exp();
            (
                x * decay,
                cfg.beta * cfg.beta / (2.0 * cfg.alpha) * (1.0 - decay * decay),
            )
        }
        Problem::Two => (
            x + cfg.alpha0 * dt + 2.0 / 3.0 * cfg.alpha1 * dt.powf(1.5),
            cfg.beta * cfg.beta * dt,
        ),
    }
}

/// One-step Monte Carlo of each exact stepper against its closed-form
/// moments, within three standard errors.
pub fn moment_checks(samples: usize, seed: u64) -> CheckOutcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (i, (label, cfg, t)) in [
        ("problem I", ScenarioConfig::problem_one(), 0.0),
        ("problem II", ScenarioConfig::problem_two(), 0.0),
        ("problem II at t=5", ScenarioConfig::problem_two(), 5.0),
    ]
    .into_iter()
    .enumerate()
    {
        let grid = cfg.grid().expect("preset grid");
        let tc = cfg.truth_config();
        let x0 = 1.0;
        let mut src = NoiseSource::new(seed.wrapping_add(i as u64), streams::TRUTH_SPEED);
        let draws: Vec<f64> = (0..samples)
            .map(|_| truth::step_characteristic_exact(&tc, &grid, x0, t, &mut src))
            .collect();
        let n = samples as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (mu, sigma2) = step_moments(&tc, x0, grid.dt);
        let se_mean = (sigma2 / n).sqrt();
        let se_var = sigma2 * (2.0 / (n - 1.0)).sqrt();
        let zm = (mean - mu) / se_mean;
        let zv = (var - sigma2) / se_var;
        passed &= zm.abs() <= 3.0 && zv.abs() <= 3.0;
        details.push(format!("{label}: z_mean={zm:+.2}, z_var={zv:+.2}"));
    }
    CheckOutcome::new(
        "SDE moments",
        passed,
        format!("{samples} samples; {} (limit 3 SE)", details.join("; ")),
    )
}

/// With Courant number one and no noise the model is an exact circular
/// shift by one station.
pub fn lax_friedrichs_shift(steps: usize, seed: u64) -> CheckOutcome {
    let n = 50;
    let dx = 2.0 / n as f64;
    let grid = GridSpec::with_dt(2.0, n, dx, steps).expect("valid grid");
    let speeds = DVector::from_element(n, 1.0);
    let cfg = ModelConfig::new(0.0).expect("zero noise");
    let mut src = NoiseSource::new(seed, streams::MODEL);
    let mut v = DVector::from_fn(n, |_, _| src.standard_normal());
    let mut expected = v.clone();
    let mut mismatches = 0;
    for step in 0..steps {
        v = model::model_step(&v, &grid, &cfg, &speeds, step, &mut src).expect("CFL holds");
        expected = DVector::from_fn(n, |l, _| expected[(l + n - 1) % n]);
        mismatches += v
            .iter()
            .zip(expected.iter())
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
    }
    CheckOutcome::new(
        "Lax-Friedrichs exactness",
        mismatches == 0,
        format!("lambda=1, Q=0, {steps} steps, {mismatches} entries differ bitwise from the shift"),
    )
}

/// Constant-speed characteristics against `zeta0 + n c dt mod L`, and the
/// variance against `R + k A^2 dt`.
pub fn semi_lagrangian_exactness(steps: usize) -> CheckOutcome {
    let speed_cfg = |c: f64, a: f64| TruthConfig {
        problem: Problem::Two,
        alpha: 0.0,
        alpha0: c,
        alpha1: 0.0,
        beta: 0.0,
        forcing_amp: a,
        forcing_mean: 0.0,
        init_center: 1.0,
        init_var: 0.0,
    };
    let start = |position: f64, variance: f64| LiveObservation {
        value: 1.0,
        position,
        variance,
        origin_variance: variance,
        origin_station: 0,
        origin_time: 0,
        current_time: 0,
    };

    let mut pos_err: f64 = 0.0;
    let mut var_rel: f64 = 0.0;
    for (c, dt, zeta0) in [(0.1, 0.0396, 0.3), (-0.37, 0.05, 1.9), (1.3, 0.0125, 1.999)] {
        let grid = GridSpec::with_dt(2.0, 50, dt, steps).expect("valid grid");
        let tc = speed_cfg(c, 0.01);
        let mut o = start(zeta0, 0.02);
        for k in 1..=steps {
            o = dlf::propagate_observation(&o, &grid, &tc);
            o = dlf::propagate_variance(&o, tc.forcing_amp, dt);
            let exact = (zeta0 + k as f64 * c * dt).rem_euclid(2.0);
            pos_err = pos_err.max(circular_distance(o.position, exact, 2.0));
            let v = 0.02 + k as f64 * 0.01 * 0.01 * dt;
            // Accumulating k additions may round k times.
            var_rel = var_rel.max((o.variance - v).abs() / (v * k as f64 * f64::EPSILON));
        }
    }

    // Dyadic data leave nothing to round: the variance must be bit-exact.
    let grid = GridSpec::with_dt(2.0, 50, 0.25, steps).expect("valid grid");
    let tc = speed_cfg(0.0, 0.5);
    let mut o = start(0.5, 0.125);
    let mut dyadic_exact = true;
    for k in 1..=steps {
        o = dlf::propagate_variance(&o, tc.forcing_amp, grid.dt);
        dyadic_exact &= o.variance == 0.125 + k as f64 * 0.0625;
    }

    let passed = pos_err <= 1e-12 && var_rel <= 1.0 && dyadic_exact;
    CheckOutcome::new(
        "semi-Lagrangian exactness",
        passed,
        format!(
            "{steps} steps: max position error {pos_err:.3e} (tol 1e-12), variance error {var_rel:.2} x k ulp (limit 1), dyadic variance bit-exact: {dyadic_exact}"
        ),
    )
}

/// Per-station argmin of the variance, first candidate on ties.
pub fn brute_force_assembly(projected: &[ProjectedDatum]) -> Vec<(usize, usize)> {
    let max_station = projected.iter().map(|p| p.station).max();
    let mut out = Vec::new();
    for s in 0..=max_station.map_or(0, |m| m) {
        let mut best: Option<usize> = None;
        for (i, p) in projected.iter().enumerate() {
            if p.station == s && best.is_none_or(|b| p.variance < projected[b].variance) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            out.push((s, b));
        }
    }
    out
}

fn assembly_pairs(a: &LikelihoodAssembly) -> Vec<(usize, usize)> {
    a.informed_stations
        .iter()
        .copied()
        .zip(a.winners.iter().copied())
        .collect()
}

pub fn rank_order_bruteforce(pools: usize, seed: u64) -> CheckOutcome {
    let n = 50;
    let mut src = NoiseSource::new(seed, 3);
    let mut mismatches = 0;
    for i in 0..pools {
        let count = pick(&mut src, 0, 3 * n);
        let cands = random_candidates(&mut src, n, count, i % 2 == 1);
        let asm = dlf::rank_order(&cands);
        let oracle = brute_force_assembly(&cands);
        let values_ok = asm
            .winners
            .iter()
            .zip(&asm.projected_values)
            .zip(&asm.projected_variances)
            .all(|((&w, &v), &r)| cands[w].value == v && cands[w].variance == r);
        let selected_ok = asm.selected.len() == cands.len()
            && asm.selected.iter().filter(|&&s| s).count() == oracle.len()
            && oracle.iter().all(|&(_, w)| asm.selected[w]);
        if assembly_pairs(&asm) != oracle || !values_ok || !selected_ok {
            mismatches += 1;
        }
    }
    CheckOutcome::new(
        "rank ordering vs brute force",
        mismatches == 0,
        format!("{pools} pools of up to {} candidates (half with tied variances), {mismatches} mismatches", 3 * n),
    )
}

/// The schematic eleven-station network: five data groups of increasing
/// age; group `k` covers the stations where `D_k` is one and carries
/// variance `k r`.
pub const SCHEMATIC_MASKS: [[u8; 11]; 5] = [
    [0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1],
    [0, 1, 1, 1, 0, 0, 0, 1, 0, 1, 0],
    [1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0],
    [1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 1],
    [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0],
];

pub fn rank_order_schematic() -> CheckOutcome {
    let r = 0.02;
    let mut cands = Vec::new();
    // Oldest group first, as a pool would hold them.
    for k in (1..=SCHEMATIC_MASKS.len()).rev() {
        for (j, &on) in SCHEMATIC_MASKS[k - 1].iter().enumerate() {
            if on == 1 {
                cands.push(ProjectedDatum {
                    station: j,
                    value: (100 * k + j) as f64,
                    variance: k as f64 * r,
                    weight: 1.0,
                    source: cands.len(),
                });
            }
        }
    }
    let asm = dlf::rank_order(&cands);
    let all_informed = asm.informed_stations == (0..11).collect::<Vec<_>>();
    let winners_ok = (0..11).all(|j| {
        let k = (0..5).find(|&k| SCHEMATIC_MASKS[k][j] == 1).map(|k| k + 1);
        let pos = asm.informed_stations.iter().position(|&s| s == j);
        match (k, pos) {
            (Some(k), Some(p)) => {
                asm.projected_values[p] == (100 * k + j) as f64
                    && asm.projected_variances[p] == k as f64 * r
            }
            _ => false,
        }
    });
    CheckOutcome::new(
        "eleven-station schematic",
        all_informed && winners_ok,
        format!(
            "{} of 11 stations informed, each by its least uncertain group: {winners_ok}",
            asm.informed_stations.len()
        ),
    )
}

/// With every station observed at every step and only fresh data in the
/// pool, the multi-analysis must equal the KF analysis with `H = I`.
pub fn dense_reduction() -> CheckOutcome {
    let cfg = ScenarioConfig::problem_one().with_sampling(1.0, 1.0);
    let run = match run_scenario(&cfg) {
        Ok(run) => run,
        Err(e) => return CheckOutcome::new("DLF to KF reduction", false, e.to_string()),
    };
    let grid = &run.grid;
    let n = grid.n_points;
    let tc = cfg.truth_config();
    let mc = ModelConfig::new(cfg.model_noise_var).expect("preset noise");
    let h = obsnet::observation_matrix(&run.network, grid);
    let identity_h = h == DMatrix::identity(n, n);

    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for step in 1..=cfg.horizon {
        let speeds = truth::station_speeds(grid, &tc, grid.time(step - 1));
        let forecast = kf::forecast(&run.kf[step - 1], grid, &mc, &speeds).expect("CFL holds");
        let fresh: Vec<Observation> = run
            .observations
            .iter()
            .filter(|o| o.time_index == step)
            .copied()
            .collect();
        let live: Vec<LiveObservation> = fresh
            .iter()
            .map(|o| LiveObservation::fresh(o, grid))
            .collect();
        let asm = dlf::rank_order(&dlf::project(&live, grid, ProjectionMode::NearestLeft));
        let (Ok(a), Ok(b)) = (
            kf::analysis(&forecast, &fresh, &h, cfg.meas_var),
            dlf::multi_analysis(&forecast, &asm),
        ) else {
            return CheckOutcome::new(
                "DLF to KF reduction",
                false,
                format!("solve failed at step {step}"),
            );
        };
        worst = worst
            .max((&a.mean - &b.mean).amax())
            .max(max_abs(&a.covariance, &b.covariance));
        steps += 1;
    }
    CheckOutcome::new(
        "DLF to KF reduction",
        identity_h && worst <= 1e-10,
        format!("problem I, xi=1, tau=1: H=I {identity_h}, {steps} steps, max abs difference {worst:.3e} (tol 1e-10)"),
    )
}

/// The full oracle suite at acceptance sizes.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        gaussian_conditioning(50, 11),
        kf_gain_optimality(20, 100, 12),
        dlf_gain_optimality(20, 100, 13),
        moment_checks(100_000, 14),
        lax_friedrichs_shift(100, 15),
        semi_lagrangian_exactness(100),
        rank_order_bruteforce(1000, 16),
        rank_order_schematic(),
        dense_reduction(),
    ]
}
