//! Invariant suite run on a configured system, and a seeded generator of
//! random stable controllable systems.

use std::fmt;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{
    classify_definiteness, general_eigenvalues, max_abs, max_abs_diff, Matrix, SymmetricMatrix,
    EPS_DEF,
};
use crate::oracle::{monotonicity_check, rk45_dre, rk45_q_blocks, IntegratorConfig};
use crate::semigroup::{build_table, lambda_init, ostar, SemigroupTable, Strategy};
use crate::solver::{sigma_max_trace, solve_from_table};
use crate::symplectic::SymplecticFlow;
use crate::system::{
    are_residual, is_controllable, select_basis, solve_are_stabilizing, BasisMatrix, LinearSystem,
    CONTROLLABILITY_TOL, DEFAULT_MARGIN,
};
use crate::transforms::{pi, pi_inv, upsilon, upsilon_inv, xi, xi_inv, BlockSym2n};

pub const ROUND_TRIP_TOL: f64 = 1e-9;
pub const SEMIGROUP_TOL: f64 = 1e-6;
pub const EQUIVALENCE_TOL: f64 = 1e-6;
pub const AGREEMENT_TOL: f64 = 1e-4;
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed residual; `NaN` for pass/fail checks.
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn measured(
        name: &'static str,
        residual: f64,
        tolerance: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name,
            passed: residual <= tolerance,
            residual,
            tolerance,
            detail: detail.into(),
        }
    }

    fn flag(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            residual: f64::NAN,
            tolerance: f64::NAN,
            detail: detail.into(),
        }
    }

    fn failed(name: &'static str, err: &Error) -> Self {
        Self::flag(name, false, err.to_string())
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<28}", self.name)?;
        if self.residual.is_finite() || self.residual.is_infinite() {
            write!(
                f,
                " max residual {:.3e} (tol {:.0e})",
                self.residual, self.tolerance
            )?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub delta: f64,
    pub steps: usize,
    pub seed: u64,
    /// Random inputs per round-trip and monotonicity check.
    pub samples: usize,
    pub integrator: IntegratorConfig,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            delta: 0.05,
            steps: 80,
            seed: 0x5eed,
            samples: 20,
            integrator: IntegratorConfig::default(),
        }
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize, scale: f64) -> SymmetricMatrix {
    crate::matrix::symmetrize(&(uniform(rng, n, n) * scale)).expect("finite square matrix")
}

/// `G G' / n + floor I` with `G` uniform in `[-1, 1]`.
pub fn random_spd(rng: &mut impl Rng, n: usize, floor: f64) -> SymmetricMatrix {
    let g = uniform(rng, n, n);
    SymmetricMatrix::new(&g * g.transpose() / n as f64 + Matrix::identity(n, n) * floor)
        .expect("finite square matrix")
}

/// Random `(A, B, C)` with `A` Hurwitz, `B` square with `sigma_min(B) >= 0.2`, and a
/// stabilizing ARE solution (the output matrix is shrunk until one exists).
pub fn random_stable_system(rng: &mut impl Rng, n: usize) -> LinearSystem {
    loop {
        let mut a = uniform(rng, n, n);
        let Some(eigs) = general_eigenvalues(&a) else {
            continue;
        };
        let abscissa = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        let shift = abscissa + rng.random_range(0.2..1.0);
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        // A full-rank input matrix keeps the short-horizon Gramian, and with
        // it Q22 - M at t = delta, away from numerical singularity.
        let b = uniform(rng, n, n);
        let (smin, _) = crate::matrix::singular_value_range(&b);
        if smin < 0.2 {
            continue;
        }
        let mut c = uniform(rng, n, n);
        for _ in 0..30 {
            let sys =
                LinearSystem::new(a.clone(), b.clone(), c.clone()).expect("consistent shapes");
            if !is_controllable(&sys, 1e-6) {
                break;
            }
            if let Ok(m0) = solve_are_stabilizing(&sys) {
                // keep M0 moderate so the basis stays well conditioned
                if max_abs(m0.as_matrix()) < 50.0 {
                    return sys;
                }
            }
            c *= 0.5;
        }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Round-trip checks of the transform pairs on random in-domain inputs over
/// random systems of dimension 1 to 4.
pub fn round_trip_suite(seed: u64, count: usize) -> Vec<CheckResult> {
    let mut rng = seeded_rng(seed);
    let (mut up, mut xi_err, mut pi_err) = (0f64, 0f64, 0f64);
    let mut failures = Vec::new();
    for i in 0..count {
        let n = 1 + i % 4;
        let sys = random_stable_system(&mut rng, n);
        let basis = match select_basis(&sys, DEFAULT_MARGIN) {
            Ok(b) => b,
            Err(e) => {
                failures.push(CheckResult::failed("basis selection", &e));
                continue;
            }
        };
        let m = basis.m();

        let p = m + &random_spd(&mut rng, n, 0.1);
        match upsilon(&p, &basis).and_then(|u| upsilon_inv(&u, &basis)) {
            Ok(back) => up = up.max(back.max_abs_diff(&p)),
            Err(e) => failures.push(CheckResult::failed("upsilon round trip", &e)),
        }

        let t = rng.random_range(0.05..2.0);
        let sigma = SymplecticFlow::new(sys.clone()).sigma_at(t);
        match sigma.and_then(|s| {
            let back = xi_inv(&xi(&s, &basis)?, &basis)?;
            Ok(max_abs_diff(&back, &s))
        }) {
            Ok(d) => xi_err = xi_err.max(d),
            Err(e) => failures.push(CheckResult::failed("xi round trip", &e)),
        }

        let q = BlockSym2n::new(
            random_symmetric(&mut rng, n, 2.0),
            uniform(&mut rng, n, n) * 2.0,
            m + &random_spd(&mut rng, n, 0.1),
        )
        .expect("finite blocks");
        match pi_inv(&q, &basis).and_then(|l| pi(&l, &basis)) {
            Ok(back) => pi_err = pi_err.max(back.max_abs_diff(&q)),
            Err(e) => failures.push(CheckResult::failed("pi round trip", &e)),
        }
    }
    let detail = format!("{count} inputs");
    let mut out = vec![
        CheckResult::measured("upsilon round trip", up, ROUND_TRIP_TOL, detail.clone()),
        CheckResult::measured("xi round trip", xi_err, ROUND_TRIP_TOL, detail.clone()),
        CheckResult::measured("pi round trip", pi_err, ROUND_TRIP_TOL, detail),
    ];
    out.extend(failures);
    out
}

/// Largest `|ostar(L_i, L_j) - L_{i+j}|` over all `i + j <= K`, and the
/// largest eigenvalue of `L_j^11 + L_i^22` (which must stay nonpositive).
pub fn semigroup_law_residual(table: &SemigroupTable) -> Result<(f64, f64)> {
    let mut worst: f64 = 0.0;
    let mut cone: f64 = f64::NEG_INFINITY;
    let k_max = table.steps();
    for i in 1..k_max {
        let Some(li) = table.get(i) else { continue };
        for j in 1..=(k_max - i) {
            let (Some(lj), Some(lij)) = (table.get(j), table.get(i + j)) else {
                continue;
            };
            let mid = lj.b11() + li.b22();
            let scale = max_abs(mid.as_matrix()).max(1.0);
            cone = cone.max(mid.max_eig() / scale);
            worst = worst.max(ostar(li, lj)?.max_abs_diff(lij));
        }
    }
    Ok((worst, cone))
}

/// Largest deviation of table entries from `pi_inv(xi(exp(H k delta)))`.
pub fn table_drift(table: &SemigroupTable) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &k in table.entries().keys() {
        let direct = lambda_init(table.system(), table.basis(), table.time(k))?;
        worst = worst.max(table.entries()[&k].max_abs_diff(&direct));
    }
    Ok(worst)
}

/// Largest decrease of `max_eig(P0 + Lambda_t^22)` along the table, relative
/// to the size of the values.
pub fn sigma_trace_decrease(table: &SemigroupTable, p0: &SymmetricMatrix) -> Result<f64> {
    let report = sigma_max_trace(table, p0)?;
    Ok(report
        .trace
        .windows(2)
        .map(|w| (w[0].1 - w[1].1) / w[0].1.abs().max(w[1].1.abs()).max(1.0))
        .fold(0.0, f64::max))
}

fn catch(name: &'static str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::failed(name, &e))
}

/// Runs every invariant on `sys` with basis `basis`.
pub fn validate_system(
    sys: &LinearSystem,
    basis: &BasisMatrix,
    opts: &ValidationOptions,
) -> ValidationReport {
    let started = Instant::now();
    let mut checks = Vec::new();
    let n = sys.n();
    let mut rng = seeded_rng(opts.seed);
    let horizon = opts.steps as f64 * opts.delta;

    checks.push(CheckResult::flag(
        "controllability",
        is_controllable(sys, CONTROLLABILITY_TOL),
        "rank of [B, AB, ...]",
    ));
    let m0 = basis
        .m0()
        .cloned()
        .or_else(|| solve_are_stabilizing(sys).ok());
    match &m0 {
        Some(m0) => {
            let res = max_abs(are_residual(sys, m0).as_matrix());
            checks.push(CheckResult::measured("ARE residual", res, 1e-8, ""));
            let gap = classify_definiteness(&(basis.m() - m0), EPS_DEF);
            checks.push(CheckResult::flag(
                "basis below M0",
                gap.is_negative_definite(),
                format!("max eig(M - M0) = {:.3e}", gap.max_eig),
            ));
        }
        None => checks.push(CheckResult::flag(
            "basis below M0",
            true,
            "no stabilizing ARE solution; M accepted as given",
        )),
    }

    // round trips on this basis
    checks.push(catch("upsilon round trip", || {
        let mut worst: f64 = 0.0;
        for _ in 0..opts.samples {
            let p = basis.m() + &random_spd(&mut rng, n, 0.1);
            worst = worst.max(upsilon_inv(&upsilon(&p, basis)?, basis)?.max_abs_diff(&p));
        }
        Ok(CheckResult::measured(
            "upsilon round trip",
            worst,
            ROUND_TRIP_TOL,
            "",
        ))
    }));
    let flow = SymplecticFlow::new(sys.clone());
    checks.push(catch("xi round trip", || {
        let mut worst: f64 = 0.0;
        for i in 1..=opts.samples {
            let t = horizon.min(2.0) * i as f64 / opts.samples as f64;
            let s = flow.sigma_at(t)?;
            worst = worst.max(max_abs_diff(&xi_inv(&xi(&s, basis)?, basis)?, &s));
        }
        Ok(CheckResult::measured(
            "xi round trip",
            worst,
            ROUND_TRIP_TOL,
            "",
        ))
    }));
    checks.push(catch("pi round trip", || {
        let mut worst: f64 = 0.0;
        for i in 1..=opts.samples {
            let t = horizon * i as f64 / opts.samples as f64;
            let q = xi(&flow.sigma_at(t)?, basis)?;
            let back = pi(&pi_inv(&q, basis)?, basis)?;
            worst = worst.max(back.max_abs_diff(&q));
        }
        Ok(CheckResult::measured(
            "pi round trip",
            worst,
            ROUND_TRIP_TOL,
            "",
        ))
    }));

    checks.push(catch("Q22 - M positive definite", || {
        let q = xi(&flow.sigma_at(opts.delta)?, basis)?;
        let d = classify_definiteness(&(q.b22() - basis.m()), EPS_DEF);
        Ok(CheckResult::flag(
            "Q22 - M positive definite",
            d.is_positive_definite(),
            format!("min eig {:.3e} at t = delta", d.min_eig),
        ))
    }));

    checks.push(catch("xi(Sigma) vs block ODE", || {
        let times: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .copied()
            .filter(|&t| t <= horizon.max(2.0))
            .collect();
        let q = rk45_q_blocks(sys, basis, &times, &opts.integrator)?;
        let mut worst: f64 = 0.0;
        for (t, q_t) in &q {
            let via = xi(&flow.sigma_at(*t)?, basis)?;
            worst = worst.max(via.max_abs_diff(q_t));
        }
        Ok(CheckResult::measured(
            "xi(Sigma) vs block ODE",
            worst,
            EQUIVALENCE_TOL,
            "",
        ))
    }));

    let table = match build_table(sys, basis, opts.delta, opts.steps, Strategy::Linear) {
        Ok(t) => t,
        Err(e) => {
            checks.push(CheckResult::failed("table build", &e));
            return finish(checks, started);
        }
    };
    checks.push(catch("semigroup law", || {
        let (worst, cone) = semigroup_law_residual(&table)?;
        let mut c = CheckResult::measured("semigroup law", worst, SEMIGROUP_TOL, "");
        if cone > EPS_DEF {
            c.passed = false;
            c.detail = format!("cone violated: max eig {cone:.3e}");
        }
        Ok(c)
    }));
    checks.push(catch("table vs direct evaluation", || {
        let drift = table_drift(&table)?;
        Ok(CheckResult::measured(
            "table vs direct evaluation",
            drift,
            EQUIVALENCE_TOL,
            "",
        ))
    }));

    checks.push(catch("sigma_max trace monotone", || {
        let mut worst: f64 = 0.0;
        for _ in 0..opts.samples {
            let p0 = random_symmetric(&mut rng, n, 5.0);
            worst = worst.max(sigma_trace_decrease(&table, &p0)?);
        }
        Ok(CheckResult::measured(
            "sigma_max trace monotone",
            worst,
            MONOTONE_TOL,
            "",
        ))
    }));

    checks.push(catch("DRE order preservation", || {
        let mut held = 0;
        for _ in 0..opts.samples {
            let low = basis.m() + &random_spd(&mut rng, n, 0.05);
            let high = &low + &random_spd(&mut rng, n, 0.0);
            if monotonicity_check(sys, &low, &high, horizon, 20, &opts.integrator)? {
                held += 1;
            }
        }
        Ok(CheckResult::flag(
            "DRE order preservation",
            held == opts.samples,
            format!("{held}/{} ordered pairs", opts.samples),
        ))
    }));

    checks.push(catch("method agreement", || {
        agreement(sys, basis, &table, m0.as_ref(), opts)
    }));

    finish(checks, started)
}

fn finish(checks: Vec<CheckResult>, started: Instant) -> ValidationReport {
    info!("validation finished in {:.2?}", started.elapsed());
    ValidationReport { checks }
}

/// Max-plus, symplectic, and RK45 traces from an initial condition between
/// `M` and `M0`, compared where the existence margin exceeds 0.01.
fn agreement(
    sys: &LinearSystem,
    basis: &BasisMatrix,
    table: &SemigroupTable,
    m0: Option<&SymmetricMatrix>,
    opts: &ValidationOptions,
) -> Result<CheckResult> {
    let n = sys.n();
    let p0 = match m0 {
        Some(m0) => (basis.m() + m0).scale(0.5),
        None => basis.m() + &SymmetricMatrix::scaled_identity(n, 0.5),
    };
    let (trace, _) = solve_from_table(table, &p0)?;
    let grid: Vec<f64> = trace.samples.iter().map(|(t, _)| *t).collect();
    let (rk, _) = rk45_dre(sys, &p0, &grid, &opts.integrator)?;
    let flow = SymplecticFlow::new(sys.clone());
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (((t, p_mp), (_, p_rk)), (_, lambda)) in
        trace.samples.iter().zip(&rk.samples).zip(table.entries())
    {
        let margin = -(&p0 + lambda.b22()).max_eig();
        if margin <= 0.01 {
            continue;
        }
        let Ok(p_sym) = flow.solve_symplectic(&p0, *t) else {
            continue;
        };
        worst = worst
            .max(p_mp.max_abs_diff(&p_sym))
            .max(p_mp.max_abs_diff(p_rk))
            .max(p_sym.max_abs_diff(p_rk));
        compared += 1;
    }
    Ok(CheckResult::measured(
        "method agreement",
        worst,
        AGREEMENT_TOL,
        format!("{compared} grid points"),
    ))
}

/// Validation of a seeded random stable controllable system with an
/// automatically selected basis.
pub fn validate_random_system(
    seed: u64,
    n: usize,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    let mut rng = seeded_rng(seed);
    let sys = random_stable_system(&mut rng, n);
    let basis = select_basis(&sys, DEFAULT_MARGIN)?;
    Ok(validate_system(
        &sys,
        &basis,
        &ValidationOptions { seed, ..*opts },
    ))
}
