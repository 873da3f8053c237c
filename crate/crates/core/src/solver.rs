//! Particular solutions and escape detection from a semigroup table, plus
//! three-way comparison against the symplectic and Runge–Kutta solutions.

use std::fmt::Write as _;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::matrix::{
    classify_definiteness, inverse, spectral_norm, symmetrize_unchecked, SymmetricMatrix, EPS_DEF,
};
use crate::oracle::{rk45_dre, IntegratorConfig};
use crate::semigroup::{build_table, lambda_init, SemigroupTable, Strategy};
use crate::symplectic::SymplecticFlow;
use crate::system::{BasisMatrix, LinearSystem};
use crate::transforms::BlockSym2n;

const REFINE_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeVerdict {
    NoEscapeWithinHorizon,
    EscapeInBracket,
    /// `max_eig(P0 + Lambda22)` fell inside the `EPS_DEF` band around zero.
    IndeterminateBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MaxPlus,
    Symplectic,
    Rk45,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeReport {
    pub p0: SymmetricMatrix,
    /// `(t, value)` per tested time. For the max-plus test the value is
    /// `max_eig(P0 + Lambda_t^22)`; for the symplectic scan it is
    /// `sigma_min / sigma_max` of `X_t`.
    pub trace: Vec<(f64, f64)>,
    pub escape_bracket: Option<(f64, f64)>,
    pub verdict: EscapeVerdict,
    /// Definiteness or invertibility tests performed to reach the verdict.
    pub tests_performed: usize,
    /// Sharper bracket from bisection, when requested.
    pub refined_bracket: Option<(f64, f64)>,
}

impl EscapeReport {
    pub(crate) fn new(p0: SymmetricMatrix) -> Self {
        Self {
            p0,
            trace: Vec::new(),
            escape_bracket: None,
            verdict: EscapeVerdict::NoEscapeWithinHorizon,
            tests_performed: 0,
            refined_bracket: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub p0: SymmetricMatrix,
    pub samples: Vec<(f64, SymmetricMatrix)>,
    pub method: Method,
    pub truncated_at_escape: bool,
}

/// Outcome of the strict test `P0 + Lambda22 < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Existence {
    Exists,
    Escaped,
    Boundary,
}

fn existence_test(p0: &SymmetricMatrix, lambda: &BlockSym2n) -> (Existence, f64) {
    let s = p0 + lambda.b22();
    let d = classify_definiteness(&s, EPS_DEF);
    let band = EPS_DEF * d.min_eig.abs().max(d.max_eig.abs()).max(1.0);
    let verdict = if d.max_eig < -band {
        Existence::Exists
    } else if d.max_eig <= band {
        Existence::Boundary
    } else {
        Existence::Escaped
    };
    (verdict, d.max_eig)
}

/// `P_t = Lambda11 - Lambda12 (P0 + Lambda22)^{-1} Lambda12'`.
pub fn particular_solution(p0: &SymmetricMatrix, lambda: &BlockSym2n) -> Result<SymmetricMatrix> {
    let s = p0 + lambda.b22();
    let inv = inverse(s.as_matrix())?;
    let l12 = lambda.b12();
    Ok(symmetrize_unchecked(
        &(lambda.b11().as_matrix() - l12 * inv * l12.transpose()),
    ))
}

fn check_p0(table: &SemigroupTable, p0: &SymmetricMatrix) -> Result<()> {
    if p0.dim() != table.n() {
        return Err(Error::DimensionMismatch {
            context: "initial condition",
            expected: table.n(),
            found: p0.dim(),
        });
    }
    Ok(())
}

/// Requires `P0 - M > 0` within the `EPS_DEF` band.
pub fn check_initial_class(basis: &BasisMatrix, p0: &SymmetricMatrix) -> Result<()> {
    let d = classify_definiteness(&(p0 - basis.m()), EPS_DEF);
    if !d.is_positive_definite() {
        return Err(Error::InitOutOfClass { min_eig: d.min_eig });
    }
    Ok(())
}

fn set_escape(
    report: &mut EscapeReport,
    table: &SemigroupTable,
    prev: usize,
    k: usize,
    verdict: Existence,
) {
    report.escape_bracket = Some((table.time(prev), table.time(k)));
    report.verdict = match verdict {
        Existence::Boundary => EscapeVerdict::IndeterminateBoundary,
        _ => EscapeVerdict::EscapeInBracket,
    };
}

/// Evaluates `P_{k delta}` for every table entry until the existence test fails.
pub fn solve_from_table(
    table: &SemigroupTable,
    p0: &SymmetricMatrix,
) -> Result<(SolveTrace, EscapeReport)> {
    check_p0(table, p0)?;
    check_initial_class(table.basis(), p0)?;
    let mut trace = SolveTrace {
        p0: p0.clone(),
        samples: Vec::with_capacity(table.entries().len()),
        method: Method::MaxPlus,
        truncated_at_escape: false,
    };
    let mut report = EscapeReport::new(p0.clone());
    let mut prev = 0;
    for (&k, lambda) in table.entries() {
        let (verdict, max_eig) = existence_test(p0, lambda);
        report.tests_performed += 1;
        report.trace.push((table.time(k), max_eig));
        if verdict != Existence::Exists {
            set_escape(&mut report, table, prev, k, verdict);
            trace.truncated_at_escape = true;
            debug!(
                "escape detected in ({}, {}]",
                table.time(prev),
                table.time(k)
            );
            break;
        }
        trace
            .samples
            .push((table.time(k), particular_solution(p0, lambda)?));
        prev = k;
    }
    Ok((trace, report))
}

/// `max_eig(P0 + Lambda_t^22)` for every table entry, with the first
/// nonnegative crossing bracketed.
pub fn sigma_max_trace(table: &SemigroupTable, p0: &SymmetricMatrix) -> Result<EscapeReport> {
    check_p0(table, p0)?;
    let mut report = EscapeReport::new(p0.clone());
    let mut prev = 0;
    for (&k, lambda) in table.entries() {
        let (verdict, max_eig) = existence_test(p0, lambda);
        report.tests_performed += 1;
        report.trace.push((table.time(k), max_eig));
        if verdict != Existence::Exists && report.escape_bracket.is_none() {
            set_escape(&mut report, table, prev, k, verdict);
        }
        prev = k;
    }
    Ok(report)
}

/// Existence of the solution from `P0` on `[0, k delta]` using the single
/// definiteness test on `P0 + Lambda_{k delta}^22`.
pub fn escape_test_at(
    table: &SemigroupTable,
    p0: &SymmetricMatrix,
    k: usize,
) -> Result<EscapeReport> {
    check_p0(table, p0)?;
    let lambda = table
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("table has no entry for k = {k}")))?;
    let mut report = EscapeReport::new(p0.clone());
    let (verdict, max_eig) = existence_test(p0, lambda);
    report.tests_performed = 1;
    report.trace.push((table.time(k), max_eig));
    if verdict != Existence::Exists {
        report.escape_bracket = Some((0.0, table.time(k)));
        report.verdict = match verdict {
            Existence::Boundary => EscapeVerdict::IndeterminateBoundary,
            _ => EscapeVerdict::EscapeInBracket,
        };
    }
    Ok(report)
}

/// Shrinks `bracket` by bisection, evaluating `Lambda_t` directly at each
/// midpoint.
pub fn refine_escape(
    table: &SemigroupTable,
    p0: &SymmetricMatrix,
    bracket: (f64, f64),
) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = bracket;
    for _ in 0..REFINE_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let lambda = lambda_init(table.system(), table.basis(), mid)?;
        if existence_test(p0, &lambda).0 == Existence::Exists {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub err_mp_sym: Option<f64>,
    pub err_mp_rk: Option<f64>,
    pub err_sym_rk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    pub verdict: Option<EscapeVerdict>,
    pub bracket: Option<(f64, f64)>,
    /// Set when the method failed outright.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub outcomes: Vec<MethodOutcome>,
    pub maxplus: Option<SolveTrace>,
    pub symplectic: Option<SolveTrace>,
    pub rk45: Option<SolveTrace>,
}

fn lookup(trace: &Option<SolveTrace>, idx: usize) -> Option<&SymmetricMatrix> {
    trace
        .as_ref()
        .and_then(|t| t.samples.get(idx))
        .map(|(_, p)| p)
}

fn err2(a: Option<&SymmetricMatrix>, b: Option<&SymmetricMatrix>) -> Option<f64> {
    Some(spectral_norm((a? - b?).as_matrix()))
}

/// Runs the max-plus, symplectic, and RK45 solvers on the grid
/// `{delta, 2 delta, ..., t_max}`. Failures are recorded, not raised.
pub fn compare_methods(
    sys: &LinearSystem,
    basis: &BasisMatrix,
    p0: &SymmetricMatrix,
    t_max: f64,
    delta: f64,
    cfg: &IntegratorConfig,
) -> Result<Comparison> {
    if !(delta > 0.0 && t_max >= delta) {
        return Err(Error::InvalidArgument(format!(
            "comparison needs 0 < delta <= t_max, got delta = {delta}, t_max = {t_max}"
        )));
    }
    let steps = crate::symplectic::grid_steps(t_max, delta).max(1);
    let grid: Vec<f64> = (1..=steps).map(|k| k as f64 * delta).collect();
    let mut outcomes = Vec::new();

    let maxplus = match build_table(sys, basis, delta, steps, Strategy::Linear)
        .and_then(|table| solve_from_table(&table, p0))
    {
        Ok((trace, report)) => {
            outcomes.push(MethodOutcome {
                method: Method::MaxPlus,
                verdict: Some(report.verdict),
                bracket: report.escape_bracket,
                failure: None,
            });
            Some(trace)
        }
        Err(e) => {
            outcomes.push(failed(Method::MaxPlus, e));
            None
        }
    };

    let flow = SymplecticFlow::new(sys.clone());
    let symplectic = match flow.escape_scan(p0, grid[steps - 1], delta, false) {
        Ok(report) => {
            let mut trace = SolveTrace {
                p0: p0.clone(),
                samples: Vec::new(),
                method: Method::Symplectic,
                truncated_at_escape: report.escape_bracket.is_some(),
            };
            for &t in &grid {
                match flow.solve_symplectic(p0, t) {
                    Ok(p) => trace.samples.push((t, p)),
                    Err(_) => {
                        trace.truncated_at_escape = true;
                        break;
                    }
                }
            }
            outcomes.push(MethodOutcome {
                method: Method::Symplectic,
                verdict: Some(report.verdict),
                bracket: report.escape_bracket,
                failure: None,
            });
            Some(trace)
        }
        Err(e) => {
            outcomes.push(failed(Method::Symplectic, e));
            None
        }
    };

    let rk45 = match rk45_dre(sys, p0, &grid, cfg) {
        Ok((trace, stopped)) => {
            let last_ok = trace.samples.last().map(|(t, _)| *t).unwrap_or(0.0);
            outcomes.push(MethodOutcome {
                method: Method::Rk45,
                verdict: Some(if stopped.is_some() {
                    EscapeVerdict::EscapeInBracket
                } else {
                    EscapeVerdict::NoEscapeWithinHorizon
                }),
                bracket: stopped.map(|_| {
                    let next = grid
                        .iter()
                        .copied()
                        .find(|&g| g > last_ok)
                        .unwrap_or(last_ok);
                    (last_ok, next)
                }),
                failure: None,
            });
            Some(trace)
        }
        Err(e) => {
            outcomes.push(failed(Method::Rk45, e));
            None
        }
    };

    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| CompareRow {
            t,
            err_mp_sym: err2(lookup(&maxplus, i), lookup(&symplectic, i)),
            err_mp_rk: err2(lookup(&maxplus, i), lookup(&rk45, i)),
            err_sym_rk: err2(lookup(&symplectic, i), lookup(&rk45, i)),
        })
        .collect();
    info!("compared three methods on {steps} grid points");
    Ok(Comparison {
        rows,
        outcomes,
        maxplus,
        symplectic,
        rk45,
    })
}

fn failed(method: Method, e: Error) -> MethodOutcome {
    MethodOutcome {
        method,
        verdict: None,
        bracket: None,
        failure: Some(e.to_string()),
    }
}

/// Grid times are `k * delta`; print them without the rounding residue.
pub fn fmt_time(t: f64) -> String {
    let rounded = (t * 1e12).round() / 1e12;
    format!("{rounded}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `t,P_11,P_12,...,P_nn` over the upper triangle, with a trailing
/// `# escape_bracket,(t_lo,t_hi]` line when the solution escaped.
pub fn trace_csv(trace: &SolveTrace, report: Option<&EscapeReport>) -> String {
    let n = trace.p0.dim();
    let mut out = String::from("t");
    for i in 1..=n {
        for j in i..=n {
            let _ = write!(out, ",P_{i}{j}");
        }
    }
    out.push('\n');
    for (t, p) in &trace.samples {
        out.push_str(&fmt_time(*t));
        for v in p.upper_triangle() {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    if let Some((lo, hi)) = report.and_then(|r| r.escape_bracket) {
        let _ = writeln!(out, "# escape_bracket,({},{}]", fmt_time(lo), fmt_time(hi));
    }
    out
}

/// `t,sigma_max`
pub fn sigma_csv(report: &EscapeReport) -> String {
    let mut out = String::from("t,sigma_max\n");
    for (t, s) in &report.trace {
        let _ = writeln!(out, "{},{s:?}", fmt_time(*t));
    }
    out
}

/// `t,err_mp_sym,err_mp_rk,err_sym_rk`; missing values are left empty.
pub fn compare_csv(cmp: &Comparison) -> String {
    let mut out = String::from("t,err_mp_sym,err_mp_rk,err_sym_rk\n");
    for r in &cmp.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_time(r.t),
            fmt_opt(r.err_mp_sym),
            fmt_opt(r.err_mp_rk),
            fmt_opt(r.err_sym_rk)
        );
    }
    for o in &cmp.outcomes {
        let status = match (&o.failure, o.verdict, o.bracket) {
            (Some(f), _, _) => format!("failed: {f}"),
            (None, Some(_), Some((lo, hi))) => {
                format!("escape ({},{}]", fmt_time(lo), fmt_time(hi))
            }
            (None, Some(EscapeVerdict::NoEscapeWithinHorizon), None) => "no escape".to_string(),
            (None, v, _) => format!("{v:?}"),
        };
        let _ = writeln!(out, "# {:?},{status}", o.method);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn scalar_table(steps: usize) -> SemigroupTable {
        // p' = -2p + p^2 + 1 with M = -1
        let sys = LinearSystem::new(
            Matrix::from_element(1, 1, -1.0),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
        )
        .unwrap();
        let basis = BasisMatrix::from_user(SymmetricMatrix::from_diagonal(&[-1.0]), None).unwrap();
        build_table(&sys, &basis, 0.1, steps, Strategy::Linear).unwrap()
    }

    #[test]
    fn time_formatting() {
        assert_eq!(fmt_time(57.0 * 0.05), "2.85");
        assert_eq!(fmt_time(0.1 * 3.0), "0.3");
        assert_eq!(fmt_time(4.0), "4");
    }

    #[test]
    fn scalar_solution_matches_closed_form() {
        // p' = (p - 1)^2 from p0 gives p = 1 - (p0 - 1) / ((p0 - 1) t - 1)... with u = p - 1: u' = u^2,
        // u = u0 / (1 - u0 t)
        let table = scalar_table(20);
        let p0 = SymmetricMatrix::from_diagonal(&[0.0]);
        let (trace, report) = solve_from_table(&table, &p0).unwrap();
        assert_eq!(report.verdict, EscapeVerdict::NoEscapeWithinHorizon);
        assert_eq!(trace.samples.len(), 20);
        for (t, p) in &trace.samples {
            let u0 = -1.0;
            let oracle = 1.0 + u0 / (1.0 - u0 * t);
            assert!((p.as_matrix()[(0, 0)] - oracle).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn scalar_escape_bracket() {
        // u0 = 1 escapes at t = 1
        let table = scalar_table(20);
        let p0 = SymmetricMatrix::from_diagonal(&[2.0]);
        let (trace, report) = solve_from_table(&table, &p0).unwrap();
        assert!(trace.truncated_at_escape);
        let (lo, hi) = report.escape_bracket.unwrap();
        assert!(lo < 1.0 && 1.0 <= hi + 1e-12);
        assert!(hi - lo < 0.1 + 1e-12);
        let (rlo, rhi) = refine_escape(&table, &p0, (lo, hi)).unwrap();
        assert!(rlo <= 1.0 + 1e-9 && 1.0 <= rhi + 1e-9);
        assert!(rhi - rlo < 1e-8);
        let csv = trace_csv(&trace, Some(&report));
        assert!(csv.trim_end().ends_with(&format!(
            "# escape_bracket,({},{}]",
            fmt_time(lo),
            fmt_time(hi)
        )));
    }

    #[test]
    fn rejects_initial_condition_outside_class() {
        let table = scalar_table(2);
        let p0 = SymmetricMatrix::from_diagonal(&[-2.0]);
        assert!(matches!(
            solve_from_table(&table, &p0),
            Err(Error::InitOutOfClass { min_eig }) if (min_eig + 1.0).abs() < 1e-12
        ));
    }

    #[test]
    fn single_test_at_horizon() {
        let table = scalar_table(20);
        let p0 = SymmetricMatrix::from_diagonal(&[0.0]);
        let report = escape_test_at(&table, &p0, 20).unwrap();
        assert_eq!(report.tests_performed, 1);
        assert_eq!(report.verdict, EscapeVerdict::NoEscapeWithinHorizon);
    }

    #[test]
    fn degenerate_single_point_comparison() {
        let table = scalar_table(1);
        let p0 = SymmetricMatrix::from_diagonal(&[0.0]);
        let cmp = compare_methods(
            table.system(),
            table.basis(),
            &p0,
            0.1,
            0.1,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(cmp.rows.len(), 1);
        let r = &cmp.rows[0];
        assert!(
            r.err_mp_sym.unwrap() < 1e-10
                && r.err_mp_rk.unwrap() < 1e-10
                && r.err_sym_rk.unwrap() < 1e-10
        );
        let csv = compare_csv(&cmp);
        assert!(csv.starts_with("t,err_mp_sym,err_mp_rk,err_sym_rk\n0.1,"));
    }
}
