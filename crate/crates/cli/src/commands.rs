use std::io::Write;
use std::path::Path;

use log::info;
use riccati_core::semigroup::{build_table, lambda_init, read_table, write_table};
use riccati_core::solver::{
    compare_csv, compare_methods, fmt_time, refine_escape, solve_from_table, trace_csv,
    EscapeReport, EscapeVerdict, SolveTrace,
};
use riccati_core::system::{is_controllable, CONTROLLABILITY_TOL};
use riccati_core::validate::{
    validate_random_system, validate_system, ValidationOptions, ValidationReport,
};
use riccati_core::{SemigroupTable, Strategy, SymmetricMatrix};

use crate::config::{resolve_p0, ProblemConfig};
use crate::format;
use crate::CliError;

/// Command-line overrides of the configured grid and strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub delta: Option<f64>,
    pub steps: Option<usize>,
    pub strategy: Option<Strategy>,
    pub refine_escape: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ProblemConfig) -> Result<(), CliError> {
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(CliError::Parse {
                    path: "--delta".into(),
                    message: "delta must be positive".into(),
                });
            }
            cfg.delta = d;
        }
        if let Some(k) = self.steps {
            if k == 0 {
                return Err(CliError::Parse {
                    path: "--steps".into(),
                    message: "K must be at least 1".into(),
                });
            }
            cfg.steps = k;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        cfg.refine_escape |= self.refine_escape;
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

/// Controllability check, basis selection, `Lambda_delta`, and propagation.
pub fn build(cfg: &ProblemConfig, out: &mut dyn Write) -> Result<SemigroupTable, CliError> {
    let sys = &cfg.system;
    if !is_controllable(sys, CONTROLLABILITY_TOL) {
        return Err(CliError::Assumption(
            "(A, B) is not controllable; the fundamental solution requires a controllable pair"
                .into(),
        ));
    }
    let basis = cfg.resolve_basis()?;
    let lambda = lambda_init(sys, &basis, cfg.delta)?;
    let table = build_table(sys, &basis, cfg.delta, cfg.steps, cfg.strategy)?;
    info!("built {} table entries", table.entries().len());

    let w = |out: &mut dyn Write, s: String| out.write_all(s.as_bytes()).map_err(out_err);
    w(
        out,
        format!(
            "system: n = {}, m = {}, p = {}\n",
            sys.n(),
            sys.m(),
            sys.p()
        ),
    )?;
    w(
        out,
        format!("M =\n{}", format::matrix(basis.m().as_matrix(), "  ")),
    )?;
    match basis.m0() {
        Some(m0) => w(
            out,
            format!("M0 =\n{}", format::matrix(m0.as_matrix(), "  ")),
        )?,
        None => w(out, "M0 = (no stabilizing ARE solution found)\n".into())?,
    }
    w(
        out,
        format!(
            "Lambda_delta (delta = {}) =\n{}",
            fmt_time(cfg.delta),
            format::matrix(&lambda.assemble(), "  ")
        ),
    )?;
    w(
        out,
        format!(
            "table: {} entries, K = {}, horizon {}, strategy {:?}\n",
            table.entries().len(),
            table.steps(),
            fmt_time(table.horizon()),
            cfg.strategy
        ),
    )?;
    Ok(table)
}

pub fn build_to_file(
    cfg: &ProblemConfig,
    path: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let table = build(cfg, out)?;
    write_file(path, &write_table(&table))?;
    writeln!(out, "wrote {}", path.display()).map_err(out_err)
}

pub fn load_table(path: &Path) -> Result<SemigroupTable, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_table(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub trace: SolveTrace,
    pub report: EscapeReport,
    pub csv: String,
}

/// Evaluates the solution from `p0` at every table entry and renders the CSV.
pub fn solve(
    table: &SemigroupTable,
    p0: &SymmetricMatrix,
    refine: bool,
) -> Result<SolveOutcome, CliError> {
    let (trace, mut report) = solve_from_table(table, p0)?;
    if refine {
        if let Some(bracket) = report.escape_bracket {
            report.refined_bracket = Some(refine_escape(table, p0, bracket)?);
        }
    }
    let mut csv = trace_csv(&trace, Some(&report));
    if let Some((lo, hi)) = report.refined_bracket {
        csv.push_str(&format!("# refined_bracket,({lo:?},{hi:?}]\n"));
    }
    Ok(SolveOutcome { trace, report, csv })
}

fn verdict_line(report: &EscapeReport) -> String {
    match (report.verdict, report.escape_bracket) {
        (EscapeVerdict::NoEscapeWithinHorizon, _) => "no escape within the horizon".into(),
        (EscapeVerdict::EscapeInBracket, Some((lo, hi))) => {
            format!("escape time in ({}, {}]", fmt_time(lo), fmt_time(hi))
        }
        (EscapeVerdict::IndeterminateBoundary, Some((lo, hi))) => format!(
            "indeterminate: max_eig(P0 + Lambda22) within the zero band in ({}, {}]",
            fmt_time(lo),
            fmt_time(hi)
        ),
        (v, None) => format!("{v:?}"),
    }
}

pub fn solve_to_file(
    table_path: &Path,
    p0_spec: &str,
    known: &[(String, SymmetricMatrix)],
    refine: bool,
    csv_path: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let table = load_table(table_path)?;
    let p0 = resolve_p0(p0_spec, known, table.n())?;
    let outcome = solve(&table, &p0, refine)?;
    write_file(csv_path, &outcome.csv)?;
    let mut text = format!(
        "{} samples, {}\n",
        outcome.trace.samples.len(),
        verdict_line(&outcome.report)
    );
    if let Some((lo, hi)) = outcome.report.refined_bracket {
        text.push_str(&format!("refined bracket ({lo:.9}, {hi:.9}]\n"));
    }
    if let Some((t, p)) = outcome.trace.samples.last() {
        text.push_str(&format!(
            "P at t = {} =\n{}",
            fmt_time(*t),
            format::matrix(p.as_matrix(), "  ")
        ));
    }
    text.push_str(&format!("wrote {}\n", csv_path.display()));
    out.write_all(text.as_bytes()).map_err(out_err)
}

pub fn compare_to_file(
    cfg: &ProblemConfig,
    p0_spec: &str,
    csv_path: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let basis = cfg.resolve_basis()?;
    let p0 = resolve_p0(p0_spec, &cfg.initial_conditions, cfg.system.n())?;
    let horizon = cfg.steps as f64 * cfg.delta;
    let cmp = compare_methods(
        &cfg.system,
        &basis,
        &p0,
        horizon,
        cfg.delta,
        &cfg.integrator,
    )?;
    write_file(csv_path, &compare_csv(&cmp))?;
    let mut text = String::new();
    for o in &cmp.outcomes {
        let status = match (&o.failure, o.bracket) {
            (Some(f), _) => format!("failed: {f}"),
            (None, Some((lo, hi))) => format!("escape in ({}, {}]", fmt_time(lo), fmt_time(hi)),
            (None, None) => "no escape within the horizon".into(),
        };
        text.push_str(&format!("{:<10} {status}\n", format!("{:?}", o.method)));
    }
    let worst = cmp
        .rows
        .iter()
        .flat_map(|r| [r.err_mp_sym, r.err_mp_rk, r.err_sym_rk])
        .flatten()
        .fold(0.0f64, f64::max);
    text.push_str(&format!(
        "{} rows, largest pairwise error {}\nwrote {}\n",
        cmp.rows.len(),
        format::sig(worst),
        csv_path.display()
    ));
    out.write_all(text.as_bytes()).map_err(out_err)
}

fn validation_options(cfg: &ProblemConfig) -> ValidationOptions {
    let defaults = ValidationOptions::default();
    ValidationOptions {
        delta: cfg.delta,
        steps: cfg.steps,
        seed: cfg.seed.unwrap_or(defaults.seed),
        integrator: cfg.integrator,
        ..defaults
    }
}

fn report(rep: &ValidationReport, out: &mut dyn Write) -> Result<(), CliError> {
    for c in &rep.checks {
        writeln!(out, "{c}").map_err(out_err)?;
    }
    let failed = rep.failures().count();
    writeln!(out, "{} checks, {failed} failed", rep.checks.len()).map_err(out_err)?;
    if rep.all_passed() {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(failed.max(1)))
    }
}

pub fn validate(cfg: &ProblemConfig, out: &mut dyn Write) -> Result<ValidationReport, CliError> {
    let basis = cfg.resolve_basis()?;
    let rep = validate_system(&cfg.system, &basis, &validation_options(cfg));
    report(&rep, out)?;
    Ok(rep)
}

/// Validation on a seeded random stable controllable system of dimension `n`.
pub fn validate_random(
    seed: u64,
    n: usize,
    opts: &ValidationOptions,
    out: &mut dyn Write,
) -> Result<ValidationReport, CliError> {
    if n == 0 {
        return Err(CliError::Parse {
            path: "--dim".into(),
            message: "dimension must be at least 1".into(),
        });
    }
    writeln!(out, "random system: seed {seed}, n = {n}").map_err(out_err)?;
    let rep = validate_random_system(seed, n, opts)?;
    report(&rep, out)?;
    Ok(rep)
}
