//! End-to-end acceptance criteria. Runs without the libtest harness so that
//! the PASS/FAIL line of each criterion is always printed; exits nonzero if
//! any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use riccati_cli::{commands, load_config, ProblemConfig};
use riccati_core::matrix::{max_abs, max_abs_diff};
use riccati_core::oracle::{monotonicity_check, rk45_q_blocks, IntegratorConfig};
use riccati_core::semigroup::{build_table, lambda_init, ostar};
use riccati_core::solver::{compare_methods, escape_test_at, solve_from_table, EscapeVerdict};
use riccati_core::symplectic::SymplecticFlow;
use riccati_core::system::{are_residual, solve_are_stabilizing};
use riccati_core::transforms::xi;
use riccati_core::validate::{
    random_spd, random_symmetric, round_trip_suite, seeded_rng, sigma_trace_decrease, table_drift,
    ValidationOptions,
};
use riccati_core::{Matrix, Strategy, SymmetricMatrix};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example.json")
}

fn example() -> ProblemConfig {
    load_config(&config_path()).expect("example config parses")
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn printed_lambda_delta() -> Matrix {
    Matrix::from_row_slice(
        4,
        4,
        &[
            -83.48, -3.021, 92.26, -4.011, //
            -3.021, -91.11, 11.07, 92.42, //
            92.26, 11.07, -102.6, -3.420, //
            -4.011, 92.42, -3.420, -94.28,
        ],
    )
}

fn lambda_delta() -> Outcome {
    let start = Instant::now();
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let l = lambda_init(&cfg.system, &basis, 0.05).map_err(err)?;
    let elapsed = start.elapsed().as_secs_f64();
    let dev = max_abs_diff(&l.assemble(), &printed_lambda_delta());
    ensure(
        dev <= 5e-2 && elapsed < 1.0,
        format!("max deviation {dev:.3e} (tol 5e-2), {elapsed:.3} s (limit 1 s)"),
    )
}

fn are_solution() -> Outcome {
    let cfg = example();
    let m0 = solve_are_stabilizing(&cfg.system).map_err(err)?;
    let expected = Matrix::from_row_slice(2, 2, &[0.651, -0.310, -0.310, 1.160]);
    let dev = max_abs_diff(m0.as_matrix(), &expected);
    let residual = max_abs(are_residual(&cfg.system, &m0).as_matrix());
    // 2x2 Hurwitz test: negative trace and positive determinant.
    let f = cfg.system.a() + cfg.system.bbt().as_matrix() * m0.as_matrix();
    let hurwitz = f.trace() < 0.0 && f.determinant() > 0.0;
    ensure(
        dev <= 5e-3 && residual <= 1e-8 && hurwitz,
        format!(
            "deviation {dev:.3e} (tol 5e-3), residual {residual:.3e} (tol 1e-8), closed loop Hurwitz {hurwitz}"
        ),
    )
}

fn escape_bracket() -> Outcome {
    let start = Instant::now();
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let p0 = SymmetricMatrix::from_diagonal(&[2.0, 6.5]);
    let mut detail = Vec::new();
    let mut ok = true;
    for (delta, steps) in [(0.1, 40), (0.05, 80)] {
        let table =
            build_table(&cfg.system, &basis, delta, steps, Strategy::Linear).map_err(err)?;
        let (_, report) = solve_from_table(&table, &p0).map_err(err)?;
        let Some((lo, hi)) = report.escape_bracket else {
            return Err(format!("no escape detected at delta = {delta}"));
        };
        let scan = SymplecticFlow::new(cfg.system.clone())
            .escape_scan(&p0, 4.0, delta, false)
            .map_err(err)?;
        let Some((slo, shi)) = scan.escape_bracket else {
            return Err(format!(
                "symplectic scan found no escape at delta = {delta}"
            ));
        };
        let inside = lo >= 2.8 - 1e-12 && hi <= 2.9 + 1e-12;
        let overlaps = slo < hi && lo < shi;
        ok &= report.verdict == EscapeVerdict::EscapeInBracket && inside && overlaps;
        detail.push(format!(
            "delta {delta}: max-plus ({lo:.2}, {hi:.2}], symplectic ({slo:.2}, {shi:.2}]"
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 5.0;
    ensure(
        ok,
        format!("{}; {elapsed:.2} s (limit 5 s)", detail.join("; ")),
    )
}

fn no_escape_agreement() -> Outcome {
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let p0 = SymmetricMatrix::scaled_identity(2, -0.1);
    let cmp = compare_methods(
        &cfg.system,
        &basis,
        &p0,
        4.0,
        0.05,
        &IntegratorConfig::default(),
    )
    .map_err(err)?;
    let traces = [&cmp.maxplus, &cmp.symplectic, &cmp.rk45];
    let mut worst: f64 = 0.0;
    for trace in traces {
        let trace = trace.as_ref().ok_or("a method failed")?;
        if trace.samples.len() != 80 || trace.truncated_at_escape {
            return Err(format!(
                "{:?} produced {} samples",
                trace.method,
                trace.samples.len()
            ));
        }
        if trace
            .samples
            .iter()
            .any(|(_, p)| !p.as_matrix().iter().all(|v| v.is_finite()))
        {
            return Err(format!("{:?} produced non-finite values", trace.method));
        }
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let (ta, tb) = (traces[a].as_ref().unwrap(), traces[b].as_ref().unwrap());
        for ((t1, p), (t2, q)) in ta.samples.iter().zip(&tb.samples) {
            if (t1 - t2).abs() > 1e-12 {
                return Err(format!("grids differ at {t1} vs {t2}"));
            }
            worst = worst.max(p.max_abs_diff(q));
        }
    }
    ensure(
        worst <= 1e-4,
        format!("80 finite samples per method, max three-way disagreement {worst:.3e} (tol 1e-4)"),
    )
}

fn semigroup_law() -> Outcome {
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let table = build_table(&cfg.system, &basis, 0.05, 80, Strategy::Linear).map_err(err)?;
    let mut law: f64 = 0.0;
    let mut pairs = 0;
    for i in 1..80 {
        for j in 1..=(80 - i) {
            let prod = ostar(&table.entries()[&i], &table.entries()[&j]).map_err(err)?;
            law = law.max(prod.max_abs_diff(&table.entries()[&(i + j)]));
            pairs += 1;
        }
    }
    let drift = table_drift(&table).map_err(err)?;
    ensure(
        law <= 1e-6 && drift <= 1e-6,
        format!("{pairs} products, law residual {law:.3e}, table vs direct {drift:.3e} (tol 1e-6)"),
    )
}

fn block_ode_equivalence() -> Outcome {
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let times = [0.0, 0.5, 1.0, 2.0];
    let q =
        rk45_q_blocks(&cfg.system, &basis, &times, &IntegratorConfig::default()).map_err(err)?;
    let flow = SymplecticFlow::new(cfg.system.clone());
    let mut worst: f64 = 0.0;
    for (t, q_t) in q.iter().skip(1) {
        let via_sigma = xi(&flow.sigma_at(*t).map_err(err)?, &basis).map_err(err)?;
        worst = worst.max(via_sigma.max_abs_diff(q_t));
    }
    ensure(
        q.len() == 4 && worst <= 1e-6,
        format!("t in {{0.5, 1, 2}}: max deviation {worst:.3e} (tol 1e-6)"),
    )
}

fn round_trips() -> Outcome {
    let checks = round_trip_suite(2024, 100);
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.residual))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        checks.len() == 3 && checks.iter().all(|c| c.passed && c.residual <= 1e-9),
        format!("100 inputs each: {detail} (tol 1e-9)"),
    )
}

fn monotonicity() -> Outcome {
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let table = build_table(&cfg.system, &basis, 0.05, 80, Strategy::Linear).map_err(err)?;
    let mut rng = seeded_rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p0 = random_symmetric(&mut rng, 2, 5.0);
        worst = worst.max(sigma_trace_decrease(&table, &p0).map_err(err)?);
    }
    let mut ordered = 0;
    for _ in 0..20 {
        let low = basis.m() + &random_spd(&mut rng, 2, 0.05);
        let high = &low + &random_spd(&mut rng, 2, 0.0);
        if monotonicity_check(
            &cfg.system,
            &low,
            &high,
            4.0,
            40,
            &IntegratorConfig::default(),
        )
        .map_err(err)?
        {
            ordered += 1;
        }
    }
    ensure(
        worst <= 1e-9 && ordered == 20,
        format!("largest sigma_max decrease {worst:.3e} (tol 1e-9), order preserved on {ordered}/20 pairs"),
    )
}

fn cost_asymmetry() -> Outcome {
    let cfg = example();
    let basis = cfg.resolve_basis().map_err(err)?;
    let table = build_table(&cfg.system, &basis, 0.05, 80, Strategy::Linear).map_err(err)?;
    let p0 = SymmetricMatrix::scaled_identity(2, -0.1);
    let maxplus = escape_test_at(&table, &p0, 80).map_err(err)?;
    let scan = SymplecticFlow::new(cfg.system.clone())
        .escape_scan(&p0, 4.0, 0.05, false)
        .map_err(err)?;
    ensure(
        maxplus.tests_performed == 1
            && maxplus.verdict == EscapeVerdict::NoEscapeWithinHorizon
            && scan.tests_performed == 80
            && scan.verdict == EscapeVerdict::NoEscapeWithinHorizon,
        format!(
            "max-plus {} definiteness test(s), symplectic {} invertibility tests",
            maxplus.tests_performed, scan.tests_performed
        ),
    )
}

fn property_suite() -> Outcome {
    let start = Instant::now();
    let mut sink = Vec::new();
    let cfg = example();
    let mut failed = Vec::new();
    if let Err(e) = commands::validate(&cfg, &mut sink) {
        failed.push(format!("example system: {e}"));
    }
    let opts = ValidationOptions::default();
    for seed in 0..10u64 {
        let n = 1 + (seed % 4) as usize;
        if let Err(e) = commands::validate_random(seed, n, &opts, &mut sink) {
            failed.push(format!("seed {seed} (n = {n}): {e}"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if !failed.is_empty() {
        let log = String::from_utf8_lossy(&sink);
        let fails: Vec<&str> = log.lines().filter(|l| l.starts_with("FAIL")).collect();
        return Err(format!("{}; {}", failed.join("; "), fails.join("; ")));
    }
    ensure(
        elapsed < 60.0,
        format!("example system and 10 random systems pass, {elapsed:.2} s (limit 60 s)"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1 lambda_delta reproduction", lambda_delta),
        ("AC2 stabilizing ARE solution", are_solution),
        ("AC3 escape bracket", escape_bracket),
        ("AC4 no-escape three-way agreement", no_escape_agreement),
        ("AC5 semigroup law", semigroup_law),
        ("AC6 block ODE equivalence", block_ode_equivalence),
        ("AC7 bijection round trips", round_trips),
        ("AC8 monotonicity", monotonicity),
        ("AC9 cost asymmetry", cost_asymmetry),
        ("AC10 property suite", property_suite),
    ];
    let mut failures = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failures.push(name);
            }
        }
    }
    if !failures.is_empty() {
        eprintln!("acceptance failed: {failures:?}");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
