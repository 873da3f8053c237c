use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use riccati_cli::commands::{self, Overrides};
use riccati_cli::{load_config, parse_config, CliError};
use riccati_core::matrix::max_abs_diff;
use riccati_core::semigroup::{read_table, write_table};
use riccati_core::{Matrix, SymmetricMatrix};

fn example_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/example.json")
}

fn riccati(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riccati"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn sink() -> Vec<u8> {
    Vec::new()
}

#[test]
fn sqrt_of_reproduces_the_stated_gram_matrices() {
    let cfg = load_config(&example_config_path()).unwrap();
    let bbt = Matrix::from_row_slice(2, 2, &[0.216, -0.008, -0.008, 0.216]);
    let ctc = Matrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.6]);
    assert!(max_abs_diff(cfg.system.bbt().as_matrix(), &bbt) <= 1e-12);
    assert!(max_abs_diff(cfg.system.ctc().as_matrix(), &ctc) <= 1e-12);
    assert_eq!(cfg.steps, 80);
    assert_eq!(cfg.initial_conditions.len(), 2);
}

#[test]
fn minimal_scalar_config_is_valid() {
    let cfg = parse_config(
        r#"{"system": {"A": [[-1]], "B": [[1]], "C": [[1]]}, "grid": {"delta": 0.1, "K": 5}}"#,
        "inline",
    )
    .unwrap();
    assert_eq!(cfg.system.n(), 1);
    assert!(matches!(cfg.basis, riccati_cli::BasisSpec::Auto { .. }));
}

#[test]
fn mismatched_dimensions_are_a_parse_failure() {
    let err = parse_config(
        r#"{"system": {"A": [[-1, 0], [0, -1]], "B": [[1], [1], [1]], "C": [[1, 0]]},
            "grid": {"delta": 0.1, "K": 5}}"#,
        "inline",
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn sqrt_of_an_indefinite_matrix_is_rejected() {
    let err = parse_config(
        r#"{"system": {"A": [[-1]], "B": {"sqrt_of": [[-4]]}, "C": [[1]]},
            "grid": {"delta": 0.1, "K": 5}}"#,
        "inline",
    )
    .unwrap_err();
    assert!(err.to_string().contains("system.B.sqrt_of"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn json_errors_name_the_field_and_line() {
    let err = parse_config(
        "{\"system\": {\"A\": [[-1]], \"B\": [[1]], \"C\": [[1]]},\n \"grid\": {\"delta\": \"x\", \"K\": 5}}",
        "cfg.json",
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("grid.delta") && msg.contains("line 2"),
        "{msg}"
    );
}

#[test]
fn build_prints_lambda_delta_at_four_figures() {
    let cfg = load_config(&example_config_path()).unwrap();
    let mut out = sink();
    let table = commands::build(&cfg, &mut out).unwrap();
    assert_eq!(table.entries().len(), 80);
    let text = String::from_utf8(out).unwrap();
    for entry in [
        "-83.48", "-3.021", "92.26", "-4.011", "-91.11", "11.07", "92.42", "-102.6", "-3.420",
        "-94.28",
    ] {
        assert!(text.contains(entry), "missing {entry} in\n{text}");
    }
}

#[test]
fn single_step_grid_gives_single_entry_table() {
    let mut cfg = load_config(&example_config_path()).unwrap();
    Overrides {
        steps: Some(1),
        ..Default::default()
    }
    .apply(&mut cfg)
    .unwrap();
    let table = commands::build(&cfg, &mut sink()).unwrap();
    assert_eq!(table.entries().len(), 1);
}

#[test]
fn table_file_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let table_path = dir.path().join("table.txt");
    let cfg = load_config(&example_config_path()).unwrap();
    commands::build_to_file(&cfg, &table_path, &mut sink()).unwrap();
    let text = std::fs::read_to_string(&table_path).unwrap();
    let table = read_table(&text).unwrap();
    assert_eq!(write_table(&table), text);
    let fresh = commands::build(&cfg, &mut sink()).unwrap();
    assert_eq!(fresh, table);
}

#[test]
fn fresh_and_reloaded_tables_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let table_path = dir.path().join("table.txt");
    let cfg = load_config(&example_config_path()).unwrap();
    let fresh = commands::build(&cfg, &mut sink()).unwrap();
    std::fs::write(&table_path, write_table(&fresh)).unwrap();
    let reloaded = commands::load_table(&table_path).unwrap();
    for (name, p0) in &cfg.initial_conditions {
        let a = commands::solve(&fresh, p0, true).unwrap();
        let b = commands::solve(&reloaded, p0, true).unwrap();
        assert_eq!(a.csv, b.csv, "{name}");
    }
}

#[test]
fn solve_bounded_and_escaping_cases() {
    let mut cfg = load_config(&example_config_path()).unwrap();
    let table = commands::build(&cfg, &mut sink()).unwrap();
    let bounded =
        commands::solve(&table, cfg.initial_condition("bounded").unwrap(), false).unwrap();
    assert_eq!(bounded.csv.lines().count(), 81);
    assert!(!bounded.csv.contains('#'));

    Overrides {
        delta: Some(0.1),
        steps: Some(40),
        ..Default::default()
    }
    .apply(&mut cfg)
    .unwrap();
    let coarse = commands::build(&cfg, &mut sink()).unwrap();
    let escaping =
        commands::solve(&coarse, cfg.initial_condition("escaping").unwrap(), false).unwrap();
    assert!(
        escaping.csv.ends_with("# escape_bracket,(2.8,2.9]\n"),
        "{}",
        escaping.csv
    );
    assert_eq!(escaping.trace.samples.len(), 28);
}

#[test]
fn initial_condition_below_basis_is_rejected() {
    let cfg = load_config(&example_config_path()).unwrap();
    let table = commands::build(&cfg, &mut sink()).unwrap();
    let p0 = table.basis().m() - &SymmetricMatrix::identity(2);
    let err = commands::solve(&table, &p0, false).unwrap_err();
    assert!(
        matches!(err, CliError::Core(riccati_core::Error::InitOutOfClass { min_eig }) if (min_eig + 1.0).abs() < 1e-9),
        "{err}"
    );
    assert_eq!(err.exit_code(), 1);
}

fn compare_rows(csv: &str) -> Vec<Vec<Option<f64>>> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').skip(1).map(|v| v.parse().ok()).collect())
        .collect()
}

#[test]
fn compare_agrees_without_escape_and_diverges_before_escape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(&example_config_path()).unwrap();

    let path = dir.path().join("bounded.csv");
    commands::compare_to_file(&cfg, "bounded", &path, &mut sink()).unwrap();
    let rows = compare_rows(&std::fs::read_to_string(&path).unwrap());
    assert_eq!(rows.len(), 80);
    for row in &rows {
        for v in row {
            assert!(v.unwrap() <= 1e-4);
        }
    }

    let path = dir.path().join("escaping.csv");
    commands::compare_to_file(&cfg, "escaping", &path, &mut sink()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let errs: Vec<f64> = compare_rows(&text).iter().map_while(|r| r[1]).collect();
    let n = errs.len();
    assert!(n > 10);
    let mut early = errs[..n / 2].to_vec();
    early.sort_by(f64::total_cmp);
    let median = early[early.len() / 2];
    assert!(errs[n - 1] > errs[n - 2] && errs[n - 2] > errs[n - 3]);
    assert!(errs[n - 1] > 100.0 * median, "{} vs {median}", errs[n - 1]);
    assert!(text.contains("# MaxPlus,escape"));
}

#[test]
fn compare_on_single_step_grid_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load_config(&example_config_path()).unwrap();
    cfg.steps = 1;
    let path = dir.path().join("one.csv");
    commands::compare_to_file(&cfg, "bounded", &path, &mut sink()).unwrap();
    assert_eq!(
        compare_rows(&std::fs::read_to_string(&path).unwrap()).len(),
        1
    );
}

#[test]
fn validate_reports_every_check() {
    let cfg = load_config(&example_config_path()).unwrap();
    let mut out = sink();
    let report = commands::validate(&cfg, &mut out).unwrap();
    assert!(report.all_passed());
    let text = String::from_utf8(out).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        report.checks.len()
    );
}

#[test]
fn validate_random_seeded_system_passes() {
    let opts = riccati_core::validate::ValidationOptions::default();
    let report = commands::validate_random(42, 3, &opts, &mut sink()).unwrap();
    assert!(report.all_passed());
}

#[test]
fn singular_basis_fails_validation() {
    let text = std::fs::read_to_string(example_config_path())
        .unwrap()
        .replace(
            "[[-1.0, -0.2], [-0.2, -1.0]]",
            "[[-1.0, -1.0], [-1.0, -1.0]]",
        );
    let cfg = parse_config(&text, "singular").unwrap();
    let err = commands::validate(&cfg, &mut sink()).unwrap_err();
    assert!(err.to_string().contains("invalid basis"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config_path();
    let cfg = cfg.to_str().unwrap();
    let table = dir.path().join("t.txt");
    let table = table.to_str().unwrap();
    let csv = dir.path().join("p.csv");
    let csv = csv.to_str().unwrap();

    let ok = riccati(&["build", "--config", cfg, "--out", table]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("-102.6"));

    let solved = riccati(&[
        "solve",
        "--table",
        table,
        "--config",
        cfg,
        "--p0",
        "escaping",
        "--out",
        csv,
        "--refine-escape",
    ]);
    assert_eq!(solved.status.code(), Some(0));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.contains("# escape_bracket,(2.8,2.85]") && text.contains("# refined_bracket,("));

    let inline = riccati(&[
        "solve",
        "--table",
        table,
        "--p0",
        "[[-2, -0.2], [-0.2, -2]]",
        "--out",
        csv,
    ]);
    assert_eq!(inline.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&inline.stderr).contains("min eigenvalue"));

    let unknown = riccati(&["solve", "--table", table, "--p0", "nope", "--out", csv]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing = riccati(&["build", "--config", "/nonexistent/cfg.json", "--out", table]);
    assert_eq!(missing.status.code(), Some(2));

    let garbage = write_config(dir.path(), "garbage.txt", "riccati-semigroup v1 nonsense\n");
    let bad_table = riccati(&[
        "solve",
        "--table",
        garbage.to_str().unwrap(),
        "--p0",
        "[[0]]",
        "--out",
        csv,
    ]);
    assert_eq!(bad_table.status.code(), Some(2));

    let uncontrollable = write_config(
        dir.path(),
        "b0.json",
        r#"{"system": {"A": [[-2.0, 1.6], [-1.6, -0.4]], "B": [[0, 0], [0, 0]], "C": [[1, 0], [0, 1]]},
            "grid": {"delta": 0.05, "K": 10}}"#,
    );
    let refused = riccati(&[
        "build",
        "--config",
        uncontrollable.to_str().unwrap(),
        "--out",
        table,
    ]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("not controllable"));

    let validated = riccati(&["validate", "--random-seed", "5", "--dim", "2"]);
    assert_eq!(validated.status.code(), Some(0));

    let usage = riccati(&["build"]);
    assert_eq!(usage.status.code(), Some(2));
}
