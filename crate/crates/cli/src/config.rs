//! JSON problem description.
//!
//! ```json
//! {
//!   "system": { "A": [[-2, 1.6], [-1.6, -0.4]],
//!               "B": { "sqrt_of": [[0.216, -0.008], [-0.008, 0.216]] },
//!               "C": { "sqrt_of": [[1.5, 0.2], [0.2, 1.6]] } },
//!   "basis": { "M": [[-1, -0.2], [-0.2, -1]] },
//!   "grid": { "delta": 0.05, "K": 80 },
//!   "initial_conditions": [ { "name": "bounded", "P0": [[-0.1, 0], [0, -0.1]] } ],
//!   "options": { "strategy": "linear", "refine_escape": false }
//! }
//! ```

use std::path::Path;

use riccati_core::matrix::{max_abs, sqrtm_spd};
use riccati_core::oracle::IntegratorConfig;
use riccati_core::system::{select_basis, DEFAULT_MARGIN};
use riccati_core::{BasisMatrix, LinearSystem, Matrix, Strategy, SymmetricMatrix};
use serde::Deserialize;

use crate::CliError;

/// Asymmetry tolerated in matrices that must be symmetric, relative to `max(1, max|x|)`.
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum BasisSpec {
    Explicit(SymmetricMatrix),
    Auto { margin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub system: LinearSystem,
    pub basis: BasisSpec,
    pub delta: f64,
    pub steps: usize,
    pub initial_conditions: Vec<(String, SymmetricMatrix)>,
    pub strategy: Strategy,
    pub refine_escape: bool,
    pub integrator: IntegratorConfig,
    pub seed: Option<u64>,
}

impl ProblemConfig {
    pub fn resolve_basis(&self) -> Result<BasisMatrix, CliError> {
        Ok(match &self.basis {
            BasisSpec::Explicit(m) => BasisMatrix::from_user_for_system(m.clone(), &self.system)?,
            BasisSpec::Auto { margin } => select_basis(&self.system, *margin)?,
        })
    }

    pub fn initial_condition(&self, name: &str) -> Option<&SymmetricMatrix> {
        self.initial_conditions
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Plain(Vec<Vec<f64>>),
    Root { sqrt_of: Vec<Vec<f64>> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: MatrixSpec,
    #[serde(rename = "C")]
    c: MatrixSpec,
}

#[derive(Deserialize)]
enum RawBasis {
    M(Vec<Vec<f64>>),
    #[serde(rename = "auto")]
    Auto {
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    delta: f64,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    name: String,
    #[serde(rename = "P0")]
    p0: Vec<Vec<f64>>,
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum RawStrategy {
    #[default]
    Linear,
    Doubling,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    abs_tol: Option<f64>,
    rel_tol: Option<f64>,
    max_step: Option<f64>,
    blow_up_threshold: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    #[serde(default)]
    strategy: RawStrategy,
    #[serde(default)]
    refine_escape: bool,
    #[serde(default)]
    tolerances: RawTolerances,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    basis: Option<RawBasis>,
    grid: RawGrid,
    #[serde(default)]
    initial_conditions: Vec<RawInitial>,
    #[serde(default)]
    options: RawOptions,
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Row-major rectangular matrix from nested rows.
pub fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<Matrix, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(invalid(path, "matrix is empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(invalid(
            path,
            format!("row {i} has {} entries, row 0 has {c}", rows[i].len()),
        ));
    }
    let m = Matrix::from_fn(r, c, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid(path, "matrix has non-finite entries"));
    }
    Ok(m)
}

pub fn symmetric_from_rows(rows: &[Vec<f64>], path: &str) -> Result<SymmetricMatrix, CliError> {
    let m = matrix_from_rows(rows, path)?;
    if !m.is_square() {
        return Err(invalid(
            path,
            format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    let asym = max_abs(&(&m - m.transpose()));
    if asym > SYMMETRY_TOL * max_abs(&m).max(1.0) {
        return Err(invalid(
            path,
            format!("matrix is not symmetric (max |X - X'| = {asym:e})"),
        ));
    }
    SymmetricMatrix::new(m).map_err(|e| invalid(path, e.to_string()))
}

fn resolve_spec(spec: &MatrixSpec, path: &str) -> Result<Matrix, CliError> {
    match spec {
        MatrixSpec::Plain(rows) => matrix_from_rows(rows, path),
        MatrixSpec::Root { sqrt_of } => {
            let inner = format!("{path}.sqrt_of");
            let s = symmetric_from_rows(sqrt_of, &inner)?;
            sqrtm_spd(&s)
                .map(SymmetricMatrix::into_matrix)
                .map_err(|e| invalid(&inner, e.to_string()))
        }
    }
}

/// Parses and validates a configuration document. `origin` labels diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<ProblemConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        CliError::Parse {
            path: format!("{origin}: {}", e.path()),
            message: format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        }
    })?;

    let a = matrix_from_rows(&raw.system.a, "system.A")?;
    let b = resolve_spec(&raw.system.b, "system.B")?;
    let c = resolve_spec(&raw.system.c, "system.C")?;
    let system = LinearSystem::new(a, b, c).map_err(|e| invalid("system", e.to_string()))?;
    let n = system.n();

    let basis = match raw.basis {
        None => BasisSpec::Auto {
            margin: DEFAULT_MARGIN,
        },
        Some(RawBasis::M(rows)) => {
            let m = symmetric_from_rows(&rows, "basis.M")?;
            if m.dim() != n {
                return Err(invalid(
                    "basis.M",
                    format!("expected {n}x{n}, got {0}x{0}", m.dim()),
                ));
            }
            BasisSpec::Explicit(m)
        }
        Some(RawBasis::Auto { margin }) => {
            if !(margin > 0.0 && margin.is_finite()) {
                return Err(invalid("basis.auto.margin", "margin must be positive"));
            }
            BasisSpec::Auto { margin }
        }
    };

    if !(raw.grid.delta > 0.0 && raw.grid.delta.is_finite()) {
        return Err(invalid("grid.delta", "delta must be positive"));
    }
    if raw.grid.k == 0 {
        return Err(invalid("grid.K", "K must be at least 1"));
    }

    let mut initial_conditions = Vec::with_capacity(raw.initial_conditions.len());
    for (i, ic) in raw.initial_conditions.iter().enumerate() {
        let path = format!("initial_conditions[{i}].P0");
        let p0 = symmetric_from_rows(&ic.p0, &path)?;
        if p0.dim() != n {
            return Err(invalid(
                &path,
                format!("expected {n}x{n}, got {0}x{0}", p0.dim()),
            ));
        }
        if initial_conditions.iter().any(|(name, _)| name == &ic.name) {
            return Err(invalid(
                &format!("initial_conditions[{i}].name"),
                format!("duplicate name {:?}", ic.name),
            ));
        }
        initial_conditions.push((ic.name.clone(), p0));
    }

    let defaults = IntegratorConfig::default();
    let tol = &raw.options.tolerances;
    let integrator = IntegratorConfig {
        abs_tol: tol.abs_tol.unwrap_or(defaults.abs_tol),
        rel_tol: tol.rel_tol.unwrap_or(defaults.rel_tol),
        max_step: tol.max_step.unwrap_or(defaults.max_step),
        blow_up_threshold: tol.blow_up_threshold.unwrap_or(defaults.blow_up_threshold),
    };
    integrator
        .validate()
        .map_err(|e| invalid("options.tolerances", e.to_string()))?;

    Ok(ProblemConfig {
        system,
        basis,
        delta: raw.grid.delta,
        steps: raw.grid.k,
        initial_conditions,
        strategy: match raw.options.strategy {
            RawStrategy::Linear => Strategy::Linear,
            RawStrategy::Doubling => Strategy::Doubling,
        },
        refine_escape: raw.options.refine_escape,
        integrator,
        seed: raw.options.seed,
    })
}

pub fn load_config(path: &Path) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

/// An initial condition given either by name (looked up in `known`) or inline
/// as a JSON matrix such as `[[2,0],[0,6.5]]`.
pub fn resolve_p0(
    spec: &str,
    known: &[(String, SymmetricMatrix)],
    n: usize,
) -> Result<SymmetricMatrix, CliError> {
    let spec = spec.trim();
    let p0 = if spec.starts_with('[') {
        let rows: Vec<Vec<f64>> = serde_json::from_str(spec)
            .map_err(|e| invalid("--p0", format!("inline matrix: {e}")))?;
        symmetric_from_rows(&rows, "--p0")?
    } else {
        match known.iter().find(|(name, _)| name == spec) {
            Some((_, p)) => p.clone(),
            None => {
                let names: Vec<&str> = known.iter().map(|(n, _)| n.as_str()).collect();
                return Err(invalid(
                    "--p0",
                    if names.is_empty() {
                        format!("unknown initial condition {spec:?} (no named initial conditions available)")
                    } else {
                        format!(
                            "unknown initial condition {spec:?}; known: {}",
                            names.join(", ")
                        )
                    },
                ));
            }
        }
    };
    if p0.dim() != n {
        return Err(invalid(
            "--p0",
            format!("expected {n}x{n}, got {0}x{0}", p0.dim()),
        ));
    }
    Ok(p0)
}
