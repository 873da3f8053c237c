//! The max-plus primal-space fundamental solution `Lambda_t`, its `⊛` product,
//! and tables of `Lambda_{k delta}` built by propagation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{debug, info};
use num_integer::Integer;

use crate::error::{Error, Result};
use crate::matrix::{classify_definiteness, expm, pseudo_inverse, Matrix, EPS_DEF};
use crate::system::{hamiltonian, BasisMatrix, LinearSystem};
use crate::transforms::{pi_inv, xi, BlockSym2n};

/// Relative eigenvalue cutoff of the pseudo-inverse inside `⊛`.
pub const OSTAR_RANK_TOL: f64 = 1e-12;

const TABLE_MAGIC: &str = "riccati-semigroup";
const TABLE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Linear,
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Replace every `R`-th entry by a direct evaluation from `exp(H k delta)`.
    pub reanchor_every: Option<usize>,
    /// For [`Strategy::Doubling`], fill the indices between powers of two.
    pub densify: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            reanchor_every: None,
            densify: true,
        }
    }
}

/// `Lambda_delta = pi_inv(xi(exp(H delta)))`.
pub fn lambda_init(sys: &LinearSystem, basis: &BasisMatrix, delta: f64) -> Result<BlockSym2n> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if basis.dim() != sys.n() {
        return Err(Error::DimensionMismatch {
            context: "basis M",
            expected: sys.n(),
            found: basis.dim(),
        });
    }
    let sigma = expm(&(hamiltonian(sys) * delta))?;
    pi_inv(&xi(&sigma, basis)?, basis)
}

/// `Lambda_{t+s} = Lambda_t ⊛ Lambda_s` with `l = Lambda_t` and `lhat = Lambda_s`.
pub fn ostar(l: &BlockSym2n, lhat: &BlockSym2n) -> Result<BlockSym2n> {
    if l.n() != lhat.n() {
        return Err(Error::DimensionMismatch {
            context: "ostar operands",
            expected: l.n(),
            found: lhat.n(),
        });
    }
    let mid = lhat.b11() + l.b22();
    let d = classify_definiteness(&mid, EPS_DEF);
    let band = EPS_DEF * d.min_eig.abs().max(d.max_eig.abs()).max(1.0);
    if d.max_eig > band {
        return Err(Error::NotInCone {
            max_eig: d.max_eig,
            index: None,
        });
    }
    let z = pseudo_inverse(&mid, Some(OSTAR_RANK_TOL));
    let z = z.as_matrix();
    let l12 = l.b12();
    let lh12 = lhat.b12();
    let b11 = l.b11().as_matrix() - l12 * z * l12.transpose();
    let b12 = -(l12 * z * lh12);
    let b22 = lhat.b22().as_matrix() - lh12.transpose() * z * lh12;
    BlockSym2n::new(
        crate::matrix::symmetrize(&b11)?,
        b12,
        crate::matrix::symmetrize(&b22)?,
    )
}

/// `Lambda_{(p_num / p_den) tau}` from `Lambda_tau`.
///
/// Integer powers reuse `l_tau`; fractional ones recompute the base at
/// `tau / p_den` since `⊛`-roots are not available in closed form.
pub fn ostar_pow(
    l_tau: &BlockSym2n,
    p_num: u64,
    p_den: u64,
    sys: &LinearSystem,
    basis: &BasisMatrix,
    tau: f64,
) -> Result<BlockSym2n> {
    if p_num == 0 || p_den == 0 {
        return Err(Error::InvalidArgument(
            "exponent must be a positive rational".into(),
        ));
    }
    let g = p_num.gcd(&p_den);
    let (num, den) = (p_num / g, p_den / g);
    let base = if den == 1 {
        l_tau.clone()
    } else {
        lambda_init(sys, basis, tau / den as f64)?
    };
    ostar_power(&base, num)
}

/// `base ⊛ ... ⊛ base` (`k` factors) by repeated squaring.
fn ostar_power(base: &BlockSym2n, mut k: u64) -> Result<BlockSym2n> {
    let mut acc: Option<BlockSym2n> = None;
    let mut sq = base.clone();
    loop {
        if k & 1 == 1 {
            acc = Some(match acc {
                None => sq.clone(),
                Some(a) => ostar(&a, &sq)?,
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        sq = ostar(&sq, &sq)?;
    }
    Ok(acc.expect("exponent is positive"))
}

/// `Lambda_{k delta}` for `k` in `1..=K` (only powers of two for a sparse
/// doubling table).
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupTable {
    delta: f64,
    steps: usize,
    entries: BTreeMap<usize, BlockSym2n>,
    basis: BasisMatrix,
    sys: LinearSystem,
}

impl SemigroupTable {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The horizon index `K`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.delta
    }

    pub fn entries(&self) -> &BTreeMap<usize, BlockSym2n> {
        &self.entries
    }

    pub fn get(&self, k: usize) -> Option<&BlockSym2n> {
        self.entries.get(&k)
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.steps
    }
}

pub fn build_table(
    sys: &LinearSystem,
    basis: &BasisMatrix,
    delta: f64,
    steps: usize,
    strategy: Strategy,
) -> Result<SemigroupTable> {
    build_table_with(sys, basis, delta, steps, strategy, BuildOptions::default())
}

pub fn build_table_with(
    sys: &LinearSystem,
    basis: &BasisMatrix,
    delta: f64,
    steps: usize,
    strategy: Strategy,
    opts: BuildOptions,
) -> Result<SemigroupTable> {
    if steps == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if opts.reanchor_every == Some(0) {
        return Err(Error::InvalidArgument(
            "re-anchor interval must be positive".into(),
        ));
    }
    if strategy == Strategy::Doubling && !opts.densify && !steps.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "a sparse doubling table needs K to be a power of two, got {steps}"
        )));
    }
    let base = lambda_init(sys, basis, delta)?;
    let mut entries = BTreeMap::new();
    entries.insert(1, base.clone());

    let tag = |k: usize| {
        move |e: Error| match e {
            Error::NotInCone { max_eig, .. } => Error::NotInCone {
                max_eig,
                index: Some(k),
            },
            other => other,
        }
    };
    let anchored = |k: usize, computed: BlockSym2n| -> Result<BlockSym2n> {
        match opts.reanchor_every {
            Some(r) if k.is_multiple_of(r) => lambda_init(sys, basis, k as f64 * delta),
            _ => Ok(computed),
        }
    };

    match strategy {
        Strategy::Linear => {
            for k in 2..=steps {
                let next = ostar(&base, &entries[&(k - 1)]).map_err(tag(k))?;
                entries.insert(k, anchored(k, next)?);
            }
        }
        Strategy::Doubling => {
            let mut k = 1;
            while 2 * k <= steps {
                let cur = &entries[&k];
                let next = ostar(cur, cur).map_err(tag(2 * k))?;
                entries.insert(2 * k, anchored(2 * k, next)?);
                k *= 2;
            }
            if opts.densify {
                for k in 3..=steps {
                    if k.is_power_of_two() {
                        continue;
                    }
                    let next = ostar(&base, &entries[&(k - 1)]).map_err(tag(k))?;
                    entries.insert(k, anchored(k, next)?);
                }
            }
        }
    }
    info!(
        "built {:?} table: delta = {delta}, K = {steps}, {} entries",
        strategy,
        entries.len()
    );
    Ok(SemigroupTable {
        delta,
        steps,
        entries,
        basis: basis.clone(),
        sys: sys.clone(),
    })
}

fn push_floats(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        let _ = write!(out, " {v:?}");
    }
}

fn push_matrix(out: &mut String, label: &str, m: &Matrix) {
    let _ = write!(out, "{label} {} {}", m.nrows(), m.ncols());
    push_floats(out, row_major(m));
    out.push('\n');
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// Text serialization. Floats use shortest round-trip formatting, so reading
/// the output back reproduces every entry bit for bit.
pub fn write_table(table: &SemigroupTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{TABLE_MAGIC} {TABLE_VERSION} n={} delta={:?} K={}",
        table.n(),
        table.delta,
        table.steps
    );
    push_matrix(&mut out, "system A", table.sys.a());
    push_matrix(&mut out, "system B", table.sys.b());
    push_matrix(&mut out, "system C", table.sys.c());
    push_matrix(&mut out, "basis M", table.basis.m().as_matrix());
    if let Some(m0) = table.basis.m0() {
        push_matrix(&mut out, "basis M0", m0.as_matrix());
    }
    for (k, lambda) in &table.entries {
        let _ = write!(out, "k {k} lambda");
        push_floats(&mut out, row_major(&lambda.assemble()));
        out.push('\n');
    }
    out
}

fn parse_f64(line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::TableFormat {
        line,
        reason: format!("invalid number {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::TableFormat {
            line,
            reason: "non-finite value".into(),
        });
    }
    Ok(v)
}

fn parse_usize(line: usize, tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::TableFormat {
        line,
        reason: format!("invalid integer {tok:?}"),
    })
}

fn header_field<'a>(line: usize, tok: Option<&'a str>, key: &str) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| Error::TableFormat {
            line,
            reason: format!("expected {key}=<value> in header"),
        })
}

fn parse_matrix(line: usize, toks: &[&str]) -> Result<Matrix> {
    if toks.len() < 2 {
        return Err(Error::TableFormat {
            line,
            reason: "missing matrix shape".into(),
        });
    }
    let rows = parse_usize(line, toks[0])?;
    let cols = parse_usize(line, toks[1])?;
    let data = &toks[2..];
    if data.len() != rows * cols {
        return Err(Error::TableFormat {
            line,
            reason: format!("expected {} values, found {}", rows * cols, data.len()),
        });
    }
    let vals = data
        .iter()
        .map(|t| parse_f64(line, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_row_slice(rows, cols, &vals))
}

pub fn read_table(text: &str) -> Result<SemigroupTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(Error::TableFormat {
        line: 1,
        reason: "empty table file".into(),
    })?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(TABLE_MAGIC) {
        return Err(Error::TableFormat {
            line: hline,
            reason: format!("missing {TABLE_MAGIC} header"),
        });
    }
    let version = toks.next().unwrap_or("");
    if version != TABLE_VERSION {
        return Err(Error::TableFormat {
            line: hline,
            reason: format!("unsupported version {version:?}"),
        });
    }
    let n = parse_usize(hline, header_field(hline, toks.next(), "n")?)?;
    let delta = parse_f64(hline, header_field(hline, toks.next(), "delta")?)?;
    let steps = parse_usize(hline, header_field(hline, toks.next(), "K")?)?;
    if n == 0 || steps == 0 || delta <= 0.0 {
        return Err(Error::TableFormat {
            line: hline,
            reason: "n, delta, and K must be positive".into(),
        });
    }

    let (mut a, mut b, mut c, mut m, mut m0) = (None, None, None, None, None);
    let mut entries = BTreeMap::new();
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["system", which, rest @ ..] => {
                let mat = parse_matrix(ln, rest)?;
                match *which {
                    "A" => a = Some(mat),
                    "B" => b = Some(mat),
                    "C" => c = Some(mat),
                    other => {
                        return Err(Error::TableFormat {
                            line: ln,
                            reason: format!("unknown system matrix {other:?}"),
                        })
                    }
                }
            }
            ["basis", which, rest @ ..] => {
                let mat = crate::matrix::symmetrize(&parse_matrix(ln, rest)?).map_err(|e| {
                    Error::TableFormat {
                        line: ln,
                        reason: e.to_string(),
                    }
                })?;
                match *which {
                    "M" => m = Some(mat),
                    "M0" => m0 = Some(mat),
                    other => {
                        return Err(Error::TableFormat {
                            line: ln,
                            reason: format!("unknown basis matrix {other:?}"),
                        })
                    }
                }
            }
            ["k", idx, "lambda", rest @ ..] => {
                let k = parse_usize(ln, idx)?;
                if k == 0 || k > steps {
                    return Err(Error::TableFormat {
                        line: ln,
                        reason: format!("entry index {k} outside 1..={steps}"),
                    });
                }
                let dim = 2 * n;
                if rest.len() != dim * dim {
                    return Err(Error::TableFormat {
                        line: ln,
                        reason: format!("expected {} values, found {}", dim * dim, rest.len()),
                    });
                }
                let vals = rest
                    .iter()
                    .map(|t| parse_f64(ln, t))
                    .collect::<Result<Vec<_>>>()?;
                let full = Matrix::from_row_slice(dim, dim, &vals);
                let lambda = BlockSym2n::from_full(&full).map_err(|e| Error::TableFormat {
                    line: ln,
                    reason: e.to_string(),
                })?;
                if entries.insert(k, lambda).is_some() {
                    return Err(Error::TableFormat {
                        line: ln,
                        reason: format!("duplicate entry {k}"),
                    });
                }
            }
            _ => {
                return Err(Error::TableFormat {
                    line: ln,
                    reason: "unrecognized line".into(),
                })
            }
        }
    }

    let missing = |what: &str| Error::TableFormat {
        line: hline,
        reason: format!("table has no {what} line"),
    };
    let sys = LinearSystem::new(
        a.ok_or_else(|| missing("system A"))?,
        b.ok_or_else(|| missing("system B"))?,
        c.ok_or_else(|| missing("system C"))?,
    )?;
    if sys.n() != n {
        return Err(Error::TableFormat {
            line: hline,
            reason: format!("header n={n} but A is {}x{}", sys.n(), sys.n()),
        });
    }
    let basis = BasisMatrix::from_user(m.ok_or_else(|| missing("basis M"))?, m0)?;
    if entries.is_empty() || !entries.contains_key(&1) {
        return Err(Error::TableFormat {
            line: hline,
            reason: "table has no entry for k = 1".into(),
        });
    }
    debug!(
        "read table: n = {n}, delta = {delta}, K = {steps}, {} entries",
        entries.len()
    );
    Ok(SemigroupTable {
        delta,
        steps,
        entries,
        basis,
        sys,
    })
}
