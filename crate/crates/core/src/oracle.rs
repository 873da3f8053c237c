//! Reference integrators used to cross-check the fundamental solutions.
//!
//! Dormand–Prince 5(4) with PI step-size control and continuous output,
//! applied to the DRE itself and to the coupled block system for `Q_t`.

use log::{debug, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix::{
    classify_definiteness, max_abs, spectral_norm, Matrix, SymmetricMatrix, EPS_DEF,
};
use crate::solver::{Method, SolveTrace};
use crate::system::{BasisMatrix, LinearSystem};
use crate::transforms::{mu, BlockSym2n};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Integration stops once `||P||_2` exceeds this.
    pub blow_up_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_step: 0.1,
            blow_up_threshold: 1e9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = |v: f64| v > 0.0 && v < 1.0;
        if !(tol_ok(self.abs_tol) && tol_ok(self.rel_tol)) {
            return Err(Error::InvalidArgument(
                "integrator tolerances must lie in (0, 1)".into(),
            ));
        }
        if !(self.max_step > 0.0 && self.max_step.is_finite()) {
            return Err(Error::InvalidArgument("max_step must be positive".into()));
        }
        if self.blow_up_threshold.is_nan() || self.blow_up_threshold <= 1.0 {
            return Err(Error::InvalidArgument(
                "blow-up threshold must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BlowUp,
    StepUnderflow,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub samples: Vec<(f64, DVector<f64>)>,
    /// Time of the last accepted step and the reason, when stopped early.
    pub stopped: Option<(f64, StopReason)>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller constants
const BETA: f64 = 0.04;
const SAFE: f64 = 0.9;
const FAC1: f64 = 0.2;
const FAC2: f64 = 10.0;
const MAX_STEPS: usize = 1_000_000;

fn error_norm(
    err: &DVector<f64>,
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sk = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Starting step from the local behaviour of `f` (Hairer's heuristic).
fn initial_step<F>(
    f: &F,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> f64
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let sk = y0.map(|v| cfg.abs_tol + cfg.rel_tol * v.abs());
    let n = y0.len() as f64;
    let norm = |v: &DVector<f64>| (v.component_div(&sk).norm_squared() / n).sqrt();
    let dnf = norm(f0);
    let dny = norm(y0);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * dny / dnf
    };
    h = h.min(cfg.max_step);
    let y1 = y0 + f0 * h;
    let f1 = f(t0 + h, &y1);
    let der2 = norm(&(&f1 - f0)) / h;
    let der12 = der2.max(dnf);
    let h1 = if der12 <= 1e-15 {
        (1e-6f64).max(h * 1e-3)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(cfg.max_step)
}

/// Integrates `y' = f(t, y)` from `t0` and samples the continuous extension at
/// each time in `grid` (sorted, `>= t0`). `stop` is checked on every accepted
/// step; when it fires, no samples from that step are emitted.
pub fn dopri5<F, S>(
    f: F,
    t0: f64,
    y0: DVector<f64>,
    grid: &[f64],
    cfg: &IntegratorConfig,
    stop: S,
) -> Result<Integration>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    S: Fn(&DVector<f64>) -> bool,
{
    cfg.validate()?;
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|&g| g < t0) {
        return Err(Error::InvalidArgument(
            "sample grid must be sorted and start at or after t0".into(),
        ));
    }
    let mut out = Integration {
        samples: Vec::with_capacity(grid.len()),
        stopped: None,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut next = 0;
    while next < grid.len() && grid[next] == t0 {
        out.samples.push((t0, y0.clone()));
        next += 1;
    }
    let Some(&t_end) = grid.last() else {
        return Ok(out);
    };
    if next == grid.len() {
        return Ok(out);
    }

    let expo1 = 0.2 - BETA * 0.75;
    let facc1 = 1.0 / FAC1;
    let facc2 = 1.0 / FAC2;
    let mut facold: f64 = 1e-4;

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = initial_step(&f, t, &y, &k1, cfg);
    let mut reject = false;

    for _ in 0..MAX_STEPS {
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            warn!("step size underflow at t = {t}");
            out.stopped = Some((t, StopReason::StepUnderflow));
            return Ok(out);
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let y2 = &y + &k1 * (h * A21);
        let k2 = f(t + C2 * h, &y2);
        let y3 = &y + (&k1 * A31 + &k2 * A32) * h;
        let k3 = f(t + C3 * h, &y3);
        let y4 = &y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h;
        let k4 = f(t + C4 * h, &y4);
        let y5 = &y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h;
        let k5 = f(t + C5 * h, &y5);
        let y6 = &y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h;
        let k6 = f(t + h, &y6);
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(t + h, &y_new);
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;

        if !y_new.iter().all(|v| v.is_finite()) {
            // Too large a step into a blow-up; shrink and retry.
            out.rejected_steps += 1;
            h *= 0.25;
            reject = true;
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                out.stopped = Some((t, StopReason::NonFinite));
                return Ok(out);
            }
            continue;
        }

        let err = error_norm(&err_vec, &y, &y_new, cfg);
        let fac11 = err.powf(expo1);
        let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(facc2, facc1);
        let mut h_new = h / fac;

        if err <= 1.0 {
            facold = err.max(1e-4);
            out.accepted_steps += 1;
            if stop(&y_new) {
                out.stopped = Some((t, StopReason::BlowUp));
                return Ok(out);
            }
            let t_new = if last { t_end } else { t + h };

            if next < grid.len() && grid[next] <= t_new {
                let ydiff = &y_new - &y;
                let bspl = &k1 * h - &ydiff;
                let c3 = &ydiff - &k7 * h - &bspl;
                let c4 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
                while next < grid.len() && grid[next] <= t_new {
                    let ts = grid[next];
                    let value = if ts == t_new {
                        y_new.clone()
                    } else {
                        let theta = (ts - t) / h;
                        let theta1 = 1.0 - theta;
                        &y + (&ydiff + (&bspl + (&c3 + &c4 * theta1) * theta) * theta1) * theta
                    };
                    out.samples.push((ts, value));
                    next += 1;
                }
            }

            k1 = k7;
            y = y_new;
            t = t_new;
            if last || next >= grid.len() {
                debug!(
                    "dopri5 finished at t = {t}: {} accepted, {} rejected",
                    out.accepted_steps, out.rejected_steps
                );
                return Ok(out);
            }
            if reject {
                h_new = h_new.min(h);
            }
            h = h_new.min(cfg.max_step);
            reject = false;
        } else {
            h_new = h / facc1.min(fac11 / SAFE);
            out.rejected_steps += 1;
            reject = true;
            h = h_new;
        }
    }
    Err(Error::InvalidArgument(format!(
        "integration exceeded {MAX_STEPS} steps"
    )))
}

fn upper_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn sym_from(n: usize, v: &[f64]) -> SymmetricMatrix {
    SymmetricMatrix::from_upper_triangle(n, v)
}

/// Integrates the DRE from `p0`, sampling on `grid`. Returns the trace and the
/// time of the last accepted step if integration stopped early.
pub fn rk45_dre(
    sys: &LinearSystem,
    p0: &SymmetricMatrix,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(SolveTrace, Option<f64>)> {
    let n = sys.n();
    if p0.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "initial condition",
            expected: n,
            found: p0.dim(),
        });
    }
    let rhs = |_: f64, y: &DVector<f64>| -> DVector<f64> {
        let p = sym_from(n, y.as_slice());
        DVector::from_vec(sys.riccati_rhs(&p).upper_triangle())
    };
    let threshold = cfg.blow_up_threshold;
    let stop = |y: &DVector<f64>| spectral_norm(sym_from(n, y.as_slice()).as_matrix()) > threshold;
    let y0 = DVector::from_vec(p0.upper_triangle());
    let run = dopri5(rhs, 0.0, y0, grid, cfg, stop)?;

    let samples = run
        .samples
        .iter()
        .map(|(t, y)| (*t, sym_from(n, y.as_slice())))
        .collect::<Vec<_>>();
    let truncated = run.stopped.is_some();
    Ok((
        SolveTrace {
            p0: p0.clone(),
            samples,
            method: Method::Rk45,
            truncated_at_escape: truncated,
        },
        run.stopped.map(|(t, _)| t),
    ))
}

/// Integrates the block system for `Q_t` from `Q_0 = mu(M)`.
pub fn rk45_q_blocks(
    sys: &LinearSystem,
    basis: &BasisMatrix,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<(f64, BlockSym2n)>> {
    let q0 = mu(basis.m(), basis)?;
    rk45_q_blocks_from(sys, &q0, grid, cfg)
}

/// Block system `Q11' = DRE(Q11)`, `Q12' = (A + BB'Q11)'Q12`,
/// `Q22' = Q12' BB' Q12` from an arbitrary `q0`.
pub fn rk45_q_blocks_from(
    sys: &LinearSystem,
    q0: &BlockSym2n,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<(f64, BlockSym2n)>> {
    let n = sys.n();
    if q0.n() != n {
        return Err(Error::DimensionMismatch {
            context: "Q blocks",
            expected: n,
            found: q0.n(),
        });
    }
    let u = upper_len(n);
    let bbt = sys.bbt();
    let bbt = bbt.as_matrix();
    let unpack = |y: &[f64]| {
        let q11 = sym_from(n, &y[..u]);
        let q12 = Matrix::from_column_slice(n, n, &y[u..u + n * n]);
        let q22 = sym_from(n, &y[u + n * n..]);
        (q11, q12, q22)
    };
    let rhs = |_: f64, y: &DVector<f64>| -> DVector<f64> {
        let (q11, q12, _) = unpack(y.as_slice());
        let d11 = sys.riccati_rhs(&q11);
        let closed = sys.a() + bbt * q11.as_matrix();
        let d12 = closed.transpose() * &q12;
        let d22 = crate::matrix::symmetrize_unchecked(&(q12.transpose() * bbt * &q12));
        let mut out = d11.upper_triangle();
        out.extend_from_slice(d12.as_slice());
        out.extend(d22.upper_triangle());
        DVector::from_vec(out)
    };
    let threshold = cfg.blow_up_threshold;
    let stop = |y: &DVector<f64>| y.amax() > threshold;
    let mut y0 = q0.b11().upper_triangle();
    y0.extend_from_slice(q0.b12().as_slice());
    y0.extend(q0.b22().upper_triangle());
    let run = dopri5(rhs, 0.0, DVector::from_vec(y0), grid, cfg, stop)?;
    if let Some((t, reason)) = run.stopped {
        return Err(Error::InvalidArgument(format!(
            "block integration stopped at t = {t} ({reason:?})"
        )));
    }
    run.samples
        .iter()
        .map(|(t, y)| {
            let (q11, q12, q22) = unpack(y.as_slice());
            Ok((*t, BlockSym2n::new(q11, q12, q22)?))
        })
        .collect()
}

/// True iff the DRE solutions from `p_low <= p_high` stay ordered on the
/// common existence interval, checked on `samples` equispaced times in `(0, t_max]`.
pub fn monotonicity_check(
    sys: &LinearSystem,
    p_low: &SymmetricMatrix,
    p_high: &SymmetricMatrix,
    t_max: f64,
    samples: usize,
    cfg: &IntegratorConfig,
) -> Result<bool> {
    let gap = classify_definiteness(&(p_low - p_high), EPS_DEF);
    let band = EPS_DEF * gap.min_eig.abs().max(gap.max_eig.abs()).max(1.0);
    if gap.max_eig > band {
        return Err(Error::InvalidArgument(format!(
            "P0_low - P0_high must be negative semidefinite (max eigenvalue {:e})",
            gap.max_eig
        )));
    }
    if t_max.is_nan() || t_max <= 0.0 || samples == 0 {
        return Err(Error::InvalidArgument(
            "need t_max > 0 and at least one sample".into(),
        ));
    }
    let grid: Vec<f64> = (1..=samples)
        .map(|k| t_max * k as f64 / samples as f64)
        .collect();
    let (low, _) = rk45_dre(sys, p_low, &grid, cfg)?;
    let (high, _) = rk45_dre(sys, p_high, &grid, cfg)?;
    for ((_, a), (_, b)) in low.samples.iter().zip(high.samples.iter()) {
        let d = classify_definiteness(&(a - b), EPS_DEF);
        let band = EPS_DEF * d.min_eig.abs().max(d.max_eig.abs()).max(1.0);
        // Integration error is relative to the solution size.
        let size = max_abs(a.as_matrix()).max(max_abs(b.as_matrix()));
        let slack = band.max(1e-8 * size);
        if d.max_eig > slack {
            return Ok(false);
        }
    }
    Ok(true)
}
