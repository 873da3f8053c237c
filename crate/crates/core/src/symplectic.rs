//! Classical symplectic fundamental solution `Sigma_t = exp(H t)` and the
//! particular solutions `P_t = Y_t X_t^{-1}` it generates.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::matrix::{
    block, expm, inverse, singular_value_range, symmetrize_unchecked, Matrix, SymmetricMatrix,
};
use crate::solver::{EscapeReport, EscapeVerdict};
use crate::system::{hamiltonian, LinearSystem};

/// `X_t` is declared singular when `sigma_min < SINGULAR_RATIO * sigma_max`.
pub const SINGULAR_RATIO: f64 = 1e-8;

const REFINE_ITERATIONS: usize = 40;

#[derive(Debug)]
pub struct SymplecticFlow {
    sys: LinearSystem,
    ham: Matrix,
    cache: Mutex<BTreeMap<u64, Matrix>>,
}

impl Clone for SymplecticFlow {
    fn clone(&self) -> Self {
        Self {
            sys: self.sys.clone(),
            ham: self.ham.clone(),
            cache: Mutex::new(self.cache.lock().expect("cache lock poisoned").clone()),
        }
    }
}

impl SymplecticFlow {
    pub fn new(sys: LinearSystem) -> Self {
        let ham = hamiltonian(&sys);
        Self {
            sys,
            ham,
            cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn hamiltonian(&self) -> &Matrix {
        &self.ham
    }

    /// `exp(H t)`, cached per `t`.
    pub fn sigma_at(&self, t: f64) -> Result<Matrix> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time must be nonnegative, got {t}"
            )));
        }
        let key = t.to_bits();
        if let Some(s) = self.cache.lock().expect("cache lock poisoned").get(&key) {
            return Ok(s.clone());
        }
        let s = expm(&(&self.ham * t))?;
        self.cache
            .lock()
            .expect("cache lock poisoned")
            .insert(key, s.clone());
        Ok(s)
    }

    /// `(X_t, Y_t) = (Sigma11 + Sigma12 P0, Sigma21 + Sigma22 P0)`.
    fn xy(&self, p0: &SymmetricMatrix, t: f64) -> Result<(Matrix, Matrix)> {
        let n = self.sys.n();
        if p0.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "initial condition",
                expected: n,
                found: p0.dim(),
            });
        }
        let sigma = self.sigma_at(t)?;
        let p = p0.as_matrix();
        let x = block(&sigma, 0, 0) + block(&sigma, 0, 1) * p;
        let y = block(&sigma, 1, 0) + block(&sigma, 1, 1) * p;
        Ok((x, y))
    }

    /// `P_t = Y_t X_t^{-1}`, symmetrized.
    pub fn solve_symplectic(&self, p0: &SymmetricMatrix, t: f64) -> Result<SymmetricMatrix> {
        let (x, y) = self.xy(p0, t)?;
        let (smin, smax) = singular_value_range(&x);
        if smin < SINGULAR_RATIO * smax {
            return Err(Error::EscapeEncountered { t });
        }
        let x_inv = inverse(&x).map_err(|_| Error::EscapeEncountered { t })?;
        let p = y * x_inv;
        if !crate::matrix::is_finite(&p) {
            return Err(Error::EscapeEncountered { t });
        }
        Ok(symmetrize_unchecked(&p))
    }

    /// One invertibility test on `X_t`: returns `(sigma ratio, det sign, singular)`.
    fn invertibility_test(&self, p0: &SymmetricMatrix, t: f64) -> Result<(f64, f64, bool)> {
        let (x, _) = self.xy(p0, t)?;
        let (smin, smax) = singular_value_range(&x);
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        let det = x.determinant();
        Ok((ratio, det.signum(), ratio < SINGULAR_RATIO))
    }

    /// Tests invertibility of `X_s` at every `s = k dt <= t_max`. The trace
    /// records `sigma_min / sigma_max` of `X_s`.
    pub fn escape_scan(
        &self,
        p0: &SymmetricMatrix,
        t_max: f64,
        dt: f64,
        refine: bool,
    ) -> Result<EscapeReport> {
        if !(t_max > 0.0 && dt > 0.0 && dt <= t_max) {
            return Err(Error::InvalidArgument(format!(
                "escape scan needs 0 < dt <= t_max, got dt = {dt}, t_max = {t_max}"
            )));
        }
        let steps = grid_steps(t_max, dt);
        let mut report = EscapeReport::new(p0.clone());
        let mut prev_sign = 1.0;
        for k in 1..=steps {
            let t = k as f64 * dt;
            let (ratio, sign, singular) = self.invertibility_test(p0, t)?;
            report.tests_performed += 1;
            report.trace.push((t, ratio));
            if singular || sign != prev_sign {
                let lo = (k - 1) as f64 * dt;
                report.escape_bracket = Some((lo, t));
                report.verdict = EscapeVerdict::EscapeInBracket;
                if refine {
                    report.refined_bracket = Some(self.bisect(p0, lo, t, prev_sign)?);
                }
                return Ok(report);
            }
            prev_sign = sign;
        }
        report.verdict = EscapeVerdict::NoEscapeWithinHorizon;
        Ok(report)
    }

    fn bisect(
        &self,
        p0: &SymmetricMatrix,
        mut lo: f64,
        mut hi: f64,
        sign_lo: f64,
    ) -> Result<(f64, f64)> {
        for _ in 0..REFINE_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (_, sign, singular) = self.invertibility_test(p0, mid)?;
            if singular || sign != sign_lo {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok((lo, hi))
    }
}

/// Number of grid points `k dt` in `(0, t_max]`, tolerant of rounding in `t_max / dt`.
pub(crate) fn grid_steps(t_max: f64, dt: f64) -> usize {
    let r = t_max / dt;
    let k = r.round();
    if (r - k).abs() <= 1e-9 * r.max(1.0) {
        k as usize
    } else {
        r.floor() as usize
    }
}
