//! The linear system `(A, B, C)`, its Hamiltonian, controllability, and the
//! choice of basis matrix `M` from the stabilizing ARE solution.

use log::debug;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{
    classify_definiteness, general_eigenvalues, inverse, inverse_sym, is_finite, max_abs, one_norm,
    spectral_norm, symmetrize, Matrix, SymmetricMatrix, EPS_DEF,
};

/// Relative singular-value cutoff for the controllability rank test.
pub const CONTROLLABILITY_TOL: f64 = 1e-9;

pub const DEFAULT_MARGIN: f64 = 1.0;
const MARGIN_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl LinearSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        if n == 0 || b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "system dimensions must be positive".into(),
            ));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "rows of B",
                expected: n,
                found: b.nrows(),
            });
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "columns of C",
                expected: n,
                found: c.ncols(),
            });
        }
        if !(is_finite(&a) && is_finite(&b) && is_finite(&c)) {
            return Err(Error::NonFinite);
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `BB'`
    pub fn bbt(&self) -> SymmetricMatrix {
        crate::matrix::symmetrize_unchecked(&(&self.b * self.b.transpose()))
    }

    /// `C'C`
    pub fn ctc(&self) -> SymmetricMatrix {
        crate::matrix::symmetrize_unchecked(&(self.c.transpose() * &self.c))
    }

    /// Right-hand side of the DRE, `A'P + PA + PBB'P + C'C`.
    pub fn riccati_rhs(&self, p: &SymmetricMatrix) -> SymmetricMatrix {
        let pm = p.as_matrix();
        let ap = self.a.transpose() * pm;
        let quad = pm * self.bbt().as_matrix() * pm;
        crate::matrix::symmetrize_unchecked(&(&ap + ap.transpose() + quad + self.ctc().as_matrix()))
    }
}

/// `[[-A, -BB'], [C'C, A']]`
pub fn hamiltonian(sys: &LinearSystem) -> Matrix {
    let a = sys.a();
    crate::matrix::assemble_2x2(
        &(-a),
        &(-sys.bbt().as_matrix()),
        sys.ctc().as_matrix(),
        &a.transpose(),
    )
}

/// `[B, AB, ..., A^{n-1}B]`
pub fn controllability_matrix(sys: &LinearSystem) -> Matrix {
    let (n, m) = (sys.n(), sys.m());
    let mut out = Matrix::zeros(n, n * m);
    let mut block = sys.b().clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = sys.a() * block;
    }
    out
}

/// Rank test on the controllability matrix with cutoff `tol * sigma_max`.
pub fn is_controllable(sys: &LinearSystem, tol: f64) -> bool {
    let sv = controllability_matrix(sys)
        .svd(false, false)
        .singular_values;
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return false;
    }
    sv.iter().filter(|&&s| s > tol * sigma_max).count() == sys.n()
}

/// Residual `A'X + XA + XBB'X + C'C` of the algebraic Riccati equation.
pub fn are_residual(sys: &LinearSystem, x: &SymmetricMatrix) -> SymmetricMatrix {
    sys.riccati_rhs(x)
}

/// Stabilizing solution `M0` of `0 = A'M0 + M0 A + M0 BB' M0 + C'C`, i.e. the
/// solution with `A + BB'M0` Hurwitz.
///
/// The stable invariant subspace of `[[A, BB'], [-C'C, -A']]` is extracted with
/// the matrix sign function, then polished with Newton steps.
pub fn solve_are_stabilizing(sys: &LinearSystem) -> Result<SymmetricMatrix> {
    let n = sys.n();
    let g = sys.bbt();
    let q = sys.ctc();
    let z = crate::matrix::assemble_2x2(
        sys.a(),
        g.as_matrix(),
        &(-q.as_matrix()),
        &(-sys.a().transpose()),
    );

    // Best-effort early rejection; the sign iteration and the final Hurwitz
    // test catch whatever a non-converged Schur form lets through.
    let scale = one_norm(&z).max(1.0);
    if let Some(eigs) = general_eigenvalues(&z) {
        for ev in &eigs {
            if ev.re.abs() <= 1e-7 * scale {
                return Err(Error::NoStabilizingSolution {
                    reason: format!("Hamiltonian eigenvalue {ev} lies on the imaginary axis"),
                });
            }
        }
    }

    let w = matrix_sign(&z)?;
    let ident = Matrix::identity(n, n);
    let w11 = w.view((0, 0), (n, n));
    let w12 = w.view((0, n), (n, n));
    let w21 = w.view((n, 0), (n, n));
    let w22 = w.view((n, n), (n, n));
    // The stable subspace is ker(W + I); [I; X] spans it.
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &ident));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &ident)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let svd = lhs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin < 1e-12 * smax {
        return Err(Error::NoStabilizingSolution {
            reason: "stable subspace basis is rank deficient".into(),
        });
    }
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::NoStabilizingSolution {
            reason: e.to_string(),
        })?;
    let mut x = symmetrize(&x)?;

    for _ in 0..3 {
        let res = are_residual(sys, &x);
        let res_norm = max_abs(res.as_matrix());
        if res_norm <= 1e-14 * max_abs(q.as_matrix()).max(1.0) {
            break;
        }
        let closed = sys.a() + g.as_matrix() * x.as_matrix();
        let delta = solve_lyapunov(&closed, &(-res.as_matrix()))?;
        let candidate = &x + &symmetrize(&delta)?;
        if max_abs(are_residual(sys, &candidate).as_matrix()) < res_norm {
            x = candidate;
        } else {
            break;
        }
    }

    let closed = sys.a() + g.as_matrix() * x.as_matrix();
    if !is_hurwitz(&closed) {
        return Err(Error::NoStabilizingSolution {
            reason: "A + BB'M0 is not Hurwitz".into(),
        });
    }
    debug!(
        "ARE solved: residual {:e}",
        max_abs(are_residual(sys, &x).as_matrix())
    );
    Ok(x)
}

/// Newton iteration for sign(Z) with determinant scaling.
fn matrix_sign(z: &Matrix) -> Result<Matrix> {
    let dim = z.nrows() as f64;
    let mut cur = z.clone();
    let mut scaling = true;
    for _ in 0..100 {
        let c = if scaling {
            let det = cur.determinant().abs();
            if det > 0.0 && det.is_finite() {
                det.powf(-1.0 / dim)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let scaled = &cur * c;
        let inv = inverse(&scaled).map_err(|_| Error::NoStabilizingSolution {
            reason: "sign iteration hit a singular iterate".into(),
        })?;
        let next = (scaled + inv) * 0.5;
        let change = one_norm(&(&next - &cur)) / one_norm(&next);
        cur = next;
        if change < 1e-2 {
            scaling = false;
        }
        if change <= 1e-14 {
            return Ok(cur);
        }
    }
    Err(Error::NoStabilizingSolution {
        reason: "matrix sign iteration did not converge".into(),
    })
}

/// Solves `F'X + XF = R` through the Kronecker form.
/// Lyapunov test: `F` is Hurwitz iff `F'X + XF = -I` has a positive definite
/// solution. A huge `X` means an eigenvalue within about `1e-7 * |F|` of the
/// imaginary axis, which is rejected as marginal.
pub fn is_hurwitz(f: &Matrix) -> bool {
    if !f.is_square() || f.nrows() == 0 || !is_finite(f) {
        return false;
    }
    let n = f.nrows();
    let Ok(x) = solve_lyapunov(f, &(-Matrix::identity(n, n))) else {
        return false;
    };
    let Ok(x) = symmetrize(&x) else {
        return false;
    };
    let eig = x.eigenvalues();
    let bound = 1.0 / (2.0 * 1e-7 * spectral_norm(f).max(1.0));
    eig[0] > 0.0 && eig[n - 1] <= bound
}

/// Solves `F'X + XF = R` through its Kronecker form.
pub fn solve_lyapunov(f: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = f.nrows();
    let ident = Matrix::identity(n, n);
    let ft = f.transpose();
    let op = ident.kronecker(&ft) + ft.kronecker(&ident);
    let rhs = nalgebra::DVector::from_column_slice(r.as_slice());
    let sol = op.lu().solve(&rhs).ok_or(Error::SingularMatrix {
        sigma_min: 0.0,
        sigma_max: 0.0,
    })?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// The basis matrix `M` of the semiconvex transform, with its inverse cached.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    m: SymmetricMatrix,
    m_inv: SymmetricMatrix,
    m0: Option<SymmetricMatrix>,
}

impl BasisMatrix {
    /// Validates a user-supplied `M`: it must be invertible and, when the
    /// stabilizing ARE solution `m0` is known, satisfy `M - M0 < 0`.
    pub fn from_user(m: SymmetricMatrix, m0: Option<SymmetricMatrix>) -> Result<Self> {
        let m_inv = inverse_sym(&m).map_err(|_| Error::InvalidUserBasis {
            reason: "M is not invertible".into(),
        })?;
        if let Some(m0) = &m0 {
            if m0.dim() != m.dim() {
                return Err(Error::DimensionMismatch {
                    context: "M0 vs M",
                    expected: m.dim(),
                    found: m0.dim(),
                });
            }
            let gap = classify_definiteness(&(&m - m0), EPS_DEF);
            if !gap.is_negative_definite() {
                return Err(Error::InvalidUserBasis {
                    reason: format!(
                        "M - M0 is not negative definite (max eigenvalue {:e})",
                        gap.max_eig
                    ),
                });
            }
        }
        Ok(Self { m, m_inv, m0 })
    }

    /// Validates a user-supplied `M` against the system, computing `M0` when a
    /// stabilizing solution exists. Without one only invertibility is checked.
    pub fn from_user_for_system(m: SymmetricMatrix, sys: &LinearSystem) -> Result<Self> {
        if m.dim() != sys.n() {
            return Err(Error::DimensionMismatch {
                context: "basis M",
                expected: sys.n(),
                found: m.dim(),
            });
        }
        let m0 = solve_are_stabilizing(sys).ok();
        Self::from_user(m, m0)
    }

    pub fn m(&self) -> &SymmetricMatrix {
        &self.m
    }

    pub fn m_inv(&self) -> &SymmetricMatrix {
        &self.m_inv
    }

    pub fn m0(&self) -> Option<&SymmetricMatrix> {
        self.m0.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }
}

/// `M = M0 - c I` starting from `c = margin`, growing `c` by 10% while `M` is
/// numerically singular.
pub fn select_basis(sys: &LinearSystem, margin: f64) -> Result<BasisMatrix> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let m0 = solve_are_stabilizing(sys)?;
    basis_below(&m0, margin)
}

pub(crate) fn basis_below(m0: &SymmetricMatrix, margin: f64) -> Result<BasisMatrix> {
    let n = m0.dim();
    let mut c = margin;
    for _ in 0..=MARGIN_ATTEMPTS {
        let m = m0 - &SymmetricMatrix::scaled_identity(n, c);
        let eig = m.eigenvalues();
        let min_abs = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        let scale = eig.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if min_abs > EPS_DEF * scale {
            return BasisMatrix::from_user(m, Some(m0.clone()));
        }
        c *= 1.1;
    }
    Err(Error::InvalidUserBasis {
        reason: format!("no invertible M0 - cI found starting from margin {margin}"),
    })
}
