//! Dense real matrix primitives.
//!
//! General matrices are plain `nalgebra::DMatrix<f64>`. Symmetric matrices get
//! their own type so that exact symmetry is established once, at construction,
//! by averaging `(X + X')/2`, and then preserved by the arithmetic below.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Band around zero used for definiteness decisions, relative to `max(1, max|eig|)`.
pub const EPS_DEF: f64 = 1e-9;

/// Relative singular-value cutoff below which `inverse` reports singularity.
pub const EPS_RANK: f64 = 1e-13;

#[derive(Clone, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    /// Symmetrizes `m` by averaging it with its transpose.
    pub fn new(m: Matrix) -> Result<Self> {
        symmetrize(&m)
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "SymmetricMatrix::from_row_slice",
                expected: n * n,
                found: data.len(),
            });
        }
        symmetrize(&Matrix::from_row_slice(n, n, data))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self(Matrix::identity(n, n) * s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(Matrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(diag),
        ))
    }

    /// Rebuilds a matrix from its upper triangle, listed row-major.
    pub fn from_upper_triangle(n: usize, upper: &[f64]) -> Self {
        debug_assert_eq!(upper.len(), n * (n + 1) / 2);
        let mut m = Matrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = upper[idx];
                m[(j, i)] = upper[idx];
                idx += 1;
            }
        }
        Self(m)
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eig: Vec<f64> = self
            .0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        eig.sort_by(|a, b| a.total_cmp(b));
        eig
    }

    pub fn min_eig(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eig(&self) -> f64 {
        *self.eigenvalues().last().expect("dimension is positive")
    }

    /// `X' S X`, symmetric for any conforming `X`.
    pub fn congruence(&self, x: &Matrix) -> SymmetricMatrix {
        let m = x.transpose() * &self.0 * x;
        symmetrize_unchecked(&m)
    }

    pub fn max_abs_diff(&self, other: &SymmetricMatrix) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }

    pub fn scale(&self, s: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * s)
    }
}

impl fmt::Debug for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricMatrix{}", self.0)
    }
}

impl Add for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn add(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn sub(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn neg(self) -> SymmetricMatrix {
        SymmetricMatrix(-&self.0)
    }
}

impl Mul<f64> for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn mul(self, rhs: f64) -> SymmetricMatrix {
        self.scale(rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefinitenessClass {
    PositiveDefinite,
    NegativeDefinite,
    PositiveSemidefinite,
    NegativeSemidefinite,
    Indefinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Definiteness {
    pub class: DefinitenessClass,
    pub min_eig: f64,
    pub max_eig: f64,
}

impl Definiteness {
    pub fn is_positive_definite(&self) -> bool {
        self.class == DefinitenessClass::PositiveDefinite
    }

    pub fn is_negative_definite(&self) -> bool {
        self.class == DefinitenessClass::NegativeDefinite
    }
}

/// Returns `(X + X')/2`.
pub fn symmetrize(x: &Matrix) -> Result<SymmetricMatrix> {
    if !x.is_square() {
        return Err(Error::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if !is_finite(x) {
        return Err(Error::NonFinite);
    }
    Ok(symmetrize_unchecked(x))
}

pub(crate) fn symmetrize_unchecked(x: &Matrix) -> SymmetricMatrix {
    SymmetricMatrix((x + x.transpose()) * 0.5)
}

/// Eigenvalue-based classification. The zero band is `tol * max(1, max|eig|)`.
pub fn classify_definiteness(s: &SymmetricMatrix, tol: f64) -> Definiteness {
    let eig = s.eigenvalues();
    let min_eig = eig[0];
    let max_eig = *eig.last().unwrap();
    let band = tol * 1f64.max(min_eig.abs()).max(max_eig.abs());
    let class = if min_eig > band {
        DefinitenessClass::PositiveDefinite
    } else if max_eig < -band {
        DefinitenessClass::NegativeDefinite
    } else if min_eig >= -band {
        DefinitenessClass::PositiveSemidefinite
    } else if max_eig <= band {
        DefinitenessClass::NegativeSemidefinite
    } else {
        DefinitenessClass::Indefinite
    };
    Definiteness {
        class,
        min_eig,
        max_eig,
    }
}

/// Singular values as `(min, max)`.
pub fn singular_value_range(x: &Matrix) -> (f64, f64) {
    let sv = x.clone().svd(false, false).singular_values;
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sv.iter().copied().fold(0.0, f64::max);
    (min, max)
}

/// Eigenvalues of a general square matrix from a real Schur form, or `None`
/// when the QR iteration fails to converge (nalgebra's unbounded variant can
/// loop forever on some Hamiltonian matrices).
pub fn general_eigenvalues(x: &Matrix) -> Option<Vec<Complex<f64>>> {
    let schur = Schur::try_new(x.clone(), f64::EPSILON, 10_000)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn inverse(x: &Matrix) -> Result<Matrix> {
    if !x.is_square() {
        return Err(Error::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if !is_finite(x) {
        return Err(Error::NonFinite);
    }
    let (sigma_min, sigma_max) = singular_value_range(x);
    if sigma_max == 0.0 || sigma_min < EPS_RANK * sigma_max {
        return Err(Error::SingularMatrix {
            sigma_min,
            sigma_max,
        });
    }
    x.clone().lu().try_inverse().ok_or(Error::SingularMatrix {
        sigma_min,
        sigma_max,
    })
}

/// Inverse of a symmetric matrix, returned symmetric.
pub fn inverse_sym(s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    inverse(s.as_matrix()).map(|m| symmetrize_unchecked(&m))
}

/// Moore–Penrose pseudo-inverse through the symmetric eigendecomposition.
///
/// Eigenvalues with `|λ| <= rank_tol * max|λ|` are treated as zero; the default
/// cutoff is `dim * f64::EPSILON`.
pub fn pseudo_inverse(s: &SymmetricMatrix, rank_tol: Option<f64>) -> SymmetricMatrix {
    let n = s.dim();
    let rank_tol = rank_tol.unwrap_or(n as f64 * f64::EPSILON);
    let eig = s.as_matrix().clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rank_tol * scale;
    let inv_diag = eig.eigenvalues.map(|l| {
        if l.abs() <= cutoff || l == 0.0 {
            0.0
        } else {
            1.0 / l
        }
    });
    let v = &eig.eigenvectors;
    let m = v * Matrix::from_diagonal(&inv_diag) * v.transpose();
    symmetrize_unchecked(&m)
}

/// Principal square root of a positive semidefinite matrix.
pub fn sqrtm_spd(s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = s.as_matrix().clone().symmetric_eigen();
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if min_eig < -EPS_DEF * scale {
        return Err(Error::NotPsd { min_eig });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let m = v * Matrix::from_diagonal(&root) * v.transpose();
    Ok(symmetrize_unchecked(&m))
}

// Padé coefficients b_0..b_m for m = 3, 5, 7, 9, 13.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm thresholds below which the degree-m approximant is accurate to unit roundoff.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539_398_330_063_23e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a Padé approximant
/// (degree chosen from the 1-norm, degree 13 for large norms).
pub fn expm(x: &Matrix) -> Result<Matrix> {
    if !x.is_square() {
        return Err(Error::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if !is_finite(x) {
        return Err(Error::NonFinite);
    }
    let n = x.nrows();
    let ident = Matrix::identity(n, n);
    let norm1 = one_norm(x);

    for (theta, coeffs) in [
        (THETA3, &PADE3[..]),
        (THETA5, &PADE5[..]),
        (THETA7, &PADE7[..]),
        (THETA9, &PADE9[..]),
    ] {
        if norm1 <= theta {
            let (u, v) = pade_low(x, coeffs, &ident);
            return solve_pade(&u, &v);
        }
    }

    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = x * 2f64.powi(-s);
    let (u, v) = pade13(&scaled, &ident);
    let mut r = solve_pade(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(x: &Matrix, b: &[f64], ident: &Matrix) -> (Matrix, Matrix) {
    let x2 = x * x;
    let m = b.len() - 1;
    // U = X * sum_{k odd} b_k X^{k-1}, V = sum_{k even} b_k X^k
    let mut u_poly = ident * b[1];
    let mut v = ident * b[0];
    let mut pow = ident.clone();
    let mut k = 2;
    while k <= m {
        pow = &pow * &x2;
        v += &pow * b[k];
        if k < m {
            u_poly += &pow * b[k + 1];
        }
        k += 2;
    }
    (x * u_poly, v)
}

fn pade13(x: &Matrix, ident: &Matrix) -> (Matrix, Matrix) {
    let b = &PADE13;
    let x2 = x * x;
    let x4 = &x2 * &x2;
    let x6 = &x2 * &x4;
    let u_inner = &x6 * (&x6 * b[13] + &x4 * b[11] + &x2 * b[9])
        + &x6 * b[7]
        + &x4 * b[5]
        + &x2 * b[3]
        + ident * b[1];
    let u = x * u_inner;
    let v = &x6 * (&x6 * b[12] + &x4 * b[10] + &x2 * b[8])
        + &x6 * b[6]
        + &x4 * b[4]
        + &x2 * b[2]
        + ident * b[0];
    (u, v)
}

fn solve_pade(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(Error::SingularMatrix {
        sigma_min: 0.0,
        sigma_max: 0.0,
    })
}

pub fn one_norm(x: &Matrix) -> f64 {
    x.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(x: &Matrix) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest singular value.
pub fn spectral_norm(x: &Matrix) -> f64 {
    singular_value_range(x).1
}

pub fn is_finite(x: &Matrix) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// The `n x n` block at block position `(bi, bj)` of a `2n x 2n` matrix.
pub fn block(x: &Matrix, bi: usize, bj: usize) -> Matrix {
    let n = x.nrows() / 2;
    x.view((bi * n, bj * n), (n, n)).into_owned()
}

pub fn assemble_2x2(b11: &Matrix, b12: &Matrix, b21: &Matrix, b22: &Matrix) -> Matrix {
    let n = b11.nrows();
    let mut out = Matrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(b11);
    out.view_mut((0, n), (n, n)).copy_from(b12);
    out.view_mut((n, 0), (n, n)).copy_from(b21);
    out.view_mut((n, n), (n, n)).copy_from(b22);
    out
}
