//! Matrix maps induced by the semiconvex transform on quadratic functions.
//!
//! `mu` builds the basis-function Hessian, `upsilon` maps a Hessian to its
//! dual, `xi` maps the symplectic fundamental solution to the Hessian `Q_t` of
//! the value function, and `pi` relates `Q_t` to the kernel Hessian `Lambda_t`.

use crate::error::{Error, Result};
use crate::matrix::{
    assemble_2x2, block, classify_definiteness, inverse, is_finite, max_abs, symmetrize_unchecked,
    Matrix, SymmetricMatrix, EPS_DEF,
};
use crate::system::BasisMatrix;

/// Relative asymmetry tolerated in computed blocks before they are symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-6;

/// Symmetric `2n x 2n` matrix stored as its `11`, `12`, and `22` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSym2n {
    b11: SymmetricMatrix,
    b12: Matrix,
    b22: SymmetricMatrix,
}

impl BlockSym2n {
    pub fn new(b11: SymmetricMatrix, b12: Matrix, b22: SymmetricMatrix) -> Result<Self> {
        let n = b11.dim();
        if b22.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "22 block",
                expected: n,
                found: b22.dim(),
            });
        }
        if b12.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                context: "12 block",
                expected: n,
                found: if b12.nrows() != n {
                    b12.nrows()
                } else {
                    b12.ncols()
                },
            });
        }
        if !(is_finite(b11.as_matrix()) && is_finite(&b12) && is_finite(b22.as_matrix())) {
            return Err(Error::NonFinite);
        }
        Ok(Self { b11, b12, b22 })
    }

    /// Splits a full `2n x 2n` matrix, symmetrizing it first.
    pub fn from_full(x: &Matrix) -> Result<Self> {
        if !x.is_square() || !x.nrows().is_multiple_of(2) || x.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "expected an even-sized square matrix, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        let s = crate::matrix::symmetrize(x)?;
        let s = s.as_matrix();
        Self::new(
            symmetrize_unchecked(&block(s, 0, 0)),
            block(s, 0, 1),
            symmetrize_unchecked(&block(s, 1, 1)),
        )
    }

    pub fn n(&self) -> usize {
        self.b11.dim()
    }

    pub fn b11(&self) -> &SymmetricMatrix {
        &self.b11
    }

    pub fn b12(&self) -> &Matrix {
        &self.b12
    }

    pub fn b21(&self) -> Matrix {
        self.b12.transpose()
    }

    pub fn b22(&self) -> &SymmetricMatrix {
        &self.b22
    }

    pub fn assemble(&self) -> Matrix {
        assemble_2x2(
            self.b11.as_matrix(),
            &self.b12,
            &self.b12.transpose(),
            self.b22.as_matrix(),
        )
    }

    pub fn max_abs_diff(&self, other: &BlockSym2n) -> f64 {
        crate::matrix::max_abs_diff(&self.assemble(), &other.assemble())
    }
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Symmetrizes `x`, rejecting relative asymmetry above [`SYMMETRY_TOL`].
fn symmetric_block(op: &'static str, x: &Matrix) -> Result<SymmetricMatrix> {
    let deviation = max_abs(&(x - x.transpose()));
    if deviation > SYMMETRY_TOL * max_abs(x).max(1.0) {
        return Err(Error::SymmetryViolation { op, deviation });
    }
    Ok(symmetrize_unchecked(x))
}

/// Inverse of a block that the caller has already shown to be definite.
fn definite_inverse(op: &'static str, x: &SymmetricMatrix) -> Result<Matrix> {
    inverse(x.as_matrix()).map_err(|e| Error::DomainViolation {
        op,
        reason: e.to_string(),
    })
}

/// `[[P, -M], [-M, M]]`
pub fn mu(p: &SymmetricMatrix, basis: &BasisMatrix) -> Result<BlockSym2n> {
    check_dim("mu", basis.dim(), p.dim())?;
    let m = basis.m();
    BlockSym2n::new(p.clone(), -m.as_matrix(), m.clone())
}

/// `-M - M (P - M)^{-1} M`, defined for `P - M > 0`.
pub fn upsilon(p: &SymmetricMatrix, basis: &BasisMatrix) -> Result<SymmetricMatrix> {
    check_dim("upsilon", basis.dim(), p.dim())?;
    let m = basis.m();
    let gap = p - m;
    let d = classify_definiteness(&gap, EPS_DEF);
    if !d.is_positive_definite() {
        return Err(Error::DomainViolation {
            op: "upsilon",
            reason: format!("P - M has min eigenvalue {:e}", d.min_eig),
        });
    }
    let inv = definite_inverse("upsilon", &gap)?;
    let mm = m.as_matrix();
    Ok(symmetrize_unchecked(&(-mm - mm * inv * mm)))
}

/// `M - M (P + M)^{-1} M`, defined for `P + M < 0`.
pub fn upsilon_inv(p: &SymmetricMatrix, basis: &BasisMatrix) -> Result<SymmetricMatrix> {
    check_dim("upsilon_inv", basis.dim(), p.dim())?;
    let m = basis.m();
    let sum = p + m;
    let d = classify_definiteness(&sum, EPS_DEF);
    if !d.is_negative_definite() {
        return Err(Error::DomainViolation {
            op: "upsilon_inv",
            reason: format!("P + M has max eigenvalue {:e}", d.max_eig),
        });
    }
    let inv = definite_inverse("upsilon_inv", &sum)?;
    let mm = m.as_matrix();
    Ok(symmetrize_unchecked(&(mm - mm * inv * mm)))
}

/// Maps a symplectic fundamental solution `Sigma` to the value Hessian `Q`.
pub fn xi(sigma: &Matrix, basis: &BasisMatrix) -> Result<BlockSym2n> {
    let n = basis.dim();
    check_dim("xi", 2 * n, sigma.nrows())?;
    check_dim("xi", 2 * n, sigma.ncols())?;
    let m = basis.m().as_matrix();
    let s11 = block(sigma, 0, 0);
    let s12 = block(sigma, 0, 1);
    let s21 = block(sigma, 1, 0);
    let s22 = block(sigma, 1, 1);

    let w = inverse(&(&s11 + &s12 * m)).map_err(|e| Error::DomainViolation {
        op: "xi",
        reason: format!("Sigma11 + Sigma12 M is singular: {e}"),
    })?;
    let s12m = &s12 * m;
    let b11 = (&s21 + &s22 * m) * &w;
    let b12 = &b11 * &s12m - &s22 * m;
    let b21 = -(m * &w);
    let b22 = -(m * &w * &s12m) + m;

    let deviation = max_abs(&(&b21 - b12.transpose()));
    if deviation > SYMMETRY_TOL * max_abs(&b12).max(1.0) {
        return Err(Error::SymmetryViolation {
            op: "xi",
            deviation,
        });
    }
    let b12 = (&b12 + b21.transpose()) * 0.5;
    BlockSym2n::new(
        symmetric_block("xi", &b11)?,
        b12,
        symmetric_block("xi", &b22)?,
    )
}

/// Inverse of [`xi`], defined when `Q21` is invertible.
pub fn xi_inv(q: &BlockSym2n, basis: &BasisMatrix) -> Result<Matrix> {
    check_dim("xi_inv", basis.dim(), q.n())?;
    let m = basis.m().as_matrix();
    let m_inv = basis.m_inv().as_matrix();
    let q11 = q.b11().as_matrix();
    let q12 = q.b12();
    let q22 = q.b22().as_matrix();
    let q21_inv = inverse(&q.b21()).map_err(|e| Error::DomainViolation {
        op: "xi_inv",
        reason: format!("Q21 is singular: {e}"),
    })?;

    let x11 = -(&q21_inv * q22);
    let x12 = -(&q21_inv * (m - q22) * m_inv);
    let x21 = q11 * &x11 + q12;
    let x22 = q11 * &x12 - q12 * m_inv;
    Ok(assemble_2x2(&x11, &x12, &x21, &x22))
}

/// Maps a kernel Hessian `Lambda` to the value Hessian `Q`; needs `Lambda22 + M < 0`.
pub fn pi(lambda: &BlockSym2n, basis: &BasisMatrix) -> Result<BlockSym2n> {
    check_dim("pi", basis.dim(), lambda.n())?;
    let m = basis.m();
    let sum = lambda.b22() + m;
    let d = classify_definiteness(&sum, EPS_DEF);
    if !d.is_negative_definite() {
        return Err(Error::DomainViolation {
            op: "pi",
            reason: format!("Lambda22 + M has max eigenvalue {:e}", d.max_eig),
        });
    }
    let v = definite_inverse("pi", &sum)?;
    let mm = m.as_matrix();
    let l12 = lambda.b12();
    let b11 = lambda.b11().as_matrix() - l12 * &v * l12.transpose();
    let b12 = l12 * &v * mm;
    let b22 = mm - mm * &v * mm;
    BlockSym2n::new(
        symmetric_block("pi", &b11)?,
        b12,
        symmetric_block("pi", &b22)?,
    )
}

/// Inverse of [`pi`]; needs `Q22 - M > 0`.
pub fn pi_inv(q: &BlockSym2n, basis: &BasisMatrix) -> Result<BlockSym2n> {
    check_dim("pi_inv", basis.dim(), q.n())?;
    let m = basis.m();
    let gap = q.b22() - m;
    let d = classify_definiteness(&gap, EPS_DEF);
    if !d.is_positive_definite() {
        return Err(Error::DomainViolation {
            op: "pi_inv",
            reason: format!("Q22 - M has min eigenvalue {:e}", d.min_eig),
        });
    }
    let u = -definite_inverse("pi_inv", &gap)?;
    let mm = m.as_matrix();
    let q12 = q.b12();
    let b11 = q.b11().as_matrix() + q12 * &u * q12.transpose();
    let b12 = q12 * &u * mm;
    let b22 = mm * &u * mm - mm;
    BlockSym2n::new(
        symmetric_block("pi_inv", &b11)?,
        b12,
        symmetric_block("pi_inv", &b22)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_basis(m: f64) -> BasisMatrix {
        BasisMatrix::from_user(SymmetricMatrix::from_diagonal(&[m]), None).unwrap()
    }

    fn sym1(v: f64) -> SymmetricMatrix {
        SymmetricMatrix::from_diagonal(&[v])
    }

    fn example_basis() -> BasisMatrix {
        BasisMatrix::from_user(
            SymmetricMatrix::from_row_slice(2, &[-1.0, -0.2, -0.2, -1.0]).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn mu_examples() {
        let basis = scalar_basis(-1.0);
        let q = mu(&sym1(2.0), &basis).unwrap();
        assert_eq!(
            q.assemble(),
            Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, -1.0])
        );

        let basis = example_basis();
        let q0 = mu(basis.m(), &basis).unwrap();
        let m = basis.m().as_matrix();
        assert_eq!(q0.assemble(), assemble_2x2(m, &-m, &-m, m));

        let q = mu(&SymmetricMatrix::from_diagonal(&[2.0, 6.5]), &basis).unwrap();
        let full = q.assemble();
        assert_eq!(full, full.transpose());
        assert!(matches!(
            mu(&sym1(1.0), &basis),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn upsilon_scalar_formulas() {
        let basis = scalar_basis(-1.0);
        // -m - m^2/(p - m) and m - m^2/(p + m), evaluated directly
        let oracle_up = |p: f64, m: f64| -m - m * m / (p - m);
        let oracle_inv = |p: f64, m: f64| m - m * m / (p + m);
        let up = upsilon(&sym1(0.0), &basis).unwrap();
        assert!((up.as_matrix()[(0, 0)] - oracle_up(0.0, -1.0)).abs() < 1e-15);
        assert!(up.as_matrix()[(0, 0)].abs() < 1e-15);
        let inv = upsilon_inv(&sym1(0.0), &basis).unwrap();
        assert!((inv.as_matrix()[(0, 0)] - oracle_inv(0.0, -1.0)).abs() < 1e-15);
        assert!(inv.as_matrix()[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn upsilon_limit_and_boundaries() {
        let basis = example_basis();
        let far = basis.m() + &SymmetricMatrix::scaled_identity(2, 1e6);
        let up = upsilon(&far, &basis).unwrap();
        assert!(up.max_abs_diff(&basis.m().scale(-1.0)) <= 1e-4);

        let p = basis.m() + &SymmetricMatrix::identity(2);
        let back = upsilon_inv(&upsilon(&p, &basis).unwrap(), &basis).unwrap();
        assert!(back.max_abs_diff(&p) <= 1e-12);

        assert!(matches!(
            upsilon_inv(&basis.m().scale(-1.0), &basis),
            Err(Error::DomainViolation { .. })
        ));
        assert!(matches!(
            upsilon(basis.m(), &basis),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn xi_of_identity_is_mu_of_m() {
        let basis = example_basis();
        let q = xi(&Matrix::identity(4, 4), &basis).unwrap();
        assert_eq!(q, mu(basis.m(), &basis).unwrap());
        let back = xi_inv(&q, &basis).unwrap();
        assert!(crate::matrix::max_abs_diff(&back, &Matrix::identity(4, 4)) < 1e-14);
    }

    #[test]
    fn xi_rejects_singular_domain() {
        let basis = scalar_basis(-1.0);
        // Sigma11 + Sigma12 M = 1 - 1 = 0
        let sigma = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            xi(&sigma, &basis),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn pi_scalar_hand_case() {
        let basis = scalar_basis(-1.0);
        let lambda =
            BlockSym2n::from_full(&Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, -3.0])).unwrap();
        let q = pi(&lambda, &basis).unwrap();
        // scalar oracle: v = 1/(m + l22)
        let (m, l11, l12, l22) = (-1.0, 0.0, 1.0, -3.0);
        let v = 1.0 / (m + l22);
        let oracle = [l11 - l12 * v * l12, l12 * v * m, m - m * v * m];
        let got = [
            q.b11().as_matrix()[(0, 0)],
            q.b12()[(0, 0)],
            q.b22().as_matrix()[(0, 0)],
        ];
        for (g, o) in got.iter().zip(oracle) {
            assert!((g - o).abs() < 1e-15);
        }
        assert_eq!(got, [0.25, 0.25, -0.75]);

        let back = pi_inv(&q, &basis).unwrap();
        assert!(back.max_abs_diff(&lambda) < 1e-14);
    }

    #[test]
    fn pi_boundaries() {
        let basis = example_basis();
        let m = basis.m();
        let on_boundary =
            BlockSym2n::new(m.clone(), Matrix::identity(2, 2), m.scale(-1.0)).unwrap();
        assert!(matches!(
            pi(&on_boundary, &basis),
            Err(Error::DomainViolation { .. })
        ));
        let q0 = mu(m, &basis).unwrap();
        assert!(matches!(
            pi_inv(&q0, &basis),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn block_from_full_rejects_odd_sizes() {
        assert!(BlockSym2n::from_full(&Matrix::identity(3, 3)).is_err());
    }
}
