#![allow(dead_code)]

use riccati_core::matrix::sqrtm_spd;
use riccati_core::{BasisMatrix, LinearSystem, Matrix, SymmetricMatrix};

pub fn example_system() -> LinearSystem {
    let a = Matrix::from_row_slice(2, 2, &[-2.0, 1.6, -1.6, -0.4]);
    let bb = SymmetricMatrix::from_row_slice(2, &[0.216, -0.008, -0.008, 0.216]).unwrap();
    let cc = SymmetricMatrix::from_row_slice(2, &[1.5, 0.2, 0.2, 1.6]).unwrap();
    LinearSystem::new(
        a,
        sqrtm_spd(&bb).unwrap().into_matrix(),
        sqrtm_spd(&cc).unwrap().into_matrix(),
    )
    .unwrap()
}

pub fn example_basis(sys: &LinearSystem) -> BasisMatrix {
    let m = SymmetricMatrix::from_row_slice(2, &[-1.0, -0.2, -0.2, -1.0]).unwrap();
    BasisMatrix::from_user_for_system(m, sys).unwrap()
}

/// The printed `Lambda_delta` for `delta = 0.05`.
pub fn printed_lambda_delta() -> Matrix {
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

pub fn escaping_p0() -> SymmetricMatrix {
    SymmetricMatrix::from_diagonal(&[2.0, 6.5])
}

pub fn bounded_p0() -> SymmetricMatrix {
    SymmetricMatrix::scaled_identity(2, -0.1)
}

pub fn grid(delta: f64, steps: usize) -> Vec<f64> {
    (1..=steps).map(|k| k as f64 * delta).collect()
}
