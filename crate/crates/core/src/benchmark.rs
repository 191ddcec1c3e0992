//! The two-mode, two-state benchmark system whose mode-wise transfer
//! functions are both zero, so `a` is only visible through the switching.

use nalgebra::DMatrix;
use rand::Rng;

use crate::hokalman::{ColumnIndex, Selection};
use crate::linalg;
use crate::model::{LssModel, Word};

/// `A_1 = [[0,1],[0,a]]`, `A_2 = [[0,0],[0,a]]`, `B_1 = 0`, `B_2 = e_2`,
/// `C = e_1^T`, `D = 0`.
pub fn two_mode_model(a: f64) -> LssModel {
    LssModel::new(
        vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, a]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, a]),
        ],
        vec![DMatrix::from_row_slice(2, 1, &[0.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0])],
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(1, 1),
    )
    .expect("benchmark dimensions are consistent")
}

/// Dynamics parameter used for a target stability exponent: `a = 0.9 gamma / 2`.
pub fn a_for_gamma(gamma: f64) -> f64 {
    0.9 * gamma / 2.0
}

/// Rows `{ε, (1)}`, columns `{(ε, 2, 1), ((1), 2, 1)}`, which give
/// `H_{α,β} = [[0, 1], [1, a]]`.
pub fn two_mode_selection() -> Selection {
    Selection::new(
        vec![Word::empty(), Word::single(0)],
        vec![
            ColumnIndex { mu: Word::empty(), q: 1, l: 0 },
            ColumnIndex { mu: Word::single(0), q: 1, l: 0 },
        ],
    )
    .expect("benchmark selection is well formed")
}

/// Random model with entries uniform on `[-1, 1]` and every `A_q` rescaled to
/// spectral norm `rho / n_Q`, so that `P = I` certifies stability at `rho`.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, n_q: usize, rho: f64) -> LssModel {
    let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0));
    let a = (0..n_q)
        .map(|_| {
            let a = draw(n, n);
            let norm = linalg::spectral_norm(&a);
            if norm > 0.0 {
                a * (rho / n_q as f64 / norm)
            } else {
                a
            }
        })
        .collect();
    let b = (0..n_q).map(|_| draw(n, m)).collect();
    let c = draw(1, n);
    let d = draw(1, m);
    LssModel::new(a, b, c, d).expect("dimensions are consistent")
}
