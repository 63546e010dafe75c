//! Cholesky solve and inverse for the Newton system I b = g.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStepResult {
    pub step: Vec<f64>,
    pub inverse: Option<Matrix>,
}

/// Lower-triangular factor L with A = L L'.
struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    fn factor(a: &Matrix) -> Result<Self> {
        let n = a.dim();
        let max_diag = a.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = n as f64 * f64::EPSILON * max_diag;
        let mut l = Matrix::zeros(n);
        for j in 0..n {
            let mut pivot = a[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            if !(pivot > tol) {
                return Err(Error::SingularHessian { column: j, pivot });
            }
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(Self { l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[(i, k)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[(k, i)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    fn inverse(&self) -> Matrix {
        let n = self.l.dim();
        let mut inv = Matrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrized()
    }
}

fn check_input(info: &Matrix) -> Result<()> {
    if !info.is_finite() {
        return Err(Error::DimensionMismatch("information matrix has non-finite entries".into()));
    }
    let scale = info.max_abs();
    let n = info.dim();
    for i in 0..n {
        for j in 0..i {
            let diff = (info[(i, j)] - info[(j, i)]).abs();
            if diff > 1e-9 * scale {
                return Err(Error::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok(())
}

/// Solves `info * step = grad` with `info` symmetric positive definite.
/// The inverse is only formed when asked for (the covariance round).
pub fn solve_newton_step(info: &Matrix, grad: &[f64], want_inverse: bool) -> Result<NewtonStepResult> {
    if grad.len() != info.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gradient length {} for a {}x{} system",
            grad.len(),
            info.dim(),
            info.dim()
        )));
    }
    check_input(info)?;
    let a = info.symmetrized();
    let chol = Cholesky::factor(&a)?;
    let mut step = chol.solve(grad);

    // One round of iterative refinement.
    let ax = a.mul_vec(&step);
    let residual: Vec<f64> = grad.iter().zip(&ax).map(|(g, v)| g - v).collect();
    let correction = chol.solve(&residual);
    for (s, c) in step.iter_mut().zip(&correction) {
        *s += c;
    }

    Ok(NewtonStepResult {
        step,
        inverse: want_inverse.then(|| chol.inverse()),
    })
}

pub fn invert_spd(info: &Matrix) -> Result<Matrix> {
    check_input(info)?;
    Ok(Cholesky::factor(&info.symmetrized())?.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_system() {
        let r = solve_newton_step(&Matrix::identity(2), &[1.0, 2.0], false).unwrap();
        assert_eq!(r.step, vec![1.0, 2.0]);
        assert!(r.inverse.is_none());
    }

    #[test]
    fn two_by_two_by_hand() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let r = solve_newton_step(&a, &[2.0, 1.0], true).unwrap();
        assert!(close(&r.step, &[0.5, 0.0], 1e-15));
        let inv = r.inverse.unwrap();
        assert!(close(inv.as_slice(), &[0.375, -0.25, -0.25, 0.5], 1e-15));
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(
            solve_newton_step(&a, &[1.0, -3.0], false),
            Err(Error::SingularHessian { column: 1, .. })
        ));
        assert!(matches!(invert_spd(&a), Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn asymmetric_rejected() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]);
        assert!(matches!(solve_newton_step(&a, &[1.0, 1.0], false), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn small_inverses() {
        let d = invert_spd(&Matrix::diagonal(&[2.0, 4.0])).unwrap();
        assert!(close(d.as_slice(), &[0.5, 0.0, 0.0, 0.25], 1e-15));
        assert_eq!(invert_spd(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let inv = invert_spd(&a).unwrap();
        assert!(close(inv.as_slice(), &[0.375, -0.25, -0.25, 0.5], 1e-15));
        assert_eq!(inv, inv.transpose());
    }

    fn spd_strategy() -> impl Strategy<Value = (Matrix, Vec<f64>)> {
        (1usize..=20).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(b, g)| {
                    let b = Matrix::from_rows(&b.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>());
                    let mut a = b.transpose().mul(&b);
                    for i in 0..n {
                        a[(i, i)] += 1.0;
                    }
                    (a, g)
                })
        })
    }

    proptest! {
        #[test]
        fn solve_residual_bound((a, g) in spd_strategy()) {
            let r = solve_newton_step(&a, &g, false).unwrap();
            let ax = a.mul_vec(&r.step);
            let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (x, y) in ax.iter().zip(&g) {
                prop_assert!((x - y).abs() <= 1e-10 * gmax + 1e-300);
            }
        }

        #[test]
        fn double_inverse_round_trip((a, _g) in spd_strategy()) {
            let back = invert_spd(&invert_spd(&a).unwrap()).unwrap();
            let scale = a.max_abs();
            for (x, y) in back.as_slice().iter().zip(a.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }
}
