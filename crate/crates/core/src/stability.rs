//! Mean-square stability via the lifted second-moment operator, and the
//! generalized Lyapunov equation (GLE).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matops::{self, Matrix, SymMatrix};
use crate::model::ClosedLoop;

/// Slack on the moment-radius test: MSS iff radius < 1 - MSS_SLACK.
pub const MSS_SLACK: f64 = 1e-10;

/// Relative Frobenius residual accepted for a GLE solution.
pub const GLE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MssCheck {
    pub mss: bool,
    pub moment_radius: f64,
}

#[derive(Clone, Debug)]
pub struct GleSolution {
    /// Present only when the closed loop is mean-square stable.
    pub p: Option<SymMatrix>,
    pub mss: bool,
    pub moment_radius: f64,
}

/// `T(P) = A^T P A + sum_i alpha_i A_i^T P A_i`.
pub fn lyapunov_map(cl: &ClosedLoop, p: &Matrix) -> Matrix {
    let mut out = cl.a.transpose() * p * &cl.a;
    for d in &cl.dirs {
        if d.variance != 0.0 {
            out += d.matrix.transpose() * p * &d.matrix * d.variance;
        }
    }
    out
}

/// Matrix of `T` acting on column-stacked `vec(P)`:
/// `A^T ⊗ A^T + sum_i alpha_i (A_i^T ⊗ A_i^T)`.
pub fn moment_operator(cl: &ClosedLoop) -> Matrix {
    let at = cl.a.transpose();
    let mut op = matops::kron(&at, &at);
    for d in &cl.dirs {
        if d.variance != 0.0 {
            let dt = d.matrix.transpose();
            op += matops::kron(&dt, &dt) * d.variance;
        }
    }
    op
}

pub fn is_mean_square_stable(cl: &ClosedLoop) -> Result<MssCheck> {
    let moment_radius = matops::spectral_radius(&moment_operator(cl))?;
    Ok(MssCheck {
        mss: moment_radius < 1.0 - MSS_SLACK,
        moment_radius,
    })
}

/// Solves `P = Q + T(P)` by a direct solve on the lifted system.
pub fn solve_gle(cl: &ClosedLoop, q: &SymMatrix) -> Result<GleSolution> {
    let n = cl.n();
    if q.dim() != n {
        return Err(Error::dim(format!("Q is {}x{}, expected {n}x{n}", q.dim(), q.dim())));
    }
    if q.min_eigenvalue()? <= 0.0 {
        return Err(Error::invalid("GLE right-hand side Q must be positive definite"));
    }
    let op = moment_operator(cl);
    let moment_radius = matops::spectral_radius(&op)?;
    if moment_radius >= 1.0 - MSS_SLACK {
        return Ok(GleSolution {
            p: None,
            mss: false,
            moment_radius,
        });
    }
    let lifted = Matrix::identity(n * n, n * n) - op;
    let rhs: DVector<f64> = matops::vec(q.as_matrix());
    let sol = lifted
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular lifted Lyapunov operator"))?;
    let p = matops::symmetrize(&matops::unvec(&sol, n))?;

    if p.min_eigenvalue()? <= 0.0 {
        return Err(Error::numerical("GLE solution is not positive definite"));
    }
    let residual = gle_residual(cl, q, &p);
    if residual > GLE_RESIDUAL_TOL {
        return Err(Error::numerical(format!("GLE residual {residual:e} above tolerance")));
    }
    Ok(GleSolution {
        p: Some(p),
        mss: true,
        moment_radius,
    })
}

/// Solution of the lifted system `(I - M) vec(P) = vec(Q)` without the
/// stability gate; `None` when `I - M` is singular. For loops that are not
/// mean-square stable the result is symmetric but not positive definite.
pub fn lifted_gle_solution(cl: &ClosedLoop, q: &SymMatrix) -> Result<Option<SymMatrix>> {
    let n = cl.n();
    if q.dim() != n {
        return Err(Error::dim(format!("Q is {}x{}, expected {n}x{n}", q.dim(), q.dim())));
    }
    let lifted = Matrix::identity(n * n, n * n) - moment_operator(cl);
    match lifted.lu().solve(&matops::vec(q.as_matrix())) {
        Some(sol) => Ok(Some(matops::symmetrize(&matops::unvec(&sol, n))?)),
        None => Ok(None),
    }
}

/// `||P - Q - T(P)||_F / ||P||_F`.
pub fn gle_residual(cl: &ClosedLoop, q: &SymMatrix, p: &SymMatrix) -> f64 {
    let r = p.as_matrix() - q.as_matrix() - lyapunov_map(cl, p.as_matrix());
    matops::frobenius(&r) / matops::frobenius(p.as_matrix()).max(f64::MIN_POSITIVE)
}

/// Returns whether the closed loop is mean-square stable. When it is, also
/// checks that the GLE solution certifies `P - A^T P A ⪰ Q` and that
/// `rho(A) < 1`; a failure of either check is a numerical error.
pub fn check_det_stability_from_mss(cl: &ClosedLoop, q: &SymMatrix) -> Result<bool> {
    let gle = solve_gle(cl, q)?;
    let Some(p) = gle.p else {
        return Ok(false);
    };
    let gap = SymMatrix::new(p.as_matrix() - cl.a.transpose() * p.as_matrix() * &cl.a - q.as_matrix())?;
    if !matops::is_psd(&gap, 1e-8 * p.norm2()?.max(1.0))? {
        return Err(Error::numerical("GLE solution does not dominate the nominal Lyapunov term"));
    }
    let rho = matops::spectral_radius(&cl.a)?;
    if rho >= 1.0 {
        return Err(Error::numerical(format!(
            "mean-square stable loop has deterministic spectral radius {rho}"
        )));
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Direction;
    use approx::assert_abs_diff_eq;
    use crate::instances::random_loop_with_radius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, alpha: f64) -> ClosedLoop {
        ClosedLoop::new(
            Matrix::from_element(1, 1, a),
            vec![Direction::new(Matrix::from_element(1, 1, 1.0), alpha).unwrap()],
        )
        .unwrap()
    }

    fn fixed_point_oracle(cl: &ClosedLoop, q: &SymMatrix, iters: usize) -> Matrix {
        let mut p = q.as_matrix().clone();
        for _ in 0..iters {
            p = q.as_matrix() + lyapunov_map(cl, &p);
        }
        p
    }

    #[test]
    fn moment_operator_scalar_and_diagonal() {
        assert_abs_diff_eq!(moment_operator(&scalar(0.7, 0.2))[(0, 0)], 0.49 + 0.2, epsilon = 1e-15);
        let cl = ClosedLoop::new(Matrix::from_element(1, 1, 0.6), vec![]).unwrap();
        assert_eq!(moment_operator(&cl)[(0, 0)], 0.6 * 0.6);
        let d = ClosedLoop::new(Matrix::from_diagonal(&DVector::from_vec(vec![0.5, -2.0])), vec![]).unwrap();
        let expected = Matrix::from_diagonal(&DVector::from_vec(vec![0.25, -1.0, -1.0, 4.0]));
        assert_abs_diff_eq!(moment_operator(&d), expected, epsilon = 1e-15);
    }

    #[test]
    fn mss_scalar_examples() {
        assert!(is_mean_square_stable(&scalar(0.9, 0.18)).unwrap().mss);
        let c = is_mean_square_stable(&scalar(0.9, 0.20)).unwrap();
        assert!(!c.mss);
        assert_abs_diff_eq!(c.moment_radius, 1.01, epsilon = 1e-12);
        let det = ClosedLoop::new(Matrix::from_diagonal(&DVector::from_vec(vec![0.999, 0.3])), vec![]).unwrap();
        assert!(is_mean_square_stable(&det).unwrap().mss);
    }

    #[test]
    fn gle_scalar_closed_form() {
        let sol = solve_gle(&scalar(0.5, 0.25), &SymMatrix::identity(1)).unwrap();
        assert!(sol.mss);
        assert_abs_diff_eq!(sol.p.unwrap()[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gle_nilpotent_two_step_sum() {
        let a = matops::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let cl = ClosedLoop::new(a, vec![]).unwrap();
        let p = solve_gle(&cl, &SymMatrix::identity(2)).unwrap().p.unwrap();
        assert_abs_diff_eq!(*p, matops::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn gle_not_mss_returns_no_solution() {
        let sol = solve_gle(&scalar(0.9, 0.2), &SymMatrix::identity(1)).unwrap();
        assert!(!sol.mss);
        assert!(sol.p.is_none());
    }

    #[test]
    fn gle_matches_fixed_point_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let cl = random_loop_with_radius(&mut rng, 3, 2, 0.8);
            let q = SymMatrix::identity(3);
            let p = solve_gle(&cl, &q).unwrap().p.unwrap();
            assert!(gle_residual(&cl, &q, &p) < 1e-8);
            let oracle = fixed_point_oracle(&cl, &q, 400);
            assert!((p.as_matrix() - &oracle).norm() <= 1e-6 * oracle.norm());
        }
    }

    #[test]
    fn lemma_equivalence_on_straddling_radii() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for &target in &[0.5, 0.9, 0.99, 1.01, 1.5] {
            for _ in 0..6 {
                let n = rng.random_range(1..=4);
                let cl = random_loop_with_radius(&mut rng, n, 2, target);
                let sol = solve_gle(&cl, &SymMatrix::identity(n)).unwrap();
                assert_eq!(sol.mss, target < 1.0);
                assert_eq!(sol.p.is_some(), target < 1.0);
            }
        }
    }

    #[test]
    fn lifted_solution_is_indefinite_beyond_the_boundary() {
        let p = lifted_gle_solution(&scalar(0.9, 0.2), &SymMatrix::identity(1)).unwrap().unwrap();
        assert_abs_diff_eq!(p[(0, 0)], -100.0, epsilon = 1e-9);
        let p = lifted_gle_solution(&scalar(0.5, 0.25), &SymMatrix::identity(1)).unwrap().unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mss_implies_deterministic_stability() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..=4);
            let target = rng.random_range(0.1..0.999);
            let cl = random_loop_with_radius(&mut rng, n, 2, target);
            assert!(check_det_stability_from_mss(&cl, &SymMatrix::identity(n)).unwrap());
            assert!(matops::spectral_radius(&cl.a).unwrap() < 1.0);
        }
    }

    #[test]
    fn converse_fails_and_unstable_rejected() {
        assert!(!check_det_stability_from_mss(&scalar(0.5, 0.9), &SymMatrix::identity(1)).unwrap());
        let unstable = ClosedLoop::new(Matrix::from_element(1, 1, 1.2), vec![]).unwrap();
        assert!(!check_det_stability_from_mss(&unstable, &SymMatrix::identity(1)).unwrap());
    }

    #[test]
    fn gle_is_monotone_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let cl = random_loop_with_radius(&mut rng, 3, 2, 0.9);
            let g = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let q2 = SymMatrix::new(&g * g.transpose() + Matrix::identity(3, 3)).unwrap();
            let h = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let q1 = SymMatrix::new(q2.as_matrix() + &h * h.transpose()).unwrap();
            let p1 = solve_gle(&cl, &q1).unwrap().p.unwrap();
            let p2 = solve_gle(&cl, &q2).unwrap().p.unwrap();
            let diff = SymMatrix::new(p1.as_matrix() - p2.as_matrix()).unwrap();
            assert!(matops::is_psd(&diff, 1e-8 * p1.norm2().unwrap()).unwrap());
        }
    }
}
