//! Generalized algebraic Riccati equation for multiplicative-noise LQR,
//! solved by value iteration from `P_0 = Q`.
//!
//! Non-convergence (blow-up or iteration cap) is reported rather than raised:
//! the design algorithms use it as the mean-square stabilizability probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, Matrix, SymMatrix};
use crate::model::{closed_loop_substitution, CostPair, Gain, NoiseModel, NominalSystem};
use crate::stability;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GareOptions {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub blowup: f64,
}

impl Default for GareOptions {
    fn default() -> Self {
        GareOptions {
            tol_abs: 1e-10,
            tol_rel: 1e-9,
            max_iter: 100_000,
            blowup: 1e12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Diverged,
    IterationCap,
}

#[derive(Clone, Debug)]
pub struct GareSolution {
    /// Final iterate (the fixed point when converged).
    pub p: SymMatrix,
    pub k: Gain,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// `R + B^T P B + sum_j beta_j B_j^T P B_j`.
fn input_weight(p: &Matrix, sys: &NominalSystem, noise: &NoiseModel, costs: &CostPair) -> Matrix {
    let b = sys.b();
    let mut g = costs.r().as_matrix() + b.transpose() * p * b;
    for d in noise.b_dirs() {
        if d.variance != 0.0 {
            g += d.matrix.transpose() * p * &d.matrix * d.variance;
        }
    }
    g
}

fn solve_input_weight(g: Matrix, rhs: &Matrix) -> Result<Matrix> {
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::numerical("Riccati input weight is not positive definite"))?;
    Ok(chol.solve(rhs))
}

/// One value-iteration step:
/// `Q + A^T P A + sum alpha_i A_i^T P A_i - A^T P B G^-1 B^T P A`.
pub fn value_iteration_step(
    p: &SymMatrix,
    sys: &NominalSystem,
    noise: &NoiseModel,
    costs: &CostPair,
) -> Result<SymMatrix> {
    let (a, b) = (sys.a(), sys.b());
    let pm = p.as_matrix();
    let pa = pm * a;
    let bt_pa = b.transpose() * &pa;
    let mut next = costs.q().as_matrix() + a.transpose() * &pa;
    for d in noise.a_dirs() {
        if d.variance != 0.0 {
            next += d.matrix.transpose() * pm * &d.matrix * d.variance;
        }
    }
    let g = input_weight(pm, sys, noise, costs);
    let x = solve_input_weight(g, &bt_pa)?;
    next -= bt_pa.transpose() * x;
    Ok(SymMatrix::from_matrix_unchecked(next))
}

/// Optimal gain for a value matrix `P`:
/// `K = -(R + B^T P B + sum beta_j B_j^T P B_j)^-1 B^T P A`.
pub fn gain_from_value(p: &SymMatrix, sys: &NominalSystem, noise: &NoiseModel, costs: &CostPair) -> Result<Gain> {
    let pm = p.as_matrix();
    let bt_pa = sys.b().transpose() * pm * sys.a();
    let g = input_weight(pm, sys, noise, costs);
    let k = -solve_input_weight(g, &bt_pa)?;
    Ok(Gain::from_matrix(k))
}

fn check_dims(sys: &NominalSystem, noise: &NoiseModel, costs: &CostPair) -> Result<()> {
    let (n, m) = (sys.n(), sys.m());
    if costs.q().dim() != n || costs.r().dim() != m {
        return Err(Error::dim("cost matrices do not match system dimensions"));
    }
    if noise.a_dirs().iter().any(|d| d.matrix.shape() != (n, n))
        || noise.b_dirs().iter().any(|d| d.matrix.shape() != (n, m))
    {
        return Err(Error::dim("noise directions do not match system dimensions"));
    }
    Ok(())
}

pub fn solve_gare(sys: &NominalSystem, noise: &NoiseModel, costs: &CostPair, opts: &GareOptions) -> Result<GareSolution> {
    check_dims(sys, noise, costs)?;
    let mut p = costs.q().clone();
    let mut termination = Termination::IterationCap;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = value_iteration_step(&p, sys, noise, costs)?;
        iterations += 1;
        let size = matops::frobenius(next.as_matrix());
        if !size.is_finite() || size > opts.blowup {
            p = next;
            termination = Termination::Diverged;
            break;
        }
        let step = matops::frobenius(&(next.as_matrix() - p.as_matrix()));
        let prev = matops::frobenius(p.as_matrix());
        p = next;
        if step <= opts.tol_abs + opts.tol_rel * prev {
            termination = Termination::Converged;
            break;
        }
    }
    let converged = termination == Termination::Converged;
    let k = if converged {
        gain_from_value(&p, sys, noise, costs)?
    } else {
        Gain::zeros(sys)
    };
    Ok(GareSolution {
        p,
        k,
        iterations,
        converged,
        termination,
    })
}

/// Whether value iteration converges and the resulting closed loop is
/// mean-square stable. Any failure counts as infeasible.
pub fn gare_feasible(sys: &NominalSystem, noise: &NoiseModel, costs: &CostPair, opts: &GareOptions) -> bool {
    feasible_solution(sys, noise, costs, opts).is_some()
}

/// The converged solution when [`gare_feasible`] holds.
pub fn feasible_solution(
    sys: &NominalSystem,
    noise: &NoiseModel,
    costs: &CostPair,
    opts: &GareOptions,
) -> Option<GareSolution> {
    let sol = solve_gare(sys, noise, costs, opts).ok()?;
    if !sol.converged {
        return None;
    }
    let cl = closed_loop_substitution(sys, noise, &sol.k).ok()?;
    match stability::is_mean_square_stable(&cl) {
        Ok(check) if check.mss => Some(sol),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::model::Direction;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_sys(a: f64, b: f64) -> NominalSystem {
        NominalSystem::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, b)).unwrap()
    }

    #[test]
    fn scalar_step() {
        let sys = scalar_sys(1.0, 1.0);
        let costs = CostPair::identity(&sys);
        let next = value_iteration_step(&SymMatrix::identity(1), &sys, &NoiseModel::none(), &costs).unwrap();
        assert_abs_diff_eq!(next[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_input_reduces_to_lyapunov_recursion() {
        let a = matops::from_rows(&[vec![0.5, 0.2], vec![-0.1, 0.7]]).unwrap();
        let sys = NominalSystem::new(a.clone(), Matrix::zeros(2, 1)).unwrap();
        let dir = matops::from_rows(&[vec![0.0, 1.0], vec![0.3, 0.0]]).unwrap();
        let noise = NoiseModel::new(&sys, vec![Direction::new(dir.clone(), 0.3).unwrap()], vec![]).unwrap();
        let costs = CostPair::identity(&sys);
        let p = SymMatrix::new(matops::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap();
        let next = value_iteration_step(&p, &sys, &noise, &costs).unwrap();
        let expected = Matrix::identity(2, 2) + a.transpose() * p.as_matrix() * &a + dir.transpose() * p.as_matrix() * &dir * 0.3;
        assert_abs_diff_eq!(*next, expected, epsilon = 1e-14);
    }

    #[test]
    fn golden_ratio_scalar_dare() {
        let sys = scalar_sys(1.0, 1.0);
        let sol = solve_gare(&sys, &NoiseModel::none(), &CostPair::identity(&sys), &GareOptions::default()).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.p[(0, 0)], phi, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.k.matrix()[(0, 0)], -(phi - 1.0), epsilon = 1e-8);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let sys = scalar_sys(1.0, 1.0);
        let costs = CostPair::identity(&sys);
        let sol = solve_gare(&sys, &NoiseModel::none(), &costs, &GareOptions::default()).unwrap();
        let again = value_iteration_step(&sol.p, &sys, &NoiseModel::none(), &costs).unwrap();
        assert!((again.as_matrix() - sol.p.as_matrix()).norm() <= 1e-8 * sol.p.as_matrix().norm());
    }

    #[test]
    fn pendulum_certainty_equivalent_gain() {
        let pend = instances::pendulum();
        let sol = solve_gare(&pend.sys, &NoiseModel::none(), &pend.costs, &GareOptions::default()).unwrap();
        let k = sol.k.matrix();
        assert!((k[(0, 0)] + 9.14).abs() / 9.14 < 0.01);
        assert!((k[(0, 1)] + 4.15).abs() / 4.15 < 0.01);
    }

    /// Smallest moment radius over a grid of gains, a brute-force oracle for
    /// mean-square stabilizability of the pendulum with noise variance `z`.
    fn best_moment_radius_over_gains(z: f64) -> f64 {
        let pend = instances::pendulum();
        let noise = pend.noise.with_variances(&[z], &[]).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let k = Gain::new(
                    &pend.sys,
                    matops::from_rows(&[vec![-150.0 + 100.0 * i as f64 / 200.0, -30.0 + 20.0 * j as f64 / 200.0]]).unwrap(),
                )
                .unwrap();
                let cl = closed_loop_substitution(&pend.sys, &noise, &k).unwrap();
                best = best.min(stability::is_mean_square_stable(&cl).unwrap().moment_radius);
            }
        }
        best
    }

    #[test]
    fn pendulum_above_stabilizability_threshold() {
        // the grid oracle brackets the threshold between 90 and 110
        assert!(best_moment_radius_over_gains(90.0) < 1.0);
        assert!(best_moment_radius_over_gains(110.0) > 1.0);
        let pend = instances::pendulum();
        let opts = GareOptions::default();
        let noise = pend.noise.with_variances(&[110.0], &[]).unwrap();
        let sol = solve_gare(&pend.sys, &noise, &pend.costs, &opts).unwrap();
        assert!(!sol.converged);
        assert!(!gare_feasible(&pend.sys, &noise, &pend.costs, &opts));
        let noise = pend.noise.with_variances(&[90.0], &[]).unwrap();
        assert!(gare_feasible(&pend.sys, &noise, &pend.costs, &opts));
    }

    #[test]
    fn feasibility_examples() {
        let pend = instances::pendulum();
        let opts = GareOptions::default();
        assert!(gare_feasible(&pend.sys, &NoiseModel::none(), &pend.costs, &opts));
        // noise on a state the input cannot reach
        let sys = NominalSystem::new(Matrix::identity(2, 2) * 0.5, matops::from_rows(&[vec![1.0], vec![0.0]]).unwrap()).unwrap();
        let dir = matops::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let noise = NoiseModel::new(&sys, vec![Direction::new(dir, 1e6).unwrap()], vec![]).unwrap();
        assert!(!gare_feasible(&sys, &noise, &CostPair::identity(&sys), &opts));
    }

    /// Finite-horizon Riccati recursion run long enough to settle.
    fn dare_oracle(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Matrix {
        let mut p = q.clone();
        for _ in 0..20_000 {
            let g = r + b.transpose() * &p * b;
            let gi = g.try_inverse().unwrap();
            p = q + a.transpose() * &p * a - a.transpose() * &p * b * gi * b.transpose() * &p * a;
            p = (&p + p.transpose()) * 0.5;
        }
        p
    }

    #[test]
    fn zero_noise_matches_dare_oracle_and_iterates_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(1..=2);
            let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.2..1.2));
            let b = Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let sys = NominalSystem::new(a.clone(), b.clone()).unwrap();
            let costs = CostPair::identity(&sys);
            let sol = solve_gare(&sys, &NoiseModel::none(), &costs, &GareOptions::default()).unwrap();
            assert!(sol.converged);
            let oracle = dare_oracle(&a, &b, &Matrix::identity(n, n), &Matrix::identity(m, m));
            assert!((sol.p.as_matrix() - &oracle).norm() <= 1e-6 * oracle.norm());

            let mut p = costs.q().clone();
            for _ in 0..50 {
                let next = value_iteration_step(&p, &sys, &NoiseModel::none(), &costs).unwrap();
                let diff = SymMatrix::new(next.as_matrix() - p.as_matrix()).unwrap();
                assert!(diff.min_eigenvalue().unwrap() >= -1e-10 * next.norm2().unwrap().max(1.0));
                p = next;
            }
        }
    }

    #[test]
    fn converged_solutions_are_mss_with_small_residual() {
        let pend = instances::pendulum();
        for z in [1.0, 10.0, 50.0] {
            let noise = pend.noise.with_variances(&[z], &[]).unwrap();
            let sol = solve_gare(&pend.sys, &noise, &pend.costs, &GareOptions::default()).unwrap();
            assert!(sol.converged);
            let step = value_iteration_step(&sol.p, &pend.sys, &noise, &pend.costs).unwrap();
            assert!((step.as_matrix() - sol.p.as_matrix()).norm() <= 1e-8 * sol.p.as_matrix().norm());
            let cl = closed_loop_substitution(&pend.sys, &noise, &sol.k).unwrap();
            assert!(stability::is_mean_square_stable(&cl).unwrap().moment_radius < 1.0);
        }
    }
}
