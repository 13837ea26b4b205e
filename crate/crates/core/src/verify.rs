//! Empirical checks of certificates: tensor-grid search over a perturbation
//! box, and second-moment propagation (exact and Monte Carlo).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, Matrix, SymMatrix};
use crate::model::{ClosedLoop, PerturbationBox};

/// Largest tensor grid [`grid_verify`] will evaluate.
pub const GRID_POINT_LIMIT: u128 = 10_000_000;

/// Grid points are pulled this far inside the open box.
pub const GRID_INSET: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Number of grid points evaluated.
    pub samples: usize,
    pub worst_rho: f64,
    pub worst_mu: Vec<f64>,
    pub all_stable: bool,
}

fn grid_axis(margin: f64, samples: usize, bidirectional: bool) -> Vec<f64> {
    if margin == 0.0 {
        return vec![0.0];
    }
    let top = margin * GRID_INSET;
    let last = (samples - 1) as f64;
    (0..samples)
        .map(|k| {
            let frac = k as f64 / last;
            if bidirectional {
                -top + 2.0 * top * frac
            } else {
                top * frac
            }
        })
        .collect()
}

/// Worst spectral radius of `A + sum mu_i A_i` over a tensor grid of the box.
/// Directions with a zero margin contribute the single point `mu_i = 0`.
pub fn grid_verify(cl: &ClosedLoop, bounds: &PerturbationBox, samples_per_dir: usize) -> Result<GridReport> {
    if samples_per_dir < 2 {
        return Err(Error::invalid("grid needs at least 2 samples per direction"));
    }
    let margins = bounds.all();
    if margins.len() != cl.len() {
        return Err(Error::dim(format!(
            "box has {} margins for {} directions",
            margins.len(),
            cl.len()
        )));
    }
    let axes: Vec<Vec<f64>> = margins
        .iter()
        .map(|&m| grid_axis(m, samples_per_dir, bounds.bidirectional))
        .collect();
    let points = axes.iter().map(|a| a.len() as u128).product::<u128>();
    if points > GRID_POINT_LIMIT {
        return Err(Error::GridTooLarge {
            points,
            limit: GRID_POINT_LIMIT,
        });
    }

    let mut index = vec![0usize; axes.len()];
    let mut mu: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut worst_rho = f64::NEG_INFINITY;
    let mut worst_mu = mu.clone();
    let mut m = cl.a.clone();
    for _ in 0..points {
        m.copy_from(&cl.a);
        for (d, &x) in cl.dirs.iter().zip(&mu) {
            if x != 0.0 {
                m += &d.matrix * x;
            }
        }
        let rho = matops::spectral_radius(&m)?;
        if rho > worst_rho {
            worst_rho = rho;
            worst_mu.copy_from_slice(&mu);
        }
        for (k, axis) in axes.iter().enumerate() {
            index[k] += 1;
            if index[k] < axis.len() {
                mu[k] = axis[index[k]];
                break;
            }
            index[k] = 0;
            mu[k] = axis[0];
        }
    }
    Ok(GridReport {
        samples: points as usize,
        worst_rho,
        worst_mu,
        all_stable: worst_rho < 1.0,
    })
}

/// Distribution of the unit-variance noise draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    #[default]
    Gaussian,
    /// Uniform on `{-1, +1}`.
    Rademacher,
}

/// Trial `k` draws from `ChaCha20Rng::seed_from_u64(seed)` on stream `k`,
/// so estimates do not depend on the order trials run in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub noise_law: NoiseLaw,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecondMomentTrace {
    /// `Sigma_0 ..= Sigma_horizon` from the covariance recursion.
    pub exact: Vec<SymMatrix>,
    /// Sample means of `x_t x_t^T` over trials.
    pub estimate: Vec<SymMatrix>,
    /// Entrywise standard errors of `estimate`.
    pub std_error: Vec<Vec<Vec<f64>>>,
}

/// `Sigma_{t+1} = A Sigma_t A^T + sum_i alpha_i A_i Sigma_t A_i^T`.
pub fn propagate_second_moment(cl: &ClosedLoop, sigma: &Matrix) -> Matrix {
    let mut next = &cl.a * sigma * cl.a.transpose();
    for d in &cl.dirs {
        if d.variance != 0.0 {
            next += &d.matrix * sigma * d.matrix.transpose() * d.variance;
        }
    }
    next
}

fn unit_draw(rng: &mut ChaCha20Rng, law: NoiseLaw) -> f64 {
    match law {
        NoiseLaw::Gaussian => rng.sample(StandardNormal),
        NoiseLaw::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Symmetric square root factor `L` with `L L^T = sigma` for `sigma ⪰ 0`.
fn covariance_factor(sigma: &SymMatrix) -> Matrix {
    let eig = sigma.as_matrix().clone().symmetric_eigen();
    let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * Matrix::from_diagonal(&roots)
}

/// Exact and Monte Carlo second moments of `x_{t+1} = (A + sum gamma_ti A_i) x_t`
/// with `E[x_0 x_0^T] = x0_cov`.
pub fn simulate_second_moment(cl: &ClosedLoop, cfg: &MonteCarloConfig, x0_cov: &SymMatrix) -> Result<SecondMomentTrace> {
    let n = cl.n();
    if x0_cov.dim() != n {
        return Err(Error::dim("initial covariance does not match the state dimension"));
    }
    if cfg.horizon < 1 || cfg.trials < 1 {
        return Err(Error::invalid("horizon and trials must be at least 1"));
    }
    if !matops::is_psd_default(x0_cov)? {
        return Err(Error::invalid("initial covariance must be positive semidefinite"));
    }

    let mut exact = Vec::with_capacity(cfg.horizon + 1);
    exact.push(x0_cov.clone());
    for t in 0..cfg.horizon {
        let next = propagate_second_moment(cl, exact[t].as_matrix());
        exact.push(matops::symmetrize(&next)?);
    }

    let factor = covariance_factor(x0_cov);
    let scales: Vec<f64> = cl.dirs.iter().map(|d| d.variance.sqrt()).collect();
    let steps = cfg.horizon + 1;
    let mut sum = vec![Matrix::zeros(n, n); steps];
    let mut sum_sq = vec![Matrix::zeros(n, n); steps];
    let mut m = Matrix::zeros(n, n);
    for trial in 0..cfg.trials {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64);
        let xi = DVector::from_fn(n, |_, _| unit_draw(&mut rng, cfg.noise_law));
        let mut x = &factor * xi;
        for t in 0..steps {
            let outer = &x * x.transpose();
            sum_sq[t] += outer.component_mul(&outer);
            sum[t] += outer;
            if t + 1 == steps {
                break;
            }
            m.copy_from(&cl.a);
            for (d, s) in cl.dirs.iter().zip(&scales) {
                if *s != 0.0 {
                    m += &d.matrix * (s * unit_draw(&mut rng, cfg.noise_law));
                }
            }
            x = &m * x;
        }
    }

    let count = cfg.trials as f64;
    let mut estimate = Vec::with_capacity(steps);
    let mut std_error = Vec::with_capacity(steps);
    for t in 0..steps {
        let mean = &sum[t] / count;
        let se = Matrix::from_fn(n, n, |i, j| {
            if cfg.trials < 2 {
                return f64::NAN;
            }
            let var = (sum_sq[t][(i, j)] / count - mean[(i, j)] * mean[(i, j)]).max(0.0) * count / (count - 1.0);
            (var / count).sqrt()
        });
        estimate.push(matops::symmetrize(&mean)?);
        std_error.push(matops::to_rows(&se));
    }
    Ok(SecondMomentTrace {
        exact,
        estimate,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::random_loop_with_radius;
    use crate::model::Direction;
    use crate::stability;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64, alpha: f64) -> ClosedLoop {
        ClosedLoop::new(
            Matrix::from_element(1, 1, a),
            vec![Direction::new(Matrix::from_element(1, 1, 1.0), alpha).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn zero_box_is_a_single_point() {
        let cl = scalar(0.4, 0.1);
        let bounds = PerturbationBox::new(vec![0.0], vec![], true).unwrap();
        let rep = grid_verify(&cl, &bounds, 100).unwrap();
        assert_eq!(rep.samples, 1);
        assert_abs_diff_eq!(rep.worst_rho, 0.4, epsilon = 1e-15);
        assert!(rep.all_stable);
    }

    #[test]
    fn scalar_grid_extremes() {
        let cl = scalar(0.5, 0.1);
        let uni = grid_verify(&cl, &PerturbationBox::new(vec![0.4], vec![], false).unwrap(), 11).unwrap();
        assert_abs_diff_eq!(uni.worst_rho, 0.9, epsilon = 1e-8);
        assert_eq!(uni.samples, 11);
        let bi = grid_verify(&cl, &PerturbationBox::new(vec![1.6], vec![], true).unwrap(), 11).unwrap();
        assert_abs_diff_eq!(bi.worst_rho, 2.1, epsilon = 1e-8);
        assert!(!bi.all_stable);
        assert!(bi.worst_mu[0] > 0.0);
    }

    #[test]
    fn grid_size_limit() {
        let cl = random_loop_with_radius(&mut ChaCha20Rng::seed_from_u64(3), 2, 3, 0.5);
        let bounds = PerturbationBox::new(vec![0.1; 3], vec![], true).unwrap();
        assert!(matches!(grid_verify(&cl, &bounds, 1000), Err(Error::GridTooLarge { .. })));
        assert!(grid_verify(&cl, &bounds, 1).is_err());
        assert_eq!(grid_verify(&cl, &bounds, 5).unwrap().samples, 125);
    }

    #[test]
    fn exact_propagation_geometric_decay() {
        let cl = ClosedLoop::new(Matrix::identity(2, 2) * 0.5, vec![]).unwrap();
        let cfg = MonteCarloConfig {
            horizon: 5,
            trials: 1,
            seed: 0,
            noise_law: NoiseLaw::Gaussian,
        };
        let tr = simulate_second_moment(&cl, &cfg, &SymMatrix::identity(2)).unwrap();
        for (t, s) in tr.exact.iter().enumerate() {
            assert_abs_diff_eq!(*s.as_matrix(), Matrix::identity(2, 2) * 0.25f64.powi(t as i32), epsilon = 1e-15);
        }
    }

    #[test]
    fn exact_propagation_non_mss_grows() {
        let cl = scalar(0.9, 0.2);
        let cfg = MonteCarloConfig {
            horizon: 10,
            trials: 1,
            seed: 0,
            noise_law: NoiseLaw::Gaussian,
        };
        let tr = simulate_second_moment(&cl, &cfg, &SymMatrix::identity(1)).unwrap();
        for w in tr.exact.windows(2) {
            assert_abs_diff_eq!(w[1][(0, 0)] / w[0][(0, 0)], 1.01, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_propagation_decays_for_mss() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let cl = random_loop_with_radius(&mut rng, 3, 2, 0.8);
        let radius = stability::is_mean_square_stable(&cl).unwrap().moment_radius;
        // transient growth from non-normality is absorbed by a generous horizon
        let horizon = (2.0 * 1e-6f64.ln() / radius.ln()).ceil() as usize + 50;
        let cfg = MonteCarloConfig {
            horizon,
            trials: 1,
            seed: 0,
            noise_law: NoiseLaw::Gaussian,
        };
        let tr = simulate_second_moment(&cl, &cfg, &SymMatrix::identity(3)).unwrap();
        assert!(tr.exact.last().unwrap().as_matrix().norm() < 1e-6 * 3f64.sqrt());
    }

    #[test]
    fn propagation_matches_lifted_operator() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let cl = random_loop_with_radius(&mut rng, 3, 2, 0.9);
        let mut lifted = matops::kron(&cl.a, &cl.a);
        for d in &cl.dirs {
            lifted += matops::kron(&d.matrix, &d.matrix) * d.variance;
        }
        let mut sigma = Matrix::identity(3, 3);
        for _ in 0..10 {
            let next = propagate_second_moment(&cl, &sigma);
            let via = &lifted * matops::vec(&sigma);
            assert!((matops::vec(&next) - via).amax() <= 1e-10 * next.amax().max(1.0));
            sigma = next;
        }
        // and the lifted map is the transpose of the stability module's operator
        assert_abs_diff_eq!(lifted.transpose(), stability::moment_operator(&cl), epsilon = 1e-14);
    }

    #[test]
    fn monte_carlo_within_standard_errors() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let cl = random_loop_with_radius(&mut rng, 2, 2, 0.9);
        for law in [NoiseLaw::Gaussian, NoiseLaw::Rademacher] {
            let cfg = MonteCarloConfig {
                horizon: 10,
                trials: 20000,
                seed: 42,
                noise_law: law,
            };
            let tr = simulate_second_moment(&cl, &cfg, &SymMatrix::identity(2)).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let gap = (tr.estimate[10][(i, j)] - tr.exact[10][(i, j)]).abs();
                    assert!(gap <= 5.0 * tr.std_error[10][i][j], "{law:?} entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let cl = scalar(0.5, 0.3);
        let cfg = MonteCarloConfig {
            horizon: 4,
            trials: 50,
            seed: 11,
            noise_law: NoiseLaw::Gaussian,
        };
        let a = simulate_second_moment(&cl, &cfg, &SymMatrix::identity(1)).unwrap();
        let b = simulate_second_moment(&cl, &cfg, &SymMatrix::identity(1)).unwrap();
        assert_eq!(a.estimate, b.estimate);
        let other = MonteCarloConfig { seed: 12, ..cfg };
        let c = simulate_second_moment(&cl, &other, &SymMatrix::identity(1)).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }
}
