//! Built-in problem instances and random instance generators.

use rand::Rng;

use crate::gare::GareOptions;
use crate::matops::{self, Matrix};
use crate::model::{ClosedLoop, CostPair, Direction, NoiseModel, NominalSystem, TrueSystem, UncertaintyStructure};
use crate::stability;

/// Value-iteration budget shipped with the pendulum instance.
///
/// Near the stabilizability boundary value iteration slows down without
/// bound, so the feasibility probe depends on the budget. With the default
/// tolerances a budget of a few thousand iterations reproduces the published
/// pendulum results; an unbounded budget pushes the Algorithm-1 parameter to
/// its supremum `z = 100`, where `A + BK` approaches a nilpotent matrix.
pub const PENDULUM_MAX_ITER: usize = 2000;

/// Forward-Euler inverted pendulum, `dt = 0.1`, nominal mass constant 5 and
/// true mass constant 10, uncertainty on the (2,1) entry of `A`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    pub sys: NominalSystem,
    pub truth: TrueSystem,
    /// Direction `A_1 = e2 e1^T` with zero variance; designs assign variances.
    pub noise: NoiseModel,
    pub structure: UncertaintyStructure,
    pub costs: CostPair,
    pub gare: GareOptions,
}

pub fn pendulum() -> Pendulum {
    let rows = |r: &[&[f64]]| matops::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).expect("static data");
    let sys = NominalSystem::new(rows(&[&[1.0, 0.1], &[0.5, 1.0]]), rows(&[&[0.0], &[0.1]])).expect("static data");
    let truth = TrueSystem::new(&sys, rows(&[&[1.0, 0.1], &[1.0, 1.0]]), rows(&[&[0.0], &[0.1]])).expect("static data");
    let noise = NoiseModel::new(
        &sys,
        vec![Direction::new(rows(&[&[0.0, 0.0], &[1.0, 0.0]]), 0.0).expect("static data")],
        vec![],
    )
    .expect("static data");
    let costs = CostPair::identity(&sys);
    Pendulum {
        structure: UncertaintyStructure::new(vec![1.0], vec![]).expect("static data"),
        sys,
        truth,
        noise,
        costs,
        gare: GareOptions {
            max_iter: PENDULUM_MAX_ITER,
            ..GareOptions::default()
        },
    }
}

/// Random `n x n` closed loop with `p` directions, rescaled so that its
/// moment radius equals `target`.
pub fn random_loop_with_radius<R: Rng>(rng: &mut R, n: usize, p: usize, target: f64) -> ClosedLoop {
    let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let dirs = (0..p)
        .map(|_| {
            let d = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            Direction::new(d, rng.random_range(0.05..0.5)).expect("positive variance")
        })
        .collect();
    let cl = ClosedLoop::new(a, dirs).expect("consistent dimensions");
    let radius = stability::is_mean_square_stable(&cl).expect("small eigenproblem").moment_radius;
    // the moment operator is homogeneous of degree 2 in (A, sqrt(alpha))
    let s = (target / radius).sqrt();
    let variances: Vec<f64> = cl.variances().iter().map(|v| v * s * s).collect();
    cl.scaled(s).with_variances(&variances).expect("same length")
}
