//! Controller synthesis: certainty-equivalent LQR and the two maximally
//! robust multiplicative-noise designs.

use serde::{Deserialize, Serialize};

use crate::bisect::{self, BisectOptions};
use crate::error::{Error, Result};
use crate::gare::{self, GareOptions, GareSolution};
use crate::margins::{MarginCertificate, MarginMethod, Nlmi};
use crate::matops::{self, SymMatrix};
use crate::model::{
    closed_loop_substitution, ClosedLoop, CostPair, Gain, NoiseModel, NominalSystem, PerturbationBox, TrueSystem,
    UncertaintyStructure,
};
use crate::verify::{self, GridReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignAlgorithm {
    CertaintyEquivalent,
    /// Shared-Lyapunov margins at the largest GARE-feasible noise scale.
    Algorithm1,
    /// Largest auxiliary-system scale admitting a GARE solution.
    Algorithm2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub gare: GareOptions,
    pub bisect: BisectOptions,
    /// Total grid points for the worst-case check, split evenly across
    /// directions; 0 skips the check.
    pub grid_points: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            gare: GareOptions::default(),
            bisect: BisectOptions::default(),
            grid_points: 10_000,
        }
    }
}

impl DesignOptions {
    fn samples_per_dir(&self, dirs: usize) -> usize {
        if dirs == 0 {
            return 2;
        }
        let per = (self.grid_points as f64).powf(1.0 / dirs as f64).floor() as usize;
        // floating-point roots can land one short of an exact integer root
        let per = if (per + 1).checked_pow(dirs as u32).is_some_and(|c| c <= self.grid_points) {
            per + 1
        } else {
            per
        };
        per.max(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    /// `rho(A + BK)`.
    pub nominal_radius: f64,
    /// `rho(A_bar + B_bar K)` when a true system was supplied.
    pub true_radius: Option<f64>,
    /// Worst `rho` over the certified box.
    pub grid: Option<GridReport>,
    /// The outer bisection hit its cap.
    pub unbounded: bool,
    /// Outer bisection probes `(parameter, feasible)`.
    pub trace: Vec<(f64, bool)>,
    /// Value-iteration steps for the returned solution.
    pub gare_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub algorithm: DesignAlgorithm,
    pub k: Gain,
    pub certificate: Option<MarginCertificate>,
    /// Largest feasible noise scale (Algorithm 1).
    pub z_star: Option<f64>,
    /// Largest feasible margin scale (Algorithm 2).
    pub y_star: Option<f64>,
    pub diagnostics: DesignDiagnostics,
}

impl DesignResult {
    /// Records `rho(A_bar + B_bar K)`.
    pub fn assess_truth(&mut self, truth: &TrueSystem) -> Result<f64> {
        let rho = matops::spectral_radius(&truth.closed_loop(&self.k))?;
        self.diagnostics.true_radius = Some(rho);
        Ok(rho)
    }
}

fn check_inputs(sys: &NominalSystem, noise: &NoiseModel, structure: &UncertaintyStructure, costs: &CostPair) -> Result<()> {
    structure.check_against(noise)?;
    if costs.q().dim() != sys.n() || costs.r().dim() != sys.m() {
        return Err(Error::dim("cost matrices do not match system dimensions"));
    }
    costs.require_q_definite()
}

fn scaled_variances(structure: &UncertaintyStructure, scale: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    (
        structure.theta().iter().map(|t| scale(*t)).collect(),
        structure.phi().iter().map(|t| scale(*t)).collect(),
    )
}

/// Noise model with `alpha_i = theta_i z`, `beta_j = phi_j z`.
pub fn algorithm_1_noise(noise: &NoiseModel, structure: &UncertaintyStructure, z: f64) -> Result<NoiseModel> {
    let (alphas, betas) = scaled_variances(structure, |t| t * z);
    noise.with_variances(&alphas, &betas)
}

/// GARE solution of Algorithm 1 at noise scale `z`, if feasible.
pub fn algorithm_1_solution_at(
    sys: &NominalSystem,
    noise: &NoiseModel,
    structure: &UncertaintyStructure,
    costs: &CostPair,
    z: f64,
    opts: &GareOptions,
) -> Result<Option<GareSolution>> {
    let scaled = algorithm_1_noise(noise, structure, z)?;
    Ok(gare::feasible_solution(sys, &scaled, costs, opts))
}

/// Scaled system and noise of Algorithm 2 at margin scale `y`:
/// `sqrt(1 + s) (A, B)` with `alpha_i = eta_i (1 + s)`, `s = sum eta + sum psi`.
pub fn algorithm_2_problem(
    sys: &NominalSystem,
    noise: &NoiseModel,
    structure: &UncertaintyStructure,
    y: f64,
) -> Result<(NominalSystem, NoiseModel)> {
    let total: f64 = structure.magnitudes().iter().map(|t| t * y).sum();
    let (alphas, betas) = scaled_variances(structure, |t| t * y * (1.0 + total));
    Ok((sys.scaled((1.0 + total).sqrt()), noise.with_variances(&alphas, &betas)?))
}

/// GARE solution of Algorithm 2 at margin scale `y`, if feasible.
pub fn algorithm_2_solution_at(
    sys: &NominalSystem,
    noise: &NoiseModel,
    structure: &UncertaintyStructure,
    costs: &CostPair,
    y: f64,
    opts: &GareOptions,
) -> Result<Option<GareSolution>> {
    let (scaled_sys, scaled_noise) = algorithm_2_problem(sys, noise, structure, y)?;
    Ok(gare::feasible_solution(&scaled_sys, &scaled_noise, costs, opts))
}

fn grid_check(cl: &ClosedLoop, bounds: &PerturbationBox, opts: &DesignOptions) -> Result<Option<GridReport>> {
    if opts.grid_points == 0 {
        return Ok(None);
    }
    verify::grid_verify(cl, bounds, opts.samples_per_dir(cl.len())).map(Some)
}

/// LQR on the nominal model, ignoring all uncertainty.
pub fn certainty_equivalent(sys: &NominalSystem, costs: &CostPair, opts: &DesignOptions) -> Result<DesignResult> {
    let sol = gare::feasible_solution(sys, &NoiseModel::none(), costs, &opts.gare)
        .ok_or_else(|| Error::Unstabilizable("Riccati iteration did not converge to a stabilizing gain".into()))?;
    let nominal_radius = matops::spectral_radius(&(sys.a() + sys.b() * sol.k.matrix()))?;
    Ok(DesignResult {
        algorithm: DesignAlgorithm::CertaintyEquivalent,
        k: sol.k,
        certificate: None,
        z_star: None,
        y_star: None,
        diagnostics: DesignDiagnostics {
            nominal_radius,
            true_radius: None,
            grid: None,
            unbounded: false,
            trace: Vec::new(),
            gare_iterations: sol.iterations,
        },
    })
}

/// Bisects the noise scale `z` on GARE feasibility, then certifies
/// unidirectional margins `eta = y* theta` with the GARE value matrix as the
/// shared Lyapunov function (left-hand side `Q + K^T R K`).
pub fn design_algorithm_1(
    sys: &NominalSystem,
    noise: &NoiseModel,
    structure: &UncertaintyStructure,
    costs: &CostPair,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    check_inputs(sys, noise, structure, costs)?;
    if algorithm_1_solution_at(sys, noise, structure, costs, 0.0, &opts.gare)?.is_none() {
        return Err(Error::Unstabilizable("no stabilizing gain even without noise".into()));
    }
    let outer = bisect::bisect_max(
        |z| Ok(algorithm_1_solution_at(sys, noise, structure, costs, z, &opts.gare)?.is_some()),
        &opts.bisect,
    )?;
    let z_star = outer.value;
    let sol = algorithm_1_solution_at(sys, noise, structure, costs, z_star, &opts.gare)?
        .ok_or_else(|| Error::numerical("Riccati feasibility changed between probes"))?;
    let noise_star = algorithm_1_noise(noise, structure, z_star)?;
    let cl = closed_loop_substitution(sys, &noise_star, &sol.k)?;

    let k = sol.k.matrix();
    let lhs_q = SymMatrix::new(costs.q().as_matrix() + k.transpose() * costs.r().as_matrix() * k)?;
    let mags = structure.magnitudes();
    let inner = Nlmi::new(&cl, &lhs_q, &sol.p, false)?.max_scale(&mags, &opts.bisect)?;
    let margins: Vec<f64> = mags.iter().map(|t| t * inner.value).collect();
    let bounds = PerturbationBox::from_closed_loop(&margins, noise.p(), false)?;
    let grid = grid_check(&cl, &bounds, opts)?;

    Ok(DesignResult {
        algorithm: DesignAlgorithm::Algorithm1,
        certificate: Some(MarginCertificate {
            margins: bounds,
            p: Some(sol.p.clone()),
            method: MarginMethod::SharedUni,
            y_star: inner.value,
            unbounded: inner.unbounded,
            q_scale: 1.0,
            zeta: None,
        }),
        z_star: Some(z_star),
        y_star: None,
        diagnostics: DesignDiagnostics {
            nominal_radius: matops::spectral_radius(&cl.a)?,
            true_radius: None,
            grid,
            unbounded: outer.unbounded,
            trace: outer.trace,
            gare_iterations: sol.iterations,
        },
        k: sol.k,
    })
}

/// Bisects the margin scale `y` on GARE feasibility of the auxiliary scaled
/// problem; margins are bidirectional.
pub fn design_algorithm_2(
    sys: &NominalSystem,
    noise: &NoiseModel,
    structure: &UncertaintyStructure,
    costs: &CostPair,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    check_inputs(sys, noise, structure, costs)?;
    if algorithm_2_solution_at(sys, noise, structure, costs, 0.0, &opts.gare)?.is_none() {
        return Err(Error::Unstabilizable("no stabilizing gain even without noise".into()));
    }
    let outer = bisect::bisect_max(
        |y| Ok(algorithm_2_solution_at(sys, noise, structure, costs, y, &opts.gare)?.is_some()),
        &opts.bisect,
    )?;
    let y_star = outer.value;
    let sol = algorithm_2_solution_at(sys, noise, structure, costs, y_star, &opts.gare)?
        .ok_or_else(|| Error::numerical("Riccati feasibility changed between probes"))?;

    let cl = closed_loop_substitution(sys, noise, &sol.k)?;
    let margins: Vec<f64> = structure.magnitudes().iter().map(|t| t * y_star).collect();
    let bounds = PerturbationBox::from_closed_loop(&margins, noise.p(), true)?;
    let grid = grid_check(&cl, &bounds, opts)?;

    Ok(DesignResult {
        algorithm: DesignAlgorithm::Algorithm2,
        certificate: Some(MarginCertificate {
            margins: bounds,
            p: Some(sol.p.clone()),
            method: MarginMethod::AuxScaled,
            y_star,
            unbounded: outer.unbounded,
            q_scale: 1.0,
            zeta: None,
        }),
        z_star: None,
        y_star: Some(y_star),
        diagnostics: DesignDiagnostics {
            nominal_radius: matops::spectral_radius(&cl.a)?,
            true_radius: None,
            grid,
            unbounded: outer.unbounded,
            trace: outer.trace,
            gare_iterations: sol.iterations,
        },
        k: sol.k,
    })
}
