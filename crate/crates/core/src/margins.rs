//! Robustness margins certified from mean-square stability.
//!
//! Two families:
//!
//! * Shared Lyapunov function. Solve `P = cQ + A^T P A + sum alpha_i A_i^T P A_i`
//!   (with `c` the number of directions) and find the largest `y` such that,
//!   with `eta = y * theta`,
//!
//!   ```text
//!   cQ + sum alpha_i A_i^T P A_i  ⪰  sum eta_i Y_i + sum_i sum_j eta_i eta_j Z_ij
//!   ```
//!
//!   where `Y_i = (A_i^T P A + A^T P A_i)+` and `Z_ij = (A_i^T P A_j + A_j^T P A_i)+`.
//!   Every `A + sum mu_i A_i` with `0 <= mu_i < eta_i` then satisfies
//!   `P ⪰ (A + sum mu_i A_i)^T P (A + sum mu_i A_i)`. The bidirectional variant
//!   replaces `S+` by the matrix absolute value `S+ - S-`.
//!   The single-direction reductions (exact `zeta` bisection and the two
//!   generalized-eigenvalue shortcuts) give `eta = sqrt(zeta^2 + alpha) - zeta`.
//!
//! * Auxiliary scaled system. If `sqrt(1 + sum eta) * A` with noise variances
//!   `alpha_i >= eta_i (1 + sum eta)` is mean-square stable, then
//!   `A + sum mu_i A_i` is stable for all `|mu_i| < eta_i`.

use serde::{Deserialize, Serialize};

use crate::bisect::{self, BisectOptions, BisectOutcome};
use crate::error::{Error, Result};
use crate::matops::{self, Matrix, SymMatrix};
use crate::model::{ClosedLoop, Direction, PerturbationBox, UncertaintyStructure};
use crate::stability;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginMethod {
    SharedUni,
    SharedBi,
    AuxScaled,
    ScalarExact,
    ConsLinearized,
    ConsSimple,
}

impl MarginMethod {
    pub const ALL: [MarginMethod; 6] = [
        MarginMethod::SharedUni,
        MarginMethod::SharedBi,
        MarginMethod::AuxScaled,
        MarginMethod::ScalarExact,
        MarginMethod::ConsLinearized,
        MarginMethod::ConsSimple,
    ];
}

/// Which noise variances the auxiliary system is tested with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxVariances {
    /// `alpha_i = eta_i (1 + sum eta)` exactly; ignores the loop's own variances.
    #[default]
    Tight,
    /// The loop's own variances, which must dominate `eta_i (1 + sum eta)`.
    Given,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginOptions {
    pub bisect: BisectOptions,
    pub aux_variances: AuxVariances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginCertificate {
    pub margins: PerturbationBox,
    /// Certifying Lyapunov matrix: the shared `P`, or the auxiliary-system GLE solution.
    pub p: Option<SymMatrix>,
    pub method: MarginMethod,
    pub y_star: f64,
    /// The bisection cap was reached; margins hold the cap, not a maximum.
    pub unbounded: bool,
    /// Multiplier on `Q` in the Lyapunov equation and matrix inequality
    /// (the direction count, or 1 for the unscaled form).
    pub q_scale: f64,
    /// Per-direction `zeta_i` for the corollary-based methods.
    pub zeta: Option<Vec<f64>>,
}

impl MarginCertificate {
    /// Margins in closed-loop direction order.
    pub fn all(&self) -> Vec<f64> {
        self.margins.all()
    }
}

/// Margin for `x+ = (a + y) x` from mean-square stability of `x+ = (a + gamma) x`
/// with `E[gamma^2] = alpha`: `sqrt(a^2 + alpha) - |a|`.
pub fn scalar_margin(a: f64, alpha: f64) -> Result<f64> {
    let r2 = a * a + alpha;
    if !(alpha >= 0.0) || r2 >= 1.0 {
        return Err(Error::NotMeanSquareStable { moment_radius: r2 });
    }
    Ok(r2.sqrt() - a.abs())
}

/// Precomputed sides of the shared-Lyapunov matrix inequality.
#[derive(Clone, Debug)]
pub struct Nlmi {
    lhs: SymMatrix,
    first: Vec<SymMatrix>,
    /// `second[i][j - i]` holds `Z_ij` for `j >= i`.
    second: Vec<Vec<SymMatrix>>,
}

fn dominator(s: SymMatrix, bidirectional: bool) -> Result<SymMatrix> {
    if bidirectional {
        s.abs()
    } else {
        Ok(matops::psd_split(&s)?.plus)
    }
}

fn cross_term(x: &Matrix, p: &Matrix, y: &Matrix) -> Result<SymMatrix> {
    let t = x.transpose() * p * y;
    matops::symmetrize(&(&t + t.transpose()))
}

impl Nlmi {
    /// `lhs_q` is the `Q` term exactly as it appears on the left-hand side.
    pub fn new(cl: &ClosedLoop, lhs_q: &SymMatrix, p: &SymMatrix, bidirectional: bool) -> Result<Self> {
        let n = cl.n();
        if lhs_q.dim() != n || p.dim() != n {
            return Err(Error::dim("Q and P must match the closed-loop dimension"));
        }
        let pm = p.as_matrix();
        let mut lhs = lhs_q.as_matrix().clone();
        for d in &cl.dirs {
            lhs += d.matrix.transpose() * pm * &d.matrix * d.variance;
        }
        let first = cl
            .dirs
            .iter()
            .map(|d| dominator(cross_term(&d.matrix, pm, &cl.a)?, bidirectional))
            .collect::<Result<Vec<_>>>()?;
        let mut second = Vec::with_capacity(cl.len());
        for i in 0..cl.len() {
            let row = (i..cl.len())
                .map(|j| dominator(cross_term(&cl.dirs[i].matrix, pm, &cl.dirs[j].matrix)?, bidirectional))
                .collect::<Result<Vec<_>>>()?;
            second.push(row);
        }
        Ok(Nlmi {
            lhs: SymMatrix::from_matrix_unchecked(lhs),
            first,
            second,
        })
    }

    /// `LHS - RHS(eta)`.
    pub fn slack(&self, eta: &[f64]) -> Result<SymMatrix> {
        if eta.len() != self.first.len() {
            return Err(Error::dim(format!(
                "{} margins for {} directions",
                eta.len(),
                self.first.len()
            )));
        }
        let mut s = self.lhs.as_matrix().clone();
        for (i, &ei) in eta.iter().enumerate() {
            if ei == 0.0 {
                continue;
            }
            s -= self.first[i].as_matrix() * ei;
            for (off, z) in self.second[i].iter().enumerate() {
                let j = i + off;
                let w = if off == 0 { ei * ei } else { 2.0 * ei * eta[j] };
                if w != 0.0 {
                    s -= z.as_matrix() * w;
                }
            }
        }
        Ok(SymMatrix::from_matrix_unchecked(s))
    }

    pub fn feasible(&self, eta: &[f64]) -> Result<bool> {
        matops::is_psd_default(&self.slack(eta)?)
    }

    /// Largest `y` with `eta = y * magnitudes` feasible.
    pub fn max_scale(&self, magnitudes: &[f64], opts: &BisectOptions) -> Result<BisectOutcome> {
        bisect::bisect_max(
            |y| {
                let eta: Vec<f64> = magnitudes.iter().map(|t| y * t).collect();
                self.feasible(&eta)
            },
            opts,
        )
    }
}

/// Evaluates the shared-Lyapunov matrix inequality at `eta`.
pub fn nlmi_feasible(
    cl: &ClosedLoop,
    lhs_q: &SymMatrix,
    p: &SymMatrix,
    eta: &[f64],
    bidirectional: bool,
) -> Result<bool> {
    if eta.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::invalid("margins must be nonnegative"));
    }
    Nlmi::new(cl, lhs_q, p, bidirectional)?.feasible(eta)
}

fn require_mss(cl: &ClosedLoop) -> Result<()> {
    let check = stability::is_mean_square_stable(cl)?;
    if !check.mss {
        return Err(Error::NotMeanSquareStable {
            moment_radius: check.moment_radius,
        });
    }
    Ok(())
}

fn require_dominates_identity(q: &SymMatrix) -> Result<()> {
    if q.min_eigenvalue()? < 1.0 - 1e-9 {
        return Err(Error::invalid("the margin Q must satisfy Q ⪰ I"));
    }
    Ok(())
}

fn check_structure(cl: &ClosedLoop, structure: &UncertaintyStructure) -> Result<()> {
    if structure.len() != cl.len() {
        return Err(Error::dim(format!(
            "uncertainty structure has {} entries for {} directions",
            structure.len(),
            cl.len()
        )));
    }
    Ok(())
}

fn direction_count(cl: &ClosedLoop) -> f64 {
    cl.len().max(1) as f64
}

/// GLE solution with `Q` scaled by the direction count.
fn shared_lyapunov_matrix(cl: &ClosedLoop, q_eff: &SymMatrix) -> Result<(SymMatrix, SymMatrix)> {
    let scaled_q = q_eff.scaled(direction_count(cl));
    let gle = stability::solve_gle(cl, &scaled_q)?;
    let p = gle.p.ok_or(Error::NotMeanSquareStable {
        moment_radius: gle.moment_radius,
    })?;
    Ok((scaled_q, p))
}

fn box_from(structure: &UncertaintyStructure, margins: &[f64], bidirectional: bool) -> Result<PerturbationBox> {
    PerturbationBox::from_closed_loop(margins, structure.theta().len(), bidirectional)
}

/// Shared-Lyapunov margins `eta = y* theta` from the count-scaled GLE.
pub fn shared_lyapunov_margins(
    cl: &ClosedLoop,
    q_eff: &SymMatrix,
    structure: &UncertaintyStructure,
    bidirectional: bool,
    opts: &BisectOptions,
) -> Result<MarginCertificate> {
    check_structure(cl, structure)?;
    require_mss(cl)?;
    require_dominates_identity(q_eff)?;
    let (scaled_q, p) = shared_lyapunov_matrix(cl, q_eff)?;
    let mags = structure.magnitudes();
    let out = Nlmi::new(cl, &scaled_q, &p, bidirectional)?.max_scale(&mags, opts)?;
    let margins: Vec<f64> = mags.iter().map(|t| t * out.value).collect();
    Ok(MarginCertificate {
        margins: box_from(structure, &margins, bidirectional)?,
        p: Some(p),
        method: if bidirectional {
            MarginMethod::SharedBi
        } else {
            MarginMethod::SharedUni
        },
        y_star: out.value,
        unbounded: out.unbounded,
        q_scale: direction_count(cl),
        zeta: None,
    })
}

/// `(A^T P A_i + A_i^T P A)+` and `A_i^T P A_i`.
fn single_direction_terms(a_cl: &Matrix, dir: &Matrix, p: &SymMatrix) -> Result<(SymMatrix, SymMatrix)> {
    let cross = matops::psd_split(&cross_term(a_cl, p.as_matrix(), dir)?)?.plus;
    let quad = SymMatrix::from_matrix_unchecked(dir.transpose() * p.as_matrix() * dir);
    Ok((cross, quad))
}

/// `sqrt(zeta^2 + alpha) - zeta`, written without cancellation.
pub fn envelope(zeta: f64, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    alpha / ((zeta * zeta + alpha).sqrt() + zeta)
}

/// `1 / (sqrt(zeta^2 + alpha) - zeta)`.
fn inverse_envelope(zeta: f64, alpha: f64) -> f64 {
    ((zeta * zeta + alpha).sqrt() + zeta) / alpha
}

/// Whether `zeta` satisfies
/// `Q / (sqrt(zeta^2 + alpha) - zeta) + 2 zeta A_i^T P A_i ⪰ (A^T P A_i + A_i^T P A)+`.
pub fn zeta_condition(a_cl: &Matrix, dir: &Direction, p: &SymMatrix, q: &SymMatrix, zeta: f64) -> Result<bool> {
    let (cross, quad) = single_direction_terms(a_cl, &dir.matrix, p)?;
    zeta_condition_with(&cross, &quad, q, dir.variance, zeta)
}

fn zeta_condition_with(cross: &SymMatrix, quad: &SymMatrix, q: &SymMatrix, alpha: f64, zeta: f64) -> Result<bool> {
    let s = q.as_matrix() * inverse_envelope(zeta, alpha) + quad.as_matrix() * (2.0 * zeta) - cross.as_matrix();
    matops::is_psd_default(&SymMatrix::from_matrix_unchecked(s))
}

const ZETA_ABS_TOL: f64 = 1e-9;

/// Smallest `zeta >= 0` satisfying [`zeta_condition`], by bisection.
fn zeta_exact(a_cl: &Matrix, dir: &Direction, p: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    let (cross, quad) = single_direction_terms(a_cl, &dir.matrix, p)?;
    let alpha = dir.variance;
    bisect::bisect_min(
        |z| zeta_condition_with(&cross, &quad, q, alpha, z),
        ZETA_ABS_TOL,
        2f64.powi(60),
    )?
    .ok_or_else(|| Error::numerical("no zeta satisfies the single-direction condition"))
}

/// Single-direction margin `(eta_1, zeta_1)` from the smallest feasible `zeta_1`.
pub fn corollary_single_margin(cl: &ClosedLoop, q_eff: &SymMatrix) -> Result<(f64, f64)> {
    if cl.len() != 1 {
        return Err(Error::invalid(format!(
            "single-direction margin needs exactly one direction, got {}",
            cl.len()
        )));
    }
    require_mss(cl)?;
    let dir = &cl.dirs[0];
    if dir.variance <= 0.0 {
        return Err(Error::invalid("single-direction margin needs a positive variance"));
    }
    let gle = stability::solve_gle(cl, q_eff)?;
    let p = gle.p.ok_or(Error::NotMeanSquareStable {
        moment_radius: gle.moment_radius,
    })?;
    let zeta = zeta_exact(&cl.a, dir, &p, q_eff)?;
    Ok((envelope(zeta, dir.variance), zeta))
}

/// `zeta_i = max(lambda, 0)` with `lambda` the top generalized eigenvalue of
/// `[(A^T P A_i + A_i^T P A)+ - Q / sqrt(alpha)] v = lambda [Q / alpha + 2 A_i^T P A_i] v`.
pub fn conservative_margin_linearized(a_cl: &Matrix, dir: &Direction, p: &SymMatrix, q_eff: &SymMatrix) -> Result<f64> {
    let alpha = dir.variance;
    if alpha <= 0.0 {
        return Err(Error::invalid("linearized margin needs a positive variance"));
    }
    let (cross, quad) = single_direction_terms(a_cl, &dir.matrix, p)?;
    let lhs = SymMatrix::from_matrix_unchecked(cross.as_matrix() - q_eff.as_matrix() / alpha.sqrt());
    let rhs = SymMatrix::from_matrix_unchecked(q_eff.as_matrix() / alpha + quad.as_matrix() * 2.0);
    Ok(matops::gen_eig_max(&lhs, &rhs)?.lambda_max.max(0.0))
}

/// `zeta_i = max((alpha lambda - 1/lambda) / 2, 0)` with `lambda` the top
/// generalized eigenvalue of `(A^T P A_i + A_i^T P A)+ v = lambda Q v`.
pub fn conservative_margin_simple(a_cl: &Matrix, dir: &Direction, p: &SymMatrix, q_eff: &SymMatrix) -> Result<f64> {
    let (cross, _) = single_direction_terms(a_cl, &dir.matrix, p)?;
    let lambda = matops::gen_eig_max(&cross, q_eff)?.lambda_max;
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    Ok((0.5 * (dir.variance * lambda - 1.0 / lambda)).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ZetaRule {
    Exact,
    Linearized,
    Simple,
}

/// Margins from per-direction `zeta_i`. One direction: `eta = sqrt(zeta^2 + alpha) - zeta`.
/// Several: `eta_i` proportional to those envelopes, at the largest scale where
/// the full shared-Lyapunov inequality holds, capped at the envelopes.
fn corollary_margins(
    cl: &ClosedLoop,
    q_eff: &SymMatrix,
    structure: &UncertaintyStructure,
    rule: ZetaRule,
    method: MarginMethod,
    opts: &BisectOptions,
) -> Result<MarginCertificate> {
    check_structure(cl, structure)?;
    require_mss(cl)?;
    require_dominates_identity(q_eff)?;
    let (scaled_q, p) = shared_lyapunov_matrix(cl, q_eff)?;

    let mut zeta = Vec::with_capacity(cl.len());
    let mut env = Vec::with_capacity(cl.len());
    for d in &cl.dirs {
        if d.variance <= 0.0 {
            zeta.push(0.0);
            env.push(0.0);
            continue;
        }
        let z = match rule {
            ZetaRule::Exact => zeta_exact(&cl.a, d, &p, q_eff)?,
            ZetaRule::Linearized => conservative_margin_linearized(&cl.a, d, &p, q_eff)?,
            ZetaRule::Simple => conservative_margin_simple(&cl.a, d, &p, q_eff)?,
        };
        zeta.push(z);
        env.push(envelope(z, d.variance));
    }

    let (margins, y_star) = if cl.len() == 1 {
        (env.clone(), env[0])
    } else {
        let total: f64 = env.iter().sum();
        if total <= 0.0 {
            (vec![0.0; cl.len()], 0.0)
        } else {
            // eta_i proportional to the envelopes and never above them
            let weights: Vec<f64> = env.iter().map(|e| e / total).collect();
            let out = Nlmi::new(cl, &scaled_q, &p, false)?.max_scale(&weights, opts)?;
            let scale = out.value.min(total);
            (weights.iter().map(|w| w * scale).collect(), scale)
        }
    };
    Ok(MarginCertificate {
        margins: box_from(structure, &margins, false)?,
        p: Some(p),
        method,
        y_star,
        unbounded: false,
        q_scale: direction_count(cl),
        zeta: Some(zeta),
    })
}

/// Exact scalar margin for `n = 1` with a single direction `c`:
/// `|mu| < (sqrt(a^2 + alpha c^2) - |a|) / |c|`.
pub fn scalar_exact_margins(cl: &ClosedLoop, structure: &UncertaintyStructure, opts: &BisectOptions) -> Result<MarginCertificate> {
    check_structure(cl, structure)?;
    if cl.n() != 1 || cl.len() != 1 {
        return Err(Error::invalid("the scalar method needs n = 1 and exactly one direction"));
    }
    let a = cl.a[(0, 0)];
    let c = cl.dirs[0].matrix[(0, 0)];
    let alpha = cl.dirs[0].variance;
    let (margin, unbounded) = if c == 0.0 {
        require_mss(cl)?;
        (opts.cap, true)
    } else {
        (scalar_margin(a, alpha * c * c)? / c.abs(), false)
    };
    Ok(MarginCertificate {
        margins: box_from(structure, &[margin], true)?,
        p: None,
        method: MarginMethod::ScalarExact,
        y_star: margin,
        unbounded,
        q_scale: 1.0,
        zeta: None,
    })
}

/// The auxiliary system at scale `y`: `(sqrt(1 + sum eta) A, variances)`, or
/// `None` when [`AuxVariances::Given`] variances are too small.
fn aux_system(cl: &ClosedLoop, magnitudes: &[f64], y: f64, mode: AuxVariances) -> Result<Option<ClosedLoop>> {
    let eta: Vec<f64> = magnitudes.iter().map(|t| y * t).collect();
    let total: f64 = eta.iter().sum();
    let mut variances = Vec::with_capacity(eta.len());
    for (d, e) in cl.dirs.iter().zip(&eta) {
        let needed = e * (1.0 + total);
        match mode {
            AuxVariances::Tight => variances.push(needed),
            AuxVariances::Given => {
                if d.variance < needed {
                    return Ok(None);
                }
                variances.push(d.variance);
            }
        }
    }
    Ok(Some(cl.scaled((1.0 + total).sqrt()).with_variances(&variances)?))
}

/// Bidirectional margins from mean-square stability of the scaled auxiliary system.
pub fn aux_system_margins(
    cl: &ClosedLoop,
    structure: &UncertaintyStructure,
    q: &SymMatrix,
    opts: &MarginOptions,
) -> Result<MarginCertificate> {
    check_structure(cl, structure)?;
    let mags = structure.magnitudes();
    let mode = opts.aux_variances;
    let out = bisect::bisect_max(
        |y| match aux_system(cl, &mags, y, mode)? {
            Some(aux) => Ok(stability::is_mean_square_stable(&aux)?.mss),
            None => Ok(false),
        },
        &opts.bisect,
    )?;
    let p = match aux_system(cl, &mags, out.value, mode)? {
        Some(aux) => stability::solve_gle(&aux, q)?.p,
        None => None,
    };
    let margins: Vec<f64> = mags.iter().map(|t| t * out.value).collect();
    Ok(MarginCertificate {
        margins: box_from(structure, &margins, true)?,
        p,
        method: MarginMethod::AuxScaled,
        y_star: out.value,
        unbounded: out.unbounded,
        q_scale: 1.0,
        zeta: None,
    })
}

/// Smallest eigenvalue of `P - M^T P M` over the `2^p` sign corners
/// `M = A + sum k_i eta_i A_i`, using the certificate's `P`.
pub fn corner_lyapunov_slack(cl: &ClosedLoop, cert: &MarginCertificate) -> Result<f64> {
    let p = cert
        .p
        .as_ref()
        .ok_or_else(|| Error::invalid("certificate carries no Lyapunov matrix"))?;
    let eta = cert.all();
    if eta.len() != cl.len() {
        return Err(Error::dim("certificate and closed loop have different direction counts"));
    }
    if eta.len() > 20 {
        return Err(Error::invalid("too many directions to enumerate corners"));
    }
    let mut worst = f64::INFINITY;
    let corners = 1usize << eta.len();
    for mask in 0..corners {
        let mu: Vec<f64> = eta
            .iter()
            .enumerate()
            .map(|(i, e)| if mask >> i & 1 == 1 { -e } else { *e })
            .collect();
        let m = cl.perturbed(&mu)?;
        let gap = SymMatrix::from_matrix_unchecked(p.as_matrix() - m.transpose() * p.as_matrix() * &m);
        worst = worst.min(gap.min_eigenvalue()?);
    }
    Ok(worst)
}

/// Dispatches to the method's margin computation. `q_eff` is the `Q` of the
/// Lyapunov equation (must satisfy `Q ⪰ I` for the shared-Lyapunov family).
pub fn compute_margins(
    cl: &ClosedLoop,
    q_eff: &SymMatrix,
    structure: &UncertaintyStructure,
    method: MarginMethod,
    opts: &MarginOptions,
) -> Result<MarginCertificate> {
    match method {
        MarginMethod::SharedUni => shared_lyapunov_margins(cl, q_eff, structure, false, &opts.bisect),
        MarginMethod::SharedBi => shared_lyapunov_margins(cl, q_eff, structure, true, &opts.bisect),
        MarginMethod::AuxScaled => aux_system_margins(cl, structure, q_eff, opts),
        MarginMethod::ScalarExact => scalar_exact_margins(cl, structure, &opts.bisect),
        MarginMethod::ConsLinearized => {
            corollary_margins(cl, q_eff, structure, ZetaRule::Linearized, method, &opts.bisect)
        }
        MarginMethod::ConsSimple => corollary_margins(cl, q_eff, structure, ZetaRule::Simple, method, &opts.bisect),
    }
}

/// Envelope-based margins with the exact `zeta` bisection (not one of the
/// [`MarginMethod`]s; used to cross-check the conservative rules).
pub fn corollary_exact_margins(
    cl: &ClosedLoop,
    q_eff: &SymMatrix,
    structure: &UncertaintyStructure,
    opts: &BisectOptions,
) -> Result<MarginCertificate> {
    corollary_margins(cl, q_eff, structure, ZetaRule::Exact, MarginMethod::ConsLinearized, opts).map(|mut c| {
        c.method = MarginMethod::SharedUni;
        c
    })
}
