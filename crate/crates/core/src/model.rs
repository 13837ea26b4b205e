//! Problem data: nominal and true systems, multiplicative-noise directions,
//! uncertainty structure, perturbation boxes, gains and LQR costs.
//!
//! Direction lists are always ordered with the state directions `A_i` first
//! and the input directions `B_j` (or `B_j K` after closing the loop) after
//! them. Margin vectors, variance vectors and magnitude vectors index the same
//! way everywhere in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, Matrix, SymMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct NominalSystem {
    a: Matrix,
    b: Matrix,
}

impl NominalSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::dim(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::dim(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(NominalSystem { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Both matrices multiplied by `z`.
    pub fn scaled(&self, z: f64) -> NominalSystem {
        NominalSystem {
            a: &self.a * z,
            b: &self.b * z,
        }
    }

    /// `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_matrix(&self) -> Matrix {
        let (n, m) = (self.n(), self.m());
        let mut out = Matrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            out.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        out
    }
}

/// The plant the nominal model approximates. Only used to evaluate designs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueSystem {
    a_bar: Matrix,
    b_bar: Matrix,
}

impl TrueSystem {
    pub fn new(nominal: &NominalSystem, a_bar: Matrix, b_bar: Matrix) -> Result<Self> {
        if a_bar.shape() != nominal.a.shape() || b_bar.shape() != nominal.b.shape() {
            return Err(Error::dim("true system dimensions differ from the nominal system"));
        }
        Ok(TrueSystem { a_bar, b_bar })
    }

    pub fn a_bar(&self) -> &Matrix {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &Matrix {
        &self.b_bar
    }

    pub fn closed_loop(&self, k: &Gain) -> Matrix {
        &self.a_bar + &self.b_bar * k.matrix()
    }
}

/// A perturbation direction together with its noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub matrix: Matrix,
    pub variance: f64,
}

impl Direction {
    pub fn new(matrix: Matrix, variance: f64) -> Result<Self> {
        check_variance(variance)?;
        Ok(Direction { matrix, variance })
    }
}

fn check_variance(variance: f64) -> Result<()> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::invalid(format!("variance must be finite and >= 0, got {variance}")));
    }
    Ok(())
}

/// Multiplicative noise on the state matrix (`a_dirs`) and input matrix (`b_dirs`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    a_dirs: Vec<Direction>,
    b_dirs: Vec<Direction>,
}

impl NoiseModel {
    pub fn new(sys: &NominalSystem, a_dirs: Vec<Direction>, b_dirs: Vec<Direction>) -> Result<Self> {
        let (n, m) = (sys.n(), sys.m());
        for (i, d) in a_dirs.iter().enumerate() {
            if d.matrix.shape() != (n, n) {
                return Err(Error::dim(format!(
                    "A_dirs[{i}] is {}x{}, expected {n}x{n}",
                    d.matrix.nrows(),
                    d.matrix.ncols()
                )));
            }
            check_variance(d.variance)?;
        }
        for (j, d) in b_dirs.iter().enumerate() {
            if d.matrix.shape() != (n, m) {
                return Err(Error::dim(format!(
                    "B_dirs[{j}] is {}x{}, expected {n}x{m}",
                    d.matrix.nrows(),
                    d.matrix.ncols()
                )));
            }
            check_variance(d.variance)?;
        }
        if a_dirs.len() > n * n {
            return Err(Error::invalid(format!(
                "{} state directions exceed n^2 = {}",
                a_dirs.len(),
                n * n
            )));
        }
        Ok(NoiseModel { a_dirs, b_dirs })
    }

    /// No noise at all.
    pub fn none() -> Self {
        NoiseModel {
            a_dirs: Vec::new(),
            b_dirs: Vec::new(),
        }
    }

    pub fn a_dirs(&self) -> &[Direction] {
        &self.a_dirs
    }

    pub fn b_dirs(&self) -> &[Direction] {
        &self.b_dirs
    }

    pub fn p(&self) -> usize {
        self.a_dirs.len()
    }

    pub fn q(&self) -> usize {
        self.b_dirs.len()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.a_dirs.iter().map(|d| d.variance).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.b_dirs.iter().map(|d| d.variance).collect()
    }

    /// Same directions with new variances.
    pub fn with_variances(&self, alphas: &[f64], betas: &[f64]) -> Result<NoiseModel> {
        if alphas.len() != self.p() || betas.len() != self.q() {
            return Err(Error::dim(format!(
                "expected {} + {} variances, got {} + {}",
                self.p(),
                self.q(),
                alphas.len(),
                betas.len()
            )));
        }
        let rebuild = |dirs: &[Direction], vars: &[f64]| -> Result<Vec<Direction>> {
            dirs.iter()
                .zip(vars)
                .map(|(d, &v)| Direction::new(d.matrix.clone(), v))
                .collect()
        };
        Ok(NoiseModel {
            a_dirs: rebuild(&self.a_dirs, alphas)?,
            b_dirs: rebuild(&self.b_dirs, betas)?,
        })
    }
}

/// Relative uncertainty magnitudes, normalized so that `sum(theta) + sum(phi) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyStructure {
    theta: Vec<f64>,
    phi: Vec<f64>,
}

impl UncertaintyStructure {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::invalid("theta entries must be finite and > 0"));
        }
        if phi.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("phi entries must be finite and >= 0"));
        }
        let total: f64 = theta.iter().chain(&phi).sum();
        if total <= 0.0 {
            return Err(Error::invalid("uncertainty structure needs at least one positive magnitude"));
        }
        Ok(UncertaintyStructure {
            theta: theta.iter().map(|t| t / total).collect(),
            phi: phi.iter().map(|t| t / total).collect(),
        })
    }

    /// Equal weight on `count` closed-loop directions.
    pub fn uniform(count: usize) -> Result<Self> {
        UncertaintyStructure::new(vec![1.0; count], Vec::new())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// `theta` followed by `phi`, matching closed-loop direction order.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.phi).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check_against(&self, noise: &NoiseModel) -> Result<()> {
        if self.theta.len() != noise.p() || self.phi.len() != noise.q() {
            return Err(Error::dim(format!(
                "structure has {} theta and {} phi entries for {} A- and {} B-directions",
                self.theta.len(),
                self.phi.len(),
                noise.p(),
                noise.q()
            )));
        }
        Ok(())
    }
}

/// Certified perturbation bounds: `0 <= mu_i < eta_i` (or `|mu_i| < eta_i`
/// when bidirectional) and likewise `nu_j` against `psi_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBox {
    pub eta: Vec<f64>,
    pub psi: Vec<f64>,
    pub bidirectional: bool,
}

impl PerturbationBox {
    pub fn new(eta: Vec<f64>, psi: Vec<f64>, bidirectional: bool) -> Result<Self> {
        if eta.iter().chain(&psi).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("margins must be finite and >= 0"));
        }
        Ok(PerturbationBox { eta, psi, bidirectional })
    }

    /// Splits closed-loop margins at `p` into `eta` and `psi`.
    pub fn from_closed_loop(margins: &[f64], p: usize, bidirectional: bool) -> Result<Self> {
        if p > margins.len() {
            return Err(Error::dim("more state directions than margins"));
        }
        PerturbationBox::new(margins[..p].to_vec(), margins[p..].to_vec(), bidirectional)
    }

    /// `eta` followed by `psi`.
    pub fn all(&self) -> Vec<f64> {
        self.eta.iter().chain(&self.psi).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.eta.len() + self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether a closed-loop perturbation vector lies in the open box.
    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.len()
            && mu.iter().zip(self.all()).all(|(&m, e)| {
                if self.bidirectional {
                    m.abs() < e
                } else {
                    (0.0..e).contains(&m)
                }
            })
    }
}

/// State-feedback gain `u = K x`, `m x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gain(Matrix);

impl Gain {
    pub fn new(sys: &NominalSystem, k: Matrix) -> Result<Self> {
        if k.shape() != (sys.m(), sys.n()) {
            return Err(Error::dim(format!(
                "K must be {}x{}, got {}x{}",
                sys.m(),
                sys.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(Gain(k))
    }

    pub fn zeros(sys: &NominalSystem) -> Self {
        Gain(Matrix::zeros(sys.m(), sys.n()))
    }

    pub(crate) fn from_matrix(k: Matrix) -> Self {
        Gain(k)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matops::to_rows(&self.0)
    }
}

impl Serialize for Gain {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Gain {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        matops::from_rows(&rows).map(Gain).map_err(serde::de::Error::custom)
    }
}

/// LQR weights. `Q` is PSD and `R` positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct CostPair {
    q: SymMatrix,
    r: SymMatrix,
}

impl CostPair {
    pub fn new(sys: &NominalSystem, q: SymMatrix, r: SymMatrix) -> Result<Self> {
        if q.dim() != sys.n() || r.dim() != sys.m() {
            return Err(Error::dim(format!(
                "Q must be {n}x{n} and R {m}x{m}",
                n = sys.n(),
                m = sys.m()
            )));
        }
        if !matops::is_psd_default(&q)? {
            return Err(Error::invalid("Q must be positive semidefinite"));
        }
        if r.min_eigenvalue()? <= 0.0 {
            return Err(Error::invalid("R must be positive definite"));
        }
        Ok(CostPair { q, r })
    }

    pub fn identity(sys: &NominalSystem) -> Self {
        CostPair {
            q: SymMatrix::identity(sys.n()),
            r: SymMatrix::identity(sys.m()),
        }
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub(crate) fn require_q_definite(&self) -> Result<()> {
        if self.q.min_eigenvalue()? <= 0.0 {
            return Err(Error::invalid("design algorithms require Q to be positive definite"));
        }
        Ok(())
    }
}

/// Closed-loop matrix together with its noise directions (all `n x n`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub a: Matrix,
    pub dirs: Vec<Direction>,
}

impl ClosedLoop {
    pub fn new(a: Matrix, dirs: Vec<Direction>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::dim("closed-loop matrix must be square and non-empty"));
        }
        for (k, d) in dirs.iter().enumerate() {
            if d.matrix.shape() != a.shape() {
                return Err(Error::dim(format!(
                    "direction {k} is {}x{}, expected {}x{}",
                    d.matrix.nrows(),
                    d.matrix.ncols(),
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        Ok(ClosedLoop { a, dirs })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.dirs.iter().map(|d| d.variance).collect()
    }

    /// Same directions with every variance replaced.
    pub fn with_variances(&self, variances: &[f64]) -> Result<ClosedLoop> {
        if variances.len() != self.dirs.len() {
            return Err(Error::dim("variance count differs from direction count"));
        }
        let dirs = self
            .dirs
            .iter()
            .zip(variances)
            .map(|(d, &v)| Direction::new(d.matrix.clone(), v))
            .collect::<Result<_>>()?;
        Ok(ClosedLoop { a: self.a.clone(), dirs })
    }

    /// Closed-loop matrix scaled by `z`, directions untouched.
    pub fn scaled(&self, z: f64) -> ClosedLoop {
        ClosedLoop {
            a: &self.a * z,
            dirs: self.dirs.clone(),
        }
    }

    /// `A_cl + sum_k mu_k D_k`.
    pub fn perturbed(&self, mu: &[f64]) -> Result<Matrix> {
        perturbed_matrix(self, mu)
    }
}

/// Closes the loop with `u = K x`: returns `A + BK` and the directions
/// `A_1..A_p, B_1 K..B_q K` with their variances.
pub fn closed_loop_substitution(sys: &NominalSystem, noise: &NoiseModel, k: &Gain) -> Result<ClosedLoop> {
    if k.0.shape() != (sys.m(), sys.n()) {
        return Err(Error::dim("gain does not match system dimensions"));
    }
    let a_cl = sys.a() + sys.b() * k.matrix();
    let mut dirs = Vec::with_capacity(noise.p() + noise.q());
    for d in noise.a_dirs() {
        if d.matrix.shape() != a_cl.shape() {
            return Err(Error::dim("state direction does not match system dimensions"));
        }
        dirs.push(d.clone());
    }
    for d in noise.b_dirs() {
        if d.matrix.shape() != sys.b().shape() {
            return Err(Error::dim("input direction does not match system dimensions"));
        }
        dirs.push(Direction {
            matrix: &d.matrix * k.matrix(),
            variance: d.variance,
        });
    }
    ClosedLoop::new(a_cl, dirs)
}

pub fn perturbed_matrix(cl: &ClosedLoop, mu: &[f64]) -> Result<Matrix> {
    if mu.len() != cl.dirs.len() {
        return Err(Error::dim(format!(
            "{} perturbation coefficients for {} directions",
            mu.len(),
            cl.dirs.len()
        )));
    }
    let mut out = cl.a.clone();
    for (d, &c) in cl.dirs.iter().zip(mu) {
        out += &d.matrix * c;
    }
    Ok(out)
}
