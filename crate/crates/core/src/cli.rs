//! Command-line front end. Problem files are JSON with matrices as row-major
//! nested arrays.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bisect::BisectOptions;
use crate::design::{self, DesignOptions, DesignResult};
use crate::error::Error;
use crate::gare::{self, GareOptions};
use crate::instances;
use crate::margins::{self, AuxVariances, MarginCertificate, MarginMethod, MarginOptions};
use crate::matops::{self, Matrix, SymMatrix};
use crate::model::{
    closed_loop_substitution, ClosedLoop, CostPair, Direction, Gain, NoiseModel, NominalSystem, TrueSystem,
    UncertaintyStructure,
};
use crate::stability;
use crate::verify::{self, MonteCarloConfig, NoiseLaw};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

type Rows = Vec<Vec<f64>>;

/// On-disk problem description. Field names follow the usual symbols.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "A_bar", default, skip_serializing_if = "Option::is_none")]
    pub a_bar: Option<Rows>,
    #[serde(rename = "B_bar", default, skip_serializing_if = "Option::is_none")]
    pub b_bar: Option<Rows>,
    #[serde(rename = "A_dirs", default)]
    pub a_dirs: Vec<Rows>,
    #[serde(rename = "B_dirs", default)]
    pub b_dirs: Vec<Rows>,
    /// Variances of the state directions; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    /// Relative uncertainty magnitudes; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    /// Identity when absent.
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
    /// Feedback gain for closed-loop analysis; zero (open loop) when absent.
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<SolverOptions>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_abs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bisect_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_samples: Option<usize>,
}

/// A validated problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub sys: NominalSystem,
    pub truth: Option<TrueSystem>,
    pub noise: NoiseModel,
    pub structure: UncertaintyStructure,
    pub costs: CostPair,
    pub gain: Option<Gain>,
    pub gare: GareOptions,
    pub bisect: BisectOptions,
    pub grid_samples: Option<usize>,
}

/// Input failure with the file location or field it concerns.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn field<T>(name: &str, r: crate::Result<T>) -> Result<T, InputError> {
    r.map_err(|e| InputError(format!("field `{name}`: {e}")))
}

fn matrix(name: &str, rows: &Rows) -> Result<Matrix, InputError> {
    field(name, matops::from_rows(rows))
}

fn sym(name: &str, rows: &Rows) -> Result<SymMatrix, InputError> {
    let m = matrix(name, rows)?;
    if !m.is_square() {
        return Err(InputError(format!("field `{name}`: matrix must be square")));
    }
    if (&m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0) {
        return Err(InputError(format!("field `{name}`: matrix must be symmetric")));
    }
    field(name, SymMatrix::new(m))
}

fn directions(name: &str, mats: &[Rows], variances: Option<&Vec<f64>>, var_name: &str) -> Result<Vec<Direction>, InputError> {
    let zeros = vec![0.0; mats.len()];
    let variances = variances.unwrap_or(&zeros);
    if variances.len() != mats.len() {
        return Err(InputError(format!(
            "field `{var_name}`: {} variances for {} entries of `{name}`",
            variances.len(),
            mats.len()
        )));
    }
    mats.iter()
        .zip(variances)
        .enumerate()
        .map(|(k, (rows, &v))| {
            let m = matrix(&format!("{name}[{k}]"), rows)?;
            field(&format!("{var_name}[{k}]"), Direction::new(m, v))
        })
        .collect()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, InputError> {
        serde_json::from_str(text).map_err(|e| InputError(format!("problem file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| InputError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_problem(&self) -> Result<Problem, InputError> {
        let sys = field("A/B", NominalSystem::new(matrix("A", &self.a)?, matrix("B", &self.b)?))?;
        let truth = match (&self.a_bar, &self.b_bar) {
            (None, None) => None,
            (a_bar, b_bar) => {
                let a_bar = a_bar.as_ref().map(|r| matrix("A_bar", r)).transpose()?.unwrap_or_else(|| sys.a().clone());
                let b_bar = b_bar.as_ref().map(|r| matrix("B_bar", r)).transpose()?.unwrap_or_else(|| sys.b().clone());
                Some(field("A_bar/B_bar", TrueSystem::new(&sys, a_bar, b_bar))?)
            }
        };
        let a_dirs = directions("A_dirs", &self.a_dirs, self.alpha.as_ref(), "alpha")?;
        let b_dirs = directions("B_dirs", &self.b_dirs, self.beta.as_ref(), "beta")?;
        let noise = field("A_dirs/B_dirs", NoiseModel::new(&sys, a_dirs, b_dirs))?;

        let theta = self.theta.clone().unwrap_or_else(|| vec![1.0; noise.p()]);
        let phi = self.phi.clone().unwrap_or_else(|| vec![1.0; noise.q()]);
        if theta.len() != noise.p() {
            return Err(InputError(format!("field `theta`: {} entries for {} A_dirs", theta.len(), noise.p())));
        }
        if phi.len() != noise.q() {
            return Err(InputError(format!("field `phi`: {} entries for {} B_dirs", phi.len(), noise.q())));
        }
        let structure = if theta.is_empty() && phi.is_empty() {
            // placeholder; commands needing directions reject the problem
            UncertaintyStructure::uniform(1).expect("one positive entry")
        } else {
            field("theta/phi", UncertaintyStructure::new(theta, phi))?
        };

        let q = match &self.q {
            Some(r) => sym("Q", r)?,
            None => SymMatrix::identity(sys.n()),
        };
        let r = match &self.r {
            Some(r) => sym("R", r)?,
            None => SymMatrix::identity(sys.m()),
        };
        let costs = field("Q/R", CostPair::new(&sys, q, r))?;
        let gain = self.k.as_ref().map(|k| field("K", Gain::new(&sys, matrix("K", k)?))).transpose()?;

        let o = self.options.unwrap_or_default();
        let defaults = GareOptions::default();
        let gare = GareOptions {
            tol_abs: o.tol_abs.unwrap_or(defaults.tol_abs),
            tol_rel: o.tol_rel.unwrap_or(defaults.tol_rel),
            max_iter: o.max_iter.unwrap_or(defaults.max_iter),
            blowup: o.blowup.unwrap_or(defaults.blowup),
        };
        let bisect = BisectOptions {
            rel_tol: o.bisect_rel_tol.unwrap_or(BisectOptions::default().rel_tol),
            ..BisectOptions::default()
        };
        for (name, v) in [("tol_abs", gare.tol_abs), ("tol_rel", gare.tol_rel), ("bisect_rel_tol", bisect.rel_tol)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(InputError(format!("field `options.{name}`: must be finite and >= 0")));
            }
        }
        if !(gare.blowup.is_finite() && gare.blowup > 0.0) {
            return Err(InputError("field `options.blowup`: must be finite and > 0".into()));
        }
        Ok(Problem {
            sys,
            truth,
            noise,
            structure,
            costs,
            gain,
            gare,
            bisect,
            grid_samples: o.grid_samples,
        })
    }

    /// The built-in pendulum instance in file form.
    pub fn pendulum() -> Self {
        let p = instances::pendulum();
        ProblemFile {
            a: matops::to_rows(p.sys.a()),
            b: matops::to_rows(p.sys.b()),
            a_bar: Some(matops::to_rows(p.truth.a_bar())),
            b_bar: Some(matops::to_rows(p.truth.b_bar())),
            a_dirs: p.noise.a_dirs().iter().map(|d| matops::to_rows(&d.matrix)).collect(),
            b_dirs: Vec::new(),
            alpha: Some(p.noise.alphas()),
            beta: None,
            theta: Some(p.structure.theta().to_vec()),
            phi: None,
            q: Some(p.costs.q().to_rows()),
            r: Some(p.costs.r().to_rows()),
            k: None,
            options: Some(SolverOptions {
                max_iter: Some(p.gare.max_iter),
                ..SolverOptions::default()
            }),
        }
    }
}

impl Problem {
    fn closed_loop(&self) -> crate::Result<ClosedLoop> {
        let k = self.gain.clone().unwrap_or_else(|| Gain::zeros(&self.sys));
        closed_loop_substitution(&self.sys, &self.noise, &k)
    }

    fn require_directions(&self) -> Result<(), InputError> {
        if self.noise.p() + self.noise.q() == 0 {
            return Err(InputError("field `A_dirs/B_dirs`: at least one direction is required".into()));
        }
        Ok(())
    }

    fn design_options(&self) -> DesignOptions {
        DesignOptions {
            gare: self.gare,
            bisect: self.bisect,
            grid_points: self.grid_samples.unwrap_or(DesignOptions::default().grid_points),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "msrobust", version, about = "Robust stability margins and robust LQR design for multiplicative-noise systems")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    format: Format,
    /// Relative convergence tolerance of the Riccati iteration.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Riccati iteration cap.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Frobenius norm at which the Riccati iteration is declared divergent.
    #[arg(long, global = true)]
    blowup: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    SharedUni,
    SharedBi,
    Aux,
    Scalar,
    ConsLin,
    ConsSimple,
}

impl From<MethodArg> for MarginMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::SharedUni => MarginMethod::SharedUni,
            MethodArg::SharedBi => MarginMethod::SharedBi,
            MethodArg::Aux => MarginMethod::AuxScaled,
            MethodArg::Scalar => MarginMethod::ScalarExact,
            MethodArg::ConsLin => MarginMethod::ConsLinearized,
            MethodArg::ConsSimple => MarginMethod::ConsSimple,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Ce,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LawArg {
    Gaussian,
    Rademacher,
}

#[derive(Args, Debug)]
struct MarginArgs {
    /// Margin method.
    #[arg(long, value_enum, default_value_t = MethodArg::SharedUni)]
    method: MethodArg,
    /// Test the auxiliary system with the file's variances instead of the tight ones.
    #[arg(long)]
    aux_given: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean-square stability of the closed loop (K from the file, else open loop).
    CheckMss { file: PathBuf },
    /// Solve the Riccati equation with the file's variances.
    SolveGare { file: PathBuf },
    /// Certified robustness margins of the closed loop.
    Margins {
        file: PathBuf,
        #[command(flatten)]
        margin: MarginArgs,
    },
    /// Controller design.
    Design {
        file: PathBuf,
        #[arg(long, value_enum)]
        algo: AlgoArg,
    },
    /// Grid search over the box certified by a margin method.
    VerifyGrid {
        file: PathBuf,
        #[command(flatten)]
        margin: MarginArgs,
        /// Samples per direction.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Exact and Monte Carlo second moments from identity initial covariance.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long, value_enum, default_value_t = LawArg::Gaussian)]
        law: LawArg,
    },
    /// Stability results for the built-in inverted pendulum.
    ReproducePendulum,
}

enum Failure {
    Input(String),
    Domain(crate::Error),
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::Input(e.0)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Domain(e)
    }
}

fn exit_code_for(e: &crate::Error) -> i32 {
    match e {
        Error::Dimension(_) | Error::Invalid(_) | Error::GridTooLarge { .. } => EXIT_INPUT,
        Error::NotMeanSquareStable { .. } | Error::Unstabilizable(_) => EXIT_INFEASIBLE,
        Error::EigenNonConvergence | Error::SingularPencil | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

/// A command's result: structured payload, table rendering, and whether it
/// describes a feasible outcome.
struct Report {
    json: serde_json::Value,
    table: String,
    feasible: bool,
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if !(1e-4..1e6).contains(&a) {
        return format!("{x:.5e}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float");
    format!("{rounded}")
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| sig6(*x)).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_matrix(m: &Matrix) -> String {
    let rows: Vec<String> = matops::to_rows(m).iter().map(|r| fmt_vec(r)).collect();
    format!("[{}]", rows.join(", "))
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key:<28}{value}");
}

fn certificate_table(out: &mut String, cert: &MarginCertificate) {
    line(out, "method", format!("{:?}", cert.method));
    line(out, "bidirectional", cert.margins.bidirectional);
    line(out, "eta", fmt_vec(&cert.margins.eta));
    line(out, "psi", fmt_vec(&cert.margins.psi));
    line(out, "y*", sig6(cert.y_star));
    line(out, "unbounded", cert.unbounded);
    if let Some(z) = &cert.zeta {
        line(out, "zeta", fmt_vec(z));
    }
}

fn design_table(res: &DesignResult) -> String {
    let mut out = String::new();
    line(&mut out, "algorithm", format!("{:?}", res.algorithm));
    line(&mut out, "K", fmt_matrix(res.k.matrix()));
    if let Some(z) = res.z_star {
        line(&mut out, "z*", sig6(z));
    }
    if let Some(y) = res.y_star {
        line(&mut out, "y*", sig6(y));
    }
    if let Some(cert) = &res.certificate {
        certificate_table(&mut out, cert);
    }
    line(&mut out, "rho(A+BK)", sig6(res.diagnostics.nominal_radius));
    if let Some(t) = res.diagnostics.true_radius {
        line(&mut out, "rho(A_bar+B_bar K)", sig6(t));
    }
    if let Some(g) = &res.diagnostics.grid {
        line(&mut out, "max rho over box", sig6(g.worst_rho));
        line(&mut out, "grid points", g.samples);
    }
    line(&mut out, "Riccati iterations", res.diagnostics.gare_iterations);
    out
}

fn margin_options(problem: &Problem, args: &MarginArgs) -> MarginOptions {
    MarginOptions {
        bisect: problem.bisect,
        aux_variances: if args.aux_given {
            AuxVariances::Given
        } else {
            AuxVariances::Tight
        },
    }
}

fn compute_certificate(problem: &Problem, args: &MarginArgs) -> Result<(ClosedLoop, MarginCertificate), Failure> {
    problem.require_directions()?;
    let cl = problem.closed_loop()?;
    let cert = margins::compute_margins(
        &cl,
        problem.costs.q(),
        &problem.structure,
        args.method.into(),
        &margin_options(problem, args),
    )?;
    Ok((cl, cert))
}

fn load(path: &Path, global: &GlobalArgs) -> Result<Problem, Failure> {
    let mut problem = ProblemFile::load(path)?.to_problem()?;
    if let Some(t) = global.tol {
        problem.gare.tol_rel = t;
    }
    if let Some(m) = global.max_iter {
        problem.gare.max_iter = m;
    }
    if let Some(b) = global.blowup {
        problem.gare.blowup = b;
    }
    Ok(problem)
}

/// Rows of the pendulum stability report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumColumn {
    pub name: String,
    pub k: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub bidirectional: Option<bool>,
    pub nominal_radius: f64,
    pub true_radius: f64,
    pub worst_box_radius: Option<f64>,
}

/// Open loop, certainty-equivalent, and both robust designs on the built-in pendulum.
pub fn pendulum_report(overrides: Option<GareOptions>) -> crate::Result<Vec<PendulumColumn>> {
    let p = instances::pendulum();
    let opts = DesignOptions {
        gare: overrides.unwrap_or(p.gare),
        ..DesignOptions::default()
    };
    let mut columns = vec![PendulumColumn {
        name: "Open-loop".into(),
        k: None,
        eta: None,
        bidirectional: None,
        nominal_radius: matops::spectral_radius(p.sys.a())?,
        true_radius: matops::spectral_radius(p.truth.a_bar())?,
        worst_box_radius: None,
    }];
    let designs = [
        ("Certainty-equivalent", design::certainty_equivalent(&p.sys, &p.costs, &opts)?),
        ("Algorithm 1", design::design_algorithm_1(&p.sys, &p.noise, &p.structure, &p.costs, &opts)?),
        ("Algorithm 2", design::design_algorithm_2(&p.sys, &p.noise, &p.structure, &p.costs, &opts)?),
    ];
    for (name, mut res) in designs {
        let true_radius = res.assess_truth(&p.truth)?;
        columns.push(PendulumColumn {
            name: name.into(),
            k: Some(res.k.matrix().iter().copied().collect()),
            eta: res.certificate.as_ref().map(|c| c.margins.eta[0]),
            bidirectional: res.certificate.as_ref().map(|c| c.margins.bidirectional),
            nominal_radius: res.diagnostics.nominal_radius,
            true_radius,
            worst_box_radius: res.diagnostics.grid.as_ref().map(|g| g.worst_rho),
        });
    }
    Ok(columns)
}

fn pendulum_table(columns: &[PendulumColumn]) -> String {
    let mut out = String::new();
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    let mut row = |label: &str, f: &dyn Fn(&PendulumColumn) -> String| {
        let _ = write!(out, "{label:<26}");
        for c in columns {
            let _ = write!(out, "{:>26}", f(c));
        }
        out.push('\n');
    };
    row("", &|c| c.name.clone());
    row("K", &|c| opt(c.k.as_ref().map(|k| fmt_vec(k))));
    row("margin mu_1", &|c| {
        opt(c.eta.map(|e| {
            if c.bidirectional == Some(true) {
                format!("|mu| < {}", sig6(e))
            } else {
                format!("0 <= mu < {}", sig6(e))
            }
        }))
    });
    row("rho(A+BK)", &|c| sig6(c.nominal_radius));
    row("rho(A_bar+B_bar K)", &|c| sig6(c.true_radius));
    row("max rho(A+BK+mu A_1)", &|c| opt(c.worst_box_radius.map(sig6)));
    out
}

fn execute(cli: &Cli) -> Result<Report, Failure> {
    let global = &cli.global;
    match &cli.command {
        Command::CheckMss { file } => {
            let problem = load(file, global)?;
            let cl = problem.closed_loop()?;
            let check = stability::is_mean_square_stable(&cl)?;
            let mut table = String::new();
            line(&mut table, "mean-square stable", check.mss);
            line(&mut table, "moment radius", sig6(check.moment_radius));
            Ok(Report {
                json: json!({ "mss": check.mss, "moment_radius": check.moment_radius }),
                table,
                feasible: check.mss,
            })
        }
        Command::SolveGare { file } => {
            let problem = load(file, global)?;
            let sol = gare::solve_gare(&problem.sys, &problem.noise, &problem.costs, &problem.gare)?;
            let feasible = sol.converged
                && stability::is_mean_square_stable(&closed_loop_substitution(&problem.sys, &problem.noise, &sol.k)?)?.mss;
            let mut table = String::new();
            line(&mut table, "termination", format!("{:?}", sol.termination));
            line(&mut table, "iterations", sol.iterations);
            line(&mut table, "stabilizing", feasible);
            if sol.converged {
                line(&mut table, "P", fmt_matrix(sol.p.as_matrix()));
                line(&mut table, "K", fmt_matrix(sol.k.matrix()));
            }
            Ok(Report {
                json: json!({
                    "termination": sol.termination,
                    "iterations": sol.iterations,
                    "converged": sol.converged,
                    "stabilizing": feasible,
                    "P": sol.p,
                    "K": sol.converged.then(|| sol.k.clone()),
                }),
                table,
                feasible,
            })
        }
        Command::Margins { file, margin } => {
            let problem = load(file, global)?;
            let (_, cert) = compute_certificate(&problem, margin)?;
            let mut table = String::new();
            certificate_table(&mut table, &cert);
            Ok(Report {
                json: serde_json::to_value(&cert).expect("serializable"),
                table,
                feasible: true,
            })
        }
        Command::Design { file, algo } => {
            let problem = load(file, global)?;
            let opts = problem.design_options();
            let mut res = match algo {
                AlgoArg::Ce => design::certainty_equivalent(&problem.sys, &problem.costs, &opts)?,
                AlgoArg::One | AlgoArg::Two => {
                    problem.require_directions()?;
                    let f = if *algo == AlgoArg::One {
                        design::design_algorithm_1
                    } else {
                        design::design_algorithm_2
                    };
                    f(&problem.sys, &problem.noise, &problem.structure, &problem.costs, &opts)?
                }
            };
            if let Some(truth) = &problem.truth {
                res.assess_truth(truth)?;
            }
            Ok(Report {
                table: design_table(&res),
                json: serde_json::to_value(&res).expect("serializable"),
                feasible: true,
            })
        }
        Command::VerifyGrid { file, margin, samples } => {
            let problem = load(file, global)?;
            let (cl, cert) = compute_certificate(&problem, margin)?;
            let report = verify::grid_verify(&cl, &cert.margins, *samples)?;
            let mut table = String::new();
            certificate_table(&mut table, &cert);
            line(&mut table, "grid points", report.samples);
            line(&mut table, "worst rho", sig6(report.worst_rho));
            line(&mut table, "worst mu", fmt_vec(&report.worst_mu));
            line(&mut table, "all stable", report.all_stable);
            Ok(Report {
                json: json!({ "certificate": cert, "grid": report }),
                table,
                feasible: report.all_stable,
            })
        }
        Command::Simulate {
            file,
            trials,
            seed,
            horizon,
            law,
        } => {
            let problem = load(file, global)?;
            let cl = problem.closed_loop()?;
            let cfg = MonteCarloConfig {
                horizon: *horizon,
                trials: *trials,
                seed: *seed,
                noise_law: match law {
                    LawArg::Gaussian => NoiseLaw::Gaussian,
                    LawArg::Rademacher => NoiseLaw::Rademacher,
                },
            };
            let trace = verify::simulate_second_moment(&cl, &cfg, &SymMatrix::identity(cl.n()))?;
            let mut table = String::new();
            let _ = writeln!(table, "{:>6}{:>16}{:>16}", "t", "tr exact", "tr estimate");
            for (t, (e, s)) in trace.exact.iter().zip(&trace.estimate).enumerate() {
                let _ = writeln!(table, "{t:>6}{:>16}{:>16}", sig6(e.trace()), sig6(s.trace()));
            }
            Ok(Report {
                json: serde_json::to_value(&trace).expect("serializable"),
                table,
                feasible: true,
            })
        }
        Command::ReproducePendulum => {
            let mut gare = instances::pendulum().gare;
            if let Some(t) = global.tol {
                gare.tol_rel = t;
            }
            if let Some(m) = global.max_iter {
                gare.max_iter = m;
            }
            if let Some(b) = global.blowup {
                gare.blowup = b;
            }
            let columns = pendulum_report(Some(gare))?;
            Ok(Report {
                table: pendulum_table(&columns),
                json: serde_json::to_value(&columns).expect("serializable"),
                feasible: true,
            })
        }
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let format = cli.global.format;
    match execute(&cli) {
        Ok(report) => {
            let _ = match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report.json).expect("json")),
                Format::Table => write!(out, "{}", report.table),
            };
            if report.feasible {
                EXIT_OK
            } else {
                EXIT_INFEASIBLE
            }
        }
        Err(Failure::Input(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Domain(e)) => {
            let code = exit_code_for(&e);
            if code == EXIT_INFEASIBLE {
                let payload = match &e {
                    Error::NotMeanSquareStable { moment_radius } => {
                        json!({ "feasible": false, "reason": e.to_string(), "moment_radius": moment_radius })
                    }
                    _ => json!({ "feasible": false, "reason": e.to_string() }),
                };
                let _ = match format {
                    Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&payload).expect("json")),
                    Format::Table => writeln!(out, "infeasible: {e}"),
                };
            } else {
                let _ = writeln!(err, "error: {e}");
            }
            code
        }
    }
}
