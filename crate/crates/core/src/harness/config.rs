//! Experiment configuration, read from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::composite::PenaltyKind;
use crate::error::{Error, Result};
use crate::operators::{EnsembleKind, OutlierModel};
use crate::proxsub::StepPenalty;
use crate::solvers::{StepRule, SubproblemRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    PhaseTransition,
    RipAudit,
    ToleranceSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::PhaseTransition => "phase-transition",
            ExperimentKind::RipAudit => "rip-audit",
            ExperimentKind::ToleranceSweep => "tolerance-sweep",
        }
    }
}

/// Problem families the harness can generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    #[serde(rename = "gaussian-sensing")]
    GaussianSensing,
    #[serde(rename = "quadratic-I")]
    QuadraticI,
    #[serde(rename = "quadratic-II")]
    QuadraticII,
    Bilinear,
    MatrixCompletion,
    /// `||X X^T - W||_1` over a row ball.
    RobustPca,
    /// `||X X^T + S - W||_F` over the row ball and column l1 budgets.
    RobustPcaEuclidean,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::GaussianSensing => "gaussian-sensing",
            ProblemKind::QuadraticI => "quadratic-I",
            ProblemKind::QuadraticII => "quadratic-II",
            ProblemKind::Bilinear => "bilinear",
            ProblemKind::MatrixCompletion => "matrix-completion",
            ProblemKind::RobustPca => "robust-pca",
            ProblemKind::RobustPcaEuclidean => "robust-pca-euclidean",
        }
    }

    pub fn sensing_ensemble(self) -> Option<EnsembleKind> {
        match self {
            ProblemKind::GaussianSensing => Some(EnsembleKind::GaussianSensing),
            ProblemKind::QuadraticI => Some(EnsembleKind::QuadraticI),
            ProblemKind::QuadraticII => Some(EnsembleKind::QuadraticII),
            ProblemKind::Bilinear => Some(EnsembleKind::Bilinear),
            _ => None,
        }
    }

    pub fn is_rpca(self) -> bool {
        matches!(self, ProblemKind::RobustPca | ProblemKind::RobustPcaEuclidean)
    }
}

/// A scalar or a list in the JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn one<T>(v: T) -> OneOrMany<T> {
    OneOrMany::One(v)
}
fn default_kind() -> OneOrMany<ProblemKind> {
    one(ProblemKind::QuadraticII)
}
fn default_r() -> OneOrMany<usize> {
    one(1)
}
fn default_mult() -> OneOrMany<f64> {
    one(8.0)
}
fn default_zero() -> OneOrMany<f64> {
    one(0.0)
}
fn default_tau() -> OneOrMany<f64> {
    one(0.1)
}
fn default_p() -> OneOrMany<f64> {
    one(0.25)
}
fn default_sigma() -> f64 {
    1.0
}
fn default_c() -> f64 {
    2.0
}
fn default_trials() -> usize {
    50
}
fn default_init() -> f64 {
    0.5
}
fn default_samples() -> usize {
    1000
}
fn default_audit_radius() -> f64 {
    0.5
}
fn default_audit_norm() -> PenaltyKind {
    PenaltyKind::ScaledL1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_kind")]
    pub kind: OneOrMany<ProblemKind>,
    pub d1: usize,
    /// Defaults to `d1`.
    #[serde(default)]
    pub d2: Option<usize>,
    #[serde(default = "default_r")]
    pub r: OneOrMany<usize>,
    /// Measurements per `r * d1`.
    #[serde(default = "default_mult")]
    pub m_multiplier: OneOrMany<f64>,
    /// Observation probability for matrix completion.
    #[serde(default = "default_p")]
    pub p: OneOrMany<f64>,
    #[serde(default = "default_zero")]
    pub p_fail: OneOrMany<f64>,
    #[serde(default)]
    pub outlier_model: OutlierModel,
    /// Dense noise levels `delta` with `||e|| = delta * sigma_r(X_sharp)`.
    #[serde(default = "default_zero")]
    pub dense_noise: OneOrMany<f64>,
    /// Incoherence used for the row-ball radius; defaults to the truth's own.
    #[serde(default)]
    pub nu: Option<f64>,
    /// Corruption probability for robust PCA.
    #[serde(default = "default_tau")]
    pub tau: OneOrMany<f64>,
    /// Standard deviation of the sparse corruption values.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Row-ball inflation for the l1 robust PCA formulation.
    #[serde(default = "default_c")]
    pub row_ball_factor: f64,
    /// Overrides the family's default outer penalty.
    #[serde(default)]
    pub penalty: Option<PenaltyKind>,
}

/// Step size `beta` for the quadratic prox-linear penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Value(f64),
    /// `"kappa2-hat"`: the estimated upper RIP constant of the instance.
    Estimated(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Polyak,
    Geometric,
    ProxLinear,
    GradientDescent,
}

impl SolverName {
    pub fn name(self) -> &'static str {
        match self {
            SolverName::Polyak => "polyak",
            SolverName::Geometric => "geometric",
            SolverName::ProxLinear => "prox-linear",
            SolverName::GradientDescent => "gradient-descent",
        }
    }
}

/// Solver choice and parameters. Fields that do not belong to `name` are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub name: SolverName,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub stop_rel_error: Option<f64>,
    #[serde(default)]
    pub record_every: Option<usize>,
    /// Polyak and gradient descent: optimal value override.
    #[serde(default)]
    pub min_f: Option<f64>,
    /// Geometric: `alpha_k = lambda * q^k`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    /// Prox-linear: explicit step penalty; otherwise chosen from the problem family.
    #[serde(default)]
    pub penalty: Option<StepPenalty>,
    #[serde(default)]
    pub beta: Option<BetaSpec>,
    /// Prox-linear on matrix completion: `a = sqrt(p(1+eps))`, `b = sqrt(p eps)`.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Prox-linear on robust PCA: row-norm penalty parameter.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub subproblem: Option<SubproblemRule>,
    /// Gradient descent step rule.
    #[serde(default)]
    pub step: Option<StepRule>,
}

impl SolverSpec {
    pub fn new(name: SolverName) -> SolverSpec {
        SolverSpec {
            name,
            max_iters: None,
            stop_rel_error: None,
            record_every: None,
            min_f: None,
            lambda: None,
            q: None,
            penalty: None,
            beta: None,
            eps: None,
            gamma: None,
            subproblem: None,
            step: None,
        }
    }

    /// 5000 for first-order methods, 30 outer iterations for prox-linear.
    pub fn default_max_iters(&self) -> usize {
        match self.name {
            SolverName::ProxLinear => 30,
            _ => 5000,
        }
    }

    fn foreign_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut check = |present: bool, field: &'static str, allowed: &[SolverName]| {
            if present && !allowed.contains(&self.name) {
                out.push(field);
            }
        };
        use SolverName::*;
        check(self.min_f.is_some(), "min_f", &[Polyak, GradientDescent]);
        check(self.lambda.is_some(), "lambda", &[Geometric]);
        check(self.q.is_some(), "q", &[Geometric]);
        check(self.penalty.is_some(), "penalty", &[ProxLinear]);
        check(self.beta.is_some(), "beta", &[ProxLinear]);
        check(self.eps.is_some(), "eps", &[ProxLinear]);
        check(self.gamma.is_some(), "gamma", &[ProxLinear]);
        check(self.subproblem.is_some(), "subproblem", &[ProxLinear]);
        check(self.step.is_some(), "step", &[GradientDescent]);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_audit_norm")]
    pub norm: PenaltyKind,
    /// Sampling radius around the truth for `rho`, `mu` and `L`, relative to `||X_sharp||_F`.
    #[serde(default = "default_audit_radius")]
    pub radius: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { n_samples: default_samples(), norm: default_audit_norm(), radius: default_audit_radius() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// File name stem; defaults to the experiment name.
    #[serde(default)]
    pub prefix: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: Option<SolverSpec>,
    /// Relative initialization radius `delta`.
    #[serde(default = "default_init")]
    pub init: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn bad(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn nonempty<T: Clone>(field: &str, v: &OneOrMany<T>) -> Result<Vec<T>> {
    let vals = v.values();
    if vals.is_empty() {
        return Err(bad(field, "grid must be nonempty"));
    }
    Ok(vals)
}

fn all_in(field: &str, vals: &[f64], lo: f64, hi: f64, hi_open: bool) -> Result<()> {
    for &v in vals {
        let ok = v >= lo && if hi_open { v < hi } else { v <= hi };
        if !ok {
            let close = if hi_open { ')' } else { ']' };
            return Err(bad(field, format!("value {v} outside [{lo}, {hi}{close}")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses JSON; syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn d2(&self) -> usize {
        self.problem.d2.unwrap_or(self.problem.d1)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if self.trials == 0 {
            return Err(bad("trials", "must be at least 1"));
        }
        if p.d1 == 0 || self.d2() == 0 {
            return Err(bad("problem.d1", "dimensions must be positive"));
        }
        let kinds = nonempty("problem.kind", &p.kind)?;
        let ranks = nonempty("problem.r", &p.r)?;
        if ranks.iter().any(|&r| r == 0 || r > p.d1.min(self.d2())) {
            return Err(bad("problem.r", "ranks must lie in [1, min(d1, d2)]"));
        }
        let mult = nonempty("problem.m_multiplier", &p.m_multiplier)?;
        if mult.iter().any(|&v| !(v > 0.0)) {
            return Err(bad("problem.m_multiplier", "must be positive"));
        }
        all_in("problem.p", &nonempty("problem.p", &p.p)?, f64::MIN_POSITIVE, 1.0, false)?;
        all_in("problem.p_fail", &nonempty("problem.p_fail", &p.p_fail)?, 0.0, 0.5, true)?;
        all_in("problem.dense_noise", &nonempty("problem.dense_noise", &p.dense_noise)?, 0.0, f64::INFINITY, false)?;
        all_in("problem.tau", &nonempty("problem.tau", &p.tau)?, 0.0, 0.5, true)?;
        if !(p.sigma >= 0.0) || !(p.row_ball_factor > 0.0) {
            return Err(bad("problem.sigma", "sigma must be nonnegative and row_ball_factor positive"));
        }
        if p.nu.is_some_and(|nu| !(nu > 0.0)) {
            return Err(bad("problem.nu", "must be positive"));
        }
        for k in &kinds {
            if p.d1 != self.d2() && matches!(k, ProblemKind::QuadraticI | ProblemKind::QuadraticII) {
                return Err(bad("problem.d2", format!("{} requires d1 = d2", k.name())));
            }
            if (k.is_rpca() || *k == ProblemKind::MatrixCompletion) && p.d1 != self.d2() {
                return Err(bad("problem.d2", format!("{} is symmetric; d2 must equal d1", k.name())));
            }
            if *k == ProblemKind::RobustPcaEuclidean && self.experiment == ExperimentKind::RipAudit {
                return Err(bad("problem.kind", "rip-audit needs a factor-only formulation"));
            }
        }
        if !(self.init >= 0.0) {
            return Err(bad("init", "must be nonnegative"));
        }
        match self.experiment {
            ExperimentKind::RipAudit => {
                if self.audit.n_samples == 0 || !(self.audit.radius > 0.0) {
                    return Err(bad("audit", "n_samples must be positive and radius > 0"));
                }
                if !matches!(self.audit.norm, PenaltyKind::ScaledL1 | PenaltyKind::ScaledL2) {
                    return Err(bad("audit.norm", "must be scaled-l1 or scaled-l2"));
                }
                if ranks.iter().any(|&r| 2 * r > p.d1.min(self.d2())) {
                    return Err(bad("problem.r", "rank-2r test matrices need 2r <= min(d1, d2)"));
                }
            }
            _ => self.validate_solver(&kinds)?,
        }
        Ok(())
    }

    fn validate_solver(&self, kinds: &[ProblemKind]) -> Result<()> {
        let solver = self.solver.as_ref().ok_or_else(|| bad("solver", "required for this experiment"))?;
        if let Some(f) = solver.foreign_fields().first() {
            return Err(bad(&format!("solver.{f}"), format!("not a parameter of {}", solver.name.name())));
        }
        if solver.max_iters == Some(0) {
            return Err(bad("solver.max_iters", "must be at least 1"));
        }
        if solver.stop_rel_error.is_some_and(|v| !(v > 0.0)) {
            return Err(bad("solver.stop_rel_error", "must be positive"));
        }
        if solver.record_every == Some(0) {
            return Err(bad("solver.record_every", "must be at least 1"));
        }
        match solver.name {
            SolverName::Geometric => {
                let (Some(lambda), Some(q)) = (solver.lambda, solver.q) else {
                    return Err(bad("solver", "geometric needs lambda and q"));
                };
                if !(lambda > 0.0) || !(q > 0.0 && q < 1.0) {
                    return Err(bad("solver", "geometric needs lambda > 0 and q in (0, 1)"));
                }
            }
            SolverName::ProxLinear => {
                if let Some(pen) = &solver.penalty {
                    pen.validate().map_err(|e| bad("solver.penalty", e))?;
                }
                match &solver.beta {
                    Some(BetaSpec::Value(b)) if !(*b > 0.0) => return Err(bad("solver.beta", "must be positive")),
                    Some(BetaSpec::Estimated(s)) if s != "kappa2-hat" => {
                        return Err(bad("solver.beta", format!("unknown estimate {s:?}; expected \"kappa2-hat\"")))
                    }
                    _ => {}
                }
                if solver.eps.is_some_and(|e| !(e > 0.0 && e < 1.0)) {
                    return Err(bad("solver.eps", "must lie in (0, 1)"));
                }
                if solver.gamma.is_some_and(|g| !(g > 0.0)) {
                    return Err(bad("solver.gamma", "must be positive"));
                }
                if kinds.contains(&ProblemKind::RobustPcaEuclidean)
                    && solver.penalty.is_none()
                    && !matches!(solver.beta, Some(BetaSpec::Value(_)))
                {
                    return Err(bad("solver.beta", "robust-pca-euclidean needs a numeric beta or an explicit penalty"));
                }
            }
            SolverName::GradientDescent => {
                let ok = match solver.step {
                    Some(StepRule::Constant { eta }) => eta > 0.0,
                    Some(StepRule::Polyak { tau }) => tau > 0.0,
                    None => return Err(bad("solver.step", "gradient descent needs a step rule")),
                };
                if !ok {
                    return Err(bad("solver.step", "step parameter must be positive"));
                }
                if self.problem.penalty.is_some_and(|p| !p.is_smooth()) {
                    return Err(bad("problem.penalty", "gradient descent needs squared-l2"));
                }
                if kinds.iter().any(|k| k.is_rpca()) {
                    return Err(bad("solver", "gradient descent is not available for robust PCA"));
                }
            }
            SolverName::Polyak => {}
        }
        if self.experiment == ExperimentKind::ToleranceSweep && kinds.iter().any(|k| k.is_rpca()) {
            return Err(bad("problem.kind", "dense noise is defined for sensing and matrix completion"));
        }
        Ok(())
    }
}
