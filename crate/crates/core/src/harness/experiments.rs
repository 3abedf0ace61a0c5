//! Experiment drivers. Every trial is seeded from its cell coordinates, so any
//! sub-grid reproduces the matching cells of the full grid.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{BetaSpec, ExperimentConfig, ExperimentKind, ProblemKind, SolverName, SolverSpec};
use super::svg::{self, Series};
use super::table::{float, opt_float, write_file, Table};
use crate::composite::{PenaltyKind, ProblemInstance};
use crate::error::{invalid, Error, Result};
use crate::operators::DenseNoise;
use crate::problems::{self, SensingSpec};
use crate::proxsub::StepPenalty;
use crate::regularity::{audit_instance, estimate_rip};
use crate::rng;
use crate::solvers::{self, SolveTrace, SolverConfig, SubproblemRule};

/// Matrix completion `epsilon` when the config gives none.
pub const DEFAULT_MATCOMP_EPS: f64 = 0.01;
/// Robust PCA row-norm `gamma` when the config gives none.
pub const DEFAULT_RPCA_GAMMA: f64 = 10.0;
/// Samples used to estimate `kappa2` for `beta = "kappa2-hat"`.
pub const BETA_SAMPLES: usize = 500;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    /// Write wall-clock columns; off for byte-level determinism checks.
    pub timing: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// One point of the configured grid. Axes that do not apply to `kind` are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub kind: ProblemKind,
    pub r: usize,
    pub m_multiplier: Option<f64>,
    pub p: Option<f64>,
    pub p_fail: Option<f64>,
    pub delta: Option<f64>,
    pub tau: Option<f64>,
}

fn bits(v: Option<f64>) -> u64 {
    v.map_or(u64::MAX, f64::to_bits)
}

impl Cell {
    /// `hash(base_seed, cell coordinates, trial)`.
    pub fn trial_seed(&self, base: u64, trial: usize) -> u64 {
        let coords = [
            self.kind as u64,
            self.r as u64,
            bits(self.m_multiplier),
            bits(self.p),
            bits(self.p_fail),
            bits(self.delta),
            bits(self.tau),
            trial as u64,
        ];
        rng::derive_seed_indexed(base, "cell", &coords)
    }

    pub fn label(&self) -> String {
        let mut s = format!("{} r={}", self.kind.name(), self.r);
        let mut add = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                s.push_str(&format!(" {name}={v}"));
            }
        };
        add("p", self.p);
        add("p_fail", self.p_fail);
        add("delta", self.delta);
        add("tau", self.tau);
        s
    }

    fn columns(&self, m: usize) -> Vec<String> {
        vec![
            self.kind.name().to_string(),
            self.r.to_string(),
            m.to_string(),
            opt_float(self.p),
            opt_float(self.p_fail),
            opt_float(self.delta),
            opt_float(self.tau),
        ]
    }
}

const CELL_HEADER: [&str; 7] = ["kind", "r", "m", "p", "p_fail", "delta", "tau"];

fn with_cell_header(tail: &[&'static str]) -> Vec<&'static str> {
    let mut h = vec!["cell"];
    h.extend_from_slice(&CELL_HEADER);
    h.extend_from_slice(&["trial", "seed"]);
    h.extend_from_slice(tail);
    h
}

/// Cartesian product of the grid axes that apply to each problem kind, in config order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let p = &cfg.problem;
    let some = |v: Vec<f64>| v.into_iter().map(Some).collect::<Vec<_>>();
    let mut out = Vec::new();
    for kind in p.kind.values() {
        let sensing = kind.sensing_ensemble().is_some();
        let matcomp = kind == ProblemKind::MatrixCompletion;
        let none = vec![None];
        let mults = if sensing { some(p.m_multiplier.values()) } else { none.clone() };
        let ps = if matcomp { some(p.p.values()) } else { none.clone() };
        let fails = if sensing { some(p.p_fail.values()) } else { none.clone() };
        let deltas = if sensing || matcomp { some(p.dense_noise.values()) } else { none.clone() };
        let taus = if kind.is_rpca() { some(p.tau.values()) } else { none.clone() };
        for r in p.r.values() {
            for &m_multiplier in &mults {
                for &pp in &ps {
                    for &p_fail in &fails {
                        for &delta in &deltas {
                            for &tau in &taus {
                                out.push(Cell { kind, r, m_multiplier, p: pp, p_fail, delta, tau });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn default_penalty(kind: ProblemKind, solver: Option<&SolverSpec>) -> PenaltyKind {
    if solver.is_some_and(|s| s.name == SolverName::GradientDescent) {
        return PenaltyKind::SquaredL2;
    }
    match kind {
        ProblemKind::MatrixCompletion | ProblemKind::RobustPcaEuclidean => PenaltyKind::Frobenius,
        ProblemKind::RobustPca => PenaltyKind::EntrywiseL1,
        _ => PenaltyKind::ScaledL1,
    }
}

/// Builds the instance for one trial.
pub fn build_instance(cfg: &ExperimentConfig, cell: &Cell, seed: u64) -> Result<ProblemInstance> {
    let p = &cfg.problem;
    let penalty = p.penalty.unwrap_or_else(|| default_penalty(cell.kind, cfg.solver.as_ref()));
    let dense = match cell.delta {
        Some(d) if d > 0.0 => DenseNoise::Scaled { delta: d },
        _ => DenseNoise::None,
    };
    let inst_seed = rng::derive_seed(seed, "instance");
    if let Some(kind) = cell.kind.sensing_ensemble() {
        let mult = cell.m_multiplier.expect("sensing cells carry a multiplier");
        let spec = SensingSpec {
            kind,
            d1: p.d1,
            d2: cfg.d2(),
            r: cell.r,
            m: (mult * (cell.r * p.d1) as f64).round().max(1.0) as usize,
            p_fail: cell.p_fail.unwrap_or(0.0),
            outlier_model: p.outlier_model,
            dense_noise: dense,
            penalty,
        };
        return problems::sensing_instance(&spec, inst_seed);
    }
    match cell.kind {
        ProblemKind::MatrixCompletion => {
            problems::matcomp_instance(p.d1, cell.r, cell.p.unwrap_or(1.0), p.nu, penalty, dense, inst_seed)
        }
        ProblemKind::RobustPca => {
            problems::rpca_l1_instance(p.d1, cell.r, cell.tau.unwrap_or(0.0), p.sigma, p.row_ball_factor, inst_seed)?
                .with_penalty(penalty)
        }
        ProblemKind::RobustPcaEuclidean => {
            problems::rpca_euclidean_instance(p.d1, cell.r, cell.tau.unwrap_or(0.0), p.sigma, p.nu, inst_seed)?
                .with_penalty(penalty)
        }
        _ => unreachable!("sensing kinds handled above"),
    }
}

/// Upper RIP estimate in the instance's own norm.
pub fn kappa2_hat(inst: &ProblemInstance, seed: u64) -> Result<f64> {
    let norm = match inst.penalty {
        PenaltyKind::ScaledL2 => PenaltyKind::ScaledL2,
        _ => PenaltyKind::ScaledL1,
    };
    Ok(estimate_rip(&inst.ensemble, inst.rank, norm, BETA_SAMPLES, rng::derive_seed(seed, "beta"))?.1)
}

fn step_penalty(spec: &SolverSpec, cell: &Cell, inst: &ProblemInstance, seed: u64) -> Result<StepPenalty> {
    if let Some(p) = spec.penalty {
        return Ok(p);
    }
    Ok(match cell.kind {
        ProblemKind::MatrixCompletion => {
            let eps = spec.eps.unwrap_or(DEFAULT_MATCOMP_EPS);
            let p = cell.p.unwrap_or(1.0);
            StepPenalty::QuadPlusLinear { a: (p * (1.0 + eps)).sqrt(), b: (p * eps).sqrt() }
        }
        ProblemKind::RobustPca => StepPenalty::RowNormSquared { gamma: spec.gamma.unwrap_or(DEFAULT_RPCA_GAMMA) },
        _ => StepPenalty::Quadratic {
            beta: match &spec.beta {
                Some(BetaSpec::Value(b)) => *b,
                _ => kappa2_hat(inst, seed)?,
            },
        },
    })
}

fn solver_config(spec: &SolverSpec, cell: &Cell, seed: u64, keep_going: bool) -> SolverConfig {
    let mut cfg = SolverConfig::new(spec.max_iters.unwrap_or_else(|| spec.default_max_iters()));
    if let Some(s) = spec.stop_rel_error {
        cfg.stop_rel_error = s;
    }
    if keep_going {
        cfg.stop_rel_error = f64::MIN_POSITIVE;
    }
    cfg.record_every = spec.record_every.unwrap_or(1);
    cfg.seed = seed;
    cfg.min_f = spec.min_f;
    cfg.subproblem = spec.subproblem.unwrap_or(if cell.kind == ProblemKind::RobustPca {
        SubproblemRule::harmonic()
    } else {
        SubproblemRule::default()
    });
    cfg
}

/// Runs the configured solver from the configured initialization.
pub fn run_trial(cfg: &ExperimentConfig, cell: &Cell, trial: usize, keep_going: bool) -> Result<TrialOutcome> {
    let spec = cfg.solver.as_ref().ok_or_else(|| invalid("solver required"))?;
    let seed = cell.trial_seed(cfg.base_seed, trial);
    let inst = build_instance(cfg, cell, seed)?;
    let x0 = solvers::initialize(&inst.truth.point, cfg.init, rng::derive_seed(seed, "init"))?;
    let scfg = solver_config(spec, cell, seed, keep_going);
    let trace = match spec.name {
        SolverName::Polyak => solvers::polyak(&inst, &x0, &scfg)?,
        SolverName::Geometric => {
            solvers::geometric(&inst, &x0, spec.lambda.unwrap_or(1.0), spec.q.unwrap_or(0.98), &scfg)?
        }
        SolverName::ProxLinear => {
            let pen = step_penalty(spec, cell, &inst, seed)?;
            solvers::prox_linear(&inst, &x0, &pen, &scfg)?
        }
        SolverName::GradientDescent => {
            let rule = spec.step.ok_or_else(|| invalid("gradient descent needs a step rule"))?;
            solvers::gradient_descent(&inst, &x0, rule, &scfg)?
        }
    };
    Ok(TrialOutcome { trial, seed, m: inst.m(), trace })
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub m: usize,
    pub trace: SolveTrace,
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Runs every (cell, trial) pair; results come back in work-list order.
fn run_all(cfg: &ExperimentConfig, cells: &[Cell], opts: &RunOptions, keep_going: impl Fn(&Cell) -> bool + Sync) -> Result<Vec<(usize, TrialOutcome)>> {
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    pool(opts.threads)?.install(|| {
        work.par_iter()
            .map(|&(c, t)| run_trial(cfg, &cells[c], t, keep_going(&cells[c])).map(|o| (c, o)))
            .collect()
    })
}

fn metadata(table: &mut Table, cfg: &ExperimentConfig) {
    table.meta("generator", format!("lowrank {}", env!("CARGO_PKG_VERSION")));
    table.meta("experiment", cfg.experiment.name());
    table.meta("base_seed", cfg.base_seed);
    table.meta("config", serde_json::to_string(cfg).unwrap_or_default());
}

fn out_path(cfg: &ExperimentConfig, opts: &RunOptions, suffix: &str, ext: &str) -> PathBuf {
    let stem = cfg.output.prefix.clone().unwrap_or_else(|| cfg.experiment.name().to_string());
    opts.out_dir.join(format!("{stem}{suffix}.{ext}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

fn trace_table(cfg: &ExperimentConfig, cells: &[Cell], results: &[(usize, TrialOutcome)], opts: &RunOptions) -> Table {
    let mut t = Table::new(&with_cell_header(&[
        "k", "objective", "rel_error", "distance", "step", "sub_iters", "sub_gap", "elapsed",
    ]));
    metadata(&mut t, cfg);
    for (c, o) in results {
        for rec in &o.trace.records {
            let mut row = vec![c.to_string()];
            row.extend(cells[*c].columns(o.m));
            row.extend([
                o.trial.to_string(),
                o.seed.to_string(),
                rec.k.to_string(),
                float(rec.objective),
                float(rec.rel_error),
                float(rec.distance),
                float(rec.step),
                rec.sub_iters.map(|v| v.to_string()).unwrap_or_default(),
                opt_float(rec.sub_gap),
                if opts.timing { float(rec.elapsed) } else { String::new() },
            ]);
            t.push(row);
        }
    }
    t
}

/// One series per cell, drawn from its first trial.
fn first_trial_series(cells: &[Cell], results: &[(usize, TrialOutcome)]) -> Vec<Series> {
    cells
        .iter()
        .enumerate()
        .filter_map(|(c, cell)| {
            let (_, o) = results.iter().find(|(rc, o)| *rc == c && o.trial == 0)?;
            Some(Series {
                label: cell.label(),
                points: o.trace.records.iter().map(|r| (r.k as f64, r.rel_error)).collect(),
            })
        })
        .collect()
}

pub fn run_convergence(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let cells = cells(cfg);
    let results = run_all(cfg, &cells, opts, |_| false)?;
    ensure_dir(&opts.out_dir)?;
    let mut out = RunOutput::default();

    let traces = trace_table(cfg, &cells, &results, opts);
    let path = out_path(cfg, opts, "", "csv");
    traces.write(&path)?;
    out.files.push(path);

    let mut summary = Table::new(&with_cell_header(&["status", "iterations", "final_rel_error", "unconverged_subproblems"]));
    metadata(&mut summary, cfg);
    for (c, o) in &results {
        let mut row = vec![c.to_string()];
        row.extend(cells[*c].columns(o.m));
        row.extend([
            o.trial.to_string(),
            o.seed.to_string(),
            o.trace.status.name().to_string(),
            o.trace.iterations.to_string(),
            float(o.trace.final_rel_error()),
            o.trace.unconverged_subproblems.to_string(),
        ]);
        summary.push(row);
    }
    let path = out_path(cfg, opts, "_summary", "csv");
    summary.write(&path)?;
    out.files.push(path);

    let solver = cfg.solver.as_ref().map_or("", |s| s.name.name());
    let svg = svg::log_line_plot(&format!("convergence ({solver})"), "iteration k", "relative error", &first_trial_series(&cells, &results));
    let path = out_path(cfg, opts, "", "svg");
    write_file(&path, &svg)?;
    out.files.push(path);

    let converged = results.iter().filter(|(_, o)| o.trace.converged()).count();
    out.lines.push(format!("{converged}/{} runs converged", results.len()));
    Ok(out)
}

/// Name and value of the second phase-transition axis for a cell.
fn phase_axis(cell: &Cell) -> (&'static str, f64) {
    match cell.kind {
        ProblemKind::MatrixCompletion => ("p", cell.p.unwrap_or(f64::NAN)),
        k if k.is_rpca() => ("tau", cell.tau.unwrap_or(f64::NAN)),
        _ => ("p_fail", cell.p_fail.unwrap_or(f64::NAN)),
    }
}

/// Aggregated phase-transition cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub axis1: f64,
    pub axis2: f64,
    pub successes: usize,
    pub trials: usize,
    pub median_iters: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_phase_grid(cfg: &ExperimentConfig) -> Result<()> {
    let p = &cfg.problem;
    let kinds = p.kind.values();
    if kinds.len() != 1 {
        return Err(Error::Config("problem.kind: a phase transition uses one problem kind".into()));
    }
    let kind = kinds[0];
    let single = |name: &str, n: usize| {
        if n > 1 {
            Err(Error::Config(format!("problem.{name}: only r and the {} axis may vary", phase_axis(&Cell {
                kind,
                r: 1,
                m_multiplier: None,
                p: None,
                p_fail: None,
                delta: None,
                tau: None,
            }).0)))
        } else {
            Ok(())
        }
    };
    if kind.sensing_ensemble().is_some() {
        single("m_multiplier", p.m_multiplier.values().len())?;
    }
    if !kind.is_rpca() {
        single("dense_noise", p.dense_noise.values().len())?;
    }
    Ok(())
}

pub fn phase_grid(cfg: &ExperimentConfig, cells: &[Cell], results: &[(usize, TrialOutcome)]) -> Vec<GridCell> {
    let mut grid: Vec<GridCell> = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let runs: Vec<&TrialOutcome> = results.iter().filter(|(rc, _)| *rc == c).map(|(_, o)| o).collect();
            let ok: Vec<f64> = runs.iter().filter(|o| o.trace.converged()).map(|o| o.trace.iterations as f64).collect();
            GridCell {
                axis1: cell.r as f64,
                axis2: phase_axis(cell).1,
                successes: ok.len(),
                trials: cfg.trials,
                median_iters: median(ok),
            }
        })
        .collect();
    grid.sort_by(|a, b| a.axis1.total_cmp(&b.axis1).then(a.axis2.total_cmp(&b.axis2)));
    grid
}

pub fn run_phase_transition(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    check_phase_grid(cfg)?;
    let cells = cells(cfg);
    let results = run_all(cfg, &cells, opts, |_| false)?;
    let grid = phase_grid(cfg, &cells, &results);
    ensure_dir(&opts.out_dir)?;
    let mut out = RunOutput::default();
    let axis2 = phase_axis(&cells[0]).0;

    let mut t = Table::new(&["axis1", "axis2", "successes", "trials", "median_iters"]);
    metadata(&mut t, cfg);
    t.meta("axis1", "r");
    t.meta("axis2", axis2);
    for g in &grid {
        t.push(vec![float(g.axis1), float(g.axis2), g.successes.to_string(), g.trials.to_string(), float(g.median_iters)]);
    }
    let path = out_path(cfg, opts, "", "csv");
    t.write(&path)?;
    out.files.push(path);

    let mut xs: Vec<f64> = grid.iter().map(|g| g.axis2).collect();
    let mut ys: Vec<f64> = grid.iter().map(|g| g.axis1).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut rates = vec![vec![f64::NAN; xs.len()]; ys.len()];
    for g in &grid {
        let i = ys.iter().position(|v| *v == g.axis1).expect("axis value present");
        let j = xs.iter().position(|v| *v == g.axis2).expect("axis value present");
        rates[i][j] = g.successes as f64 / g.trials as f64;
    }
    let kind = cells[0].kind.name();
    let svg = svg::heatmap(&format!("recovery rate ({kind})"), axis2, "r", &xs, &ys, &rates);
    let path = out_path(cfg, opts, "", "svg");
    write_file(&path, &svg)?;
    out.files.push(path);

    for g in &grid {
        out.lines.push(format!("r={} {axis2}={}: {}/{}", g.axis1, g.axis2, g.successes, g.trials));
    }
    Ok(out)
}

pub fn run_rip_audit(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let cells = cells(cfg);
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    let audit = &cfg.audit;
    let rows: Vec<Vec<String>> = pool(opts.threads)?.install(|| {
        work.par_iter()
            .map(|&(c, trial)| {
                let cell = &cells[c];
                let seed = cell.trial_seed(cfg.base_seed, trial);
                let inst = build_instance(cfg, cell, seed)?;
                let radius = audit.radius * inst.truth.point.norm().max(f64::MIN_POSITIVE);
                let rep = audit_instance(&inst, audit.norm, audit.n_samples, radius, rng::derive_seed(seed, "audit"))?;
                let mut row = vec![c.to_string()];
                row.extend(cell.columns(inst.m()));
                row.extend([
                    trial.to_string(),
                    seed.to_string(),
                    float(rep.kappa1_hat),
                    float(rep.kappa2_hat),
                    float(rep.kappa3_hat),
                    float(rep.rho_hat),
                    float(rep.mu_hat),
                    float(rep.l_hat),
                    rep.n_samples.to_string(),
                    audit.norm.name().to_string(),
                ]);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    ensure_dir(&opts.out_dir)?;
    let mut t = Table::new(&with_cell_header(&[
        "kappa1_hat", "kappa2_hat", "kappa3_hat", "rho_hat", "mu_hat", "l_hat", "n_samples", "norm_kind",
    ]));
    metadata(&mut t, cfg);
    t.meta("d1", cfg.problem.d1);
    t.meta("d2", cfg.d2());
    let n = rows.len();
    for row in rows {
        t.push(row);
    }
    let path = out_path(cfg, opts, "", "csv");
    t.write(&path)?;
    Ok(RunOutput { files: vec![path], lines: vec![format!("{n} audits")] })
}

/// Median error over the last tenth of the iterations (at least the final record).
pub fn plateau_level(trace: &SolveTrace) -> f64 {
    let last = trace.records.last().map_or(0, |r| r.k);
    let from = last - last / 10;
    median(trace.records.iter().filter(|r| r.k >= from).map(|r| r.rel_error).collect())
}

pub fn run_tolerance_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let cells = cells(cfg);
    // The stop rule would cut traces short of their plateau.
    let results = run_all(cfg, &cells, opts, |c| c.delta.is_some_and(|d| d > 0.0))?;
    ensure_dir(&opts.out_dir)?;
    let mut out = RunOutput::default();

    let traces = trace_table(cfg, &cells, &results, opts);
    let path = out_path(cfg, opts, "", "csv");
    traces.write(&path)?;
    out.files.push(path);

    let mut t = Table::new(&with_cell_header(&["plateau", "status", "iterations"]));
    metadata(&mut t, cfg);
    for (c, o) in &results {
        let mut row = vec![c.to_string()];
        row.extend(cells[*c].columns(o.m));
        row.extend([
            o.trial.to_string(),
            o.seed.to_string(),
            float(plateau_level(&o.trace)),
            o.trace.status.name().to_string(),
            o.trace.iterations.to_string(),
        ]);
        t.push(row);
        out.lines.push(format!("{} trial {}: plateau {:.3e}", cells[*c].label(), o.trial, plateau_level(&o.trace)));
    }
    let path = out_path(cfg, opts, "_plateaus", "csv");
    t.write(&path)?;
    out.files.push(path);

    let solver = cfg.solver.as_ref().map_or("", |s| s.name.name());
    let svg = svg::log_line_plot(&format!("recovery up to tolerance ({solver})"), "iteration k", "relative error", &first_trial_series(&cells, &results));
    let path = out_path(cfg, opts, "", "svg");
    write_file(&path, &svg)?;
    out.files.push(path);
    Ok(out)
}

/// Dispatches on `cfg.experiment`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    match cfg.experiment {
        ExperimentKind::Convergence => run_convergence(cfg, opts),
        ExperimentKind::PhaseTransition => run_phase_transition(cfg, opts),
        ExperimentKind::RipAudit => run_rip_audit(cfg, opts),
        ExperimentKind::ToleranceSweep => run_tolerance_sweep(cfg, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn grid_axes_follow_problem_kind() {
        let c = cfg(r#"{"experiment": "convergence",
            "problem": {"kind": ["bilinear", "matrix-completion"], "d1": 6, "r": [1, 2], "p_fail": [0.0, 0.1], "p": [0.3, 0.4, 0.5]},
            "solver": {"name": "polyak"}}"#);
        let cells = cells(&c);
        assert_eq!(cells.len(), 2 * 2 + 2 * 3);
        assert!(cells[..4].iter().all(|c| c.p.is_none() && c.p_fail.is_some()));
        assert!(cells[4..].iter().all(|c| c.p.is_some() && c.p_fail.is_none()));
    }

    #[test]
    fn seeds_depend_on_coordinates_only() {
        let full = cfg(r#"{"experiment": "phase-transition", "problem": {"kind": "bilinear", "d1": 6, "r": [1, 2], "p_fail": [0.0, 0.1]},
            "solver": {"name": "polyak"}}"#);
        let sub = cfg(r#"{"experiment": "phase-transition", "problem": {"kind": "bilinear", "d1": 6, "r": 2, "p_fail": 0.1},
            "solver": {"name": "polyak"}}"#);
        let a = cells(&full);
        let b = cells(&sub);
        assert_eq!(a[3], b[0]);
        assert_eq!(a[3].trial_seed(7, 4), b[0].trial_seed(7, 4));
        assert_ne!(a[3].trial_seed(7, 4), a[3].trial_seed(7, 5));
        assert_ne!(a[2].trial_seed(7, 4), a[3].trial_seed(7, 4));
    }

    #[test]
    fn median_of_even_and_empty() {
        assert_eq!(median(vec![3.0, 1.0, 2.0, 10.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
