//! Experiment assembly, the optimization run with its artifacts, and the
//! finite-difference gradient check.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use otto::functionals::FunctionalKind;
use otto::geometry::{write_poly, Mode, Point};
use otto::optimize::{
    evaluate, mean_neighbor_distance, neighbor_graph, run, uniform_seeds, Design, Evaluation, IterRecord, OptParams,
    OptProblem, Physics, Snapshot,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ProblemKind, RunConfig};
use crate::svg::write_svg;

/// Optimization problem, driver parameters and initial design built from a
/// configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: OptProblem,
    pub params: OptParams,
    pub initial: Design,
}

fn labels(cfg: &RunConfig, names: &[String]) -> Vec<i32> {
    names.iter().filter_map(|n| cfg.label(n)).collect()
}

/// Builds the problem, the driver parameters and the initial design.
///
/// Free-boundary problems start from `n` seeds sampled uniformly in the
/// sample box with equal measures `vt / n`. Two-phase problems start from
/// `n` seeds sampled over the whole box with equal measures, the phase of
/// each cell given by the initial indicator of its seed.
pub fn build(cfg: &RunConfig) -> Result<Experiment> {
    let domain = cfg.domain().context("building the domain")?;
    let m = &cfg.materials;
    let dirichlet = labels(cfg, &cfg.dirichlet);
    let neumann_vec: Vec<(i32, Point)> = cfg.loads.iter().filter_map(|(n, g)| cfg.label(n).map(|l| (l, *g))).collect();
    let elastic = |objective| {
        (
            objective,
            Physics::Elasticity {
                lame: (m.lambda, m.mu),
                ersatz: m.ersatz,
                source: Point::zeros(),
                dirichlet: dirichlet.clone(),
                neumann: neumann_vec.clone(),
            },
        )
    };
    let (objective, physics) = match cfg.kind {
        ProblemKind::Perimeter => (FunctionalKind::Perimeter, Physics::Geometric),
        ProblemKind::Eigenvalue(k) => (FunctionalKind::DirichletEigenvalue(k), Physics::Eigen),
        ProblemKind::TwoPhaseConduction => (
            FunctionalKind::MeanTemperature,
            Physics::Conduction {
                gamma: (m.gamma0, m.gamma1),
                source: m.source,
                dirichlet: dirichlet.clone(),
                neumann: cfg.fluxes.iter().filter_map(|(n, g)| cfg.label(n).map(|l| (l, *g))).collect(),
            },
        ),
        ProblemKind::CantileverCompliance | ProblemKind::BridgeComplianceTopo => {
            elastic(FunctionalKind::ElasticCompliance)
        }
        ProblemKind::StressBridge => elastic(FunctionalKind::StressIntegral),
    };
    let two_phase = cfg.kind.is_two_phase();
    let mode = if two_phase { Mode::Classical } else { Mode::Modified };
    let problem = OptProblem {
        domain: domain.clone(),
        mode,
        objective,
        physics,
        // Free-boundary problems keep the measures fixed at `vt / n`.
        volume_target: if two_phase || cfg.update_measures { Some(cfg.vt) } else { None },
        anchor_label: if cfg.kind.is_elastic() { dirichlet.first().copied() } else { None },
    };
    let params = OptParams {
        iterations: cfg.iters,
        alpha_factor: cfg.alpha,
        seed_constraint: cfg.seed_constraint,
        update_seeds: cfg.update_seeds,
        update_measures: cfg.update_measures,
        n_arc: cfg.n_arc,
        lloyd_every: cfg.cadences.lloyd,
        resample_every: cfg.cadences.resample,
        islands_every: cfg.cadences.islands,
        topo_every: cfg.cadences.topo,
        max_halvings: cfg.max_halvings,
        rng_seed: cfg.rng_seed,
        ..Default::default()
    };
    let [x0, y0, x1, y1] = if two_phase { cfg.bbox } else { cfg.sample_box };
    let seeds = uniform_seeds(&domain, Point::new(x0, y0), Point::new(x1, y1), cfg.n, cfg.rng_seed)?;
    let (measures, material) = if two_phase {
        let material: Vec<bool> = seeds.iter().map(|&p| cfg.init.is_material(p)).collect();
        (vec![cfg.area() / cfg.n as f64; cfg.n], material)
    } else {
        (vec![cfg.vt / cfg.n as f64; cfg.n], vec![true; cfg.n])
    };
    if two_phase && !material.iter().any(|&m| m) {
        anyhow::bail!("the initial indicator selects no material cell");
    }
    let initial = Design::new(seeds, measures, material, &domain, mode);
    Ok(Experiment { problem, params, initial })
}

/// Final figures of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub iterations: usize,
    pub objective: f64,
    pub constraint_violation: f64,
    pub volume: f64,
    pub n: usize,
    pub stalled: bool,
    pub wall_seconds: f64,
}

impl Summary {
    /// Text written to `summary.txt`.
    pub fn render(&self) -> String {
        format!(
            "iterations = {}\nobjective = {:e}\nconstraint_violation = {:e}\nvolume = {:e}\nN = {}\nstalled = {}\n\
             wall_time_s = {:.3}\n",
            self.iterations,
            self.objective,
            self.constraint_violation,
            self.volume,
            self.n,
            self.stalled,
            self.wall_seconds
        )
    }
}

fn dump(dir: &Path, iter: usize, ev: &Evaluation) -> Result<()> {
    let path = dir.join(format!("diagram_{iter:04}.poly"));
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    let d = &ev.design;
    write_poly(&mut w, &ev.mesh, &d.seeds, &d.weights, &d.measures)?;
    w.flush()?;
    let path = dir.join(format!("snapshot_{iter:04}.svg"));
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_svg(&mut w, ev)?;
    w.flush()?;
    Ok(())
}

/// Runs the optimization and writes `history.csv`, the periodic
/// `diagram_%04d.poly` and `snapshot_%04d.svg` dumps (every
/// `snapshot_every` iterations, zero for none, plus the last iteration) and
/// `summary.txt` into `out`.
pub fn run_experiment(cfg: &RunConfig, out: &Path, snapshot_every: usize) -> Result<Summary> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let exp = build(cfg)?;
    let history_path = out.join("history.csv");
    let mut history = BufWriter::new(File::create(&history_path).context("creating history.csv")?);
    writeln!(history, "{}", IterRecord::CSV_HEADER)?;
    let last_iter = cfg.iters.saturating_sub(1);
    let mut observer = |snap: &Snapshot| -> otto::Result<()> {
        let io = |e: anyhow::Error| otto::OttoError::InvalidArgument(format!("{e:#}"));
        writeln!(history, "{}", snap.record.csv_row()).and_then(|_| history.flush()).map_err(|e| io(e.into()))?;
        let it = snap.record.iter;
        if (snapshot_every > 0 && it % snapshot_every == 0) || it == last_iter {
            dump(out, it, snap.evaluation).map_err(io)?;
        }
        Ok(())
    };
    let outcome = run(&exp.problem, &exp.params, exp.initial, &mut observer)?;
    drop(observer);
    history.flush()?;
    // A stalled run ends before the last iteration: dump its final state.
    if let Some(rec) = outcome.history.last() {
        if rec.iter != last_iter {
            dump(out, rec.iter, &outcome.last)?;
        }
    }
    let ev = &outcome.last;
    let summary = Summary {
        iterations: outcome.history.len(),
        objective: ev.objective,
        constraint_violation: ev.constraint.abs(),
        volume: ev.design.volume(),
        n: ev.design.len(),
        stalled: outcome.stalled,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    fs::write(out.join("summary.txt"), summary.render()).context("writing summary.txt")?;
    Ok(summary)
}

/// Directory for the artifacts: the command-line value, then the
/// configuration value, then `otto-out`.
pub fn output_dir(cli: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("otto-out"))
}

/// One finite-difference comparison of the design gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `"seeds"` or `"measures"`.
    pub block: &'static str,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

/// Relative tolerance of [`grad_test`].
pub const GRAD_TOLERANCE: f64 = 1e-3;

/// Newton tolerance of [`grad_test`], relative to the smallest measure.
pub const GRAD_NEWTON_TOL: f64 = 1e-11;

/// Compares the design gradient of the objective at the initial design
/// with central differences along `directions` random seed directions and
/// as many random measure directions (zero-sum for two-phase diagrams,
/// which keep the box area).
pub fn grad_test(exp: &Experiment, directions: usize, rng_seed: u64) -> Result<Vec<GradCheck>> {
    // Differences of size 1e-6 need weights far more accurate than the
    // optimization tolerance.
    let params = &OptParams { newton_rel_tol: GRAD_NEWTON_TOL, ..exp.params.clone() };
    let problem = &exp.problem;
    let ev = evaluate(problem, params, &exp.initial)?;
    let grad = ev.design_gradient(problem)?;
    let base = ev.design.clone();
    let n = base.len();
    let spacing = mean_neighbor_distance(&base.seeds, &neighbor_graph(&ev.diagram));
    let nu_mean = base.measures.iter().sum::<f64>() / n as f64;
    // A stream distinct from the seed sampling: directions correlated with
    // the seeds approach dilations, along which classical diagrams with
    // fixed measures do not change.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut checks = Vec::new();
    let objective = |d: &Design| -> Result<f64> { Ok(evaluate(problem, params, d)?.objective) };
    for _ in 0..directions {
        let dir: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let h = 1e-6 * spacing;
        let shifted = |sign: f64| {
            let mut d = base.clone();
            for (s, v) in d.seeds.iter_mut().zip(&dir) {
                *s += sign * h * v;
            }
            d
        };
        let fd = (objective(&shifted(1.0))? - objective(&shifted(-1.0))?) / (2.0 * h);
        let analytic: f64 = grad.seeds.iter().zip(&dir).map(|(g, v)| g.dot(v)).sum();
        checks.push(check("seeds", analytic, fd));
    }
    if params.update_measures || problem.volume_target.is_some() {
        for _ in 0..directions {
            let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if problem.mode == Mode::Classical {
                let mean = dir.iter().sum::<f64>() / n as f64;
                dir.iter_mut().for_each(|v| *v -= mean);
            }
            let h = 1e-6 * nu_mean;
            let shifted = |sign: f64| {
                let mut d = base.clone();
                for (m, v) in d.measures.iter_mut().zip(&dir) {
                    *m += sign * h * v;
                }
                d
            };
            let fd = (objective(&shifted(1.0))? - objective(&shifted(-1.0))?) / (2.0 * h);
            let analytic: f64 = grad.measures.iter().zip(&dir).map(|(g, v)| g * v).sum();
            checks.push(check("measures", analytic, fd));
        }
    }
    Ok(checks)
}

fn check(block: &'static str, analytic: f64, finite_difference: f64) -> GradCheck {
    let scale = analytic.abs().max(finite_difference.abs()).max(1e-12);
    GradCheck { block, analytic, finite_difference, relative_error: (analytic - finite_difference).abs() / scale }
}
