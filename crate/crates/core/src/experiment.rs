//! Monte Carlo sweeps over `(c, σ_e)` cells.
//!
//! Every trial draws a fresh graph and problem from seeds derived from
//! `(seed, trial)`; every cell of that trial reuses them with its own noise
//! stream `(seed, trial, cell)`. Trials run in parallel, aggregation runs in
//! trial order, so results do not depend on the worker count.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::admm::{gnorm_distance, reference_point, DecentralizedSolver, NoisePlacementMode};
use crate::analysis::{certify, edc_mean, theory_constants, TheoryReport};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::noise::{derive_ez, NoiseModel, RandomStream};
use crate::objective::{
    aggregate_constants, centralized_solution, make_problem, ObjectiveSet, ProblemDocument,
};
use crate::topology::{build_arc_matrices, gen_connected_graph, spectral_summary, Graph};

/// Graph and problem shared by all cells of one trial.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub trial: usize,
    pub graph: Graph,
    pub objective: ObjectiveSet,
    pub true_x: DVector<f64>,
    pub x_central: DVector<f64>,
}

fn derive_seed(seed: u64, tag: &[u8; 8], trial: usize) -> u64 {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(trial as u64).to_le_bytes());
    key[16..24].copy_from_slice(tag);
    ChaCha20Rng::from_seed(key).next_u64()
}

pub fn graph_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, b"graph\0\0\0", trial)
}

pub fn problem_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, b"problem\0", trial)
}

pub fn trial_instance(cfg: &ExperimentConfig, trial: usize) -> Result<TrialInstance> {
    let graph = match cfg.fixed_graph()? {
        Some(g) => g,
        None => gen_connected_graph(cfg.graph.n_nodes, cfg.graph.rho, graph_seed(cfg.seed, trial))?,
    };
    let (objective, true_x) = match &cfg.problem.instance_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ProblemDocument::from_json(&text)?.into_problem()?
        }
        None => make_problem(
            graph.n_nodes(),
            cfg.problem.dim,
            cfg.problem.obs_noise_var,
            cfg.problem.design_kind,
            problem_seed(cfg.seed, trial),
        )?,
    };
    if objective.n_nodes() != graph.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: graph.n_nodes(),
            got: objective.n_nodes(),
            context: "problem instance nodes vs graph nodes",
        });
    }
    let x_central = centralized_solution(&objective)?;
    Ok(TrialInstance {
        trial,
        graph,
        objective,
        true_x,
        x_central,
    })
}

/// Certificate for one cell of a trial instance: at `mu` when given,
/// otherwise at the grid optimum.
pub fn theory_report(
    inst: &TrialInstance,
    c: f64,
    sigma_e: f64,
    mu: Option<f64>,
) -> Result<TheoryReport> {
    let spec = spectral_summary(&build_arc_matrices(&inst.graph))?;
    let (m_f, big_m_f) = aggregate_constants(&inst.objective)?;
    let report = match mu {
        Some(mu) => theory_constants(&spec, m_f, big_m_f, c, mu)?,
        None => certify(&spec, m_f, big_m_f, c)?,
    };
    Ok(report.with_sigma_e(sigma_e))
}

/// `E^{DC}` curve of one run, `max_iter + 1` entries starting at `k = 0`.
pub fn edc_curve(
    inst: &TrialInstance,
    c: f64,
    model: NoiseModel,
    mode: NoisePlacementMode,
    max_iter: usize,
    stream: RandomStream,
) -> Result<Vec<f64>> {
    let mut solver = DecentralizedSolver::new(&inst.graph, &inst.objective, c, model, mode, stream)?;
    let mut out = Vec::with_capacity(max_iter + 1);
    out.push(edc_mean(solver.x(), &inst.x_central)?);
    for _ in 0..max_iter {
        solver.step()?;
        let v = edc_mean(solver.x(), &inst.x_central)?;
        if !v.is_finite() {
            return Err(Error::SolveFailed(format!(
                "iterate diverged at k={}",
                solver.iteration()
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// One row of a single-run trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub gnorm_sq: f64,
    /// `‖xᵏ − x*‖₂` over the whole stack.
    pub x_err: f64,
    pub edc_mean: f64,
    /// `‖e_zᵏ‖ ≤ ‖x^{k+1} − x*‖`; absent on the last row.
    pub gate: Option<bool>,
}

/// Streams a single run, recording distances to the optimum.
pub fn trace_run(
    inst: &TrialInstance,
    c: f64,
    model: NoiseModel,
    mode: NoisePlacementMode,
    max_iter: usize,
    stream: RandomStream,
) -> Result<Vec<TraceRow>> {
    let r = reference_point(&inst.graph, &inst.objective)?;
    let mut solver = DecentralizedSolver::new(&inst.graph, &inst.objective, c, model, mode, stream)?;
    let row = |s: &DecentralizedSolver| -> Result<TraceRow> {
        let rec = s.record();
        Ok(TraceRow {
            k: s.iteration(),
            gnorm_sq: gnorm_distance(&rec, &r, c),
            x_err: (&rec.x - &r.x_star).norm(),
            edc_mean: edc_mean(&rec.x, &inst.x_central)?,
            gate: None,
        })
    };
    let mut rows = vec![row(&solver)?];
    for _ in 0..max_iter {
        let e_x = solver.step()?;
        let ez = derive_ez(&e_x, solver.arc_matrices())?.norm();
        let next = row(&solver)?;
        rows.last_mut().expect("non-empty").gate = Some(ez <= next.x_err);
        rows.push(next);
    }
    Ok(rows)
}

/// Aggregated curve of one `(c, σ_e)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub c: f64,
    pub sigma_e: f64,
    pub mean: Vec<f64>,
    /// Population standard deviation across trials.
    pub std: Vec<f64>,
    /// Summed solver time over all trials.
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub trials: usize,
    pub max_iter: usize,
    pub cells: Vec<CellSummary>,
}

/// Rayon pool size: explicit value, else `NCADMM_JOBS`, else rayon's default.
pub fn resolve_jobs(jobs: Option<usize>) -> Result<Option<usize>> {
    if let Some(j) = jobs {
        return if j == 0 {
            Err(Error::InvalidArgument("jobs must be ≥ 1".into()))
        } else {
            Ok(Some(j))
        };
    }
    match std::env::var("NCADMM_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&j| j > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("NCADMM_JOBS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<SweepResult> {
    cfg.validate()?;
    let cells = cfg.cells();
    let models = cells
        .iter()
        .map(|&(_, s)| cfg.noise_model(s))
        .collect::<Result<Vec<_>>>()?;
    let run_trial = |t: usize| -> Result<Vec<(Vec<f64>, Duration)>> {
        let inst = trial_instance(cfg, t)?;
        cells
            .iter()
            .zip(&models)
            .enumerate()
            .map(|(idx, (&(c, s), &model))| {
                let stream = RandomStream::new(cfg.seed)
                    .with_trial(t as u64)
                    .with_cell(idx as u64);
                let start = Instant::now();
                let curve = edc_curve(&inst, c, model, cfg.noise.placement_mode, cfg.admm.max_iter, stream)
                    .map_err(|e| Error::SolveFailed(format!("trial {t}, cell c={c}, sigma_e={s}: {e}")))?;
                Ok((curve, start.elapsed()))
            })
            .collect()
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = resolve_jobs(jobs)? {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let per_trial: Vec<Vec<(Vec<f64>, Duration)>> =
        pool.install(|| (0..cfg.trials).into_par_iter().map(run_trial).collect::<Result<_>>())?;

    let len = cfg.admm.max_iter + 1;
    let n = cfg.trials as f64;
    let summaries = cells
        .iter()
        .enumerate()
        .map(|(idx, &(c, sigma_e))| {
            let mut mean = vec![0.0; len];
            let mut wall_time = Duration::ZERO;
            for trial in &per_trial {
                let (curve, dt) = &trial[idx];
                wall_time += *dt;
                for (m, v) in mean.iter_mut().zip(curve) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; len];
            for trial in &per_trial {
                for ((acc, v), m) in var.iter_mut().zip(&trial[idx].0).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
            CellSummary {
                c,
                sigma_e,
                mean,
                std,
                wall_time,
            }
        })
        .collect();
    Ok(SweepResult {
        trials: cfg.trials,
        max_iter: cfg.admm.max_iter,
        cells: summaries,
    })
}

/// Certificates of every cell, evaluated on the trial-0 instance.
pub fn preflight(cfg: &ExperimentConfig) -> Result<Vec<Result<TheoryReport>>> {
    let inst = trial_instance(cfg, 0)?;
    Ok(cfg
        .cells()
        .into_iter()
        .map(|(c, s)| theory_report(&inst, c, s, cfg.admm.mu))
        .collect())
}
