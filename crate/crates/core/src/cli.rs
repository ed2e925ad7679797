//! Command-line front end.

use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::admm::{reference_point, run_decentralized, NoisePlacementMode};
use crate::analysis::{audit_contraction, ViolationKind};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{preflight, run_experiment, theory_report, trace_run, trial_instance};
use crate::noise::{NoiseKind, RandomStream};
use crate::objective::ProblemDocument;
use crate::output::{audit_csv, sweep_csv, sweep_svg, trace_csv, write_file};
use crate::topology::gen_connected_graph;

#[derive(Debug, Parser)]
#[command(name = "ncadmm", version, about = "Decentralized consensus ADMM with additive computation error")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a connected random graph and write it as an edge list.
    GenGraph {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the convergence certificate of each cell as one flat JSON object per line.
    Theory {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = parse_cell)]
        cell: Option<(f64, f64)>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Trace a single run of one cell.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `c,sigma_e`.
        #[arg(long, value_parser = parse_cell)]
        cell: (f64, f64),
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the problem instance as JSON.
        #[arg(long)]
        dump_problem: Option<PathBuf>,
    },
    /// Run the Monte Carlo sweep and write the aggregated CSV (and SVG).
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides `output.csv_path`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `output.svg_path`.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, env = "NCADMM_JOBS")]
        jobs: Option<usize>,
    },
    /// Audit the contraction inequalities along one run.
    Audit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = parse_cell)]
        cell: (f64, f64),
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config file plus per-field overrides.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON config; the desk-scale defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Apply the 200-agent profile (N=200, ρ=0.04, 100 trials).
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub model: Option<NoiseKind>,
    #[arg(long)]
    pub placement: Option<NoisePlacementMode>,
    /// Comma-separated penalty values.
    #[arg(long, value_delimiter = ',')]
    pub c: Option<Vec<f64>>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub sigma_e: Option<Vec<f64>>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
}

fn parse_cell(s: &str) -> std::result::Result<(f64, f64), String> {
    let (c, e) = s
        .split_once(',')
        .ok_or_else(|| format!("expected c,sigma_e but got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((num(c)?, num(e)?))
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::desk(),
        };
        if self.full {
            cfg.apply_full_profile();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.max_iter {
            cfg.admm.max_iter = v;
        }
        if let Some(v) = self.model {
            cfg.noise.model = v;
        }
        if let Some(v) = self.placement {
            cfg.noise.placement_mode = v;
        }
        if let Some(v) = &self.c {
            cfg.admm.c = v.clone();
        }
        if let Some(v) = &self.sigma_e {
            cfg.noise.sigma_e = v.clone();
        }
        if let Some(v) = self.delta {
            cfg.noise.delta = v;
        }
        if self.mu.is_some() {
            cfg.admm.mu = self.mu;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn check_trial(cfg: &ExperimentConfig, trial: usize) -> Result<()> {
    if trial >= cfg.trials {
        return Err(Error::InvalidArgument(format!(
            "trial {trial} out of range (config has {} trials)",
            cfg.trials
        )));
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenGraph { nodes, rho, seed, out } => {
            let g = gen_connected_graph(nodes, rho, seed)?;
            emit(out.as_ref(), &g.to_edge_list())
        }
        Command::Theory { cfg, cell, trial } => {
            let cfg = cfg.resolve()?;
            check_trial(&cfg, trial)?;
            let inst = trial_instance(&cfg, trial)?;
            let cells = match cell {
                Some(c) => vec![c],
                None => cfg.cells(),
            };
            let mut text = String::new();
            for (c, s) in cells {
                let report = theory_report(&inst, c, s, cfg.admm.mu)?;
                text.push_str(&serde_json::to_string(&report)?);
                text.push('\n');
            }
            emit(None, &text)
        }
        Command::Run { cfg, cell: (c, s), trial, out, dump_problem } => {
            let cfg = cfg.resolve()?;
            check_trial(&cfg, trial)?;
            let inst = trial_instance(&cfg, trial)?;
            if let Some(path) = &dump_problem {
                write_file(path, &ProblemDocument::from_problem(&inst.objective, &inst.true_x).to_json()?)?;
            }
            let stream = RandomStream::new(cfg.seed).with_trial(trial as u64);
            let rows = trace_run(
                &inst,
                c,
                cfg.noise_model(s)?,
                cfg.noise.placement_mode,
                cfg.admm.max_iter,
                stream,
            )?;
            emit(out.as_ref(), &trace_csv(&rows))
        }
        Command::Experiment { cfg, out, svg, jobs } => {
            let mut cfg = cfg.resolve()?;
            if let Some(p) = out {
                cfg.output.csv_path = p;
            }
            if svg.is_some() {
                cfg.output.svg_path = svg;
            }
            for report in preflight(&cfg)? {
                match report {
                    Ok(r) if r.certified() => eprintln!(
                        "c={} sigma_e={}: certified, delta={:.3e}, steady-state radius {:.3e} (sqrt) / {:.3e}",
                        r.c, r.sigma_e, r.delta, r.corollary_bound_sqrt, r.corollary_bound_stated
                    ),
                    Ok(r) => eprintln!(
                        "warning: c={} sigma_e={}: step-size condition fails (squared: {}, linear: {}); no certificate",
                        r.c, r.sigma_e, r.cond_squared, r.cond_linear
                    ),
                    Err(e) => eprintln!("warning: certificate unavailable: {e}"),
                }
            }
            let sweep = run_experiment(&cfg, jobs)?;
            for cell in &sweep.cells {
                eprintln!(
                    "c={} sigma_e={}: final mean E^DC {:.3e} ({:.2?} solver time)",
                    cell.c,
                    cell.sigma_e,
                    cell.mean.last().copied().unwrap_or(f64::NAN),
                    cell.wall_time
                );
            }
            write_file(&cfg.output.csv_path, &sweep_csv(&sweep))?;
            if let Some(path) = &cfg.output.svg_path {
                write_file(path, &sweep_svg(&sweep))?;
            }
            Ok(())
        }
        Command::Audit { cfg, cell: (c, s), trial, out } => {
            let cfg = cfg.resolve()?;
            check_trial(&cfg, trial)?;
            let inst = trial_instance(&cfg, trial)?;
            let report = theory_report(&inst, c, s, cfg.admm.mu)?;
            let traj = run_decentralized(
                &inst.graph,
                &inst.objective,
                c,
                cfg.noise_model(s)?,
                cfg.noise.placement_mode,
                cfg.admm.max_iter,
                RandomStream::new(cfg.seed).with_trial(trial as u64),
            )?;
            let r = reference_point(&inst.graph, &inst.objective)?;
            let audit = audit_contraction(&traj, &r, &report)?;
            eprintln!(
                "certified={} bound={:.6e} checked={} gate_switches={} contraction_violations={} primal_violations={}",
                report.certified(),
                audit.contraction_bound,
                audit.checked_steps(),
                audit.gate_switches(),
                audit.count(ViolationKind::Contraction),
                audit.count(ViolationKind::PrimalBound)
            );
            emit(out.as_ref(), &audit_csv(&audit))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_parser() {
        assert_eq!(parse_cell("0.1,1e-3").unwrap(), (0.1, 1e-3));
        assert!(parse_cell("0.1").is_err());
        assert!(parse_cell("a,b").is_err());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "ncadmm", "experiment", "--seed", "9", "--c", "0.5,2", "--model", "fixed_norm", "--full",
        ])
        .unwrap();
        let Command::Experiment { cfg, .. } = cli.command else { panic!() };
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.admm.c, vec![0.5, 2.0]);
        assert_eq!(cfg.noise.model, NoiseKind::FixedNorm);
        assert_eq!(cfg.graph.n_nodes, 200);
    }

    #[test]
    fn unknown_flag_is_rejected() {
        assert!(Cli::try_parse_from(["ncadmm", "run", "--cell", "1,0", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["ncadmm", "experiment", "--model", "laplace"]).is_err());
    }
}
