//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "seed": 1,
//!   "trials": 20,
//!   "graph": { "n_nodes": 50, "rho": 0.1 },
//!   "problem": { "dim": 3, "obs_noise_var": 0.001, "design_kind": "gaussian" },
//!   "admm": { "c": [0.1, 1.0, 10.0], "max_iter": 2000 },
//!   "noise": { "model": "gaussian", "sigma_e": [0.001, 0.01], "delta": 0.0,
//!              "placement_mode": "analysis_faithful" },
//!   "output": { "csv_path": "sweep.csv", "svg_path": "sweep.svg" }
//! }
//! ```
//!
//! Optional fields: `graph.edges` (fixed edge list shared by all trials),
//! `problem.instance_path` (fixed problem instance in the replay format),
//! `admm.mu` (evaluate certificates at this `μ` instead of the grid optimum),
//! `output.svg_path`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::NoisePlacementMode;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseModel};
use crate::objective::DesignKind;
use crate::topology::{edge_count_for_ratio, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub graph: GraphConfig,
    pub problem: ProblemConfig,
    pub admm: AdmmConfig,
    pub noise: NoiseConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub n_nodes: usize,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    pub obs_noise_var: f64,
    pub design_kind: DesignKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    pub c: Vec<f64>,
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub model: NoiseKind,
    pub sigma_e: Vec<f64>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub placement_mode: NoisePlacementMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale sweep. The σ_e and c grids are illustrative defaults.
    pub fn desk() -> Self {
        ExperimentConfig {
            seed: 1,
            trials: 20,
            graph: GraphConfig {
                n_nodes: 50,
                rho: 0.1,
                edges: None,
            },
            problem: ProblemConfig {
                dim: 3,
                obs_noise_var: 1e-3,
                design_kind: DesignKind::Gaussian,
                instance_path: None,
            },
            admm: AdmmConfig {
                c: vec![0.1, 1.0, 10.0],
                max_iter: 2000,
                mu: None,
            },
            noise: NoiseConfig {
                model: NoiseKind::Gaussian,
                sigma_e: vec![1e-3, 1e-2],
                delta: 0.0,
                placement_mode: NoisePlacementMode::AnalysisFaithful,
            },
            output: OutputConfig {
                csv_path: PathBuf::from("sweep.csv"),
                svg_path: Some(PathBuf::from("sweep.svg")),
            },
        }
    }

    /// Overrides the network and problem with the 200-agent profile:
    /// N = 200, ρ = 0.04, n = 3, σ² = 1e-3, Gaussian design, 100 trials.
    pub fn apply_full_profile(&mut self) {
        self.trials = 100;
        self.graph = GraphConfig {
            n_nodes: 200,
            rho: 0.04,
            edges: None,
        };
        self.problem = ProblemConfig {
            dim: 3,
            obs_noise_var: 1e-3,
            design_kind: DesignKind::Gaussian,
            instance_path: None,
        };
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be ≥ 1".into());
        }
        if self.admm.max_iter == 0 {
            return bad("admm.max_iter must be ≥ 1".into());
        }
        if self.admm.c.is_empty() || self.noise.sigma_e.is_empty() {
            return bad("admm.c and noise.sigma_e must be non-empty".into());
        }
        if let Some(&c) = self.admm.c.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            return bad(format!("admm.c values must be positive, got {c}"));
        }
        if let Some(&s) = self
            .noise
            .sigma_e
            .iter()
            .find(|&&s| !(s >= 0.0 && s.is_finite()))
        {
            return bad(format!("noise.sigma_e values must be ≥ 0, got {s}"));
        }
        if has_duplicates(&self.admm.c) || has_duplicates(&self.noise.sigma_e) {
            return bad("admm.c and noise.sigma_e must not repeat values".into());
        }
        if let Some(mu) = self.admm.mu {
            if !(mu > 1.0) {
                return bad(format!("admm.mu must exceed 1, got {mu}"));
            }
        }
        NoiseModel::from_parts(self.noise.model, 0.0, self.noise.delta)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.problem.dim == 0 {
            return bad("problem.dim must be ≥ 1".into());
        }
        if !(self.problem.obs_noise_var >= 0.0) {
            return bad("problem.obs_noise_var must be ≥ 0".into());
        }
        let g = &self.graph;
        if g.n_nodes < 2 {
            return bad(format!("graph.n_nodes must be ≥ 2, got {}", g.n_nodes));
        }
        match &g.edges {
            Some(edges) => {
                self.fixed_graph()?;
                let _ = edges;
            }
            None => {
                if !(g.rho > 0.0 && g.rho <= 1.0) {
                    return bad(format!("graph.rho must lie in (0, 1], got {}", g.rho));
                }
                let e = edge_count_for_ratio(g.n_nodes, g.rho);
                if e < g.n_nodes - 1 {
                    return bad(format!(
                        "graph.rho={} gives {e} edges, fewer than N-1={}",
                        g.rho,
                        g.n_nodes - 1
                    ));
                }
            }
        }
        Ok(())
    }

    /// The configured fixed graph, if `graph.edges` is set.
    pub fn fixed_graph(&self) -> Result<Option<Graph>> {
        match &self.graph.edges {
            None => Ok(None),
            Some(edges) => {
                let pairs: Vec<_> = edges.iter().map(|e| (e[0], e[1])).collect();
                Graph::new(self.graph.n_nodes, &pairs)
                    .map(Some)
                    .map_err(|e| Error::Config(format!("graph.edges: {e}")))
            }
        }
    }

    /// Sweep cells `(c, σ_e)` in output order (sorted by `c`, then `σ_e`).
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut cs = self.admm.c.clone();
        let mut ss = self.noise.sigma_e.clone();
        cs.sort_by(f64::total_cmp);
        ss.sort_by(f64::total_cmp);
        cs.iter()
            .flat_map(|&c| ss.iter().map(move |&s| (c, s)))
            .collect()
    }

    pub fn noise_model(&self, sigma_e: f64) -> Result<NoiseModel> {
        NoiseModel::from_parts(self.noise.model, sigma_e, self.noise.delta)
    }
}

fn has_duplicates(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}
