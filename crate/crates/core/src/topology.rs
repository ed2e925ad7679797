//! Communication graphs and the arc-incidence algebra built on them.
//!
//! Every undirected edge `{i, j}` contributes two directed arcs `(i, j)` and
//! `(j, i)`. Arcs are indexed in the canonical order obtained by sorting all
//! directed pairs lexicographically, so arc `q` of a graph is always the same
//! pair regardless of how the edge set was produced.
//!
//! Only the base (`n = 1`) incidence matrices are stored. The `n`-dimensional
//! lift `M ⊗ I_n` is applied implicitly: stacked node vectors are held as
//! `N × n` matrices (one row per node), so `(M ⊗ I_n)ᵀ x` is just `Mᵀ X`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;

/// Default bound on connectivity rejection sampling.
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

/// Relative tolerance separating zero from non-zero spectrum. Applied to the
/// Gram eigenvalues: a σ-domain cut is swamped by eigensolver round-off,
/// since `√(2·1e-16·λ_max)` is already far above `1e-9·σ_max`.
pub const SINGULAR_REL_TOL: f64 = 1e-9;

/// Undirected, connected, simple graph on nodes `0..n_nodes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges may be given in either
    /// orientation; they are stored as sorted `(i, j)` with `i < j`.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidArgument(format!(
                "graph needs at least 2 nodes, got {n_nodes}"
            )));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge ({}, {})",
                    e.0, e.1
                )));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n_nodes];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let g = Graph {
            n_nodes,
            edges,
            neighbors,
        };
        if !g.is_connected() {
            return Err(Error::InvalidArgument("graph is not connected".into()));
        }
        Ok(g)
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n_nodes: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n_nodes).map(|i| (i - 1, i)).collect();
        Graph::new(n_nodes, &edges)
    }

    pub fn complete(n_nodes: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                edges.push((i, j));
            }
        }
        Graph::new(n_nodes, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_arcs(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Directed arcs in canonical (lexicographic) order.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        let mut arcs = Vec::with_capacity(self.n_arcs());
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                arcs.push((i, j));
            }
        }
        arcs
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n_nodes
    }

    /// Graph with node `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.n_nodes,
                got: perm.len(),
                context: "node permutation",
            });
        }
        let edges: Vec<_> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Graph::new(self.n_nodes, &edges)
    }

    /// Edge-list text: header `N E`, then one `i j` line per edge (0-based).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n_nodes, self.edges.len());
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Graph> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let (n, e) = parse_pair(header)?;
        let edges = lines.map(parse_pair).collect::<Result<Vec<_>>>()?;
        if edges.len() != e {
            return Err(Error::Parse(format!(
                "header declares {e} edges, found {}",
                edges.len()
            )));
        }
        Graph::new(n, &edges)
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let mut next = || -> Result<usize> {
        it.next()
            .ok_or_else(|| Error::Parse(format!("expected two integers: {line:?}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad integer in {line:?}")))
    };
    let a = next()?;
    let b = next()?;
    if it.next().is_some() {
        return Err(Error::Parse(format!("trailing data in {line:?}")));
    }
    Ok((a, b))
}

/// Number of edges for connectivity ratio `rho`: `round(rho * N(N-1)/2)`.
pub fn edge_count_for_ratio(n_nodes: usize, rho: f64) -> usize {
    let complete = (n_nodes * n_nodes.saturating_sub(1) / 2) as f64;
    (rho * complete).round() as usize
}

/// Uniformly random connected graph with `round(rho * E_c)` edges.
pub fn gen_connected_graph(n_nodes: usize, rho: f64, seed: u64) -> Result<Graph> {
    gen_connected_graph_with_attempts(n_nodes, rho, seed, DEFAULT_MAX_ATTEMPTS)
}

/// Rejection sampler behind [`gen_connected_graph`]: draws edge sets of the
/// target size uniformly until one is connected.
pub fn gen_connected_graph_with_attempts(
    n_nodes: usize,
    rho: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<Graph> {
    if n_nodes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 nodes, got {n_nodes}"
        )));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "connectivity ratio must lie in (0, 1], got {rho}"
        )));
    }
    let n_edges = edge_count_for_ratio(n_nodes, rho);
    if n_edges < n_nodes - 1 {
        return Err(Error::InvalidArgument(format!(
            "rho={rho} gives E={n_edges} < N-1={}; no connected graph exists",
            n_nodes - 1
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n_nodes)
        .flat_map(|i| ((i + 1)..n_nodes).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let mut chosen: Vec<usize> = index::sample(&mut rng, pairs.len(), n_edges).into_vec();
        chosen.sort_unstable();
        let edges: Vec<_> = chosen.iter().map(|&p| pairs[p]).collect();
        match Graph::new(n_nodes, &edges) {
            Ok(g) => return Ok(g),
            Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GraphGenerationFailed {
        n_nodes,
        n_edges,
        attempts: max_attempts,
    })
}

/// Base (`n = 1`) arc-incidence matrices `M₊ = A₁ᵀ + A₂ᵀ` and `M₋ = A₁ᵀ − A₂ᵀ`.
#[derive(Debug, Clone)]
pub struct ArcMatrices {
    /// N × 2E; column `q` for arc `(i, j)` has `+1` at rows `i` and `j`.
    pub m_plus: DMatrix<f64>,
    /// N × 2E; column `q` for arc `(i, j)` has `+1` at row `i`, `−1` at row `j`.
    pub m_minus: DMatrix<f64>,
    pub arcs: Vec<(usize, usize)>,
    pub degrees: Vec<usize>,
}

pub fn build_arc_matrices(g: &Graph) -> ArcMatrices {
    let arcs = g.arcs();
    let n = g.n_nodes();
    let mut m_plus = DMatrix::zeros(n, arcs.len());
    let mut m_minus = DMatrix::zeros(n, arcs.len());
    for (q, &(i, j)) in arcs.iter().enumerate() {
        m_plus[(i, q)] = 1.0;
        m_plus[(j, q)] = 1.0;
        m_minus[(i, q)] = 1.0;
        m_minus[(j, q)] = -1.0;
    }
    ArcMatrices {
        m_plus,
        m_minus,
        arcs,
        degrees: (0..n).map(|i| g.degree(i)).collect(),
    }
}

impl ArcMatrices {
    pub fn n_nodes(&self) -> usize {
        self.m_plus.nrows()
    }

    pub fn n_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// `½ M₊ M₊ᵀ = D + W`.
    pub fn signless_laplacian(&self) -> DMatrix<f64> {
        (&self.m_plus * self.m_plus.transpose()) * 0.5
    }

    /// `½ M₋ M₋ᵀ = D − W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        (&self.m_minus * self.m_minus.transpose()) * 0.5
    }

    /// `(M₊ ⊗ I)ᵀ x` for node-stacked `x` (N × n) → arc-stacked (2E × n).
    pub fn plus_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.m_plus.tr_mul(x)
    }

    pub fn minus_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.m_minus.tr_mul(x)
    }

    /// `(M₊ ⊗ I) z` for arc-stacked `z` (2E × n) → node-stacked (N × n).
    pub fn plus(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.m_plus * z
    }

    pub fn minus(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        &self.m_minus * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub sigma_max_mplus: f64,
    pub sigma_max_mminus: f64,
    pub sigma_min_nz_mminus: f64,
    /// Largest signless-Laplacian eigenvalue.
    pub l_max: f64,
    pub max_degree: usize,
}

/// Singular values through the Gram forms: `σ = √(2λ)` for `λ` an
/// eigenvalue of `½ M Mᵀ`. The smallest non-zero singular value of `M₋`
/// comes from the smallest eigenvalue above `SINGULAR_REL_TOL · λ_max`.
pub fn spectral_summary(am: &ArcMatrices) -> Result<SpectralSummary> {
    let q_eigs = sym_eigenvalues(&am.signless_laplacian(), "signless Laplacian")?;
    let l_eigs = sym_eigenvalues(&am.laplacian(), "Laplacian")?;
    let sigma = |lam: f64| (2.0 * lam.max(0.0)).sqrt();
    let l_max = q_eigs.last().copied().unwrap_or(0.0).max(0.0);
    let sigma_max_mplus = sigma(l_max);
    let l_top = l_eigs.last().copied().unwrap_or(0.0);
    let sigma_max_mminus = sigma(l_top);
    let cut = SINGULAR_REL_TOL * l_top;
    let sigma_min_nz_mminus = l_eigs
        .iter()
        .find(|&&l| l > cut)
        .map(|&l| sigma(l))
        .unwrap_or(0.0);
    Ok(SpectralSummary {
        sigma_max_mplus,
        sigma_max_mminus,
        sigma_min_nz_mminus,
        l_max,
        max_degree: am.degrees.iter().copied().max().unwrap_or(0),
    })
}

/// `l_max ≤ 2 · max degree` (holds for every graph).
pub fn check_laplacian_bound(s: &SpectralSummary) -> bool {
    s.l_max <= 2.0 * s.max_degree as f64 * (1.0 + 1e-12)
}
