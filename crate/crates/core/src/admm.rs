//! Iteration engines for decentralized consensus ADMM with computation error.
//!
//! [`DecentralizedSolver`] runs the per-node algorithm: every node solves its
//! own small system using only its neighbors' exchanged values. Alongside the
//! local dual `αᵢ`, each node also accumulates the arc multipliers `β` of its
//! outgoing arcs, so G-norm diagnostics need no pseudo-inversion.
//!
//! [`MatrixFormSolver`] iterates the stacked recursion directly,
//!
//! ```text
//! ∇f(x⁺) + M₋β + (c/2)(M₋M₋ᵀ + M₊M₊ᵀ)x⁺ = cM₊(z + e_z)
//! β⁺ = β + (c/2)M₋ᵀx⁺
//! z⁺ = ½M₊ᵀx⁺
//! ```
//!
//! with one global factorization. It consumes the same error realization and
//! serves as the cross-check for the decentralized engine.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_pinv;
use crate::noise::{derive_ez, sample_stacked, NoiseModel, RandomStream};
use crate::objective::{centralized_solution, LocalSolver, ObjectiveSet};
use crate::topology::{build_arc_matrices, ArcMatrices, Graph};

/// Where the exchanged noisy values enter the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePlacementMode {
    /// `x̂ᵏ` (own value included) enters only the primal update; the dual
    /// update uses exact values. This is the stacked recursion above.
    #[default]
    AnalysisFaithful,
    /// Each node broadcasts one noisy value per iteration; neighbors reuse it
    /// in the dual update of iteration `k` and the primal update of `k + 1`.
    /// A node always uses its own exact value.
    Broadcast,
}

impl std::str::FromStr for NoisePlacementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analysis_faithful" => Ok(NoisePlacementMode::AnalysisFaithful),
            "broadcast" => Ok(NoisePlacementMode::Broadcast),
            other => Err(Error::InvalidArgument(format!("unknown placement mode {other:?}"))),
        }
    }
}

/// Node-stacked (`N × n`) and arc-stacked (`2E × n`) iterates at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub x: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

/// Error injected in the transition `k → k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedError {
    pub e_x: DMatrix<f64>,
    pub e_z: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States `0..=max_iter`.
    pub states: Vec<IterateRecord>,
    /// `injected[k]` perturbed the step from `states[k]` to `states[k + 1]`.
    pub injected: Vec<InjectedError>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn check_inputs(g: &Graph, obj: &ObjectiveSet, c: f64) -> Result<()> {
    if obj.n_nodes() != g.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: g.n_nodes(),
            got: obj.n_nodes(),
            context: "objective nodes vs graph nodes",
        });
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    Ok(())
}

fn initial_state(n: usize, n_arcs: usize, dim: usize) -> IterateRecord {
    IterateRecord {
        x: DMatrix::zeros(n, dim),
        alpha: DMatrix::zeros(n, dim),
        z: DMatrix::zeros(n_arcs, dim),
        beta: DMatrix::zeros(n_arcs, dim),
    }
}

/// Per-node engine.
#[derive(Debug, Clone)]
pub struct DecentralizedSolver<'a> {
    graph: &'a Graph,
    am: ArcMatrices,
    solvers: Vec<LocalSolver>,
    c: f64,
    model: NoiseModel,
    mode: NoisePlacementMode,
    stream: RandomStream,
    k: usize,
    x: DMatrix<f64>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    /// Outgoing arc indices of node `i`, aligned with `graph.neighbors(i)`.
    out_arcs: Vec<Vec<usize>>,
    /// Broadcast mode: the error attached to the values currently on the wire.
    pending: Option<DMatrix<f64>>,
}

impl<'a> DecentralizedSolver<'a> {
    pub fn new(
        graph: &'a Graph,
        obj: &ObjectiveSet,
        c: f64,
        model: NoiseModel,
        mode: NoisePlacementMode,
        stream: RandomStream,
    ) -> Result<Self> {
        check_inputs(graph, obj, c)?;
        let am = build_arc_matrices(graph);
        let solvers = (0..graph.n_nodes())
            .map(|i| LocalSolver::new(obj.local(i), graph.degree(i), c))
            .collect::<Result<Vec<_>>>()?;
        let mut out_arcs = vec![Vec::new(); graph.n_nodes()];
        for (q, &(i, _)) in am.arcs.iter().enumerate() {
            out_arcs[i].push(q);
        }
        let init = initial_state(graph.n_nodes(), am.n_arcs(), obj.dim());
        Ok(DecentralizedSolver {
            graph,
            am,
            solvers,
            c,
            model,
            mode,
            stream,
            k: 0,
            x: init.x,
            alpha: init.alpha,
            beta: init.beta,
            out_arcs,
            pending: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn arc_matrices(&self) -> &ArcMatrices {
        &self.am
    }

    pub fn record(&self) -> IterateRecord {
        IterateRecord {
            x: self.x.clone(),
            alpha: self.alpha.clone(),
            z: self.am.plus_t(&self.x) * 0.5,
            beta: self.beta.clone(),
        }
    }

    /// One synchronous round. Returns the error realization `e_xᵏ` that
    /// perturbed the primal update.
    pub fn step(&mut self) -> Result<DMatrix<f64>> {
        let k = self.k;
        let e_k = match self.pending.take() {
            Some(e) => e,
            None => sample_stacked(&self.model, &self.x, &self.stream, k),
        };
        let x_hat = &self.x + &e_k;
        let n = self.graph.n_nodes();
        let dim = self.x.ncols();
        let mut x_next = DMatrix::zeros(n, dim);
        for i in 0..n {
            let mut nsum = DVector::zeros(dim);
            for &j in self.graph.neighbors(i) {
                nsum += x_hat.row(j).transpose();
            }
            let own = match self.mode {
                NoisePlacementMode::AnalysisFaithful => x_hat.row(i).transpose(),
                NoisePlacementMode::Broadcast => self.x.row(i).transpose(),
            };
            let alpha_i = self.alpha.row(i).transpose();
            let xi = self.solvers[i].solve(&alpha_i, &own, &nsum)?;
            x_next.row_mut(i).copy_from(&xi.transpose());
        }

        // Values neighbors see in the dual update.
        let received = match self.mode {
            NoisePlacementMode::AnalysisFaithful => x_next.clone(),
            NoisePlacementMode::Broadcast => {
                let e_next = sample_stacked(&self.model, &x_next, &self.stream, k + 1);
                let r = &x_next + &e_next;
                self.pending = Some(e_next);
                r
            }
        };
        let half_c = 0.5 * self.c;
        for i in 0..n {
            let xi = x_next.row(i);
            for (&j, &q) in self.graph.neighbors(i).iter().zip(&self.out_arcs[i]) {
                let diff = xi - received.row(j);
                let mut bq = self.beta.row_mut(q);
                bq += &diff * half_c;
                let mut ai = self.alpha.row_mut(i);
                ai += diff * self.c;
            }
        }
        self.x = x_next;
        self.k += 1;
        Ok(e_k)
    }
}

/// Per-node run, recording every state and error realization.
pub fn run_decentralized(
    g: &Graph,
    obj: &ObjectiveSet,
    c: f64,
    model: NoiseModel,
    mode: NoisePlacementMode,
    max_iter: usize,
    stream: RandomStream,
) -> Result<Trajectory> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be ≥ 1".into()));
    }
    let mut solver = DecentralizedSolver::new(g, obj, c, model, mode, stream)?;
    let mut states = Vec::with_capacity(max_iter + 1);
    let mut injected = Vec::with_capacity(max_iter);
    states.push(solver.record());
    for _ in 0..max_iter {
        let e_x = solver.step()?;
        let e_z = derive_ez(&e_x, &solver.am)?;
        injected.push(InjectedError { e_x, e_z });
        states.push(solver.record());
    }
    Ok(Trajectory { states, injected })
}

fn stack(m: &DMatrix<f64>) -> DVector<f64> {
    // Node-major: entry (i, a) → i·n + a.
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

fn unstack(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Stacked-vector engine with one global factorization.
#[derive(Debug, Clone)]
pub struct MatrixFormSolver {
    am: ArcMatrices,
    chol: Cholesky<f64, Dyn>,
    local_rhs: DVector<f64>,
    c: f64,
    model: NoiseModel,
    stream: RandomStream,
    k: usize,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    beta: DMatrix<f64>,
}

impl MatrixFormSolver {
    pub fn new(
        g: &Graph,
        obj: &ObjectiveSet,
        c: f64,
        model: NoiseModel,
        stream: RandomStream,
    ) -> Result<Self> {
        check_inputs(g, obj, c)?;
        let am = build_arc_matrices(g);
        let n = g.n_nodes();
        let dim = obj.dim();
        let coupling = (&am.m_minus * am.m_minus.transpose() + &am.m_plus * am.m_plus.transpose())
            * (0.5 * c);
        let mut k_mat = DMatrix::zeros(n * dim, n * dim);
        for i in 0..n {
            let mut block = k_mat.view_mut((i * dim, i * dim), (dim, dim));
            block += obj.local(i).gram();
            for j in 0..n {
                let w = coupling[(i, j)];
                if w != 0.0 {
                    for a in 0..dim {
                        k_mat[(i * dim + a, j * dim + a)] += w;
                    }
                }
            }
        }
        let chol = Cholesky::new(k_mat)
            .ok_or_else(|| Error::SolveFailed("stacked system not positive definite".into()))?;
        let mut local_rhs = DVector::zeros(n * dim);
        for i in 0..n {
            local_rhs.rows_mut(i * dim, dim).copy_from(obj.local(i).rhs());
        }
        let init = initial_state(n, am.n_arcs(), dim);
        Ok(MatrixFormSolver {
            am,
            chol,
            local_rhs,
            c,
            model,
            stream,
            k: 0,
            x: init.x,
            z: init.z,
            beta: init.beta,
        })
    }

    pub fn record(&self) -> IterateRecord {
        IterateRecord {
            x: self.x.clone(),
            alpha: self.am.minus(&self.beta),
            z: self.z.clone(),
            beta: self.beta.clone(),
        }
    }

    /// Applies one step from an arbitrary state (used to check stationarity).
    pub fn set_state(&mut self, x: DMatrix<f64>, beta: DMatrix<f64>) {
        self.z = self.am.plus_t(&x) * 0.5;
        self.x = x;
        self.beta = beta;
    }

    pub fn step(&mut self) -> Result<InjectedError> {
        let e_x = sample_stacked(&self.model, &self.x, &self.stream, self.k);
        let e_z = derive_ez(&e_x, &self.am)?;
        let (n, dim) = self.x.shape();
        let forcing = self.am.plus(&(&self.z + &e_z)) * self.c - self.am.minus(&self.beta);
        let rhs = &self.local_rhs + stack(&forcing);
        let x_next = unstack(&self.chol.solve(&rhs), n, dim);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolveFailed("non-finite stacked x-update".into()));
        }
        self.beta += self.am.minus_t(&x_next) * (0.5 * self.c);
        self.z = self.am.plus_t(&x_next) * 0.5;
        self.x = x_next;
        self.k += 1;
        Ok(InjectedError { e_x, e_z })
    }
}

/// Stacked recursion run (analysis-faithful noise placement).
pub fn run_matrix_form(
    g: &Graph,
    obj: &ObjectiveSet,
    c: f64,
    model: NoiseModel,
    max_iter: usize,
    stream: RandomStream,
) -> Result<Trajectory> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be ≥ 1".into()));
    }
    let mut solver = MatrixFormSolver::new(g, obj, c, model, stream)?;
    let mut states = Vec::with_capacity(max_iter + 1);
    let mut injected = Vec::with_capacity(max_iter);
    states.push(solver.record());
    for _ in 0..max_iter {
        injected.push(solver.step()?);
        states.push(solver.record());
    }
    Ok(Trajectory { states, injected })
}

/// Primal-dual optimum satisfying the KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub x_central: DVector<f64>,
    pub x_star: DMatrix<f64>,
    pub z_star: DMatrix<f64>,
    /// Minimal-norm multiplier, so it lies in the column space of `M₋ᵀ`.
    pub beta_star: DMatrix<f64>,
}

/// Max-abs residuals of `∇f(x*) + M₋β* = 0`, `M₋ᵀx* = 0`, `½M₊ᵀx* − z* = 0`.
pub fn kkt_residuals(
    am: &ArcMatrices,
    obj: &ObjectiveSet,
    r: &ReferencePoint,
) -> Result<[f64; 3]> {
    let grad = obj.gradient_stacked(&r.x_star)?;
    Ok([
        (grad + am.minus(&r.beta_star)).amax(),
        am.minus_t(&r.x_star).amax(),
        (am.plus_t(&r.x_star) * 0.5 - &r.z_star).amax(),
    ])
}

pub fn reference_point(g: &Graph, obj: &ObjectiveSet) -> Result<ReferencePoint> {
    check_inputs(g, obj, 1.0)?;
    let am = build_arc_matrices(g);
    let x_central = centralized_solution(obj)?;
    let n = g.n_nodes();
    let x_star = DMatrix::from_fn(n, obj.dim(), |_, a| x_central[a]);
    let z_star = am.plus_t(&x_star) * 0.5;
    let grad = obj.gradient_stacked(&x_star)?;
    // β* = M₋ᵀ(M₋M₋ᵀ)⁺(−∇f(x*)), the minimal-norm solution of M₋β = −∇f(x*).
    let gram_pinv = psd_pinv(&(&am.m_minus * am.m_minus.transpose()), 1e-12, "Laplacian")?;
    let beta_star = am.minus_t(&(gram_pinv * (-grad)));
    let r = ReferencePoint {
        x_central,
        x_star,
        z_star,
        beta_star,
    };
    let res = kkt_residuals(&am, obj, &r)?;
    if res.iter().any(|v| !(*v < 1e-8)) {
        return Err(Error::Singular(format!("KKT residuals too large: {res:?}")));
    }
    Ok(r)
}

/// `‖u − u*‖²_G = c‖z − z*‖² + (1/c)‖β − β*‖²`.
pub fn gnorm_distance(state: &IterateRecord, r: &ReferencePoint, c: f64) -> f64 {
    gnorm_from_parts(
        (&state.z - &r.z_star).norm_squared(),
        (&state.beta - &r.beta_star).norm_squared(),
        c,
    )
}

pub fn gnorm_from_parts(z_sq: f64, beta_sq: f64, c: f64) -> f64 {
    c * z_sq + beta_sq / c
}
