//! Local least-squares objectives `fᵢ(x) = ½‖yᵢ − Mᵢx‖²`, their convexity
//! constants, the per-node primal update, and the centralized reference
//! estimate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::noise::PolarNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLocal {
    design: DMatrix<f64>,
    observation: DVector<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl QuadraticLocal {
    pub fn new(design: DMatrix<f64>, observation: DVector<f64>) -> Result<Self> {
        if design.nrows() != observation.len() {
            return Err(Error::DimensionMismatch {
                expected: design.nrows(),
                got: observation.len(),
                context: "observation length vs design rows",
            });
        }
        let gram = design.tr_mul(&design);
        let rhs = design.tr_mul(&observation);
        Ok(QuadraticLocal {
            design,
            observation,
            gram,
            rhs,
        })
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn observation(&self) -> &DVector<f64> {
        &self.observation
    }

    /// `MᵢᵀMᵢ`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Mᵢᵀyᵢ`.
    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(0.5 * (&self.observation - &self.design * x).norm_squared())
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(&self.gram * x - &self.rhs)
    }

    /// `(λ_min, λ_max)` of the Gram matrix: strong-convexity modulus and
    /// gradient Lipschitz constant of this term.
    pub fn moduli(&self) -> Result<(f64, f64)> {
        let eig = sym_eigenvalues(&self.gram, "local Gram matrix")?;
        Ok((eig[0].max(0.0), *eig.last().unwrap()))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
                context: "local objective argument",
            });
        }
        Ok(())
    }
}

/// Free-standing gradient `MᵢᵀMᵢx − Mᵢᵀyᵢ`.
pub fn local_gradient(loc: &QuadraticLocal, x: &DVector<f64>) -> Result<DVector<f64>> {
    loc.gradient(x)
}

/// Prefactored primal update for one node. The system matrix
/// `MᵢᵀMᵢ + 2c|𝒩ᵢ|I` is fixed for a run, so it is factored once.
#[derive(Debug, Clone)]
pub struct LocalSolver {
    chol: Cholesky<f64, Dyn>,
    rhs: DVector<f64>,
    degree: f64,
    c: f64,
}

impl LocalSolver {
    pub fn new(loc: &QuadraticLocal, degree: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
        }
        if degree == 0 {
            return Err(Error::InvalidArgument("node has no neighbors".into()));
        }
        let n = loc.dim();
        let sys = loc.gram() + DMatrix::identity(n, n) * (2.0 * c * degree as f64);
        let chol = Cholesky::new(sys)
            .ok_or_else(|| Error::SolveFailed("x-update system not positive definite".into()))?;
        Ok(LocalSolver {
            chol,
            rhs: loc.rhs().clone(),
            degree: degree as f64,
            c,
        })
    }

    /// Solves `(MᵢᵀMᵢ + 2c·deg·I) x⁺ = Mᵢᵀyᵢ − αᵢ + c(deg·own_x + neighbor_sum)`.
    pub fn solve(
        &self,
        alpha_i: &DVector<f64>,
        own_x: &DVector<f64>,
        neighbor_sum: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.rhs.len();
        for (len, ctx) in [
            (alpha_i.len(), "alpha_i"),
            (own_x.len(), "own_x"),
            (neighbor_sum.len(), "neighbor_sum"),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                    context: ctx,
                });
            }
        }
        let b = &self.rhs - alpha_i + (own_x * self.degree + neighbor_sum) * self.c;
        let x = self.chol.solve(&b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolveFailed("non-finite x-update".into()));
        }
        Ok(x)
    }
}

/// One-shot primal update of a single node (factors on every call; runs use
/// [`LocalSolver`]).
pub fn x_update(
    loc: &QuadraticLocal,
    alpha_i: &DVector<f64>,
    own_x: &DVector<f64>,
    neighbor_sum: &DVector<f64>,
    degree: usize,
    c: f64,
) -> Result<DVector<f64>> {
    LocalSolver::new(loc, degree, c)?.solve(alpha_i, own_x, neighbor_sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSet {
    locals: Vec<QuadraticLocal>,
    dim: usize,
}

impl ObjectiveSet {
    pub fn new(locals: Vec<QuadraticLocal>) -> Result<Self> {
        let dim = locals
            .first()
            .ok_or_else(|| Error::InvalidArgument("objective set is empty".into()))?
            .dim();
        if let Some(bad) = locals.iter().find(|l| l.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
                context: "local objective dimension",
            });
        }
        Ok(ObjectiveSet { locals, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.locals.len()
    }

    pub fn locals(&self) -> &[QuadraticLocal] {
        &self.locals
    }

    pub fn local(&self, i: usize) -> &QuadraticLocal {
        &self.locals[i]
    }

    /// Stacked gradient of `f(x) = Σ fᵢ(xᵢ)`; rows of `x` are node copies.
    pub fn gradient_stacked(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_stacked(x)?;
        let mut g = DMatrix::zeros(x.nrows(), self.dim);
        for (i, loc) in self.locals.iter().enumerate() {
            let xi = x.row(i).transpose();
            let gi = loc.gram() * xi - loc.rhs();
            g.row_mut(i).copy_from(&gi.transpose());
        }
        Ok(g)
    }

    pub fn value_stacked(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_stacked(x)?;
        self.locals
            .iter()
            .enumerate()
            .map(|(i, l)| l.value(&x.row(i).transpose()))
            .sum()
    }

    fn check_stacked(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.locals.len() || x.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.locals.len() * self.dim,
                got: x.len(),
                context: "stacked iterate",
            });
        }
        Ok(())
    }

    pub fn aggregate_gram(&self) -> DMatrix<f64> {
        self.locals
            .iter()
            .fold(DMatrix::zeros(self.dim, self.dim), |acc, l| acc + l.gram())
    }

    pub fn aggregate_rhs(&self) -> DVector<f64> {
        self.locals
            .iter()
            .fold(DVector::zeros(self.dim), |acc, l| acc + l.rhs())
    }
}

/// `(m_f, M_f)`: min over nodes of `λ_min(MᵢᵀMᵢ)` and max of `λ_max`.
pub fn aggregate_constants(obj: &ObjectiveSet) -> Result<(f64, f64)> {
    let mut m_f = f64::INFINITY;
    let mut big_m_f = 0.0_f64;
    for loc in obj.locals() {
        let (lo, hi) = loc.moduli()?;
        m_f = m_f.min(lo);
        big_m_f = big_m_f.max(hi);
    }
    Ok((m_f, big_m_f))
}

/// `x̃ᶜ = (Σ MᵢᵀMᵢ)⁻¹ Σ Mᵢᵀyᵢ`.
pub fn centralized_solution(obj: &ObjectiveSet) -> Result<DVector<f64>> {
    let h = obj.aggregate_gram();
    let b = obj.aggregate_rhs();
    let chol = Cholesky::new(h.clone())
        .ok_or_else(|| Error::Singular("aggregate Gram matrix is not positive definite".into()))?;
    let x = chol.solve(&b);
    let resid = (&h * &x - &b).norm();
    if !resid.is_finite() || resid > 1e-10 * b.norm().max(1.0) {
        return Err(Error::Singular(format!(
            "aggregate Gram matrix is numerically singular (residual {resid:e})"
        )));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Entries of `Mᵢ` and `x̃` i.i.d. standard normal.
    Gaussian,
    /// `Mᵢ = U·diag(s)` with `U` orthogonal and `s ~ U[1, 2]`, so every local
    /// term has modulus at least 1.
    WellConditioned,
    /// `Mᵢ = I`; `m_f = M_f = 1`.
    Identity,
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(DesignKind::Gaussian),
            "well_conditioned" => Ok(DesignKind::WellConditioned),
            "identity" => Ok(DesignKind::Identity),
            other => Err(Error::InvalidArgument(format!("unknown design kind {other:?}"))),
        }
    }
}

/// Random least-squares estimation instance.
///
/// Draw order from the seeded stream: `x̃`, then for each node its design
/// (row-major) followed by its observation noise.
pub fn make_problem(
    n_nodes: usize,
    dim: usize,
    obs_noise_var: f64,
    design_kind: DesignKind,
    seed: u64,
) -> Result<(ObjectiveSet, DVector<f64>)> {
    if n_nodes == 0 || dim == 0 {
        return Err(Error::InvalidArgument("need at least one node and dim ≥ 1".into()));
    }
    if !(obs_noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "observation noise variance must be ≥ 0, got {obs_noise_var}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normal = PolarNormal::new();
    let true_x = DVector::from_fn(dim, |_, _| normal.sample(&mut rng));
    let obs_sd = obs_noise_var.sqrt();
    let mut locals = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let design = match design_kind {
            DesignKind::Gaussian => random_gaussian(dim, &mut normal, &mut rng),
            DesignKind::WellConditioned => {
                let u = random_gaussian(dim, &mut normal, &mut rng).qr().q();
                let s = DVector::from_fn(dim, |_, _| rng.gen_range(1.0..=2.0));
                u * DMatrix::from_diagonal(&s)
            }
            DesignKind::Identity => DMatrix::identity(dim, dim),
        };
        let noise = DVector::from_fn(dim, |_, _| obs_sd * normal.sample(&mut rng));
        let y = &design * &true_x + noise;
        locals.push(QuadraticLocal::new(design, y)?);
    }
    Ok((ObjectiveSet::new(locals)?, true_x))
}

fn random_gaussian(dim: usize, normal: &mut PolarNormal, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    // from_fn is column-major; fill row-major to match the documented order.
    let vals: Vec<f64> = (0..dim * dim).map(|_| normal.sample(rng)).collect();
    DMatrix::from_row_slice(dim, dim, &vals)
}

/// JSON replay format for a problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub dim: usize,
    pub true_x: Vec<f64>,
    pub nodes: Vec<NodeDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    /// Row-major `m × n` design matrix.
    pub design: Vec<Vec<f64>>,
    pub observation: Vec<f64>,
}

impl ProblemDocument {
    pub fn from_problem(obj: &ObjectiveSet, true_x: &DVector<f64>) -> Self {
        let nodes = obj
            .locals()
            .iter()
            .map(|l| NodeDocument {
                design: l
                    .design()
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                observation: l.observation().iter().copied().collect(),
            })
            .collect();
        ProblemDocument {
            dim: obj.dim(),
            true_x: true_x.iter().copied().collect(),
            nodes,
        }
    }

    pub fn into_problem(self) -> Result<(ObjectiveSet, DVector<f64>)> {
        if self.true_x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.true_x.len(),
                context: "true_x",
            });
        }
        let mut locals = Vec::with_capacity(self.nodes.len());
        for node in self.nodes {
            let rows = node.design.len();
            if node.design.iter().any(|r| r.len() != self.dim) {
                return Err(Error::Parse("design rows must have length dim".into()));
            }
            let flat: Vec<f64> = node.design.into_iter().flatten().collect();
            locals.push(QuadraticLocal::new(
                DMatrix::from_row_slice(rows, self.dim, &flat),
                DVector::from_vec(node.observation),
            )?);
        }
        Ok((ObjectiveSet::new(locals)?, DVector::from_vec(self.true_x)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
