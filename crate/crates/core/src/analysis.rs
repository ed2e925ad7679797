//! Linear-convergence certificates and their post-hoc audit.
//!
//! For strongly convex `f` with moduli `m_f`, `M_f` and any `μ > 1`:
//!
//! ```text
//! a = (c/4)σ²₊ + 2μM_f²/(c σ̃²₋) + 4c σ²₊ σ²₋,max / σ̃⁴₋
//! b = 2σ²₊ / ((1 − 1/μ) σ̃²₋)
//! δ = min{ (m_f − cσ₊/2)/a , 1/b }
//! ‖u⁺ − u*‖²_G ≤ ‖u − u*‖²_G / (1 + δ)
//! ‖x⁺ − x*‖² ≤ ‖u − u*‖²_G / (m_f − (c/2)σ²₊)
//! ```
//!
//! where `σ₊ = σ_max(M₊)`, `σ₋,max = σ_max(M₋)`, `σ̃₋` is the smallest
//! non-zero singular value of `M₋`. The two inequalities are claimed whenever
//! `‖e_zᵏ‖ ≤ ‖x^{k+1} − x*‖` holds. Two readings of the step-size condition
//! appear (`m_f ≥ (c/2)σ²₊` and `m_f ≥ (c/2)σ₊`); both are evaluated and a
//! configuration is only certified when both hold. Likewise the steady-state
//! radius is reported both as `maxdeg·σ_e` and `√maxdeg·σ_e`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{gnorm_distance, ReferencePoint, Trajectory};
use crate::error::{Error, Result};
use crate::topology::{Graph, SpectralSummary};

/// Squared G-norm distances below this are treated as converged; their
/// contraction ratios are not evaluated.
pub const RATIO_FLOOR: f64 = 1e-14;

/// Additive slack for audited inequalities.
pub const AUDIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub m_f: f64,
    #[serde(rename = "M_f")]
    pub big_m_f: f64,
    pub c: f64,
    pub mu: f64,
    pub sigma_max_mplus: f64,
    pub sigma_max_mminus: f64,
    pub sigma_min_nz_mminus: f64,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub contraction_factor: f64,
    /// `m_f − (c/2)σ²_max(M₊) ≥ 0`.
    pub cond_squared: bool,
    /// `m_f − (c/2)σ_max(M₊) ≥ 0`.
    pub cond_linear: bool,
    /// `1/(m_f − (c/2)σ²_max(M₊))`; `None` when the denominator is not positive.
    pub x_bound_coeff: Option<f64>,
    pub max_degree: usize,
    pub sigma_e: f64,
    /// `√maxdeg · σ_e`.
    pub corollary_bound_sqrt: f64,
    /// `maxdeg · σ_e`.
    pub corollary_bound_stated: f64,
}

impl TheoryReport {
    /// Both readings of the step-size condition hold.
    pub fn certified(&self) -> bool {
        self.cond_squared && self.cond_linear
    }

    pub fn with_sigma_e(mut self, sigma_e: f64) -> Self {
        let d = self.max_degree as f64;
        self.sigma_e = sigma_e;
        self.corollary_bound_sqrt = d.sqrt() * sigma_e;
        self.corollary_bound_stated = d * sigma_e;
        self
    }
}

/// Closed-form constants at a given `μ`. Corollary bounds are reported for
/// `σ_e = 1`; rescale with [`TheoryReport::with_sigma_e`].
pub fn theory_constants(
    spec: &SpectralSummary,
    m_f: f64,
    big_m_f: f64,
    c: f64,
    mu: f64,
) -> Result<TheoryReport> {
    if !(mu > 1.0) {
        return Err(Error::InvalidArgument(format!("mu must exceed 1, got {mu}")));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    if !(m_f > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "strong convexity modulus must be positive, got {m_f}"
        )));
    }
    let sp = spec.sigma_max_mplus;
    let sm = spec.sigma_max_mminus;
    let st = spec.sigma_min_nz_mminus;
    let (sp2, sm2, st2) = (sp * sp, sm * sm, st * st);
    let a = c / 4.0 * sp2 + 2.0 * mu * big_m_f * big_m_f / (c * st2) + 4.0 * c * sp2 * sm2 / (st2 * st2);
    let b = 2.0 * sp2 / ((1.0 - 1.0 / mu) * st2);
    let linear_margin = m_f - c * sp / 2.0;
    let squared_margin = m_f - c / 2.0 * sp2;
    let delta = (linear_margin / a).min(1.0 / b);
    let report = TheoryReport {
        m_f,
        big_m_f,
        c,
        mu,
        sigma_max_mplus: sp,
        sigma_max_mminus: sm,
        sigma_min_nz_mminus: st,
        a,
        b,
        delta,
        contraction_factor: 1.0 / (1.0 + delta),
        cond_squared: squared_margin >= 0.0,
        cond_linear: linear_margin >= 0.0,
        x_bound_coeff: (squared_margin > 0.0).then(|| 1.0 / squared_margin),
        max_degree: spec.max_degree,
        sigma_e: 1.0,
        corollary_bound_sqrt: 0.0,
        corollary_bound_stated: 0.0,
    };
    Ok(report.with_sigma_e(1.0))
}

/// `μ` grid: `1 + 10^t` for 121 evenly spaced `t ∈ [−3, 3]`.
pub fn mu_grid() -> Vec<f64> {
    (0..121)
        .map(|k| 1.0 + 10f64.powf(-3.0 + 0.05 * k as f64))
        .collect()
}

/// Grid search for the `μ` giving the largest certified `δ`. This is a
/// certificate search over [`mu_grid`], not an analytic optimum. When the
/// linear step-size condition fails, `δ* = 0` is returned with the first
/// grid point.
pub fn optimize_delta(spec: &SpectralSummary, m_f: f64, big_m_f: f64, c: f64) -> Result<(f64, f64)> {
    let grid = mu_grid();
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &mu in &grid {
        let r = theory_constants(spec, m_f, big_m_f, c, mu)?;
        if !r.cond_linear {
            return Ok((grid[0], 0.0));
        }
        if r.delta > best.1 {
            best = (mu, r.delta);
        }
    }
    Ok(best)
}

/// Report at the grid-optimal `μ`.
pub fn certify(spec: &SpectralSummary, m_f: f64, big_m_f: f64, c: f64) -> Result<TheoryReport> {
    let (mu, _) = optimize_delta(spec, m_f, big_m_f, c)?;
    theory_constants(spec, m_f, big_m_f, c, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Measured G-norm ratio above `1/(1 + δ)`.
    Contraction,
    /// `‖x^{k+1} − x*‖²` above `x_bound_coeff · ‖uᵏ − u*‖²_G`.
    PrimalBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub kind: ViolationKind,
    pub measured: f64,
    pub bound: f64,
}

/// Audit of the step `k → k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRow {
    pub k: usize,
    pub gnorm_sq: f64,
    pub gnorm_sq_next: f64,
    /// `None` when `gnorm_sq` is below [`RATIO_FLOOR`].
    pub ratio: Option<f64>,
    pub ez_norm: f64,
    pub x_err_next: f64,
    /// `‖e_zᵏ‖₂ ≤ ‖x^{k+1} − x*‖₂`.
    pub gate: bool,
    /// Gate on and both step-size conditions hold.
    pub checked: bool,
    /// `x_bound_coeff·‖uᵏ − u*‖²_G − ‖x^{k+1} − x*‖²`; `None` without a
    /// finite coefficient.
    pub eq10_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionAudit {
    pub contraction_bound: f64,
    pub rows: Vec<AuditRow>,
    pub violations: Vec<Violation>,
}

impl ContractionAudit {
    pub fn gate_pattern(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.gate).collect()
    }

    /// Number of gate on/off switches along the run.
    pub fn gate_switches(&self) -> usize {
        self.rows.windows(2).filter(|w| w[0].gate != w[1].gate).count()
    }

    pub fn checked_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.checked).count()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

fn check_dims(traj: &Trajectory, r: &ReferencePoint) -> Result<()> {
    let s0 = traj
        .states
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    if s0.x.shape() != r.x_star.shape() || s0.z.shape() != r.z_star.shape() {
        return Err(Error::DimensionMismatch {
            expected: r.x_star.len() + r.z_star.len(),
            got: s0.x.len() + s0.z.len(),
            context: "trajectory vs reference point",
        });
    }
    if traj.injected.len() + 1 != traj.states.len() {
        return Err(Error::InvalidArgument(
            "trajectory must carry one error record per transition".into(),
        ));
    }
    Ok(())
}

/// Post-hoc check of the contraction and primal-error inequalities on every
/// step where the gate holds and the configuration is certified.
pub fn audit_contraction(
    traj: &Trajectory,
    r: &ReferencePoint,
    report: &TheoryReport,
) -> Result<ContractionAudit> {
    check_dims(traj, r)?;
    let c = report.c;
    let bound = report.contraction_factor;
    let gnorms: Vec<f64> = traj.states.iter().map(|s| gnorm_distance(s, r, c)).collect();
    let mut rows = Vec::with_capacity(traj.injected.len());
    let mut violations = Vec::new();
    for (k, inj) in traj.injected.iter().enumerate() {
        let next = &traj.states[k + 1];
        let x_err_next = (&next.x - &r.x_star).norm();
        let ez_norm = inj.e_z.norm();
        let gate = ez_norm <= x_err_next;
        let checked = gate && report.certified();
        let ratio = (gnorms[k] >= RATIO_FLOOR).then(|| gnorms[k + 1] / gnorms[k]);
        let eq10_slack = report
            .x_bound_coeff
            .map(|coeff| coeff * gnorms[k] - x_err_next * x_err_next);
        if checked {
            if let Some(q) = ratio {
                if q > bound + AUDIT_TOL {
                    violations.push(Violation {
                        k,
                        kind: ViolationKind::Contraction,
                        measured: q,
                        bound,
                    });
                }
            }
            if let Some(slack) = eq10_slack {
                if slack < -AUDIT_TOL {
                    violations.push(Violation {
                        k,
                        kind: ViolationKind::PrimalBound,
                        measured: x_err_next * x_err_next,
                        bound: x_err_next * x_err_next + slack,
                    });
                }
            }
        }
        rows.push(AuditRow {
            k,
            gnorm_sq: gnorms[k],
            gnorm_sq_next: gnorms[k + 1],
            ratio,
            ez_norm,
            x_err_next,
            gate,
            checked,
            eq10_slack,
        });
    }
    Ok(ContractionAudit {
        contraction_bound: bound,
        rows,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    /// Mean of `‖xᵏ − x*‖₂` over the final 10% of states.
    pub tail_mean: f64,
    pub bound_sqrt: f64,
    pub bound_stated: f64,
    /// `tail_mean ≤ bound_sqrt`.
    pub holds: bool,
    /// `tail_mean ≤ bound_stated`.
    pub holds_stated: bool,
}

/// Errors at or below this count as exact convergence for the bound checks.
pub const STEADY_STATE_FLOOR: f64 = 1e-10;

/// Minimum number of states for a steady-state estimate.
pub const MIN_STEADY_STATE_LEN: usize = 10;

pub fn steady_state_check(
    traj: &Trajectory,
    r: &ReferencePoint,
    sigma_e: f64,
    g: &Graph,
) -> Result<SteadyState> {
    if traj.states.len() < MIN_STEADY_STATE_LEN {
        return Err(Error::InvalidArgument(format!(
            "trajectory too short for a steady-state estimate ({} < {MIN_STEADY_STATE_LEN} states)",
            traj.states.len()
        )));
    }
    let errs: Vec<f64> = traj.states.iter().map(|s| (&s.x - &r.x_star).norm()).collect();
    Ok(steady_state_from_errors(&errs, sigma_e, g.max_degree()))
}

/// Same as [`steady_state_check`] from a precomputed `‖xᵏ − x*‖₂` series.
pub fn steady_state_from_errors(x_errs: &[f64], sigma_e: f64, max_degree: usize) -> SteadyState {
    let tail = (x_errs.len() / 10).max(1);
    let tail_mean = x_errs[x_errs.len() - tail..].iter().sum::<f64>() / tail as f64;
    let d = max_degree as f64;
    let bound_sqrt = d.sqrt() * sigma_e;
    let bound_stated = d * sigma_e;
    SteadyState {
        tail_mean,
        bound_sqrt,
        bound_stated,
        holds: tail_mean <= bound_sqrt.max(STEADY_STATE_FLOOR),
        holds_stated: tail_mean <= bound_stated.max(STEADY_STATE_FLOOR),
    }
}

/// Node-averaged relative deviation `E_i[‖xᵢ − x̃ᶜ‖/‖x̃ᶜ‖]` of one iterate.
pub fn edc_mean(x: &DMatrix<f64>, x_central: &DVector<f64>) -> Result<f64> {
    let denom = x_central.norm();
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(
            "centralized estimate has zero norm; relative error undefined".into(),
        ));
    }
    if x.ncols() != x_central.len() {
        return Err(Error::DimensionMismatch {
            expected: x_central.len(),
            got: x.ncols(),
            context: "iterate dimension vs centralized estimate",
        });
    }
    let total: f64 = x
        .row_iter()
        .map(|row| (row.transpose() - x_central).norm() / denom)
        .sum();
    Ok(total / x.nrows() as f64)
}

/// Per-iteration `E_i[E^{DC}_{i,k}]` along a trajectory.
pub fn edc_metric(traj: &Trajectory, x_central: &DVector<f64>) -> Result<Vec<f64>> {
    traj.states.iter().map(|s| edc_mean(&s.x, x_central)).collect()
}
