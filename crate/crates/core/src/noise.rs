//! Additive computation-error models for exchanged iterates, and the
//! coordinate-keyed random streams that drive them.
//!
//! Draws are keyed by `(seed, trial, cell, node, iteration)`. The first three
//! form the ChaCha20 key, the node selects the ChaCha stream, and the
//! iteration selects a block offset inside that stream, so distinct
//! coordinates never share keystream. Gaussian variates come from the
//! Marsaglia polar transform applied to that keystream.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::ArcMatrices;

/// Words of keystream reserved per (node, iteration) draw.
const WORDS_PER_ITERATION: u128 = 1 << 32;

/// Standard-normal sampler using the polar method; caches the spare variate.
#[derive(Debug, Clone, Default)]
pub struct PolarNormal {
    spare: Option<f64>,
}

impl PolarNormal {
    pub fn new() -> Self {
        PolarNormal { spare: None }
    }

    pub fn sample<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let u = 2.0 * rng.gen::<f64>() - 1.0;
            let v = 2.0 * rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }
}

/// Seed plus the run-level coordinates of a noise realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStream {
    pub seed: u64,
    pub trial: u64,
    pub cell: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            trial: 0,
            cell: 0,
        }
    }

    pub fn with_trial(self, trial: u64) -> Self {
        RandomStream { trial, ..self }
    }

    pub fn with_cell(self, cell: u64) -> Self {
        RandomStream { cell, ..self }
    }

    /// Generator for one node at one iteration.
    pub fn rng_at(&self, node: usize, iteration: usize) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.trial.to_le_bytes());
        key[16..24].copy_from_slice(&self.cell.to_le_bytes());
        key[24..32].copy_from_slice(b"ncadmm/e");
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(node as u64);
        rng.set_word_pos(iteration as u128 * WORDS_PER_ITERATION);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// i.i.d. `𝒩(0, σ_e²)` per component.
    Gaussian { sigma_e: f64 },
    /// Uniform quantizer with step `Δ`: `e = Δ·round(x/Δ) − x`.
    Quantizer { delta: f64 },
    /// Uniformly random direction with `‖e‖₂ = σ_e` exactly. Applied to a
    /// stacked iterate, the norm refers to the whole stack.
    FixedNorm { sigma_e: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Quantizer,
    FixedNorm,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "quantizer" => Ok(NoiseKind::Quantizer),
            "fixed_norm" => Ok(NoiseKind::FixedNorm),
            other => Err(Error::InvalidArgument(format!("unknown noise model {other:?}"))),
        }
    }
}

impl NoiseModel {
    pub fn from_parts(kind: NoiseKind, sigma_e: f64, delta: f64) -> Result<Self> {
        for (name, v) in [("sigma_e", sigma_e), ("delta", delta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        Ok(match kind {
            NoiseKind::None => NoiseModel::None,
            NoiseKind::Gaussian => NoiseModel::Gaussian { sigma_e },
            NoiseKind::Quantizer => NoiseModel::Quantizer { delta },
            NoiseKind::FixedNorm => NoiseModel::FixedNorm { sigma_e },
        })
    }

    pub fn is_none(&self) -> bool {
        match *self {
            NoiseModel::None => true,
            NoiseModel::Gaussian { sigma_e } | NoiseModel::FixedNorm { sigma_e } => sigma_e == 0.0,
            NoiseModel::Quantizer { delta } => delta == 0.0,
        }
    }
}

fn quantize_err(x: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        delta * (x / delta).round() - x
    }
}

/// Error `e` such that `x̂ = x + e` follows the model. The quantizer ignores
/// `rng`.
pub fn sample_error<R: RngCore + ?Sized>(
    model: &NoiseModel,
    x: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let n = x.len();
    match *model {
        NoiseModel::None => DVector::zeros(n),
        NoiseModel::Gaussian { sigma_e } => {
            if sigma_e == 0.0 {
                return DVector::zeros(n);
            }
            let mut normal = PolarNormal::new();
            DVector::from_fn(n, |_, _| sigma_e * normal.sample(rng))
        }
        NoiseModel::Quantizer { delta } => x.map(|v| quantize_err(v, delta)),
        NoiseModel::FixedNorm { sigma_e } => {
            let mut normal = PolarNormal::new();
            let dir = DVector::from_fn(n, |_, _| normal.sample(rng));
            scale_to_norm(dir, sigma_e)
        }
    }
}

fn scale_to_norm<D: nalgebra::Dim, C: nalgebra::Dim>(
    mut v: nalgebra::OMatrix<f64, D, C>,
    target: f64,
) -> nalgebra::OMatrix<f64, D, C>
where
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<D, C>,
{
    let norm = v.norm();
    if target == 0.0 || norm == 0.0 {
        v.fill(0.0);
        return v;
    }
    v *= target / norm;
    v
}

/// Error realization for a node-stacked iterate (`N × n`) at `iteration`.
///
/// Row `i` is drawn from node `i`'s substream. For [`NoiseModel::FixedNorm`]
/// every row is drawn as a Gaussian direction and the whole stack is then
/// scaled to norm `σ_e`.
pub fn sample_stacked(
    model: &NoiseModel,
    x: &DMatrix<f64>,
    stream: &RandomStream,
    iteration: usize,
) -> DMatrix<f64> {
    let (rows, cols) = x.shape();
    if model.is_none() {
        return DMatrix::zeros(rows, cols);
    }
    let direction_model = match model {
        NoiseModel::FixedNorm { .. } => NoiseModel::Gaussian { sigma_e: 1.0 },
        m => *m,
    };
    let mut e = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let mut rng = stream.rng_at(i, iteration);
        let ei = sample_error(&direction_model, &x.row(i).transpose(), &mut rng);
        e.row_mut(i).copy_from(&ei.transpose());
    }
    match *model {
        NoiseModel::FixedNorm { sigma_e } => scale_to_norm(e, sigma_e),
        _ => e,
    }
}

/// `e_z = ½ (M₊ ⊗ I)ᵀ e_x`.
pub fn derive_ez(e_x: &DMatrix<f64>, am: &ArcMatrices) -> Result<DMatrix<f64>> {
    if e_x.nrows() != am.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: am.n_nodes(),
            got: e_x.nrows(),
            context: "e_x rows vs graph nodes",
        });
    }
    Ok(am.plus_t(e_x) * 0.5)
}
