//! Dominant eigencomponent projection (DEP) and the SGD optimizer that applies it.
//!
//! A gradient tensor of shape `(d₁, …, d_k)` is reshaped row-major into a
//! `d₁ × Π_{j≥2} d_j` matrix `G`. With `(σ₁, u₁, v₁)` its leading singular
//! triplet, the projected gradient is
//!
//! ```text
//! G̃ = G − ⟨G, u₁v₁ᵀ⟩_F · u₁v₁ᵀ        (‖u₁v₁ᵀ‖_F = 1)
//! ```
//!
//! i.e. `G` minus its best rank-1 approximation, reshaped back to the
//! original tensor shape. The projection has no tunable constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    full_svd, leading_triplet, DenseMatrix, SvdTriplet, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::snn::{GradientSet, Model};
use crate::tensor::Tensor;

/// Largest `min(m, n)` for which a non-converged power iteration falls back
/// to the dense SVD.
pub const FALLBACK_MAX_DIM: usize = 64;

/// A gradient reshaped to `d₁ × Π_{j≥2} d_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixizedGradient {
    pub matrix: DenseMatrix,
    pub original_shape: Vec<usize>,
}

impl MatrixizedGradient {
    /// Inverse reshape back to the original tensor.
    pub fn into_tensor(self) -> Tensor {
        Tensor::from_vec(&self.original_shape, self.matrix.into_data())
            .expect("element count preserved")
    }
}

/// Row-major reshape with `m = d₁` and `n = Π_{j≥2} d_j` (`n = 1` for vectors).
pub fn matrixize(g: &Tensor) -> Result<MatrixizedGradient> {
    let shape = g.shape().to_vec();
    let m = shape.first().copied().unwrap_or(1);
    let n: usize = shape.iter().skip(1).product();
    Ok(MatrixizedGradient {
        matrix: DenseMatrix::new(m, n, g.data().to_vec())?,
        original_shape: shape,
    })
}

/// Leading triplet by power iteration, falling back to the dense SVD for
/// small matrices when the iteration does not converge.
pub fn dominant_triplet(g: &DenseMatrix) -> Result<SvdTriplet> {
    match leading_triplet(g, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(t) => Ok(t),
        Err(Error::NonConvergence { .. }) if g.rows().min(g.cols()) <= FALLBACK_MAX_DIM => {
            let svd = full_svd(g)?;
            let mut t = SvdTriplet {
                sigma: svd.sigmas[0],
                u: svd.u_col(0),
                v: svd.v_col(0),
            };
            t.orient();
            Ok(t)
        }
        Err(e) => Err(e),
    }
}

/// Projection together with the quantities the optimizer logs.
#[derive(Debug, Clone)]
pub struct Projection {
    pub projected: MatrixizedGradient,
    pub triplet: SvdTriplet,
    pub frobenius_before: f64,
    pub frobenius_after: f64,
}

pub fn dep_project_detailed(g: &MatrixizedGradient) -> Result<Projection> {
    let triplet = dominant_triplet(&g.matrix)?;
    let (m, n) = (g.matrix.rows(), g.matrix.cols());
    let dominant = DenseMatrix::outer_sum(m, n, &[(1.0, &triplet.u, &triplet.v)]);
    let coeff = g.matrix.frobenius_inner(&dominant);
    let projected = g.matrix.sub(&dominant.scale(coeff));
    let frobenius_after = projected.frobenius_norm();
    Ok(Projection {
        projected: MatrixizedGradient {
            matrix: projected,
            original_shape: g.original_shape.clone(),
        },
        triplet,
        frobenius_before: g.matrix.frobenius_norm(),
        frobenius_after,
    })
}

/// `G − ⟨G, u₁v₁ᵀ⟩_F u₁v₁ᵀ`.
pub fn dep_project(g: &MatrixizedGradient) -> Result<MatrixizedGradient> {
    Ok(dep_project_detailed(g)?.projected)
}

/// DEP applied to a whole tensor (`𝓜⁻¹ ∘ DEP ∘ 𝓜`).
pub fn dep_tensor(g: &Tensor) -> Result<Tensor> {
    Ok(dep_project(&matrixize(g)?)?.into_tensor())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub dep_enabled: bool,
    /// Parameters of lower rank (biases) skip the projection.
    pub dep_min_rank_dims: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 5e-5,
            momentum: 0.9,
            dep_enabled: false,
            dep_min_rank_dims: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("lr must be >= 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn projects(&self, shape: &[usize]) -> bool {
        self.dep_enabled && shape.len() >= self.dep_min_rank_dims
    }
}

/// Per-parameter record of one projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepDiagnostic {
    pub param_name: String,
    pub sigma1: f64,
    /// Leading singular value of the projected gradient, i.e. `σ₂(G)`.
    pub sigma2: f64,
    pub frobenius_before: f64,
    pub frobenius_after: f64,
}

/// Momentum buffers, one per parameter (post-DEP gradient plus weight decay).
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    velocity: Vec<Option<Tensor>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One SGD step. For every parameter of rank `>= dep_min_rank_dims` the
/// gradient is first replaced by its DEP projection; then
/// `d = g + wd·w`, `buf = μ·buf + d` (`buf = d` on the first step) and
/// `w ← w − lr·buf`.
pub fn apply_gradients(
    model: &mut Model,
    grads: &GradientSet,
    cfg: &OptimizerConfig,
    state: &mut SgdState,
    diagnostics: bool,
) -> Result<Vec<DepDiagnostic>> {
    apply_param_gradients(model, &grads.params, cfg, state, diagnostics)
}

pub fn apply_param_gradients(
    model: &mut Model,
    grads: &[Tensor],
    cfg: &OptimizerConfig,
    state: &mut SgdState,
    diagnostics: bool,
) -> Result<Vec<DepDiagnostic>> {
    let names = model.param_names();
    let shapes = model.param_shapes();
    if grads.len() != shapes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            shapes.len()
        )));
    }
    for ((g, s), name) in grads.iter().zip(&shapes).zip(&names) {
        if g.shape() != s.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for `{name}` has shape {:?}, parameter has {:?}",
                g.shape(),
                s
            )));
        }
    }
    if state.velocity.len() != grads.len() {
        state.velocity = vec![None; grads.len()];
    }

    let mut diags = Vec::new();
    let mut effective = Vec::with_capacity(grads.len());
    for ((g, shape), name) in grads.iter().zip(&shapes).zip(&names) {
        if cfg.projects(shape) {
            let p = dep_project_detailed(&matrixize(g)?)?;
            if diagnostics {
                let sigma2 = dominant_triplet(&p.projected.matrix)?.sigma;
                diags.push(DepDiagnostic {
                    param_name: name.clone(),
                    sigma1: p.triplet.sigma,
                    sigma2,
                    frobenius_before: p.frobenius_before,
                    frobenius_after: p.frobenius_after,
                });
            }
            effective.push(p.projected.into_tensor());
        } else {
            effective.push(g.clone());
        }
    }

    for ((w, g), slot) in model
        .params_mut()
        .into_iter()
        .zip(effective)
        .zip(state.velocity.iter_mut())
    {
        let mut d = g;
        if cfg.weight_decay != 0.0 {
            for (di, wi) in d.data_mut().iter_mut().zip(w.data()) {
                *di += cfg.weight_decay * wi;
            }
        }
        let step = if cfg.momentum != 0.0 {
            match slot {
                Some(buf) => {
                    for (b, di) in buf.data_mut().iter_mut().zip(d.data()) {
                        *b = cfg.momentum * *b + di;
                    }
                }
                None => *slot = Some(d),
            }
            slot.as_ref().unwrap()
        } else {
            *slot = Some(d);
            slot.as_ref().unwrap()
        };
        for (wi, si) in w.data_mut().iter_mut().zip(step.data()) {
            *wi -= cfg.learning_rate * si;
        }
    }
    Ok(diags)
}
