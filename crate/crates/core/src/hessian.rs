//! Loss-curvature probes: Hessian-vector products by central differences of
//! gradients, top algebraic eigenvalues, Rayleigh quotients and the
//! aligned-quadratic curvature check for DEP.

use std::cell::RefCell;

use serde::Serialize;

use crate::dep::{dep_project, MatrixizedGradient};
use crate::error::{Error, Result};
use crate::linalg::{dot, full_svd, norm2, symmetric_top_k, DenseMatrix};
use crate::snn::{loss_and_grad, Dynamics, Model};
use crate::tensor::Tensor;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 300;

/// A loss surface exposing its parameter point and gradients at nearby points.
pub trait GradientOracle {
    fn point(&self) -> &[f64];
    fn gradient_at(&self, theta: &[f64]) -> Result<Vec<f64>>;

    fn dim(&self) -> usize {
        self.point().len()
    }
}

/// `½ θᵀAθ` with `A` symmetric.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: DenseMatrix,
    pub theta: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: DenseMatrix, theta: Vec<f64>) -> Self {
        assert_eq!(a.rows(), theta.len());
        Self { a, theta }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let a = DenseMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 });
        Self::new(a, vec![0.0; n])
    }
}

impl GradientOracle for Quadratic {
    fn point(&self) -> &[f64] {
        &self.theta
    }

    fn gradient_at(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.a.matvec(theta))
    }
}

/// Training loss of a network on one fixed batch, through the smooth twin dynamics.
#[derive(Debug)]
pub struct SnnLoss {
    model: RefCell<Model>,
    theta: Vec<f64>,
    x: Tensor,
    labels: Vec<usize>,
    steps: usize,
}

impl SnnLoss {
    pub fn new(model: &Model, x: Tensor, labels: Vec<usize>, steps: usize) -> Self {
        Self {
            theta: model.flat_params(),
            model: RefCell::new(model.clone()),
            x,
            labels,
            steps,
        }
    }

    pub fn loss_at(&self, theta: &[f64]) -> Result<f64> {
        let mut m = self.model.borrow_mut();
        m.set_flat_params(theta)?;
        crate::snn::batch_loss(&m, &self.x, &self.labels, self.steps, Dynamics::SmoothTwin)
    }
}

impl GradientOracle for SnnLoss {
    fn point(&self) -> &[f64] {
        &self.theta
    }

    fn gradient_at(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut m = self.model.borrow_mut();
        m.set_flat_params(theta)?;
        Ok(loss_and_grad(&m, &self.x, &self.labels, self.steps, Dynamics::SmoothTwin)?.flat_params())
    }
}

/// `Hv ≈ (∇L(θ + h v̂) − ∇L(θ − h v̂)) ‖v‖ / 2h`, `h = 1e-4 (1 + ‖θ‖∞)`.
pub fn hvp<O: GradientOracle + ?Sized>(oracle: &O, v: &[f64]) -> Result<Vec<f64>> {
    let theta = oracle.point();
    if v.len() != theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} for {} parameters",
            v.len(),
            theta.len()
        )));
    }
    let nv = norm2(v);
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let h = 1e-4 * (1.0 + theta.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, vi)| t + h * vi / nv).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, vi)| t - h * vi / nv).collect();
    let gp = oracle.gradient_at(&plus)?;
    let gm = oracle.gradient_at(&minus)?;
    let s = nv / (2.0 * h);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) * s).collect())
}

/// `gᵀHg / ‖g‖²` with one application of `H`.
pub fn rayleigh_quotient<F>(mut apply: F, g: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n2 = dot(g, g);
    if n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(g, &apply(g)?) / n2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianReport {
    pub rho: f64,
    /// Largest algebraic eigenvalues, descending.
    pub top5: Vec<f64>,
    /// `λ₁ / Σ top5`; exceeds 1 when negative eigenvalues are present.
    pub pr: f64,
    pub converged: Vec<bool>,
    pub batch_id: String,
    pub model_tag: String,
}

impl HessianReport {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Top-`k` Hessian eigenvalues (`k` truncated to the dimension).
pub fn spectral_report<O: GradientOracle + ?Sized>(
    oracle: &O,
    k: usize,
    tol: f64,
    max_iter: usize,
    batch_id: &str,
    model_tag: &str,
) -> Result<HessianReport> {
    let dim = oracle.dim();
    if dim == 0 || k == 0 {
        return Err(Error::Config("spectral report needs k >= 1 and parameters".into()));
    }
    let mut failure = None;
    let top = symmetric_top_k(
        |v| match hvp(oracle, v) {
            Ok(hv) => hv,
            Err(e) => {
                failure.get_or_insert(e);
                vec![0.0; v.len()]
            }
        },
        dim,
        k,
        tol,
        max_iter,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let sum: f64 = top.values.iter().sum();
    Ok(HessianReport {
        rho: top.values[0],
        pr: top.values[0] / sum,
        top5: top.values,
        converged: top.converged,
        batch_id: batch_id.to_string(),
        model_tag: model_tag.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DepCurvature {
    Value(f64),
    /// The projected gradient is zero (rank-1 input).
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureCheck {
    pub kappa_std: f64,
    pub kappa_dep: DepCurvature,
    /// `κ_dep ≤ λ₂ + 1e-8`; `None` when not applicable.
    pub bound_holds: Option<bool>,
}

/// Builds the quadratic whose eigenvectors are `vec(uᵢvᵢᵀ)` from the SVD of
/// `g` with eigenvalues `spectrum` and measures the curvature seen by `g` and
/// by its DEP projection.
pub fn curvature_bound_check(spectrum: &[f64], g: &DenseMatrix) -> Result<CurvatureCheck> {
    let svd = full_svd(g)?;
    let available = g.rows().min(g.cols());
    if spectrum.len() > available {
        return Err(Error::RankDeficient {
            available,
            needed: spectrum.len(),
        });
    }
    if spectrum.len() < 2 {
        return Err(Error::Config("spectrum needs at least two eigenvalues".into()));
    }
    let basis: Vec<Vec<f64>> = (0..spectrum.len())
        .map(|i| {
            let (u, v) = (svd.u_col(i), svd.v_col(i));
            DenseMatrix::outer_sum(g.rows(), g.cols(), &[(1.0, &u, &v)]).into_data()
        })
        .collect();
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        for (lambda, b) in spectrum.iter().zip(&basis) {
            let c = lambda * dot(x, b);
            out.iter_mut().zip(b).for_each(|(o, bi)| *o += c * bi);
        }
        Ok(out)
    };

    let kappa_std = rayleigh_quotient(apply, g.data())?;
    let projected = dep_project(&MatrixizedGradient {
        matrix: g.clone(),
        original_shape: vec![g.rows(), g.cols()],
    })?
    .matrix;
    if projected.frobenius_norm() <= 1e-12 * g.frobenius_norm() {
        return Ok(CurvatureCheck {
            kappa_std,
            kappa_dep: DepCurvature::NotApplicable,
            bound_holds: None,
        });
    }
    let kappa_dep = rayleigh_quotient(apply, projected.data())?;
    Ok(CurvatureCheck {
        kappa_std,
        kappa_dep: DepCurvature::Value(kappa_dep),
        bound_holds: Some(kappa_dep <= spectrum[1] + 1e-8),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_hvp_is_exact() {
        let q = Quadratic::diagonal(&[5.0, 2.0, 1.0]);
        let hv = hvp(&q, &[1.0, 0.0, 0.0]).unwrap();
        assert!((hv[0] - 5.0).abs() < 1e-6 && hv[1].abs() < 1e-6 && hv[2].abs() < 1e-6);
        let a = hvp(&q, &[0.3, -1.0, 2.0]).unwrap();
        let b = hvp(&q, &[0.6, -2.0, 4.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
        assert!(matches!(hvp(&q, &[0.0; 3]), Err(Error::ZeroVector)));
    }

    #[test]
    fn report_on_diagonal() {
        let q = Quadratic::diagonal(&[5.0, 2.0, 1.0]);
        let r = spectral_report(&q, 5, 1e-10, 2000, "b", "m").unwrap();
        assert_eq!(r.top5.len(), 3);
        assert!((r.rho - 5.0).abs() < 1e-6);
        assert!((r.pr - 0.625).abs() < 1e-6);
    }

    #[test]
    fn report_with_negative_eigenvalues() {
        let q = Quadratic::diagonal(&[5.0, 2.0, 1.0, -3.0, -4.0]);
        let r = spectral_report(&q, 5, 1e-10, 5000, "b", "m").unwrap();
        let expect = [5.0, 2.0, 1.0, -3.0, -4.0];
        for (a, b) in r.top5.iter().zip(expect) {
            assert!((a - b).abs() < 1e-5, "{:?}", r.top5);
        }
        assert!((r.pr - 5.0).abs() < 1e-4);
    }

    #[test]
    fn rayleigh_examples() {
        let q = Quadratic::diagonal(&[5.0, 2.0, 1.0]);
        let h = |v: &[f64]| hvp(&q, v);
        assert!((rayleigh_quotient(h, &[1.0, 0.0, 0.0]).unwrap() - 5.0).abs() < 1e-6);
        let s = 1.0 / 3f64.sqrt();
        assert!((rayleigh_quotient(h, &[s, s, s]).unwrap() - 8.0 / 3.0).abs() < 1e-6);
        let q2 = Quadratic::diagonal(&[10.0, 4.0, 2.0]);
        let g = [0.4, -1.2, 0.7];
        let r1 = rayleigh_quotient(|v: &[f64]| hvp(&q, v), &g).unwrap();
        let r2 = rayleigh_quotient(|v: &[f64]| hvp(&q2, v), &g).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-6);
    }

    #[test]
    fn curvature_examples() {
        let g = DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let c = curvature_bound_check(&[10.0, 3.0], &g).unwrap();
        assert!((c.kappa_std - 9.3).abs() < 1e-9);
        match c.kappa_dep {
            DepCurvature::Value(k) => assert!((k - 3.0).abs() < 1e-9),
            DepCurvature::NotApplicable => panic!("expected a value"),
        }
        assert_eq!(c.bound_holds, Some(true));

        let r1 = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let c = curvature_bound_check(&[10.0, 3.0], &r1).unwrap();
        assert!((c.kappa_std - 10.0).abs() < 1e-12);
        assert_eq!(c.kappa_dep, DepCurvature::NotApplicable);

        assert!(matches!(
            curvature_bound_check(&[10.0, 3.0, 2.0], &g),
            Err(Error::RankDeficient { .. })
        ));
    }
}
