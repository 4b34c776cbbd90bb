use super::{axpy, dot, norm2, orthogonalize, weyl_vector, DenseMatrix};

/// Dense symmetric eigendecomposition, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// `vectors[i]` pairs with `values[i]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic two-sided Jacobi eigensolver for small symmetric matrices.
///
/// Only the upper triangle is read; the input is assumed symmetric.
pub fn symmetric_eigen(a: &DenseMatrix) -> SymmetricEigen {
    let n = a.rows();
    assert_eq!(n, a.cols(), "symmetric_eigen needs a square matrix");
    let mut m: Vec<f64> = DenseMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            a.get(i, j)
        } else {
            a.get(j, i)
        }
    })
    .into_data();
    let mut v = DenseMatrix::identity(n).into_data();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← Jᵀ A J on rows/cols p, q.
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap());
    SymmetricEigen {
        values: order.iter().map(|&i| m[i * n + i]).collect(),
        vectors: order
            .iter()
            .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
            .collect(),
    }
}

/// Result of [`symmetric_top_k`]. Entries are kept even when the
/// corresponding `converged` flag is false.
#[derive(Debug, Clone)]
pub struct TopEigen {
    /// Descending by algebraic value.
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl TopEigen {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

struct PowerResult {
    value: f64,
    vector: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Power iteration on `apply(x) + shift·x`, restricted to the orthogonal
/// complement of `found`.
fn power<F: FnMut(&[f64]) -> Vec<f64>>(
    apply: &mut F,
    dim: usize,
    shift: f64,
    found: &[Vec<f64>],
    tol: f64,
    scale: Option<f64>,
    max_iter: usize,
) -> PowerResult {
    let mut x = weyl_vector(dim);
    orthogonalize(&mut x, found);
    let nx = norm2(&x);
    if nx == 0.0 {
        return PowerResult {
            value: shift,
            vector: x,
            converged: false,
            iterations: 0,
        };
    }
    x.iter_mut().for_each(|v| *v /= nx);

    let mut lam = 0.0;
    for it in 1..=max_iter {
        let mut y = apply(&x);
        if shift != 0.0 {
            axpy(shift, &x, &mut y);
        }
        orthogonalize(&mut y, found);
        lam = dot(&x, &y);
        let mut r = y.clone();
        axpy(-lam, &x, &mut r);
        let res = norm2(&r);
        let bound = tol * scale.unwrap_or(lam.abs());
        if res <= bound {
            return PowerResult {
                value: lam,
                vector: x,
                converged: true,
                iterations: it,
            };
        }
        let ny = norm2(&y);
        if ny == 0.0 {
            break;
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    PowerResult {
        value: lam,
        vector: x,
        converged: false,
        iterations: max_iter,
    }
}

/// Top-`k` algebraic eigenvalues of a symmetric linear operator.
///
/// A first power iteration finds the dominant-magnitude eigenvalue `μ`. When
/// `μ ≥ 0` it is already the largest algebraic eigenvalue; the remaining ones
/// come from deflated power iteration on `H + cI`, where the shift `c` lifts
/// the most negative eigenvalue to (about) zero so that large negative
/// eigenvalues cannot win the magnitude race.
pub fn symmetric_top_k<F: FnMut(&[f64]) -> Vec<f64>>(
    mut apply: F,
    dim: usize,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> TopEigen {
    let k = k.min(dim);
    let mut out = TopEigen {
        values: Vec::with_capacity(k),
        vectors: Vec::with_capacity(k),
        converged: Vec::with_capacity(k),
        iterations: Vec::with_capacity(k),
    };
    if k == 0 {
        return out;
    }

    let dominant = power(&mut apply, dim, 0.0, &[], tol, None, max_iter);
    let mu = dominant.value;
    let scale = mu.abs();

    let shift;
    if mu >= 0.0 {
        out.values.push(mu);
        out.vectors.push(dominant.vector);
        out.converged.push(dominant.converged);
        out.iterations.push(dominant.iterations);
        if k == 1 {
            return out;
        }
        // Most negative eigenvalue of H is μ + (dominant eigenvalue of H − μI).
        let low = power(&mut apply, dim, -mu, &[], tol, Some(scale), max_iter);
        let lambda_min = mu + low.value;
        shift = if lambda_min < 0.0 {
            -1.05 * lambda_min
        } else {
            0.0
        };
    } else {
        shift = -1.05 * mu;
    }

    while out.values.len() < k {
        let r = power(
            &mut apply,
            dim,
            shift,
            &out.vectors,
            tol,
            Some(scale.max(f64::MIN_POSITIVE)),
            max_iter,
        );
        out.values.push(r.value - shift);
        out.vectors.push(r.vector);
        out.converged.push(r.converged);
        out.iterations.push(r.iterations);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_op(d: Vec<f64>) -> impl FnMut(&[f64]) -> Vec<f64> {
        move |x: &[f64]| x.iter().zip(&d).map(|(a, b)| a * b).collect()
    }

    #[test]
    fn jacobi_recovers_diagonal() {
        let a = DenseMatrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 5.0, 0.0], &[0.0, 0.0, -2.0]])
            .unwrap();
        let e = symmetric_eigen(&a);
        assert_eq!(e.values, vec![5.0, 1.0, -2.0]);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a.set(i, j, x);
                a.set(j, i, x);
            }
        }
        let e = symmetric_eigen(&a);
        for (lam, q) in e.values.iter().zip(&e.vectors) {
            let aq = a.matvec(q);
            let r: f64 = aq.iter().zip(q).map(|(x, y)| (x - lam * y).powi(2)).sum();
            assert!(r.sqrt() < 1e-12);
        }
    }

    #[test]
    fn top_k_diagonal() {
        let t = symmetric_top_k(diag_op(vec![5.0, 2.0, 1.0]), 3, 3, 1e-12, 1000);
        assert!(t.all_converged());
        for (a, b) in t.values.iter().zip([5.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-9, "{:?}", t.values);
        }
    }

    #[test]
    fn top_k_ignores_large_negative() {
        let t = symmetric_top_k(diag_op(vec![5.0, -4.0, 1.0]), 3, 2, 1e-12, 2000);
        assert!((t.values[0] - 5.0).abs() < 1e-9);
        assert!((t.values[1] - 1.0).abs() < 1e-9, "{:?}", t.values);
    }

    #[test]
    fn top_k_of_negated_is_reversed_bottom() {
        let d = vec![5.0, 2.0, 1.0, -0.5];
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let t = symmetric_top_k(diag_op(neg), 4, 3, 1e-12, 5000);
        for (a, b) in t.values.iter().zip([0.5, -1.0, -2.0]) {
            assert!((a - b).abs() < 1e-8, "{:?}", t.values);
        }
    }

    #[test]
    fn partial_results_flag_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..40).map(|_| rng.gen_range(0.9..1.0)).collect();
        let t = symmetric_top_k(diag_op(d), 40, 2, 1e-14, 3);
        assert_eq!(t.values.len(), 2);
        assert!(!t.all_converged());
    }
}
