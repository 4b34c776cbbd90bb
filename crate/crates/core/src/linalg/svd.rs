use super::{dot, norm2, orthogonalize, weyl_vector, DenseMatrix};
use crate::error::{Error, Result};

/// Largest `min(rows, cols)` accepted by [`full_svd`].
pub const DENSE_SVD_LIMIT: usize = 512;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Leading singular triplet `(σ₁, u₁, v₁)`.
///
/// Orientation is fixed: the entry of `u` with the largest magnitude is
/// positive (first index wins on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriplet {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SvdTriplet {
    fn zero(m: usize, n: usize) -> Self {
        let mut u = vec![0.0; m];
        let mut v = vec![0.0; n];
        u[0] = 1.0;
        v[0] = 1.0;
        Self { sigma: 0.0, u, v }
    }

    /// True for the `‖G‖_F = 0` sentinel.
    pub fn is_zero(&self) -> bool {
        self.sigma == 0.0
    }

    pub(crate) fn orient(&mut self) {
        let mut best = 0;
        for (i, x) in self.u.iter().enumerate() {
            if x.abs() > self.u[best].abs() {
                best = i;
            }
        }
        if self.u[best] < 0.0 {
            self.u.iter_mut().for_each(|x| *x = -*x);
            self.v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Leading singular triplet by power iteration on the smaller Gram matrix.
///
/// The start vector is the normalized ones vector, so results are
/// reproducible bit for bit. Under an exact tie `σ₁ = σ₂` the returned
/// direction is whichever one the iteration settles on from that start.
pub fn leading_triplet(g: &DenseMatrix, tol: f64, max_iter: usize) -> Result<SvdTriplet> {
    assert!(tol > 0.0 && max_iter >= 1);
    let (m, n) = (g.rows(), g.cols());
    let fro = g.frobenius_norm();
    if fro == 0.0 {
        return Ok(SvdTriplet::zero(m, n));
    }
    let right_side = n <= m;
    let gram = if right_side { g.gram_cols() } else { g.gram_rows() };
    let d = gram.rows();
    let trace: f64 = (0..d).map(|i| gram.get(i, i)).sum();

    let mut x = vec![1.0 / (d as f64).sqrt(); d];
    let mut residual = f64::INFINITY;
    let mut restarted = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let y = gram.matvec(&x);
        let lam = dot(&x, &y);
        let ny = norm2(&y);
        if ny <= 1e-14 * trace && !restarted {
            // Start vector is (numerically) orthogonal to the range.
            x = weyl_vector(d);
            restarted = true;
            continue;
        }
        if lam <= 0.0 {
            break;
        }
        let r: f64 = y
            .iter()
            .zip(&x)
            .map(|(yi, xi)| (yi - lam * xi).powi(2))
            .sum::<f64>()
            .sqrt()
            / lam.sqrt();
        residual = r;
        if r <= tol * fro {
            return Ok(finish(g, x, right_side));
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    Err(Error::NonConvergence {
        iterations: it,
        residual: residual / fro,
    })
}

fn finish(g: &DenseMatrix, x: Vec<f64>, right_side: bool) -> SvdTriplet {
    let mut t = if right_side {
        let mut u = g.matvec(&x);
        let sigma = norm2(&u);
        u.iter_mut().for_each(|v| *v /= sigma);
        SvdTriplet { sigma, u, v: x }
    } else {
        let mut v = g.matvec_t(&x);
        let sigma = norm2(&v);
        v.iter_mut().for_each(|e| *e /= sigma);
        SvdTriplet { sigma, u: x, v }
    };
    t.orient();
    t
}

/// Thin SVD `G = U diag(σ) Vᵀ` with `r = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct FullSvd {
    /// Non-increasing; equal values keep their original column order.
    pub sigmas: Vec<f64>,
    /// `m × r`
    pub u: DenseMatrix,
    /// `n × r`
    pub v: DenseMatrix,
}

impl FullSvd {
    pub fn u_col(&self, i: usize) -> Vec<f64> {
        self.u.column(i)
    }

    pub fn v_col(&self, i: usize) -> Vec<f64> {
        self.v.column(i)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let us: Vec<Vec<f64>> = (0..self.sigmas.len()).map(|i| self.u_col(i)).collect();
        let vs: Vec<Vec<f64>> = (0..self.sigmas.len()).map(|i| self.v_col(i)).collect();
        let terms: Vec<(f64, &[f64], &[f64])> = self
            .sigmas
            .iter()
            .zip(us.iter().zip(&vs))
            .map(|(&s, (u, v))| (s, u.as_slice(), v.as_slice()))
            .collect();
        DenseMatrix::outer_sum(self.u.rows(), self.v.rows(), &terms)
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn full_svd(g: &DenseMatrix) -> Result<FullSvd> {
    let (m, n) = (g.rows(), g.cols());
    if m.min(n) > DENSE_SVD_LIMIT {
        return Err(Error::SizeExceeded {
            rows: m,
            cols: n,
            limit: DENSE_SVD_LIMIT,
        });
    }
    if m >= n {
        Ok(jacobi_tall(g))
    } else {
        let t = jacobi_tall(&g.transpose());
        Ok(FullSvd {
            sigmas: t.sigmas,
            u: t.v,
            v: t.u,
        })
    }
}

fn jacobi_tall(g: &DenseMatrix) -> FullSvd {
    let (m, n) = (g.rows(), g.cols());
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| g.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = a.iter().map(|col| norm2(col)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: ties keep index order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 && norms[j] > f64::MIN_POSITIVE * 1e8 {
            u_cols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(Vec::new());
            pending.push(slot);
        }
    }
    // Complete U for zero singular values.
    let mut basis: Vec<Vec<f64>> = u_cols.iter().filter(|c| !c.is_empty()).cloned().collect();
    let mut next_e = 0;
    for slot in pending {
        loop {
            let mut e = vec![0.0; m];
            e[next_e % m] = 1.0;
            next_e += 1;
            orthogonalize(&mut e, &basis);
            orthogonalize(&mut e, &basis);
            let nrm = norm2(&e);
            if nrm > 0.5 {
                e.iter_mut().for_each(|x| *x /= nrm);
                basis.push(e.clone());
                u_cols[slot] = e;
                break;
            }
        }
    }

    let sigmas: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = DenseMatrix::from_fn(m, n, |i, k| u_cols[k][i]);
    let vm = DenseMatrix::from_fn(n, n, |i, k| v[order[k]][i]);
    FullSvd { sigmas, u, v: vm }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn orthonormal_cols(m: &DenseMatrix) -> f64 {
        let g = m.gram_cols();
        let mut worst = 0.0_f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_leading_triplet() {
        let g = DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let t = leading_triplet(&g, 1e-10, 1000).unwrap();
        assert!((t.sigma - 3.0).abs() < 1e-12);
        assert!((t.u[0] - 1.0).abs() < 1e-9 && t.u[1].abs() < 1e-9);
        assert!((t.v[0] - 1.0).abs() < 1e-9 && t.v[1].abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_sentinel() {
        let t = leading_triplet(&DenseMatrix::zeros(2, 3), 1e-10, 10).unwrap();
        assert!(t.is_zero());
        assert_eq!(t.u, vec![1.0, 0.0]);
        assert_eq!(t.v, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn leading_sigma_matches_gram_eigen_oracle() {
        let g = random(4, 6, 7);
        let t = leading_triplet(&g, 1e-10, 1000).unwrap();
        let eig = symmetric_eigen(&g.gram_cols());
        assert!((t.sigma - eig.values[0].sqrt()).abs() < 1e-9);
        assert!((norm2(&t.u) - 1.0).abs() < 1e-12);
        assert!((norm2(&t.v) - 1.0).abs() < 1e-12);
        // ‖Gv − σu‖ and ‖Gᵀu − σv‖
        let gv = g.matvec(&t.v);
        let gtu = g.matvec_t(&t.u);
        let r1: f64 = gv.iter().zip(&t.u).map(|(a, b)| (a - t.sigma * b).powi(2)).sum();
        let r2: f64 = gtu.iter().zip(&t.v).map(|(a, b)| (a - t.sigma * b).powi(2)).sum();
        assert!(r1.sqrt() <= 1e-10 * g.frobenius_norm());
        assert!(r2.sqrt() <= 1e-9 * g.frobenius_norm());
    }

    #[test]
    fn start_vector_orthogonal_to_range_recovers() {
        let g = DenseMatrix::from_rows(&[&[1.0, -1.0], &[2.0, -2.0], &[0.0, 0.0]]).unwrap();
        let t = leading_triplet(&g, 1e-10, 1000).unwrap();
        assert!((t.sigma - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = random(30, 30, 1);
        assert!(matches!(
            leading_triplet(&g, 1e-10, 1),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn identity_ties_keep_index_order() {
        let s = full_svd(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(s.sigmas, vec![1.0, 1.0]);
        assert_eq!(s.u_col(0), vec![1.0, 0.0]);
        assert_eq!(s.v_col(1), vec![0.0, 1.0]);
    }

    #[test]
    fn single_entry_matrix() {
        let g = DenseMatrix::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]).unwrap();
        let s = full_svd(&g).unwrap();
        assert_eq!(s.sigmas, vec![2.0, 0.0]);
        assert!(orthonormal_cols(&s.u) < 1e-12);
        assert!(orthonormal_cols(&s.v) < 1e-12);
        assert!(s.reconstruct().sub(&g).frobenius_norm() < 1e-12);
    }

    #[test]
    fn reconstruction_random_8x5() {
        let g = random(8, 5, 11);
        let s = full_svd(&g).unwrap();
        let rel = s.reconstruct().sub(&g).frobenius_norm() / g.frobenius_norm();
        assert!(rel < 1e-8, "{rel}");
        assert!(orthonormal_cols(&s.u) < 1e-9);
        assert!(orthonormal_cols(&s.v) < 1e-9);
        assert!(s.sigmas.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_and_rank_deficient() {
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, 0.0, 1.0, -2.0, 1.0];
        let g = DenseMatrix::outer_sum(3, 5, &[(2.0, &u, &v)]);
        let s = full_svd(&g).unwrap();
        assert_eq!(s.sigmas.len(), 3);
        assert!(orthonormal_cols(&s.u) < 1e-9);
        assert!(orthonormal_cols(&s.v) < 1e-9);
        assert!(s.sigmas[1].abs() < 1e-12);
        assert!(s.reconstruct().sub(&g).frobenius_norm() < 1e-12);
    }

    #[test]
    fn size_limit() {
        let g = DenseMatrix::zeros(513, 513);
        assert!(matches!(full_svd(&g), Err(Error::SizeExceeded { .. })));
    }

    #[test]
    fn triplet_is_bitwise_reproducible() {
        let g = random(12, 7, 3);
        assert_eq!(
            leading_triplet(&g, 1e-10, 1000).unwrap(),
            leading_triplet(&g, 1e-10, 1000).unwrap()
        );
    }
}
