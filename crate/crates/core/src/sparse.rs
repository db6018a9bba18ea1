//! Minimal sparse symmetric linear algebra: CSR storage, a Jacobi-
//! preconditioned conjugate gradient solver, and a power-iteration estimate
//! of the largest eigenvalue of a self-adjoint map.
//!
//! Everything here is deterministic: iteration orders are fixed and the power
//! iteration starts from a fixed-seed vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Relative symmetry defect tolerated by [`SparseSym::from_triplets`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default relative residual for SPD solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("entry ({0},{1}) outside {2}x{2} matrix")]
    IndexOutOfRange(usize, usize, usize),
    #[error("matrix is not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {defect:e}")]
    NotSymmetric { i: usize, j: usize, defect: f64 },
}

#[derive(Debug, Error)]
pub enum CgError {
    #[error("conjugate gradient breakdown: non-SPD matrix (curvature {0:e})")]
    Breakdown(f64),
    #[error("conjugate gradient did not reach tol {tol:e} in {iters} iterations (residual {residual:e})")]
    MaxIterations {
        iters: usize,
        tol: f64,
        residual: f64,
    },
}

/// Square symmetric matrix in compressed sparse row form.
///
/// Construction checks numerical symmetry to [`SYMMETRY_TOL`] relative to the
/// largest entry; duplicate triplets are summed.
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(SparseError::IndexOutOfRange(i, j, n));
            }
        }
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_by_key(|&(i, j, _)| (i, j));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mat = Self {
            n,
            row_ptr,
            col_idx,
            vals,
        };
        mat.check_symmetry()?;
        Ok(mat)
    }

    /// Same-pattern linear combination `a*A + b*B`.
    ///
    /// Panics if the two matrices were not assembled on an identical pattern.
    pub fn linear_combination(a: f64, ma: &SparseSym, b: f64, mb: &SparseSym) -> SparseSym {
        assert_eq!(ma.n, mb.n, "dimension mismatch");
        assert_eq!(ma.row_ptr, mb.row_ptr, "pattern mismatch");
        assert_eq!(ma.col_idx, mb.col_idx, "pattern mismatch");
        let vals = ma
            .vals
            .iter()
            .zip(&mb.vals)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        SparseSym {
            n: ma.n,
            row_ptr: ma.row_ptr.clone(),
            col_idx: ma.col_idx.clone(),
            vals,
        }
    }

    fn check_symmetry(&self) -> Result<(), SparseError> {
        let scale = self
            .vals
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                if j < i {
                    continue;
                }
                let aji = self.get(j, i);
                let defect = (self.vals[p] - aji).abs();
                if defect > SYMMETRY_TOL * scale {
                    return Err(SparseError::NotSymmetric { i, j, defect });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(p) => self.vals[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.col_idx[p]];
            }
            *yi = acc;
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        y
    }

    /// Quadratic form x'Ax.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply_vec(x))
    }

    /// Weighted inner product x'Ay.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply_vec(y))
    }

    /// Dense copy, row major. Intended for small oracles and debugging.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i][self.col_idx[p]] = self.vals[p];
            }
        }
        d
    }
}

/// Abstract symmetric linear map, so solves can run on restricted views of an
/// assembled matrix without extracting blocks.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearMap for SparseSym {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        SparseSym::apply(self, x, y)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a conjugate gradient run.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on an abstract SPD map.
///
/// Returns once the true residual satisfies ||Ax-b|| <= tol * ||b||. The
/// recurrence residual is cheap but drifts, so the contract is re-checked on
/// the recomputed residual before accepting.
pub fn pcg(
    op: &dyn LinearMap,
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<CgSolution, CgError> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(diag.len(), n);
    if n == 0 {
        return Ok(CgSolution {
            x: Vec::new(),
            iterations: 0,
            residual: 0.0,
        });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut iterations = 0;
    loop {
        let rnorm = norm2(&r);
        if rnorm <= tol * bnorm {
            // Recompute the residual; the recurrence may be optimistic.
            op.apply(&x, &mut ap);
            let true_r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
            let true_norm = norm2(&true_r);
            if true_norm <= tol * bnorm {
                return Ok(CgSolution {
                    x,
                    iterations,
                    residual: true_norm / bnorm,
                });
            }
            r = true_r;
            z = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
            p = z.clone();
            rz = dot(&r, &z);
        }
        if iterations >= max_iters {
            return Err(CgError::MaxIterations {
                iters: iterations,
                tol,
                residual: rnorm / bnorm,
            });
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CgError::Breakdown(pap));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z.iter_mut()
            .zip(&r)
            .zip(&inv_diag)
            .for_each(|((zi, ri), di)| *zi = ri * di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
}

/// Solve Ax = b for SPD `a` to relative residual `tol`.
///
/// Runs at most 10n iterations; the operators assembled in this crate are
/// uniformly well conditioned on quasi-uniform meshes, so CG terminates far
/// earlier in practice.
pub fn spd_solve(a: &SparseSym, b: &[f64], tol: f64) -> Result<Vec<f64>, CgError> {
    assert!(
        tol > 0.0 && tol < 1.0,
        "relative tolerance must lie in (0,1)"
    );
    let sol = pcg(a, &a.diagonal(), b, tol, 10 * a.n().max(1))?;
    Ok(sol.x)
}

/// Rayleigh-quotient estimate of the largest eigenvalue of a self-adjoint
/// positive semidefinite map, in the inner product `inner`.
///
/// The start vector comes from a fixed-seed generator, so repeated runs give
/// identical estimates. The estimate is nondecreasing in `iters`.
pub fn estimate_opnorm(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    inner: impl Fn(&[f64], &[f64]) -> f64,
    n: usize,
    iters: usize,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vnorm = inner(&v, &v).sqrt();
    if vnorm == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= vnorm);

    let mut estimate = 0.0f64;
    for _ in 0..iters.max(1) {
        let av = apply(&v);
        let rq = inner(&v, &av);
        estimate = estimate.max(rq);
        let avnorm = inner(&av, &av).sqrt();
        if avnorm <= f64::MIN_POSITIVE {
            break;
        }
        v = av.iter().map(|x| x / avnorm).collect();
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity(n: usize) -> SparseSym {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseSym::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = identity(5);
        let b = vec![3.0, -1.0, 0.5, 2.0, 7.0];
        let x = spd_solve(&a, &b, 1e-12).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_row_sums() {
        let a = SparseSym::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)])
            .unwrap();
        let x = spd_solve(&a, &[3.0, 3.0], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10);
        assert!((x[1] - 1.0).abs() < 1e-10);
    }

    /// Dense Gaussian elimination with partial pivoting, the solve oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    fn random_spd(n: usize, seed: u64) -> SparseSym {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for (row, _) in b.iter().enumerate() {
                    v += b[row][i] * b[row][j];
                }
                if i == j {
                    v += 1.0;
                }
                t.push((i, j, v));
            }
        }
        SparseSym::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        use rand::Rng as _;
        let a = random_spd(20, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tol = 1e-11;
        let x = spd_solve(&a, &b, tol).unwrap();
        let x_ref = dense_solve(a.to_dense(), b.clone());
        let diff: f64 = x
            .iter()
            .zip(&x_ref)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        let scale = norm2(&x_ref).max(1.0);
        assert!(diff / scale < 1e-9, "diff {diff:e}");
    }

    #[test]
    fn cg_terminates_within_three_n_iterations() {
        for seed in [1u64, 2, 3] {
            let n = 30;
            let a = random_spd(n, seed);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let sol = pcg(&a, &a.diagonal(), &b, 1e-10, 10 * n).unwrap();
            assert!(sol.iterations <= 3 * n, "{} iterations", sol.iterations);
            assert!(sol.residual <= 1e-10);
        }
    }

    #[test]
    fn iteration_budget_exhaustion_reports_residual() {
        let a = random_spd(6, 4);
        let b = vec![1.0; 6];
        match pcg(&a, &a.diagonal(), &b, 1e-14, 1) {
            Err(CgError::MaxIterations {
                iters, residual, ..
            }) => {
                assert_eq!(iters, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected MaxIterations, got {other:?}"),
        }
    }

    #[test]
    fn breakdown_on_indefinite_matrix() {
        let a = SparseSym::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        match pcg(&a, &[1.0, 1.0], &[1.0, 1.0], 1e-10, 100) {
            Err(CgError::Breakdown(_)) => {}
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_triplets_rejected() {
        let r = SparseSym::from_triplets(2, &[(0, 1, 1.0), (1, 0, 2.0), (0, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(r, Err(SparseError::NotSymmetric { .. })));
    }

    #[test]
    fn opnorm_of_scaled_identity_is_exact_after_one_iteration() {
        let est = estimate_opnorm(|v| v.iter().map(|x| 2.0 * x).collect(), dot, 6, 1);
        assert!((est - 2.0).abs() < 1e-14);
    }

    #[test]
    fn opnorm_of_diagonal_converges_to_max_entry() {
        let est = estimate_opnorm(|v| vec![v[0], 3.0 * v[1]], dot, 2, 60);
        assert!((est - 3.0).abs() < 1e-6, "estimate {est}");
    }

    /// Cyclic Jacobi eigenvalue iteration, the eigenvalue oracle.
    fn dense_max_eig(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        for _ in 0..60 {
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-15 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
                    let (s, c) = theta.sin_cos();
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn opnorm_within_five_percent_of_dense_eigen_oracle() {
        let a = random_spd(8, 11);
        let lam_ref = dense_max_eig(a.to_dense());
        let est = estimate_opnorm(|v| a.apply_vec(v), dot, 8, 50);
        assert!(est <= lam_ref * (1.0 + 1e-9));
        assert!(est >= 0.95 * lam_ref, "estimate {est} vs {lam_ref}");
    }

    #[test]
    fn opnorm_estimate_is_nondecreasing_in_iterations() {
        let a = random_spd(10, 13);
        let mut prev = 0.0;
        for iters in [1usize, 2, 5, 10, 25, 50] {
            let est = estimate_opnorm(|v| a.apply_vec(v), dot, 10, iters);
            assert!(est >= prev - 1e-14, "estimate dropped: {est} < {prev}");
            prev = est;
        }
    }

    proptest! {
        #[test]
        fn accepted_solves_meet_residual_contract(seed in 0u64..32, scale in 0.1f64..10.0) {
            let n = 12;
            let a = random_spd(n, seed);
            let b: Vec<f64> = (0..n).map(|i| scale * ((i * 37 % 11) as f64 - 5.0)).collect();
            let tol = 1e-10;
            let x = spd_solve(&a, &b, tol).unwrap();
            let r: Vec<f64> = b.iter().zip(a.apply_vec(&x)).map(|(bi, ai)| bi - ai).collect();
            prop_assert!(norm2(&r) <= tol * norm2(&b) * (1.0 + 1e-12));
        }
    }
}
