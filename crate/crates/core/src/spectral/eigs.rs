//! Smallest eigenpairs of `W φ = λ A φ`.
//!
//! The problem is symmetrized to `B = A^{-1/2} W A^{-1/2}`. Large problems use
//! shift-invert block Krylov iteration on `(B − σI)^{-1}` with a slightly
//! negative σ (so the factorization is of a positive definite matrix), full
//! reorthogonalization, and Rayleigh–Ritz extraction with `B` itself. Pairs are
//! accepted only when the true residual `‖By − θy‖` is below tolerance. Small
//! problems are solved densely.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use super::{spmv, LaplacianPair, SpectralEmbedding};
use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul_col_major, MatRef};

/// Problems up to this size skip the iterative solver.
const DENSE_LIMIT: usize = 400;

#[derive(Debug, Clone)]
pub struct EigsOptions {
    /// Krylov block size; should exceed the largest expected multiplicity.
    pub block: usize,
    /// Residual tolerance relative to the largest requested eigenvalue.
    pub rtol: f64,
    pub seed: u64,
}

impl Default for EigsOptions {
    fn default() -> Self {
        Self {
            block: 12,
            rtol: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// The `k` smallest eigenpairs with default options.
pub fn lb_eigs(lap: &LaplacianPair, k: usize) -> Result<SpectralEmbedding> {
    lb_eigs_with(lap, k, &EigsOptions::default())
}

pub fn lb_eigs_with(lap: &LaplacianPair, k: usize, opts: &EigsOptions) -> Result<SpectralEmbedding> {
    let n = lap.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= K < n, got K = {k} with n = {n}"
        )));
    }
    if k > n / 10 {
        log::warn!("K = {k} exceeds n/10 = {}; high modes are poorly resolved", n / 10);
    }
    let inv_sqrt: Vec<f64> = lap.areas().as_slice().iter().map(|a| 1.0 / a.sqrt()).collect();
    let b = symmetrized(lap.w(), &inv_sqrt);

    let block = opts.block.max(1);
    let cap = (6 * k + 8 * block + 60).min(n);
    let (theta, y) = if n <= DENSE_LIMIT || cap >= n {
        dense_eigs(&b, k)
    } else {
        krylov_eigs(&b, k, block, cap, opts)?
    };
    Ok(finish(n, k, &theta, &y, &inv_sqrt))
}

fn symmetrized(w: &CsMat<f64>, inv_sqrt: &[f64]) -> CsMat<f64> {
    let mut b = w.clone();
    let (indptr, indices, data) = (b.indptr().to_owned(), b.indices().to_vec(), b.data_mut());
    for i in 0..inv_sqrt.len() {
        for p in indptr.outer_inds_sz(i) {
            data[p] *= inv_sqrt[i] * inv_sqrt[indices[p]];
        }
    }
    b
}

/// Converts orthonormal eigenvectors of `B` (column-major `n × k`) to
/// `A`-orthonormal `φ = A^{-1/2} y`, fixes signs, and lays them out row-major.
fn finish(n: usize, k: usize, theta: &[f64], y: &[f64], inv_sqrt: &[f64]) -> SpectralEmbedding {
    let mut phi = vec![0.0; n * k];
    for j in 0..k {
        let col = &y[j * n..(j + 1) * n];
        let mut best = 0;
        for i in 1..n {
            if (col[i] * inv_sqrt[i]).abs() > (col[best] * inv_sqrt[best]).abs() {
                best = i;
            }
        }
        let s = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            phi[i * k + j] = s * col[i] * inv_sqrt[i];
        }
    }
    let eigenvalues = theta.iter().map(|t| t.max(0.0)).collect();
    SpectralEmbedding::from_parts(n, k, eigenvalues, phi).expect("sizes consistent")
}

fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

fn dense_eigs(b: &CsMat<f64>, k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = b.rows();
    let mut h = DMatrix::zeros(n, n);
    for (i, row) in b.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            h[(i, j)] = v;
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let (vals, vecs) = sorted_eigen(h);
    (vals[..k].to_vec(), vecs.columns(0, k).iter().copied().collect())
}

/// Shift-inverted operator `x ↦ (B − σI)^{-1} x`.
struct ShiftInvert {
    ldl: LdlNumeric<f64, usize>,
}

impl ShiftInvert {
    fn new(b: &CsMat<f64>, sigma: f64) -> Result<Self> {
        let n = b.rows();
        let mut tri = TriMat::new((n, n));
        for (i, row) in b.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                tri.add_triplet(i, j, v);
            }
            tri.add_triplet(i, i, -sigma);
        }
        let shifted: CsMat<f64> = tri.to_csc();
        let ldl = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .numeric(shifted.view())
            .map_err(|e| Error::InvalidArgument(format!("shifted Laplacian factorization failed: {e}")))?;
        Ok(Self { ldl })
    }

    /// Applies the operator to each column of a column-major block.
    fn apply(&self, x: &[f64], n: usize) -> Vec<f64> {
        let cols: Vec<Vec<f64>> = x.par_chunks(n).map(|c| self.ldl.solve(c)).collect();
        cols.concat()
    }
}

struct Basis {
    n: usize,
    q: Vec<f64>,
    bq: Vec<f64>,
}

impl Basis {
    fn m(&self) -> usize {
        self.q.len() / self.n
    }

    /// Removes components along the basis from each column of `v` (two
    /// classical Gram–Schmidt passes).
    fn project_out(&self, v: &mut [f64], cols: usize) {
        let (n, m) = (self.n, self.m());
        if m == 0 {
            return;
        }
        for _ in 0..2 {
            let qm = MatRef::col_major(&self.q, n, m);
            let c = matmul_col_major(qm.t(), MatRef::col_major(v, n, cols));
            gemm(-1.0, qm, MatRef::col_major(&c, m, cols), 1.0, v, 1, n);
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Orthonormalizes the block `v` against the basis and within itself.
/// Columns that collapse are replaced by fresh random directions.
fn orthonormalize(basis: &Basis, v: &mut [f64], cols: usize, rng: &mut ChaCha8Rng) {
    let n = basis.n;
    basis.project_out(v, cols);
    for j in 0..cols {
        let mut attempts = 0;
        loop {
            let before = norm(&v[j * n..(j + 1) * n]);
            for _ in 0..2 {
                for p in 0..j {
                    let (head, tail) = v.split_at_mut(j * n);
                    let prev = &head[p * n..(p + 1) * n];
                    let cur = &mut tail[..n];
                    let c = dot(prev, cur);
                    cur.iter_mut().zip(prev).for_each(|(x, y)| *x -= c * y);
                }
            }
            let after = norm(&v[j * n..(j + 1) * n]);
            if after > 1e-8 * before && after > 0.0 {
                v[j * n..(j + 1) * n].iter_mut().for_each(|x| *x /= after);
                break;
            }
            attempts += 1;
            assert!(attempts < 10, "cannot extend Krylov basis");
            let col = &mut v[j * n..(j + 1) * n];
            col.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            let mut single = col.to_vec();
            basis.project_out(&mut single, 1);
            col.copy_from_slice(&single);
        }
    }
}

fn krylov_eigs(b: &CsMat<f64>, k: usize, block: usize, cap: usize, opts: &EigsOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = b.rows();
    let mean_diag = (0..n).map(|i| b.get(i, i).copied().unwrap_or(0.0)).sum::<f64>() / n as f64;
    let sigma = if mean_diag > 0.0 {
        -0.01 * mean_diag / n as f64
    } else {
        -1e-8
    };
    let op = ShiftInvert::new(b, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (n as u64).rotate_left(17) ^ k as u64);

    let mut basis = Basis {
        n,
        q: Vec::with_capacity(n * cap),
        bq: Vec::with_capacity(n * cap),
    };
    let start: Vec<f64> = (0..n * block).map(|_| rng.sample(StandardNormal)).collect();
    // two applications damp the high-frequency content of the random start
    let mut v = op.apply(&op.apply(&start, n), n);
    orthonormalize(&basis, &mut v, block, &mut rng);

    let mut next_check = ((16 * k).div_ceil(10)).max(k + block);
    let step = (k / 4).max(block);
    let rtol = opts.rtol;
    let mut converged = 0;
    loop {
        let cols = v.len() / n;
        let room = cap - basis.m();
        let take = cols.min(room);
        basis.q.extend_from_slice(&v[..take * n]);
        for j in 0..take {
            basis.bq.extend(spmv(b, &v[j * n..(j + 1) * n]));
        }
        let m = basis.m();
        if m >= next_check || m >= cap {
            let (theta, y, ok) = rayleigh_ritz(&basis, k, rtol);
            if ok == k {
                return Ok((theta, y));
            }
            converged = ok;
            log::debug!("eigs: basis {m}, {ok}/{k} converged");
            next_check = m + step;
        }
        if m >= cap {
            return Err(Error::ConvergenceFailure {
                converged,
                requested: k,
            });
        }
        let width = block.min(cap - m);
        let last = &basis.q[(m - width) * n..m * n];
        v = op.apply(last, n);
        orthonormalize(&basis, &mut v, width, &mut rng);
    }
}

/// Ritz pairs of `B` over the basis. Returns the `k` smallest Ritz values, the
/// Ritz vectors (column-major) and how many leading pairs have converged.
fn rayleigh_ritz(basis: &Basis, k: usize, rtol: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let (n, m) = (basis.n, basis.m());
    let qm = MatRef::col_major(&basis.q, n, m);
    let bqm = MatRef::col_major(&basis.bq, n, m);
    let h = matmul_col_major(qm.t(), bqm);
    let h = DMatrix::from_column_slice(m, m, &h);
    let h = (&h + h.transpose()) * 0.5;
    let (vals, vecs) = sorted_eigen(h);
    let s: Vec<f64> = vecs.columns(0, k).iter().copied().collect();
    let sm = MatRef::col_major(&s, m, k);
    let y = matmul_col_major(qm, sm);
    let by = matmul_col_major(bqm, sm);
    let theta = vals[..k].to_vec();
    let scale = theta[k - 1].abs().max(f64::MIN_POSITIVE);
    let mut ok = 0;
    for j in 0..k {
        let r: f64 = (0..n)
            .map(|i| {
                let d = by[j * n + i] - theta[j] * y[j * n + i];
                d * d
            })
            .sum::<f64>()
            .sqrt();
        if r <= rtol * scale {
            ok += 1;
        } else {
            break;
        }
    }
    (theta, y, ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, vertex_areas};
    use crate::spectral::cotan_laplacian;

    /// ‖Wφ − λAφ‖ / ‖Aφ‖ for every column.
    fn residuals(lap: &LaplacianPair, emb: &SpectralEmbedding) -> Vec<f64> {
        let a = lap.areas().as_slice();
        (0..emb.k())
            .map(|j| {
                let phi = emb.column(j);
                let w = lap.apply_w(&phi);
                let lam = emb.eigenvalues()[j];
                let num: f64 = (0..phi.len()).map(|i| (w[i] - lam * a[i] * phi[i]).powi(2)).sum();
                let den: f64 = (0..phi.len()).map(|i| (a[i] * phi[i]).powi(2)).sum();
                (num / den).sqrt()
            })
            .collect()
    }

    fn gram(emb: &SpectralEmbedding, a: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..emb.k() {
            for q in 0..emb.k() {
                let g: f64 = (0..emb.n()).map(|i| emb.row(i)[p] * a[i] * emb.row(i)[q]).sum();
                let want = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((g - want).abs());
            }
        }
        worst
    }

    #[test]
    fn sphere_spectrum_matches_harmonics() {
        let m = shapes::icosphere(16);
        let lap = cotan_laplacian(&m).unwrap();
        let emb = lb_eigs(&lap, 16).unwrap();
        let ev = emb.eigenvalues();
        let expected: Vec<f64> = [(0, 1), (2, 3), (6, 5), (12, 7)]
            .iter()
            .flat_map(|&(v, mult)| std::iter::repeat(v as f64).take(mult))
            .collect();
        assert!(ev[0] <= 1e-8 * ev[1]);
        for j in 1..16 {
            assert!((ev[j] - expected[j]).abs() <= 0.05 * expected[j], "{j}: {}", ev[j]);
        }
        assert!(gram(&emb, lap.areas().as_slice()) < 1e-6);
        assert!(residuals(&lap, &emb).iter().all(|&r| r < 1e-6));
    }

    #[test]
    fn krylov_and_dense_agree() {
        let m = shapes::bumpy_blob(7);
        let lap = cotan_laplacian(&m).unwrap();
        let n = lap.len();
        let k = 20;
        let inv_sqrt: Vec<f64> = lap.areas().as_slice().iter().map(|a| 1.0 / a.sqrt()).collect();
        let b = symmetrized(lap.w(), &inv_sqrt);
        let (dense, _) = dense_eigs(&b, k);
        let opts = EigsOptions::default();
        let (kry, _) = krylov_eigs(&b, k, opts.block, 6 * k + 8 * opts.block + 60, &opts).unwrap();
        assert!(n > DENSE_LIMIT);
        for j in 0..k {
            assert!(
                (dense[j] - kry[j]).abs() <= 1e-8 * dense[k - 1],
                "{j}: {} vs {}",
                dense[j],
                kry[j]
            );
        }
    }

    #[test]
    fn first_mode_is_constant() {
        let m = shapes::bumpy_blob(8);
        let lap = cotan_laplacian(&m).unwrap();
        let emb = lb_eigs(&lap, 10).unwrap();
        let c = emb.column(0);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!(mean > 0.0);
        assert!(c.iter().all(|v| ((v - mean) / mean).abs() < 1e-4));
        let total = vertex_areas(&m).unwrap().total();
        assert!((mean - 1.0 / total.sqrt()).abs() < 1e-6 * mean);
    }

    #[test]
    fn scaling_rescales_spectrum() {
        let m = shapes::bumpy_blob(8);
        let s = 1.7;
        let e1 = lb_eigs(&cotan_laplacian(&m).unwrap(), 12).unwrap();
        let e2 = lb_eigs(&cotan_laplacian(&m.map_vertices(|p| p * s)).unwrap(), 12).unwrap();
        for j in 1..12 {
            let want = e1.eigenvalues()[j] / (s * s);
            assert!((e2.eigenvalues()[j] - want).abs() < 1e-8 * want);
        }
        // compare columns where the eigenvalue is simple, so the vector is unique up to sign
        for j in 0..4 {
            for i in (0..m.num_vertices()).step_by(37) {
                let want = e1.row(i)[j] / s;
                assert!((e2.row(i)[j] - want).abs() < 1e-6 * e1.row(i)[0].abs() / s);
            }
        }
    }

    #[test]
    fn rigid_motion_keeps_eigenvalues() {
        let m = shapes::bumpy_blob(8);
        let moved = shapes::transformed(&m, &shapes::generic_rigid_motion());
        let e1 = lb_eigs(&cotan_laplacian(&m).unwrap(), 12).unwrap();
        let e2 = lb_eigs(&cotan_laplacian(&moved).unwrap(), 12).unwrap();
        for j in 1..12 {
            let (a, b) = (e1.eigenvalues()[j], e2.eigenvalues()[j]);
            assert!((a - b).abs() <= 1e-8 * a);
        }
    }

    #[test]
    fn sign_convention_holds() {
        let m = shapes::bumpy_blob(6);
        let emb = lb_eigs(&cotan_laplacian(&m).unwrap(), 8).unwrap();
        for j in 0..8 {
            let c = emb.column(j);
            let mut best = 0;
            for i in 1..c.len() {
                if c[i].abs() > c[best].abs() {
                    best = i;
                }
            }
            assert!(c[best] > 0.0);
        }
    }

    #[test]
    fn rejects_k_at_least_n() {
        let lap = cotan_laplacian(&shapes::regular_tetrahedron(1.0)).unwrap();
        assert!(lb_eigs(&lap, 4).is_err());
        assert!(lb_eigs(&lap, 0).is_err());
        assert_eq!(lb_eigs(&lap, 3).unwrap().k(), 3);
    }
}
