//! Functional maps between truncated spectral bases: anchor correlations,
//! orthonormal (Procrustes) and least-squares estimates, the windowed
//! singular-value rule for the usable dimension, and point-map recovery.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::lmd::{AnchorSet, Correspondence};
use crate::nn::nearest_rows;
use crate::spectral::SpectralEmbedding;

/// Smallest dimension `select_dimension` returns when the anchors allow it.
pub const K_MIN: usize = 4;
/// Window length of the singular-value rule.
pub const SV_WINDOW: usize = 10;
/// Threshold on a full window of normalized singular values.
pub const SV_THRESHOLD: f64 = 0.1;
/// Below this `σ_k/σ_1` the Procrustes estimate is reported as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// `k × k` map acting on row coefficients: `Φ₁(p)·C ≈ Φ₂(T(p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    c: DMatrix<f64>,
}

impl FunctionalMap {
    pub fn new(c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() || c.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: c.nrows(),
                found: c.ncols(),
            });
        }
        Ok(Self { c })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            c: DMatrix::identity(k, k),
        }
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `max |CᵀC − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.c.transpose() * &self.c - DMatrix::identity(self.k(), self.k());
        g.amax()
    }

    /// CSV text: `k` on the first line, then one row of `C` per line.
    pub fn to_csv(&self) -> String {
        let k = self.k();
        let mut s = format!("{k}\n");
        for i in 0..k {
            for j in 0..k {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}", self.c[(i, j)]);
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let k: usize = head
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, 1, "first line must be the dimension"))?;
        let mut vals = Vec::with_capacity(k * k);
        for (ln, line) in lines {
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(path, ln + 1, "bad number"))?;
            if row.len() != k {
                return Err(Error::parse(
                    path,
                    ln + 1,
                    format!("expected {k} columns, found {}", row.len()),
                ));
            }
            vals.extend(row);
        }
        if vals.len() != k * k {
            return Err(Error::parse(path, 0, format!("expected {k} rows")));
        }
        Self::new(DMatrix::from_row_slice(k, k, &vals))
    }
}

/// Singular values in descending order with matching factors, so that
/// `A = U·diag(σ)·Vᵀ`. Each left singular vector has its largest-magnitude
/// entry positive (lowest index on ties).
#[derive(Debug, Clone)]
pub struct SingularSpectrum {
    pub sigma: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Sorted, sign-normalized SVD of a square matrix.
pub fn svd_sorted(a: &DMatrix<f64>) -> SingularSpectrum {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V");
    let n = svd.singular_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });
    let mut su = DMatrix::zeros(u.nrows(), n);
    let mut sv = DMatrix::zeros(vt.ncols(), n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u.column(src).into_owned();
        let mut vc = vt.row(src).transpose();
        let mut lead = 0;
        for r in 1..uc.len() {
            if uc[r].abs() > uc[lead].abs() {
                lead = r;
            }
        }
        if uc[lead] < 0.0 {
            uc = -uc;
            vc = -vc;
        }
        su.set_column(dst, &uc);
        sv.set_column(dst, &vc);
        sigma.push(svd.singular_values[src]);
    }
    SingularSpectrum { sigma, u: su, v: sv }
}

/// Rows of the first `k` columns of `emb` at `idx`, row-major.
fn gather(emb: &SpectralEmbedding, idx: &[usize], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * k);
    for &i in idx {
        out.extend_from_slice(&emb.row(i)[..k]);
    }
    out
}

fn check_dims(emb1: &SpectralEmbedding, emb2: &SpectralEmbedding, k: usize) -> Result<()> {
    let cap = emb1.k().min(emb2.k());
    if k == 0 || k > cap {
        return Err(Error::DimensionMismatch {
            expected: cap,
            found: k,
        });
    }
    Ok(())
}

/// `Φ₁ᵏ(sources)ᵀ · Φ₂ᵏ(targets)` over the anchor pairs.
pub fn anchor_correlation(
    emb1: &SpectralEmbedding,
    emb2: &SpectralEmbedding,
    anchors: &AnchorSet,
    k: usize,
) -> Result<DMatrix<f64>> {
    check_dims(emb1, emb2, k)?;
    if anchors.is_empty() {
        return Err(Error::EmptyAnchorSet("no anchor pairs for the correlation".into()));
    }
    anchors.validate(emb1.n(), emb2.n())?;
    let m = anchors.len();
    let a1 = gather(emb1, &anchors.sources(), k);
    let a2 = gather(emb2, &anchors.targets(), k);
    let mut c = vec![0.0; k * k];
    gemm(
        1.0,
        MatRef::row_major(&a1, m, k).t(),
        MatRef::row_major(&a2, m, k),
        0.0,
        &mut c,
        1,
        k,
    );
    Ok(DMatrix::from_vec(k, k, c))
}

/// Dimension supported by an anchor correlation spectrum.
///
/// Singular values are normalized by the mean of the leading `min(10, K)`.
/// The result is the 0-based start of the first window of ten consecutive
/// normalized values summing below 0.1 (shorter tail windows compare against
/// a proportionally smaller threshold), or `min(m, K)` if no window
/// qualifies, clamped to `[4, min(m, K)]`.
pub fn select_dimension(spectrum: &SingularSpectrum, m: usize, k_cap: usize) -> usize {
    let sigma = &spectrum.sigma[..spectrum.sigma.len().min(k_cap)];
    let k_cap = sigma.len();
    let upper = m.min(k_cap);
    let lead = SV_WINDOW.min(k_cap);
    let mu = sigma[..lead].iter().sum::<f64>() / lead.max(1) as f64;
    if !(mu > 0.0) {
        return K_MIN.min(upper);
    }
    let norm: Vec<f64> = sigma.iter().map(|s| s / mu).collect();
    let k = (0..k_cap)
        .find(|&s| {
            let w = &norm[s..(s + SV_WINDOW).min(k_cap)];
            w.iter().sum::<f64>() < SV_THRESHOLD * w.len() as f64 / SV_WINDOW as f64
        })
        .unwrap_or(upper);
    k.max(K_MIN).min(upper)
}

/// Nearest orthonormal matrix `UVᵀ` to the leading `k × k` block of a
/// correlation matrix.
pub fn procrustes_from_correlation(corr: &DMatrix<f64>, k: usize) -> Result<FunctionalMap> {
    if k == 0 || k > corr.nrows() || k > corr.ncols() {
        return Err(Error::DimensionMismatch {
            expected: corr.nrows().min(corr.ncols()),
            found: k,
        });
    }
    let block = corr.view((0, 0), (k, k)).into_owned();
    let sp = svd_sorted(&block);
    let ratio = sp.sigma[k - 1] / sp.sigma[0];
    if !(ratio >= RANK_TOL) {
        log::warn!("rank-deficient anchor correlation at k = {k}: sigma_k/sigma_1 = {ratio:e}");
    }
    FunctionalMap::new(&sp.u * sp.v.transpose())
}

/// Orthonormal functional map of dimension `k` best aligning the anchors.
pub fn procrustes(
    emb1: &SpectralEmbedding,
    emb2: &SpectralEmbedding,
    anchors: &AnchorSet,
    k: usize,
) -> Result<FunctionalMap> {
    procrustes_from_correlation(&anchor_correlation(emb1, emb2, anchors, k)?, k)
}

/// Unconstrained least-squares map `argmin ‖Φ₁ᵏ(S)·C − Φ₂ᵏ(T)‖_F`
/// (minimum-norm solution when underdetermined).
pub fn least_squares_map(
    emb1: &SpectralEmbedding,
    emb2: &SpectralEmbedding,
    anchors: &AnchorSet,
    k: usize,
) -> Result<FunctionalMap> {
    check_dims(emb1, emb2, k)?;
    if anchors.is_empty() {
        return Err(Error::EmptyAnchorSet(
            "no anchor pairs for the least-squares map".into(),
        ));
    }
    anchors.validate(emb1.n(), emb2.n())?;
    let m = anchors.len();
    let a1 = DMatrix::from_row_slice(m, k, &gather(emb1, &anchors.sources(), k));
    let a2 = DMatrix::from_row_slice(m, k, &gather(emb2, &anchors.targets(), k));
    let svd = a1.svd(true, true);
    let tol = f64::EPSILON * m.max(k) as f64 * svd.singular_values.max();
    let c = svd
        .solve(&a2, tol)
        .map_err(|e| Error::InvalidArgument(format!("least-squares solve failed: {e}")))?;
    FunctionalMap::new(c)
}

/// Point map `T(p) = argmin_q ‖Φ₁ᵏ(p)·C − Φ₂ᵏ(q)‖`, ties to the lowest index.
pub fn recover_map(emb1: &SpectralEmbedding, emb2: &SpectralEmbedding, c: &FunctionalMap) -> Result<Correspondence> {
    let k = c.k();
    check_dims(emb1, emb2, k)?;
    let n1 = emb1.n();
    let all1: Vec<usize> = (0..n1).collect();
    let all2: Vec<usize> = (0..emb2.n()).collect();
    let src = gather(emb1, &all1, k);
    let dst = gather(emb2, &all2, k);
    // row-major C, so the product below is row-major too
    let cm: Vec<f64> = c.c.transpose().as_slice().to_vec();
    let mut q = vec![0.0; n1 * k];
    gemm(
        1.0,
        MatRef::row_major(&src, n1, k),
        MatRef::row_major(&cm, k, k),
        0.0,
        &mut q,
        k,
        1,
    );
    Ok(Correspondence::from_indices(&nearest_rows(&q, &dst, k)?))
}
