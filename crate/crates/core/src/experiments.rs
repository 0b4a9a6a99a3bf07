//! How a shuffled block of rows perturbs the orthonormal alignment of two
//! spectral bases: the involution probability, an enumeration cross-check,
//! and a seeded Monte-Carlo study of `‖C_a − C_T‖₂`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmap::{procrustes_from_correlation, svd_sorted};
use crate::spectral::SpectralEmbedding;

/// Largest size enumerated by [`count_involutions_bruteforce`].
pub const BRUTEFORCE_MAX: usize = 10;

/// Stream reserved for the synthetic basis; trials use streams `0..trials`.
const BASIS_STREAM: u64 = u64::MAX;

/// Probability that a uniformly random permutation of `n2` items is an
/// involution: `Σ_{j ≤ n2/2} 1 / (2^j · j! · (n2 − 2j)!)`, summed in the log
/// domain.
pub fn involution_probability(n2: usize) -> Result<f64> {
    if n2 == 0 {
        return Err(Error::InvalidArgument("n2 must be at least 1".into()));
    }
    let mut ln_fact = vec![0.0; n2 + 1];
    for i in 1..=n2 {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let logs: Vec<f64> = (0..=n2 / 2)
        .map(|j| -(j as f64 * std::f64::consts::LN_2 + ln_fact[j] + ln_fact[n2 - 2 * j]))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(top.exp() * logs.iter().map(|l| (l - top).exp()).sum::<f64>())
}

/// Number of permutations of `n2` items equal to their own inverse, by
/// enumerating all `n2!` of them.
pub fn count_involutions_bruteforce(n2: usize) -> Result<u64> {
    if n2 > BRUTEFORCE_MAX {
        return Err(Error::BudgetExceeded {
            n: n2,
            max: BRUTEFORCE_MAX,
        });
    }
    let is_involution = |p: &[usize]| p.iter().enumerate().all(|(i, &pi)| p[pi] == i);
    // Heap's algorithm, iterative form
    let mut p: Vec<usize> = (0..n2).collect();
    let mut c = vec![0usize; n2];
    let mut count = u64::from(is_involution(&p));
    let mut i = 1;
    while i < n2 {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            count += u64::from(is_involution(&p));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    /// Spectral dimension.
    pub k: usize,
    /// Number of rows; ignored when a real embedding is supplied.
    pub n: usize,
    /// Size of the shuffled row subset.
    pub n2: usize,
    pub trials: usize,
    pub seed: u64,
    /// Replace the shuffle by the identity (a degenerate control).
    pub force_identity: bool,
}

/// Samples of `‖C_a − C_T‖₂`, one per trial, in trial order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationStats {
    pub k: usize,
    pub n: usize,
    pub n2: usize,
    pub samples: Vec<f64>,
}

/// Quantile of sorted data with linear interpolation between order
/// statistics (`h = (len − 1)·q`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PerturbationStats {
    pub fn trials(&self) -> usize {
        self.samples.len()
    }

    /// `[min, q1, median, q3, max]`, or `None` without samples.
    pub fn five_number_summary(&self) -> Option<[f64; 5]> {
        if self.samples.is_empty() {
            return None;
        }
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        Some([
            s[0],
            quantile(&s, 0.25),
            quantile(&s, 0.5),
            quantile(&s, 0.75),
            s[s.len() - 1],
        ])
    }

    pub fn median(&self) -> Option<f64> {
        self.five_number_summary().map(|s| s[2])
    }

    /// One row per trial (`trial,k,n,n2,error`), then a blank line and a
    /// `statistic,value` block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,k,n,n2,error\n");
        for (t, e) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{},{},{e}", self.k, self.n, self.n2);
        }
        if let Some(q) = self.five_number_summary() {
            s.push_str("\nstatistic,value\n");
            for (name, v) in ["min", "q1", "median", "q3", "max"].iter().zip(q) {
                let _ = writeln!(s, "{name},{v}");
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthonormal matrix: QR of a Gaussian with the signs of
/// `R`'s diagonal moved into `Q`.
fn haar_orthonormal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, k, k).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `n × k` matrix with orthonormal columns from a Gaussian, deterministic in
/// `seed`.
pub fn synthetic_basis(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BASIS_STREAM);
    gaussian(&mut rng, n, k).qr().q()
}

/// Runs the trials. `basis` (an `n × ≥k` embedding) replaces the synthetic
/// orthonormal basis when given.
///
/// Each trial draws a Haar `C_T`, sets `Φ₂ = Φ₁·C_T`, shuffles a uniformly
/// chosen `n2`-subset of the correspondence, fits `C_a` by Procrustes over all
/// `n` rows, and records the spectral norm `‖C_a − C_T‖₂`.
pub fn perturbation_experiment(
    basis: Option<&SpectralEmbedding>,
    cfg: &PerturbationConfig,
) -> Result<PerturbationStats> {
    let phi1 = match basis {
        Some(emb) => {
            if cfg.k == 0 || cfg.k > emb.k() {
                return Err(Error::DimensionMismatch {
                    expected: emb.k(),
                    found: cfg.k,
                });
            }
            DMatrix::from_fn(emb.n(), cfg.k, |r, c| emb.row(r)[c])
        }
        None => {
            if cfg.k == 0 || cfg.k > cfg.n {
                return Err(Error::InvalidArgument(format!(
                    "need 1 <= k <= n, got k = {}, n = {}",
                    cfg.k, cfg.n
                )));
            }
            synthetic_basis(cfg.n, cfg.k, cfg.seed)
        }
    };
    let (n, k) = phi1.shape();
    if cfg.n2 > n {
        return Err(Error::InvalidArgument(format!("n2 = {} exceeds n = {n}", cfg.n2)));
    }
    let gram = phi1.transpose() * &phi1;
    let samples = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(trial as u64);
            let ct = haar_orthonormal(&mut rng, k);
            let subset = rand::seq::index::sample(&mut rng, n, cfg.n2).into_vec();
            let mut images = subset.clone();
            if !cfg.force_identity {
                images.shuffle(&mut rng);
            }
            // Φ₁ᵀ Π Φ₂ = Φ₁ᵀΦ₁·C_T + Σ_{i∈S} φ₁(i)ᵀ (φ₁(π i) − φ₁(i))·C_T
            let mut delta = DMatrix::zeros(k, k);
            for (&i, &pi) in subset.iter().zip(&images) {
                if i != pi {
                    let d = phi1.row(pi) - phi1.row(i);
                    delta += phi1.row(i).transpose() * d;
                }
            }
            let corr = (&gram + delta) * &ct;
            let ca = procrustes_from_correlation(&corr, k)?;
            Ok(svd_sorted(&(ca.matrix() - &ct)).sigma[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PerturbationStats {
        k,
        n,
        n2: cfg.n2,
        samples,
    })
}
