//! Exact nearest-neighbor search between two sets of feature rows.
//!
//! Squared distances are first estimated for whole blocks at once through
//! `‖p‖² + ‖q‖² − 2 p·q` (one matrix product per block). That estimate carries
//! a rounding error bounded by `δ`, so every row within `2δ` of the best
//! estimate is re-scored with the direct formula `Σ (p_i − q_i)²` and the
//! smallest exact distance wins, ties going to the lowest index. The result is
//! identical to a brute-force scan.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};

const QUERY_BLOCK: usize = 64;
const DATA_BLOCK: usize = 2048;

fn sq_norms(rows: &[f64], dim: usize) -> Vec<f64> {
    rows.chunks_exact(dim).map(|r| r.iter().map(|x| x * x).sum()).collect()
}

/// Direct squared distance; the reference every search result agrees with.
pub fn exact_sq_dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// For each row of `queries`, the index of the nearest row of `data`. Both are
/// row-major with `dim` columns.
pub fn nearest_rows(queries: &[f64], data: &[f64], dim: usize) -> Result<Vec<usize>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("feature dimension is zero".into()));
    }
    for (name, m) in [("query", queries), ("data", data)] {
        if m.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.len() % dim,
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} features contain non-finite values"
            )));
        }
    }
    let (nq, nd) = (queries.len() / dim, data.len() / dim);
    if nd == 0 {
        return Err(Error::InvalidArgument("no data rows to match against".into()));
    }
    let qn = sq_norms(queries, dim);
    let dn = sq_norms(data, dim);
    let max_dn = dn.iter().copied().fold(0.0, f64::max);
    let slack = 4.0 * (dim as f64 + 4.0) * f64::EPSILON;

    let blocks: Vec<Vec<usize>> = (0..nq.div_ceil(QUERY_BLOCK))
        .into_par_iter()
        .map(|b| {
            let q0 = b * QUERY_BLOCK;
            let bq = QUERY_BLOCK.min(nq - q0);
            let qrows = &queries[q0 * dim..(q0 + bq) * dim];
            let mut best = vec![f64::INFINITY; bq];
            let mut cands: Vec<Vec<(f64, usize)>> = vec![Vec::new(); bq];
            let mut g = vec![0.0; bq * DATA_BLOCK];
            for d0 in (0..nd).step_by(DATA_BLOCK) {
                let bd = DATA_BLOCK.min(nd - d0);
                let drows = &data[d0 * dim..(d0 + bd) * dim];
                // g (bq × bd, row-major) = Q · Dᵀ
                gemm(
                    1.0,
                    MatRef::row_major(qrows, bq, dim),
                    MatRef::row_major(drows, bd, dim).t(),
                    0.0,
                    &mut g[..bq * bd],
                    bd,
                    1,
                );
                for i in 0..bq {
                    let delta = slack * (qn[q0 + i] + max_dn);
                    let row = &g[i * bd..(i + 1) * bd];
                    for (j, &dot) in row.iter().enumerate() {
                        let est = qn[q0 + i] + dn[d0 + j] - 2.0 * dot;
                        if est <= best[i] + 2.0 * delta {
                            cands[i].push((est, d0 + j));
                            if est < best[i] {
                                best[i] = est;
                            }
                        }
                    }
                    if cands[i].len() > 64 {
                        let cut = best[i] + 2.0 * delta;
                        cands[i].retain(|c| c.0 <= cut);
                    }
                }
            }
            (0..bq)
                .map(|i| {
                    let p = &qrows[i * dim..(i + 1) * dim];
                    let cut = best[i] + 2.0 * slack * (qn[q0 + i] + max_dn);
                    let mut winner = (f64::INFINITY, usize::MAX);
                    for &(est, j) in &cands[i] {
                        if est > cut {
                            continue;
                        }
                        let d = exact_sq_dist(p, &data[j * dim..(j + 1) * dim]);
                        if d < winner.0 || (d == winner.0 && j < winner.1) {
                            winner = (d, j);
                        }
                    }
                    winner.1
                })
                .collect()
        })
        .collect();
    Ok(blocks.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(q: &[f64], d: &[f64], dim: usize) -> Vec<usize> {
        q.chunks_exact(dim)
            .map(|p| {
                let mut best = (f64::INFINITY, 0);
                for (j, r) in d.chunks_exact(dim).enumerate() {
                    let x = exact_sq_dist(p, r);
                    if x < best.0 {
                        best = (x, j);
                    }
                }
                best.1
            })
            .collect()
    }

    #[test]
    fn identity_and_permutation() {
        let dim = 5;
        let data: Vec<f64> = (0..300 * dim).map(|x| ((x * 7919) % 1013) as f64 / 97.0).collect();
        let ids = nearest_rows(&data, &data, dim).unwrap();
        let want: Vec<usize> = (0..300).collect();
        assert_eq!(ids, want);
        // permuted copy: row j of `perm` is row p[j] of data
        let p: Vec<usize> = (0..300).map(|j| (j * 37 + 11) % 300).collect();
        let perm: Vec<f64> = p.iter().flat_map(|&r| data[r * dim..(r + 1) * dim].to_vec()).collect();
        let got = nearest_rows(&data, &perm, dim).unwrap();
        for (i, &g) in got.iter().enumerate() {
            assert_eq!(p[g], i);
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let data = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0];
        let q = vec![0.0, 0.0];
        assert_eq!(nearest_rows(&q, &data, 2).unwrap(), vec![0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(nearest_rows(&[f64::NAN, 1.0], &[0.0, 0.0], 2).is_err());
        assert!(nearest_rows(&[1.0, 2.0, 3.0], &[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn large_offsets_still_exact() {
        // big common offset makes the expanded formula lose most digits
        let dim = 3;
        let base = 1e6;
        let data: Vec<f64> = (0..500).flat_map(|i| [base + i as f64 * 1e-4, base, base]).collect();
        let q: Vec<f64> = (0..500)
            .flat_map(|i| [base + i as f64 * 1e-4 + 3e-5, base, base])
            .collect();
        assert_eq!(nearest_rows(&q, &data, dim).unwrap(), brute(&q, &data, dim));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_brute_force(
            dim in 1usize..9,
            nq in 1usize..150,
            nd in 1usize..2500,
            seed in any::<u64>(),
            quant in prop::bool::ANY,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |len: usize| -> Vec<f64> {
                (0..len).map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    // quantized values produce exact ties
                    if quant { (x * 3.0).round() } else { x }
                }).collect()
            };
            let q = gen(nq * dim);
            let d = gen(nd * dim);
            prop_assert_eq!(nearest_rows(&q, &d, dim).unwrap(), brute(&q, &d, dim));
        }
    }
}
