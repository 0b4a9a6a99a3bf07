//! The iterative refinement loop. Each iteration keeps only the pairs of the
//! current map whose local distortion is below the iteration's threshold,
//! fits a map between features from those anchors, and re-matches every
//! point.
//!
//! Two feature families are supported: truncated Laplace–Beltrami bases,
//! aligned by an orthonormal functional map whose size follows the anchor
//! spectrum, and geodesic distance signatures to the anchors, which need no
//! spectrum and so tolerate holes and partial shapes.

mod config;
mod pipeline;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

pub use config::{DirConfig, InitKind, Mode, DEFAULT_THRESHOLDS};
pub use pipeline::{run_pipeline, RunReport, ShapeInput};

use crate::descriptors::{gds_features, nn_match};
use crate::error::{Error, Result};
use crate::fmap::{
    anchor_correlation, procrustes_from_correlation, recover_map, select_dimension, svd_sorted, FunctionalMap,
};
use crate::geodesics::farthest_point_sampling;
use crate::geometry::{EdgeGraph, VertexAreas};
use crate::lmd::{prune_by_lmd, select_anchors, AnchorSet, Correspondence, LmdField, LmdStencil};
use crate::spectral::SpectralEmbedding;

/// Anchor counts falling this many iterations in a row raise a warning.
const DECREASE_WARN_RUN: usize = 3;

/// Starting point of the loop: an initial map, fixed landmark pairs, or both.
#[derive(Debug, Clone, Default)]
pub struct Init {
    pub map: Option<Correspondence>,
    pub landmarks: AnchorSet,
}

impl Init {
    pub fn from_map(map: Correspondence) -> Self {
        Self {
            map: Some(map),
            landmarks: AnchorSet::default(),
        }
    }

    pub fn from_landmarks(landmarks: AnchorSet) -> Self {
        Self { map: None, landmarks }
    }
}

/// Source shape data the loop reads: graph and lumped areas.
#[derive(Debug, Clone, Copy)]
pub struct SourceShape<'a> {
    pub graph: &'a EdgeGraph,
    pub areas: &'a VertexAreas,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iter: usize,
    /// Anchor pairs used.
    pub m: usize,
    /// Spectral dimension (spectral mode only).
    pub k: Option<usize>,
    pub epsilon: f64,
    /// Median distortion of the map entering the iteration (NaN when the
    /// iteration started from landmarks alone).
    pub lmd_median: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl IterationTrace {
    /// CSV `iter,m,k,epsilon,lmd_median,seconds`; `k` is empty in GDS mode.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,m,k,epsilon,lmd_median,seconds\n");
        for r in &self.records {
            let k = r.k.map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{k},{},{},{:.6}",
                r.iter, r.m, r.epsilon, r.lmd_median, r.seconds
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// Warns once anchor counts have dropped in each of the last few
    /// iterations.
    fn check_decrease(&mut self) {
        let r = &self.records;
        if r.len() > DECREASE_WARN_RUN && r[r.len() - DECREASE_WARN_RUN - 1..].windows(2).all(|w| w[1].m < w[0].m) {
            let last = r.last().expect("nonempty").iter;
            self.warn(format!(
                "anchor count decreased {DECREASE_WARN_RUN} iterations in a row (through iteration {last}); the refinement may not converge"
            ));
        }
    }
}

/// Result of a refinement run.
#[derive(Debug, Clone)]
pub struct DirOutcome {
    pub map: Correspondence,
    pub trace: IterationTrace,
    /// Functional map of each iteration (spectral mode).
    pub fmaps: Vec<FunctionalMap>,
    /// Anchors of the last iteration.
    pub anchors: AnchorSet,
    /// Distortion of the returned map.
    pub lmd: LmdField,
}

/// Anchors for iteration `i`: fixed landmarks plus low-distortion pairs of
/// the current map, or landmarks alone when there is no map yet. Returns
/// `None` when the set is empty after the first iteration, which ends the
/// loop.
fn anchors_for_iteration(
    i: usize,
    map: Option<&Correspondence>,
    stencil: &LmdStencil,
    graph2: &EdgeGraph,
    fixed: &AnchorSet,
    cfg: &DirConfig,
    trace: &mut IterationTrace,
) -> Result<Option<(AnchorSet, f64)>> {
    let eps = cfg.threshold(i);
    let (anchors, median) = match map {
        Some(t) => {
            let lmd = stencil.evaluate(graph2, t, cfg.eps_cap)?;
            (select_anchors(&lmd, t, eps, fixed)?, lmd.median())
        }
        None => (fixed.fixed_only(), f64::NAN),
    };
    if anchors.is_empty() {
        if i == 1 {
            return Err(Error::EmptyAnchorSet(format!(
                "no point of the initial map has distortion below {eps} and no landmarks were given; \
                 try a better initialization or supply landmarks"
            )));
        }
        trace.warn(format!("no anchors at iteration {i}; stopping with the previous map"));
        return Ok(None);
    }
    Ok(Some((anchors, median)))
}

/// Distortion of the final map, after dropping points at or above the last
/// threshold when `cfg.prune` is set.
fn finish(
    map: Correspondence,
    stencil: &LmdStencil,
    graph2: &EdgeGraph,
    cfg: &DirConfig,
) -> Result<(Correspondence, LmdField)> {
    let lmd = stencil.evaluate(graph2, &map, cfg.eps_cap)?;
    if !cfg.prune {
        return Ok((map, lmd));
    }
    let map = prune_by_lmd(&map, &lmd, cfg.threshold(cfg.max_iters))?;
    let lmd = stencil.evaluate(graph2, &map, cfg.eps_cap)?;
    Ok((map, lmd))
}

fn check_init(init: &Init, n1: usize, n2: usize) -> Result<()> {
    if let Some(t) = &init.map {
        t.validate(n1, n2)?;
    }
    init.landmarks.validate(n1, n2)?;
    if init.map.is_none() && init.landmarks.is_empty() {
        return Err(Error::EmptyAnchorSet(
            "neither an initial map nor landmarks were given".into(),
        ));
    }
    Ok(())
}

/// Refinement with spectral features. `emb1`, `emb2` must hold at least
/// `min(cfg.k, …)` eigenfunctions; the loop uses `K = min(cfg.k, emb1.k, emb2.k)`
/// and stops after `cfg.max_iters` iterations or once the selected dimension
/// reaches `K`. In both modes, `cfg.prune` leaves points whose final
/// distortion reaches the last threshold unmatched.
pub fn dir_spectral(
    src: SourceShape<'_>,
    graph2: &EdgeGraph,
    emb1: &SpectralEmbedding,
    emb2: &SpectralEmbedding,
    init: &Init,
    cfg: &DirConfig,
) -> Result<DirOutcome> {
    let (n1, n2) = (src.graph.num_vertices(), graph2.num_vertices());
    if emb1.n() != n1 || emb2.n() != n2 {
        return Err(Error::LengthMismatch {
            expected: n1,
            found: emb1.n(),
        });
    }
    check_init(init, n1, n2)?;
    let k_cap = cfg.k.min(emb1.k()).min(emb2.k());
    let stencil = LmdStencil::new(src.graph, src.areas, cfg.ring_depth)?;
    let fixed = init.landmarks.fixed_only();
    let mut map = init.map.clone();
    let mut trace = IterationTrace::default();
    let mut fmaps = Vec::new();
    let mut last_anchors = fixed.clone();
    for i in 1..=cfg.max_iters {
        let start = Instant::now();
        let Some((anchors, median)) =
            anchors_for_iteration(i, map.as_ref(), &stencil, graph2, &fixed, cfg, &mut trace)?
        else {
            break;
        };
        let m = anchors.len();
        let corr = anchor_correlation(emb1, emb2, &anchors, k_cap)?;
        let k = select_dimension(&svd_sorted(&corr), m, k_cap);
        let c = procrustes_from_correlation(&corr, k)?;
        map = Some(recover_map(emb1, emb2, &c)?);
        trace.records.push(IterationRecord {
            iter: i,
            m,
            k: Some(k),
            epsilon: cfg.threshold(i),
            lmd_median: median,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("iteration {i}: {m} anchors, k = {k}");
        trace.check_decrease();
        fmaps.push(c);
        last_anchors = anchors;
        if k >= k_cap {
            break;
        }
    }
    let (map, lmd) = finish(map.expect("at least one iteration ran"), &stencil, graph2, cfg)?;
    Ok(DirOutcome {
        map,
        trace,
        fmaps,
        anchors: last_anchors,
        lmd,
    })
}

/// At most `cap` anchors: all of them if under the cap, otherwise a
/// farthest-point sample of their sources seeded with the fixed landmarks.
fn cap_anchors(anchors: &AnchorSet, graph1: &EdgeGraph, cap: usize) -> Result<AnchorSet> {
    if anchors.len() <= cap {
        return Ok(anchors.clone());
    }
    let seeds: Vec<usize> = (0..anchors.len())
        .filter(|&j| anchors.is_fixed(j))
        .map(|j| anchors.pairs()[j].0)
        .collect();
    let chosen = farthest_point_sampling(graph1, &anchors.sources(), &seeds, cap)?;
    let mut keep: Vec<usize> = chosen
        .iter()
        .map(|s| {
            anchors
                .pairs()
                .binary_search_by_key(s, |p| p.0)
                .expect("sampled from anchor sources")
        })
        .collect();
    keep.sort_unstable();
    AnchorSet::new(
        keep.iter().map(|&j| anchors.pairs()[j]).collect(),
        keep.iter().map(|&j| anchors.is_fixed(j)).collect(),
    )
}

/// Refinement with geodesic distance signatures. Stops after
/// `cfg.max_iters` iterations or when the anchor set stops changing.
pub fn dir_gds(src: SourceShape<'_>, graph2: &EdgeGraph, init: &Init, cfg: &DirConfig) -> Result<DirOutcome> {
    let (n1, n2) = (src.graph.num_vertices(), graph2.num_vertices());
    check_init(init, n1, n2)?;
    let stencil = LmdStencil::new(src.graph, src.areas, cfg.ring_depth)?;
    let fixed = init.landmarks.fixed_only();
    let mut map = init.map.clone();
    let mut trace = IterationTrace::default();
    let mut last_anchors: Option<AnchorSet> = None;
    for i in 1..=cfg.max_iters {
        let start = Instant::now();
        let Some((anchors, median)) =
            anchors_for_iteration(i, map.as_ref(), &stencil, graph2, &fixed, cfg, &mut trace)?
        else {
            break;
        };
        if last_anchors.as_ref() == Some(&anchors) {
            log::info!("anchor set unchanged at iteration {i}; stopping");
            break;
        }
        let used = cap_anchors(&anchors, src.graph, cfg.gds_anchor_cap)?;
        let f1 = gds_features(src.graph, &used.sources())?;
        let f2 = gds_features(graph2, &used.targets())?;
        map = Some(nn_match(&f1, &f2)?);
        trace.records.push(IterationRecord {
            iter: i,
            m: anchors.len(),
            k: None,
            epsilon: cfg.threshold(i),
            lmd_median: median,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("iteration {i}: {} anchors ({} used)", anchors.len(), used.len());
        trace.check_decrease();
        last_anchors = Some(anchors);
    }
    let (map, lmd) = finish(map.expect("at least one iteration ran"), &stencil, graph2, cfg)?;
    Ok(DirOutcome {
        map,
        trace,
        fmaps: Vec::new(),
        anchors: last_anchors.unwrap_or(fixed),
        lmd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, vertex_areas, TriangleMesh};
    use crate::spectral::{cotan_laplacian, lb_eigs};

    fn setup(m: &TriangleMesh, k: usize) -> (VertexAreas, SpectralEmbedding) {
        let a = vertex_areas(m).unwrap();
        let e = lb_eigs(&cotan_laplacian(m).unwrap(), k).unwrap();
        (a, e)
    }

    fn cfg(k: usize) -> DirConfig {
        let mut c = DirConfig {
            k,
            ..DirConfig::default()
        };
        c.validate().unwrap();
        c
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let m = shapes::bumpy_blob(8);
        let (a, e) = setup(&m, 40);
        let n = m.num_vertices();
        let src = SourceShape {
            graph: m.graph(),
            areas: &a,
        };
        let out = dir_spectral(
            src,
            m.graph(),
            &e,
            &e,
            &Init::from_map(Correspondence::identity(n)),
            &cfg(40),
        )
        .unwrap();
        assert_eq!(out.map, Correspondence::identity(n));
        assert_eq!(out.trace.records[0].m, n);
        assert!(out.lmd.values.iter().all(|&v| v == 0.0));
        for r in &out.trace.records {
            assert!(r.k.unwrap() <= r.m.min(40));
        }
    }

    #[test]
    fn landmarks_persist_and_dimension_is_bounded() {
        let m = shapes::bumpy_blob(8);
        let (a, e) = setup(&m, 30);
        let n = m.num_vertices();
        let lm = AnchorSet::landmarks(vec![(0, 0), (100, 100), (300, 300), (500, 500)]).unwrap();
        let src = SourceShape {
            graph: m.graph(),
            areas: &a,
        };
        let out = dir_spectral(src, m.graph(), &e, &e, &Init::from_landmarks(lm.clone()), &cfg(30)).unwrap();
        assert_eq!(out.trace.records[0].m, 4);
        assert_eq!(out.trace.records[0].k, Some(4));
        assert!(out.trace.records[0].lmd_median.is_nan());
        for &p in lm.pairs() {
            assert!(out.anchors.pairs().contains(&p));
        }
        for r in &out.trace.records {
            assert!(r.k.unwrap() <= r.m.min(30));
            assert!(r.m >= 4);
        }
        assert_eq!(out.map.len(), n);
    }

    #[test]
    fn empty_first_anchor_set_is_an_error() {
        let m = shapes::bumpy_blob(6);
        let (a, e) = setup(&m, 10);
        let n = m.num_vertices();
        let scrambled: Vec<usize> = (0..n).map(|i| (i * 97 + 31) % n).collect();
        let src = SourceShape {
            graph: m.graph(),
            areas: &a,
        };
        let mut c = cfg(10);
        c.lmd_thresholds = vec![1e-9];
        c.validate().unwrap();
        let r = dir_spectral(
            src,
            m.graph(),
            &e,
            &e,
            &Init::from_map(Correspondence::from_indices(&scrambled)),
            &c,
        );
        assert!(matches!(r, Err(Error::EmptyAnchorSet(_))));
        assert!(matches!(
            dir_gds(src, m.graph(), &Init::default(), &c),
            Err(Error::EmptyAnchorSet(_))
        ));
    }

    #[test]
    fn gds_self_match_is_identity() {
        let m = shapes::bumpy_blob(6);
        let a = vertex_areas(&m).unwrap();
        let n = m.num_vertices();
        let src = SourceShape {
            graph: m.graph(),
            areas: &a,
        };
        let mut c = cfg(10);
        c.mode = Mode::Gds;
        let out = dir_gds(src, m.graph(), &Init::from_map(Correspondence::identity(n)), &c).unwrap();
        assert_eq!(out.map, Correspondence::identity(n));
        // the second iteration sees the same anchors and stops
        assert_eq!(out.trace.records.len(), 1);
    }

    #[test]
    fn gds_single_anchor_does_not_crash() {
        let m = shapes::bumpy_blob(5);
        let a = vertex_areas(&m).unwrap();
        let src = SourceShape {
            graph: m.graph(),
            areas: &a,
        };
        let mut c = cfg(10);
        c.max_iters = 1;
        c.validate().unwrap();
        let out = dir_gds(
            src,
            m.graph(),
            &Init::from_landmarks(AnchorSet::landmarks(vec![(3, 3)]).unwrap()),
            &c,
        )
        .unwrap();
        assert_eq!(out.map.len(), m.num_vertices());
        assert_eq!(out.map.get(3), Some(3));
    }

    #[test]
    fn anchor_cap_keeps_landmarks() {
        let m = shapes::icosphere(6);
        let n = m.num_vertices();
        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let fixed: Vec<bool> = (0..n).map(|i| i == 7 || i == 200).collect();
        let set = AnchorSet::new(pairs, fixed).unwrap();
        let capped = cap_anchors(&set, m.graph(), 50).unwrap();
        assert_eq!(capped.len(), 50);
        assert!(capped.pairs().contains(&(7, 7)) && capped.pairs().contains(&(200, 200)));
        assert_eq!(capped.num_fixed(), 2);
    }

    #[test]
    fn decrease_warning_after_three_drops() {
        let mut t = IterationTrace::default();
        for (i, m) in [10, 9, 8].iter().enumerate() {
            t.records.push(IterationRecord {
                iter: i + 1,
                m: *m,
                k: None,
                epsilon: 0.1,
                lmd_median: 0.0,
                seconds: 0.0,
            });
            t.check_decrease();
        }
        assert!(t.warnings.is_empty());
        t.records.push(IterationRecord {
            iter: 4,
            m: 7,
            k: None,
            epsilon: 0.1,
            lmd_median: 0.0,
            seconds: 0.0,
        });
        t.check_decrease();
        assert_eq!(t.warnings.len(), 1);
        assert!(t
            .to_csv()
            .starts_with("iter,m,k,epsilon,lmd_median,seconds\n1,10,,0.1,0,"));
    }
}
