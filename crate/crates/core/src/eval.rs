//! Geodesic error of a correspondence against ground truth, and its
//! cumulative curve.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodesics::{estimate_diameter, Dijkstra};
use crate::geometry::EdgeGraph;
use crate::lmd::Correspondence;

pub const DEFAULT_MAX_THRESHOLD: f64 = 0.25;
pub const DEFAULT_CURVE_POINTS: usize = 100;

/// Cumulative error curve on an evenly spaced threshold grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub thresholds: Vec<f64>,
    /// Fraction of evaluated points with error at most each threshold.
    pub fractions: Vec<f64>,
    /// Trapezoidal area under the curve.
    pub auc: f64,
    /// Normalized error per source point: `+∞` where the map is unmatched,
    /// NaN where the ground truth is unmatched (such points are not evaluated).
    pub per_point: Vec<f64>,
    pub diameter: f64,
}

impl ErrorCurve {
    /// Bins per-point errors on `points` thresholds spanning `[0, max_threshold]`.
    pub fn from_errors(per_point: Vec<f64>, diameter: f64, max_threshold: f64, points: usize) -> Result<Self> {
        if points < 2 || !(max_threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "curve needs at least 2 points on a positive range, got {points} on [0, {max_threshold}]"
            )));
        }
        let thresholds: Vec<f64> = (0..points)
            .map(|i| max_threshold * i as f64 / (points - 1) as f64)
            .collect();
        let mut sorted: Vec<f64> = per_point.iter().copied().filter(|e| !e.is_nan()).collect();
        sorted.sort_by(f64::total_cmp);
        let total = sorted.len();
        let fractions: Vec<f64> = thresholds
            .iter()
            .map(|&t| {
                if total == 0 {
                    0.0
                } else {
                    sorted.partition_point(|&e| e <= t) as f64 / total as f64
                }
            })
            .collect();
        let auc = thresholds
            .windows(2)
            .zip(fractions.windows(2))
            .map(|(t, f)| (t[1] - t[0]) * (f[0] + f[1]) / 2.0)
            .sum();
        Ok(Self {
            thresholds,
            fractions,
            auc,
            per_point,
            diameter,
        })
    }

    /// Mean over evaluated points; `+∞` if any evaluated point is unmatched.
    pub fn mean_error(&self) -> f64 {
        let vals: Vec<f64> = self.per_point.iter().copied().filter(|e| !e.is_nan()).collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Fraction of evaluated points with error strictly below `t`.
    pub fn fraction_below(&self, t: f64) -> f64 {
        let vals: Vec<f64> = self.per_point.iter().copied().filter(|e| !e.is_nan()).collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.iter().filter(|&&e| e < t).count() as f64 / vals.len() as f64
    }

    /// Two-column CSV `threshold,fraction`.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("threshold,fraction\n");
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            let _ = writeln!(s, "{t},{f}");
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// CSV `vertex,error`.
    pub fn write_per_point_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("vertex,error\n");
        for (i, e) in self.per_point.iter().enumerate() {
            let _ = writeln!(s, "{i},{e}");
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Raw (unnormalized) target-side graph distances between `t` and `t_gt`.
pub fn geodesic_distances(t: &Correspondence, t_gt: &Correspondence, graph2: &EdgeGraph) -> Result<Vec<f64>> {
    if t.len() != t_gt.len() {
        return Err(Error::LengthMismatch {
            expected: t_gt.len(),
            found: t.len(),
        });
    }
    let n2 = graph2.num_vertices();
    t.validate(t.len(), n2)?;
    t_gt.validate(t_gt.len(), n2)?;
    // One truncated search per distinct source. Each pair is searched from its
    // lower index so swapping the two maps gives bit-identical distances.
    let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut out = vec![f64::NAN; t.len()];
    for i in 0..t.len() {
        match (t_gt.get(i), t.get(i)) {
            (Some(g), Some(y)) => groups.entry(g.min(y)).or_default().push((i, g.max(y))),
            (Some(_), None) => out[i] = f64::INFINITY,
            (None, _) => {}
        }
    }
    let groups: Vec<(usize, Vec<(usize, usize)>)> = groups.into_iter().collect();
    let solved: Vec<Vec<f64>> = groups
        .par_iter()
        .map_init(
            || Dijkstra::new(graph2),
            |dj, (s, members)| {
                let targets: Vec<usize> = members.iter().map(|m| m.1).collect();
                dj.to_targets(*s, &targets)
            },
        )
        .collect();
    for ((_, members), d) in groups.iter().zip(solved) {
        for (&(i, _), di) in members.iter().zip(d) {
            out[i] = di;
        }
    }
    Ok(out)
}

/// Geodesic error curve normalized by the estimated diameter of the target.
pub fn geodesic_error(t: &Correspondence, t_gt: &Correspondence, graph2: &EdgeGraph) -> Result<ErrorCurve> {
    geodesic_error_with(t, t_gt, graph2, DEFAULT_MAX_THRESHOLD, DEFAULT_CURVE_POINTS)
}

pub fn geodesic_error_with(
    t: &Correspondence,
    t_gt: &Correspondence,
    graph2: &EdgeGraph,
    max_threshold: f64,
    points: usize,
) -> Result<ErrorCurve> {
    let raw = geodesic_distances(t, t_gt, graph2)?;
    let diameter = estimate_diameter(graph2)?;
    let per_point = raw.into_iter().map(|d| d / diameter).collect();
    ErrorCurve::from_errors(per_point, diameter, max_threshold, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::single_source_distances;
    use crate::geometry::shapes;
    use proptest::prelude::*;

    #[test]
    fn perfect_map() {
        let m = shapes::icosphere(6);
        let id = Correspondence::identity(m.num_vertices());
        let c = geodesic_error(&id, &id, m.graph()).unwrap();
        assert!(c.per_point.iter().all(|&e| e == 0.0));
        assert!(c.fractions.iter().all(|&f| f == 1.0));
        assert!((c.auc - 0.25).abs() < 1e-12);
        assert_eq!(c.thresholds.len(), 100);
        assert_eq!(c.mean_error(), 0.0);
    }

    #[test]
    fn collapse_to_one_vertex_matches_distance_field() {
        let m = shapes::icosphere(8);
        let n = m.num_vertices();
        let v = 17;
        let t = Correspondence::from_indices(&vec![v; n]);
        let c = geodesic_error(&t, &Correspondence::identity(n), m.graph()).unwrap();
        let d = single_source_distances(m.graph(), v).unwrap();
        for i in 0..n {
            assert!((c.per_point[i] - d[i] / c.diameter).abs() < 1e-12);
        }
    }

    #[test]
    fn unmatched_half_plateaus() {
        let m = shapes::icosphere(4);
        let n = m.num_vertices();
        let t = Correspondence::new((0..n).map(|i| if i % 2 == 0 { Some(i) } else { None }).collect());
        let c = geodesic_error(&t, &Correspondence::identity(n), m.graph()).unwrap();
        let half = (n / 2 + n % 2) as f64 / n as f64;
        assert!(c.fractions.iter().all(|&f| f == half));
        assert!(c.mean_error().is_infinite());
    }

    #[test]
    fn ground_truth_holes_are_excluded() {
        let m = shapes::icosphere(3);
        let n = m.num_vertices();
        let gt = Correspondence::new((0..n).map(|i| if i < 10 { None } else { Some(i) }).collect());
        let c = geodesic_error(&Correspondence::identity(n), &gt, m.graph()).unwrap();
        assert!(c.per_point[..10].iter().all(|e| e.is_nan()));
        assert_eq!(c.fractions[0], 1.0);
    }

    #[test]
    fn length_mismatch() {
        let m = shapes::icosphere(2);
        let n = m.num_vertices();
        let r = geodesic_error(
            &Correspondence::identity(n - 1),
            &Correspondence::identity(n),
            m.graph(),
        );
        assert!(matches!(r, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn rigid_motion_leaves_curve_unchanged() {
        let m = shapes::bumpy_blob(6);
        let n = m.num_vertices();
        let t: Vec<usize> = (0..n).map(|i| (i * 13 + 1) % n).collect();
        let t = Correspondence::from_indices(&t);
        let id = Correspondence::identity(n);
        let a = geodesic_error(&t, &id, m.graph()).unwrap();
        let moved = shapes::transformed(&m, &shapes::generic_rigid_motion());
        let b = geodesic_error(&t, &id, moved.graph()).unwrap();
        for (x, y) in a.per_point.iter().zip(&b.per_point) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn symmetric_and_rebinned(seed in 0usize..10_000) {
            let m = shapes::bumpy_blob(4);
            let n = m.num_vertices();
            let a = Correspondence::from_indices(&(0..n).map(|i| (i * 7 + seed) % n).collect::<Vec<_>>());
            let b = Correspondence::from_indices(&(0..n).map(|i| (i * 3 + seed / 7) % n).collect::<Vec<_>>());
            let ab = geodesic_error(&a, &b, m.graph()).unwrap();
            let ba = geodesic_error(&b, &a, m.graph()).unwrap();
            prop_assert_eq!(&ab.per_point, &ba.per_point);
            // independent re-binning
            for (t, f) in ab.thresholds.iter().zip(&ab.fractions) {
                let count = ab.per_point.iter().filter(|&&e| e <= *t).count();
                prop_assert_eq!(*f, count as f64 / n as f64);
            }
            prop_assert!(ab.fractions.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(ab.auc >= 0.0 && ab.auc <= 0.25);
        }
    }
}
