//! Uniform-grid spatial index for exact k-nearest and fixed-radius queries.
//!
//! Results are sorted by `(distance, index)`, so equal distances resolve to the
//! lowest index and every query is deterministic.

use nalgebra::{Point3, Vector3};

/// Grids never hold more than this many cells per indexed point.
const MAX_CELLS_PER_POINT: usize = 8;

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    points: Vec<Point3<f64>>,
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: cell `c` holds `ids[starts[c]..starts[c + 1]]`.
    starts: Vec<usize>,
    ids: Vec<usize>,
}

impl SpatialGrid {
    /// Indexes `points`. Cell size is chosen so that a surface sampled by the
    /// points puts roughly two of them in each occupied cell.
    pub fn new(points: &[Point3<f64>]) -> Self {
        let n = points.len().max(1);
        let (mut lo, mut hi) = (Vector3::zeros(), Vector3::zeros());
        if let Some(p) = points.first() {
            lo = p.coords;
            hi = p.coords;
        }
        for p in points {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        let extent = hi - lo;
        let diag = extent.norm();
        let mut cell = if diag > 0.0 {
            diag * (2.0 / n as f64).sqrt()
        } else {
            1.0
        };
        let dims_for =
            |cell: f64| -> [usize; 3] { [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).max(1)) };
        let mut dims = dims_for(cell);
        while dims.iter().product::<usize>() > MAX_CELLS_PER_POINT * n {
            cell *= 1.5;
            dims = dims_for(cell);
        }

        let mut grid = Self {
            points: points.to_vec(),
            lo,
            cell,
            dims,
            starts: Vec::new(),
            ids: Vec::new(),
        };
        let ncells = dims.iter().product::<usize>();
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let mut starts = vec![0usize; ncells + 1];
        for &k in &keys {
            starts[k + 1] += 1;
        }
        for c in 0..ncells {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut ids = vec![0usize; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            ids[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = starts;
        grid.ids = ids;
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_of(&self, p: &Point3<f64>) -> [isize; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.lo[a]) / self.cell).floor() as isize)
    }

    fn clamp(&self, c: [isize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] as isize - 1) as usize)
    }

    fn flat(&self, c: [isize; 3]) -> usize {
        let c = self.clamp(c);
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_points(&self, c: [usize; 3]) -> &[usize] {
        let k = (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0];
        &self.ids[self.starts[k]..self.starts[k + 1]]
    }

    /// The `k` nearest indexed points to `q` as `(index, distance)`, skipping
    /// `exclude`. Returns fewer than `k` only when the index is too small.
    pub fn knn(&self, q: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut found: Vec<(f64, usize)> = Vec::new();
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let home = self.clamp(self.cell_of(q));
        let mut r = 0usize;
        loop {
            self.visit_shell(home, r, |i| {
                if Some(i) != exclude {
                    found.push(((self.points[i] - q).norm(), i));
                }
            });
            // every unvisited point lies outside the block of cells within r
            let bound = self.block_clearance(q, home, r);
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
                if found[k - 1].0 < bound {
                    break;
                }
            }
            if bound.is_infinite() {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
                break;
            }
            r += 1;
        }
        found.into_iter().map(|(d, i)| (i, d)).collect()
    }

    /// Every indexed point within distance `radius` of `q` (inclusive), as
    /// `(index, distance)` sorted by distance then index.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        if self.points.is_empty() || !(radius >= 0.0) {
            return Vec::new();
        }
        let lo = self.clamp([0, 1, 2].map(|a| ((q[a] - radius - self.lo[a]) / self.cell).floor() as isize));
        let hi = self.clamp([0, 1, 2].map(|a| ((q[a] + radius - self.lo[a]) / self.cell).floor() as isize));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    for &i in self.cell_points([x, y, z]) {
                        let d = (self.points[i] - q).norm();
                        if d <= radius {
                            out.push((d, i));
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.into_iter().map(|(d, i)| (i, d)).collect()
    }

    /// Calls `f` for every point in cells at Chebyshev distance exactly `r`
    /// from `home`.
    fn visit_shell(&self, home: [usize; 3], r: usize, mut f: impl FnMut(usize)) {
        let r = r as isize;
        let h = home.map(|v| v as isize);
        let range = |a: usize| {
            let lo = (h[a] - r).max(0);
            let hi = (h[a] + r).min(self.dims[a] as isize - 1);
            lo..=hi
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let on_shell = (x - h[0]).abs() == r || (y - h[1]).abs() == r || (z - h[2]).abs() == r;
                    if on_shell {
                        for &i in self.cell_points([x as usize, y as usize, z as usize]) {
                            f(i);
                        }
                    }
                }
            }
        }
    }

    /// Distance from `q` to the nearest face of the cell block within `r` of
    /// `home` that borders further grid cells; infinite once the block covers
    /// the whole grid.
    fn block_clearance(&self, q: &Point3<f64>, home: [usize; 3], r: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..3 {
            let h = home[a] as isize;
            let r = r as isize;
            if h - r > 0 {
                let wall = self.lo[a] + (h - r) as f64 * self.cell;
                best = best.min((q[a] - wall).max(0.0));
            }
            if h + r < self.dims[a] as isize - 1 {
                let wall = self.lo[a] + (h + r + 1) as f64 * self.cell;
                best = best.min((wall - q[a]).max(0.0));
            }
        }
        // margin for rounding in the cell assignment of points near a wall
        best - 1e-9 * self.cell
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Point3<f64>], q: &Point3<f64>) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all
    }

    #[test]
    fn collinear_and_coincident_points_are_fine() {
        let mut pts: Vec<Point3<f64>> = (0..100).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        pts.push(Point3::new(5.0, 0.0, 0.0));
        let g = SpatialGrid::new(&pts);
        let nn = g.knn(&Point3::new(5.2, 0.0, 0.0), 3, None);
        assert_eq!(nn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![5, 100, 6]);
    }

    #[test]
    fn query_outside_bounds() {
        let pts: Vec<Point3<f64>> = (0..50)
            .map(|i| Point3::new((i % 7) as f64, (i / 7) as f64, 0.0))
            .collect();
        let g = SpatialGrid::new(&pts);
        let q = Point3::new(-30.0, 40.0, 12.0);
        let b = brute(&pts, &q);
        assert_eq!(g.knn(&q, 4, None), b[..4].to_vec());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn knn_and_within_match_brute_force(
            raw in prop::collection::vec((-5i32..5, -5i32..5, -2i32..2), 8..120),
            q in (-60i32..60, -60i32..60, -30i32..30),
            k in 1usize..8,
            radius in 0.0f64..4.0,
        ) {
            // integer lattice coordinates create many exact distance ties
            let pts: Vec<Point3<f64>> = raw.iter().map(|&(x, y, z)| Point3::new(x as f64, y as f64, z as f64 * 0.5)).collect();
            let q = Point3::new(q.0 as f64 / 10.0, q.1 as f64 / 10.0, q.2 as f64 / 10.0);
            let g = SpatialGrid::new(&pts);
            let b = brute(&pts, &q);
            prop_assert_eq!(g.knn(&q, k, None), b[..k.min(pts.len())].to_vec());
            let expected: Vec<_> = b.iter().copied().filter(|x| x.1 <= radius).collect();
            prop_assert_eq!(g.within(&q, radius), expected);
            let ex = b[0].0;
            let without: Vec<_> = b.iter().copied().filter(|x| x.0 != ex).take(k).collect();
            prop_assert_eq!(g.knn(&q, k, Some(ex)), without);
        }
    }
}
