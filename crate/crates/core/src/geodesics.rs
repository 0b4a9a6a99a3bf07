//! Graph geodesics: truncated balls, single- and multi-source fields,
//! farthest-point sampling and diameter estimates.
//!
//! Every routine runs the same Dijkstra core. Vertices are settled in order of
//! `(distance, index)`, so two searches over the same graph assign
//! bit-identical distances to every vertex they both settle, however early
//! either of them stops.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::EdgeGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Item {
    dist: f64,
    v: usize,
}

impl Eq for Item {}

impl Ord for Item {
    // reversed so the max-heap pops the smallest (dist, index) first
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.v.cmp(&self.v))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable Dijkstra state. Allocation is proportional to the graph once;
/// each search only resets the vertices it touched.
#[derive(Debug, Clone)]
pub struct Dijkstra<'g> {
    graph: &'g EdgeGraph,
    dist: Vec<f64>,
    done: Vec<bool>,
    touched: Vec<usize>,
    heap: BinaryHeap<Item>,
}

impl<'g> Dijkstra<'g> {
    pub fn new(graph: &'g EdgeGraph) -> Self {
        let n = graph.num_vertices();
        Self {
            graph,
            dist: vec![f64::INFINITY; n],
            done: vec![false; n],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    /// Core search. `accept(v, d)` filters tentative distances before they are
    /// queued; `visit(v, d)` sees each vertex as it is settled and returns
    /// `false` to stop.
    pub fn run(
        &mut self,
        sources: &[usize],
        mut accept: impl FnMut(usize, f64) -> bool,
        mut visit: impl FnMut(usize, f64) -> bool,
    ) {
        for &s in sources {
            if self.dist[s] != 0.0 {
                self.dist[s] = 0.0;
                self.touched.push(s);
                self.heap.push(Item { dist: 0.0, v: s });
            }
        }
        while let Some(Item { dist, v }) = self.heap.pop() {
            if self.done[v] {
                continue;
            }
            self.done[v] = true;
            if !visit(v, dist) {
                break;
            }
            for (&w, &len) in self.graph.neighbors(v).iter().zip(self.graph.lengths(v)) {
                let nd = dist + len;
                if !self.done[w] && nd < self.dist[w] && accept(w, nd) {
                    if self.dist[w].is_infinite() {
                        self.touched.push(w);
                    }
                    self.dist[w] = nd;
                    self.heap.push(Item { dist: nd, v: w });
                }
            }
        }
        self.reset();
    }

    fn reset(&mut self) {
        for &v in &self.touched {
            self.dist[v] = f64::INFINITY;
            self.done[v] = false;
        }
        self.touched.clear();
        self.heap.clear();
    }

    /// Settled vertices within `radius` of `center`, sorted by index.
    pub fn ball(&mut self, center: usize, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.run(
            &[center],
            |_, d| d <= radius,
            |v, d| {
                out.push((v, d));
                true
            },
        );
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    /// Distances from `source` to each of `targets` (infinite if unreachable).
    /// Stops as soon as every target is settled.
    pub fn to_targets(&mut self, source: usize, targets: &[usize]) -> Vec<f64> {
        let mut want: Vec<(usize, usize)> = targets.iter().enumerate().map(|(k, &t)| (t, k)).collect();
        want.sort_unstable();
        let mut out = vec![f64::INFINITY; targets.len()];
        let mut remaining = targets.len();
        if remaining == 0 {
            return out;
        }
        self.run(
            &[source],
            |_, _| true,
            |v, d| {
                let start = want.partition_point(|e| e.0 < v);
                for e in want[start..].iter().take_while(|e| e.0 == v) {
                    out[e.1] = d;
                    remaining -= 1;
                }
                remaining > 0
            },
        );
        out
    }

    /// Full distance field from a set of sources.
    pub fn field(&mut self, sources: &[usize]) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; self.graph.num_vertices()];
        self.run(
            sources,
            |_, _| true,
            |v, d| {
                out[v] = d;
                true
            },
        );
        out
    }
}

/// Vertices within graph distance `radius` of `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicBall {
    pub center: usize,
    pub radius: f64,
    /// `(vertex, distance)` sorted by vertex.
    pub distances: Vec<(usize, f64)>,
}

impl GeodesicBall {
    pub fn get(&self, v: usize) -> Option<f64> {
        self.distances
            .binary_search_by_key(&v, |e| e.0)
            .ok()
            .map(|k| self.distances[k].1)
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

fn check_vertex(graph: &EdgeGraph, v: usize) -> Result<()> {
    let n = graph.num_vertices();
    if v >= n {
        return Err(Error::IndexOutOfRange { index: v, len: n });
    }
    Ok(())
}

pub fn geodesic_ball(graph: &EdgeGraph, center: usize, radius: f64) -> Result<GeodesicBall> {
    check_vertex(graph, center)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    let distances = Dijkstra::new(graph).ball(center, radius);
    Ok(GeodesicBall {
        center,
        radius,
        distances,
    })
}

/// Distances to the nearest of a set of sources.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub sources: Vec<usize>,
    pub distances: Vec<f64>,
}

impl DistanceField {
    /// Two-column CSV `vertex,distance`; unreachable vertices print `inf`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("vertex,distance\n");
        for (v, d) in self.distances.iter().enumerate() {
            let _ = writeln!(s, "{v},{d}");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn multi_source_distances(graph: &EdgeGraph, sources: &[usize]) -> Result<DistanceField> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument(
            "distance field needs at least one source".into(),
        ));
    }
    for &s in sources {
        check_vertex(graph, s)?;
    }
    let mut sorted = sources.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let distances = Dijkstra::new(graph).field(&sorted);
    Ok(DistanceField {
        sources: sorted,
        distances,
    })
}

pub fn single_source_distances(graph: &EdgeGraph, source: usize) -> Result<Vec<f64>> {
    multi_source_distances(graph, &[source]).map(|f| f.distances)
}

/// Greedy farthest-point sampling restricted to `candidates`. The sample
/// starts with `seeds` (kept in the given order), or with the lowest-index
/// candidate when there are none, and grows to `count` points; each new point
/// is the candidate farthest from those already chosen (ties to the lowest
/// index). Unreachable candidates count as infinitely far.
pub fn farthest_point_sampling(
    graph: &EdgeGraph,
    candidates: &[usize],
    seeds: &[usize],
    count: usize,
) -> Result<Vec<usize>> {
    for &v in candidates.iter().chain(seeds) {
        check_vertex(graph, v)?;
    }
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let count = count.min(pool.len().max(seeds.len()));
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for &s in seeds {
        if !chosen.contains(&s) {
            chosen.push(s);
        }
    }
    if chosen.len() >= count {
        chosen.truncate(count);
        return Ok(chosen);
    }
    let mut mind = vec![f64::INFINITY; graph.num_vertices()];
    let mut dj = Dijkstra::new(graph);
    for &s in &chosen {
        relax(&mut dj, &mut mind, s);
    }
    if chosen.is_empty() {
        chosen.push(pool[0]);
        relax(&mut dj, &mut mind, pool[0]);
    }
    while chosen.len() < count {
        let mut best: Option<usize> = None;
        for &c in &pool {
            if mind[c] > 0.0 && best.is_none_or(|b| mind[c] > mind[b]) {
                best = Some(c);
            }
        }
        let Some(b) = best else { break };
        chosen.push(b);
        relax(&mut dj, &mut mind, b);
    }
    Ok(chosen)
}

/// Lowers `mind` with the distances from `s`, expanding only where they
/// improve on it.
fn relax(dj: &mut Dijkstra, mind: &mut [f64], s: usize) {
    let mut updates = Vec::new();
    dj.run(
        &[s],
        |w, d| d < mind[w],
        |v, d| {
            updates.push((v, d));
            true
        },
    );
    for (v, d) in updates {
        mind[v] = mind[v].min(d);
    }
}

/// Geodesic diameter estimate: the largest eccentricity over a 20-point
/// farthest-point sample that starts at vertex 0.
pub fn estimate_diameter(graph: &EdgeGraph) -> Result<f64> {
    let n = graph.num_vertices();
    if n == 0 {
        return Err(Error::InvalidArgument("empty graph".into()));
    }
    let mut dj = Dijkstra::new(graph);
    let mut mind = vec![f64::INFINITY; n];
    let mut best = 0.0f64;
    let mut s = 0;
    for _ in 0..20.min(n) {
        let d = dj.field(&[s]);
        if let Some(u) = d.iter().position(|x| x.is_infinite()) {
            return Err(Error::DisconnectedMesh {
                source_vertex: s,
                unreachable: u,
            });
        }
        best = best.max(d.iter().copied().fold(0.0, f64::max));
        for (m, x) in mind.iter_mut().zip(&d) {
            *m = m.min(*x);
        }
        let mut next = 0;
        for v in 1..n {
            if mind[v] > mind[next] {
                next = v;
            }
        }
        if mind[next] == 0.0 {
            break;
        }
        s = next;
    }
    Ok(best)
}
