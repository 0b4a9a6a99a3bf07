//! Local mapping distortion: how far a point-to-point map is from a local
//! isometry around each source point, and the anchor selection built on it.
//!
//! Around source point `i` the neighborhood is its `ring_depth`-ring `R_i`,
//! with radius `γ_i = max_{j∈R_i} d₁(i, j)`. Each neighbor contributes
//! `|d₁(i, j) − d₂(T(i), T(j))| / γ_i`, weighted by its source area; the
//! center itself belongs to the ball and contributes zero. Target distances
//! come from a Dijkstra ball of radius `γ_i (1 + ε_cap)` around `T(i)`; an
//! image outside that ball contributes the capped value `ε_cap + d₁/γ_i`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodesics::Dijkstra;
use crate::geometry::{ring_neighborhood, EdgeGraph, VertexAreas};

/// Default truncation slack of the target-side ball.
pub const DEFAULT_EPS_CAP: f64 = 0.3;

/// Dense point-to-point map from a source shape to a target shape;
/// `None` marks an unmatched source point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    map: Vec<Option<usize>>,
}

impl Correspondence {
    pub fn new(map: Vec<Option<usize>>) -> Self {
        Self { map }
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(Some).collect())
    }

    pub fn from_indices(map: &[usize]) -> Self {
        Self::new(map.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.map
    }

    pub fn matched_count(&self) -> usize {
        self.map.iter().filter(|t| t.is_some()).count()
    }

    /// Checks that the map covers `n_source` points and targets lie below
    /// `n_target`.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        if self.map.len() != n_source {
            return Err(Error::LengthMismatch {
                expected: n_source,
                found: self.map.len(),
            });
        }
        if let Some(&t) = self.map.iter().flatten().find(|&&t| t >= n_target) {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: n_target,
            });
        }
        Ok(())
    }

    /// Reads one target index per line, `-1` for unmatched. Blank lines and
    /// `#` comments are ignored.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut map = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let t = line.split('#').next().unwrap_or("").trim();
            if t.is_empty() {
                continue;
            }
            let v: i64 = t
                .parse()
                .map_err(|_| Error::parse(path, ln + 1, format!("expected an index, found `{t}`")))?;
            map.push(match v {
                -1 => None,
                v if v >= 0 => Some(v as usize),
                _ => return Err(Error::parse(path, ln + 1, format!("negative index {v}"))),
            });
        }
        Ok(Self::new(map))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.map.len() * 6);
        for t in &self.map {
            match t {
                Some(t) => {
                    let _ = writeln!(s, "{t}");
                }
                None => s.push_str("-1\n"),
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-point distortion values and the radii used.
#[derive(Debug, Clone, PartialEq)]
pub struct LmdField {
    /// Nonnegative; `+∞` where the point or its whole neighborhood is unmatched.
    pub values: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl LmdField {
    /// Median over all points, `+∞` entries included (lower median for even
    /// counts).
    pub fn median(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v[(v.len() - 1) / 2]
    }

    /// CSV `vertex,lmd,gamma`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("vertex,lmd,gamma\n");
        for (i, (v, g)) in self.values.iter().zip(&self.gamma).enumerate() {
            let _ = writeln!(s, "{i},{v},{g}");
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Source-side data of the distortion measure, which depends only on the
/// source shape: per point, its ring, the distances to it and `γ`.
#[derive(Debug, Clone)]
pub struct LmdStencil {
    ring_depth: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    d1: Vec<f64>,
    gamma: Vec<f64>,
    areas: Vec<f64>,
}

impl LmdStencil {
    pub fn new(graph: &EdgeGraph, areas: &VertexAreas, ring_depth: usize) -> Result<Self> {
        let n = graph.num_vertices();
        if areas.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: areas.len(),
            });
        }
        let rows: Vec<Result<(Vec<usize>, Vec<f64>)>> = (0..n)
            .into_par_iter()
            .map_init(
                || Dijkstra::new(graph),
                |dj, i| {
                    let ring = ring_neighborhood(graph, i, ring_depth)?;
                    if ring.is_empty() {
                        return Err(Error::EmptyNeighborhood { vertex: i });
                    }
                    let d = dj.to_targets(i, &ring);
                    Ok((ring, d))
                },
            )
            .collect();
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        let mut d1 = Vec::new();
        let mut gamma = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let (ring, d) = row?;
            let g = d.iter().copied().fold(0.0, f64::max);
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::EmptyNeighborhood { vertex: i });
            }
            neighbors.extend(ring);
            d1.extend(d);
            offsets.push(neighbors.len());
            gamma.push(g);
        }
        Ok(Self {
            ring_depth,
            offsets,
            neighbors,
            d1,
            gamma,
            areas: areas.as_slice().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn ring_depth(&self) -> usize {
        self.ring_depth
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn ring(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn ring_distances(&self, i: usize) -> &[f64] {
        &self.d1[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Distortion of `t` at every source point against target graph `graph2`.
    pub fn evaluate(&self, graph2: &EdgeGraph, t: &Correspondence, eps_cap: f64) -> Result<LmdField> {
        t.validate(self.len(), graph2.num_vertices())?;
        if !(eps_cap >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_cap must be nonnegative, got {eps_cap}"
            )));
        }
        let values = (0..self.len())
            .into_par_iter()
            .map_init(|| Dijkstra::new(graph2), |dj, i| self.point_value(dj, t, i, eps_cap))
            .collect();
        Ok(LmdField {
            values,
            gamma: self.gamma.clone(),
        })
    }

    fn point_value(&self, dj: &mut Dijkstra, t: &Correspondence, i: usize, eps_cap: f64) -> f64 {
        let Some(ti) = t.get(i) else {
            return f64::INFINITY;
        };
        let gamma = self.gamma[i];
        let ball = dj.ball(ti, gamma * (1.0 + eps_cap));
        let mut num = 0.0;
        let mut den = self.areas[i];
        let mut matched = 0;
        for (&j, &d1) in self.ring(i).iter().zip(self.ring_distances(i)) {
            let Some(tj) = t.get(j) else { continue };
            matched += 1;
            let de = match ball.binary_search_by_key(&tj, |e| e.0) {
                Ok(k) => (d1 - ball[k].1).abs() / gamma,
                Err(_) => eps_cap + d1 / gamma,
            };
            num += self.areas[j] * de;
            den += self.areas[j];
        }
        if matched == 0 {
            f64::INFINITY
        } else {
            num / den
        }
    }
}

/// One-shot distortion field; builds the stencil and evaluates it.
pub fn lmd_field(
    graph1: &EdgeGraph,
    areas1: &VertexAreas,
    graph2: &EdgeGraph,
    t: &Correspondence,
    ring_depth: usize,
) -> Result<LmdField> {
    LmdStencil::new(graph1, areas1, ring_depth)?.evaluate(graph2, t, DEFAULT_EPS_CAP)
}

/// Anchor pairs sorted by source index. Fixed pairs (user landmarks) survive
/// every selection round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorSet {
    pairs: Vec<(usize, usize)>,
    fixed: Vec<bool>,
}

impl AnchorSet {
    /// Builds a set from pairs and their fixed flags. Source indices must be
    /// distinct.
    pub fn new(pairs: Vec<(usize, usize)>, fixed: Vec<bool>) -> Result<Self> {
        if pairs.len() != fixed.len() {
            return Err(Error::LengthMismatch {
                expected: pairs.len(),
                found: fixed.len(),
            });
        }
        let mut both: Vec<((usize, usize), bool)> = pairs.into_iter().zip(fixed).collect();
        both.sort_unstable_by_key(|e| e.0 .0);
        if let Some(w) = both.windows(2).find(|w| w[0].0 .0 == w[1].0 .0) {
            return Err(Error::InvalidArgument(format!(
                "source index {} appears in two anchor pairs",
                w[0].0 .0
            )));
        }
        let (pairs, fixed) = both.into_iter().unzip();
        Ok(Self { pairs, fixed })
    }

    /// All pairs fixed.
    pub fn landmarks(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let fixed = vec![true; pairs.len()];
        Self::new(pairs, fixed)
    }

    /// Reads landmark pairs, one `source target` pair per line (whitespace or
    /// comma separated).
    pub fn read_landmarks(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let t = line.split('#').next().unwrap_or("").trim();
            if t.is_empty() {
                continue;
            }
            let toks: Vec<&str> = t
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if toks.len() != 2 {
                return Err(Error::parse(path, ln + 1, "expected `source target`"));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(path, ln + 1, format!("bad index `{s}`")))
            };
            pairs.push((parse(toks[0])?, parse(toks[1])?));
        }
        Self::landmarks(pairs).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.fixed[k]
    }

    pub fn num_fixed(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// The fixed pairs only.
    pub fn fixed_only(&self) -> Self {
        let pairs = self
            .pairs
            .iter()
            .zip(&self.fixed)
            .filter(|(_, &f)| f)
            .map(|(&p, _)| p)
            .collect::<Vec<_>>();
        let n = pairs.len();
        Self {
            pairs,
            fixed: vec![true; n],
        }
    }

    /// Checks every index against the two shape sizes.
    pub fn validate(&self, n_source: usize, n_target: usize) -> Result<()> {
        for &(s, t) in &self.pairs {
            if s >= n_source {
                return Err(Error::IndexOutOfRange {
                    index: s,
                    len: n_source,
                });
            }
            if t >= n_target {
                return Err(Error::IndexOutOfRange {
                    index: t,
                    len: n_target,
                });
            }
        }
        Ok(())
    }
}

/// Fixed pairs plus every matched point whose distortion is below
/// `threshold`. A fixed pair wins over a selected pair on the same source.
pub fn select_anchors(lmd: &LmdField, t: &Correspondence, threshold: f64, fixed: &AnchorSet) -> Result<AnchorSet> {
    if lmd.values.len() != t.len() {
        return Err(Error::LengthMismatch {
            expected: t.len(),
            found: lmd.values.len(),
        });
    }
    let fixed = fixed.fixed_only();
    let mut pairs = fixed.pairs.clone();
    let mut flags = vec![true; pairs.len()];
    for (i, &v) in lmd.values.iter().enumerate() {
        if let Some(ti) = t.get(i) {
            if v < threshold && fixed.pairs.binary_search_by_key(&i, |p| p.0).is_err() {
                pairs.push((i, ti));
                flags.push(false);
            }
        }
    }
    AnchorSet::new(pairs, flags)
}

/// Marks points with distortion at or above `threshold` as unmatched.
pub fn prune_by_lmd(t: &Correspondence, lmd: &LmdField, threshold: f64) -> Result<Correspondence> {
    if lmd.values.len() != t.len() {
        return Err(Error::LengthMismatch {
            expected: t.len(),
            found: lmd.values.len(),
        });
    }
    Ok(Correspondence::new(
        t.as_slice()
            .iter()
            .zip(&lmd.values)
            .map(|(&m, &v)| if v >= threshold { None } else { m })
            .collect(),
    ))
}
