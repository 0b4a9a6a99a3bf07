//! Per-point feature rows: an extrinsic SHOT-style local histogram for the
//! initial correspondence, and geodesic distance signatures to anchor points.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodesics::Dijkstra;
use crate::geometry::{EdgeGraph, SpatialGrid, Surface};
use crate::lmd::Correspondence;
use crate::nn::nearest_rows;

pub const SHOT_AZIMUTH_BINS: usize = 8;
pub const SHOT_ELEVATION_BINS: usize = 2;
pub const SHOT_RADIAL_BINS: usize = 2;
pub const SHOT_COSINE_BINS: usize = 11;
pub const SHOT_DIM: usize = SHOT_AZIMUTH_BINS * SHOT_ELEVATION_BINS * SHOT_RADIAL_BINS * SHOT_COSINE_BINS;
/// Rows with fewer neighbors inside the support are left zero and flagged.
pub const SHOT_MIN_NEIGHBORS: usize = 5;
/// Default support radius as a fraction of the bounding-box diagonal.
pub const SHOT_DEFAULT_RADIUS_FRACTION: f64 = 0.05;
/// Upper bound on the number of signature anchors.
pub const GDS_MAX_ANCHORS: usize = 800;

const MAGIC: &[u8; 8] = b"DIRDSC01";

#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorKind {
    ShotLike { radius: f64 },
    Gds { anchors: Vec<usize> },
}

impl DescriptorKind {
    fn tag(&self) -> u64 {
        match self {
            Self::ShotLike { .. } => 0,
            Self::Gds { .. } => 1,
        }
    }
}

/// `n × dim` feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    kind: DescriptorKind,
    dim: usize,
    data: Vec<f64>,
    flagged: Vec<bool>,
}

impl DescriptorField {
    pub fn new(kind: DescriptorKind, dim: usize, data: Vec<f64>, flagged: Vec<bool>) -> Result<Self> {
        if dim == 0 || data.len() != flagged.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: flagged.len() * dim,
                found: data.len(),
            });
        }
        Ok(Self {
            kind,
            dim,
            data,
            flagged,
        })
    }

    pub fn kind(&self) -> &DescriptorKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.flagged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Points whose row is zero because their support was too sparse.
    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn num_flagged(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + 8 * self.data.len() + self.flagged.len());
        buf.extend_from_slice(MAGIC);
        let mut word = |x: u64| buf.extend_from_slice(&x.to_le_bytes());
        word(self.kind.tag());
        match &self.kind {
            DescriptorKind::ShotLike { radius } => word(radius.to_bits()),
            DescriptorKind::Gds { anchors } => {
                word(anchors.len() as u64);
                for &a in anchors {
                    word(a as u64);
                }
            }
        }
        word(self.len() as u64);
        word(self.dim as u64);
        for &v in &self.data {
            word(v.to_bits());
        }
        buf.extend(self.flagged.iter().map(|&f| f as u8));
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = || Error::parse(path, 0, "malformed descriptor sidecar");
        if buf.len() < 16 || &buf[..8] != MAGIC {
            return Err(bad());
        }
        let mut pos = 8;
        let mut word = || -> Result<u64> {
            let w = buf.get(pos..pos + 8).ok_or_else(bad)?;
            pos += 8;
            Ok(u64::from_le_bytes(w.try_into().expect("8 bytes")))
        };
        let kind = match word()? {
            0 => DescriptorKind::ShotLike {
                radius: f64::from_bits(word()?),
            },
            1 => {
                let m = word()? as usize;
                if m > buf.len() / 8 {
                    return Err(bad());
                }
                let anchors = (0..m).map(|_| word().map(|a| a as usize)).collect::<Result<_>>()?;
                DescriptorKind::Gds { anchors }
            }
            _ => return Err(bad()),
        };
        let n = word()? as usize;
        let dim = word()? as usize;
        let count = n.checked_mul(dim).ok_or_else(bad)?;
        if count > buf.len() / 8 {
            return Err(bad());
        }
        let data = (0..count)
            .map(|_| word().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        if buf.len() != pos + n {
            return Err(bad());
        }
        let flagged = buf[pos..].iter().map(|&b| b != 0).collect();
        Self::new(kind, dim, data, flagged)
    }
}

/// Local reference frame `(x, y, z)` at a point from its neighbor offsets and
/// distances, or `None` if the weighted covariance vanishes.
fn local_frame(offsets: &[Vector3<f64>], dists: &[f64], radius: f64) -> Option<Matrix3<f64>> {
    let mut cov = Matrix3::zeros();
    let mut wsum = 0.0;
    for (q, &d) in offsets.iter().zip(dists) {
        let w = radius - d;
        cov += q * q.transpose() * w;
        wsum += w;
    }
    if !(wsum > 0.0) {
        return None;
    }
    cov /= wsum;
    let eig = cov.symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if !(eig.eigenvalues[order[0]] > 0.0) {
        return None;
    }
    let disambiguate = |v: Vector3<f64>| {
        let (mut pos, mut neg, mut sum) = (0usize, 0usize, 0.0);
        for q in offsets {
            let p = q.dot(&v);
            sum += p;
            if p >= 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        if neg > pos || (neg == pos && sum < 0.0) {
            -v
        } else {
            v
        }
    };
    let x = disambiguate(eig.eigenvectors.column(order[0]).into_owned());
    let z = disambiguate(eig.eigenvectors.column(order[2]).into_owned());
    let y = z.cross(&x);
    Some(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

/// Splits a continuous bin coordinate (bin `b` spans `[b, b+1)`) into two
/// neighboring bins with linear weights. Centers sit at `b + 0.5`.
fn split(c: f64, bins: usize, wrap: bool) -> [(usize, f64); 2] {
    let t = c - 0.5;
    let lo = t.floor();
    let frac = t - lo;
    let lo = lo as isize;
    let idx = |b: isize| -> Option<usize> {
        if wrap {
            Some(b.rem_euclid(bins as isize) as usize)
        } else if b < 0 || b >= bins as isize {
            None
        } else {
            Some(b as usize)
        }
    };
    match (idx(lo), idx(lo + 1)) {
        (Some(a), Some(b)) => [(a, 1.0 - frac), (b, frac)],
        (None, Some(b)) => [(b, 1.0), (b, 0.0)],
        (Some(a), None) => [(a, 1.0), (a, 0.0)],
        (None, None) => unreachable!("coordinate outside every bin"),
    }
}

fn shot_row(surface: &Surface, grid: &SpatialGrid, i: usize, radius: f64) -> Option<Vec<f64>> {
    let p = surface.positions[i];
    let nbrs: Vec<(usize, f64)> = grid.within(&p, radius).into_iter().filter(|e| e.0 != i).collect();
    if nbrs.len() < SHOT_MIN_NEIGHBORS {
        return None;
    }
    let offsets: Vec<Vector3<f64>> = nbrs.iter().map(|&(j, _)| surface.positions[j] - p).collect();
    let dists: Vec<f64> = nbrs.iter().map(|e| e.1).collect();
    let frame = local_frame(&offsets, &dists, radius)?;
    let z = frame.row(2).transpose();
    let mut hist = vec![0.0; SHOT_DIM];
    for (&(j, d), q) in nbrs.iter().zip(&offsets) {
        if d <= 1e-12 * radius {
            continue;
        }
        let l = frame * q;
        let azimuth = l.y.atan2(l.x).rem_euclid(TAU);
        let elevation = (l.z / d).clamp(-1.0, 1.0).asin();
        let cosine = surface.normals[j].dot(&z).clamp(-1.0, 1.0);
        let ca = azimuth / TAU * SHOT_AZIMUTH_BINS as f64;
        let ce = (elevation + FRAC_PI_2) / PI * SHOT_ELEVATION_BINS as f64;
        let cr = d / radius * SHOT_RADIAL_BINS as f64;
        let cc = (cosine + 1.0) / 2.0 * SHOT_COSINE_BINS as f64;
        let w = 1.0 - d / radius;
        for (a, wa) in split(ca, SHOT_AZIMUTH_BINS, true) {
            for (e, we) in split(ce, SHOT_ELEVATION_BINS, false) {
                for (r, wr) in split(cr, SHOT_RADIAL_BINS, false) {
                    for (c, wc) in split(cc, SHOT_COSINE_BINS, false) {
                        let sector = (a * SHOT_ELEVATION_BINS + e) * SHOT_RADIAL_BINS + r;
                        hist[sector * SHOT_COSINE_BINS + c] += w * wa * we * wr * wc;
                    }
                }
            }
        }
    }
    let norm = hist.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    hist.iter_mut().for_each(|x| *x /= norm);
    Some(hist)
}

/// SHOT-style descriptor of every point with Euclidean support `radius`.
pub fn shot_descriptors(surface: &Surface, radius: f64) -> Result<DescriptorField> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "support radius must be positive, got {radius}"
        )));
    }
    let grid = SpatialGrid::new(&surface.positions);
    let rows: Vec<Option<Vec<f64>>> = (0..surface.len())
        .into_par_iter()
        .map(|i| shot_row(surface, &grid, i, radius))
        .collect();
    let mut data = Vec::with_capacity(rows.len() * SHOT_DIM);
    let mut flagged = Vec::with_capacity(rows.len());
    for row in rows {
        match row {
            Some(r) => {
                data.extend(r);
                flagged.push(false);
            }
            None => {
                data.extend(std::iter::repeat_n(0.0, SHOT_DIM));
                flagged.push(true);
            }
        }
    }
    let n_flagged = flagged.iter().filter(|&&f| f).count();
    if n_flagged > 0 {
        log::warn!("{n_flagged} points have fewer than {SHOT_MIN_NEIGHBORS} neighbors within radius {radius}; descriptor rows left zero");
    }
    DescriptorField::new(DescriptorKind::ShotLike { radius }, SHOT_DIM, data, flagged)
}

/// Geodesic distances from every vertex to each anchor. Column `ℓ` is the
/// distance field of `anchors[ℓ]`. Vertices unreachable from an anchor get
/// twice the largest finite entry of the whole matrix.
pub fn gds_features(graph: &EdgeGraph, anchors: &[usize]) -> Result<DescriptorField> {
    let n = graph.num_vertices();
    if anchors.is_empty() || anchors.len() > GDS_MAX_ANCHORS {
        return Err(Error::InvalidArgument(format!(
            "signature needs 1 to {GDS_MAX_ANCHORS} anchors, got {}",
            anchors.len()
        )));
    }
    if let Some(&a) = anchors.iter().find(|&&a| a >= n) {
        return Err(Error::IndexOutOfRange { index: a, len: n });
    }
    let cols: Vec<Vec<f64>> = anchors
        .par_iter()
        .map_init(|| Dijkstra::new(graph), |dj, &a| dj.field(&[a]))
        .collect();
    let d = anchors.len();
    let mut data = vec![0.0; n * d];
    for (l, col) in cols.iter().enumerate() {
        for (v, &x) in col.iter().enumerate() {
            data[v * d + l] = x;
        }
    }
    let max_finite = data.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    let mut unreachable = 0usize;
    for x in data.iter_mut().filter(|x| !x.is_finite()) {
        *x = 2.0 * max_finite;
        unreachable += 1;
    }
    if unreachable > 0 {
        log::warn!(
            "{unreachable} vertex-anchor pairs are disconnected; using distance {}",
            2.0 * max_finite
        );
    }
    DescriptorField::new(
        DescriptorKind::Gds {
            anchors: anchors.to_vec(),
        },
        d,
        data,
        vec![false; n],
    )
}

/// Exact nearest-neighbor map between two fields of the same kind.
pub fn nn_match(src: &DescriptorField, dst: &DescriptorField) -> Result<Correspondence> {
    if src.dim != dst.dim {
        return Err(Error::DimensionMismatch {
            expected: src.dim,
            found: dst.dim,
        });
    }
    if src.kind.tag() != dst.kind.tag() {
        return Err(Error::InvalidArgument("descriptor kinds differ".into()));
    }
    if src.num_flagged() > 0 {
        log::info!("{} flagged source rows matched as zero vectors", src.num_flagged());
    }
    let idx = nearest_rows(&src.data, &dst.data, src.dim)?;
    Ok(Correspondence::from_indices(&idx))
}
