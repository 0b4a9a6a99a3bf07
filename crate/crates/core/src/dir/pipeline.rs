//! End-to-end run from shape files to artifacts on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{dir_gds, dir_spectral, DirConfig, DirOutcome, Init, InitKind, Mode, SourceShape};
use crate::descriptors::{nn_match, shot_descriptors};
use crate::error::{Error, Result};
use crate::geometry::{load_shape, Shape, ShapeFormat, Surface};
use crate::lmd::{AnchorSet, Correspondence};
use crate::spectral::{
    cached_embedding, content_key, cotan_laplacian, lb_eigs, local_mesh_laplacian, LaplacianPair, SpectralEmbedding,
};

/// A loaded shape with everything the matcher needs.
#[derive(Debug, Clone)]
pub struct ShapeInput {
    pub path: PathBuf,
    pub surface: Surface,
    pub laplacian: LaplacianPair,
    faces: Vec<[usize; 3]>,
    /// Local-mesh size for clouds, 0 for meshes; part of the cache key.
    k_local: usize,
}

impl ShapeInput {
    /// Loads a mesh or point cloud, with the format taken from the extension.
    pub fn load(path: &Path, k_local: usize) -> Result<Self> {
        let format =
            ShapeFormat::from_path(path).ok_or_else(|| Error::parse(path, 0, "unrecognized shape file extension"))?;
        match load_shape(path, format)? {
            Shape::Mesh(mesh) => Ok(Self {
                path: path.to_path_buf(),
                surface: Surface::from_mesh(&mesh)?,
                laplacian: cotan_laplacian(&mesh)?,
                faces: mesh.faces().to_vec(),
                k_local: 0,
            }),
            Shape::Cloud(cloud) => {
                let locals = cloud.local_meshes(k_local)?;
                Ok(Self {
                    path: path.to_path_buf(),
                    surface: Surface::from_local_meshes(&cloud, &locals)?,
                    laplacian: local_mesh_laplacian(&cloud, &locals)?,
                    faces: Vec::new(),
                    k_local,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surface.is_empty()
    }

    /// Cache key of the first `k` eigenpairs of this shape.
    pub fn embedding_key(&self, k: usize) -> String {
        content_key(&self.surface.positions, &self.faces, &[k as u64, self.k_local as u64])
    }

    /// First `k` eigenpairs, read from or stored to `cache_dir` when given.
    pub fn embedding(&self, k: usize, cache_dir: Option<&Path>) -> Result<SpectralEmbedding> {
        cached_embedding(cache_dir, &self.embedding_key(k), || lb_eigs(&self.laplacian, k))
    }
}

/// What a pipeline run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: DirOutcome,
    /// Artifacts written, in write order.
    pub outputs: Vec<PathBuf>,
    /// Wall time per stage in seconds.
    pub stages: Vec<(String, f64)>,
    /// Spectral cap actually used (spectral mode).
    pub k_used: Option<usize>,
    pub n_source: usize,
    pub n_target: usize,
}

fn timed<T>(stages: &mut Vec<(String, f64)>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    stages.push((name.to_string(), start.elapsed().as_secs_f64()));
    Ok(out)
}

fn build_init(cfg: &DirConfig, src: &ShapeInput, dst: &ShapeInput) -> Result<Init> {
    let landmarks = match &cfg.landmarks {
        Some(p) => {
            let lm = AnchorSet::read_landmarks(p)?;
            lm.validate(src.len(), dst.len())
                .map_err(|e| Error::parse(p, 0, e.to_string()))?;
            lm
        }
        None => AnchorSet::default(),
    };
    let map = match cfg.init {
        InitKind::Descriptor => {
            let radius = cfg.shot_radius * src.surface.bbox_diagonal();
            let f1 = shot_descriptors(&src.surface, radius)?;
            let f2 = shot_descriptors(&dst.surface, radius)?;
            Some(nn_match(&f1, &f2)?)
        }
        InitKind::Landmarks => {
            if landmarks.is_empty() {
                return Err(Error::Config {
                    key: "landmarks".into(),
                    msg: "landmark initialization needs a non-empty landmark file".into(),
                });
            }
            None
        }
        InitKind::File => {
            let path = cfg.init_file.as_ref().ok_or_else(|| Error::Config {
                key: "init_file".into(),
                msg: "file initialization needs `init_file`".into(),
            })?;
            let t = Correspondence::read(path)?;
            t.validate(src.len(), dst.len())?;
            Some(t)
        }
    };
    Ok(Init { map, landmarks })
}

/// Loads both shapes, initializes, refines and writes under `out_dir`:
/// `correspondence.txt`, `trace.csv`, `lmd.csv`, `fmap_iter_XX.csv` per
/// spectral iteration, `init_correspondence.txt` when the run started from a
/// map, and embedding sidecars under `cache/`.
pub fn run_pipeline(src_path: &Path, dst_path: &Path, cfg: &DirConfig, out_dir: &Path) -> Result<RunReport> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let mut stages = Vec::new();
    let (src, dst) = timed(&mut stages, "load", || {
        Ok((
            ShapeInput::load(src_path, cfg.k_local)?,
            ShapeInput::load(dst_path, cfg.k_local)?,
        ))
    })?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let init = timed(&mut stages, "init", || build_init(&cfg, &src, &dst))?;
    let source = SourceShape {
        graph: &src.surface.graph,
        areas: &src.surface.areas,
    };
    let (outcome, k_used) = match cfg.mode {
        Mode::Spectral => {
            let k = cfg.k.min(src.len() - 1).min(dst.len() - 1);
            if k < cfg.k {
                log::warn!("spectral cap lowered from {} to {k} by the shape sizes", cfg.k);
            }
            let cache = out_dir.join("cache");
            let (e1, e2) = timed(&mut stages, "eigs", || {
                Ok((src.embedding(k, Some(&cache))?, dst.embedding(k, Some(&cache))?))
            })?;
            let out = timed(&mut stages, "dir", || {
                dir_spectral(source, &dst.surface.graph, &e1, &e2, &init, &cfg)
            })?;
            (out, Some(k))
        }
        Mode::Gds => (
            timed(&mut stages, "dir", || dir_gds(source, &dst.surface.graph, &init, &cfg))?,
            None,
        ),
    };
    let outputs = timed(&mut stages, "write", || {
        let mut outputs = Vec::new();
        let mut emit = |name: String, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            let p = out_dir.join(name);
            write(&p)?;
            outputs.push(p);
            Ok(())
        };
        emit("correspondence.txt".into(), &|p| outcome.map.write(p))?;
        emit("trace.csv".into(), &|p| outcome.trace.write_csv(p))?;
        emit("lmd.csv".into(), &|p| outcome.lmd.write_csv(p))?;
        for (i, c) in outcome.fmaps.iter().enumerate() {
            emit(format!("fmap_iter_{:02}.csv", i + 1), &|p| c.write_csv(p))?;
        }
        if let Some(t) = &init.map {
            emit("init_correspondence.txt".into(), &|p| t.write(p))?;
        }
        Ok(outputs)
    })?;
    Ok(RunReport {
        outcome,
        outputs,
        stages,
        k_used,
        n_source: src.len(),
        n_target: dst.len(),
    })
}
