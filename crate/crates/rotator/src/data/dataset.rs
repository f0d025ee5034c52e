//! On-disk dataset container: a manifest plus one image and one mask file
//! per (identity, view).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::geometry::{GeometryMode, ViewGeometry};
use crate::data::render::{render_object, ObjectSpec};
use crate::error::{Error, Result};
use crate::pnm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub geometry: String,
    pub views: usize,
    pub degrees_per_step: f64,
    pub identities: usize,
    pub image_size: usize,
    pub channels: usize,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
    pub seed: u64,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mode = GeometryMode::parse(&self.geometry)?;
        let geometry = ViewGeometry {
            mode,
            views: self.views,
            degrees_per_step: self.degrees_per_step,
        };
        geometry.validate()?;
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config(format!(
                "unsupported channel count {}",
                self.channels
            )));
        }
        if self.image_size < 8 || self.image_size > 1024 {
            return Err(Error::config(format!(
                "unsupported image size {}",
                self.image_size
            )));
        }
        if self.train_ids.iter().any(|id| self.test_ids.contains(id)) {
            return Err(Error::config("train and test id lists overlap"));
        }
        if self.train_ids.len() + self.test_ids.len() != self.identities {
            return Err(Error::config(format!(
                "{} train + {} test ids do not partition {} identities",
                self.train_ids.len(),
                self.test_ids.len(),
                self.identities
            )));
        }
        let max = self.identities as u32;
        if self
            .train_ids
            .iter()
            .chain(&self.test_ids)
            .any(|&id| id >= max)
        {
            return Err(Error::config("identity id out of range"));
        }
        Ok(())
    }

    pub fn view_geometry(&self) -> ViewGeometry {
        ViewGeometry {
            mode: GeometryMode::parse(&self.geometry).expect("validated"),
            views: self.views,
            degrees_per_step: self.degrees_per_step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub mode: GeometryMode,
    pub identities: usize,
    pub views: usize,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Identities in the train split; the default keeps 80% for training.
    pub train_count: Option<usize>,
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(Error::arg("need at least 2 identities"));
        }
        if self.views < 3 {
            return Err(Error::arg("need at least 3 views"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::arg(format!("unsupported channel count {}", self.channels)));
        }
        if self.size < 8 || self.size > 1024 {
            return Err(Error::arg(format!("unsupported image size {}", self.size)));
        }
        let train = self.resolved_train_count();
        if train == 0 || train >= self.identities {
            return Err(Error::arg(format!(
                "train count {train} must leave at least one test identity"
            )));
        }
        Ok(())
    }

    fn resolved_train_count(&self) -> usize {
        self.train_count
            .unwrap_or_else(|| ((self.identities as f64 * 0.8).round() as usize).max(1))
    }

    fn geometry(&self) -> ViewGeometry {
        match self.mode {
            GeometryMode::Arc => ViewGeometry::arc(self.views),
            GeometryMode::Wrap => ViewGeometry::wrap(self.views),
        }
    }
}

/// Loaded corpus: every image and mask as a [0,1] tensor, indexed by
/// (identity, view).
#[derive(Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
    images: Vec<Tensor>,
    masks: Vec<Tensor>,
}

fn identity_dir(root: &Path, id: u32) -> PathBuf {
    root.join(format!("id_{id:04}"))
}

fn image_path(root: &Path, id: u32, view: usize, channels: usize) -> PathBuf {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    identity_dir(root, id).join(format!("view_{view:02}.{ext}"))
}

fn mask_path(root: &Path, id: u32, view: usize) -> PathBuf {
    identity_dir(root, id).join(format!("view_{view:02}_mask.pgm"))
}

/// Renders and writes a full dataset. The same config and seed produce a
/// byte-identical directory tree.
pub fn generate(cfg: &GenConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let geometry = cfg.geometry();
    let train = cfg.resolved_train_count();

    // Identity factor collisions are astronomically unlikely, but the
    // container contract says distinct ids differ, so check.
    let specs: Vec<ObjectSpec> = (0..cfg.identities as u32)
        .map(|id| ObjectSpec::from_seed(cfg.seed, id))
        .collect();
    for i in 1..specs.len() {
        if specs[..i].iter().any(|s| {
            s.radii == specs[i].radii && s.vertex_count == specs[i].vertex_count
        }) {
            return Err(Error::numeric(format!(
                "identity {} collides with an earlier identity; pick another seed",
                specs[i].id
            )));
        }
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for spec in &specs {
        let dir = identity_dir(out, spec.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for view in 0..cfg.views {
            let (img, mask) = render_object(spec, view, &geometry, cfg.size, cfg.channels)?;
            pnm::write_file(&image_path(out, spec.id, view, cfg.channels), &img)?;
            pnm::write_file(&mask_path(out, spec.id, view), &mask)?;
        }
    }

    let manifest = Manifest {
        geometry: cfg.mode.as_str().to_string(),
        views: cfg.views,
        degrees_per_step: geometry.degrees_per_step,
        identities: cfg.identities,
        image_size: cfg.size,
        channels: cfg.channels,
        train_ids: (0..train as u32).collect(),
        test_ids: (train as u32..cfg.identities as u32).collect(),
        seed: cfg.seed,
    };
    let manifest_path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    load(out)
}

/// Loads a dataset, checking the manifest against what is actually on disk.
pub fn load(root: &Path) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    manifest
        .validate()
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;

    let dirs = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.file_type().map(|t| t.is_dir()).unwrap_or(false)
                && e.file_name().to_string_lossy().starts_with("id_")
        })
        .count();
    if dirs != manifest.identities {
        return Err(Error::format(
            root,
            format!(
                "manifest declares {} identities but {} identity directories exist",
                manifest.identities, dirs
            ),
        ));
    }

    let mut images = Vec::with_capacity(manifest.identities * manifest.views);
    let mut masks = Vec::with_capacity(manifest.identities * manifest.views);
    for id in 0..manifest.identities as u32 {
        for view in 0..manifest.views {
            let ipath = image_path(root, id, view, manifest.channels);
            let img = pnm::read_file(&ipath)?;
            if img.width != manifest.image_size
                || img.height != manifest.image_size
                || img.channels != manifest.channels
            {
                return Err(Error::format(
                    &ipath,
                    format!(
                        "image is {}x{}x{}, manifest says {}x{}x{}",
                        img.width,
                        img.height,
                        img.channels,
                        manifest.image_size,
                        manifest.image_size,
                        manifest.channels
                    ),
                ));
            }
            let mpath = mask_path(root, id, view);
            let mask = pnm::read_file(&mpath)?;
            if mask.channels != 1 || mask.width != manifest.image_size || mask.height != manifest.image_size {
                return Err(Error::format(&mpath, "mask geometry disagrees with manifest"));
            }
            if mask.data.iter().any(|&v| v != 0 && v != 255) {
                return Err(Error::format(&mpath, "mask is not binary (expected 0/255)"));
            }
            images.push(img.to_tensor());
            masks.push(mask.to_tensor());
        }
    }

    Ok(Dataset {
        manifest,
        root: root.to_path_buf(),
        images,
        masks,
    })
}

impl Dataset {
    fn index(&self, id: u32, view: usize) -> usize {
        debug_assert!((id as usize) < self.manifest.identities);
        let view = match self.geometry().mode {
            GeometryMode::Wrap => view % self.manifest.views,
            GeometryMode::Arc => view,
        };
        debug_assert!(view < self.manifest.views);
        id as usize * self.manifest.views + view
    }

    /// C x H x W image tensor in [0, 1].
    pub fn image(&self, id: u32, view: usize) -> &Tensor {
        &self.images[self.index(id, view)]
    }

    /// 1 x H x W binary mask tensor.
    pub fn mask(&self, id: u32, view: usize) -> &Tensor {
        &self.masks[self.index(id, view)]
    }

    pub fn geometry(&self) -> ViewGeometry {
        self.manifest.view_geometry()
    }

    pub fn train_ids(&self) -> &[u32] {
        &self.manifest.train_ids
    }

    pub fn test_ids(&self) -> &[u32] {
        &self.manifest.test_ids
    }

    pub fn views(&self) -> usize {
        self.manifest.views
    }

    pub fn image_elems(&self) -> usize {
        self.manifest.channels * self.manifest.image_size * self.manifest.image_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(seed: u64) -> GenConfig {
        GenConfig {
            mode: GeometryMode::Wrap,
            identities: 3,
            views: 4,
            size: 16,
            channels: 3,
            seed,
            train_count: Some(2),
        }
    }

    #[test]
    fn generate_writes_expected_file_count_and_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&tiny_cfg(1), dir.path()).unwrap();
        assert_eq!(ds.train_ids(), &[0, 1]);
        assert_eq!(ds.test_ids(), &[2]);
        let files: usize = walk_files(dir.path());
        // 3 ids x 4 views x 2 files + manifest
        assert_eq!(files, 3 * 4 * 2 + 1);
        assert_eq!(ds.image(0, 0).shape(), &[3, 16, 16]);
        let mask = ds.mask(2, 3);
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn same_seed_is_byte_identical_different_seed_differs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let d3 = tempfile::tempdir().unwrap();
        generate(&tiny_cfg(5), d1.path()).unwrap();
        generate(&tiny_cfg(5), d2.path()).unwrap();
        generate(&tiny_cfg(6), d3.path()).unwrap();
        assert_eq!(tree_bytes(d1.path()), tree_bytes(d2.path()));
        assert_ne!(tree_bytes(d1.path()), tree_bytes(d3.path()));
    }

    #[test]
    fn manifest_identity_count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        generate(&tiny_cfg(2), dir.path()).unwrap();
        std::fs::remove_dir_all(dir.path().join("id_0002")).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate(&tiny_cfg(3), dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let mut m: Manifest =
            serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
        m.test_ids = vec![1, 2];
        m.train_ids = vec![0, 1];
        std::fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(load(dir.path()).is_err());
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate(&tiny_cfg(4), dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
        v["surprise"] = serde_json::json!(true);
        std::fs::write(&mpath, v.to_string()).unwrap();
        assert!(load(dir.path()).is_err());
    }

    fn walk_files(p: &Path) -> usize {
        let mut n = 0;
        for e in std::fs::read_dir(p).unwrap().flatten() {
            if e.file_type().unwrap().is_dir() {
                n += walk_files(&e.path());
            } else {
                n += 1;
            }
        }
        n
    }

    fn tree_bytes(p: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        fn rec(base: &Path, p: &Path, out: &mut Vec<(String, Vec<u8>)>) {
            for e in std::fs::read_dir(p).unwrap().flatten() {
                if e.file_type().unwrap().is_dir() {
                    rec(base, &e.path(), out);
                } else {
                    let rel = e.path().strip_prefix(base).unwrap().to_string_lossy().into_owned();
                    out.push((rel, std::fs::read(e.path()).unwrap()));
                }
            }
        }
        rec(p, p, &mut out);
        out.sort();
        out
    }
}
