//! A trained field: Gaussians with learned features, the mapping that
//! produced their targets, and the cameras they were trained from.
//!
//! On disk a field is `field.bin` (the `gaussians.bin` record layout), a
//! JSON sidecar next to it, and a self-contained `mapping.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::{bake_feature_maps, cross_view_grid_mapping, BakedView, MappingResult};
use crate::scene::{
    Camera, CanonicalPhrase, Dataset, GaussianCloud, MatchParams, TrainConfig,
};
use crate::splat::{train_features, RenderConfig, TrainingView};

/// Contents of `mapping.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingFile {
    pub embedding_dim: usize,
    pub width: usize,
    pub height: usize,
    pub canonical: Vec<CanonicalPhrase>,
    #[serde(flatten)]
    pub mapping: MappingResult,
}

impl MappingFile {
    pub fn new(ds: &Dataset, mapping: MappingResult) -> Self {
        Self {
            embedding_dim: ds.meta.embedding_dim,
            width: ds.width(),
            height: ds.height(),
            canonical: ds.canonical.clone(),
            mapping,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Contents of the sidecar written next to `field.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub cameras: Vec<Camera>,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub history: Vec<f64>,
}

/// `field.bin` -> `field.json`.
pub fn sidecar_path(field: &Path) -> PathBuf {
    field.with_extension("json")
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedField {
    pub cloud: GaussianCloud,
    pub mapping: MappingFile,
    pub sidecar: FieldSidecar,
}

/// Wall-clock seconds spent in each build stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildTimings {
    pub mapping_s: f64,
    pub bake_s: f64,
    pub train_s: f64,
}

/// Training views for every baked view that has supervised pixels.
pub fn training_views(ds: &Dataset, baked: &[BakedView]) -> Vec<TrainingView> {
    ds.views
        .iter()
        .zip(baked)
        .filter(|(_, b)| !b.coverage.is_empty())
        .map(|(v, b)| TrainingView {
            camera: v.camera.clone(),
            target: b.target.clone(),
            coverage: b.coverage.clone(),
        })
        .collect()
}

impl TrainedField {
    /// Maps, bakes and trains from a dataset whose keypoint matches are
    /// already resolved.
    pub fn build(
        ds: &Dataset,
        geometry: &GaussianCloud,
        params: &MatchParams,
        train: &TrainConfig,
        render: &RenderConfig,
    ) -> Result<(Self, BuildTimings)> {
        let t0 = Instant::now();
        let mapping = cross_view_grid_mapping(ds, params)?;
        let t1 = Instant::now();
        let baked = bake_feature_maps(ds, &mapping)?;
        let t2 = Instant::now();
        let field = Self::train(ds, geometry, MappingFile::new(ds, mapping), &baked, train, render)?;
        let t3 = Instant::now();
        Ok((
            field,
            BuildTimings {
                mapping_s: (t1 - t0).as_secs_f64(),
                bake_s: (t2 - t1).as_secs_f64(),
                train_s: (t3 - t2).as_secs_f64(),
            },
        ))
    }

    pub fn train(
        ds: &Dataset,
        geometry: &GaussianCloud,
        mapping: MappingFile,
        baked: &[BakedView],
        train: &TrainConfig,
        render: &RenderConfig,
    ) -> Result<Self> {
        let views = training_views(ds, baked);
        if views.is_empty() && train.iterations > 0 {
            return Err(Error::NoSupervisedPixels);
        }
        let outcome = train_features(geometry, &views, train, render)?;
        Ok(Self {
            sidecar: FieldSidecar {
                gaussians: outcome.cloud.len(),
                width: ds.width(),
                height: ds.height(),
                cameras: ds.cameras(),
                train: train.clone(),
                render: render.clone(),
                history: outcome.history,
            },
            cloud: outcome.cloud,
            mapping,
        })
    }

    pub fn lattice(&self) -> &crate::mapper::GridLattice {
        &self.mapping.mapping.lattice
    }

    pub fn view_count(&self) -> usize {
        self.sidecar.cameras.len()
    }

    pub fn camera(&self, view: usize) -> Result<&Camera> {
        self.sidecar.cameras.get(view).ok_or(Error::UnknownView(view))
    }

    pub fn save(&self, field_path: &Path, mapping_path: &Path) -> Result<()> {
        self.cloud.write(field_path)?;
        write_json(&sidecar_path(field_path), &self.sidecar)?;
        self.mapping.write(mapping_path)
    }

    pub fn load(field_path: &Path, mapping_path: &Path) -> Result<Self> {
        let cloud = GaussianCloud::read(field_path)?;
        let sidecar: FieldSidecar = read_json(&sidecar_path(field_path))?;
        let mapping = MappingFile::read(mapping_path)?;
        if sidecar.gaussians != cloud.len() {
            return Err(Error::format(
                field_path,
                format!("sidecar lists {} gaussians, file has {}", sidecar.gaussians, cloud.len()),
            ));
        }
        if (sidecar.width, sidecar.height) != (mapping.width, mapping.height) {
            return Err(Error::format(mapping_path, "image size differs from the field sidecar"));
        }
        mapping.mapping.lattice.check()?;
        Ok(Self {
            cloud,
            mapping,
            sidecar,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_scene, SyntheticSceneSpec};

    #[test]
    fn save_load_round_trip() {
        let s = generate_synthetic_scene(&SyntheticSceneSpec {
            objects: 2,
            views: 2,
            width: 40,
            height: 40,
            ..SyntheticSceneSpec::default()
        })
        .unwrap();
        let train = TrainConfig {
            iterations: 5,
            ..TrainConfig::default()
        };
        let (field, _) = TrainedField::build(
            &s.dataset,
            &s.cloud,
            &MatchParams::default(),
            &train,
            &RenderConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (fp, mp) = (dir.path().join("field.bin"), dir.path().join("mapping.json"));
        field.save(&fp, &mp).unwrap();
        let back = TrainedField::load(&fp, &mp).unwrap();
        // Features pass through f32 on disk.
        assert_eq!(back.mapping, field.mapping);
        assert_eq!(back.sidecar, field.sidecar);
        assert_eq!(back.cloud.len(), field.cloud.len());
        back.save(&fp, &mp).unwrap();
        assert_eq!(TrainedField::load(&fp, &mp).unwrap(), back);
    }
}
