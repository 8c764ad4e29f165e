//! Synthetic datasets: manifests, on-disk PGM sets and in-memory providers.
//!
//! A dataset is a handful of large procedural maps from which every sample
//! is cut on demand. Writing it to disk renders each sample once and stores
//! the pair as PGM files next to `manifest.json`; the in-memory provider
//! renders the same pairs without touching the disk.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pair::{full_frame_displacement, make_pair, place, CorruptionSpec, SamplePair};
use super::scene::{build_scene, Scene, SceneSpec, Texture};
use crate::error::{Error, Result};
use crate::geometry::{Displacement, FrameConfig, Homography};
use crate::image::GrayImage;
use crate::metrics::{Category, DcConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub count: usize,
    /// Center distances in meters, assigned round-robin.
    pub d_c: Vec<f64>,
    /// Failure categories drawn for the non-clean share.
    pub categories: Vec<Category>,
    pub clean_fraction: f64,
    pub map_size: usize,
    pub rich_maps: usize,
    pub tiled_maps: usize,
    pub domain_gap: f64,
    pub tile_period: usize,
    pub frames: FrameConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 100,
            d_c: vec![512.0],
            categories: Category::FAILURES.to_vec(),
            clean_fraction: 0.5,
            map_size: 4096,
            rich_maps: 4,
            tiled_maps: 1,
            domain_gap: 0.5,
            tile_period: 96,
            frames: FrameConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.frames.validate()?;
        if self.d_c.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one d_c value is required".into(),
            ));
        }
        for &d in &self.d_c {
            DcConfig::new(d)?;
        }
        if !(0.0..=1.0).contains(&self.clean_fraction) {
            return Err(Error::InvalidConfig(format!(
                "clean fraction {}",
                self.clean_fraction
            )));
        }
        if self.clean_fraction < 1.0 && self.categories.is_empty() {
            return Err(Error::InvalidConfig(
                "no failure categories for the non-clean share".into(),
            ));
        }
        if self.categories.contains(&Category::Clean) {
            return Err(Error::InvalidConfig(
                "clean is not a failure category".into(),
            ));
        }
        if self.rich_maps == 0 {
            return Err(Error::InvalidConfig(
                "at least one rich map is required".into(),
            ));
        }
        if self.categories.contains(&Category::SelfSimilar) && self.tiled_maps == 0 {
            return Err(Error::InvalidConfig(
                "self-similar samples need a tiled map".into(),
            ));
        }
        if self.map_size < self.frames.w_s {
            return Err(Error::InvalidConfig(format!(
                "map size {} below satellite width {}",
                self.map_size, self.frames.w_s
            )));
        }
        Ok(())
    }

    fn map_spec(&self, index: usize, texture: Texture) -> SceneSpec {
        SceneSpec {
            seed: rng::derive(self.seed, &format!("{texture}-map-{index}")),
            texture,
            domain_gap: self.domain_gap,
            size: self.map_size,
            period: self.tile_period,
        }
    }

    /// Manifest entries without any image paths resolved.
    pub fn plan(&self) -> Result<Vec<ManifestEntry>> {
        self.validate()?;
        let n_clean = (self.count as f64 * self.clean_fraction).round() as usize;
        let mut entries = Vec::with_capacity(self.count);
        for i in 0..self.count {
            let id = format!("s{i:06}");
            let seed = rng::derive(self.seed, &id);
            let category = if i < n_clean {
                Category::Clean
            } else {
                self.categories[(i - n_clean) % self.categories.len()]
            };
            let mut r = rng::stream(rng::derive(seed, "corruption"));
            let corruption = CorruptionSpec::sample(category, &mut r);
            let (texture, maps) = if category == Category::SelfSimilar {
                (Texture::Tiled, self.tiled_maps)
            } else {
                (Texture::Rich, self.rich_maps)
            };
            entries.push(ManifestEntry {
                satellite: format!("{id}_sat.pgm"),
                thermal: format!("{id}_thermal.pgm"),
                id,
                gt: Displacement::ZERO,
                homography: Homography::identity().rows(),
                category,
                magnitude: corruption.magnitude,
                d_c_m: self.d_c[i % self.d_c.len()],
                seed,
                texture,
                map: (seed % maps as u64) as usize,
            });
        }
        Ok(entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Path relative to the manifest directory.
    pub satellite: String,
    pub thermal: String,
    /// Label displacement in full satellite pixels.
    pub gt: Displacement,
    /// Label mapping from full thermal pixels to full satellite pixels.
    pub homography: [[f64; 3]; 3],
    pub category: Category,
    pub magnitude: f64,
    pub d_c_m: f64,
    pub seed: u64,
    pub texture: Texture,
    pub map: usize,
}

impl ManifestEntry {
    pub fn label_homography(&self) -> Result<Homography> {
        Homography::from_rows(self.homography)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: FrameConfig,
    /// Present when the dataset can be re-rendered from scratch.
    pub config: Option<DatasetConfig>,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.frames.validate()?;
        for s in &m.samples {
            if !s.gt.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "sample {} has a non-finite label",
                    s.id
                )));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Source of evaluation samples.
pub trait SampleProvider: Sync {
    fn frames(&self) -> &FrameConfig;
    fn entries(&self) -> &[ManifestEntry];
    /// Full-resolution satellite and thermal images of sample `index`.
    fn load(&self, index: usize) -> Result<(GrayImage, GrayImage)>;
}

/// Renders samples from procedural maps held in memory.
pub struct SyntheticProvider {
    config: DatasetConfig,
    rich: Vec<Scene>,
    tiled: Vec<Scene>,
    entries: Vec<ManifestEntry>,
}

impl SyntheticProvider {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        let mut entries = config.plan()?;
        let needs_tiled = entries.iter().any(|e| e.texture == Texture::Tiled);
        let rich = (0..config.rich_maps)
            .into_par_iter()
            .map(|i| build_scene(config.map_spec(i, Texture::Rich)))
            .collect::<Result<Vec<_>>>()?;
        let tiled = if needs_tiled {
            (0..config.tiled_maps)
                .into_par_iter()
                .map(|i| build_scene(config.map_spec(i, Texture::Tiled)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        for e in &mut entries {
            let corruption = CorruptionSpec::new(e.category, e.magnitude)?;
            let dc = DcConfig::new(e.d_c_m)?;
            let (placement, _) = place(config.map_size, &dc, &corruption, &config.frames, e.seed)?;
            e.gt = full_frame_displacement(&placement.homography, &config.frames)?;
            e.homography = placement.homography.rows();
        }
        Ok(Self {
            config,
            rich,
            tiled,
            entries,
        })
    }

    /// Re-render the samples of a manifest written by this generator.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let config = manifest
            .config
            .clone()
            .ok_or_else(|| Error::InvalidConfig("manifest carries no generator config".into()))?;
        let provider = Self::new(config)?;
        if provider.entries != manifest.samples {
            return Err(Error::InvalidConfig(
                "manifest does not match its generator config".into(),
            ));
        }
        Ok(provider)
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            frames: self.config.frames,
            config: Some(self.config.clone()),
            samples: self.entries.clone(),
        }
    }

    fn render(&self, e: &ManifestEntry) -> Result<SamplePair> {
        let maps = if e.texture == Texture::Tiled {
            &self.tiled
        } else {
            &self.rich
        };
        let scene = maps
            .get(e.map)
            .ok_or_else(|| Error::InvalidConfig(format!("sample {} map {}", e.id, e.map)))?;
        let corruption = CorruptionSpec::new(e.category, e.magnitude)?;
        make_pair(
            scene,
            &DcConfig::new(e.d_c_m)?,
            &corruption,
            &self.config.frames,
            e.seed,
        )
    }

    pub fn render_index(&self, index: usize) -> Result<SamplePair> {
        let e = self
            .entries
            .get(index)
            .ok_or_else(|| Error::OutOfBounds(format!("sample {index}")))?;
        self.render(e)
    }

    /// Write all samples and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        (0..self.entries.len())
            .into_par_iter()
            .try_for_each(|i| -> Result<()> {
                let e = &self.entries[i];
                let pair = self.render(e)?;
                pair.satellite.write_pgm(&dir.join(&e.satellite))?;
                pair.thermal.write_pgm(&dir.join(&e.thermal))?;
                Ok(())
            })?;
        let manifest = self.manifest();
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

impl SampleProvider for SyntheticProvider {
    fn frames(&self) -> &FrameConfig {
        &self.config.frames
    }

    fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn load(&self, index: usize) -> Result<(GrayImage, GrayImage)> {
        let p = self.render_index(index)?;
        Ok((p.satellite, p.thermal))
    }
}

/// Reads samples listed in a manifest from PGM files.
pub struct DiskProvider {
    root: PathBuf,
    manifest: Manifest,
}

impl DiskProvider {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        for e in &manifest.samples {
            for p in [&e.satellite, &e.thermal] {
                if !root.join(p).is_file() {
                    return Err(Error::InvalidConfig(format!(
                        "sample {} is missing {p}",
                        e.id
                    )));
                }
            }
        }
        Ok(Self { root, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }
}

impl SampleProvider for DiskProvider {
    fn frames(&self) -> &FrameConfig {
        &self.manifest.frames
    }

    fn entries(&self) -> &[ManifestEntry] {
        &self.manifest.samples
    }

    fn load(&self, index: usize) -> Result<(GrayImage, GrayImage)> {
        let e = self
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| Error::OutOfBounds(format!("sample {index}")))?;
        let sat = GrayImage::read_pgm(&self.root.join(&e.satellite))?;
        let th = GrayImage::read_pgm(&self.root.join(&e.thermal))?;
        let f = &self.manifest.frames;
        if sat.width() != f.w_s || !sat.is_square() || th.width() != f.w_t || !th.is_square() {
            return Err(Error::BadImage {
                path: self.root.join(&e.satellite),
                msg: "image size does not match the manifest frames".into(),
            });
        }
        Ok((sat, th))
    }
}

/// The samples of another provider that satisfy a predicate.
pub struct Subset<'a> {
    inner: &'a dyn SampleProvider,
    indices: Vec<usize>,
    entries: Vec<ManifestEntry>,
}

impl<'a> Subset<'a> {
    pub fn new(inner: &'a dyn SampleProvider, keep: impl Fn(&ManifestEntry) -> bool) -> Self {
        let indices: Vec<usize> = (0..inner.entries().len())
            .filter(|&i| keep(&inner.entries()[i]))
            .collect();
        let entries = indices
            .iter()
            .map(|&i| inner.entries()[i].clone())
            .collect();
        Self {
            inner,
            indices,
            entries,
        }
    }
}

impl SampleProvider for Subset<'_> {
    fn frames(&self) -> &FrameConfig {
        self.inner.frames()
    }

    fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn load(&self, index: usize) -> Result<(GrayImage, GrayImage)> {
        let i = *self
            .indices
            .get(index)
            .ok_or_else(|| Error::OutOfBounds(format!("sample {index}")))?;
        self.inner.load(i)
    }
}
