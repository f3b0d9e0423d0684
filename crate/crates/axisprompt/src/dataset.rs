//! On-disk synthetic dataset.
//!
//! Layout:
//!
//! ```text
//! <out>/manifest.json
//! <out>/<category>/<entry_id>/view_<k>.png
//! <out>/<category>/<entry_id>/annotation.json
//! ```
//!
//! `annotation.json` is a serialized [`DatasetEntry`]; keys appear in struct
//! declaration order (`id`, `category`, `rng_seed`, `object`, `views`).

use std::path::{Path, PathBuf};

use axisprompt_core::scene::{build_entry, render_view, Category, DatasetEntry, SceneError, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use axisprompt_core::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};

pub const MANIFEST: &str = "manifest.json";
pub const ANNOTATION: &str = "annotation.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    NotEmpty(PathBuf),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("entry {id}: {source}")]
    Scene { id: String, source: SceneError },
    #[error("entry {0} is listed in the manifest but its annotation disagrees")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub per_category: usize,
    pub views: usize,
    pub seed: u64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
}

fn default_width() -> u32 {
    DEFAULT_WIDTH
}

fn default_height() -> u32 {
    DEFAULT_HEIGHT
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            per_category: 5,
            views: 3,
            seed: 0,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    /// Entry directory relative to the dataset root.
    pub path: String,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: GenConfig,
    pub entries: Vec<ManifestEntry>,
}

/// Per-entry seed derived from the dataset seed (SplitMix64 finalizer).
pub fn entry_seed(seed: u64, category: Category, index: usize) -> u64 {
    let cat = Category::ALL.iter().position(|c| *c == category).unwrap_or(0) as u64;
    let mut z = seed ^ (cat << 56) ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn entry_rel_dir(category: Category, id: &str) -> String {
    format!("{}/{}", category.name(), id)
}

/// Renders the unannotated view images of an entry.
pub fn render_bases(entry: &DatasetEntry) -> Result<Vec<RgbImage>, SceneError> {
    entry.views.iter().map(|v| render_view(&entry.object, &v.camera, &v.frame)).collect()
}

/// Generates the whole dataset under `out`. Entries are built in parallel,
/// each writing only inside its own directory; the manifest is written last.
pub fn generate_dataset(config: &GenConfig, out: &Path, force: bool) -> Result<Manifest, DatasetError> {
    if config.per_category < 1 {
        return Err(DatasetError::Config("per_category must be at least 1".into()));
    }
    if config.views < 2 {
        return Err(DatasetError::Config("views must be at least 2".into()));
    }
    if config.width == 0 || config.height == 0 {
        return Err(DatasetError::Config("image size must be positive".into()));
    }
    if !force && !io::is_empty_or_missing(out)? {
        return Err(DatasetError::NotEmpty(out.to_path_buf()));
    }
    io::create_dir_all(out)?;
    let jobs: Vec<(Category, usize)> = Category::ALL.iter().flat_map(|&c| (0..config.per_category).map(move |i| (c, i))).collect();
    let entries = jobs
        .par_iter()
        .map(|&(category, index)| {
            let seed = entry_seed(config.seed, category, index);
            let entry = build_entry(category, index, seed, config.views, config.width, config.height).map_err(|source| DatasetError::Scene {
                id: format!("{}_{index:03}", category.name()),
                source,
            })?;
            let rel = entry_rel_dir(category, &entry.id);
            let dir = out.join(&rel);
            io::create_dir_all(&dir)?;
            let bases = render_bases(&entry).map_err(|source| DatasetError::Scene { id: entry.id.clone(), source })?;
            for (view, img) in entry.views.iter().zip(&bases) {
                io::write_png(&dir.join(&view.image), img)?;
            }
            io::write_json(&dir.join(ANNOTATION), &entry)?;
            Ok(ManifestEntry {
                id: entry.id.clone(),
                category,
                path: rel,
                rng_seed: seed,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        entries,
    };
    io::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A loaded dataset: manifest plus every entry's annotation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Dataset, DatasetError> {
        let manifest: Manifest = io::read_json(&root.join(MANIFEST))?;
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in &manifest.entries {
            let entry: DatasetEntry = io::read_json(&root.join(&m.path).join(ANNOTATION))?;
            if entry.id != m.id || entry.category != m.category {
                return Err(DatasetError::Inconsistent(m.id.clone()));
            }
            entry.validate().map_err(|source| DatasetError::Scene { id: m.id.clone(), source })?;
            entries.push(entry);
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            entries,
        })
    }

    pub fn entry_dir(&self, index: usize) -> PathBuf {
        self.root.join(&self.manifest.entries[index].path)
    }

    /// Reads the stored view images of entry `index`.
    pub fn load_bases(&self, index: usize) -> Result<Vec<RgbImage>, DatasetError> {
        let dir = self.entry_dir(index);
        self.entries[index]
            .views
            .iter()
            .map(|v| io::read_png(&dir.join(&v.image)).map_err(DatasetError::from))
            .collect()
    }
}
