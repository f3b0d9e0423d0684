#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axisprompt::dataset::{generate_dataset, GenConfig};
use axisprompt_core::scene::{DEFAULT_HEIGHT, DEFAULT_WIDTH};

pub fn gen_config(per_category: usize, views: usize, seed: u64) -> GenConfig {
    GenConfig {
        per_category,
        views,
        seed,
        width: DEFAULT_WIDTH,
        height: DEFAULT_HEIGHT,
    }
}

/// Generates a dataset under `dir/name` and returns its root.
pub fn dataset(dir: &Path, name: &str, per_category: usize) -> PathBuf {
    let root = dir.join(name);
    generate_dataset(&gen_config(per_category, 3, 0), &root, false).expect("dataset");
    root
}

/// Relative paths of every file below `root`, sorted.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
