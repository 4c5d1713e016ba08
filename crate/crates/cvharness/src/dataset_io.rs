//! Dataset directories: `root/<class>/<file>.ppm|.pgm` plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cvharness_core::dataset::{Dataset, LabeledSample, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::ppm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: Option<SyntheticSpec>,
    pub master_seed: Option<u64>,
    pub stream_key: Option<String>,
    /// Class name → file names in sample order.
    pub classes: BTreeMap<String, Vec<String>>,
}

fn is_image(name: &str) -> bool {
    name.ends_with(".ppm") || name.ends_with(".pgm")
}

/// Loads every class directory under `root` in lexicographic order;
/// samples are ordered by class, then file name.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let entries = fs::read_dir(root).map_err(|e| HarnessError::io(root, e))?;
    let mut classes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(root, e))?;
        if entry.path().is_dir() {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(HarnessError::format(root, "zero classes"));
    }
    let mut samples = Vec::new();
    let mut dims = None;
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        let mut files: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| HarnessError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| is_image(n))
            .collect();
        files.sort();
        for f in files {
            let path = dir.join(&f);
            let image = ppm::load(&path)?;
            let d = (image.height(), image.width(), image.channels());
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(HarnessError::format(
                        &path,
                        format!("mixed dimensions: {d:?}, expected {expected:?}"),
                    ))
                }
                _ => {}
            }
            samples.push(LabeledSample { image, label });
        }
    }
    Ok(Dataset::new(classes, samples)?)
}

/// Writes images as `<class>/<class>_<index>.ppm` and a manifest; returns it.
pub fn write_dataset(
    dataset: &Dataset,
    root: &Path,
    spec: Option<&SyntheticSpec>,
    seed: Option<(u64, &str)>,
) -> Result<Manifest> {
    let mut classes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for name in dataset.class_names() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        classes.insert(name.clone(), Vec::new());
    }
    for s in dataset.samples() {
        let class = &dataset.class_names()[s.label];
        let files = classes.get_mut(class).expect("class directory created above");
        let ext = if s.image.channels() == 3 { "ppm" } else { "pgm" };
        let file = format!("{class}_{:05}.{ext}", files.len());
        ppm::save(&s.image, &root.join(class).join(&file))?;
        files.push(file);
    }
    let manifest = Manifest {
        spec: spec.cloned(),
        master_seed: seed.map(|s| s.0),
        stream_key: seed.map(|s| s.1.to_string()),
        classes,
    };
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(manifest)
}
