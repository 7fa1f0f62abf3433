//! Dataset directory ingestion.
//!
//! The on-disk layout is `<root>/<class_name>/<object>.{obj,xyz}`; class ids
//! follow sorted class-name order. OBJ meshes are resampled to the point
//! budget on the fly; XYZ clouds must already match it (oversized clouds
//! are shuffle-truncated, undersized ones are an error since there is no
//! surface to sample from).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{
    downsample_shuffle, load_mesh, load_xyz, normalize_unit_sphere, resample_to_budget, save_xyz,
    PointCloud,
};

/// Sorted class-directory names under `root`.
pub fn list_classes(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    let mut classes = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                classes.push(name.to_string());
            }
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Dataset(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    Ok(classes)
}

struct Job {
    path: PathBuf,
    class: String,
    rel: String,
    label: usize,
}

fn walk(root: &Path) -> Result<(Vec<Job>, Vec<String>)> {
    let classes = list_classes(root)?;
    let mut jobs = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let class_dir = root.join(class);
        let mut files = Vec::new();
        let entries = fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&class_dir, e))?;
            let path = entry.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("obj") | Some("xyz")) {
                files.push(path);
            }
        }
        files.sort();
        for path in files {
            let rel = format!("{class}/{}", path.file_name().unwrap().to_string_lossy());
            jobs.push(Job {
                path,
                class: class.clone(),
                rel,
                label,
            });
        }
    }
    if jobs.is_empty() {
        return Err(Error::Dataset(format!(
            "no .obj or .xyz objects under {}",
            root.display()
        )));
    }
    Ok((jobs, classes))
}

/// FNV-1a over the relative path, mixed with the base seed, so each file
/// gets a reproducible stream independent of its siblings.
fn file_seed(base: u64, rel: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in rel.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base
}

fn load_object(path: &Path, points: usize, seed: u64) -> Result<PointCloud> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("obj") => {
            let mesh = load_mesh(path)?;
            resample_to_budget(&mesh, points, seed)
        }
        Some("xyz") => {
            let cloud = load_xyz(path)?;
            match cloud.len().cmp(&points) {
                std::cmp::Ordering::Equal => Ok(cloud),
                std::cmp::Ordering::Greater => downsample_shuffle(&cloud, points, seed),
                std::cmp::Ordering::Less => Err(Error::NotEnoughPoints {
                    current: cloud.len(),
                    budget: points,
                }),
            }
        }
        _ => Err(Error::Dataset(format!(
            "unsupported object file {}",
            path.display()
        ))),
    }
}

/// Loads every object under the class-directory layout, resampled to
/// `points` and labeled by class-directory order. Returns the clouds and
/// the sorted class names.
pub fn load_dataset(
    root: impl AsRef<Path>,
    points: usize,
    seed: u64,
    normalize: bool,
) -> Result<(Vec<PointCloud>, Vec<String>)> {
    let (jobs, classes) = walk(root.as_ref())?;
    let clouds: Vec<PointCloud> = jobs
        .par_iter()
        .map(|job| {
            let mut cloud = load_object(&job.path, points, file_seed(seed, &job.rel))?;
            if normalize {
                cloud = normalize_unit_sphere(&cloud);
            }
            cloud.label = Some(job.label);
            Ok(cloud)
        })
        .collect::<Result<_>>()?;
    Ok((clouds, classes))
}

/// Resamples every object under `input` and writes labeled XYZ clouds to
/// the mirrored class layout under `output`. Returns the number of files
/// written.
pub fn preprocess_dir(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    points: usize,
    seed: u64,
    normalize: bool,
) -> Result<usize> {
    let (jobs, _classes) = walk(input.as_ref())?;
    let output = output.as_ref();
    jobs.par_iter()
        .map(|job| {
            let mut cloud = load_object(&job.path, points, file_seed(seed, &job.rel))?;
            if normalize {
                cloud = normalize_unit_sphere(&cloud);
            }
            cloud.label = Some(job.label);
            let class_dir = output.join(&job.class);
            fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
            let stem = job.path.file_stem().unwrap().to_string_lossy();
            save_xyz(&cloud, class_dir.join(format!("{stem}.xyz")))?;
            Ok(1usize)
        })
        .collect::<Result<Vec<usize>>>()
        .map(|v| v.into_iter().sum())
}
