//! Synthetic datasets on disk.
//!
//! A dataset directory holds, per scene `i`, `scene_{i:05}.pgm`, the
//! jittered annotations `scene_{i:05}.ann.json` and the true centres
//! `scene_{i:05}.gt.json`, plus a `manifest.json` listing every triple.
//! Training code only ever opens the `.ann.json` files.

use std::path::{Path, PathBuf};

use nae_core::rng::{substream, Purpose};
use nae_core::synth::{generate_scene, jitter_annotations, JitterSpec, SceneSpec};
use nae_core::train::Sample;
use nae_core::{ImageGrid, PointSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, ParseError, Result};
use crate::formats::{annotation, pgm, AnnotationFile};

pub const MANIFEST: &str = "manifest.json";

/// One generated scene held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: ImageGrid,
    pub annotations: PointSet,
    pub truth: PointSet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub annotations: String,
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub beta: f64,
    pub width: usize,
    pub height: usize,
    pub scenes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut out = format!(
            "{{\n  \"seed\": {},\n  \"beta\": {},\n  \"width\": {},\n  \"height\": {},\n",
            self.seed,
            serde_json::to_string(&self.beta).expect("beta is finite"),
            self.width,
            self.height
        );
        if self.scenes.is_empty() {
            out.push_str("  \"scenes\": []\n}\n");
            return out;
        }
        out.push_str("  \"scenes\": [\n");
        for (i, e) in self.scenes.iter().enumerate() {
            let sep = if i + 1 < self.scenes.len() { "," } else { "" };
            out.push_str(&format!("    {}{sep}\n", serde_json::to_string(e).unwrap()));
        }
        out.push_str("  ]\n}\n");
        out
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = read_file(&path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ParseError::new(e.line(), e.to_string()).in_file(&path))
    }
}

pub fn scene_stem(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Generates `n` scenes; scene `i` depends only on `(seed, i)`, so any
/// prefix of a larger dataset is identical to a smaller one. Images are
/// quantised to 8 bits exactly as writing them would, so in-memory and
/// on-disk pipelines see the same pixels.
pub fn generate(
    n: usize,
    spec: &SceneSpec,
    jitter: &JitterSpec,
    seed: u64,
) -> Result<Vec<SyntheticScene>> {
    spec.validate()?;
    if spec.count.0 < 2 {
        return Err(nae_core::Error::Config(format!(
            "annotation jitter needs at least 2 objects per scene, count range starts at {}",
            spec.count.0
        ))
        .into());
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let key = [i as u64];
            let scene = generate_scene(spec, &mut substream(seed, Purpose::Scene, &key))?;
            let jittered = jitter_annotations(
                &scene.centers,
                jitter,
                &mut substream(seed, Purpose::Jitter, &key),
            )?;
            Ok(SyntheticScene {
                image: pgm::quantize(&scene.image),
                annotations: jittered.points,
                truth: scene.centers,
            })
        })
        .collect::<Result<Vec<_>, nae_core::Error>>()
        .map_err(Error::from)
}

/// Writes scenes and manifest into `dir`, creating it if needed.
pub fn emit(
    dir: &Path,
    scenes: &[SyntheticScene],
    spec: &SceneSpec,
    jitter: &JitterSpec,
    seed: u64,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let stem = scene_stem(i);
        let entry = ManifestEntry {
            image: format!("{stem}.pgm"),
            annotations: format!("{stem}.ann.json"),
            truth: format!("{stem}.gt.json"),
        };
        pgm::write(&dir.join(&entry.image), &s.image)?;
        for (name, points) in [
            (&entry.annotations, &s.annotations),
            (&entry.truth, &s.truth),
        ] {
            let file = AnnotationFile {
                image: entry.image.clone(),
                points: points.clone(),
            };
            annotation::write(&dir.join(name), &file)?;
        }
        entries.push(entry);
    }
    let manifest = Manifest {
        seed,
        beta: jitter.beta,
        width: spec.width,
        height: spec.height,
        scenes: entries,
    };
    write_file(&dir.join(MANIFEST), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

fn load_pair(dir: &Path, ann_name: &str) -> Result<Sample> {
    let ann_path = dir.join(ann_name);
    let ann = annotation::read(&ann_path)?;
    let image_path = resolve(&ann_path, &ann.image);
    let image = pgm::read(&image_path)?;
    if (image.width(), image.height()) != (ann.points.width(), ann.points.height()) {
        return Err(Error::Parse {
            path: ann_path,
            line: 1,
            message: format!(
                "image_size {}x{} does not match {} ({}x{})",
                ann.points.width(),
                ann.points.height(),
                image_path.display(),
                image.width(),
                image.height()
            ),
        });
    }
    Ok(Sample {
        image,
        points: ann.points,
    })
}

/// Path of `name` relative to the directory holding `anchor`.
pub fn resolve(anchor: &Path, name: &str) -> PathBuf {
    anchor.parent().unwrap_or(Path::new("")).join(name)
}

/// Images paired with their jittered annotations, in manifest order.
pub fn load_training(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = Manifest::read(dir)?;
    manifest
        .scenes
        .iter()
        .map(|e| load_pair(dir, &e.annotations))
        .collect()
}

/// True centres, in manifest order.
pub fn load_truth(dir: &Path) -> Result<Vec<PointSet>> {
    let manifest = Manifest::read(dir)?;
    manifest
        .scenes
        .iter()
        .map(|e| annotation::read(&dir.join(&e.truth)).map(|a| a.points))
        .collect()
}
