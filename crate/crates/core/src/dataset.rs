//! On-disk datasets and prediction files.
//!
//! A dataset directory holds `scene_NNNNN_rgb.ppm`, `scene_NNNNN_depth.pgm`
//! and `manifest.jsonl` with one JSON object per scene. Besides the instance
//! annotations, each record stores the shape stack and noise parameters, so
//! loading re-renders every scene exactly and cross-checks it against the
//! stored masks and images. Keys are written in sorted order.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthImage, RgbImage};
use crate::mask::{BBox, BinaryMask, InstanceAnnotation, RunLength};
use crate::metrics::GtScene;
use crate::scene::{generate_scene, GenConfig, Scene, ShapeSpec};
use crate::segment::PredictionSet;

pub const MANIFEST: &str = "manifest.jsonl";

/// One instance as stored in manifests and prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub bbox: BBox,
    pub visible_rle: RunLength,
    pub amodal_rle: RunLength,
    pub occluded: bool,
    pub area_visible: usize,
    pub area_amodal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl InstanceRecord {
    pub fn from_annotation(a: &InstanceAnnotation, score: Option<f64>) -> Self {
        InstanceRecord {
            bbox: a.bbox,
            visible_rle: a.visible.to_rle(),
            amodal_rle: a.amodal.to_rle(),
            occluded: a.occluded,
            area_visible: a.visible.count(),
            area_amodal: a.amodal.count(),
            score,
        }
    }

    pub fn to_annotation(&self, width: usize, height: usize) -> Result<InstanceAnnotation> {
        let visible = BinaryMask::from_rle(width, height, &self.visible_rle)?;
        let amodal = BinaryMask::from_rle(width, height, &self.amodal_rle)?;
        if visible.count() != self.area_visible || amodal.count() != self.area_amodal {
            return Err(Error::InvalidMask(format!(
                "stored areas {}/{} disagree with masks {}/{}",
                self.area_visible,
                self.area_amodal,
                visible.count(),
                amodal.count()
            )));
        }
        if !self.bbox.fits_in(width, height) {
            return Err(Error::InvalidMask(format!("box {:?} leaves the {width}x{height} image", self.bbox)));
        }
        let a = InstanceAnnotation {
            bbox: self.bbox,
            visible,
            amodal,
            occluded: self.occluded,
            class_fg: true,
        };
        a.validate()?;
        Ok(a)
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub width: usize,
    pub height: usize,
    pub rgb_path: String,
    pub depth_path: String,
    pub instances: Vec<InstanceRecord>,
    pub background_depth: f64,
    pub depth_noise_sigma: f64,
    pub noise_seed: u64,
    pub shapes: Vec<ShapeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub scenes: usize,
    pub instances: usize,
    pub occluded: usize,
    pub image_files: usize,
}

/// A loaded dataset, ordered by scene id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub scenes: BTreeMap<u64, Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn ground_truth(&self) -> BTreeMap<u64, GtScene<'_>> {
        self.scenes
            .iter()
            .map(|(&id, s)| {
                (
                    id,
                    GtScene {
                        width: s.width,
                        height: s.height,
                        instances: &s.annotations,
                    },
                )
            })
            .collect()
    }
}

fn rgb_name(id: u64) -> String {
    format!("scene_{id:05}_rgb.ppm")
}

fn depth_name(id: u64) -> String {
    format!("scene_{id:05}_depth.pgm")
}

/// Serialises through `serde_json::Value`, whose maps keep keys sorted.
fn sorted_json_line<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::to_value(v)?)?)
}

fn record_for(id: u64, s: &Scene) -> SceneRecord {
    SceneRecord {
        scene_id: id,
        width: s.width,
        height: s.height,
        rgb_path: rgb_name(id),
        depth_path: depth_name(id),
        instances: s.annotations.iter().map(|a| InstanceRecord::from_annotation(a, None)).collect(),
        background_depth: s.background_depth,
        depth_noise_sigma: s.depth_noise_sigma,
        noise_seed: s.noise_seed,
        shapes: s.shapes.clone(),
    }
}

/// Writes the given scenes (images plus manifest) into `out_dir`.
pub fn write_scenes(out_dir: &Path, scenes: &[(u64, Scene)]) -> Result<ManifestSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut ids: Vec<u64> = scenes.iter().map(|(id, _)| *id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate scene id".into()));
    }
    scenes.par_iter().try_for_each(|(id, s)| -> Result<()> {
        s.rgb.write_ppm(&out_dir.join(rgb_name(*id)))?;
        s.depth.write_pgm(&out_dir.join(depth_name(*id)))
    })?;
    let path = out_dir.join(MANIFEST);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut ordered: Vec<&(u64, Scene)> = scenes.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    for (id, s) in ordered {
        writeln!(w, "{}", sorted_json_line(&record_for(*id, s))?).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(ManifestSummary {
        scenes: scenes.len(),
        instances: scenes.iter().map(|(_, s)| s.annotations.len()).sum(),
        occluded: scenes.iter().flat_map(|(_, s)| &s.annotations).filter(|a| a.occluded).count(),
        image_files: 2 * scenes.len(),
    })
}

/// Generates scenes `0..n_scenes` and writes them to `out_dir`.
pub fn write_dataset(cfg: &GenConfig, n_scenes: usize, out_dir: &Path) -> Result<ManifestSummary> {
    cfg.validate()?;
    let scenes = (0..n_scenes as u64)
        .into_par_iter()
        .map(|i| generate_scene(cfg, i).map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    write_scenes(out_dir, &scenes)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn rebuild(dir: &Path, manifest: &Path, line: usize, rec: SceneRecord) -> Result<(u64, Scene)> {
    let at = |msg: String| Error::format(manifest, format!("line {line} (scene {}): {msg}", rec.scene_id));
    let scene = Scene::from_shapes(
        rec.width,
        rec.height,
        rec.shapes.clone(),
        rec.background_depth,
        rec.depth_noise_sigma,
        rec.noise_seed,
    )
    .map_err(|e| at(e.to_string()))?;
    if rec.instances.len() != scene.annotations.len() {
        return Err(at(format!(
            "{} instances stored, {} shapes",
            rec.instances.len(),
            scene.annotations.len()
        )));
    }
    for (k, (r, a)) in rec.instances.iter().zip(&scene.annotations).enumerate() {
        let stored = r.to_annotation(rec.width, rec.height).map_err(|e| at(format!("instance {k}: {e}")))?;
        if &stored != a {
            return Err(at(format!("instance {k} does not match its re-rendered shape")));
        }
    }
    let rgb = RgbImage::read_ppm(&dir.join(&rec.rgb_path))?;
    if rgb != scene.rgb {
        return Err(at(format!("{} differs from the re-rendered scene", rec.rgb_path)));
    }
    let depth = DepthImage::read_pgm(&dir.join(&rec.depth_path))?;
    let same_depth = depth.width == scene.width
        && depth.height == scene.height
        && depth
            .data
            .iter()
            .zip(&scene.depth.data)
            .all(|(&d, &s)| DepthImage::quantize(d) == DepthImage::quantize(s));
    if !same_depth {
        return Err(at(format!("{} differs from the re-rendered scene", rec.depth_path)));
    }
    Ok((rec.scene_id, scene))
}

/// Reads `dir/manifest.jsonl`, re-renders every scene and checks it against
/// the stored annotations and image files.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST);
    let mut records = Vec::new();
    for (line, text) in read_lines(&manifest)? {
        let rec: SceneRecord =
            serde_json::from_str(&text).map_err(|e| Error::format(&manifest, format!("line {line}: {e}")))?;
        records.push((line, rec));
    }
    let scenes = records
        .into_par_iter()
        .map(|(line, rec)| rebuild(dir, &manifest, line, rec))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for (id, s) in scenes {
        if out.insert(id, s).is_some() {
            return Err(Error::format(&manifest, format!("scene {id} listed twice")));
        }
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        scenes: out,
    })
}

/// Predictions for one scene, as stored in a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene_id: u64,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<InstanceRecord>,
}

impl PredictionRecord {
    pub fn new(scene_id: u64, width: usize, height: usize, p: &PredictionSet) -> Self {
        PredictionRecord {
            scene_id,
            width,
            height,
            instances: p
                .instances
                .iter()
                .zip(&p.scores)
                .map(|(a, &s)| InstanceRecord::from_annotation(a, Some(s)))
                .collect(),
        }
    }

    pub fn to_set(&self) -> Result<PredictionSet> {
        let mut instances = Vec::with_capacity(self.instances.len());
        let mut scores = Vec::with_capacity(self.instances.len());
        for r in &self.instances {
            instances.push(r.to_annotation(self.width, self.height)?);
            scores.push(r.score.unwrap_or(1.0));
        }
        PredictionSet::new(instances, scores)
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut ordered: Vec<&PredictionRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.scene_id);
    for r in ordered {
        writeln!(w, "{}", sorted_json_line(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<u64, PredictionSet>> {
    let mut out = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let at = |msg: String| Error::format(path, format!("line {line}: {msg}"));
        let rec: PredictionRecord = serde_json::from_str(&text).map_err(|e| at(e.to_string()))?;
        let set = rec.to_set().map_err(|e| at(e.to_string()))?;
        if out.insert(rec.scene_id, set).is_some() {
            return Err(at(format!("scene {} listed twice", rec.scene_id)));
        }
    }
    Ok(out)
}
