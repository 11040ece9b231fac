//! Layered 2-D clutter scenes with exact amodal ground truth.
//!
//! Shapes are composited back-to-front (painter's algorithm) under an
//! orthographic camera looking down at a background plane. Each instance's
//! amodal mask is its full footprint; its visible mask is the footprint minus
//! every nearer footprint.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthImage, RgbImage};
use crate::mask::{BinaryMask, InstanceAnnotation};

pub const BACKGROUND_DEPTH: f64 = 1.0;
pub const BACKGROUND_COLOR: [u8; 3] = [236, 236, 236];
const NEAREST_DEPTH: f64 = 0.5;
const FARTHEST_DEPTH: f64 = 0.95;
const MIN_DEPTH_GAP: f64 = 0.005;
const MIN_FOOTPRINT: usize = 16;
const MAX_ATTEMPTS: usize = 100;
const NOISE_TRUNCATION: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Pixel-aligned rectangle.
    Rectangle { x: usize, y: usize, w: usize, h: usize },
    /// Axis-aligned ellipse; covers pixels whose centers fall inside.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    /// Convex polygon, vertices counter-clockwise in image coordinates.
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub geometry: Geometry,
    pub color: [u8; 3],
    /// Metres from the camera; smaller is nearer.
    pub depth_z: f64,
}

impl ShapeSpec {
    pub fn rectangle(x: usize, y: usize, w: usize, h: usize, color: [u8; 3], depth_z: f64) -> Self {
        ShapeSpec {
            geometry: Geometry::Rectangle { x, y, w, h },
            color,
            depth_z,
        }
    }

    /// Rasterized full extent of the shape.
    pub fn footprint(&self, width: usize, height: usize) -> BinaryMask {
        let center = |r: usize, c: usize| (c as f64 + 0.5, r as f64 + 0.5);
        let mask = match &self.geometry {
            Geometry::Rectangle { x, y, w, h } => {
                BinaryMask::from_fn(width, height, |r, c| c >= *x && c < x + w && r >= *y && r < y + h)
            }
            Geometry::Ellipse { cx, cy, rx, ry } => BinaryMask::from_fn(width, height, |r, c| {
                let (px, py) = center(r, c);
                let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }),
            Geometry::Polygon { vertices } => BinaryMask::from_fn(width, height, |r, c| {
                let p = center(r, c);
                point_in_convex(vertices, p)
            }),
        };
        mask.expect("scene dimensions are positive")
    }
}

fn point_in_convex(vertices: &[[f64; 2]], (px, py): (f64, f64)) -> bool {
    let n = vertices.len();
    (0..n).all(|i| {
        let [ax, ay] = vertices[i];
        let [bx, by] = vertices[(i + 1) % n];
        (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub seed: u64,
    pub depth_noise_sigma: f64,
    /// Inclusive range of shape extents in pixels.
    pub shape_size_range: (usize, usize),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 64,
            height: 64,
            min_objects: 1,
            max_objects: 8,
            seed: 0,
            depth_noise_sigma: 0.002,
            shape_size_range: (10, 28),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config(format!(
                "image must be at least 32x32, got {}x{}",
                self.width, self.height
            )));
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "need 1 <= min_objects <= max_objects, got {}..{}",
                self.min_objects, self.max_objects
            )));
        }
        let (lo, hi) = self.shape_size_range;
        if lo < 5 || lo > hi || hi > self.width.min(self.height) {
            return Err(Error::Config(format!(
                "shape size range {lo}..{hi} must satisfy 5 <= lo <= hi <= image side"
            )));
        }
        if !(self.depth_noise_sigma >= 0.0 && self.depth_noise_sigma.is_finite()) {
            return Err(Error::Config("depth_noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    /// Back-to-front; `annotations[i]` belongs to `shapes[i]`.
    pub shapes: Vec<ShapeSpec>,
    pub background_depth: f64,
    pub depth_noise_sigma: f64,
    pub noise_seed: u64,
    pub annotations: Vec<InstanceAnnotation>,
}

impl Scene {
    /// Renders a scene from explicit shapes. Shapes are stably sorted
    /// back-to-front before compositing.
    pub fn from_shapes(
        width: usize,
        height: usize,
        mut shapes: Vec<ShapeSpec>,
        background_depth: f64,
        depth_noise_sigma: f64,
        noise_seed: u64,
    ) -> Result<Scene> {
        shapes.sort_by(|a, b| b.depth_z.total_cmp(&a.depth_z));
        for pair in shapes.windows(2) {
            if pair[0].depth_z == pair[1].depth_z {
                return Err(Error::Config(format!("duplicate shape depth {}", pair[0].depth_z)));
            }
        }
        let footprints: Vec<BinaryMask> = shapes.iter().map(|s| s.footprint(width, height)).collect();
        let owner = ownership(width, height, &footprints);

        let mut rgb = RgbImage::filled(width, height, BACKGROUND_COLOR);
        let mut depth = DepthImage::filled(width, height, background_depth);
        let mut visible: Vec<BinaryMask> =
            footprints.iter().map(|f| BinaryMask::new(f.width(), f.height()).unwrap()).collect();
        for (i, o) in owner.iter().enumerate() {
            if let Some(k) = *o {
                visible[k].set_index(i, true);
                rgb.put(i / width, i % width, shapes[k].color);
                depth.data[i] = shapes[k].depth_z;
            }
        }
        if depth_noise_sigma > 0.0 {
            add_depth_noise(&mut depth, depth_noise_sigma, noise_seed);
        }
        let annotations = visible
            .into_iter()
            .zip(footprints)
            .map(|(v, a)| InstanceAnnotation::ground_truth(v, a))
            .collect::<Result<Vec<_>>>()?;

        Ok(Scene {
            width,
            height,
            rgb,
            depth,
            shapes,
            background_depth,
            depth_noise_sigma,
            noise_seed,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Deletes one shape and re-renders. Survivors keep their amodal masks;
    /// their visible masks can only grow.
    pub fn remove_instance(&self, index: usize) -> Result<Scene> {
        if index >= self.shapes.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.shapes.len(),
            });
        }
        let mut shapes = self.shapes.clone();
        shapes.remove(index);
        Scene::from_shapes(
            self.width,
            self.height,
            shapes,
            self.background_depth,
            self.depth_noise_sigma,
            self.noise_seed,
        )
    }
}

/// Index of the front-most shape covering each pixel.
fn ownership(width: usize, height: usize, footprints: &[BinaryMask]) -> Vec<Option<usize>> {
    let mut owner = vec![None; width * height];
    // back-to-front: later (nearer) shapes overwrite
    for (k, f) in footprints.iter().enumerate() {
        for (r, c) in f.iter_set() {
            owner[r * width + c] = Some(k);
        }
    }
    owner
}

/// Additive Gaussian noise truncated at six sigma. One draw per pixel in
/// row-major order, so a pixel's noise depends only on the seed.
fn add_depth_noise(depth: &mut DepthImage, sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for d in depth.data.iter_mut() {
        let noise = loop {
            let n: f64 = normal.sample(&mut rng);
            if n.abs() <= NOISE_TRUNCATION * sigma {
                break n;
            }
        };
        *d += noise;
    }
}

fn scene_rng(cfg: &GenConfig, scene_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(scene_index);
    rng
}

/// Deterministic scene for `(cfg.seed, scene_index)`.
pub fn generate_scene(cfg: &GenConfig, scene_index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg, scene_index);
    let noise_seed = rng.next_u64();
    let target = rng.random_range(cfg.min_objects..=cfg.max_objects);

    let mut shapes: Vec<ShapeSpec> = Vec::with_capacity(target);
    while shapes.len() < target {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let Some(candidate) = sample_shape(cfg, &shapes, &mut rng) else {
                continue;
            };
            let mut trial = shapes.clone();
            trial.push(candidate);
            if all_visible(cfg.width, cfg.height, &trial) {
                shapes = trial;
                placed = true;
                break;
            }
        }
        if !placed {
            log::debug!(
                "scene {scene_index}: stopping at {} of {target} objects after {MAX_ATTEMPTS} attempts",
                shapes.len()
            );
            break;
        }
    }
    if shapes.is_empty() {
        // A lone shape is always visible; this only trips on a broken sampler.
        return Err(Error::Config("could not place any shape".into()));
    }
    Scene::from_shapes(
        cfg.width,
        cfg.height,
        shapes,
        BACKGROUND_DEPTH,
        cfg.depth_noise_sigma,
        noise_seed,
    )
}

fn all_visible(width: usize, height: usize, shapes: &[ShapeSpec]) -> bool {
    let mut sorted: Vec<&ShapeSpec> = shapes.iter().collect();
    sorted.sort_by(|a, b| b.depth_z.total_cmp(&a.depth_z));
    let footprints: Vec<BinaryMask> = sorted.iter().map(|s| s.footprint(width, height)).collect();
    let owner = ownership(width, height, &footprints);
    let mut seen = vec![false; footprints.len()];
    for k in owner.into_iter().flatten() {
        seen[k] = true;
    }
    seen.into_iter().all(|s| s)
}

/// One candidate shape, or `None` if its footprint is too small, not a
/// single 4-connected piece, or its depth collides with an existing shape.
fn sample_shape(cfg: &GenConfig, existing: &[ShapeSpec], rng: &mut ChaCha8Rng) -> Option<ShapeSpec> {
    let (lo, hi) = cfg.shape_size_range;
    let (w, h) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
    let geometry = match rng.random_range(0..3u8) {
        0 => Geometry::Rectangle {
            x: rng.random_range(0..=cfg.width - w),
            y: rng.random_range(0..=cfg.height - h),
            w,
            h,
        },
        1 => {
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            Geometry::Ellipse {
                cx: rx + rng.random_range(0..=cfg.width - w) as f64,
                cy: ry + rng.random_range(0..=cfg.height - h) as f64,
                rx,
                ry,
            }
        }
        _ => {
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            let cx = rx + rng.random_range(0..=cfg.width - w) as f64;
            let cy = ry + rng.random_range(0..=cfg.height - h) as f64;
            let n = rng.random_range(3..=7);
            let points: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    let rho = rng.random_range(0.55..=1.0);
                    [cx + rho * rx * theta.cos(), cy + rho * ry * theta.sin()]
                })
                .collect();
            let hull = convex_hull(points);
            if hull.len() < 3 {
                return None;
            }
            Geometry::Polygon { vertices: hull }
        }
    };
    let depth_z = rng.random_range(NEAREST_DEPTH..FARTHEST_DEPTH);
    if existing.iter().any(|s| (s.depth_z - depth_z).abs() < MIN_DEPTH_GAP) {
        return None;
    }
    let color = [
        rng.random_range(30..=225),
        rng.random_range(30..=225),
        rng.random_range(30..=225),
    ];
    let shape = ShapeSpec { geometry, color, depth_z };
    let fp = shape.footprint(cfg.width, cfg.height);
    (fp.count() >= MIN_FOOTPRINT && component_count(&fp) == 1).then_some(shape)
}

/// Andrew's monotone chain; counter-clockwise in a y-down frame is the
/// orientation `point_in_convex` expects.
pub(crate) fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Number of 4-connected components.
pub fn component_count(m: &BinaryMask) -> usize {
    crate::segment::connected_components(m, |_, _| true).len()
}
