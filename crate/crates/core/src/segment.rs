//! Non-learned reference predictors.
//!
//! - [`oracle_segmenter`]: ground truth verbatim.
//! - [`degraded_oracle`]: ground truth with controlled drop/merge/split/erode errors.
//! - [`depth_layer_segmenter`]: depth-discontinuity components with heuristic
//!   amodal completion and the visible/amodal ratio occlusion rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceAnnotation};
use crate::scene::{convex_hull, Scene};

/// Predicted occlusion iff `visible / amodal` falls strictly below this.
pub const OCCLUSION_RATIO: f64 = 0.95;

/// Ratio rule for predictors without an occlusion head: occluded iff
/// `visible_area / amodal_area < 0.95`. Evaluated in integers
/// (`20 * v < 19 * a`) so the boundary is exact.
pub fn occluded_by_ratio(visible_area: usize, amodal_area: usize) -> bool {
    if amodal_area == 0 {
        return false;
    }
    20 * visible_area < 19 * amodal_area
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub instances: Vec<InstanceAnnotation>,
    pub scores: Vec<f64>,
}

impl PredictionSet {
    pub fn new(instances: Vec<InstanceAnnotation>, scores: Vec<f64>) -> Result<Self> {
        if instances.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} instances but {} scores",
                instances.len(),
                scores.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Config(format!("score {s} outside [0, 1]")));
        }
        for inst in &instances {
            inst.validate()?;
        }
        Ok(Self { instances, scores })
    }

    fn with_unit_scores(instances: Vec<InstanceAnnotation>) -> Self {
        let scores = vec![1.0; instances.len()];
        Self { instances, scores }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub erode_radius: usize,
    pub drop_prob: f64,
    pub merge_prob: f64,
    pub split_prob: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            erode_radius: 0,
            drop_prob: 0.0,
            merge_prob: 0.0,
            split_prob: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("merge_prob", self.merge_prob),
            ("split_prob", self.split_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn oracle_segmenter(s: &Scene) -> PredictionSet {
    PredictionSet::with_unit_scores(s.annotations.clone())
}

/// Ground truth corrupted by, in order: drops, pairwise merges of
/// neighbours in list order, bisection along the longer box axis, and
/// Chebyshev erosion of both masks.
pub fn degraded_oracle(s: &Scene, c: &CorruptionConfig) -> Result<PredictionSet> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    rng.set_stream(s.noise_seed);

    let mut kept: Vec<InstanceAnnotation> = Vec::with_capacity(s.len());
    for a in &s.annotations {
        if rng.random::<f64>() >= c.drop_prob {
            kept.push(a.clone());
        }
    }

    let mut merged = Vec::with_capacity(kept.len());
    let mut it = kept.into_iter().peekable();
    while let Some(a) = it.next() {
        let draw: f64 = rng.random();
        match it.peek() {
            Some(_) if draw < c.merge_prob => {
                let b = it.next().unwrap();
                merged.push(InstanceAnnotation {
                    bbox: a.bbox.hull(&b.bbox),
                    visible: a.visible.or(&b.visible)?,
                    amodal: a.amodal.or(&b.amodal)?,
                    occluded: a.occluded || b.occluded,
                    class_fg: true,
                });
            }
            _ => merged.push(a),
        }
    }

    let mut split = Vec::with_capacity(merged.len());
    for a in merged {
        if rng.random::<f64>() < c.split_prob {
            if let Some((left, right)) = bisect(&a) {
                split.push(left);
                split.push(right);
                continue;
            }
        }
        split.push(a);
    }

    let mut out = Vec::with_capacity(split.len());
    for a in split {
        let visible = a.visible.erode(c.erode_radius);
        let amodal = a.amodal.erode(c.erode_radius).or(&visible)?;
        let Some(bbox) = amodal.bbox() else { continue };
        out.push(InstanceAnnotation {
            bbox,
            visible,
            amodal,
            occluded: a.occluded,
            class_fg: true,
        });
    }
    Ok(PredictionSet::with_unit_scores(out))
}

/// Cuts an instance at the midpoint of its longer box side. `None` when
/// either half would have an empty visible mask.
fn bisect(a: &InstanceAnnotation) -> Option<(InstanceAnnotation, InstanceAnnotation)> {
    let vertical = a.bbox.w >= a.bbox.h;
    let at = if vertical { a.bbox.x + a.bbox.w / 2 } else { a.bbox.y + a.bbox.h / 2 };
    let (v1, v2) = a.visible.split_at(at, vertical);
    let (a1, a2) = a.amodal.split_at(at, vertical);
    if v1.is_empty() || v2.is_empty() {
        return None;
    }
    let part = |visible: BinaryMask, amodal: BinaryMask| InstanceAnnotation {
        bbox: amodal.bbox().expect("amodal contains nonempty visible"),
        visible,
        amodal,
        occluded: a.occluded,
        class_fg: true,
    };
    Some((part(v1, a1), part(v2, a2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    ConvexHull,
    BoxFill,
    None,
}

/// Infers an amodal mask from a visible one. Every method returns a
/// superset of `visible`.
pub fn amodal_completion(visible: &BinaryMask, method: Completion) -> Result<BinaryMask> {
    let bbox = visible.bbox().ok_or(Error::EmptyMask)?;
    let (w, h) = (visible.width(), visible.height());
    match method {
        Completion::None => Ok(visible.clone()),
        Completion::BoxFill => BinaryMask::rect(w, h, bbox),
        Completion::ConvexHull => {
            let centers: Vec<[f64; 2]> = visible
                .iter_set()
                .map(|(r, c)| [c as f64 + 0.5, r as f64 + 0.5])
                .collect();
            let hull = convex_hull(centers);
            let filled = if hull.len() < 3 {
                // collinear centers: the segment between the extreme points
                let (a, b) = (hull[0], *hull.last().unwrap());
                BinaryMask::from_fn(w, h, |r, c| {
                    let p = [c as f64 + 0.5, r as f64 + 0.5];
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    bbox.contains_pixel(r, c) && cross.abs() < 1e-9
                })?
            } else {
                BinaryMask::from_fn(w, h, |r, c| {
                    if !bbox.contains_pixel(r, c) {
                        return false;
                    }
                    let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                    (0..hull.len()).all(|i| {
                        let [ax, ay] = hull[i];
                        let [bx, by] = hull[(i + 1) % hull.len()];
                        (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= -1e-9
                    })
                })?
            };
            filled.or(visible)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthSegmenterConfig {
    /// Neighbouring pixels whose depths differ by this much or more are cut apart.
    pub tau_d: f64,
    /// Components smaller than this are discarded as speckle.
    pub min_area: usize,
    pub completion: Completion,
}

impl Default for DepthSegmenterConfig {
    fn default() -> Self {
        Self {
            tau_d: 0.05,
            min_area: 8,
            completion: Completion::ConvexHull,
        }
    }
}

/// Background removal by a 3-sigma depth band, then 4-connected components
/// that never cross a depth step of `tau_d` or more.
pub fn depth_layer_segmenter(s: &Scene, cfg: &DepthSegmenterConfig) -> Result<PredictionSet> {
    let band = 3.0 * s.depth_noise_sigma;
    let depth = &s.depth;
    let fg = BinaryMask::from_fn(s.width, s.height, |r, c| {
        (depth.get(r, c) - s.background_depth).abs() > band
    })?;
    let components = connected_components(&fg, |i, j| (depth.data[i] - depth.data[j]).abs() < cfg.tau_d);

    let mut instances = Vec::new();
    for visible in components.into_iter().filter(|m| m.count() >= cfg.min_area) {
        let amodal = amodal_completion(&visible, cfg.completion)?;
        let occluded = occluded_by_ratio(visible.count(), amodal.count());
        instances.push(InstanceAnnotation {
            bbox: amodal.bbox().expect("nonempty"),
            visible,
            amodal,
            occluded,
            class_fg: true,
        });
    }
    Ok(PredictionSet::with_unit_scores(instances))
}

/// 4-connected components of `m`, where two neighbouring set pixels (given
/// by flat index) are joined only if `join` agrees. Components are ordered by
/// their first pixel in row-major order.
pub fn connected_components(m: &BinaryMask, join: impl Fn(usize, usize) -> bool) -> Vec<BinaryMask> {
    let (w, h) = (m.width(), m.height());
    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !m.get_index(start) || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = BinaryMask::new(w, h).expect("dims valid");
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.set_index(i, true);
            let (r, c) = (i / w, i % w);
            let neighbours = [
                (r > 0).then(|| i - w),
                (r + 1 < h).then(|| i + w),
                (c > 0).then(|| i - 1),
                (c + 1 < w).then(|| i + 1),
            ];
            for j in neighbours.into_iter().flatten() {
                if m.get_index(j) && label[j] == usize::MAX && join(i, j) {
                    label[j] = id;
                    stack.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}
