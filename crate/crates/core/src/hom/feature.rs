//! Oracle RoI features: the RGB-D crop under a box, area-resampled to the
//! small and large grids and lifted from 4 raw channels to Q.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Map;
use super::HeadConfig;
use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};
use crate::scene::Scene;

/// R, G, B and normalised depth.
pub const RAW_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RoiTargets {
    /// Visible mask on the large grid (14×14 by default).
    pub visible: BinaryMask,
    /// Amodal mask on the large grid.
    pub amodal: BinaryMask,
    pub occluded: bool,
    pub class_fg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeature {
    /// Q × r × r.
    pub small: Map,
    /// Q × 2r × 2r.
    pub large: Map,
    pub targets: RoiTargets,
}

/// A feature tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub scene_id: u64,
    pub bbox: BBox,
    pub feature: RoiFeature,
}

/// Lift weight from raw channel `c` to feature channel `q`:
/// `cos(pi * (2q + 1) * c / (2Q))`. Rows of a DCT-II basis, so the lift has
/// full rank 4 whenever Q >= 4.
fn lift_weight(q: usize, c: usize, big_q: usize) -> f64 {
    (PI * (2 * q + 1) as f64 * c as f64 / (2 * big_q) as f64).cos()
}

/// For each of `n` output cells over `[start, start + len)`, the covered
/// pixels with their overlap lengths.
fn cell_weights(start: usize, len: usize, n: usize) -> Vec<Vec<(usize, f64)>> {
    let step = len as f64 / n as f64;
    (0..n)
        .map(|i| {
            let lo = i as f64 * step;
            let hi = (i + 1) as f64 * step;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(len);
            (first..last)
                .filter_map(|p| {
                    let ov = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
                    (ov > 0.0).then_some((start + p, ov))
                })
                .collect()
        })
        .collect()
}

/// Area-average of `value(row, col)` over each cell of an n×n grid laid on `b`.
fn area_resample(b: BBox, n: usize, mut value: impl FnMut(usize, usize) -> f64) -> Vec<f64> {
    let rows = cell_weights(b.y, b.h, n);
    let cols = cell_weights(b.x, b.w, n);
    let mut out = Vec::with_capacity(n * n);
    for rw in &rows {
        for cw in &cols {
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(r, wr) in rw {
                for &(c, wc) in cw {
                    acc += wr * wc * value(r, c);
                    area += wr * wc;
                }
            }
            out.push(acc / area);
        }
    }
    out
}

fn lifted(raw: &[Vec<f64>; RAW_CHANNELS], n: usize, q: usize) -> Map {
    let mut m = Map::zeros(q, n, n);
    for qi in 0..q {
        let plane = &mut m.data[qi * n * n..(qi + 1) * n * n];
        for (c, src) in raw.iter().enumerate() {
            let w = lift_weight(qi, c, q);
            for (d, s) in plane.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    m
}

fn raw_channels(s: &Scene, b: BBox, n: usize) -> [Vec<f64>; RAW_CHANNELS] {
    let bg = s.background_depth;
    [
        area_resample(b, n, |r, c| s.rgb.get(r, c)[0] as f64 / 255.0 - 0.5),
        area_resample(b, n, |r, c| s.rgb.get(r, c)[1] as f64 / 255.0 - 0.5),
        area_resample(b, n, |r, c| s.rgb.get(r, c)[2] as f64 / 255.0 - 0.5),
        area_resample(b, n, |r, c| 2.0 * (bg - s.depth.get(r, c)) / bg),
    ]
}

/// Majority pooling: a cell is set when at least half its area is set.
fn pool_mask(m: &BinaryMask, b: BBox, n: usize) -> BinaryMask {
    let frac = area_resample(b, n, |r, c| if m.get(r, c) { 1.0 } else { 0.0 });
    let bits: Vec<bool> = frac.iter().map(|&f| f >= 0.5 - 1e-12).collect();
    BinaryMask::from_bools(n, n, &bits).expect("grid is non-empty")
}

/// Builds the RoI feature for `bbox`. Targets come from the annotation whose
/// box equals `bbox`; with no such annotation the RoI is background.
pub fn extract_roi_feature(s: &Scene, bbox: BBox, cfg: &HeadConfig) -> Result<RoiFeature> {
    cfg.validate()?;
    if bbox.w < 2 || bbox.h < 2 {
        return Err(Error::DegenerateBox { w: bbox.w, h: bbox.h });
    }
    if !bbox.fits_in(s.width, s.height) {
        return Err(Error::Shape(format!(
            "box {:?} exceeds the {}x{} image",
            bbox, s.width, s.height
        )));
    }
    let q = cfg.channels;
    let (ns, nl) = (cfg.roi_size, cfg.large_size());
    let small = lifted(&raw_channels(s, bbox, ns), ns, q);
    let large = lifted(&raw_channels(s, bbox, nl), nl, q);

    let targets = match s.annotations.iter().find(|a| a.bbox == bbox) {
        Some(a) => {
            let amodal = pool_mask(&a.amodal, bbox, nl);
            // pooling each mask separately can break visible ⊆ amodal on
            // exact ties; clip to keep the invariant
            let visible = pool_mask(&a.visible, bbox, nl).and(&amodal)?;
            RoiTargets {
                visible,
                amodal,
                occluded: a.occluded,
                class_fg: true,
            }
        }
        None => {
            let empty = BinaryMask::new(nl, nl)?;
            RoiTargets {
                visible: empty.clone(),
                amodal: empty,
                occluded: false,
                class_fg: false,
            }
        }
    };
    Ok(RoiFeature { small, large, targets })
}

/// One RoI per ground-truth instance, plus up to `negatives` background boxes
/// per scene (random boxes at most a quarter covered by any object).
pub fn roi_dataset(scenes: &[(u64, Scene)], cfg: &HeadConfig, negatives: usize, seed: u64) -> Result<Vec<RoiSample>> {
    let mut out = Vec::new();
    for (id, s) in scenes {
        for a in &s.annotations {
            if a.bbox.w < 2 || a.bbox.h < 2 {
                continue;
            }
            out.push(RoiSample {
                scene_id: *id,
                bbox: a.bbox,
                feature: extract_roi_feature(s, a.bbox, cfg)?,
            });
        }
        if negatives == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(*id);
        let mut occupied = BinaryMask::new(s.width, s.height)?;
        for a in &s.annotations {
            occupied = occupied.or(&a.amodal)?;
        }
        let side_hi = (s.width.min(s.height) / 3).max(4);
        let mut found = 0;
        for _ in 0..20 * negatives {
            if found == negatives {
                break;
            }
            let w = rng.random_range(4..=side_hi);
            let h = rng.random_range(4..=side_hi);
            let b = BBox::new(rng.random_range(0..=s.width - w), rng.random_range(0..=s.height - h), w, h);
            if s.annotations.iter().any(|a| a.bbox == b) {
                continue;
            }
            let covered = BinaryMask::rect(s.width, s.height, b)?.intersection_count(&occupied)?;
            if 4 * covered > b.area() {
                continue;
            }
            out.push(RoiSample {
                scene_id: *id,
                bbox: b,
                feature: extract_roi_feature(s, b, cfg)?,
            });
            found += 1;
        }
    }
    Ok(out)
}
