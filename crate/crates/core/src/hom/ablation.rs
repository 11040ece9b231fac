//! Hierarchy-order and feature-fusion ablations over oracle RoIs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::feature::{RoiFeature, RoiSample};
use super::layers::Map;
use super::model::forward;
use super::params::HeadParams;
use super::train::train;
use super::{HeadConfig, Hierarchy};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::{mask_f_measure, F_AT_75_THRESHOLD};

/// Validation scores in percent, in the column order of the ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadScores {
    pub amodal_ov: f64,
    pub amodal_f75: f64,
    pub invisible_ov: f64,
    pub invisible_f75: f64,
    pub acc_o: f64,
    pub visible_ov: f64,
    pub visible_f75: f64,
}

impl HeadScores {
    pub const COLUMNS: [&'static str; 7] = [
        "amodal_ov",
        "amodal_f75",
        "invisible_ov",
        "invisible_f75",
        "acc_o",
        "visible_ov",
        "visible_f75",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.amodal_ov,
            self.amodal_f75,
            self.invisible_ov,
            self.invisible_f75,
            self.acc_o,
            self.visible_ov,
            self.visible_f75,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        HeadScores {
            amodal_ov: a[0],
            amodal_f75: a[1],
            invisible_ov: a[2],
            invisible_f75: a[3],
            acc_o: a[4],
            visible_ov: a[5],
            visible_f75: a[6],
        }
    }
}

fn logits_mask(m: &Map) -> BinaryMask {
    let bits: Vec<bool> = m.data.iter().map(|&z| z > 0.0).collect();
    BinaryMask::from_bools(m.w, m.h, &bits).expect("non-empty logits")
}

fn upsample(m: &BinaryMask, side: usize) -> BinaryMask {
    let s = side / m.width();
    BinaryMask::from_fn(side, side, |r, c| m.get(r / s, c / s)).expect("non-empty")
}

/// Scores a head on foreground RoIs at mask-logit resolution. Per-RoI pixel
/// F is averaged for OV; F@.75 is the share of RoIs with F above 0.75.
pub fn evaluate_head(p: &HeadParams, val: &[RoiFeature], cfg: &HeadConfig) -> Result<HeadScores> {
    let mut sums = [0.0f64; 7];
    let mut n = 0usize;
    for f in val.iter().filter(|f| f.targets.class_fg) {
        let out = forward(p, f, cfg)?;
        let side = out.visible_logits.w;
        let pv = logits_mask(&out.visible_logits);
        let pa = logits_mask(&out.amodal_logits);
        let pi = pa.and_not(&pv)?;
        let tv = upsample(&f.targets.visible, side);
        let ta = upsample(&f.targets.amodal, side);
        let ti = ta.and_not(&tv)?;
        let fa = mask_f_measure(&pa, &ta)?;
        let fi = mask_f_measure(&pi, &ti)?;
        let fv = mask_f_measure(&pv, &tv)?;
        let hit = |x: f64| if x > F_AT_75_THRESHOLD { 1.0 } else { 0.0 };
        let occ_ok = (out.occlusion_logit > 0.0) == f.targets.occluded;
        let row = [fa, hit(fa), fi, hit(fi), if occ_ok { 1.0 } else { 0.0 }, fv, hit(fv)];
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Config("validation set has no foreground RoIs".into()));
    }
    Ok(HeadScores::from_array(sums.map(|s| 100.0 * s / n as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub hierarchy: Hierarchy,
    pub fuse_box: bool,
    pub fuse_prior: bool,
    pub per_seed: Vec<HeadScores>,
    /// Overall score per seed: mean over columns of the min-max normalised
    /// value across all rows trained with that seed.
    pub overall_per_seed: Vec<f64>,
    pub mean: HeadScores,
    pub std: HeadScores,
    pub overall_mean: f64,
    pub overall_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub train_rois: usize,
    pub val_rois: usize,
    pub base: HeadConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table of the per-row means.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "config", "overall", "A-OV", "A-F.75", "IV-OV", "IV-F.75", "ACC_O", "V-OV", "V-F.75"
        );
        for r in &self.rows {
            s.push_str(&format!("{:<12} {:>8.3}", r.label, r.overall_mean));
            for v in r.mean.to_array() {
                s.push_str(&format!(" {v:>8.2}"));
            }
            s.push('\n');
        }
        s
    }
}

/// 80/20 split by scene: scenes with `id % 5 == 4` go to validation.
pub fn split_by_scene(dataset: &[RoiSample]) -> (Vec<RoiFeature>, Vec<RoiFeature>) {
    let (val, train): (Vec<&RoiSample>, Vec<&RoiSample>) = dataset.iter().partition(|r| r.scene_id % 5 == 4);
    (
        train.into_iter().map(|r| r.feature.clone()).collect(),
        val.into_iter().map(|r| r.feature.clone()).collect(),
    )
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Min-max normalises each column across rows (0.5 when a column is flat)
/// and averages the columns into one score per row.
pub fn overall_scores(rows: &[HeadScores]) -> Vec<f64> {
    let cols: Vec<[f64; 7]> = rows.iter().map(|r| r.to_array()).collect();
    let mut out = vec![0.0; rows.len()];
    for j in 0..7 {
        let lo = cols.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min);
        let hi = cols.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max);
        for (o, c) in out.iter_mut().zip(&cols) {
            *o += if hi > lo { (c[j] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    out.iter().map(|v| v / 7.0).collect()
}

fn run(
    mode: &str,
    variants: Vec<(String, HeadConfig)>,
    dataset: &[RoiSample],
    base: &HeadConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let (train_set, val_set) = split_by_scene(dataset);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "ablation split left {} training and {} validation RoIs",
            train_set.len(),
            val_set.len()
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..seeds.len()).map(move |s| (v, s))).collect();
    let scores: Vec<HeadScores> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let cfg = HeadConfig {
                seed: seeds[s],
                ..variants[v].1.clone()
            };
            let out = train(&train_set, &cfg)?;
            log::debug!("{mode} {} seed {}: final window loss {:?}", variants[v].0, seeds[s], out.curve.last());
            evaluate_head(&out.params, &val_set, &cfg)
        })
        .collect::<Result<_>>()?;

    let at = |v: usize, s: usize| scores[v * seeds.len() + s];
    let mut overall = vec![vec![0.0; seeds.len()]; variants.len()];
    for s in 0..seeds.len() {
        let col: Vec<HeadScores> = (0..variants.len()).map(|v| at(v, s)).collect();
        for (v, o) in overall_scores(&col).into_iter().enumerate() {
            overall[v][s] = o;
        }
    }
    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, (label, cfg))| {
            let per_seed: Vec<HeadScores> = (0..seeds.len()).map(|s| at(v, s)).collect();
            let mut mean = [0.0; 7];
            let mut std = [0.0; 7];
            for j in 0..7 {
                let xs: Vec<f64> = per_seed.iter().map(|r| r.to_array()[j]).collect();
                (mean[j], std[j]) = mean_std(&xs);
            }
            let (overall_mean, overall_std) = mean_std(&overall[v]);
            AblationRow {
                label: label.clone(),
                hierarchy: cfg.hierarchy,
                fuse_box: cfg.fuse_box,
                fuse_prior: cfg.fuse_prior,
                per_seed,
                overall_per_seed: overall[v].clone(),
                mean: HeadScores::from_array(mean),
                std: HeadScores::from_array(std),
                overall_mean,
                overall_std,
            }
        })
        .collect();
    Ok(AblationReport {
        mode: mode.to_string(),
        seeds: seeds.to_vec(),
        train_rois: train_set.len(),
        val_rois: val_set.len(),
        base: base.clone(),
        rows,
    })
}

/// Trains one head per hierarchy order and seed.
pub fn ablate_hierarchy(dataset: &[RoiSample], base: &HeadConfig, seeds: &[u64]) -> Result<AblationReport> {
    let variants = Hierarchy::all()
        .into_iter()
        .map(|h| {
            (
                h.to_string(),
                HeadConfig {
                    hierarchy: h,
                    ..base.clone()
                },
            )
        })
        .collect();
    run("hierarchy", variants, dataset, base, seeds)
}

/// Trains one head per fusion setting `{fuse_box, fuse_prior}` and seed.
pub fn ablate_fusion(dataset: &[RoiSample], base: &HeadConfig, seeds: &[u64]) -> Result<AblationReport> {
    let variants = [(false, false), (true, false), (false, true), (true, true)]
        .into_iter()
        .map(|(fb, fp)| {
            let label = match (fb, fp) {
                (false, false) => "none",
                (true, false) => "box",
                (false, true) => "prior",
                (true, true) => "box+prior",
            };
            (
                label.to_string(),
                HeadConfig {
                    fuse_box: fb,
                    fuse_prior: fp,
                    ..base.clone()
                },
            )
        })
        .collect();
    run("fusion", variants, dataset, base, seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::roi_dataset;
    use crate::scene::{generate_scene, GenConfig};

    fn small_dataset(cfg: &HeadConfig) -> Vec<RoiSample> {
        let g = GenConfig {
            seed: 5,
            max_objects: 4,
            ..Default::default()
        };
        let scenes: Vec<_> = (0..10).map(|i| (i, generate_scene(&g, i).unwrap())).collect();
        roi_dataset(&scenes, cfg, 0, 0).unwrap()
    }

    fn quick() -> HeadConfig {
        HeadConfig {
            channels: 2,
            iters: 30,
            lr: 0.01,
            fc_hidden: 4,
            init: Default::default(),
            ..HeadConfig::default()
        }
    }

    #[test]
    fn overall_score_normalisation() {
        let a = HeadScores::from_array([1.0; 7]);
        let b = HeadScores::from_array([3.0; 7]);
        let mut c = HeadScores::from_array([2.0; 7]);
        c.acc_o = 3.0;
        let s = overall_scores(&[a, b, c]);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 1.0);
        assert!((s[2] - (6.0 * 0.5 + 1.0) / 7.0).abs() < 1e-12);
        assert_eq!(overall_scores(&[a, a]), vec![0.5, 0.5]);
    }

    #[test]
    fn hierarchy_smoke_report_has_six_finite_rows() {
        let base = quick();
        let ds = small_dataset(&base);
        let r = ablate_hierarchy(&ds, &base, &[1]).unwrap();
        assert_eq!(r.rows.len(), 6);
        for row in &r.rows {
            assert!(row.mean.to_array().iter().all(|v| v.is_finite()));
            assert!(row.overall_mean.is_finite());
        }
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"VAO\""));
    }

    #[test]
    fn order_is_irrelevant_without_prior_fusion() {
        let base = HeadConfig {
            fuse_prior: false,
            ..quick()
        };
        let ds = small_dataset(&base);
        let r = ablate_hierarchy(&ds, &base, &[1, 2]).unwrap();
        for row in &r.rows[1..] {
            assert_eq!(row.per_seed, r.rows[0].per_seed);
        }
    }

    #[test]
    fn fusion_smoke_report_has_four_rows() {
        let base = quick();
        let ds = small_dataset(&base);
        let r = ablate_fusion(&ds, &base, &[3]).unwrap();
        let labels: Vec<_> = r.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["none", "box", "prior", "box+prior"]);
        assert!(r.table().lines().count() == 5);
    }
}
