//! Hungarian-matched evaluation of visible, amodal and invisible masks and
//! of occlusion classification.
//!
//! Predictions are paired with ground truth once per scene by maximising the
//! total visible-mask overlap F-measure; all mask kinds are then scored on
//! that single correspondence. Scenes are micro-averaged: numerators and
//! denominators are summed over scenes before any ratio is taken.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceAnnotation, MaskKind};
use crate::segment::PredictionSet;

/// Default boundary tolerance as a fraction of the image diagonal.
pub const DEFAULT_TOL_FRAC: f64 = 0.0075;
/// F@.75 counts matched objects with overlap F strictly above this.
pub const F_AT_75_THRESHOLD: f64 = 0.75;

/// Boundary tolerance radius: `max(1, round(frac × diagonal))`.
pub fn boundary_tolerance(width: usize, height: usize, tol_frac: f64) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    ((tol_frac * diag).round() as usize).max(1)
}

/// `2|a∩b| / (|a|+|b|)`, with `both_empty` returned when both are empty.
fn f_measure(inter: usize, a: usize, b: usize, both_empty: f64) -> f64 {
    if a + b == 0 {
        both_empty
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

pub fn mask_f_measure(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(f_measure(a.intersection_count(b)?, a.count(), b.count(), 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub overlap_f: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchResult {
    /// α: number of matched instances.
    pub fn alpha(&self) -> usize {
        self.pairs.len()
    }
}

/// Optimal one-to-one matching on a `preds × gts` score matrix. Pairs with
/// zero score are stripped to the unmatched lists.
pub fn match_scores(scores: &[Vec<f64>], n_preds: usize, n_gts: usize) -> MatchResult {
    let mut pred_used = vec![false; n_preds];
    let mut gt_used = vec![false; n_gts];
    let mut pairs = Vec::new();
    if n_preds > 0 && n_gts > 0 {
        for (p, g) in max_weight_assignment(scores) {
            let f = scores[p][g];
            if f > 0.0 {
                pred_used[p] = true;
                gt_used[g] = true;
                pairs.push(MatchedPair { pred: p, gt: g, overlap_f: f });
            }
        }
    }
    MatchResult {
        pairs,
        unmatched_pred: (0..n_preds).filter(|&i| !pred_used[i]).collect(),
        unmatched_gt: (0..n_gts).filter(|&i| !gt_used[i]).collect(),
    }
}

/// Visible-mask overlap F for every prediction/ground-truth pair.
pub fn visible_score_matrix(preds: &[InstanceAnnotation], gts: &[InstanceAnnotation]) -> Result<Vec<Vec<f64>>> {
    preds
        .iter()
        .map(|p| {
            let pc = p.visible.count();
            gts.iter()
                .map(|g| Ok(f_measure(p.visible.intersection_count(&g.visible)?, pc, g.visible.count(), 0.0)))
                .collect()
        })
        .collect()
}

pub fn hungarian_match(preds: &PredictionSet, gts: &[InstanceAnnotation]) -> Result<MatchResult> {
    let scores = visible_score_matrix(&preds.instances, gts)?;
    Ok(match_scores(&scores, preds.len(), gts.len()))
}

/// Raw precision/recall numerators and denominators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrfCounts {
    pub p_num: usize,
    pub p_den: usize,
    pub r_num: usize,
    pub r_den: usize,
}

impl std::ops::AddAssign for PrfCounts {
    fn add_assign(&mut self, o: Self) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }
}

/// Precision, recall and F-measure as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
    /// Nothing predicted and nothing to find; values are set to 100.
    pub vacuous: bool,
}

impl PrfCounts {
    pub fn prf(&self) -> Prf {
        if self.p_den == 0 && self.r_den == 0 {
            return Prf {
                p: 100.0,
                r: 100.0,
                f: 100.0,
                vacuous: true,
            };
        }
        let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
        let p = pct(self.p_num, self.p_den);
        let r = pct(self.r_num, self.r_den);
        Prf {
            p,
            r,
            f: harmonic(p, r),
            vacuous: false,
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn kind_masks(insts: &[InstanceAnnotation], kind: MaskKind) -> Vec<BinaryMask> {
    insts.iter().map(|a| a.mask(kind)).collect()
}

pub fn overlap_counts(m: &MatchResult, preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<PrfCounts> {
    let mut inter = 0;
    for pair in &m.pairs {
        inter += preds[pair.pred].intersection_count(&gts[pair.gt])?;
    }
    Ok(PrfCounts {
        p_num: inter,
        p_den: preds.iter().map(BinaryMask::count).sum(),
        r_num: inter,
        r_den: gts.iter().map(BinaryMask::count).sum(),
    })
}

pub fn boundary_counts(m: &MatchResult, preds: &[BinaryMask], gts: &[BinaryMask], tol: usize) -> Result<PrfCounts> {
    let pb: Vec<BinaryMask> = preds.iter().map(BinaryMask::boundary).collect();
    let gb: Vec<BinaryMask> = gts.iter().map(BinaryMask::boundary).collect();
    let mut c = PrfCounts {
        p_num: 0,
        p_den: pb.iter().map(BinaryMask::count).sum(),
        r_num: 0,
        r_den: gb.iter().map(BinaryMask::count).sum(),
    };
    for pair in &m.pairs {
        let (p, g) = (&pb[pair.pred], &gb[pair.gt]);
        c.p_num += p.intersection_count(&g.dilate(tol))?;
        c.r_num += g.intersection_count(&p.dilate(tol))?;
    }
    Ok(c)
}

pub fn overlap_prf(m: &MatchResult, preds: &PredictionSet, gts: &[InstanceAnnotation], kind: MaskKind) -> Result<Prf> {
    Ok(overlap_counts(m, &kind_masks(&preds.instances, kind), &kind_masks(gts, kind))?.prf())
}

pub fn boundary_prf(
    m: &MatchResult,
    preds: &PredictionSet,
    gts: &[InstanceAnnotation],
    kind: MaskKind,
    tol_radius: usize,
) -> Result<Prf> {
    Ok(boundary_counts(m, &kind_masks(&preds.instances, kind), &kind_masks(gts, kind), tol_radius)?.prf())
}

/// Objects matched with overlap F above 0.75, out of all ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FAt75Counts {
    pub hits: usize,
    pub total: usize,
}

impl std::ops::AddAssign for FAt75Counts {
    fn add_assign(&mut self, o: Self) {
        self.hits += o.hits;
        self.total += o.total;
    }
}

impl FAt75Counts {
    /// Percentage, `None` when there is no ground truth.
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.hits as f64 / self.total as f64)
    }
}

pub fn f_at_75_counts(m: &MatchResult, preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<FAt75Counts> {
    let mut hits = 0;
    for pair in &m.pairs {
        if mask_f_measure(&preds[pair.pred], &gts[pair.gt])? > F_AT_75_THRESHOLD {
            hits += 1;
        }
    }
    Ok(FAt75Counts { hits, total: gts.len() })
}

pub fn f_at_75(m: &MatchResult, preds: &PredictionSet, gts: &[InstanceAnnotation], kind: MaskKind) -> Result<Option<f64>> {
    Ok(f_at_75_counts(m, &kind_masks(&preds.instances, kind), &kind_masks(gts, kind))?.value())
}

/// Confusion counts over matched pairs. `delta_acc` counts agreement on
/// either class (accuracy numerator); `delta_tp` counts pairs where both
/// sides say occluded (precision/recall numerator).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OcclusionCounts {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub delta_acc: usize,
    pub delta_tp: usize,
}

impl std::ops::AddAssign for OcclusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.alpha += o.alpha;
        self.beta += o.beta;
        self.gamma += o.gamma;
        self.delta_acc += o.delta_acc;
        self.delta_tp += o.delta_tp;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMetrics {
    /// `None` when α = 0.
    pub acc: Option<f64>,
    pub f: f64,
    /// `None` when β = 0.
    pub p: Option<f64>,
    /// `None` when γ = 0.
    pub r: Option<f64>,
    pub counts: OcclusionCounts,
}

impl OcclusionCounts {
    pub fn from_flags(flags: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = OcclusionCounts::default();
        for (pred, gt) in flags {
            c.alpha += 1;
            c.beta += pred as usize;
            c.gamma += gt as usize;
            c.delta_acc += (pred == gt) as usize;
            c.delta_tp += (pred && gt) as usize;
        }
        c
    }

    pub fn metrics(&self) -> OcclusionMetrics {
        let pct = |n: usize, d: usize| (d > 0).then(|| 100.0 * n as f64 / d as f64);
        let p = pct(self.delta_tp, self.beta);
        let r = pct(self.delta_tp, self.gamma);
        let f = match (p, r) {
            (Some(p), Some(r)) => harmonic(p, r),
            _ => 0.0,
        };
        OcclusionMetrics {
            acc: pct(self.delta_acc, self.alpha),
            f,
            p,
            r,
            counts: *self,
        }
    }
}

pub fn occlusion_metrics(m: &MatchResult, preds: &PredictionSet, gts: &[InstanceAnnotation]) -> OcclusionMetrics {
    OcclusionCounts::from_flags(
        m.pairs
            .iter()
            .map(|pair| (preds.instances[pair.pred].occluded, gts[pair.gt].occluded)),
    )
    .metrics()
}

/// Summable per-scene evaluation state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub overlap: BTreeMap<MaskKind, PrfCounts>,
    pub boundary: BTreeMap<MaskKind, PrfCounts>,
    pub f_at_75: BTreeMap<MaskKind, FAt75Counts>,
    pub occlusion: OcclusionCounts,
    pub scenes: usize,
}

impl std::ops::AddAssign<&EvalCounts> for EvalCounts {
    fn add_assign(&mut self, o: &EvalCounts) {
        for (k, v) in &o.overlap {
            *self.overlap.entry(*k).or_default() += *v;
        }
        for (k, v) in &o.boundary {
            *self.boundary.entry(*k).or_default() += *v;
        }
        for (k, v) in &o.f_at_75 {
            *self.f_at_75.entry(*k).or_default() += *v;
        }
        self.occlusion += o.occlusion;
        self.scenes += o.scenes;
    }
}

pub fn evaluate_scene(preds: &PredictionSet, gts: &[InstanceAnnotation], tol_radius: usize) -> Result<EvalCounts> {
    let m = hungarian_match(preds, gts)?;
    let mut out = EvalCounts {
        scenes: 1,
        ..Default::default()
    };
    for kind in MaskKind::ALL {
        let pm = kind_masks(&preds.instances, kind);
        let gm = kind_masks(gts, kind);
        out.overlap.insert(kind, overlap_counts(&m, &pm, &gm)?);
        out.boundary.insert(kind, boundary_counts(&m, &pm, &gm, tol_radius)?);
        out.f_at_75.insert(kind, f_at_75_counts(&m, &pm, &gm)?);
    }
    out.occlusion = occlusion_metrics(&m, preds, gts).counts;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub overlap: Prf,
    pub boundary: Prf,
    /// `None` when there is no ground truth at all.
    pub f_at_75: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub visible: MaskMetrics,
    pub amodal: MaskMetrics,
    pub invisible: MaskMetrics,
    pub occlusion: OcclusionMetrics,
    pub scenes: usize,
    pub missing_scenes: Vec<u64>,
    pub counts: EvalCounts,
}

impl MetricsReport {
    pub fn from_counts(counts: EvalCounts, missing_scenes: Vec<u64>) -> Self {
        let kind = |k: MaskKind| MaskMetrics {
            overlap: counts.overlap.get(&k).copied().unwrap_or_default().prf(),
            boundary: counts.boundary.get(&k).copied().unwrap_or_default().prf(),
            f_at_75: counts.f_at_75.get(&k).copied().unwrap_or_default().value(),
        };
        MetricsReport {
            visible: kind(MaskKind::Visible),
            amodal: kind(MaskKind::Amodal),
            invisible: kind(MaskKind::Invisible),
            occlusion: counts.occlusion.metrics(),
            scenes: counts.scenes,
            missing_scenes,
            counts,
        }
    }

    pub fn mask(&self, kind: MaskKind) -> &MaskMetrics {
        match kind {
            MaskKind::Visible => &self.visible,
            MaskKind::Amodal => &self.amodal,
            MaskKind::Invisible => &self.invisible,
        }
    }

    /// Fixed-width table: overlap F, boundary F and F@.75 per mask kind,
    /// occlusion F and accuracy.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "   n/a".to_string(), |v| format!("{v:6.1}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| {:^20} | {:^20} | {:^13} | {:^20} |",
            "Amodal", "Invisible", "Occlusion", "Visible"
        );
        let _ = writeln!(
            s,
            "| {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>6} {:>6} | {:>6} {:>6} {:>6} |",
            "OV", "BO", "F@.75", "OV", "BO", "F@.75", "F_O", "ACC_O", "OV", "BO", "F@.75"
        );
        let cols = |m: &MaskMetrics| {
            format!(
                "{} {} {}",
                fmt(Some(m.overlap.f)),
                fmt(Some(m.boundary.f)),
                fmt(m.f_at_75)
            )
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} {} | {} |",
            cols(&self.amodal),
            cols(&self.invisible),
            fmt(Some(self.occlusion.f)),
            fmt(self.occlusion.acc),
            cols(&self.visible)
        );
        let c = &self.occlusion.counts;
        let _ = writeln!(
            s,
            "scenes={} alpha={} beta={} gamma={} delta_acc={} delta_tp={}",
            self.scenes, c.alpha, c.beta, c.gamma, c.delta_acc, c.delta_tp
        );
        s
    }
}

/// Ground truth for one scene as needed by the evaluator.
#[derive(Debug, Clone)]
pub struct GtScene<'a> {
    pub width: usize,
    pub height: usize,
    pub instances: &'a [InstanceAnnotation],
}

/// Micro-averaged metrics over a dataset. Scenes without predictions are
/// scored as empty prediction sets; predictions for unknown scenes are an
/// error.
pub fn evaluate_dataset(
    preds_by_scene: &BTreeMap<u64, PredictionSet>,
    dataset: &BTreeMap<u64, GtScene<'_>>,
    tol_frac: f64,
) -> Result<MetricsReport> {
    if let Some(id) = preds_by_scene.keys().find(|id| !dataset.contains_key(id)) {
        return Err(Error::Config(format!("predictions reference unknown scene {id}")));
    }
    let empty = PredictionSet::default();
    let mut total = EvalCounts::default();
    let mut missing = Vec::new();
    for (id, gt) in dataset {
        let preds = preds_by_scene.get(id).unwrap_or_else(|| {
            log::warn!("no predictions for scene {id}; scoring as empty");
            missing.push(*id);
            &empty
        });
        let tol = boundary_tolerance(gt.width, gt.height, tol_frac);
        total += &evaluate_scene(preds, gt.instances, tol)?;
    }
    Ok(MetricsReport::from_counts(total, missing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BBox;

    fn rect(w: usize, h: usize, b: BBox) -> BinaryMask {
        BinaryMask::rect(w, h, b).unwrap()
    }

    fn inst(visible: BinaryMask, amodal: BinaryMask, occluded: bool) -> InstanceAnnotation {
        InstanceAnnotation {
            bbox: amodal.bbox().unwrap(),
            visible,
            amodal,
            occluded,
            class_fg: true,
        }
    }

    fn unoccluded(m: BinaryMask) -> InstanceAnnotation {
        inst(m.clone(), m, false)
    }

    fn preds(insts: Vec<InstanceAnnotation>) -> PredictionSet {
        let n = insts.len();
        PredictionSet::new(insts, vec![1.0; n]).unwrap()
    }

    #[test]
    fn identity_match() {
        let gts = vec![
            unoccluded(rect(10, 10, BBox::new(0, 0, 3, 3))),
            unoccluded(rect(10, 10, BBox::new(5, 5, 4, 4))),
        ];
        let m = hungarian_match(&preds(gts.clone()), &gts).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert!(m.pairs.iter().all(|p| p.overlap_f == 1.0 && p.pred == p.gt));
        assert!(m.unmatched_gt.is_empty() && m.unmatched_pred.is_empty());
    }

    #[test]
    fn one_pred_two_gts_takes_higher_f() {
        // pred covers cols 0..30; gt A = cols 0..20 (F = 0.8); gt B = cols 24..34 (F = 0.3)
        let row = |a: usize, b: usize| BinaryMask::from_fn(40, 1, |_, c| c >= a && c < b).unwrap();
        let gts = vec![unoccluded(row(0, 20)), unoccluded(row(24, 34))];
        let p = preds(vec![unoccluded(row(0, 30))]);
        let scores = visible_score_matrix(&p.instances, &gts).unwrap();
        assert!((scores[0][0] - 0.8).abs() < 1e-12);
        assert!((scores[0][1] - 0.3).abs() < 1e-12);
        let m = hungarian_match(&p, &gts).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!((m.pairs[0].pred, m.pairs[0].gt), (0, 0));
        assert_eq!(m.unmatched_gt, vec![1]);
    }

    #[test]
    fn zero_score_pairs_are_stripped() {
        let gts = vec![unoccluded(rect(10, 10, BBox::new(0, 0, 2, 2)))];
        let p = preds(vec![unoccluded(rect(10, 10, BBox::new(5, 5, 2, 2)))]);
        let m = hungarian_match(&p, &gts).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_pred, vec![0]);
        assert_eq!(m.unmatched_gt, vec![0]);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let gts = vec![unoccluded(rect(10, 10, BBox::new(0, 0, 2, 2)))];
        let p = preds(vec![unoccluded(rect(12, 10, BBox::new(0, 0, 2, 2)))]);
        assert!(matches!(hungarian_match(&p, &gts), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn overlap_examples() {
        let gts = vec![
            unoccluded(rect(16, 16, BBox::new(0, 0, 4, 4))),
            unoccluded(rect(16, 16, BBox::new(8, 8, 4, 4))),
        ];
        let perfect = preds(gts.clone());
        let m = hungarian_match(&perfect, &gts).unwrap();
        let prf = overlap_prf(&m, &perfect, &gts, MaskKind::Visible).unwrap();
        assert_eq!((prf.p, prf.r, prf.f), (100.0, 100.0, 100.0));

        let mut extra = gts.clone();
        extra.push(unoccluded(rect(16, 16, BBox::new(12, 0, 4, 4))));
        let extra = preds(extra);
        let m = hungarian_match(&extra, &gts).unwrap();
        let prf = overlap_prf(&m, &extra, &gts, MaskKind::Visible).unwrap();
        assert_eq!(prf.r, 100.0);
        assert!(prf.p < 100.0);
    }

    #[test]
    fn hand_eight_by_eight() {
        let gts = vec![unoccluded(rect(8, 8, BBox::new(0, 0, 4, 4)))];
        let p = preds(vec![unoccluded(rect(8, 8, BBox::new(0, 0, 4, 3)))]);
        let m = hungarian_match(&p, &gts).unwrap();
        let prf = overlap_prf(&m, &p, &gts, MaskKind::Visible).unwrap();
        assert_eq!(prf.p, 100.0);
        assert_eq!(prf.r, 75.0);
        assert!((prf.f - 600.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn vacuous_when_nothing_anywhere() {
        let m = hungarian_match(&PredictionSet::default(), &[]).unwrap();
        let prf = overlap_prf(&m, &PredictionSet::default(), &[], MaskKind::Visible).unwrap();
        assert!(prf.vacuous && prf.f == 100.0);
        assert_eq!(f_at_75(&m, &PredictionSet::default(), &[], MaskKind::Visible).unwrap(), None);
    }

    #[test]
    fn boundary_examples() {
        let gt = rect(32, 32, BBox::new(8, 8, 10, 10));
        let gts = vec![unoccluded(gt.clone())];
        let same = preds(gts.clone());
        let m = hungarian_match(&same, &gts).unwrap();
        for tol in 0..4 {
            let b = boundary_prf(&m, &same, &gts, MaskKind::Visible, tol).unwrap();
            assert_eq!((b.p, b.r, b.f), (100.0, 100.0, 100.0));
        }

        let shifted = preds(vec![unoccluded(rect(32, 32, BBox::new(9, 8, 10, 10)))]);
        let m = hungarian_match(&shifted, &gts).unwrap();
        let b = boundary_prf(&m, &shifted, &gts, MaskKind::Visible, 2).unwrap();
        assert_eq!((b.p, b.r), (100.0, 100.0));

        // interior prediction two pixels clear of the gt boundary
        let big = rect(40, 40, BBox::new(0, 0, 20, 20));
        let gts = vec![unoccluded(big)];
        let inner = preds(vec![unoccluded(rect(40, 40, BBox::new(5, 5, 6, 6)))]);
        let m = hungarian_match(&inner, &gts).unwrap();
        assert_eq!(m.pairs.len(), 1);
        let b = boundary_prf(&m, &inner, &gts, MaskKind::Visible, 1).unwrap();
        assert_eq!(b.f, 0.0);
    }

    #[test]
    fn f_at_75_examples() {
        let gts = vec![
            unoccluded(rect(20, 20, BBox::new(0, 0, 10, 10))),
            unoccluded(rect(20, 20, BBox::new(12, 12, 5, 5))),
        ];
        // 9x10 inside the first: F = 180/190 ≈ 0.947; second unmatched
        let p = preds(vec![unoccluded(rect(20, 20, BBox::new(0, 0, 9, 10)))]);
        let m = hungarian_match(&p, &gts).unwrap();
        assert_eq!(f_at_75(&m, &p, &gts, MaskKind::Visible).unwrap(), Some(50.0));

        // |g| = |p| = 20, overlap 15: F is exactly 0.75 and does not count
        let g = BinaryMask::from_fn(40, 1, |_, c| c < 20).unwrap();
        let q = BinaryMask::from_fn(40, 1, |_, c| (5..25).contains(&c)).unwrap();
        assert_eq!(mask_f_measure(&q, &g).unwrap(), 0.75);
        let gts = vec![unoccluded(g)];
        let p = preds(vec![unoccluded(q)]);
        let m = hungarian_match(&p, &gts).unwrap();
        assert_eq!(f_at_75(&m, &p, &gts, MaskKind::Visible).unwrap(), Some(0.0));
    }

    #[test]
    fn occlusion_examples() {
        let all_right = OcclusionCounts::from_flags([(true, true), (true, true), (true, true), (false, false), (false, false)]);
        let m = all_right.metrics();
        assert_eq!((m.acc, m.f), (Some(100.0), 100.0));

        let never = OcclusionCounts::from_flags([(false, true), (false, true), (false, false), (false, false)]);
        let m = never.metrics();
        assert_eq!(m.r, Some(0.0));
        assert_eq!(m.p, None);
        assert_eq!(m.f, 0.0);
        assert_eq!(m.acc, Some(50.0));

        let mixed = OcclusionCounts::from_flags([(true, true), (true, false), (false, true), (false, false)]);
        let m = mixed.metrics();
        assert_eq!((m.p, m.r, m.f), (Some(50.0), Some(50.0), 50.0));
        assert_eq!(m.counts.alpha, 4);
        assert_eq!(m.acc, Some(50.0));
    }

    #[test]
    fn tolerance_default() {
        assert_eq!(boundary_tolerance(8, 8, DEFAULT_TOL_FRAC), 1);
        assert_eq!(boundary_tolerance(640, 480, DEFAULT_TOL_FRAC), 6);
    }
}
