//! Occlusion-aware retrieval planning.
//!
//! Closed loop: predict, match predictions to the current instances, and
//! either grasp the target (predicted unoccluded) or remove the predicted
//! unoccluded object whose visible centroid is nearest the target's, then
//! re-observe. Instance ids are indices into the original scene's
//! annotation list and stay stable across removals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::hungarian_match;
use crate::scene::Scene;
use crate::segment::{degraded_oracle, depth_layer_segmenter, oracle_segmenter, CorruptionConfig, DepthSegmenterConfig, PredictionSet};

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Oracle,
    Depth(DepthSegmenterConfig),
    Degraded(CorruptionConfig),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Oracle => "oracle",
            Predictor::Depth(_) => "depth",
            Predictor::Degraded(_) => "degraded",
        }
    }

    pub fn predict(&self, s: &Scene) -> Result<PredictionSet> {
        match self {
            Predictor::Oracle => Ok(oracle_segmenter(s)),
            Predictor::Depth(cfg) => depth_layer_segmenter(s, cfg),
            Predictor::Degraded(c) => degraded_oracle(s, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: usize,
    /// Occlusion flag the predictor gave this instance when it was chosen.
    pub predicted_occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPlan {
    pub target: usize,
    pub steps: Vec<PlanStep>,
    pub succeeded: bool,
}

impl RetrievalPlan {
    pub fn ids(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.id).collect()
    }
}

struct Observation {
    /// Per current instance: matched prediction's (occluded, visible centroid).
    seen: Vec<Option<(bool, (f64, f64))>>,
}

fn observe(s: &Scene, predictor: &Predictor) -> Result<Observation> {
    let preds = predictor.predict(s)?;
    let m = hungarian_match(&preds, &s.annotations)?;
    let mut seen = vec![None; s.annotations.len()];
    for pair in &m.pairs {
        let p = &preds.instances[pair.pred];
        if let Some(c) = p.visible.centroid() {
            seen[pair.gt] = Some((p.occluded, c));
        }
    }
    Ok(Observation { seen })
}

/// Plans the removals needed to grasp `target`, with at most `max_steps`
/// observations (`None`: the number of instances).
pub fn plan_retrieval(s: &Scene, target: usize, predictor: &Predictor, max_steps: Option<usize>) -> Result<RetrievalPlan> {
    if target >= s.annotations.len() {
        return Err(Error::UnknownInstance(target));
    }
    let limit = max_steps.unwrap_or(s.annotations.len());
    let mut scene = s.clone();
    // alive[i] = original id of the current scene's instance i
    let mut alive: Vec<usize> = (0..s.annotations.len()).collect();
    let mut steps = Vec::new();
    for _ in 0..limit {
        let t = alive.iter().position(|&id| id == target).expect("target is never removed early");
        let obs = observe(&scene, predictor)?;
        let Some((t_occ, t_c)) = obs.seen[t] else {
            log::debug!("target {target} not detected; stopping");
            break;
        };
        if !t_occ {
            steps.push(PlanStep {
                id: target,
                predicted_occluded: false,
            });
            return Ok(RetrievalPlan {
                target,
                steps,
                succeeded: true,
            });
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, o) in obs.seen.iter().enumerate() {
            let Some((false, c)) = *o else { continue };
            if i == t {
                continue;
            }
            let d2 = (c.0 - t_c.0).powi(2) + (c.1 - t_c.1).powi(2);
            let better = match best {
                None => true,
                Some((bd, bid, _)) => d2 < bd || (d2 == bd && alive[i] < bid),
            };
            if better {
                best = Some((d2, alive[i], i));
            }
        }
        let Some((_, id, i)) = best else {
            log::debug!("no unoccluded candidate while target {target} is occluded");
            break;
        };
        steps.push(PlanStep {
            id,
            predicted_occluded: false,
        });
        scene = scene.remove_instance(i)?;
        alive.remove(i);
    }
    Ok(RetrievalPlan {
        target,
        steps,
        succeeded: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCheck {
    pub id: usize,
    pub predicted_occluded: bool,
    /// Ground-truth occlusion at the moment of removal.
    pub verified_occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanVerification {
    pub steps: Vec<StepCheck>,
    /// Steps that grasped a ground-truth occluded object.
    pub violations: usize,
    /// Whether the target was grasped while ground-truth unoccluded.
    pub target_unoccluded: bool,
}

/// Replays `plan` against ground truth.
pub fn verify_plan(s: &Scene, plan: &RetrievalPlan) -> Result<PlanVerification> {
    if plan.target >= s.annotations.len() {
        return Err(Error::UnknownInstance(plan.target));
    }
    let mut scene = s.clone();
    let mut alive: Vec<usize> = (0..s.annotations.len()).collect();
    let mut steps = Vec::with_capacity(plan.steps.len());
    let mut target_unoccluded = false;
    for st in &plan.steps {
        let i = alive.iter().position(|&id| id == st.id).ok_or(Error::UnknownInstance(st.id))?;
        let verified_occluded = scene.annotations[i].occluded;
        if st.id == plan.target {
            target_unoccluded = !verified_occluded;
        }
        steps.push(StepCheck {
            id: st.id,
            predicted_occluded: st.predicted_occluded,
            verified_occluded,
        });
        scene = scene.remove_instance(i)?;
        alive.remove(i);
    }
    Ok(PlanVerification {
        violations: steps.iter().filter(|c| c.verified_occluded).count(),
        steps,
        target_unoccluded,
    })
}

/// The plan file written by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub scene_id: u64,
    pub method: String,
    pub target: usize,
    pub succeeded: bool,
    pub target_unoccluded: bool,
    pub violations: usize,
    pub steps: Vec<StepCheck>,
}

impl PlanReport {
    pub fn new(scene_id: u64, method: &str, plan: &RetrievalPlan, v: &PlanVerification) -> Self {
        PlanReport {
            scene_id,
            method: method.to_string(),
            target: plan.target,
            succeeded: plan.succeeded,
            target_unoccluded: v.target_unoccluded,
            violations: v.violations,
            steps: v.steps.clone(),
        }
    }
}
