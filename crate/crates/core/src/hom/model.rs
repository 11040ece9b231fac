//! Forward pass, joint loss and reverse-mode gradients of the head.

use serde::{Deserialize, Serialize};

use super::feature::{RoiFeature, RoiTargets};
use super::layers::{
    conv3x3, conv3x3_backward, deconv, deconv_backward, linear, linear_backward, relu_backward, Deconv, Map,
};
use super::params::{wb_mut, HeadParams};
use super::{Branch, HeadConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// 1 × 4r × 4r (28×28 by default).
    pub visible_logits: Map,
    pub amodal_logits: Map,
    pub occlusion_logit: f64,
    pub class_logit: f64,
}

/// Per-term multipliers; zero masks a term out of both loss and gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub visible: f64,
    pub amodal: f64,
    pub occlusion: f64,
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            visible: 1.0,
            amodal: 1.0,
            occlusion: 1.0,
            class: 1.0,
        }
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub visible: f64,
    pub amodal: f64,
    pub occlusion: f64,
    pub class: f64,
    pub total: f64,
}

struct BranchCache {
    input: Map,
    /// fuse1..3 then feat1..3, after ReLU.
    acts: Vec<Map>,
    /// Channel means of the last feature map (occlusion branch only).
    pooled: Vec<f64>,
}

struct Cache {
    /// deconv, conv1..3 after ReLU; the last one is F_B.
    box_acts: Vec<Map>,
    class_in: Vec<f64>,
    class_h: [Vec<f64>; 2],
    /// Canonical branch order.
    branches: Vec<BranchCache>,
}

fn canonical(b: Branch) -> usize {
    match b {
        Branch::Visible => 0,
        Branch::Amodal => 1,
        Branch::Occlusion => 2,
    }
}

fn layer_name(p: &HeadParams, id: usize) -> String {
    p.layers[id].name.trim_end_matches(".weight").to_string()
}

fn finite(p: &HeadParams, id: usize, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activation of layer `{}`", layer_name(p, id))))
    }
}

fn conv_relu(p: &HeadParams, id: usize, input: &Map, out_c: usize) -> Result<Map> {
    let (w, b) = p.wb(id);
    let mut m = conv3x3(input, w, b, out_c);
    finite(p, id, &m.data)?;
    m.relu_in_place();
    Ok(m)
}

fn box_geometry(cfg: &HeadConfig) -> Deconv {
    Deconv {
        kernel: 3,
        stride: 2,
        pad: 1,
        out_h: cfg.large_size(),
        out_w: cfg.large_size(),
    }
}

fn mask_geometry(cfg: &HeadConfig) -> Deconv {
    Deconv {
        kernel: 2,
        stride: 2,
        pad: 0,
        out_h: cfg.mask_size(),
        out_w: cfg.mask_size(),
    }
}

fn check_feature(f: &RoiFeature, cfg: &HeadConfig) -> Result<()> {
    let (q, r, l) = (cfg.channels, cfg.roi_size, cfg.large_size());
    if (f.small.c, f.small.h, f.small.w) != (q, r, r) || (f.large.c, f.large.h, f.large.w) != (q, l, l) {
        return Err(Error::Shape(format!(
            "RoI feature is {}x{}x{} / {}x{}x{}, head expects {q}x{r}x{r} / {q}x{l}x{l}",
            f.small.c, f.small.h, f.small.w, f.large.c, f.large.h, f.large.w
        )));
    }
    Ok(())
}

fn run(p: &HeadParams, f: &RoiFeature, cfg: &HeadConfig) -> Result<(HeadOutput, Cache)> {
    p.check_layout(cfg)?;
    check_feature(f, cfg)?;
    let q = cfg.channels;
    let ids = &p.ids;

    let (w, b) = p.wb(ids.box_deconv);
    let mut up = deconv(&f.small, w, b, q, box_geometry(cfg));
    finite(p, ids.box_deconv, &up.data)?;
    up.relu_in_place();
    let mut box_acts = vec![up];
    for &id in &ids.box_conv {
        let next = conv_relu(p, id, box_acts.last().expect("non-empty"), q)?;
        box_acts.push(next);
    }

    let class_in = f.small.data.clone();
    let mut h = class_in.clone();
    let mut class_h: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (k, &id) in ids.class_fc[..2].iter().enumerate() {
        let (w, b) = p.wb(id);
        h = linear(&h, w, b);
        finite(p, id, &h)?;
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        class_h[k] = h.clone();
    }
    let (w, b) = p.wb(ids.class_fc[2]);
    let class_logit = linear(&h, w, b)[0];
    finite(p, ids.class_fc[2], &[class_logit])?;

    let mut branches: Vec<Option<BranchCache>> = vec![None, None, None];
    for (k, &br) in cfg.hierarchy.0.iter().enumerate() {
        let f_box = box_acts.last().expect("non-empty");
        let mut parts: Vec<&Map> = Vec::with_capacity(2 + k);
        if cfg.fuse_box {
            parts.push(f_box);
        }
        parts.push(&f.large);
        if cfg.fuse_prior {
            for prior in &cfg.hierarchy.0[..k] {
                let c = branches[canonical(*prior)].as_ref().expect("prior branch computed");
                parts.push(c.acts.last().expect("non-empty"));
            }
        }
        let input = Map::concat(&parts);
        let bid = ids.branch[canonical(br)];
        let mut acts: Vec<Map> = Vec::with_capacity(6);
        for &id in bid.fuse.iter().chain(&bid.feat) {
            let next = conv_relu(p, id, acts.last().unwrap_or(&input), q)?;
            acts.push(next);
        }
        let pooled = if br == Branch::Occlusion {
            let feat = acts.last().expect("non-empty");
            let n = (feat.h * feat.w) as f64;
            (0..q).map(|c| feat.plane(c).iter().sum::<f64>() / n).collect()
        } else {
            Vec::new()
        };
        branches[canonical(br)] = Some(BranchCache { input, acts, pooled });
    }
    let branches: Vec<BranchCache> = branches.into_iter().map(|b| b.expect("all branches run")).collect();

    let mask_logits = |br: Branch| -> Result<Map> {
        let id = ids.branch[canonical(br)].pred;
        let (w, b) = p.wb(id);
        let m = deconv(branches[canonical(br)].acts.last().expect("non-empty"), w, b, 1, mask_geometry(cfg));
        finite(p, id, &m.data)?;
        Ok(m)
    };
    let visible_logits = mask_logits(Branch::Visible)?;
    let amodal_logits = mask_logits(Branch::Amodal)?;
    let occ_id = ids.branch[2].pred;
    let (w, b) = p.wb(occ_id);
    let occlusion_logit = linear(&branches[2].pooled, w, b)[0];
    finite(p, occ_id, &[occlusion_logit])?;

    Ok((
        HeadOutput {
            visible_logits,
            amodal_logits,
            occlusion_logit,
            class_logit,
        },
        Cache {
            box_acts,
            class_in,
            class_h,
            branches,
        },
    ))
}

pub fn forward(p: &HeadParams, f: &RoiFeature, cfg: &HeadConfig) -> Result<HeadOutput> {
    run(p, f, cfg).map(|(out, _)| out)
}

/// Binary cross-entropy with logits, stable for large |z|.
#[inline]
fn bce(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Nearest-neighbour upsampled target bit at logit pixel `i` of a `side`² map.
fn target_bit(t: &crate::mask::BinaryMask, side: usize, i: usize) -> f64 {
    let scale = side / t.width();
    if t.get(i / side / scale, i % side / scale) {
        1.0
    } else {
        0.0
    }
}

fn check_targets(out: &HeadOutput, t: &RoiTargets) -> Result<usize> {
    let side = out.visible_logits.w;
    for (m, name) in [(&t.visible, "visible"), (&t.amodal, "amodal")] {
        if m.width() * 2 != side || m.height() * 2 != out.visible_logits.h {
            return Err(Error::Shape(format!(
                "{name} target is {}x{}, logits are {}x{}",
                m.width(),
                m.height(),
                side,
                out.visible_logits.h
            )));
        }
    }
    if (out.amodal_logits.h, out.amodal_logits.w) != (out.visible_logits.h, side) {
        return Err(Error::Shape("visible and amodal logits differ in size".into()));
    }
    Ok(side)
}

/// Mask and occlusion terms only apply to foreground RoIs.
fn effective_weights(t: &RoiTargets, w: &LossWeights) -> LossWeights {
    if t.class_fg {
        *w
    } else {
        LossWeights {
            visible: 0.0,
            amodal: 0.0,
            occlusion: 0.0,
            class: w.class,
        }
    }
}

/// Joint loss: mean per-pixel BCE of both mask logits against the
/// upsampled targets, plus BCE of the occlusion and class logits.
pub fn loss(out: &HeadOutput, t: &RoiTargets, weights: &LossWeights) -> Result<LossBreakdown> {
    let side = check_targets(out, t)?;
    let w = effective_weights(t, weights);
    let mask_term = |logits: &Map, target: &crate::mask::BinaryMask| -> f64 {
        let n = logits.data.len();
        logits
            .data
            .iter()
            .enumerate()
            .map(|(i, &z)| bce(z, target_bit(target, side, i)))
            .sum::<f64>()
            / n as f64
    };
    let visible = w.visible * mask_term(&out.visible_logits, &t.visible);
    let amodal = w.amodal * mask_term(&out.amodal_logits, &t.amodal);
    let occlusion = w.occlusion * bce(out.occlusion_logit, if t.occluded { 1.0 } else { 0.0 });
    let class = w.class * bce(out.class_logit, if t.class_fg { 1.0 } else { 0.0 });
    Ok(LossBreakdown {
        visible,
        amodal,
        occlusion,
        class,
        total: visible + amodal + occlusion + class,
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Loss and its gradient with respect to every parameter, laid out like
/// `p.values`.
pub fn backward(
    p: &HeadParams,
    f: &RoiFeature,
    cfg: &HeadConfig,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (out, cache) = run(p, f, cfg)?;
    let breakdown = loss(&out, &f.targets, weights)?;
    let w = effective_weights(&f.targets, weights);
    let side = out.visible_logits.w;
    let q = cfg.channels;
    let nl = cfg.large_size();
    let ids = &p.ids;
    let layers = &p.layers;
    let mut grad = vec![0.0; p.len()];

    let mask_grad = |logits: &Map, target: &crate::mask::BinaryMask, scale: f64| -> Map {
        let n = logits.data.len() as f64;
        let mut g = Map::zeros(1, logits.h, logits.w);
        for (i, (d, &z)) in g.data.iter_mut().zip(&logits.data).enumerate() {
            *d = scale * (sigmoid(z) - target_bit(target, side, i)) / n;
        }
        g
    };

    // gradient w.r.t. each branch's output feature, canonical order
    let mut feat_grad: Vec<Map> = (0..3).map(|_| Map::zeros(q, nl, nl)).collect();
    let mut box_grad = Map::zeros(q, nl, nl);

    for (k, &br) in cfg.hierarchy.0.iter().enumerate().rev() {
        let ci = canonical(br);
        let bc = &cache.branches[ci];
        let bid = ids.branch[ci];
        let feature = bc.acts.last().expect("non-empty");
        let from_pred = {
            let (gw, gb) = wb_mut(layers, &mut grad, bid.pred);
            let (pw, _) = p.wb(bid.pred);
            match br {
                Branch::Visible | Branch::Amodal => {
                    let (logits, target, scale) = if br == Branch::Visible {
                        (&out.visible_logits, &f.targets.visible, w.visible)
                    } else {
                        (&out.amodal_logits, &f.targets.amodal, w.amodal)
                    };
                    let g = mask_grad(logits, target, scale);
                    deconv_backward(feature, pw, &g, mask_geometry(cfg), gw, gb, true).expect("requested")
                }
                Branch::Occlusion => {
                    let t = if f.targets.occluded { 1.0 } else { 0.0 };
                    let dz = w.occlusion * (sigmoid(out.occlusion_logit) - t);
                    let gp = linear_backward(&bc.pooled, pw, &[dz], gw, gb);
                    let n = (nl * nl) as f64;
                    let mut m = Map::zeros(q, nl, nl);
                    for c in 0..q {
                        m.data[c * nl * nl..(c + 1) * nl * nl].fill(gp[c] / n);
                    }
                    m
                }
            }
        };
        let mut g = std::mem::replace(&mut feat_grad[ci], Map::zeros(0, 0, 0));
        add_into(&mut g.data, &from_pred.data);

        let needs_concat_grad = cfg.fuse_box || (cfg.fuse_prior && k > 0);
        let stack: Vec<usize> = bid.fuse.iter().chain(&bid.feat).copied().collect();
        for j in (0..6).rev() {
            relu_backward(&mut g.data, &bc.acts[j].data);
            let input = if j == 0 { &bc.input } else { &bc.acts[j - 1] };
            let (pw, _) = p.wb(stack[j]);
            let (gw, gb) = wb_mut(layers, &mut grad, stack[j]);
            let want = j > 0 || needs_concat_grad;
            match conv3x3_backward(input, pw, &g, gw, gb, want) {
                Some(next) => g = next,
                None => break,
            }
        }
        if needs_concat_grad {
            let plane = q * nl * nl;
            let mut off = 0;
            if cfg.fuse_box {
                add_into(&mut box_grad.data, &g.data[..plane]);
                off += plane;
            }
            off += plane; // large RoI feature is an input, not learned
            if cfg.fuse_prior {
                for prior in &cfg.hierarchy.0[..k] {
                    add_into(&mut feat_grad[canonical(*prior)].data, &g.data[off..off + plane]);
                    off += plane;
                }
            }
        }
    }

    if cfg.fuse_box {
        let mut g = box_grad;
        for j in (0..3).rev() {
            relu_backward(&mut g.data, &cache.box_acts[j + 1].data);
            let id = ids.box_conv[j];
            let (pw, _) = p.wb(id);
            let (gw, gb) = wb_mut(layers, &mut grad, id);
            g = conv3x3_backward(&cache.box_acts[j], pw, &g, gw, gb, true).expect("requested");
        }
        relu_backward(&mut g.data, &cache.box_acts[0].data);
        let (pw, _) = p.wb(ids.box_deconv);
        let (gw, gb) = wb_mut(layers, &mut grad, ids.box_deconv);
        deconv_backward(&f.small, pw, &g, box_geometry(cfg), gw, gb, false);
    }

    let t = if f.targets.class_fg { 1.0 } else { 0.0 };
    let mut gc = vec![w.class * (sigmoid(out.class_logit) - t)];
    let inputs = [&cache.class_in, &cache.class_h[0], &cache.class_h[1]];
    for j in (0..3).rev() {
        let id = ids.class_fc[j];
        let (pw, _) = p.wb(id);
        let (gw, gb) = wb_mut(layers, &mut grad, id);
        gc = linear_backward(inputs[j], pw, &gc, gw, gb);
        if j > 0 {
            relu_backward(&mut gc, inputs[j]);
        }
    }

    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        let layer = layers.iter().find(|l| l.range().contains(&i)).map(|l| l.name.as_str()).unwrap_or("?");
        return Err(Error::NonFinite(format!("gradient of `{layer}`")));
    }
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::Hierarchy;
    use crate::mask::BinaryMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(q: usize) -> HeadConfig {
        HeadConfig {
            channels: q,
            roi_size: 2,
            fc_hidden: 3,
            init: Default::default(),
            ..HeadConfig::default()
        }
    }

    fn random_feature(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> RoiFeature {
        let (q, r, l) = (cfg.channels, cfg.roi_size, cfg.large_size());
        let mut map = |c, s| Map {
            c,
            h: s,
            w: s,
            data: (0..c * s * s).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let small = map(q, r);
        let large = map(q, l);
        let amodal = BinaryMask::from_fn(l, l, |_, _| rng.random_bool(0.6)).unwrap();
        let visible = BinaryMask::from_fn(l, l, |r, c| amodal.get(r, c) && rng.random_bool(0.7)).unwrap();
        RoiFeature {
            small,
            large,
            targets: RoiTargets {
                occluded: visible != amodal,
                visible,
                amodal,
                class_fg: true,
            },
        }
    }

    fn random_params(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> HeadParams {
        let mut p = HeadParams::zeros(cfg);
        for v in &mut p.values {
            *v = rng.random_range(-0.6..0.6);
        }
        p
    }

    fn total(p: &HeadParams, f: &RoiFeature, cfg: &HeadConfig, w: &LossWeights) -> f64 {
        loss(&forward(p, f, cfg).unwrap(), &f.targets, w).unwrap().total
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let cfg = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_feature(&cfg, &mut rng);
        let out = forward(&HeadParams::zeros(&cfg), &f, &cfg).unwrap();
        assert!(out.visible_logits.data.iter().all(|&v| v == 0.0));
        assert!(out.amodal_logits.data.iter().all(|&v| v == 0.0));
        assert_eq!(out.occlusion_logit, 0.0);
        assert_eq!(out.class_logit, 0.0);
        assert_eq!((out.visible_logits.h, out.visible_logits.w), (28, 28));
    }

    #[test]
    fn zero_logits_give_ln2_per_term() {
        let cfg = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_feature(&cfg, &mut rng);
        let out = forward(&HeadParams::zeros(&cfg), &f, &cfg).unwrap();
        let l = loss(&out, &f.targets, &LossWeights::default()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for v in [l.visible, l.amodal, l.occlusion, l.class] {
            assert!((v - ln2).abs() < 1e-12);
        }
        assert!((l.total - (l.visible + l.amodal + l.occlusion + l.class)).abs() < 1e-12);
    }

    fn logits_for(t: &RoiTargets, side: usize, wrong: Option<usize>) -> HeadOutput {
        let mk = |m: &BinaryMask, flip: Option<usize>| {
            let mut out = Map::zeros(1, side, side);
            for i in 0..side * side {
                let bit = target_bit(m, side, i) == 1.0;
                let bit = if flip == Some(i) { !bit } else { bit };
                out.data[i] = if bit { 20.0 } else { -20.0 };
            }
            out
        };
        HeadOutput {
            visible_logits: mk(&t.visible, wrong),
            amodal_logits: mk(&t.amodal, None),
            occlusion_logit: if t.occluded { 20.0 } else { -20.0 },
            class_logit: if t.class_fg { 20.0 } else { -20.0 },
        }
    }

    #[test]
    fn saturated_logits_and_single_pixel_error() {
        let cfg = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_feature(&cfg, &mut rng);
        let w = LossWeights::default();
        let l = loss(&logits_for(&f.targets, 28, None), &f.targets, &w).unwrap();
        assert!(l.total < 1e-6);

        let l1 = loss(&logits_for(&f.targets, 28, Some(100)), &f.targets, &w).unwrap();
        // one pixel at the wrong saturated logit costs ~20 nats out of 784
        assert!((l1.visible - 20.0 / 784.0).abs() < 1e-6);
    }

    #[test]
    fn loss_rejects_mismatched_targets() {
        let cfg = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_feature(&cfg, &mut rng);
        let out = logits_for(&f.targets, 28, None);
        let mut bad = f.targets.clone();
        bad.visible = BinaryMask::new(7, 7).unwrap();
        assert!(matches!(loss(&out, &bad, &LossWeights::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn order_invariant_without_fusion() {
        let base = HeadConfig {
            fuse_box: false,
            fuse_prior: false,
            ..tiny(3)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&base, &mut rng);
        let f = random_feature(&base, &mut rng);
        let reference = forward(&p, &f, &base).unwrap();
        for h in Hierarchy::all() {
            let cfg = HeadConfig { hierarchy: h, ..base.clone() };
            assert_eq!(forward(&p, &f, &cfg).unwrap(), reference, "{h}");
        }
    }

    #[test]
    fn rejects_wrong_layout_and_feature_shape() {
        let cfg = tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_feature(&cfg, &mut rng);
        let p = HeadParams::zeros(&tiny(3));
        assert!(matches!(forward(&p, &f, &cfg), Err(Error::Shape(_))));
        let f3 = random_feature(&tiny(3), &mut rng);
        assert!(matches!(forward(&HeadParams::zeros(&cfg), &f3, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let cfg = tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_feature(&cfg, &mut rng);
        let mut p = random_params(&cfg, &mut rng);
        p.slice_mut("box.conv2.bias").unwrap()[0] = f64::NAN;
        let msg = forward(&p, &f, &cfg).unwrap_err().to_string();
        assert!(msg.contains("box.conv2"), "{msg}");
    }

    fn grad_check(cfg: &HeadConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(cfg, &mut rng);
        let f = random_feature(cfg, &mut rng);
        let w = LossWeights::default();
        let (_, g) = backward(&p, &f, cfg, &w).unwrap();
        let eps = 1e-4;
        let mut probe = p.clone();
        for i in 0..p.len() {
            let orig = p.values[i];
            probe.values[i] = orig + eps;
            let up = total(&probe, &f, cfg, &w);
            probe.values[i] = orig - eps;
            let down = total(&probe, &f, cfg, &w);
            probe.values[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = (g[i] - fd).abs() / fd.abs().max(1.0);
            assert!(err < 1e-4, "coordinate {i} analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_small() {
        grad_check(&tiny(2), 11);
        grad_check(
            &HeadConfig {
                hierarchy: Hierarchy::OAV,
                fuse_box: false,
                ..tiny(2)
            },
            12,
        );
    }

    #[test]
    fn masked_amodal_term_leaves_amodal_only_params_dead() {
        let cfg = HeadConfig {
            fuse_prior: false,
            ..tiny(2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&cfg, &mut rng);
        let f = random_feature(&cfg, &mut rng);
        let w = LossWeights {
            amodal: 0.0,
            ..LossWeights::default()
        };
        let (l, g) = backward(&p, &f, &cfg, &w).unwrap();
        assert_eq!(l.amodal, 0.0);
        for layer in p.layers.iter().filter(|l| l.name.starts_with("amodal.")) {
            assert!(g[layer.range()].iter().all(|&v| v == 0.0), "{}", layer.name);
        }
        let vis = p.layer("visible.feat3.weight").unwrap();
        assert!(g[vis.range()].iter().any(|&v| v != 0.0));

        // with prior fusion the amodal features still feed later branches;
        // only the amodal predictor is dead
        let fused = tiny(2);
        let p = random_params(&fused, &mut rng);
        let (_, g) = backward(&p, &f, &fused, &w).unwrap();
        for name in ["amodal.pred.weight", "amodal.pred.bias"] {
            let l = p.layer(name).unwrap();
            assert!(g[l.range()].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let cfg = tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&cfg, &mut rng);
        let f = random_feature(&cfg, &mut rng);
        let a = backward(&p, &f, &cfg, &LossWeights::default()).unwrap();
        let b = backward(&p, &f, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_roi_only_trains_classifier() {
        let cfg = tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_params(&cfg, &mut rng);
        let mut f = random_feature(&cfg, &mut rng);
        f.targets.class_fg = false;
        let (l, g) = backward(&p, &f, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(l.total, l.class);
        for layer in p.layers.iter().filter(|l| !l.name.starts_with("class.")) {
            assert!(g[layer.range()].iter().all(|&v| v == 0.0), "{}", layer.name);
        }
    }

    // Direct nested-loop reference of the whole forward pass, written from
    // the layer definitions without sharing any code with the fast path.
    mod oracle {
        use super::*;

        fn get(p: &HeadParams, name: &str) -> Vec<f64> {
            p.slice(name).unwrap().to_vec()
        }

        fn conv(x: &[Vec<Vec<f64>>], w: &[f64], b: &[f64]) -> Vec<Vec<Vec<f64>>> {
            let (ci, h, wd) = (x.len(), x[0].len(), x[0][0].len());
            let co = b.len();
            let mut out = vec![vec![vec![0.0; wd]; h]; co];
            for o in 0..co {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = b[o];
                        for i in 0..ci {
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    let (sy, sx) = (y as i64 + dy, xx as i64 + dx);
                                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= wd as i64 {
                                        continue;
                                    }
                                    let k = ((o * ci + i) * 3 + (dy + 1) as usize) * 3 + (dx + 1) as usize;
                                    s += w[k] * x[i][sy as usize][sx as usize];
                                }
                            }
                        }
                        out[o][y][xx] = s.max(0.0);
                    }
                }
            }
            out
        }

        fn tconv(x: &[Vec<Vec<f64>>], w: &[f64], b: &[f64], k: usize, pad: usize, out_side: usize) -> Vec<Vec<Vec<f64>>> {
            let ci = x.len();
            let co = b.len();
            let mut out = vec![vec![vec![0.0; out_side]; out_side]; co];
            for o in 0..co {
                for y in 0..out_side {
                    for xx in 0..out_side {
                        let mut s = b[o];
                        for i in 0..ci {
                            for (iy, row) in x[i].iter().enumerate() {
                                for (ix, v) in row.iter().enumerate() {
                                    let ky = (y + pad) as i64 - 2 * iy as i64;
                                    let kx = (xx + pad) as i64 - 2 * ix as i64;
                                    if (0..k as i64).contains(&ky) && (0..k as i64).contains(&kx) {
                                        s += v * w[((i * co + o) * k + ky as usize) * k + kx as usize];
                                    }
                                }
                            }
                        }
                        out[o][y][xx] = s;
                    }
                }
            }
            out
        }

        fn relu(m: &mut [Vec<Vec<f64>>]) {
            m.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
        }

        fn nested(m: &Map) -> Vec<Vec<Vec<f64>>> {
            (0..m.c).map(|c| (0..m.h).map(|y| (0..m.w).map(|x| m.at(c, y, x)).collect()).collect()).collect()
        }

        pub fn forward(p: &HeadParams, f: &RoiFeature, cfg: &HeadConfig) -> (Vec<f64>, Vec<f64>, f64, f64) {
            let l = cfg.large_size();
            let mut fb = tconv(&nested(&f.small), &get(p, "box.deconv.weight"), &get(p, "box.deconv.bias"), 3, 1, l);
            relu(&mut fb);
            for i in 1..=3 {
                fb = conv(&fb, &get(p, &format!("box.conv{i}.weight")), &get(p, &format!("box.conv{i}.bias")));
            }
            let mut feats: Vec<(Branch, Vec<Vec<Vec<f64>>>)> = Vec::new();
            for &br in &cfg.hierarchy.0 {
                let mut x: Vec<Vec<Vec<f64>>> = Vec::new();
                if cfg.fuse_box {
                    x.extend(fb.iter().cloned());
                }
                x.extend(nested(&f.large));
                if cfg.fuse_prior {
                    for (_, pf) in &feats {
                        x.extend(pf.iter().cloned());
                    }
                }
                for stage in ["fuse1", "fuse2", "fuse3", "feat1", "feat2", "feat3"] {
                    let n = format!("{}.{stage}", br.prefix());
                    x = conv(&x, &get(p, &format!("{n}.weight")), &get(p, &format!("{n}.bias")));
                }
                feats.push((br, x));
            }
            let feat = |b: Branch| &feats.iter().find(|(x, _)| *x == b).unwrap().1;
            let mask = |b: Branch| -> Vec<f64> {
                let n = b.prefix();
                let m = tconv(feat(b), &get(p, &format!("{n}.pred.weight")), &get(p, &format!("{n}.pred.bias")), 2, 0, 2 * l);
                m.into_iter().flatten().flatten().collect()
            };
            let fo = feat(Branch::Occlusion);
            let w = get(p, "occlusion.pred.weight");
            let mut occ = get(p, "occlusion.pred.bias")[0];
            for (c, plane) in fo.iter().enumerate() {
                let mean: f64 = plane.iter().flatten().sum::<f64>() / (l * l) as f64;
                occ += w[c] * mean;
            }
            let mut h: Vec<f64> = f.small.data.clone();
            for (i, act) in [(1, true), (2, true), (3, false)] {
                let w = get(p, &format!("class.fc{i}.weight"));
                let b = get(p, &format!("class.fc{i}.bias"));
                h = (0..b.len())
                    .map(|o| {
                        let s = b[o] + (0..h.len()).map(|j| w[o * h.len() + j] * h[j]).sum::<f64>();
                        if act {
                            s.max(0.0)
                        } else {
                            s
                        }
                    })
                    .collect();
            }
            (mask(Branch::Visible), mask(Branch::Amodal), occ, h[0])
        }
    }

    #[test]
    fn forward_matches_direct_oracle() {
        for (seed, cfg) in [
            (20, tiny(2)),
            (
                21,
                HeadConfig {
                    hierarchy: "AOV".parse().unwrap(),
                    ..tiny(2)
                },
            ),
            (
                22,
                HeadConfig {
                    fuse_box: false,
                    ..tiny(2)
                },
            ),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&cfg, &mut rng);
            let f = random_feature(&cfg, &mut rng);
            let out = forward(&p, &f, &cfg).unwrap();
            let (v, a, o, c) = oracle::forward(&p, &f, &cfg);
            let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
            assert!(close(&out.visible_logits.data, &v));
            assert!(close(&out.amodal_logits.data, &a));
            assert!((out.occlusion_logit - o).abs() < 1e-12);
            assert!((out.class_logit - c).abs() < 1e-12);
        }
    }
}
