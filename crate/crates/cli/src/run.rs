use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use serde::Serialize;

use amodal::dataset::{self, load_dataset, read_predictions, write_predictions, PredictionRecord, MANIFEST};
use amodal::hom::{self, HeadConfig, Hierarchy, InitScheme};
use amodal::metrics::{evaluate_dataset, DEFAULT_TOL_FRAC};
use amodal::planner::{plan_retrieval, verify_plan, PlanReport, Predictor};
use amodal::segment::{degraded_oracle, depth_layer_segmenter, oracle_segmenter, Completion, DepthSegmenterConfig};
use amodal::{CorruptionConfig, GenConfig, Scene};

use crate::args::*;
use crate::config::{usage, CliResult, Config, Section};

/// Settings shared by every command after merging flags and config.
pub struct Globals {
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Globals {
    fn seed(&self, command: &str) -> CliResult<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => usage(format!("{command}: --seed is required (there is no clock-based default)")),
        }
    }

    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
        }
    }
}

fn input_dataset(dir: &Path) -> CliResult<()> {
    if !dir.join(MANIFEST).is_file() {
        return usage(format!("{} is not a dataset directory (no {MANIFEST})", dir.display()));
    }
    Ok(())
}

fn input_file(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return usage(format!("input file {} does not exist", path.display()));
    }
    Ok(())
}

/// Outputs must not overwrite any input.
fn distinct_output(out: &Path, inputs: &[&Path]) -> CliResult<()> {
    let norm = |p: &Path| {
        std::fs::canonicalize(p)
            .or_else(|_| match (p.parent(), p.file_name()) {
                (Some(d), Some(f)) if !d.as_os_str().is_empty() => std::fs::canonicalize(d).map(|d| d.join(f)),
                _ => Ok(p.to_path_buf()),
            })
            .unwrap_or_else(|_| p.to_path_buf())
    };
    let o = norm(out);
    for i in inputs {
        let i = norm(i);
        if o == i || (i.is_dir() && o.starts_with(&i)) {
            return usage(format!("output {} would overwrite input {}", out.display(), i.display()));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    // via Value so that object keys come out sorted
    let v = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(dir: &Path) -> anyhow::Result<dataset::Dataset> {
    let ds = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    info!("loaded {} scenes from {}", ds.len(), dir.display());
    Ok(ds)
}

fn scene<'a>(ds: &'a dataset::Dataset, id: u64) -> anyhow::Result<&'a Scene> {
    ds.scenes
        .get(&id)
        .with_context(|| format!("scene {id} is not in {}", ds.dir.display()))
}

pub fn dispatch(command: Command, g: &Globals, cfg: &Config) -> CliResult<()> {
    let s = cfg.section(command.name());
    match command {
        Command::Generate(a) => generate(a, g, &s),
        Command::Segment(a) => segment(a, g, &s),
        Command::Evaluate(a) => evaluate(a, g, &s),
        Command::TrainHead(a) => train_head(a, g, &s),
        Command::Ablate(a) => ablate(a, g, &s),
        Command::Plan(a) => plan(a, g, &s),
        Command::Render(a) => render(a, g, &s),
    }
}

fn generate(a: GenerateArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let d = GenConfig::default();
    let cfg = GenConfig {
        width: s.or(a.width, "width", d.width)?,
        height: s.or(a.height, "height", d.height)?,
        min_objects: s.or(a.min_objects, "min-objects", d.min_objects)?,
        max_objects: s.or(a.max_objects, "max-objects", d.max_objects)?,
        seed: g.seed("generate")?,
        depth_noise_sigma: s.or(a.depth_noise, "depth-noise", d.depth_noise_sigma)?,
        shape_size_range: d.shape_size_range,
    };
    let n: usize = s.need(a.scenes, "scenes")?;
    let out: PathBuf = s.need(a.out, "out")?;
    if let Err(e) = cfg.validate() {
        return usage(format!("generate: {e}"));
    }
    let summary = dataset::write_dataset(&cfg, n, &out).context("generate")?;
    info!("wrote {} scenes to {}", summary.scenes, out.display());
    g.say(&format!(
        "scenes={} instances={} occluded={} image_files={}",
        summary.scenes, summary.instances, summary.occluded, summary.image_files
    ));
    Ok(())
}

fn segment(a: SegmentArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let method: SegMethod = s.need(a.method, "method")?;
    let dir: PathBuf = s.need(a.dataset, "dataset")?;
    let out: PathBuf = s.need(a.out, "out")?;
    input_dataset(&dir)?;
    distinct_output(&out, &[&dir])?;
    let predictor: Box<dyn Fn(&Scene) -> amodal::Result<amodal::PredictionSet>> = match method {
        SegMethod::Oracle => Box::new(|sc| Ok(oracle_segmenter(sc))),
        SegMethod::Degraded => {
            let c = CorruptionConfig {
                erode_radius: s.or(a.erode_radius, "erode-radius", 0)?,
                drop_prob: s.or(a.drop_prob, "drop-prob", 0.0)?,
                merge_prob: s.or(a.merge_prob, "merge-prob", 0.0)?,
                split_prob: s.or(a.split_prob, "split-prob", 0.0)?,
                seed: g.seed("segment --method degraded")?,
            };
            if let Err(e) = c.validate() {
                return usage(format!("segment: {e}"));
            }
            Box::new(move |sc| degraded_oracle(sc, &c))
        }
        SegMethod::Depth => {
            let d = DepthSegmenterConfig::default();
            let completion = match s.opt(a.completion, "completion")? {
                None => d.completion,
                Some(CompletionArg::ConvexHull) => Completion::ConvexHull,
                Some(CompletionArg::BoxFill) => Completion::BoxFill,
                Some(CompletionArg::None) => Completion::None,
            };
            let c = DepthSegmenterConfig {
                tau_d: s.or(a.tau_d, "tau-d", d.tau_d)?,
                min_area: s.or(a.min_area, "min-area", d.min_area)?,
                completion,
            };
            Box::new(move |sc| depth_layer_segmenter(sc, &c))
        }
    };
    let ds = load(&dir)?;
    let mut records = Vec::with_capacity(ds.len());
    let mut count = 0;
    for (&id, sc) in &ds.scenes {
        let p = predictor(sc).with_context(|| format!("segmenting scene {id}"))?;
        count += p.instances.len();
        records.push(PredictionRecord::new(id, sc.width, sc.height, &p));
    }
    write_predictions(&out, &records).context("writing predictions")?;
    g.say(&format!("scenes={} predicted_instances={count}", records.len()));
    Ok(())
}

fn evaluate(a: EvaluateArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let dir: PathBuf = s.need(a.dataset, "dataset")?;
    let preds: PathBuf = s.need(a.predictions, "predictions")?;
    let tol_frac: f64 = s.or(a.tol_frac, "tol-frac", DEFAULT_TOL_FRAC)?;
    let report: Option<PathBuf> = s.opt(a.report, "report")?;
    let table: Option<PathBuf> = s.opt(a.table, "table")?;
    if !(tol_frac >= 0.0 && tol_frac.is_finite()) {
        return usage(format!("evaluate: --tol-frac must be finite and >= 0, got {tol_frac}"));
    }
    input_dataset(&dir)?;
    input_file(&preds)?;
    for out in report.iter().chain(&table) {
        distinct_output(out, &[&dir, &preds])?;
    }
    let ds = load(&dir)?;
    let p = read_predictions(&preds).context("reading predictions")?;
    let r = evaluate_dataset(&p, &ds.ground_truth(), tol_frac).context("evaluate")?;
    let text = r.table();
    if let Some(path) = &report {
        write_json(path, &r)?;
    }
    if let Some(path) = &table {
        write_text(path, &text)?;
    }
    g.say(&text);
    Ok(())
}

struct HeadOpts {
    q: usize,
    iters: usize,
    lr: f64,
    init: InitScheme,
    negatives: usize,
}

fn head_opts(a: HeadArgs, s: &Section, defaults: &HeadConfig) -> CliResult<HeadOpts> {
    let init = match s.opt(a.init, "init")? {
        None => defaults.init,
        Some(InitArg::He) => InitScheme::He,
        Some(InitArg::Glorot) => InitScheme::Glorot,
    };
    Ok(HeadOpts {
        q: s.or(a.q, "q", defaults.channels)?,
        iters: s.or(a.iters, "iters", defaults.iters)?,
        lr: s.or(a.lr, "lr", defaults.lr)?,
        init,
        negatives: s.or(a.negatives, "negatives", 0)?,
    })
}

fn scene_list(ds: dataset::Dataset) -> Vec<(u64, Scene)> {
    ds.scenes.into_iter().collect()
}

fn train_head(a: TrainHeadArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let seed = g.seed("train-head")?;
    let dir: PathBuf = s.need(a.dataset, "dataset")?;
    let out: PathBuf = s.need(a.out, "out")?;
    let curve_path: Option<PathBuf> = s.opt(a.curve, "curve")?;
    let d = HeadConfig::default();
    let hierarchy = match s.opt(a.hierarchy, "hierarchy")? {
        None => d.hierarchy,
        Some(text) => match text.parse::<Hierarchy>() {
            Ok(h) => h,
            Err(e) => return usage(format!("train-head: {e}")),
        },
    };
    let h = head_opts(a.head, s, &d)?;
    let cfg = HeadConfig {
        channels: h.q,
        hierarchy,
        fuse_box: s.or(a.fuse_box, "fuse-box", d.fuse_box)?,
        fuse_prior: s.or(a.fuse_prior, "fuse-prior", d.fuse_prior)?,
        lr: h.lr,
        iters: h.iters,
        seed,
        init: h.init,
        ..d
    };
    if let Err(e) = cfg.validate() {
        return usage(format!("train-head: {e}"));
    }
    input_dataset(&dir)?;
    for o in std::iter::once(&out).chain(&curve_path) {
        distinct_output(o, &[&dir])?;
    }
    let scenes = scene_list(load(&dir)?);
    let rois = hom::roi_dataset(&scenes, &cfg, h.negatives, seed).context("extracting RoIs")?;
    let features: Vec<_> = rois.into_iter().map(|r| r.feature).collect();
    info!(
        "training {} head (Q={}, {} iters, lr {}) on {} RoIs",
        cfg.hierarchy,
        cfg.channels,
        cfg.iters,
        cfg.lr,
        features.len()
    );
    let t = hom::train(&features, &cfg).context("training")?;
    hom::write_params(&out, &t.params, &cfg).context("writing params")?;
    if let Some(p) = &curve_path {
        write_json(p, &t.curve)?;
    }
    let first = t.curve.first().copied().unwrap_or(f64::NAN);
    let last = t.curve.last().copied().unwrap_or(f64::NAN);
    g.say(&format!(
        "rois={} params={} loss {first:.4} -> {last:.4}",
        features.len(),
        t.params.len()
    ));
    Ok(())
}

/// Desk-scale ablation defaults.
pub const ABLATE_Q: usize = 8;
pub const ABLATE_ITERS: usize = 3000;
pub const ABLATE_LR: f64 = 0.01;
pub const ABLATE_SCENES: usize = 120;

fn ablate(a: AblateArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let seed = g.seed("ablate")?;
    let mode: AblateMode = s.need(a.mode, "mode")?;
    let n_seeds: usize = s.or(a.seeds, "seeds", 5)?;
    let dir: Option<PathBuf> = s.opt(a.dataset, "dataset")?;
    let n_scenes: usize = s.or(a.scenes, "scenes", ABLATE_SCENES)?;
    let report: Option<PathBuf> = s.opt(a.report, "report")?;
    let table: Option<PathBuf> = s.opt(a.table, "table")?;
    let defaults = HeadConfig {
        channels: ABLATE_Q,
        iters: ABLATE_ITERS,
        lr: ABLATE_LR,
        ..HeadConfig::default()
    };
    let h = head_opts(a.head, s, &defaults)?;
    let base = HeadConfig {
        channels: h.q,
        iters: h.iters,
        lr: h.lr,
        init: h.init,
        seed,
        ..defaults
    };
    if n_seeds == 0 {
        return usage("ablate: --seeds must be at least 1");
    }
    if let Err(e) = base.validate() {
        return usage(format!("ablate: {e}"));
    }
    let inputs: Vec<&Path> = dir.iter().map(|d| d.as_path()).collect();
    if let Some(d) = &dir {
        input_dataset(d)?;
    }
    for o in report.iter().chain(&table) {
        distinct_output(o, &inputs)?;
    }
    let scenes = match &dir {
        Some(d) => scene_list(load(d)?),
        None => {
            let gen = GenConfig {
                seed,
                ..GenConfig::default()
            };
            (0..n_scenes as u64)
                .map(|i| amodal::generate_scene(&gen, i).map(|sc| (i, sc)))
                .collect::<amodal::Result<Vec<_>>>()
                .context("generating scenes")?
        }
    };
    let rois = hom::roi_dataset(&scenes, &base, h.negatives, seed).context("extracting RoIs")?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    info!(
        "{mode:?} ablation: {} RoIs, {} seeds, Q={}, {} iters, lr {}",
        rois.len(),
        seeds.len(),
        base.channels,
        base.iters,
        base.lr
    );
    let r = match mode {
        AblateMode::Hierarchy => hom::ablate_hierarchy(&rois, &base, &seeds),
        AblateMode::Fusion => hom::ablate_fusion(&rois, &base, &seeds),
    }
    .context("ablation")?;
    let text = r.table();
    if let Some(p) = &report {
        write_json(p, &r)?;
    }
    if let Some(p) = &table {
        write_text(p, &text)?;
    }
    g.say(&text);
    Ok(())
}

fn plan(a: PlanArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let dir: PathBuf = s.need(a.dataset, "dataset")?;
    let scene_id: u64 = s.need(a.scene, "scene")?;
    let target: usize = s.need(a.target, "target")?;
    let method: PlanMethod = s.or(a.method, "method", PlanMethod::Oracle)?;
    let max_steps: Option<usize> = s.opt(a.max_steps, "max-steps")?;
    let out: Option<PathBuf> = s.opt(a.out, "out")?;
    input_dataset(&dir)?;
    if let Some(o) = &out {
        distinct_output(o, &[&dir])?;
    }
    let ds = load(&dir)?;
    let sc = scene(&ds, scene_id)?;
    let predictor = match method {
        PlanMethod::Oracle => Predictor::Oracle,
        PlanMethod::Depth => Predictor::Depth(DepthSegmenterConfig::default()),
    };
    let p = plan_retrieval(sc, target, &predictor, max_steps).context("planning")?;
    let v = verify_plan(sc, &p).context("verifying plan")?;
    let report = PlanReport::new(scene_id, predictor.name(), &p, &v);
    if let Some(o) = &out {
        write_json(o, &report)?;
    }
    let steps: Vec<String> = v
        .steps
        .iter()
        .map(|c| format!("{}{}", c.id, if c.verified_occluded { "!" } else { "" }))
        .collect();
    g.say(&format!(
        "target={target} succeeded={} violations={} steps=[{}]",
        report.succeeded,
        report.violations,
        steps.join(", ")
    ));
    Ok(())
}

fn render(a: RenderArgs, g: &Globals, s: &Section) -> CliResult<()> {
    let dir: PathBuf = s.need(a.dataset, "dataset")?;
    let scene_id: u64 = s.need(a.scene, "scene")?;
    let out: PathBuf = s.need(a.out, "out")?;
    input_dataset(&dir)?;
    distinct_output(&out, &[&dir])?;
    let ds = load(&dir)?;
    let files = amodal::render::render_scene(scene(&ds, scene_id)?, &out).context("rendering")?;
    g.say(&format!(
        "{}\n{}\n{}",
        files.rgb.display(),
        files.depth.display(),
        files.overlay.display()
    ));
    Ok(())
}
