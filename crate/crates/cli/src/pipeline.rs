//! The all-in-one pipeline: generate, calibrate, segment, analyze, patch,
//! train both learners, and summarize.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! config.json                      effective configuration
//! scenes/manifest.json             scene specs, in scene-id order
//! scenes/scene_NNN_{raw,dark}.hsc  raw and dark frames
//! scenes/scene_NNN_truth.pgm       ground-truth leaf mask
//! calibrated/scene_NNN.hsc         reflectance cube (+ _report.json)
//! segmentation/pixel_svm.json      pixel classifier
//! segmentation/scene_NNN.pgm       cleaned predicted mask
//! segmentation/report.json         per-scene IoU against the truth
//! analysis/scene_NNN_mean.csv      mean leaf spectrum
//! analysis/scene_NNN_sam.pgm       SAM map (+ _sam.json normalization)
//! patches/{all,train,validation,test}.hps
//! svm/{svc,svr}.json, svm/{svc,svr}_eval.json, svm/svc_confusion.csv
//! resnet/model.hrn, resnet/train_report.csv, resnet/curves.svg,
//! resnet/eval.json, resnet/confusion.csv
//! summary.csv
//! ```
//!
//! Stages that are not selected read their inputs from these files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hyperleaf_core::calibration::calibrate;
use hyperleaf_core::hypercube::{load_cube, load_mask, save_cube, save_mask};
use hyperleaf_core::patches::{augment_set, extract_patches, split, split_by_scene};
use hyperleaf_core::resnet::{evaluate_net, init_net, train, NetConfig, TrainParams, TrainReport};
use hyperleaf_core::rng::derive_seed;
use hyperleaf_core::segmentation::{mask_clean, sample_labelled_pixels, segment, train_pixel_svm};
use hyperleaf_core::spectral::{laplacian_map, mean_spectral_curve};
use hyperleaf_core::svm::{evaluate_svc, evaluate_svr, train_svc, train_svr, EvalReport};
use hyperleaf_core::synthgen::{generate_dataset, SceneSpec};
use hyperleaf_core::{Error, HyperCube, Mask, PatchSet, Rating, Result, SgdParams, SplitResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, Stage};
use crate::plot::emit_curves;

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}`: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError { stage, source: e.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub patch_size: usize,
    pub stride: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub environment: String,
    pub train_error: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PipelineSummary {
    pub rows: Vec<SummaryRow>,
}

impl PipelineSummary {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("patch_size,stride,n_train,n_val,n_test,environment,train_error,val_accuracy,test_accuracy\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{},{}",
                r.patch_size,
                r.stride,
                r.n_train,
                r.n_val,
                r.n_test,
                r.environment,
                r.train_error,
                opt(r.val_accuracy),
                opt(r.test_accuracy)
            );
        }
        out
    }
}

/// Everything a caller may want to inspect after a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutcome {
    pub summary: PipelineSummary,
    pub scene_count: usize,
    pub mean_segmentation_iou: Option<f64>,
    /// Patches extracted before splitting.
    pub patch_count: Option<usize>,
    /// Split sizes as fed to the learners (training includes augmentation).
    pub split_sizes: Option<[usize; 3]>,
    pub svc_test: Option<EvalReport>,
    pub svr_test: Option<EvalReport>,
    pub resnet_test: Option<EvalReport>,
    pub resnet_report: Option<TrainReport>,
}

struct SceneData {
    spec: SceneSpec,
    raw: HyperCube,
    dark: HyperCube,
    truth: Mask,
}

#[derive(Default)]
struct State {
    scenes: Option<Vec<SceneData>>,
    calibrated: Option<Vec<HyperCube>>,
    masks: Option<Vec<Mask>>,
    split: Option<SplitResult>,
}

struct Layout(PathBuf);

impl Layout {
    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.0.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn scene_file(&self, dir: &str, id: usize, suffix: &str) -> PathBuf {
        self.0.join(dir).join(format!("scene_{id:03}{suffix}"))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn seed_for(config: &RunConfig, stage: Stage, sub: u64) -> u64 {
    derive_seed(config.seed, &[stage.key(), sub])
}

fn with_seed(p: &SgdParams, seed: u64) -> SgdParams {
    SgdParams { seed, ..*p }
}

/// Runs the selected stages in fixed order, writing every artifact under
/// `config.out_dir`. A failing stage leaves earlier outputs in place.
pub fn run_pipeline(config: &RunConfig) -> std::result::Result<PipelineOutcome, StageError> {
    let first = config.stages.iter().min().copied().unwrap_or(Stage::Generate);
    config.validate().at(first)?;
    let layout = Layout(config.out_dir.clone());
    fs::create_dir_all(&layout.0).at(first)?;
    write_json(&layout.0.join("config.json"), config).at(first)?;

    let mut state = State::default();
    let mut outcome = PipelineOutcome::default();
    for stage in Stage::ALL {
        if !config.runs(stage) {
            continue;
        }
        match stage {
            Stage::Generate => generate_stage(config, &layout, &mut state),
            Stage::Calibrate => calibrate_stage(config, &layout, &mut state),
            Stage::Segment => segment_stage(config, &layout, &mut state, &mut outcome),
            Stage::Analyze => analyze_stage(config, &layout, &mut state),
            Stage::Patch => patch_stage(config, &layout, &mut state, &mut outcome),
            Stage::Svm => svm_stage(config, &layout, &mut state, &mut outcome),
            Stage::Resnet => resnet_stage(config, &layout, &mut state, &mut outcome),
        }
        .at(stage)?;
    }
    outcome.scene_count = state.scenes.as_ref().map_or(0, Vec::len);
    fs::write(layout.0.join("summary.csv"), outcome.summary.to_csv()).at(Stage::Resnet)?;
    Ok(outcome)
}

fn generate_stage(config: &RunConfig, layout: &Layout, state: &mut State) -> Result<()> {
    let base = config.base_scene();
    let scenes = generate_dataset(&base, config.scenes_per_class, seed_for(config, Stage::Generate, 0))?;
    layout.dir("scenes")?;
    let specs: Vec<&SceneSpec> = scenes.iter().map(|s| &s.spec).collect();
    write_json(&layout.0.join("scenes/manifest.json"), &specs)?;
    let mut data = Vec::with_capacity(scenes.len());
    for (id, s) in scenes.into_iter().enumerate() {
        save_cube(&s.raw, layout.scene_file("scenes", id, "_raw.hsc"))?;
        save_cube(&s.dark, layout.scene_file("scenes", id, "_dark.hsc"))?;
        save_mask(&s.truth.mask, layout.scene_file("scenes", id, "_truth.pgm"))?;
        data.push(SceneData { spec: s.spec, raw: s.raw, dark: s.dark, truth: s.truth.mask });
    }
    state.scenes = Some(data);
    Ok(())
}

fn scenes<'a>(layout: &Layout, state: &'a mut State) -> Result<&'a [SceneData]> {
    if state.scenes.is_none() {
        let text = fs::read_to_string(layout.0.join("scenes/manifest.json"))?;
        let specs: Vec<SceneSpec> = serde_json::from_str(&text)?;
        let mut data = Vec::with_capacity(specs.len());
        for (id, spec) in specs.into_iter().enumerate() {
            data.push(SceneData {
                spec,
                raw: load_cube(layout.scene_file("scenes", id, "_raw.hsc"))?,
                dark: load_cube(layout.scene_file("scenes", id, "_dark.hsc"))?,
                truth: load_mask(layout.scene_file("scenes", id, "_truth.pgm"))?,
            });
        }
        state.scenes = Some(data);
    }
    Ok(state.scenes.as_deref().expect("loaded above"))
}

fn labels(layout: &Layout, state: &mut State) -> Result<Vec<Rating>> {
    Ok(scenes(layout, state)?.iter().map(|s| s.spec.rating_class).collect())
}

fn calibrate_stage(config: &RunConfig, layout: &Layout, state: &mut State) -> Result<()> {
    let params = hyperleaf_core::CalibrationParams {
        seed: seed_for(config, Stage::Calibrate, config.calibration.seed),
        ..config.calibration.clone()
    };
    let results: Vec<_> =
        scenes(layout, state)?.par_iter().map(|s| calibrate(&s.raw, &s.dark, &params)).collect::<Result<_>>()?;
    layout.dir("calibrated")?;
    let mut cubes = Vec::with_capacity(results.len());
    for (id, (cube, report)) in results.into_iter().enumerate() {
        save_cube(&cube, layout.scene_file("calibrated", id, ".hsc"))?;
        write_json(&layout.scene_file("calibrated", id, "_report.json"), &report)?;
        cubes.push(cube);
    }
    state.calibrated = Some(cubes);
    Ok(())
}

fn calibrated<'a>(layout: &Layout, state: &'a mut State) -> Result<&'a [HyperCube]> {
    if state.calibrated.is_none() {
        let count = scenes(layout, state)?.len();
        let cubes =
            (0..count).map(|id| load_cube(layout.scene_file("calibrated", id, ".hsc"))).collect::<Result<_>>()?;
        state.calibrated = Some(cubes);
    }
    Ok(state.calibrated.as_deref().expect("loaded above"))
}

#[derive(Serialize)]
struct SegmentationReport {
    annotated_scenes: Vec<usize>,
    iou: Vec<f64>,
    mean_iou: f64,
}

fn segment_stage(config: &RunConfig, layout: &Layout, state: &mut State, outcome: &mut PipelineOutcome) -> Result<()> {
    let seg = &config.segmentation;
    let per_class = config.scenes_per_class;
    let truth: Vec<Mask> = scenes(layout, state)?.iter().map(|s| s.truth.clone()).collect();
    let cubes = calibrated(layout, state)?;
    if cubes.len() != per_class * 7 {
        return Err(Error::DimensionMismatch(format!(
            "{} scenes on disk, configuration expects {}",
            cubes.len(),
            per_class * 7
        )));
    }
    let annotated: Vec<usize> =
        (0..7).flat_map(|k| (0..seg.annotated_scenes_per_class).map(move |j| k * per_class + j)).collect();
    let mut samples = Vec::new();
    for &id in &annotated {
        let seed = seed_for(config, Stage::Segment, derive_seed(seg.sgd.seed, &[id as u64]));
        samples.extend(sample_labelled_pixels(&cubes[id], &truth[id], seg.pixels_per_class, seed)?);
    }
    let params = with_seed(&seg.sgd, seed_for(config, Stage::Segment, seg.sgd.seed));
    let model = train_pixel_svm(&samples, &params)?;
    layout.dir("segmentation")?;
    model.save(layout.0.join("segmentation/pixel_svm.json"))?;
    let masks: Vec<Mask> =
        cubes.par_iter().map(|c| Ok(mask_clean(&segment(c, &model)?, seg.min_component_px))).collect::<Result<_>>()?;
    let iou: Vec<f64> = masks.iter().zip(&truth).map(|(m, t)| m.iou(t)).collect();
    for (id, m) in masks.iter().enumerate() {
        save_mask(m, layout.scene_file("segmentation", id, ".pgm"))?;
    }
    let mean_iou = iou.iter().sum::<f64>() / iou.len() as f64;
    write_json(
        &layout.0.join("segmentation/report.json"),
        &SegmentationReport { annotated_scenes: annotated, iou, mean_iou },
    )?;
    outcome.mean_segmentation_iou = Some(mean_iou);
    state.masks = Some(masks);
    Ok(())
}

fn masks<'a>(layout: &Layout, state: &'a mut State) -> Result<&'a [Mask]> {
    if state.masks.is_none() {
        let count = scenes(layout, state)?.len();
        let masks =
            (0..count).map(|id| load_mask(layout.scene_file("segmentation", id, ".pgm"))).collect::<Result<_>>()?;
        state.masks = Some(masks);
    }
    Ok(state.masks.as_deref().expect("loaded above"))
}

fn analyze_stage(config: &RunConfig, layout: &Layout, state: &mut State) -> Result<()> {
    masks(layout, state)?;
    calibrated(layout, state)?;
    let (cubes, masks) = (state.calibrated.as_deref().unwrap(), state.masks.as_deref().unwrap());
    layout.dir("analysis")?;
    for (id, (cube, mask)) in cubes.iter().zip(masks).enumerate() {
        if mask.count() == 0 {
            continue;
        }
        mean_spectral_curve(cube, mask)?.save_csv(layout.scene_file("analysis", id, "_mean.csv"))?;
        let map = laplacian_map(cube, mask, config.analysis_statistic)?;
        let (pgm, norm) = map.to_pgm16();
        fs::write(layout.scene_file("analysis", id, "_sam.pgm"), pgm)?;
        write_json(&layout.scene_file("analysis", id, "_sam.json"), &norm)?;
    }
    Ok(())
}

fn patch_stage(config: &RunConfig, layout: &Layout, state: &mut State, outcome: &mut PipelineOutcome) -> Result<()> {
    let pc = &config.patches;
    let labels = labels(layout, state)?;
    masks(layout, state)?;
    calibrated(layout, state)?;
    let (cubes, masks) = (state.calibrated.as_deref().unwrap(), state.masks.as_deref().unwrap());
    let per_scene: Vec<PatchSet> = cubes
        .par_iter()
        .zip(masks)
        .zip(&labels)
        .enumerate()
        .map(|(id, ((c, m), &l))| extract_patches(c, m, l, id as u32, pc.n, pc.stride))
        .collect::<Result<_>>()?;
    let mut all = PatchSet::empty(pc.n, cubes.first().map_or(0, HyperCube::bands));
    for set in per_scene {
        all.extend(set)?;
    }
    if all.is_empty() {
        return Err(Error::EmptyInput("no patch fits inside any segmented leaf".into()));
    }
    let seed = seed_for(config, Stage::Patch, pc.seed);
    let mut parts = if pc.split_by_scene {
        split_by_scene(&all, pc.split_ratios, seed)?
    } else {
        split(&all, pc.split_ratios, seed, pc.stratified)?
    };
    if pc.augment_multiplicity > 0 {
        let lookup = |id: u32| cubes.get(id as usize).zip(masks.get(id as usize));
        let aug_seed = derive_seed(seed, &[0xA6]);
        let extra = augment_set(&parts.train, lookup, pc.augment_multiplicity, &pc.augment, aug_seed)?;
        parts.train.extend(extra)?;
    }
    let dir = layout.dir("patches")?;
    all.save(dir.join("all.hps"))?;
    parts.train.save(dir.join("train.hps"))?;
    parts.validation.save(dir.join("validation.hps"))?;
    parts.test.save(dir.join("test.hps"))?;
    outcome.patch_count = Some(all.len());
    state.split = Some(parts);
    Ok(())
}

fn split_result<'a>(layout: &Layout, state: &'a mut State) -> Result<&'a SplitResult> {
    if state.split.is_none() {
        let dir = layout.0.join("patches");
        state.split = Some(SplitResult {
            train: PatchSet::load(dir.join("train.hps"))?,
            validation: PatchSet::load(dir.join("validation.hps"))?,
            test: PatchSet::load(dir.join("test.hps"))?,
        });
    }
    Ok(state.split.as_ref().expect("loaded above"))
}

fn save_eval(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write_json(&dir.join(format!("{stem}_eval.json")), report)?;
    fs::write(dir.join(format!("{stem}_confusion.csv")), report.confusion_csv())?;
    Ok(())
}

fn svm_stage(config: &RunConfig, layout: &Layout, state: &mut State, outcome: &mut PipelineOutcome) -> Result<()> {
    let parts = split_result(layout, state)?;
    let sc = &config.svm;
    let dir = layout.dir("svm")?;
    let svc = train_svc(&parts.train, &with_seed(&sc.sgd, seed_for(config, Stage::Svm, sc.sgd.seed)))?;
    svc.save(dir.join("svc.json"))?;
    if !parts.test.is_empty() {
        let report = evaluate_svc(&svc, &parts.test)?;
        save_eval(&dir, "svc", &report)?;
        outcome.svc_test = Some(report);
    }
    if sc.svr {
        let seed = seed_for(config, Stage::Svm, derive_seed(sc.svr_sgd.seed, &[0x5F]));
        let svr = train_svr(&parts.train, sc.svr_epsilon, &with_seed(&sc.svr_sgd, seed))?;
        svr.save(dir.join("svr.json"))?;
        if !parts.test.is_empty() {
            let report = evaluate_svr(&svr, &parts.test)?;
            save_eval(&dir, "svr", &report)?;
            outcome.svr_test = Some(report);
        }
    }
    Ok(())
}

fn resnet_stage(config: &RunConfig, layout: &Layout, state: &mut State, outcome: &mut PipelineOutcome) -> Result<()> {
    let parts = split_result(layout, state)?;
    let rc = &config.resnet;
    let net_config = NetConfig {
        input_n: parts.train.n,
        input_bands: parts.train.bands,
        seed: seed_for(config, Stage::Resnet, rc.net.seed),
        ..rc.net.clone()
    };
    let params = TrainParams { seed: seed_for(config, Stage::Resnet, derive_seed(rc.train.seed, &[0x7A])), ..rc.train };
    let net = init_net(&net_config)?;
    let (trained, report) = train(&net, parts, &params)?;
    let dir = layout.dir("resnet")?;
    trained.save(dir.join("model.hrn"))?;
    emit_curves(&report, &dir)?;
    let test = if parts.test.is_empty() { None } else { Some(evaluate_net(&trained, &parts.test)?) };
    if let Some(t) = &test {
        write_json(&dir.join("eval.json"), t)?;
        fs::write(dir.join("confusion.csv"), t.confusion_csv())?;
    }
    let last = report.last().expect("at least one epoch");
    outcome.summary.rows.push(SummaryRow {
        patch_size: parts.train.n,
        stride: config.patches.stride,
        n_train: parts.train.len(),
        n_val: parts.validation.len(),
        n_test: parts.test.len(),
        environment: config.environment.tag().to_string(),
        train_error: 1.0 - last.train_accuracy,
        val_accuracy: last.val_accuracy,
        test_accuracy: test.as_ref().map(|t| t.accuracy),
    });
    outcome.split_sizes = Some([parts.train.len(), parts.validation.len(), parts.test.len()]);
    outcome.resnet_test = test;
    outcome.resnet_report = Some(report);
    Ok(())
}
