use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyperleaf_cli::config::{RunConfig, Stage, SvmConfig};
use hyperleaf_cli::pipeline::{run_pipeline, StageError};
use hyperleaf_cli::plot::emit_curves;
use hyperleaf_core::calibration::{calibrate, CalibrationParams};
use hyperleaf_core::hypercube::{load_cube, load_mask, save_cube, save_mask};
use hyperleaf_core::linear::SgdParams;
use hyperleaf_core::patches::{augment_set, extract_patches, split, split_by_scene, AugmentParams};
use hyperleaf_core::resnet::{evaluate_net, gradient_check, init_net, train, NetConfig, TrainParams};
use hyperleaf_core::rng::{stage_rng, uniform};
use hyperleaf_core::segmentation::{mask_clean, sample_labelled_pixels, segment, train_pixel_svm, PixelSvmModel};
use hyperleaf_core::spectral::{laplacian_map, mean_spectral_curve, MapStatistic};
use hyperleaf_core::svm::{
    evaluate_svc, evaluate_svr, predict_svc, train_svc, train_svr, EvalReport, MulticlassSvmModel, SvrModel,
};
use hyperleaf_core::synthgen::{generate_scene, Environment, SceneSpec};
use hyperleaf_core::{Error, PatchSet, Rating, ResidualNet, Result, SplitResult};

#[derive(Parser)]
#[command(name = "hyperleaf", version, about = "Hyperspectral leaf imaging and mosaic-resilience rating")]
struct Cli {
    /// Worker threads; 0 lets the runtime choose.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one synthetic scene: raw.hsc, dark.hsc, truth.pgm, spec.json.
    Gen(GenArgs),
    /// Dark- and white-correct a raw cube into reflectance.
    Calibrate(CalibrateArgs),
    #[command(subcommand)]
    Segment(SegmentCmd),
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    #[command(subcommand)]
    Patch(PatchCmd),
    #[command(subcommand)]
    Svm(SvmCmd),
    #[command(subcommand)]
    Resnet(ResnetCmd),
    /// Run the full pipeline from a JSON configuration.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Env::Indoor)]
    env: Env,
    /// Resistance rating, one of 1, 2, 5, 6, 7, 8, 9.
    #[arg(long, default_value_t = 1)]
    rating: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Env {
    Indoor,
    Outdoor,
}

impl From<Env> for Environment {
    fn from(e: Env) -> Self {
        match e {
            Env::Indoor => Environment::Indoor,
            Env::Outdoor => Environment::Outdoor,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    dark: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the calibration report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON calibration parameters; missing fields take defaults.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SegmentCmd {
    /// Fit the pixel classifier on annotated cubes.
    Train {
        /// Calibrated cube; repeat together with --mask.
        #[arg(long, required = true)]
        cube: Vec<PathBuf>,
        /// Annotation mask for the cube at the same position.
        #[arg(long, required = true)]
        mask: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        pixels_per_class: usize,
        #[command(flatten)]
        sgd: SgdArgs,
    },
    /// Segment a calibrated cube into a cleaned leaf mask.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        min_component_px: usize,
    },
}

#[derive(Args)]
struct SgdArgs {
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SgdArgs {
    fn params(&self) -> SgdParams {
        SgdParams { lambda: self.lambda, epochs: self.epochs, seed: self.seed }
    }
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Mean leaf spectrum as CSV.
    MeanCurve {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-pixel SAM map as a 16-bit PGM plus a normalization sidecar.
    SamMap {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw values as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Statistic::MeanAngle)]
        statistic: Statistic,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Statistic {
    MeanAngle,
    Degree,
}

impl From<Statistic> for MapStatistic {
    fn from(s: Statistic) -> Self {
        match s {
            Statistic::MeanAngle => MapStatistic::MeanAngle,
            Statistic::Degree => MapStatistic::Degree,
        }
    }
}

#[derive(Subcommand)]
enum PatchCmd {
    /// Cut fully-foreground windows out of one scene.
    Extract {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        rating: u32,
        #[arg(long, default_value_t = 0)]
        scene_id: u32,
        #[arg(long, default_value_t = 19)]
        n: usize,
        #[arg(long, default_value_t = 9)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append shifted and rotated copies of every original patch.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        /// Scene cubes in scene-id order (the first is id 0).
        #[arg(long, required = true)]
        cube: Vec<PathBuf>,
        /// Scene masks in the same order as --cube.
        #[arg(long, required = true)]
        mask: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        multiplicity: usize,
        #[arg(long, default_value_t = 3)]
        max_shift_px: i32,
        #[arg(long, default_value_t = 20.0)]
        max_rot_deg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split into train.hps, validation.hps and test.hps.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [6, 2, 2])]
        ratios: Vec<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shuffle globally instead of per class.
        #[arg(long)]
        no_stratify: bool,
        /// Keep every scene inside one split.
        #[arg(long, conflicts_with = "no_stratify")]
        by_scene: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SvmKind {
    Svc,
    Svr,
}

#[derive(Subcommand)]
enum SvmCmd {
    /// Train the one-vs-rest classifier or the regression baseline.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SvmKind::Svc)]
        kind: SvmKind,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        /// Defaults to the pipeline's setting for the chosen kind.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write one predicted rating per patch as CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = SvmKind::Svc)]
        kind: SvmKind,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, confusion matrix and per-class recall.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = SvmKind::Svc)]
        kind: SvmKind,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ResnetCmd {
    /// Train from scratch; writes the model plus curves next to it.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// JSON with optional `net` and `train` objects.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a small net.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        bands: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Make every rectifier the identity.
        #[arg(long)]
        linear: bool,
    },
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn at<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

fn run(command: Command) -> std::result::Result<(), StageError> {
    match command {
        Command::Gen(a) => at(Stage::Generate, gen(a)),
        Command::Calibrate(a) => at(Stage::Calibrate, calibrate_cmd(a)),
        Command::Segment(c) => at(Stage::Segment, segment_cmd(c)),
        Command::Analyze(c) => at(Stage::Analyze, analyze_cmd(c)),
        Command::Patch(c) => at(Stage::Patch, patch_cmd(c)),
        Command::Svm(c) => at(Stage::Svm, svm_cmd(c)),
        Command::Resnet(c) => at(Stage::Resnet, resnet_cmd(c)),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn pair_lengths(cubes: &[PathBuf], masks: &[PathBuf]) -> Result<()> {
    if cubes.len() != masks.len() {
        return Err(Error::InvalidParameter(format!("{} cubes but {} masks", cubes.len(), masks.len())));
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = SceneSpec::preset(a.env.into(), Rating::new(a.rating)?, a.seed);
    let scene = generate_scene(&spec)?;
    fs::create_dir_all(&a.out)?;
    save_cube(&scene.raw, a.out.join("raw.hsc"))?;
    save_cube(&scene.dark, a.out.join("dark.hsc"))?;
    save_mask(&scene.truth.mask, a.out.join("truth.pgm"))?;
    write_json(&a.out.join("spec.json"), &spec)
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let params: CalibrationParams = match &a.params {
        Some(p) => read_json(p)?,
        None => CalibrationParams::default(),
    };
    let (cube, report) = calibrate(&load_cube(&a.raw)?, &load_cube(&a.dark)?, &params)?;
    save_cube(&cube, &a.out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(r) = &a.report {
        write_json(r, &report)?;
    }
    Ok(())
}

fn segment_cmd(c: SegmentCmd) -> Result<()> {
    match c {
        SegmentCmd::Train { cube, mask, out, pixels_per_class, sgd } => {
            pair_lengths(&cube, &mask)?;
            let mut samples = Vec::new();
            for (i, (c, m)) in cube.iter().zip(&mask).enumerate() {
                let seed = hyperleaf_core::rng::derive_seed(sgd.seed, &[i as u64]);
                samples.extend(sample_labelled_pixels(&load_cube(c)?, &load_mask(m)?, pixels_per_class, seed)?);
            }
            train_pixel_svm(&samples, &sgd.params())?.save(out)
        }
        SegmentCmd::Apply { model, cube, out, min_component_px } => {
            let model = PixelSvmModel::load(model)?;
            let mask = mask_clean(&segment(&load_cube(cube)?, &model)?, min_component_px);
            save_mask(&mask, out)
        }
    }
}

fn analyze_cmd(c: AnalyzeCmd) -> Result<()> {
    match c {
        AnalyzeCmd::MeanCurve { cube, mask, out } => {
            mean_spectral_curve(&load_cube(cube)?, &load_mask(mask)?)?.save_csv(out)
        }
        AnalyzeCmd::SamMap { cube, mask, out, csv, statistic } => {
            let map = laplacian_map(&load_cube(cube)?, &load_mask(mask)?, statistic.into())?;
            let (pgm, norm) = map.to_pgm16();
            fs::write(&out, pgm)?;
            write_json(&out.with_extension("json"), &norm)?;
            if let Some(csv) = csv {
                fs::write(csv, map.to_csv())?;
            }
            Ok(())
        }
    }
}

fn patch_cmd(c: PatchCmd) -> Result<()> {
    match c {
        PatchCmd::Extract { cube, mask, rating, scene_id, n, stride, out } => {
            let set = extract_patches(&load_cube(cube)?, &load_mask(mask)?, Rating::new(rating)?, scene_id, n, stride)?;
            println!("{} patches", set.len());
            set.save(out)
        }
        PatchCmd::Augment { input, cube, mask, multiplicity, max_shift_px, max_rot_deg, seed, out } => {
            pair_lengths(&cube, &mask)?;
            let cubes = cube.iter().map(load_cube).collect::<Result<Vec<_>>>()?;
            let masks = mask.iter().map(load_mask).collect::<Result<Vec<_>>>()?;
            let mut set = PatchSet::load(input)?;
            let lookup = |id: u32| cubes.get(id as usize).zip(masks.get(id as usize));
            let params = AugmentParams { max_shift_px, max_rot_deg };
            let extra = augment_set(&set, lookup, multiplicity, &params, seed)?;
            println!("{} augmented patches", extra.len());
            set.extend(extra)?;
            set.save(out)
        }
        PatchCmd::Split { input, ratios, seed, no_stratify, by_scene, out_dir } => {
            let ratios: [u32; 3] = ratios.try_into().expect("clap enforces three values");
            let set = PatchSet::load(input)?;
            let parts =
                if by_scene { split_by_scene(&set, ratios, seed)? } else { split(&set, ratios, seed, !no_stratify)? };
            fs::create_dir_all(&out_dir)?;
            parts.train.save(out_dir.join("train.hps"))?;
            parts.validation.save(out_dir.join("validation.hps"))?;
            parts.test.save(out_dir.join("test.hps"))?;
            println!("train {} / validation {} / test {}", parts.train.len(), parts.validation.len(), parts.test.len());
            Ok(())
        }
    }
}

fn print_eval(report: &EvalReport, out: Option<&Path>, confusion: Option<&Path>) -> Result<()> {
    println!("accuracy {:.4} on {} patches", report.accuracy, report.n);
    if let Some(p) = out {
        write_json(p, report)?;
    }
    if let Some(p) = confusion {
        fs::write(p, report.confusion_csv())?;
    }
    Ok(())
}

type Predictor = Box<dyn Fn(&[f32]) -> Result<Rating>>;

fn svm_cmd(c: SvmCmd) -> Result<()> {
    match c {
        SvmCmd::Train { train, out, kind, epsilon, lambda, epochs, seed } => {
            let set = PatchSet::load(train)?;
            let defaults = SvmConfig::default();
            let base = match kind {
                SvmKind::Svc => defaults.sgd,
                SvmKind::Svr => defaults.svr_sgd,
            };
            let params =
                SgdParams { lambda: lambda.unwrap_or(base.lambda), epochs: epochs.unwrap_or(base.epochs), seed };
            match kind {
                SvmKind::Svc => train_svc(&set, &params)?.save(out),
                SvmKind::Svr => train_svr(&set, epsilon, &params)?.save(out),
            }
        }
        SvmCmd::Predict { model, kind, patches, out } => {
            let set = PatchSet::load(patches)?;
            let mut csv = String::from("index,scene_id,row,col,predicted\n");
            let predict: Predictor = match kind {
                SvmKind::Svc => {
                    let m = MulticlassSvmModel::load(model)?;
                    Box::new(move |x| predict_svc(&m, x))
                }
                SvmKind::Svr => {
                    let m = SvrModel::load(model)?;
                    Box::new(move |x| m.classify(x))
                }
            };
            for (i, p) in set.patches.iter().enumerate() {
                let o = p.origin;
                csv += &format!("{i},{},{},{},{}\n", o.scene_id, o.row, o.col, predict(p.features())?.value());
            }
            fs::write(out, csv)?;
            Ok(())
        }
        SvmCmd::Eval { model, kind, patches, out, confusion } => {
            let set = PatchSet::load(patches)?;
            let report = match kind {
                SvmKind::Svc => evaluate_svc(&MulticlassSvmModel::load(model)?, &set)?,
                SvmKind::Svr => evaluate_svr(&SvrModel::load(model)?, &set)?,
            };
            print_eval(&report, out.as_deref(), confusion.as_deref())
        }
    }
}

#[derive(Default, serde::Deserialize)]
#[serde(default)]
struct ResnetFile {
    net: NetConfig,
    train: TrainParams,
}

fn load_or_empty(path: Option<&PathBuf>, n: usize, bands: usize) -> Result<PatchSet> {
    match path {
        Some(p) => PatchSet::load(p),
        None => Ok(PatchSet::empty(n, bands)),
    }
}

fn resnet_cmd(c: ResnetCmd) -> Result<()> {
    match c {
        ResnetCmd::Train { train: train_path, val, test, config, out } => {
            let cfg: ResnetFile = match &config {
                Some(p) => read_json(p)?,
                None => ResnetFile::default(),
            };
            let train_set = PatchSet::load(train_path)?;
            let (n, bands) = (train_set.n, train_set.bands);
            let parts = SplitResult {
                train: train_set,
                validation: load_or_empty(val.as_ref(), n, bands)?,
                test: load_or_empty(test.as_ref(), n, bands)?,
            };
            let net = init_net(&NetConfig { input_n: n, input_bands: bands, ..cfg.net })?;
            let (trained, report) = train(&net, &parts, &cfg.train)?;
            trained.save(&out)?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            emit_curves(&report, dir)?;
            for r in &report.epochs {
                println!("epoch {} loss {:.4} train_acc {:.4}", r.epoch, r.train_loss, r.train_accuracy);
            }
            if let Some(acc) = report.final_test_accuracy {
                println!("test accuracy {acc:.4}");
            }
            Ok(())
        }
        ResnetCmd::Eval { model, patches, out, confusion } => {
            let net = ResidualNet::load(model)?;
            let set = PatchSet::load(patches)?;
            print_eval(&evaluate_net(&net, &set)?, out.as_deref(), confusion.as_deref())
        }
        ResnetCmd::Gradcheck { seed, bands, batch, step, linear } => {
            let config = NetConfig { rectifiers: !linear, ..NetConfig::tiny(bands, seed) };
            let net = init_net(&config)?;
            let mut rng = stage_rng(seed ^ 0x9E37);
            let len = config.input_n * config.input_n * bands;
            let inputs: Vec<Vec<f32>> =
                (0..batch).map(|_| (0..len).map(|_| uniform(&mut rng) as f32).collect()).collect();
            let refs: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();
            let labels: Vec<Rating> = (0..batch).map(|i| Rating::from_index(i % 7)).collect();
            let report = gradient_check(&net, &refs, &labels, step)?;
            println!("parameters {}", report.analytic.len());
            println!("max relative error {:.3e}", report.max_relative_error);
            println!("max relative error (plain differences) {:.3e}", report.max_relative_error_raw);
            println!("probes crossing a rectifier kink {}", report.kinked_count());
            Ok(())
        }
    }
}

fn pipeline_cmd(a: PipelineArgs) -> std::result::Result<(), StageError> {
    let mut config = match &a.config {
        Some(p) => {
            at(Stage::Generate, fs::read_to_string(p).map_err(Error::from).and_then(|t| RunConfig::from_json(&t)))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(o) = a.out {
        config.out_dir = o;
    }
    let outcome = run_pipeline(&config)?;
    if let Some(iou) = outcome.mean_segmentation_iou {
        println!("segmentation mean IoU {iou:.4}");
    }
    if let Some(n) = outcome.patch_count {
        println!("{n} patches extracted");
    }
    if let Some(r) = &outcome.svc_test {
        println!("svm test accuracy {:.4}", r.accuracy);
    }
    if let Some(r) = &outcome.resnet_test {
        println!("resnet test accuracy {:.4}", r.accuracy);
    }
    println!("outputs in {}", config.out_dir.display());
    Ok(())
}
