use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use levelfm_core::baselines::{
    fit_forest, fit_naive, predict_naive, write_importances, ForestConfig,
};
use levelfm_core::eval::{
    metrics_from_rows, prediction_rows, reference_train, run_sweep, write_predictions,
    write_sweep_outputs, FeatureInputs, Method, SweepSpec,
};
use levelfm_core::features::{
    build_fm_rows, build_rf_matrix, load_level_attributes, load_telemetry, LevelAttributes,
    Telemetry,
};
use levelfm_core::fm::FmModelFile;
use levelfm_core::synth::{generate as synth_generate, load_truth, SynthConfig};
use levelfm_core::trainer::{schema_groups, train_predict_grouped, write_training_log};
use levelfm_core::{
    load_interactions, split_players, Dataset, Error, FeatureSchema, FeatureSet, McmcConfig,
    SplitSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{read_config, resolve, Overrides};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::plots::{write_plot_script, PlotKind};
use crate::{AnalyzeArgs, EvaluateArgs, GenerateArgs, TrainArgs};

pub struct Context {
    pub config: Option<PathBuf>,
    pub output_root: PathBuf,
}

impl Context {
    fn out_dir(&self, given: Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
        let dir = given.unwrap_or_else(|| self.output_root.join(command));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }
}

fn writer(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// A directory stands for the `interactions.csv` inside it.
fn interactions_path(data: Option<&Path>) -> CliResult<PathBuf> {
    let data = data.ok_or_else(|| CliError::Usage("--data is required".into()))?;
    Ok(if data.is_dir() {
        data.join("interactions.csv")
    } else {
        data.to_path_buf()
    })
}

struct SideInputs {
    levels: Vec<LevelAttributes>,
    telemetry: Option<Telemetry>,
    files: Vec<PathBuf>,
}

fn load_side_inputs(dir: &Path) -> CliResult<SideInputs> {
    let levels_path = dir.join("levels.csv");
    let levels = load_level_attributes(&levels_path)?;
    let telemetry_path = dir.join("telemetry.csv");
    let mut files = vec![levels_path];
    let telemetry = if telemetry_path.exists() {
        files.push(telemetry_path.clone());
        Some(load_telemetry(&telemetry_path)?)
    } else {
        log::warn!(
            "{} not found; behavioral player features are zero",
            telemetry_path.display()
        );
        None
    };
    Ok(SideInputs {
        levels,
        telemetry,
        files,
    })
}

/// Method name as spelled on the command line.
fn flag_name(m: Method) -> String {
    m.as_str().replace('_', "-")
}

fn require_features(features: Option<&Path>, method: Method) -> CliResult<&Path> {
    features.ok_or_else(|| {
        CliError::Usage(format!(
            "method {} needs level attributes: pass --features <dir with levels.csv>",
            flag_name(method)
        ))
    })
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct GenerateSettings {
    #[serde(flatten)]
    synth: SynthConfig,
    out_dir: Option<PathBuf>,
}

pub fn generate(ctx: &Context, args: GenerateArgs) -> CliResult<PathBuf> {
    let manifest = ManifestBuilder::start("generate");
    let mut flags = Overrides::default();
    flags
        .set("n_players", args.players)
        .set("n_levels", args.levels)
        .set("seed", args.seed)
        .set("out_dir", args.out_dir);
    let settings: GenerateSettings = resolve(
        &GenerateSettings::default(),
        &read_config(ctx.config.as_deref())?,
        flags.into_value(),
    )?;
    settings.synth.validate()?;
    let dir = ctx.out_dir(settings.out_dir.clone(), "generate")?;
    let output = synth_generate(&settings.synth)?;
    let files = output.write_to(&dir)?;
    log::info!(
        "{} records, {} truncated at the attempt cap",
        output.dataset.len(),
        output.dataset.truncated_count()
    );
    manifest.finish(&settings, vec![settings.synth.seed], &dir, files)?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainSettings {
    method: Method,
    data: Option<PathBuf>,
    features: Option<PathBuf>,
    out: Option<PathBuf>,
    split: SplitSpec,
    mcmc: McmcConfig,
    forest: ForestConfig,
}

impl TrainSettings {
    fn defaults(method: Method) -> Self {
        TrainSettings {
            method,
            data: None,
            features: None,
            out: None,
            split: SplitSpec::default(),
            mcmc: if method == Method::FmFeat {
                McmcConfig::augmented()
            } else {
                McmcConfig::default()
            },
            forest: ForestConfig::default(),
        }
    }
}

fn check_train_flags(method: Method, args: &TrainArgs) -> CliResult<()> {
    let mcmc_flags = [
        ("--factors", args.factors.is_some()),
        ("--iterations", args.iterations.is_some()),
        ("--burn-in", args.burn_in.is_some()),
        ("--init-stdev", args.init_stdev.is_some()),
        ("--block-groups", args.block_groups),
    ];
    if !method.is_fm() {
        if let Some((flag, _)) = mcmc_flags.iter().find(|(_, given)| *given) {
            return Err(CliError::Usage(format!(
                "{flag} only applies to factorization machines, not method {}",
                flag_name(method)
            )));
        }
    }
    if method != Method::Rf && args.trees.is_some() {
        return Err(CliError::Usage(format!(
            "--trees only applies to method rf, not {}",
            flag_name(method)
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainMetrics {
    method: Method,
    k: usize,
    observed_levels: u32,
    n_test_rows: usize,
    mae: f64,
    rmse: f64,
}

pub fn train(ctx: &Context, args: TrainArgs) -> CliResult<PathBuf> {
    let mut manifest = ManifestBuilder::start("train");
    let config = read_config(ctx.config.as_deref())?;
    let method = match args.method {
        Some(m) => Method::from(m),
        None => match config.get("method") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Usage(format!("config key `method`: {e}")))?,
            None => Method::Fm,
        },
    };
    check_train_flags(method, &args)?;

    let mut flags = Overrides::default();
    flags
        .set("method", Some(method))
        .set("data", args.data)
        .set("features", args.features)
        .set("out", args.out)
        .set("split.observed_levels", args.observed)
        .set("split.eval_level_floor", args.floor)
        .set("split.test_fraction", args.test_fraction)
        .set("split.min_history", args.min_history)
        .set("split.seed", args.seed)
        .set("mcmc.seed", args.seed)
        .set("forest.seed", args.seed)
        .set("mcmc.factors", args.factors)
        .set("mcmc.iterations", args.iterations)
        .set("mcmc.burn_in", args.burn_in)
        .set("mcmc.init_stdev", args.init_stdev)
        .set("mcmc.block_groups", args.block_groups.then_some(true))
        .set("forest.n_estimators", args.trees);
    let s: TrainSettings = resolve(
        &TrainSettings::defaults(method),
        &config,
        flags.into_value(),
    )?;
    s.split.validate()?;
    if method.is_fm() {
        s.mcmc.validate()?;
    }

    let data_path = interactions_path(s.data.as_deref())?;
    let side = if method.needs_features() {
        Some(load_side_inputs(require_features(
            s.features.as_deref(),
            method,
        )?)?)
    } else {
        None
    };
    let dir = ctx.out_dir(s.out.clone(), "train")?;
    manifest.input(&data_path)?;
    for f in side.iter().flat_map(|x| &x.files) {
        manifest.input(f)?;
    }
    let data = load_interactions(&data_path)?;
    let split = split_players(&data, &s.split)?;
    let mut outputs = Vec::new();
    let seed = s.split.seed;

    let (preds, k) = match method {
        Method::Naive => {
            let model = fit_naive(&reference_train(&split)?);
            outputs.push(write_json(&dir.join("model.json"), &model)?);
            let preds: Vec<f64> = split
                .unobserved()
                .map(|r| predict_naive(&model, r.level_id))
                .collect();
            (preds, 0)
        }
        Method::Rf => {
            let side = side.as_ref().expect("loaded for rf");
            let fs = FeatureSet::build(&split, Some(&side.levels), side.telemetry.as_ref(), true)?;
            let m = build_rf_matrix(&split, &fs)?;
            let forest = fit_forest(&m.train.x, &m.train.y, &s.forest)?;
            let imp = dir.join("importances.csv");
            write_importances(&m.feature_names, &forest, writer(&imp)?)?;
            outputs.push(imp);
            outputs.push(write_json(&dir.join("model.json"), &forest)?);
            outputs.push(write_json(&dir.join("schema.json"), &fs.schema)?);
            let mut preds = forest.predict_matrix(&m.gap.x)?;
            preds.extend(forest.predict_matrix(&m.test.x)?);
            (preds, 0)
        }
        Method::Fm | Method::FmFeat => {
            let fs = match &side {
                Some(side) => {
                    FeatureSet::build(&split, Some(&side.levels), side.telemetry.as_ref(), true)?
                }
                None => FeatureSet::build(&split, None, None, false)?,
            };
            let rows = build_fm_rows(&split, &fs)?;
            let mut unobserved = rows.gap;
            unobserved.extend(rows.test);
            let groups = s.mcmc.block_groups.then(|| schema_groups(&fs.schema));
            let fit = train_predict_grouped(
                &rows.train,
                &unobserved,
                fs.schema.width(),
                groups,
                &s.mcmc,
            )?;
            let file = FmModelFile::new(&fit.model, fs.schema.fingerprint());
            let model_path = dir.join("model.json");
            file.save(&model_path)?;
            outputs.push(model_path);
            outputs.push(write_json(&dir.join("schema.json"), &fs.schema)?);
            let log_path = dir.join("training_log.csv");
            write_training_log(&fit.log, writer(&log_path)?)?;
            outputs.push(log_path);
            (fit.predictions.clamped(), s.mcmc.factors)
        }
    };

    let rows = prediction_rows(&split, seed, preds);
    let pred_path = dir.join("predictions.csv");
    write_predictions(&rows, writer(&pred_path)?)?;
    outputs.push(pred_path);
    let (mae, rmse) = metrics_from_rows(&rows)?;
    let metrics = TrainMetrics {
        method,
        k,
        observed_levels: s.split.observed_levels,
        n_test_rows: split.test.len(),
        mae,
        rmse,
    };
    log::info!("test MAE {mae:.4}, RMSE {rmse:.4}");
    outputs.push(write_json(&dir.join("metrics.json"), &metrics)?);
    outputs.push(write_json(&dir.join("split.json"), &split.manifest())?);
    manifest.finish(&s, vec![seed], &dir, outputs)?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct EvaluateSettings {
    data: Option<PathBuf>,
    features: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    plot_script: bool,
    split: SplitSpec,
    sweep: SweepSpec,
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> CliResult<PathBuf> {
    let mut manifest = ManifestBuilder::start("evaluate");
    let mut flags = Overrides::default();
    let methods: Option<Vec<Method>> = args
        .methods
        .map(|m| m.into_iter().map(Method::from).collect());
    flags
        .set("data", args.data)
        .set("features", args.features)
        .set("out_dir", args.out_dir)
        .set("plot_script", args.plot_script.then_some(true))
        .set("split.eval_level_floor", args.floor)
        .set("split.test_fraction", args.test_fraction)
        .set("split.min_history", args.min_history)
        .set("sweep.checkpoints", args.checkpoints)
        .set("sweep.methods", methods)
        .set("sweep.seeds", args.seeds)
        .set("sweep.factor_counts", args.factors)
        .set("sweep.window", args.window)
        .set("sweep.mcmc.iterations", args.iterations)
        .set("sweep.mcmc_feat.iterations", args.iterations)
        .set("sweep.mcmc.burn_in", args.burn_in)
        .set("sweep.mcmc_feat.burn_in", args.burn_in)
        .set("sweep.forest.n_estimators", args.trees);
    let s: EvaluateSettings = resolve(
        &EvaluateSettings::default(),
        &read_config(ctx.config.as_deref())?,
        flags.into_value(),
    )?;
    s.sweep.validate(&s.split)?;

    let data_path = interactions_path(s.data.as_deref())?;
    let side = match s.sweep.methods.iter().find(|m| m.needs_features()) {
        Some(&m) => Some(load_side_inputs(require_features(
            s.features.as_deref(),
            m,
        )?)?),
        None => None,
    };
    let dir = ctx.out_dir(s.out_dir.clone(), "evaluate")?;
    manifest.input(&data_path)?;
    for f in side.iter().flat_map(|x| &x.files) {
        manifest.input(f)?;
    }
    let data = load_interactions(&data_path)?;
    let inputs = FeatureInputs {
        levels: side.as_ref().map(|x| x.levels.as_slice()),
        telemetry: side.as_ref().and_then(|x| x.telemetry.as_ref()),
    };
    let outcome = run_sweep(&data, &s.sweep, &s.split, inputs)?;
    let mut outputs = write_sweep_outputs(&outcome, &dir)?;
    if s.plot_script {
        outputs.push(write_plot_script(&dir, PlotKind::Evaluate)?);
    }
    let mut seeds = s.sweep.seeds.clone();
    seeds.sort();
    seeds.dedup();
    manifest.finish(&s, seeds, &dir, outputs)?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct AnalyzeSettings {
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    truth: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    plot_script: bool,
}

/// Resolves `--model` to the directory written by `train`.
fn model_dir(model: Option<&Path>) -> CliResult<PathBuf> {
    let model = model.ok_or_else(|| CliError::Usage("--model is required".into()))?;
    Ok(if model.is_dir() {
        model.to_path_buf()
    } else {
        model.parent().map(Path::to_path_buf).unwrap_or_default()
    })
}

pub fn analyze(ctx: &Context, args: AnalyzeArgs) -> CliResult<PathBuf> {
    let mut manifest = ManifestBuilder::start("analyze");
    let mut flags = Overrides::default();
    flags
        .set("model", args.model)
        .set("data", args.data)
        .set("truth", args.truth)
        .set("out_dir", args.out_dir)
        .set("plot_script", args.plot_script.then_some(true));
    let s: AnalyzeSettings = resolve(
        &AnalyzeSettings::default(),
        &read_config(ctx.config.as_deref())?,
        flags.into_value(),
    )?;

    let mdir = model_dir(s.model.as_deref())?;
    let model_path = match s.model.as_deref() {
        Some(p) if p.is_file() => p.to_path_buf(),
        _ => mdir.join("model.json"),
    };
    let schema_path = mdir.join("schema.json");
    let split_path = mdir.join("split.json");
    let data_path = interactions_path(s.data.as_deref())?;
    for p in [&model_path, &schema_path, &split_path, &data_path] {
        manifest.input(p)?;
    }
    if let Some(t) = &s.truth {
        manifest.input(t)?;
    }

    let file: FmModelFile = read_json(&model_path).map_err(|e| match e {
        CliError::Json { path, .. } => CliError::Core(Error::Validation(format!(
            "{} is not a factorization machine model",
            path.display()
        ))),
        other => other,
    })?;
    let schema: FeatureSchema = read_json(&schema_path)?;
    let model = file.into_model(&schema.fingerprint())?;

    // the training side is rebuilt from the recorded split; its one-hot
    // layout must be the one the model was fitted on
    let recorded: Value = read_json(&split_path)?;
    let spec: SplitSpec =
        serde_json::from_value(recorded["spec"].clone()).map_err(|e| CliError::Json {
            path: split_path.clone(),
            source: e,
        })?;
    let data: Dataset = load_interactions(&data_path)?;
    let split = split_players(&data, &spec)?;
    let rebuilt = FeatureSet::build(&split, None, None, false)?.schema;
    if rebuilt.identity_fingerprint() != schema.identity_fingerprint() {
        return Err(Error::FingerprintMismatch {
            model: schema.identity_fingerprint(),
            data: rebuilt.identity_fingerprint(),
        }
        .into());
    }

    let truth = s.truth.as_deref().map(load_truth).transpose()?;
    let analysis = levelfm_core::analysis::analyze(&model, &schema, &split.train, truth.as_ref())?;
    let dir = ctx.out_dir(s.out_dir.clone(), "analyze")?;
    let mut outputs = analysis.write_to(&dir)?;
    if s.plot_script {
        outputs.push(write_plot_script(&dir, PlotKind::Analyze)?);
    }
    manifest.finish(&s, vec![spec.seed], &dir, outputs)?;
    Ok(dir)
}
