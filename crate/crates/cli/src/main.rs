use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kgdg::error::ErrorClass;
use kgdg::fusion::{batch_fuse, FusionSource, FusionStrategy};
use kgdg::harness::{
    compare_to_reference, parse_report, render_report, run_experiment, ExperimentConfig, Mode, ReportFormat,
};
use kgdg::io::{
    load_detections, load_feature_table, load_manifest, load_model, load_probability_table, parse_feature_table,
    save_model, sha256_hex, write_atomic, ModelArtifact,
};
use kgdg::learn::{fit_symbolic, Dataset, ModelKind, TrainConfig};
use kgdg::metrics::{detection_set_iou, MetricReport};
use kgdg::model::{DRGrade, FeatureSet, FusionWeights, ProbabilityVector};
use kgdg::rules::{aggregate_detections, grade_by_rules, RuleConfig};
use kgdg::synth::{gen_dataset, shift_profile, write_synth, ShiftProfile, SynthConfig};
use kgdg::{KgdgError, Result};

const AFTER_HELP: &str = "\
Seed precedence: --seed, then the KGDG_SEED environment variable, then the config file.
Exit codes: 0 success, 2 usage or configuration error, 3 data error, 4 internal error.";

/// Knowledge-guided domain generalization for diabetic retinopathy grading.
#[derive(Debug, Parser)]
#[command(name = "kgdg", version, after_help = AFTER_HELP)]
struct Cli {
    /// Random seed; overrides KGDG_SEED and the config file.
    #[arg(long, global = true, env = "KGDG_SEED", hide_env_values = true)]
    seed: Option<u64>,
    /// Configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; `-` writes to standard output.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Suppress diagnostics on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset into the --out directory.
    Synth(SynthArgs),
    /// Grade images with the clinical rule engine.
    Grade(GradeArgs),
    /// Train a symbolic model on a feature table.
    Train(TrainArgs),
    /// Fuse deep and symbolic probability tables.
    Fuse(FuseArgs),
    /// Run an SDG or MDG experiment and write its report.
    Eval(EvalArgs),
    /// Classification or detection metrics for a prediction file.
    Metrics(MetricsArgs),
    /// Render a JSON report, or diff it against a published table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Shift preset: mild, severe or vein_hostile. Ignored with --config.
    #[arg(long, default_value = "mild")]
    profile: String,
}

#[derive(Debug, Args)]
struct GradeArgs {
    /// Feature table to grade.
    #[arg(long, conflicts_with = "detections", required_unless_present = "detections")]
    features: Option<PathBuf>,
    /// Detection file to aggregate and grade.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Minimum detection score kept when aggregating detections.
    #[arg(long)]
    min_score: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training feature table.
    #[arg(long)]
    features: PathBuf,
    /// Validation feature table for early stopping.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Learner: gbm, logistic, forest or knn.
    #[arg(long)]
    model: Option<String>,
    /// Feature schema: lesions_only or lesions_vein.
    #[arg(long, default_value = "lesions_only")]
    feature_set: String,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Fusion strategy: selective, max, classwise or weighted.
    #[arg(long)]
    strategy: String,
    /// Deep-branch probability table.
    #[arg(long)]
    deep: PathBuf,
    /// Symbolic-branch probability table.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    symbolic: Option<PathBuf>,
    /// Trained model whose predictions on --features form the symbolic branch.
    #[arg(long, requires = "features")]
    model: Option<PathBuf>,
    /// Feature table for --model.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Deep-branch weight for weighted fusion.
    #[arg(long, required_if_eq("strategy", "weighted"))]
    alpha_dl: Option<f64>,
    /// Knowledge-branch weight for weighted fusion.
    #[arg(long, required_if_eq("strategy", "weighted"))]
    alpha_kl: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Experiment mode; overrides the config file.
    #[arg(long)]
    mode: Option<String>,
    /// Domain manifest; overrides the config file.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output format: json, markdown or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Feature table holding the true grades.
    #[arg(long, requires = "probs")]
    truth: Option<PathBuf>,
    /// Predicted probability table.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Predicted detections.
    #[arg(long, requires = "truth_detections", conflicts_with_all = ["truth", "probs"])]
    pred_detections: Option<PathBuf>,
    /// Reference detections.
    #[arg(long, requires = "pred_detections")]
    truth_detections: Option<PathBuf>,
    /// IoU needed for a detection match.
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// JSON report written by `eval`.
    #[arg(long)]
    input: PathBuf,
    /// Output format: markdown, csv or json.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Diff against a published table instead of rendering.
    #[arg(long)]
    reference: Option<String>,
}

struct Ctx {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: Option<String>,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn fingerprint<T: Serialize>(&self, resolved: &T) -> Result<()> {
        let bytes = serde_json::to_vec(resolved).map_err(|e| KgdgError::Malformed(e.to_string()))?;
        self.note(&format!("config fingerprint: {}", sha256_hex(&bytes)));
        Ok(())
    }

    fn read_config<T: serde::de::DeserializeOwned>(&self, what: &str) -> Result<Option<T>> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let text = read_text(path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| KgdgError::InvalidConfig(format!("{what} config {}: {e}", path.display())))
    }

    fn no_config(&self, cmd: &str) -> Result<()> {
        match self.config {
            Some(_) => Err(KgdgError::InvalidConfig(format!("{cmd} takes no --config"))),
            None => Ok(()),
        }
    }

    /// Writes to --out, or standard output when it is `-` or absent.
    fn emit(&self, bytes: &[u8]) -> Result<()> {
        match self.out.as_deref() {
            None | Some("-") => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(bytes)
                    .and_then(|_| stdout.flush())
                    .map_err(|e| KgdgError::Io { path: "<stdout>".into(), source: e })
            }
            Some(p) => write_atomic(Path::new(p), bytes),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| KgdgError::Io { path: path.display().to_string(), source: e })
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| KgdgError::Malformed(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn synth(ctx: &Ctx, args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match ctx.read_config("synth")? {
        Some(c) => c,
        None => shift_profile(args.profile.parse::<ShiftProfile>()?, 0),
    };
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    ctx.fingerprint(&cfg)?;
    let dir = PathBuf::from(ctx.out.as_deref().unwrap_or("."));
    if dir.as_os_str() == "-" {
        return Err(KgdgError::InvalidConfig("synth writes a directory; --out - is not allowed".into()));
    }
    std::fs::create_dir_all(&dir).map_err(|e| KgdgError::Io { path: dir.display().to_string(), source: e })?;
    let domains = gen_dataset(&cfg)?;
    let experiment = {
        let mut e = ExperimentConfig::new(Mode::Sdg);
        e.domains.manifest = Some("manifest.json".into());
        e
    };
    write_synth(&domains, &dir, &experiment.seeds)?;
    write_atomic(&dir.join("experiment.json"), &to_json(&experiment)?)?;
    write_atomic(&dir.join("synth_config.json"), &to_json(&cfg)?)?;
    ctx.note(&format!("wrote {} domains to {}", domains.len(), dir.display()));
    Ok(())
}

fn grade(ctx: &Ctx, args: GradeArgs) -> Result<()> {
    let rules: RuleConfig = ctx.read_config("rules")?.unwrap_or_default();
    rules.validate()?;
    ctx.fingerprint(&rules)?;
    let min_score = args.min_score.unwrap_or(rules.min_score);
    let features: Vec<(String, kgdg::model::FeatureVector)> = match (&args.features, &args.detections) {
        (Some(f), _) => load_feature_table(f)?.into_iter().map(|e| (e.image_id, e.features)).collect(),
        (None, Some(d)) => {
            load_detections(d)?.into_iter().map(|(id, dets)| (id, aggregate_detections(&dets, min_score))).collect()
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let mut out = String::from("image_id,grade,fired_rules\n");
    for (id, f) in &features {
        let t = grade_by_rules(f, &rules);
        let fired: Vec<String> = t.fired_rules().iter().map(|r| format!("{r:?}")).collect();
        out.push_str(&format!("{id},{},{}\n", t.grade().value(), fired.join(";")));
    }
    ctx.emit(out.as_bytes())
}

fn train(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = ctx.read_config("train")?.unwrap_or_default();
    if let Some(m) = &args.model {
        cfg.model_kind = m.parse::<ModelKind>()?;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let set: FeatureSet = args.feature_set.parse()?;
    ctx.fingerprint(&(&cfg, set))?;
    let out = match ctx.out.as_deref() {
        None | Some("-") => return Err(KgdgError::InvalidConfig("train needs --out <model file>".into())),
        Some(p) => PathBuf::from(p),
    };
    let train_text = read_text(&args.features)?;
    let (_, train_ex) = parse_feature_table(&train_text)?;
    let mut fp_input = train_text.into_bytes();
    let valid = match &args.valid {
        Some(v) => {
            let text = read_text(v)?;
            let (_, ex) = parse_feature_table(&text)?;
            fp_input.extend(text.as_bytes());
            Dataset::from_examples(&ex, set)?
        }
        None => Dataset::from_examples(&[], set)?,
    };
    fp_input.extend(serde_json::to_vec(&(&cfg, set)).map_err(|e| KgdgError::Malformed(e.to_string()))?);
    let model = fit_symbolic(&Dataset::from_examples(&train_ex, set)?, &valid, &cfg)?;
    save_model(&ModelArtifact::new(model, sha256_hex(&fp_input)), &out)?;
    ctx.note(&format!("wrote {} model to {}", cfg.model_kind.as_str(), out.display()));
    Ok(())
}

fn fuse(ctx: &Ctx, args: FuseArgs) -> Result<()> {
    ctx.no_config("fuse")?;
    let strategy: FusionStrategy = args.strategy.parse()?;
    let weights = match (strategy, args.alpha_dl, args.alpha_kl) {
        (FusionStrategy::Weighted, Some(a), Some(b)) => Some(FusionWeights::new(a, b)?),
        _ => None,
    };
    ctx.fingerprint(&(strategy, weights))?;
    let deep = load_probability_table(&args.deep)?;
    for id in &deep.renormalized {
        ctx.note(&format!("warning: renormalized deep probabilities for {id}"));
    }
    let symbolic: BTreeMap<String, ProbabilityVector> = match (&args.symbolic, &args.model, &args.features) {
        (Some(p), _, _) => load_probability_table(p)?.rows,
        (None, Some(m), Some(f)) => {
            let artifact = load_model(m)?;
            let set = artifact
                .parameters
                .feature_set()
                .ok_or_else(|| KgdgError::SchemaMismatch("model schema is not a known feature set".into()))?;
            load_feature_table(f)?
                .iter()
                .map(|e| Ok((e.image_id.clone(), artifact.parameters.predict_row(&e.features.to_row(set)?)?)))
                .collect::<Result<_>>()?
        }
        _ => unreachable!("clap requires a symbolic input"),
    };
    let fused = batch_fuse(strategy, &deep.rows, &symbolic, weights.as_ref())?;
    let mut out = String::from("image_id,grade,source,score\n");
    for (id, f) in &fused {
        let source = match f.source {
            FusionSource::Deep => "deep",
            FusionSource::Symbolic => "symbolic",
            FusionSource::Blended => "blended",
        };
        out.push_str(&format!("{id},{},{source},{}\n", f.grade.value(), f.winning_score));
    }
    ctx.emit(out.as_bytes())
}

fn eval(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let (mut cfg, base) = match &ctx.config {
        Some(path) => {
            let cfg = ExperimentConfig::parse(&read_text(path)?)?;
            (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => {
            let mode = args.mode.as_deref().unwrap_or("sdg").parse()?;
            (ExperimentConfig::new(mode), PathBuf::new())
        }
    };
    if let Some(m) = &args.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(s) = ctx.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let format: ReportFormat = args.format.parse()?;
    let manifest_path = match (&args.manifest, &cfg.domains.manifest) {
        (Some(m), _) => m.clone(),
        (None, Some(m)) => base.join(m),
        (None, None) => {
            return Err(KgdgError::InvalidConfig("no manifest: pass --manifest or set domains.manifest".into()))
        }
    };
    let manifest = load_manifest(&manifest_path)?;
    let report = run_experiment(&cfg, &manifest)?;
    ctx.note(&format!("config fingerprint: {}", report.config_fingerprint));
    let text = render_report(&report, format)?;
    match ctx.out.as_deref() {
        None => write_atomic(Path::new(&format!("report.{}", extension(format))), text.as_bytes()),
        Some(_) => ctx.emit(text.as_bytes()),
    }
}

fn extension(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Json => "json",
        ReportFormat::Markdown => "md",
        ReportFormat::Csv => "csv",
    }
}

fn metrics(ctx: &Ctx, args: MetricsArgs) -> Result<()> {
    ctx.no_config("metrics")?;
    ctx.fingerprint(&args.iou_threshold)?;
    if let (Some(p), Some(t)) = (&args.pred_detections, &args.truth_detections) {
        let pred = load_detections(p)?;
        let truth = load_detections(t)?;
        let mut ids: Vec<&String> = pred.keys().chain(truth.keys()).collect();
        ids.sort();
        ids.dedup();
        let reports: BTreeMap<String, _> = ids
            .into_iter()
            .map(|id| {
                let empty = vec![];
                let r = detection_set_iou(
                    pred.get(id.as_str()).unwrap_or(&empty),
                    truth.get(id.as_str()).unwrap_or(&empty),
                    args.iou_threshold,
                );
                (id.clone(), r)
            })
            .collect();
        return ctx.emit(&to_json(&reports)?);
    }
    let (Some(t), Some(p)) = (&args.truth, &args.probs) else {
        return Err(KgdgError::InvalidConfig(
            "metrics needs --truth/--probs or --pred-detections/--truth-detections".into(),
        ));
    };
    let truth = load_feature_table(t)?;
    let probs = load_probability_table(p)?;
    let mut y_true: Vec<DRGrade> = vec![];
    let mut scores: Vec<ProbabilityVector> = vec![];
    for e in &truth {
        let pv = probs.rows.get(&e.image_id).ok_or_else(|| KgdgError::UnknownImageId(e.image_id.clone()))?;
        y_true.push(e.grade);
        scores.push(*pv);
    }
    if let Some(extra) = probs.rows.keys().find(|k| !truth.iter().any(|e| &e.image_id == *k)) {
        return Err(KgdgError::UnknownImageId(extra.clone()));
    }
    let y_pred: Vec<DRGrade> = scores.iter().map(|p| p.argmax()).collect();
    ctx.emit(&to_json(&MetricReport::compute(&y_true, &y_pred, Some(&scores))?)?)
}

fn report(ctx: &Ctx, args: ReportArgs) -> Result<()> {
    ctx.no_config("report")?;
    let report = parse_report(&read_text(&args.input)?)?;
    ctx.note(&format!("config fingerprint: {}", report.config_fingerprint));
    match &args.reference {
        Some(id) => ctx.emit(compare_to_reference(&report, id)?.render().as_bytes()),
        None => ctx.emit(render_report(&report, args.format.parse()?)?.as_bytes()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, config: cli.config, out: cli.out, quiet: cli.quiet };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Grade(a) => grade(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Fuse(a) => fuse(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Metrics(a) => metrics(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Data => 3,
                ErrorClass::Internal => 4,
            })
        }
    }
}
