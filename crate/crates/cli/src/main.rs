//! `avqa`: synthetic audio-visual quality experiments from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure (e.g. divergence), 2 usage,
//! 3 I/O, 4 malformed input file, 5 a check that ran and failed.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avqa_core::harness::{
    ablation_medians, ablation_table, asymmetric_table, compare_predictions, eval_table, evaluate_model,
    gradcheck_batch, gradcheck_model, history_table, predictions_table, read_predictions, run_ablation,
    run_asymmetric, aligned_mos, summarize_asymmetric, toggle_label, train_seeds, AsymmetricData, AsymmetricSetup,
    Preset, RunMeta, Table, DEFAULT_SEEDS, GRADCHECK_EPSILON, ASYMMETRIC_RUNS,
};
use avqa_core::harness::fmt_g;
use avqa_core::model::{load_checkpoint, save_checkpoint, ModelConfig, TrainHyper};
use avqa_core::synth::{
    generate_split, load_dataset, save_dataset, split_counts, ClipDims, Dataset, GeneratorSpec, ScenarioMix, Split,
    DEFAULT_SEVERITY_LEVEL,
};
use clap::{Args, Parser, Subcommand};

use settings::{io_at, CliResult, ConfigFile, Failure, Section};

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.avqa"))
}

#[derive(Parser)]
#[command(name = "avqa", version, about = "Confidence-aware audio-visual quality assessment on synthetic data")]
struct Cli {
    /// Config file with a [model] section and one section per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test dataset files.
    SynthGen(SynthGenArgs),
    /// Train one model per seed; writes checkpoints and per-epoch history.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Train and test the five module configurations for every seed.
    Ablate(AblateArgs),
    /// Train on mixed degradations, test on video-only and audio-only sets.
    Asymmetric(AsymmetricArgs),
    /// Paired t and Wilcoxon tests on two prediction files.
    Significance(SignificanceArgs),
    /// Compare backpropagated gradients with central differences.
    Gradcheck(GradcheckArgs),
}

/// Model architecture overrides shared by training commands.
#[derive(Args, Default)]
struct ModelFlags {
    #[arg(long)]
    use_avm: Option<bool>,
    #[arg(long)]
    use_vcm: Option<bool>,
    #[arg(long)]
    use_acm: Option<bool>,
    #[arg(long)]
    lambda_pcc: Option<f64>,
}

#[derive(Args)]
struct HyperFlags {
    /// Reference hyperparameters (lr 5e-5) instead of the desk preset.
    #[arg(long)]
    paper_hparams: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct SynthGenArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total clips, split 70:15:15.
    #[arg(long)]
    n: Option<usize>,
    /// First clip seed; also seeds the generator's fixed profiles.
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound of the uniform severity draws for both modalities.
    #[arg(long)]
    severity_level: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.avqa and val.avqa.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    hyper: HyperFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset file, or a directory whose test.avqa is used.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    lambda_pcc: Option<f64>,
    #[command(flatten)]
    hyper: HyperFlags,
}

#[derive(Args)]
struct AsymmetricArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seeds, one run each; defaults to 0..runs.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    severity_level: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    lambda_pcc: Option<f64>,
    #[command(flatten)]
    hyper: HyperFlags,
}

#[derive(Args)]
struct SignificanceArgs {
    #[arg(long)]
    pred_a: Option<PathBuf>,
    #[arg(long)]
    pred_b: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Directory for gradcheck.csv; the report is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale the gradient entering the scores by this factor, simulating a
    /// faulty backward pass.
    #[arg(long)]
    inject_fault: Option<f64>,
    #[command(flatten)]
    model: ModelFlags,
}

/// Model configuration from `[model]` plus flags, with dimensions taken from
/// the data when a dataset is involved.
fn model_config(file: &ConfigFile, flags: &ModelFlags, dims: Option<ClipDims>) -> CliResult<(ModelConfig, Section)> {
    let s = file.section("model");
    let d = ModelConfig::default();
    let mut cfg = ModelConfig {
        channels: s.pick("channels", None, d.channels)?,
        height: s.pick("height", None, d.height)?,
        width: s.pick("width", None, d.width)?,
        audio_dim: s.pick("audio_dim", None, d.audio_dim)?,
        frames: s.pick("frames", None, d.frames)?,
        kinds: s.pick("kinds", None, d.kinds)?,
        use_avm: s.pick("use_avm", flags.use_avm, d.use_avm)?,
        use_vcm: s.pick("use_vcm", flags.use_vcm, d.use_vcm)?,
        use_acm: s.pick("use_acm", flags.use_acm, d.use_acm)?,
        lambda_pcc: s.pick("lambda_pcc", flags.lambda_pcc, d.lambda_pcc)?,
        fusion_hidden: s.pick("fusion_hidden", None, d.fusion_hidden)?,
        kernel_width: s.pick("kernel_width", None, d.kernel_width)?,
        heads: s.pick("heads", None, d.heads)?,
        head_hidden: s.pick("head_hidden", None, d.head_hidden)?,
        combiner_hidden: s.pick("combiner_hidden", None, d.combiner_hidden)?,
        seed: d.seed,
    };
    if let Some(dims) = dims {
        if ClipDims::of(&cfg) != dims {
            log::info!("using clip dimensions from the dataset: {dims:?}");
        }
        cfg = dims.apply(cfg);
    }
    s.finish()?;
    cfg.validate()?;
    Ok((cfg, s))
}

fn hyper(s: &Section, f: &HyperFlags) -> CliResult<(TrainHyper, Preset)> {
    let preset_flag = f.paper_hparams.then(|| Preset::Paper.as_str().to_string());
    let preset: Preset = s.pick("preset", preset_flag, Preset::Desk.as_str().to_string())?.parse()?;
    let base = preset.hyper();
    let h = TrainHyper {
        learning_rate: s.pick("lr", f.lr, base.learning_rate)?,
        batch_size: s.pick("batch_size", f.batch_size, base.batch_size)?,
        weight_decay: s.pick("weight_decay", f.weight_decay, base.weight_decay)?,
        patience: s.pick("patience", f.patience, base.patience)?,
        max_epochs: s.pick("max_epochs", f.max_epochs, base.max_epochs)?,
        ..base
    };
    h.validate()?;
    Ok((h, preset))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_table(table: &Table, dir: &Path, name: &str) -> CliResult<()> {
    let path = dir.join(name);
    table.write(&path).map_err(|e| match e {
        avqa_core::Error::Io(io) => io_at(&path)(io),
        other => other.into(),
    })
}

fn write_meta(dir: &Path, command: &str, sections: &[&Section], seeds: Vec<u64>, preset: Option<Preset>) -> CliResult<()> {
    let meta = RunMeta {
        command: command.into(),
        config_text: sections.iter().map(|s| s.render()).collect::<Vec<_>>().join("\n"),
        seeds,
        preset: preset.map_or("none", Preset::as_str).into(),
    };
    meta.write(dir).map_err(Failure::from)
}

fn load(path: &Path) -> CliResult<Dataset> {
    load_dataset(path).map_err(|e| match e {
        avqa_core::Error::Io(io) => io_at(path)(io),
        avqa_core::Error::Format { offset, message } => {
            Failure::Format(format!("{}: byte {offset}: {message}", path.display()))
        }
        other => other.into(),
    })
}

fn load_split(dir: &Path) -> CliResult<(ClipDims, Split)> {
    let [train, val, test] = SPLITS.map(|n| split_file(dir, n));
    let (train, val, test) = (load(&train)?, load(&val)?, load(&test)?);
    if train.dims != val.dims || train.dims != test.dims {
        return Err(Failure::Format(format!(
            "{}: splits disagree on clip dimensions",
            dir.display()
        )));
    }
    Ok((
        train.dims,
        Split {
            train: train.clips,
            val: val.clips,
            test: test.clips,
        },
    ))
}

fn cmd_synth_gen(file: &ConfigFile, a: &SynthGenArgs) -> CliResult<()> {
    let s = file.section("synth-gen");
    let out: PathBuf = s.require("out", a.out.as_ref().map(|p| p.display().to_string()))?.into();
    let n = s.pick("n", a.n, 200usize)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    let level = s.pick("severity_level", a.severity_level, DEFAULT_SEVERITY_LEVEL)?;
    s.finish()?;
    let (n_train, n_val, n_test) = split_counts(n);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Failure::Usage(format!(
            "n = {n} leaves an empty split ({n_train}/{n_val}/{n_test}); use at least 7 clips"
        )));
    }
    let (cfg, model_section) = model_config(file, &ModelFlags::default(), None)?;
    let mix = ScenarioMix {
        video_level: level,
        audio_level: level,
        ..ScenarioMix::default()
    };
    mix.validate()?;
    let spec = GeneratorSpec::for_config(&cfg, seed);
    let split = generate_split(n_train, n_val, n_test, &mix, &spec, seed)?;

    create_dir(&out)?;
    let dims = ClipDims::of(&cfg);
    for (name, clips) in SPLITS.into_iter().zip([split.train, split.val, split.test]) {
        let ds = Dataset::new(dims, clips)?;
        let path = split_file(&out, name);
        save_dataset(&path, &ds).map_err(|e| match e {
            avqa_core::Error::Io(io) => io_at(&path)(io),
            other => other.into(),
        })?;
        println!("{name}\t{}\t{}", ds.len(), ds.content_hash());
    }
    write_meta(&out, "synth-gen", &[&s, &model_section], vec![seed], None)
}

fn cmd_train(file: &ConfigFile, a: &TrainArgs) -> CliResult<()> {
    let s = file.section("train");
    let data: PathBuf = s.require("data", a.data.as_ref().map(|p| p.display().to_string()))?.into();
    let out: PathBuf = s.require("out", a.out.as_ref().map(|p| p.display().to_string()))?.into();
    let seeds = s.pick_list("seeds", a.seeds.clone(), DEFAULT_SEEDS.to_vec())?;
    let (hyper, preset) = hyper(&s, &a.hyper)?;
    s.finish()?;
    if seeds.is_empty() {
        return Err(Failure::Usage("seeds must not be empty".into()));
    }
    let train = load(&split_file(&data, "train"))?;
    let val = load(&split_file(&data, "val"))?;
    if train.dims != val.dims {
        return Err(Failure::Format("train and val splits disagree on clip dimensions".into()));
    }
    let (cfg, model_section) = model_config(file, &a.model, Some(train.dims))?;

    let outcomes = train_seeds(&train.samples(), &val.samples(), &cfg, &hyper, &seeds)?;
    create_dir(&out)?;
    let mut summary = Table::new(&["seed", "epochs", "best_epoch", "best_val_srocc", "stopped_early", "checkpoint"]);
    for (&seed, o) in seeds.iter().zip(&outcomes) {
        write_table(&history_table(&o.history), &out, &format!("history-seed{seed}.csv"))?;
        let ckpt = format!("model-seed{seed}.ckpt");
        let path = out.join(&ckpt);
        save_checkpoint(&path, &o.model).map_err(|e| match e {
            avqa_core::Error::Io(io) => io_at(&path)(io),
            other => other.into(),
        })?;
        summary.push(vec![
            seed.to_string(),
            o.history.len().to_string(),
            o.best_epoch.to_string(),
            fmt_g(o.best_val_srocc),
            o.stopped_early.to_string(),
            ckpt,
        ]);
        println!(
            "seed {seed}: {} epochs, best val SROCC {} at epoch {}",
            o.history.len(),
            fmt_g(o.best_val_srocc),
            o.best_epoch
        );
    }
    write_table(&summary, &out, "train-summary.csv")?;
    write_meta(&out, "train", &[&s, &model_section], seeds, Some(preset))
}

fn cmd_eval(file: &ConfigFile, a: &EvalArgs) -> CliResult<()> {
    let s = file.section("eval");
    let ckpt: PathBuf = s
        .require("checkpoint", a.checkpoint.as_ref().map(|p| p.display().to_string()))?
        .into();
    let data: PathBuf = s.require("data", a.data.as_ref().map(|p| p.display().to_string()))?.into();
    let out: PathBuf = s.require("out", a.out.as_ref().map(|p| p.display().to_string()))?.into();
    s.finish()?;
    let data = if data.is_dir() { split_file(&data, "test") } else { data };
    let model = load_checkpoint(&ckpt).map_err(|e| match e {
        avqa_core::Error::Io(io) => io_at(&ckpt)(io),
        avqa_core::Error::Format { offset, message } => {
            Failure::Format(format!("{}: byte {offset}: {message}", ckpt.display()))
        }
        other => other.into(),
    })?;
    let ds = load(&data)?;
    if ds.dims != ClipDims::of(model.config()) {
        return Err(Failure::Format(format!(
            "{} does not match the checkpoint's clip dimensions",
            data.display()
        )));
    }
    let samples = ds.samples();
    let (pred, report) = evaluate_model(&model, &samples)?;
    let mos: Vec<f64> = samples.iter().map(|c| c.mos).collect();
    create_dir(&out)?;
    write_table(&eval_table(&report), &out, "eval.csv")?;
    write_table(&predictions_table(&pred, &mos), &out, "predictions.csv")?;
    println!(
        "n = {}  PLCC raw {}  PLCC fitted {}  SROCC {}",
        report.n,
        fmt_g(report.plcc_raw),
        fmt_g(report.plcc_fitted),
        fmt_g(report.srocc)
    );
    write_meta(&out, "eval", &[&s], vec![model.config().seed], None)
}

fn cmd_ablate(file: &ConfigFile, a: &AblateArgs) -> CliResult<()> {
    let s = file.section("ablate");
    let data: PathBuf = s.require("data", a.data.as_ref().map(|p| p.display().to_string()))?.into();
    let out: PathBuf = s.require("out", a.out.as_ref().map(|p| p.display().to_string()))?.into();
    let seeds = s.pick_list("seeds", a.seeds.clone(), DEFAULT_SEEDS.to_vec())?;
    let (hyper, preset) = hyper(&s, &a.hyper)?;
    s.finish()?;
    if seeds.is_empty() {
        return Err(Failure::Usage("seeds must not be empty".into()));
    }
    let (dims, split) = load_split(&data)?;
    let flags = ModelFlags {
        lambda_pcc: a.lambda_pcc,
        ..ModelFlags::default()
    };
    let (cfg, model_section) = model_config(file, &flags, Some(dims))?;
    let rows = run_ablation(&split, &cfg, &hyper, &seeds)?;
    create_dir(&out)?;
    write_table(&ablation_table(&rows), &out, "ablation.csv")?;
    let srocc = ablation_medians(&rows, |r| r.srocc);
    for ((g, plcc), (_, sr)) in ablation_medians(&rows, |r| r.plcc_fitted).into_iter().zip(srocc) {
        println!("{}  median PLCC {}  median SROCC {}", toggle_label(g), fmt_g(plcc), fmt_g(sr));
    }
    write_meta(&out, "ablate", &[&s, &model_section], seeds, Some(preset))
}

fn cmd_asymmetric(file: &ConfigFile, a: &AsymmetricArgs) -> CliResult<()> {
    let s = file.section("asymmetric");
    let out: PathBuf = s.require("out", a.out.as_ref().map(|p| p.display().to_string()))?.into();
    let runs = s.pick("runs", a.runs, ASYMMETRIC_RUNS)?;
    let seeds = s.pick_list("seeds", a.seeds.clone(), (0..runs as u64).collect())?;
    let d = AsymmetricSetup::default();
    let setup = AsymmetricSetup {
        n_train: s.pick("n_train", a.n_train, d.n_train)?,
        n_val: s.pick("n_val", a.n_val, d.n_val)?,
        n_test: s.pick("n_test", a.n_test, d.n_test)?,
        severity_level: s.pick("severity_level", a.severity_level, d.severity_level)?,
        data_seed: s.pick("data_seed", a.data_seed, d.data_seed)?,
    };
    let (hyper, preset) = hyper(&s, &a.hyper)?;
    s.finish()?;
    if seeds.is_empty() {
        return Err(Failure::Usage("seeds must not be empty".into()));
    }
    if setup.n_train == 0 || setup.n_val < 3 || setup.n_test < 2 {
        return Err(Failure::Usage(
            "need n_train >= 1, n_val >= 3 and n_test >= 2".into(),
        ));
    }
    let flags = ModelFlags {
        lambda_pcc: a.lambda_pcc,
        ..ModelFlags::default()
    };
    let (cfg, model_section) = model_config(file, &flags, None)?;
    let spec = GeneratorSpec::for_config(&cfg, setup.data_seed);
    let data = AsymmetricData::generate(&setup, &spec)?;
    let results = run_asymmetric(&data, &cfg, &hyper, &seeds)?;
    create_dir(&out)?;
    write_table(&asymmetric_table(&results), &out, "asymmetric.csv")?;
    for sm in summarize_asymmetric(&results) {
        println!(
            "{:<8} {:<10} median SROCC {}  IQR {}",
            sm.model,
            sm.condition,
            fmt_g(sm.median),
            fmt_g(sm.iqr())
        );
    }
    write_meta(&out, "asymmetric", &[&s, &model_section], seeds, Some(preset))
}

fn cmd_significance(file: &ConfigFile, a: &SignificanceArgs) -> CliResult<()> {
    let s = file.section("significance");
    let pa: PathBuf = s.require("pred_a", a.pred_a.as_ref().map(|p| p.display().to_string()))?.into();
    let pb: PathBuf = s.require("pred_b", a.pred_b.as_ref().map(|p| p.display().to_string()))?.into();
    let alpha = s.pick("alpha", a.alpha, 0.05)?;
    let out: PathBuf = s.require("out", a.out.as_ref().map(|p| p.display().to_string()))?.into();
    s.finish()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::Usage(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let read = |p: &Path| {
        read_predictions(p).map_err(|e| match e {
            avqa_core::Error::Io(io) => io_at(p)(io),
            avqa_core::Error::Csv(c) if c.is_io_error() => Failure::Io(format!("{}: {c}", p.display())),
            other => other.into(),
        })
    };
    let (fa, fb) = (read(&pa)?, read(&pb)?);
    let mos = aligned_mos(&fa, &fb)?;
    let outcome = compare_predictions(&fa.prediction, &fb.prediction, &mos, alpha)?;
    create_dir(&out)?;
    write_table(&outcome.table(), &out, "significance.csv")?;
    match outcome.report {
        None => println!("identical absolute errors: no difference to test"),
        Some(r) => println!(
            "MAE {} vs {}  t-test p {}  Wilcoxon p {} (one-sided {})",
            fmt_g(outcome.mae_a),
            fmt_g(outcome.mae_b),
            fmt_g(r.t_p_two_sided),
            fmt_g(r.wilcoxon_p_two_sided),
            fmt_g(r.wilcoxon_p_one_sided)
        ),
    }
    write_meta(&out, "significance", &[&s], vec![], None)
}

fn cmd_gradcheck(file: &ConfigFile, a: &GradcheckArgs) -> CliResult<()> {
    let s = file.section("gradcheck");
    let batch = s.pick("batch", a.batch, 2usize)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    let epsilon = s.pick("epsilon", a.epsilon, GRADCHECK_EPSILON)?;
    let out: Option<PathBuf> = s
        .optional("out", a.out.as_ref().map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    s.finish()?;
    if batch == 0 {
        return Err(Failure::Usage("batch must be positive".into()));
    }
    let (cfg, model_section) = model_config(file, &a.model, None)?;
    let cfg = cfg.with_seed(seed);
    let clips = gradcheck_batch(&cfg, batch, seed)?;
    let report = gradcheck_model(&cfg, &clips, epsilon, a.inject_fault)?;
    let table = report.table();
    print!("{}", table.to_csv()?);
    println!("# tape vs reference loss: relative gap {}", fmt_g(report.forward_gap));
    if let Some(out) = &out {
        create_dir(out)?;
        write_table(&table, out, "gradcheck.csv")?;
        write_meta(out, "gradcheck", &[&s, &model_section], vec![seed], None)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {} exceeds {}",
            fmt_g(report.worst().max(report.forward_gap)),
            fmt_g(report.tolerance)
        )))
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::SynthGen(a) => cmd_synth_gen(&file, a),
        Command::Train(a) => cmd_train(&file, a),
        Command::Eval(a) => cmd_eval(&file, a),
        Command::Ablate(a) => cmd_ablate(&file, a),
        Command::Asymmetric(a) => cmd_asymmetric(&file, a),
        Command::Significance(a) => cmd_significance(&file, a),
        Command::Gradcheck(a) => cmd_gradcheck(&file, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("avqa: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
