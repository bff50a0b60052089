use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ecqg_core::data::{
    build_dataset, load_squad_corpus, read_jsonl, write_dataset, BuildConfig, DatasetMeta, DictionaryNer, ExternalNer,
    NerProvider,
};
use ecqg_core::metrics::{evaluate_corpus, render_table, write_text_records, EvalReport, EvalSettings, Smoothing};
use ecqg_core::model::{Checkpoint, DecodeOptions, Mode, Strategy};
use ecqg_core::train::{grad_check, lr_search, multi_seed, predict, train, GradCheckConfig, TrainConfig, COMPONENTS};

#[derive(Parser)]
#[command(name = "ecqg", version, about = "Entity-centric question generation")]
struct Cli {
    /// Caps rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build train/validation/test splits from a SQuAD v2.0 corpus.
    BuildData(BuildDataArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Generate a question for one entity/context pair or a jsonl batch.
    Generate(GenerateArgs),
    /// Score predictions against references.
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NerKind {
    /// Gazetteer lookup (`$ECQG_NER_DICT` or `ner_dict.json` next to the input).
    Stub,
    /// spaCy bridge, or the command in `$ECQG_NER_CMD`.
    External,
}

#[derive(Args)]
struct BuildDataArgs {
    /// A SQuAD file (train pool only) or a directory holding train-v2.0.json and dev-v2.0.json.
    #[arg(long)]
    squad: PathBuf,
    /// Explicit dev file; becomes the test split.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "stub")]
    ner: NerKind,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.074)]
    val_fraction: f64,
}

fn mode_parser() -> impl TypedValueParser<Value = Mode> {
    PossibleValuesParser::new(Mode::ALL.map(Mode::as_str)).map(|s| s.parse::<Mode>().expect("listed mode"))
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory written by build-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's mode.
    #[arg(long, value_parser = mode_parser())]
    mode: Option<Mode>,
    /// Pick the learning rate from the config's grid on validation loss first.
    #[arg(long)]
    lr_search: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, requires = "context", required_unless_present = "input", conflicts_with = "input")]
    entity: Option<String>,
    #[arg(long, requires = "entity")]
    context: Option<String>,
    /// jsonl of samples with id, entity and context.
    #[arg(long, requires = "out")]
    input: Option<PathBuf>,
    /// predictions.jsonl for batch mode.
    #[arg(long, requires = "input")]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "greedy", value_parser = clap::value_parser!(u64).range(1..))]
    beam: Option<u64>,
    #[arg(long)]
    greedy: bool,
    /// Maximum question length in tokens (default: the checkpoint's target length).
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothingArg {
    None,
    Epsilon,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a markdown table row.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Row label for --table.
    #[arg(long, default_value = "model")]
    name: String,
    #[arg(long, value_enum, default_value = "none")]
    smoothing: SmoothingArg,
    #[arg(long, default_value_t = ecqg_core::metrics::DEFAULT_BETA)]
    rouge_beta: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(COMPONENTS))]
    component: String,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Comma-separated model seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 4)]
    d_model: usize,
    #[arg(long, value_parser = mode_parser(), default_value = "full")]
    mode: Mode,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags and input digests sufficient to rerun a command.
#[derive(Serialize)]
struct Provenance {
    command: Vec<String>,
    inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(files: &[PathBuf]) -> Result<Self> {
        let mut inputs = BTreeMap::new();
        for f in files {
            inputs.insert(f.display().to_string(), sha256_file(f)?);
        }
        Ok(Self { command: std::env::args().collect(), inputs })
    }

    fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn build_data(a: BuildDataArgs) -> Result<()> {
    let (corpus, files) = load_squad_corpus(&a.squad, a.dev.as_deref())?;
    let ner: Box<dyn NerProvider> = match a.ner {
        NerKind::Stub => Box::new(DictionaryNer::resolve(&a.squad)?),
        NerKind::External => Box::new(ExternalNer::spacy()?),
    };
    let config = BuildConfig { val_fraction: a.val_fraction, seed: a.seed };
    let output = build_dataset(&corpus, ner.as_ref(), &config)?;
    let prov = Provenance::new(&files)?;
    let meta = DatasetMeta {
        seed: a.seed,
        val_fraction: a.val_fraction,
        train_fraction: 1.0 - a.val_fraction,
        ner_provider: ner.name().to_string(),
        ner_version: ner.version(),
        inputs: prov.inputs,
        counts: output.counts.clone(),
        warnings: output.warnings.clone(),
        command: prov.command,
    };
    write_dataset(&a.out, &output, &meta)?;
    for w in &output.warnings {
        log::warn!("{w}");
    }
    println!(
        "train {} / validation {} / test {} written to {}",
        output.train.len(),
        output.validation.len(),
        output.test.len(),
        a.out.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::from_json_file(&a.config)?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let split = |name: &str| a.data.join(format!("{name}.jsonl"));
    let mut inputs = vec![a.config.clone(), split("train"), split("validation")];
    let train_set = read_jsonl(&inputs[1])?;
    let val_set = read_jsonl(&inputs[2])?;
    if a.lr_search {
        let search = lr_search(&train_set, &val_set, &cfg)?;
        println!("learning rate {} selected from {:?}", search.best, cfg.lr_grid);
        cfg.learning_rate = search.best;
    }
    std::fs::create_dir_all(&a.out)?;
    if cfg.seeds.len() > 1 {
        inputs.push(split("test"));
        let test_set = read_jsonl(&inputs[3])?;
        let opts = DecodeOptions { max_len: cfg.max_target_len, ..DecodeOptions::default() };
        let report = multi_seed(&train_set, &val_set, &test_set, &cfg, &opts, Some(&a.out))?;
        for s in &report.per_seed {
            println!("seed {}: {}", s.seed, ecqg_core::metrics::render_row(&s.report.scores()));
        }
        println!("mean: {}", ecqg_core::metrics::render_row(&report.mean));
    } else {
        let (_, history) = train(&train_set, &val_set, &cfg, Some(&a.out))?;
        println!(
            "{} epochs, {} steps, best epoch {} (validation loss {:.4}), stopped by {:?}",
            history.epochs.len(),
            history.total_steps,
            history.best_epoch,
            history.best_validation_loss,
            history.stop_reason
        );
    }
    Provenance::new(&inputs)?.write(&a.out.join("provenance.json"))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let max_len = a.max_len.unwrap_or(ckpt.model.config.max_target_len);
    let strategy = match (a.greedy, a.beam) {
        (true, _) => Strategy::Greedy,
        (false, Some(k)) => Strategy::Beam(k as usize),
        (false, None) => DecodeOptions::default().strategy,
    };
    let opts = DecodeOptions { strategy, max_len };
    match (a.input, a.out) {
        (Some(input), Some(out)) => {
            let samples = read_jsonl(&input)?;
            let preds = predict(&ckpt, &samples, &opts)?;
            write_text_records(&out, &preds)?;
            let mut files = vec![input];
            files.extend(ckpt_files(&a.ckpt)?);
            Provenance::new(&files)?.write(&out.with_extension("provenance.json"))?;
            println!("{} predictions written to {}", preds.len(), out.display());
        }
        _ => {
            let (Some(entity), Some(context)) = (a.entity, a.context) else {
                bail!("--entity and --context are required without --input");
            };
            let q = ckpt.model.generate(&ckpt.vocab, &entity, &context, &opts)?;
            writeln!(std::io::stdout(), "{q}")?;
        }
    }
    Ok(())
}

fn ckpt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> =
        std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    files.sort();
    Ok(files)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    provenance: Provenance,
}

fn eval(a: EvalArgs) -> Result<()> {
    let settings = EvalSettings {
        bleu_smoothing: match a.smoothing {
            SmoothingArg::None => Smoothing::None,
            SmoothingArg::Epsilon => Smoothing::Epsilon,
        },
        rouge_beta: a.rouge_beta,
    };
    let report = evaluate_corpus(&a.pred, &a.reference, settings)?;
    let file = ReportFile { report: &report, provenance: Provenance::new(&[a.pred.clone(), a.reference.clone()])? };
    std::fs::write(&a.out, serde_json::to_string_pretty(&file)?)?;
    if let Some(t) = &a.table {
        std::fs::write(t, render_table(&[(a.name.clone(), report.scores())]))?;
    }
    println!("{} pairs: {}", report.n, ecqg_core::metrics::render_row(&report.scores()));
    Ok(())
}

/// Returns whether the check passed.
fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let cfg = GradCheckConfig { d_model: a.d_model, mode: a.mode, seeds: a.seeds, ..GradCheckConfig::default() };
    let report = grad_check(&cfg, &a.component, a.step, a.tol)?;
    for p in &report.params {
        println!("{:<40} {:>6} max_rel {:.3e}  max_abs {:.3e}", p.name, p.elements, p.max_rel_err, p.max_abs_err);
    }
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    }
    println!(
        "{} {}: max relative error {:.3e} (tolerance {:.0e}), lambda derivative exact: {}",
        if report.passed { "PASS" } else { "FAIL" },
        report.component,
        report.max_rel_err,
        report.tolerance,
        report.lambda_exact
    );
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::BuildData(a) => build_data(a)?,
        Command::Train(a) => run_train(a)?,
        Command::Generate(a) => generate(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
