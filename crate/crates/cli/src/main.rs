use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use spoken_latex::channel::{builtin_profiles, ChannelProfile};
use spoken_latex::corpus::{generate_corpus_with_stats, load_corpus, oracle_round_trip, save_corpus, CorpusError};
use spoken_latex::metrics::{evaluate_corpus, format_table, EvalReport, OracleInput, System};
use spoken_latex::neural::LinearSchedule;
use spoken_latex::pipeline::{
    train_with_progress, Coupling, DecodeConfig, DecodeMode, Pipeline, PipelineError, TrainConfig,
};
use spoken_latex::verbalize::{GrammarConfig, VerbalStyle};

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING: u8 = 3;

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

fn config_err(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        msg: msg.to_string(),
    }
}

fn missing(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_MISSING,
        msg: msg.to_string(),
    }
}

#[derive(Parser)]
#[command(name = "spoken-latex", version, about = "Spoken mathematics to LaTeX")]
struct Cli {
    /// JSON file with one object per subcommand, keyed by subcommand name.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Datagen(DatagenArgs),
    /// Train the corrector and translator.
    Train(TrainArgs),
    /// Score systems on a corpus.
    Eval(EvalArgs),
    /// Translate one pair of recognizer hypotheses.
    Infer(InferArgs),
    /// Check that the spoken parser inverts the verbalizer.
    OracleCheck(OracleArgs),
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DatagenArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    /// Comma-separated built-in profile names.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    profiles: Option<Vec<String>>,
    /// Extra profile tables; the file stem becomes the profile name.
    #[arg(long = "profile-file")]
    #[serde(skip_serializing_if = "Option::is_none")]
    profile_files: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_depth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_spoken_len: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
enum CouplingArg {
    Soft,
    Detached,
    JustConnect,
    TranslatorOnly,
}

impl From<CouplingArg> for Coupling {
    fn from(c: CouplingArg) -> Coupling {
        match c {
            CouplingArg::Soft => Coupling::Soft,
            CouplingArg::Detached => Coupling::Detached,
            CouplingArg::JustConnect => Coupling::JustConnect,
            CouplingArg::TranslatorOnly => Coupling::TranslatorOnly,
        }
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling: Option<CouplingArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_se: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_latex: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_min: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_fraction: Option<f64>,
    /// Fraction of leading epochs a soft run trains detached.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    soft_warmup: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq, Debug)]
#[serde(rename_all = "kebab-case")]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
    /// Trained pipeline directory; repeat to compare several.
    #[arg(long = "model")]
    #[serde(skip_serializing_if = "Option::is_none")]
    models: Option<Vec<PathBuf>>,
    /// Rule-based parser on a record field: `se` or a profile name.
    #[arg(long = "oracle")]
    #[serde(skip_serializing_if = "Option::is_none")]
    oracles: Option<Vec<String>>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<ReportFormat>,
    /// Also write the reports as JSON here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beam: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct InferArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    asr1: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    asr2: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beam: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OracleArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_depth: Option<usize>,
    /// Drop the closing quantity markers before parsing, to show that the
    /// check catches a broken grammar.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    inject_fault: bool,
}

/// Overlays flags on the subcommand's section of the config file.
fn merge<T: Serialize + DeserializeOwned>(flags: T, file: Option<&Value>, section: &str) -> Result<T, Failure> {
    let Some(file) = file else { return Ok(flags) };
    let mut base = match file.get(section) {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(config_err(format!("config section `{section}` must be an object"))),
        None => return Ok(flags),
    };
    if let Value::Object(over) = serde_json::to_value(&flags).map_err(config_err)? {
        base.extend(over);
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| config_err(format!("config section `{section}`: {e}")))
}

fn read_config(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| missing(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(config_err("config file must hold a JSON object"));
    }
    Ok(v)
}

fn load(path: &Path) -> Result<Vec<spoken_latex::MathSample>, Failure> {
    load_corpus(path).map_err(|e| match e {
        CorpusError::Io(err) => missing(format!("{}: {err}", path.display())),
        other => config_err(format!("{}: {other}", path.display())),
    })
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Io { .. } | PipelineError::Checkpoint(_) => missing(e),
        other => config_err(other),
    }
}

fn decode_config(beam: Option<usize>) -> DecodeConfig {
    match beam {
        Some(k) if k > 1 => DecodeConfig {
            mode: DecodeMode::Beam,
            beam_width: k,
            ..DecodeConfig::default()
        },
        _ => DecodeConfig::default(),
    }
}

fn datagen(a: DatagenArgs) -> Result<(), Failure> {
    let out = a.out.ok_or_else(|| config_err("--out is required"))?;
    let mut available = builtin_profiles();
    for path in a.profile_files.unwrap_or_default() {
        let text = std::fs::read_to_string(&path).map_err(|e| missing(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        let p = ChannelProfile::from_table(name, &text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        available.retain(|q| q.name != p.name);
        available.push(p);
    }
    let profiles: Vec<ChannelProfile> = match a.profiles {
        None => available,
        Some(names) => names
            .iter()
            .map(|n| {
                available
                    .iter()
                    .find(|p| &p.name == n)
                    .cloned()
                    .ok_or_else(|| config_err(format!("unknown profile `{n}`")))
            })
            .collect::<Result<_, _>>()?,
    };
    let defaults = GrammarConfig::default();
    let cfg = GrammarConfig {
        max_depth: a.max_depth.unwrap_or(defaults.max_depth),
        max_spoken_len: a.max_spoken_len.or(defaults.max_spoken_len),
        ..defaults
    };
    let n = a.n.unwrap_or(20_000);
    let (corpus, stats) = generate_corpus_with_stats(n, &cfg, &profiles, &VerbalStyle::all(), a.seed.unwrap_or(0))
        .map_err(config_err)?;
    save_corpus(&out, &corpus).map_err(|e| config_err(format!("{}: {e}", out.display())))?;
    println!("wrote {} records to {}", corpus.len(), out.display());
    println!("{}", serde_json::to_string_pretty(&stats).map_err(config_err)?);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let corpus_path = a.corpus.ok_or_else(|| config_err("--corpus is required"))?;
    let out = a.out.ok_or_else(|| config_err("--out is required"))?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        lambda_se: a.lambda_se.unwrap_or(d.lambda_se),
        lambda_latex: a.lambda_latex.unwrap_or(d.lambda_latex),
        coupling: a.coupling.map(Coupling::from).unwrap_or(d.coupling),
        epochs: a.epochs.unwrap_or(d.epochs),
        steps_per_epoch: a.steps_per_epoch.or(d.steps_per_epoch),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        width: a.width.unwrap_or(d.width),
        seed: a.seed.unwrap_or(d.seed),
        lr: LinearSchedule {
            max: a.lr_max.unwrap_or(d.lr.max),
            min: a.lr_min.unwrap_or(d.lr.min),
        },
        val_fraction: a.val_fraction.unwrap_or(d.val_fraction),
        soft_warmup: a.soft_warmup.unwrap_or(d.soft_warmup),
        ..d
    };
    cfg.validate().map_err(config_err)?;
    let corpus = load(&corpus_path)?;
    let (pipeline, history) = train_with_progress(&corpus, &cfg, |r| {
        eprintln!(
            "epoch {:>2}  steps {:>6}  L {:.4}  L_se {:.4}  L_latex {:.4}  val L {:.4}  val CER {:.4}",
            r.epoch, r.steps, r.train.total, r.train.se, r.train.latex, r.val.total, r.val_cer
        )
    })
    .map_err(|e| match e {
        PipelineError::Diverged { .. } => Failure {
            code: EXIT_CHECK,
            msg: e.to_string(),
        },
        other => config_err(other),
    })?;
    pipeline.save(&out).map_err(pipeline_failure)?;
    let hist_path = out.join("history.json");
    let text = serde_json::to_string_pretty(&history).map_err(config_err)?;
    std::fs::write(&hist_path, text).map_err(|e| config_err(format!("{}: {e}", hist_path.display())))?;
    println!("saved pipeline to {} (best epoch {})", out.display(), history.best_epoch);
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let corpus_path = a.corpus.ok_or_else(|| config_err("--corpus is required"))?;
    let models = a.models.unwrap_or_default();
    let oracles = a.oracles.unwrap_or_default();
    if models.is_empty() && oracles.is_empty() {
        return Err(config_err("give at least one --model or --oracle"));
    }
    let mut corpus = load(&corpus_path)?;
    if let Some(limit) = a.limit {
        corpus.truncate(limit);
    }
    let dc = decode_config(a.beam);
    let mut reports: Vec<EvalReport> = Vec::new();
    for o in &oracles {
        let input = if o == "se" {
            OracleInput::CleanSpoken
        } else {
            OracleInput::Hypothesis(o.clone())
        };
        reports.push(evaluate_corpus(&System::Oracle(input), &corpus, &dc).map_err(pipeline_failure)?);
    }
    for m in &models {
        let p = Pipeline::load(m).map_err(pipeline_failure)?;
        reports.push(evaluate_corpus(&System::Pipeline(&p), &corpus, &dc).map_err(pipeline_failure)?);
    }
    let json = serde_json::to_string_pretty(&reports).map_err(config_err)?;
    if let Some(out) = &a.out {
        std::fs::write(out, &json).map_err(|e| config_err(format!("{}: {e}", out.display())))?;
    }
    match a.report.unwrap_or(ReportFormat::Table) {
        ReportFormat::Table => print!("{}", format_table(&reports)),
        ReportFormat::Json => println!("{json}"),
    }
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<(), Failure> {
    let model = a.model.ok_or_else(|| config_err("--model is required"))?;
    let asr1 = a.asr1.ok_or_else(|| config_err("--asr1 is required"))?;
    let asr2 = a.asr2.unwrap_or_else(|| asr1.clone());
    if !model.join("pipeline.json").is_file() {
        return Err(missing(format!("no pipeline checkpoint in {}", model.display())));
    }
    let p = Pipeline::load(&model).map_err(pipeline_failure)?;
    let latex = p.infer(&asr1, &asr2, &decode_config(a.beam)).map_err(pipeline_failure)?;
    println!("{latex}");
    Ok(())
}

fn oracle_cmd(a: OracleArgs) -> Result<(), Failure> {
    let cfg = GrammarConfig {
        max_depth: a.max_depth.unwrap_or(4),
        max_spoken_len: None,
        ..GrammarConfig::default()
    };
    cfg.validate().map_err(config_err)?;
    let n = a.n.unwrap_or(10_000);
    let styles = VerbalStyle::all();
    let summary = if a.inject_fault {
        oracle_round_trip(n, &cfg, &styles, a.seed.unwrap_or(0), |s| s.replace(" end quantity", ""))
    } else {
        oracle_round_trip(n, &cfg, &styles, a.seed.unwrap_or(0), str::to_string)
    };
    println!("{}/{} round-trips ok", summary.passed, summary.expressions);
    for (want, se, got) in &summary.failures {
        println!("  expected {want}\n  spoken   {se}\n  got      {got}");
    }
    if summary.ok() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK,
            msg: format!("{} expressions failed", summary.expressions - summary.passed),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = cli.config.as_deref().map(read_config).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Datagen(a) => datagen(merge(a, file, "datagen")?),
        Command::Train(a) => train_cmd(merge(a, file, "train")?),
        Command::Eval(a) => eval_cmd(merge(a, file, "eval")?),
        Command::Infer(a) => infer_cmd(merge(a, file, "infer")?),
        Command::OracleCheck(a) => oracle_cmd(merge(a, file, "oracle-check")?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
