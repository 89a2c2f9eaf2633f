//! Command-line entry point: run, profile, eval, sweep, gen-weights,
//! inspect.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Every output
//! file embeds the fully resolved configuration so re-running with it
//! reproduces the file bitwise; wall-clock timings go to stderr only.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mspe::harness::{
    build_induction_model, build_random_model, evaluate, ratio_sweep, EvalReport,
    EvalRunner, RetrievalTask, TaskKind, TaskSpec,
};
use mspe::model::{load_weights, save_weights, Model, ModelConfig, OutputProjection};
use mspe::pipeline::{run_baseline, run_mspoe, GenerationResult, PipelineConfig, ScoringMode};
use mspe::posenc::PositionEncoderSpec;
use mspe::profiler::{self, ProfilerConfig, Strategy};

#[derive(Parser)]
#[command(name = "mspe", version, about = "Desk-scale transformer engine with pluggable position-index rescaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tokens from a prompt with a chosen position encoder.
    Run(RunArgs),
    /// Score attention heads and dump the resulting ratio assignment.
    Profile(ProfileArgs),
    /// Sweep the relevant item across every slot and report Average/Gap.
    Eval(EvalArgs),
    /// Evaluate a list of uniform rescaling ratios.
    Sweep(SweepArgs),
    /// Write a weight file (built-in fixture or seeded random).
    GenWeights(GenWeightsArgs),
    /// Print the config and tensor table of a weight file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ModelArg {
    /// Weight file path, or the built-in fixture name "induction".
    #[arg(long)]
    model: String,
}

#[derive(Args)]
struct ProfilerArgs {
    /// Threshold multiplier for the position-awareness score.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Smallest rescaling ratio of the schedule.
    #[arg(long, default_value_t = 1.2)]
    rmin: f64,
    /// Largest rescaling ratio of the schedule.
    #[arg(long, default_value_t = 1.8)]
    rmax: f64,
    /// Head-ranking strategy: aware | random:<seed> | sequential | entropy.
    #[arg(long, default_value = "aware")]
    strategy: String,
    /// Scoring mode: separate | inplace.
    #[arg(long = "scoring-mode", default_value = "separate")]
    scoring_mode: String,
    /// Drop this many leading context positions before scoring.
    #[arg(long = "exclude-first-k", default_value_t = 0)]
    exclude_first_k: usize,
}

#[derive(Args)]
struct TaskArgs {
    /// Task family: kv | mdqa.
    #[arg(long)]
    task: String,
    /// Number of key-value pairs or documents.
    #[arg(long = "n-items")]
    n_items: Option<usize>,
    /// Tokens per document (mdqa only).
    #[arg(long = "item-len")]
    item_len: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Comma-separated prompt token ids, e.g. "1,5,3".
    #[arg(long = "prompt-tokens", conflicts_with = "task")]
    prompt_tokens: Option<String>,
    #[arg(long, required_unless_present = "prompt_tokens")]
    task: Option<String>,
    #[arg(long = "n-items")]
    n_items: Option<usize>,
    #[arg(long = "item-len")]
    item_len: Option<usize>,
    /// Slot of the relevant item for task-generated prompts.
    #[arg(long, default_value_t = 0)]
    position: usize,
    /// Seed for task-generated prompts.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Position encoder: rope | pi:<ratio> | self-extend:<group>,<window> | mspoe.
    #[arg(long, default_value = "rope")]
    encoder: String,
    #[arg(long = "max-new", default_value_t = 8)]
    max_new: usize,
    #[command(flatten)]
    profiler: ProfilerArgs,
    /// Write the scoring-pass attention snapshot as JSON.
    #[arg(long = "dump-snapshot")]
    dump_snapshot: Option<PathBuf>,
    /// Write the installed ratio assignment as JSON.
    #[arg(long = "dump-ratios")]
    dump_ratios: Option<PathBuf>,
    /// Write the full run result as JSON (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long = "prompt-tokens", conflicts_with = "task")]
    prompt_tokens: Option<String>,
    #[arg(long, required_unless_present = "prompt_tokens")]
    task: Option<String>,
    #[arg(long = "n-items")]
    n_items: Option<usize>,
    #[arg(long = "item-len")]
    item_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    position: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    profiler: ProfilerArgs,
    /// Write per-head scores and ratios as CSV (layer,head,score,ratio).
    #[arg(long = "out-scores")]
    out_scores: Option<PathBuf>,
    /// Write the ratio assignment as JSON.
    #[arg(long = "out-ratios")]
    out_ratios: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value = "rope")]
    encoder: String,
    #[arg(long = "n-samples", default_value_t = 100)]
    n_samples: usize,
    /// Base seed; sample s uses seed base+s at every slot.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    profiler: ProfilerArgs,
    #[arg(long = "out-json")]
    out_json: Option<PathBuf>,
    #[arg(long = "out-csv")]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    task: TaskArgs,
    /// Comma-separated uniform ratios to evaluate.
    #[arg(long, default_value = "0.5,1.0,1.5,2.0,2.5")]
    ratios: String,
    #[arg(long = "n-samples", default_value_t = 100)]
    n_samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "out-json")]
    out_json: Option<PathBuf>,
    #[arg(long = "out-csv")]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenWeightsArgs {
    /// Built-in fixture to materialize ("induction").
    #[arg(long, conflicts_with = "random")]
    fixture: Option<String>,
    /// Generate seeded random weights instead of a fixture.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "n-layers", default_value_t = 4)]
    n_layers: usize,
    #[arg(long = "n-heads", default_value_t = 8)]
    n_heads: usize,
    #[arg(long = "head-dim", default_value_t = 8)]
    head_dim: usize,
    #[arg(long = "mlp-dim", default_value_t = 16)]
    mlp_dim: usize,
    #[arg(long = "vocab-size", default_value_t = 32)]
    vocab_size: usize,
    #[arg(long = "max-seq-len", default_value_t = 128)]
    max_seq_len: usize,
    #[arg(long = "rope-base", default_value_t = 10000.0)]
    rope_base: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    model: ModelArg,
}

enum CliError {
    Usage(String),
    Runtime(mspe::Error),
}

impl From<mspe::Error> for CliError {
    fn from(e: mspe::Error) -> Self {
        Self::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Prints to stdout, tolerating a closed pipe (e.g. `mspe inspect | head`).
fn emit(content: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{content}");
}

enum EncoderChoice {
    Fixed(PositionEncoderSpec),
    /// Uniform rescaling at the average of the multi-scale schedule,
    /// `(rmin + rmax) / 2`.
    PiAverage,
    MsPoe,
}

const ENCODER_FORMS: &str = "rope | pi[:<ratio>] | self-extend:<group>,<window> | mspoe";

fn parse_encoder(s: &str) -> CliResult<EncoderChoice> {
    if s == "rope" {
        return Ok(EncoderChoice::Fixed(PositionEncoderSpec::Standard));
    }
    if s == "mspoe" {
        return Ok(EncoderChoice::MsPoe);
    }
    if s == "pi" {
        return Ok(EncoderChoice::PiAverage);
    }
    if let Some(r) = s.strip_prefix("pi:") {
        let ratio: f64 = match r.parse() {
            Ok(v) => v,
            Err(_) => return usage(format!("bad pi ratio {r:?}; valid encoders: {ENCODER_FORMS}")),
        };
        return match PositionEncoderSpec::uniform(ratio) {
            Ok(spec) => Ok(EncoderChoice::Fixed(spec)),
            Err(e) => usage(format!("{e}; valid encoders: {ENCODER_FORMS}")),
        };
    }
    if let Some(gw) = s.strip_prefix("self-extend:") {
        let parts: Vec<&str> = gw.split(',').collect();
        if parts.len() != 2 {
            return usage(format!(
                "self-extend needs <group>,<window>; valid encoders: {ENCODER_FORMS}"
            ));
        }
        let (group, window) = match (parts[0].parse(), parts[1].parse()) {
            (Ok(g), Ok(w)) => (g, w),
            _ => return usage(format!("bad self-extend parameters {gw:?}; valid encoders: {ENCODER_FORMS}")),
        };
        return match PositionEncoderSpec::grouped(group, window) {
            Ok(spec) => Ok(EncoderChoice::Fixed(spec)),
            Err(e) => usage(format!("{e}; valid encoders: {ENCODER_FORMS}")),
        };
    }
    usage(format!("unknown encoder {s:?}; valid encoders: {ENCODER_FORMS}"))
}

fn parse_strategy(s: &str) -> CliResult<Strategy> {
    match s {
        "aware" => Ok(Strategy::PositionAware),
        "sequential" => Ok(Strategy::Sequential),
        "entropy" => Ok(Strategy::Entropy),
        _ => {
            if let Some(seed) = s.strip_prefix("random:") {
                match seed.parse() {
                    Ok(seed) => Ok(Strategy::Random { seed }),
                    Err(_) => usage(format!("bad random seed {seed:?}")),
                }
            } else {
                usage(format!(
                    "unknown strategy {s:?}; valid: aware | random:<seed> | sequential | entropy"
                ))
            }
        }
    }
}

fn parse_scoring_mode(s: &str) -> CliResult<ScoringMode> {
    match s {
        "separate" => Ok(ScoringMode::SeparatePass),
        "inplace" => Ok(ScoringMode::InPlacePerLayer),
        _ => usage(format!("unknown scoring mode {s:?}; valid: separate | inplace")),
    }
}

impl ProfilerArgs {
    fn pi_average_spec(&self) -> CliResult<PositionEncoderSpec> {
        let ratio = (self.rmin + self.rmax) / 2.0;
        match PositionEncoderSpec::uniform(ratio) {
            Ok(spec) => Ok(spec),
            Err(e) => usage(e.to_string()),
        }
    }

    fn pipeline_config(&self) -> CliResult<PipelineConfig> {
        let cfg = PipelineConfig {
            profiler: ProfilerConfig {
                alpha: self.alpha,
                strategy: parse_strategy(&self.strategy)?,
                r_min: self.rmin,
                r_max: self.rmax,
                exclude_first_k: self.exclude_first_k,
            },
            scoring_mode: parse_scoring_mode(&self.scoring_mode)?,
            encoder_baseline: PositionEncoderSpec::Standard,
        };
        if let Err(e) = cfg.profiler.validate() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }
}

fn resolve_model(name: &str) -> CliResult<Model> {
    if name == "induction" {
        return Ok(build_induction_model());
    }
    let path = Path::new(name);
    if !path.exists() {
        return usage(format!(
            "model {name:?} not found (expected a weight file or the fixture name \"induction\")"
        ));
    }
    let (config, weights) = load_weights(path)?;
    Ok(Model::new(config, weights)?)
}

fn parse_task_kind(s: &str) -> CliResult<TaskKind> {
    match s {
        "kv" => Ok(TaskKind::KvRetrieval),
        "mdqa" => Ok(TaskKind::Mdqa),
        _ => usage(format!("unknown task {s:?}; valid: kv | mdqa")),
    }
}

fn task_spec(kind: TaskKind, n_items: Option<usize>, item_len: Option<usize>) -> TaskSpec {
    match kind {
        TaskKind::KvRetrieval => TaskSpec::kv(n_items.unwrap_or(8)),
        TaskKind::Mdqa => TaskSpec::mdqa(n_items.unwrap_or(10), item_len.unwrap_or(6)),
    }
}

fn parse_token_list(s: &str) -> CliResult<Vec<u32>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.parse() {
            Ok(t) => out.push(t),
            Err(_) => return usage(format!("bad token id {part:?} in prompt list")),
        }
    }
    if out.is_empty() {
        return usage("prompt token list is empty");
    }
    Ok(out)
}

fn parse_ratio_list(s: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => out.push(r),
            _ => return usage(format!("bad ratio {part:?} in sweep list")),
        }
    }
    if out.is_empty() {
        return usage("ratio list is empty");
    }
    Ok(out)
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| CliError::Runtime(e.into())),
        None => {
            emit(content);
            Ok(())
        }
    }
}

fn write_file(path: &Path, content: &str) -> CliResult<()> {
    std::fs::write(path, content).map_err(|e| CliError::Runtime(e.into()))
}

/// Prompt for run/profile: explicit token list or a generated task.
fn resolve_prompt(
    prompt_tokens: &Option<String>,
    task: &Option<String>,
    n_items: Option<usize>,
    item_len: Option<usize>,
    seed: u64,
    position: usize,
) -> CliResult<(Vec<u32>, Option<RetrievalTask>, serde_json::Value)> {
    if let Some(list) = prompt_tokens {
        let tokens = parse_token_list(list)?;
        let echo = serde_json::json!({ "prompt_tokens": list });
        return Ok((tokens, None, echo));
    }
    let kind = parse_task_kind(task.as_deref().expect("clap enforces task or prompt"))?;
    let spec = task_spec(kind, n_items, item_len);
    if position >= spec.n_items {
        return usage(format!(
            "position {position} out of range for {} items",
            spec.n_items
        ));
    }
    let t = spec.generate(seed, position).map_err(CliError::Runtime)?;
    let echo = serde_json::json!({
        "task": task,
        "n_items": spec.n_items,
        "item_len": spec.item_len,
        "seed": seed,
        "position": position,
    });
    Ok((t.prompt_tokens.clone(), Some(t), echo))
}

#[derive(Serialize)]
struct RunOutput {
    config: serde_json::Value,
    prompt_len: usize,
    output_tokens: Vec<u32>,
    expected_answer: Option<Vec<u32>>,
    ratio_assignment: Option<mspe::posenc::RatioAssignment>,
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let model = resolve_model(&args.model.model)?;
    let (prompt, task, prompt_echo) = resolve_prompt(
        &args.prompt_tokens,
        &args.task,
        args.n_items,
        args.item_len,
        args.seed,
        args.position,
    )?;
    let choice = parse_encoder(&args.encoder)?;
    let result: GenerationResult = match &choice {
        EncoderChoice::Fixed(spec) => run_baseline(&model, &prompt, spec, args.max_new)?,
        EncoderChoice::PiAverage => {
            let spec = args.profiler.pi_average_spec()?;
            run_baseline(&model, &prompt, &spec, args.max_new)?
        }
        EncoderChoice::MsPoe => {
            let cfg = args.profiler.pipeline_config()?;
            run_mspoe(&model, &prompt, &cfg, args.max_new)?
        }
    };

    let config = serde_json::json!({
        "model": args.model.model,
        "encoder": args.encoder,
        "max_new": args.max_new,
        "prompt": prompt_echo,
        "alpha": args.profiler.alpha,
        "rmin": args.profiler.rmin,
        "rmax": args.profiler.rmax,
        "strategy": args.profiler.strategy,
        "scoring_mode": args.profiler.scoring_mode,
        "exclude_first_k": args.profiler.exclude_first_k,
    });
    let out = RunOutput {
        config,
        prompt_len: prompt.len(),
        output_tokens: result.output_tokens.clone(),
        expected_answer: task.map(|t| t.expected_answer),
        ratio_assignment: result.ratio_assignment.clone(),
    };
    if let Some(path) = &args.dump_snapshot {
        write_file(path, &result.snapshot.to_json()?)?;
    }
    if let Some(path) = &args.dump_ratios {
        match &result.ratio_assignment {
            Some(a) => write_file(path, &a.to_json()?)?,
            None => return usage("--dump-ratios requires --encoder mspoe"),
        }
    }
    let json = serde_json::to_string_pretty(&out).map_err(mspe::Error::from)?;
    write_or_print(&args.out, &json)?;
    eprintln!(
        "timings: scoring {:.4}s, assignment {:.4}s, prefill {:.4}s, decode {:.4}s",
        result.timings.scoring_s,
        result.timings.assignment_s,
        result.timings.prefill_s,
        result.timings.decode_s
    );
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> CliResult<()> {
    let model = resolve_model(&args.model.model)?;
    let (prompt, _, _) = resolve_prompt(
        &args.prompt_tokens,
        &args.task,
        args.n_items,
        args.item_len,
        args.seed,
        args.position,
    )?;
    let cfg = args.profiler.pipeline_config()?;
    let out = model.forward_prefill(&prompt, &cfg.encoder_baseline, true)?;
    let snapshot = out.snapshot.expect("capture requested");
    let scores = profiler::score_snapshot(&snapshot, &cfg.profiler)?;
    let assignment = profiler::assign_ratios(&scores, &cfg.profiler)?;

    let mut csv = String::from("layer,head,score,ratio\n");
    for layer_scores in &scores {
        for hs in layer_scores {
            let ratio = assignment.ratio(hs.layer, hs.head)?;
            csv.push_str(&format!("{},{},{},{}\n", hs.layer, hs.head, hs.score, ratio));
        }
    }
    match &args.out_scores {
        Some(p) => write_file(p, &csv)?,
        None => emit(csv.trim_end()),
    }
    if let Some(p) = &args.out_ratios {
        write_file(p, &assignment.to_json()?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    config: serde_json::Value,
    report: EvalReport,
}

fn eval_config_echo(
    model: &str,
    task: &TaskArgs,
    spec: &TaskSpec,
    encoder: &str,
    n_samples: usize,
    seed: u64,
    profiler: &ProfilerArgs,
) -> serde_json::Value {
    serde_json::json!({
        "model": model,
        "task": task.task,
        "n_items": spec.n_items,
        "item_len": spec.item_len,
        "encoder": encoder,
        "n_samples": n_samples,
        "seed": seed,
        "alpha": profiler.alpha,
        "rmin": profiler.rmin,
        "rmax": profiler.rmax,
        "strategy": profiler.strategy,
        "scoring_mode": profiler.scoring_mode,
        "exclude_first_k": profiler.exclude_first_k,
    })
}

fn print_report_table(report: &EvalReport) {
    let mut out = format!(
        "encoder: {}  (n_samples per position: {})\nposition  accuracy\n",
        report.encoder_label, report.n_samples
    );
    for (pos, acc) in report.per_position_accuracy.iter().enumerate() {
        out.push_str(&format!("{pos:>8}  {acc:.4}\n"));
    }
    out.push_str(&format!("average {:.4}  gap {:.4}", report.average, report.gap));
    emit(&out);
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let model = resolve_model(&args.model.model)?;
    let kind = parse_task_kind(&args.task.task)?;
    let spec = task_spec(kind, args.task.n_items, args.task.item_len);
    if args.n_samples == 0 {
        return usage("--n-samples must be >= 1");
    }
    let choice = parse_encoder(&args.encoder)?;
    let report = match &choice {
        EncoderChoice::Fixed(enc) => {
            evaluate(&model, &spec, &EvalRunner::Encoder(enc), args.n_samples, args.seed)?
        }
        EncoderChoice::PiAverage => {
            let enc = args.profiler.pi_average_spec()?;
            evaluate(&model, &spec, &EvalRunner::Encoder(&enc), args.n_samples, args.seed)?
        }
        EncoderChoice::MsPoe => {
            let cfg = args.profiler.pipeline_config()?;
            evaluate(&model, &spec, &EvalRunner::Pipeline(&cfg), args.n_samples, args.seed)?
        }
    };

    print_report_table(&report);
    if let Some(p) = &args.out_json {
        let out = EvalOutput {
            config: eval_config_echo(
                &args.model.model,
                &args.task,
                &spec,
                &args.encoder,
                args.n_samples,
                args.seed,
                &args.profiler,
            ),
            report: report.clone(),
        };
        write_file(p, &serde_json::to_string_pretty(&out).map_err(mspe::Error::from)?)?;
    }
    if let Some(p) = &args.out_csv {
        let mut csv = String::from(EvalReport::CSV_HEADER);
        csv.push('\n');
        csv.push_str(&report.csv_rows());
        write_file(p, &csv)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepOutput {
    config: serde_json::Value,
    reports: Vec<EvalReport>,
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let model = resolve_model(&args.model.model)?;
    let kind = parse_task_kind(&args.task.task)?;
    let spec = task_spec(kind, args.task.n_items, args.task.item_len);
    let ratios = parse_ratio_list(&args.ratios)?;
    if args.n_samples == 0 {
        return usage("--n-samples must be >= 1");
    }
    let reports = ratio_sweep(&model, &spec, &ratios, args.n_samples, args.seed)?;

    for report in &reports {
        print_report_table(report);
        emit("");
    }
    if let Some(p) = &args.out_json {
        let out = SweepOutput {
            config: serde_json::json!({
                "model": args.model.model,
                "task": args.task.task,
                "n_items": spec.n_items,
                "item_len": spec.item_len,
                "ratios": ratios,
                "n_samples": args.n_samples,
                "seed": args.seed,
            }),
            reports: reports.clone(),
        };
        write_file(p, &serde_json::to_string_pretty(&out).map_err(mspe::Error::from)?)?;
    }
    if let Some(p) = &args.out_csv {
        // One row per (ratio, position) plus a summary row per ratio with an
        // empty position column.
        let mut csv = String::from(EvalReport::CSV_HEADER);
        csv.push('\n');
        for report in &reports {
            csv.push_str(&report.csv_rows());
            csv.push_str(&format!(
                "{},,,{},{}\n",
                report.encoder_label, report.average, report.gap
            ));
        }
        write_file(p, &csv)?;
    }
    Ok(())
}

fn cmd_gen_weights(args: GenWeightsArgs) -> CliResult<()> {
    let (config, model) = match (&args.fixture, args.random) {
        (Some(name), false) => {
            if name != "induction" {
                return usage(format!("unknown fixture {name:?}; available: induction"));
            }
            let model = build_induction_model();
            (*model.config(), model)
        }
        (None, true) => {
            let config = ModelConfig {
                n_layers: args.n_layers,
                n_heads: args.n_heads,
                head_dim: args.head_dim,
                mlp_dim: args.mlp_dim,
                vocab_size: args.vocab_size,
                max_seq_len: args.max_seq_len,
                rope_base: args.rope_base,
            };
            let model = build_random_model(&config, args.seed)?;
            (config, model)
        }
        _ => return usage("pass exactly one of --fixture <name> or --random"),
    };
    save_weights(&args.out, &config, model.weights())?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> CliResult<()> {
    let model = resolve_model(&args.model.model)?;
    let config = model.config();
    let hidden = config.hidden_dim();
    let mut out = serde_json::to_string_pretty(config).map_err(mspe::Error::from)?;
    out.push_str("\ntensor                      shape\n");
    out.push_str(&format!("token_embedding             {}x{}\n", config.vocab_size, hidden));
    for i in 0..config.n_layers {
        out.push_str(&format!("layer{i}.wq/wk/wv/wo         {hidden}x{hidden}\n"));
        out.push_str(&format!("layer{i}.w_gate/w_up         {hidden}x{}\n", config.mlp_dim));
        out.push_str(&format!("layer{i}.w_down              {}x{hidden}\n", config.mlp_dim));
        out.push_str(&format!("layer{i}.attn_norm/mlp_norm  {hidden}\n"));
    }
    out.push_str(&format!("final_norm                  {hidden}\n"));
    match &model.weights().output {
        OutputProjection::Untied(_) => out.push_str(&format!(
            "lm_head                     {hidden}x{}",
            config.vocab_size
        )),
        OutputProjection::Tied => out.push_str("lm_head                     tied to token_embedding"),
    }
    emit(&out);
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::GenWeights(args) => cmd_gen_weights(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
