//! `ptk`: tokenize point clouds, inspect token files, run the toy curriculum and
//! its ablations, and self-check core invariants.
//!
//! Exit codes: 0 success, 1 usage error, 2 input parse error, 3 I/O error,
//! 4 invalid token grammar or failed self-check, 5 training divergence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ptk_core::sequence::{self, sidecar_path, validate, write_atomic};
use ptk_core::{cloud, tokenize, StrategyKind, Token, TokenizerConfig};
use ptk_model::curriculum::{
    ablate_tokenization, format_metrics, run_stage, AblationArm, CurriculumConfig, CurriculumData, Stage,
};
use ptk_model::params::checkpoint_bytes;
use ptk_model::{ModelError, ToyModelConfig, ToyModelParams};
use rayon::prelude::*;

const EXIT_USAGE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INVALID: u8 = 4;
const EXIT_DIVERGED: u8 = 5;

#[derive(Parser)]
#[command(name = "ptk", version, about = "Point-cloud tokenizer and toy multimodal model harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize an XYZ/PLY file, or every such file in a directory.
    Tokenize(TokenizeArgs),
    /// Validate a token file and its matrix sidecar.
    Inspect { input: PathBuf },
    /// Run curriculum stages and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Compare tokenization strategies on the toy curriculum.
    Ablate(AblateArgs),
    /// Run quick self-checks of the tokenizer and model.
    Verify,
}

#[derive(Args)]
struct TokenizerFlags {
    /// Points per patch.
    #[arg(long)]
    m: Option<usize>,
    /// Maximum splits per axis.
    #[arg(long)]
    k: Option<usize>,
    /// zyx | hilbert | morton | fps | fps:N
    #[arg(long, default_value = "zyx")]
    strategy: StrategyKind,
    #[arg(long)]
    no_separators: bool,
}

impl TokenizerFlags {
    fn config(&self, m: usize, k: usize) -> anyhow::Result<TokenizerConfig> {
        let (m, k) = (self.m.unwrap_or(m), self.k.unwrap_or(k));
        if m == 0 || k == 0 {
            return Err(anyhow!(Usage("--m and --k must be at least 1".into())));
        }
        Ok(TokenizerConfig {
            m,
            k,
            strategy: self.strategy,
            separators: !self.no_separators,
            ..TokenizerConfig::default()
        })
    }
}

#[derive(Args)]
struct TokenizeArgs {
    input: PathBuf,
    /// Output token file (or directory when the input is a directory). Defaults to
    /// the input path with a `.tokens` extension.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tok: TokenizerFlags,
}

#[derive(Args)]
struct TrainArgs {
    /// Comma-separated stages to run in order.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    stages: Vec<u8>,
    /// Steps per stage; stage defaults apply when omitted.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `model.ptkc` and `metrics.csv`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    tok: TokenizerFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated arms; append `+nosep` to drop separators, e.g. `zyx,zyx+nosep,fps`.
    #[arg(long, default_value = "zyx,fps", value_delimiter = ',')]
    strategies: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Error raised for bad flag combinations found after clap parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn core_exit(e: &ptk_core::Error) -> u8 {
    use ptk_core::Error as E;
    match e {
        E::Io { .. } => EXIT_IO,
        E::InvalidParameter(_) | E::StrategyParamMissing(_) | E::TargetExceedsInput { .. } => EXIT_USAGE,
        E::Grammar(_) => EXIT_INVALID,
        _ => EXIT_PARSE,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ptk_core::Error>() {
            return core_exit(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::DivergenceDetected { .. } => EXIT_DIVERGED,
                ModelError::Io(_) => EXIT_IO,
                ModelError::Tokenizer(inner) => core_exit(inner),
                ModelError::InvalidArgument(_) | ModelError::Config(_) => EXIT_USAGE,
                _ => EXIT_INVALID,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_INVALID
}

fn is_cloud_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("xyz" | "ply"))
}

fn tokenize_one(input: &Path, out: &Path, config: &TokenizerConfig) -> anyhow::Result<String> {
    let cloud = cloud::load(input)?;
    let result = tokenize(&cloud, config)?;
    sequence::export(&result.sequence, out)?;
    let stats = result.sequence.stats();
    let plan = &result.grid.plan;
    let join = |v: &[usize]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    let rows: Vec<String> = plan.splits_x.iter().map(|r| join(r)).collect();
    let mut s = String::new();
    writeln!(s, "input={}", input.display())?;
    writeln!(s, "points={}", cloud.len())?;
    writeln!(s, "patches={}", stats.patches)?;
    writeln!(s, "layer_seps={}", stats.layer_seps)?;
    writeln!(s, "row_seps={}", stats.row_seps)?;
    writeln!(s, "tokens={}", stats.total)?;
    writeln!(s, "patch_dim={}", result.sequence.patch_dim)?;
    writeln!(s, "splits_z={}", plan.splits_z)?;
    writeln!(s, "splits_y={}", join(&plan.splits_y))?;
    writeln!(s, "splits_x={}", rows.join(";"))?;
    writeln!(s, "ordering={}", result.sequence.ordering)?;
    writeln!(s, "output={}", out.display())?;
    writeln!(s, "matrix={}", sidecar_path(out).display())?;
    Ok(s)
}

fn thread_cap() -> anyhow::Result<usize> {
    match std::env::var("PTK_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| anyhow!(Usage(format!("PTK_THREADS must be a non-negative integer, got '{v}'")))),
        Err(_) => Ok(0),
    }
}

fn cmd_tokenize(args: &TokenizeArgs) -> anyhow::Result<u8> {
    let config = args.tok.config(ptk_core::DEFAULT_M, ptk_core::DEFAULT_K)?;
    if !args.input.is_dir() {
        let out = args.out.clone().unwrap_or_else(|| args.input.with_extension("tokens"));
        print!("{}", tokenize_one(&args.input, &out, &config)?);
        return Ok(0);
    }

    let out_dir = args.out.clone().unwrap_or_else(|| args.input.clone());
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    inputs.retain(|p| p.is_file() && is_cloud_file(p));
    inputs.sort();
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_cap()?).build()?;
    let results: Vec<(PathBuf, anyhow::Result<String>)> = pool.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let name = p.file_name().map(PathBuf::from).unwrap_or_default();
                let out = out_dir.join(name).with_extension("tokens");
                (p.clone(), tokenize_one(p, &out, &config))
            })
            .collect()
    });
    let mut code = 0;
    for (i, (path, r)) in results.into_iter().enumerate() {
        if i > 0 {
            println!();
        }
        match r {
            Ok(summary) => print!("{summary}"),
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                println!("input={}\nstatus=error", path.display());
                if code == 0 {
                    code = exit_code(&e);
                }
            }
        }
    }
    println!("\nfiles={}", inputs.len());
    Ok(code)
}

fn cmd_inspect(input: &Path) -> anyhow::Result<u8> {
    let seq = match sequence::import(input) {
        Ok(seq) => seq,
        Err(ptk_core::Error::Parse { line, reason }) => {
            println!("verdict=INVALID");
            println!("reason=line {line}: {reason}");
            return Ok(EXIT_INVALID);
        }
        Err(e) => return Err(e.into()),
    };
    let patches = seq.tokens.iter().filter(|t| matches!(t, Token::Patch(_))).count();
    let count = |k: Token| seq.tokens.iter().filter(|t| **t == k).count();
    let verdict = validate(&seq.tokens, seq.separators);
    println!("verdict={}", if verdict.is_ok() { "VALID" } else { "INVALID" });
    if let Err(e) = &verdict {
        println!("reason={e}");
    }
    println!("patches={patches}");
    println!("layer_seps={}", count(Token::LayerSep));
    println!("row_seps={}", count(Token::RowSep));
    println!("patch_dim={}", seq.patch_dim);
    println!("ordering={}", seq.ordering);
    println!("separators={}", u8::from(seq.separators));
    Ok(if verdict.is_ok() { 0 } else { EXIT_INVALID })
}

fn curriculum_config(tok: &TokenizerFlags, seed: u64, steps: Option<usize>) -> anyhow::Result<CurriculumConfig> {
    let base = CurriculumConfig::default();
    let tokenizer = tok.config(base.model.m, base.tokenizer.k)?;
    Ok(CurriculumConfig {
        model: ToyModelConfig {
            m: tokenizer.m,
            seed,
            ..base.model
        },
        tokenizer,
        seed,
        steps: steps.map_or(base.steps, |s| [s; 3]),
        ..base
    })
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<u8> {
    let stages = args
        .stages
        .iter()
        .map(|&s| Stage::from_number(s).map_err(|e| anyhow!(Usage(e.to_string()))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cfg = curriculum_config(&args.tok, args.seed, args.steps)?;
    if !args.out.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", args.out.display()),
        )
        .into());
    }
    let mut params = ToyModelParams::init(cfg.model)?;
    let data = CurriculumData::generate(&cfg)?;
    let mut metrics = Vec::new();
    for stage in stages {
        let (next, lines) = run_stage(&params, &cfg.plan(stage), &data)?;
        params = next;
        for l in lines.iter().filter(|l| l.metric != "loss") {
            println!("stage={} step={} {}={}", l.stage, l.step, l.metric, l.value);
        }
        metrics.extend(lines);
    }
    let ckpt = args.out.join("model.ptkc");
    let metrics_path = args.out.join("metrics.csv");
    write_atomic(&ckpt, &checkpoint_bytes(&params))?;
    write_atomic(&metrics_path, format_metrics(&metrics).as_bytes())?;
    println!("checkpoint={}", ckpt.display());
    println!("metrics={}", metrics_path.display());
    Ok(0)
}

fn parse_arm(s: &str) -> anyhow::Result<AblationArm> {
    let (name, separators) = match s.strip_suffix("+nosep") {
        Some(n) => (n, false),
        None => (s, true),
    };
    let strategy: StrategyKind = name.parse().map_err(|e: String| anyhow!(Usage(e)))?;
    Ok(AblationArm { strategy, separators })
}

fn cmd_ablate(args: &AblateArgs) -> anyhow::Result<u8> {
    let arms = args.strategies.iter().map(|s| parse_arm(s)).collect::<anyhow::Result<Vec<_>>>()?;
    if arms.len() < 2 {
        return Err(anyhow!(Usage("ablation needs at least two strategies".into())));
    }
    let flags = TokenizerFlags {
        m: None,
        k: None,
        strategy: StrategyKind::Zyx,
        no_separators: false,
    };
    let cfg = curriculum_config(&flags, args.seed, args.steps)?;
    print!("{}", ablate_tokenization(&arms, &cfg)?);
    Ok(0)
}

fn cmd_verify() -> anyhow::Result<u8> {
    let checks = verify::run_all();
    let mut failed = 0;
    for (name, result) in &checks {
        match result {
            Ok(()) => println!("{name}=pass"),
            Err(e) => {
                failed += 1;
                println!("{name}=fail");
                eprintln!("{name}: {e}");
            }
        }
    }
    println!("checks={} failed={failed}", checks.len());
    Ok(if failed == 0 { 0 } else { EXIT_INVALID })
}

mod verify;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Tokenize(args) => cmd_tokenize(args),
        Command::Inspect { input } => cmd_inspect(input),
        Command::Train(args) => cmd_train(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Verify => cmd_verify(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
