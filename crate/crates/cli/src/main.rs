use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use dualprop::analysis::{grad_cosine, lipschitz_estimate};
use dualprop::harness::{
    load_experiment_data, run_experiment, run_theory_checks, synth_blobs, ExperimentConfig, HarnessError,
    OptimizerName, TheoryConfig, DATA_ENV,
};
use dualprop::learning::{backprop_oracle, finite_difference_oracle, weight_gradient, LossKind};
use dualprop::model::{init_weights, load_checkpoint, mlp_specs, parse_widths, ActivationKind};
use dualprop::{run_inference, NudgeConfig, Schedule, Scheme, Vector};

#[derive(Parser)]
#[command(name = "dualprop", version, about = "Dual propagation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an MLP and write metrics.csv, summary.json and a checkpoint.
    Train(TrainArgs),
    /// Compare dyadic gradient estimates with backprop and finite differences.
    GradCheck(GradCheckArgs),
    /// Run the seeded property checks on quadratic models.
    TheoryCheck(TheoryArgs),
    /// Print the Lipschitz estimate of a checkpoint.
    Lipschitz {
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint and run dyadic inference on one sample.
    Infer(InferArgs),
    /// Write a synthetic Gaussian-blob dataset as CSV.
    SynthData(SynthArgs),
}

#[derive(Args, Default)]
struct ConfigFlags {
    /// TOML config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// dp, dpt or dp-stabilized.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// sweep, sweeps:N or forward:N.
    #[arg(long)]
    schedule: Option<Schedule>,
    /// Explicit damping constant for the stabilized scheme.
    #[arg(long)]
    damping: Option<f64>,
    /// Layer widths, e.g. 784-256-256-10.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    activation: Option<ActivationKind>,
    /// ls or ce.
    #[arg(long)]
    loss: Option<LossKind>,
    /// adam or sgd.
    #[arg(long)]
    opt: Option<OptimizerName>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// mnist:<dir> or blobs:<spec>; bare `mnist` reads the directory from DUALPROP_DATA.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    subset: Option<usize>,
    /// Record gradient angles against backprop every N batches (0 = off).
    #[arg(long)]
    grad_angle_every: Option<usize>,
    /// Record the Lipschitz estimate at the end of every epoch.
    #[arg(long)]
    lipschitz: bool,
    #[arg(long)]
    bias: bool,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(scheme => scheme, alpha => alpha, beta => beta, schedule => schedule, arch => arch,
             activation => activation, loss => loss, opt => optimizer, lr => lr, epochs => epochs,
             batch_size => batch_size, seed => seed, data => data, grad_angle_every => grad_angle_every);
        if self.damping.is_some() {
            cfg.damping = self.damping;
        }
        if self.subset.is_some() {
            cfg.subset = self.subset;
        }
        cfg.lipschitz_every_epoch |= self.lipschitz;
        cfg.bias |= self.bias;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value = "10-16-12-5")]
    arch: String,
    #[arg(long, default_value = "relu")]
    activation: ActivationKind,
    #[arg(long, default_value = "ls")]
    loss: LossKind,
    #[arg(long, default_value_t = 1e-4)]
    beta: f64,
    #[arg(long, default_value_t = 5)]
    nets: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Index of the sample in the held-out split.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::GradCheck(args) => grad_check(&args),
        Command::TheoryCheck(args) => {
            let report = run_theory_checks(&TheoryConfig {
                seed: args.seed,
                ..Default::default()
            })?;
            let text = serde_json::to_string_pretty(&report)?;
            match &args.out {
                Some(p) => write_file(p, &text)?,
                None => println!("{text}"),
            }
            eprintln!("theory checks: {}", if report.pass { "pass" } else { "FAIL" });
            Ok(exit(report.pass))
        }
        Command::Lipschitz { checkpoint } => {
            let params = load_checkpoint(&checkpoint)?;
            println!("{}", lipschitz_estimate(&params));
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer(args) => infer(&args),
        Command::SynthData(args) => synth(&args),
    }
}

fn exit(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn train(args: &TrainArgs) -> Result<ExitCode> {
    let cfg = args.flags.resolve().with_context(|| format!("default data root comes from {DATA_ENV}"))?;
    match run_experiment(&cfg, &args.out) {
        Ok(summary) => {
            print_json(&summary)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(HarnessError::AbortedDiverged(summary)) => {
            print_json(&summary)?;
            eprintln!("training aborted: inference diverged (partial results in {})", args.out.display());
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn relative_error(a: &[dualprop::Matrix], b: &[dualprop::Matrix]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

fn grad_check(args: &GradCheckArgs) -> Result<ExitCode> {
    let widths = parse_widths(&args.arch)?;
    let specs = mlp_specs(&widths, args.activation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut rows = Vec::new();
    for net in 0..args.nets {
        let params = init_weights(&specs, rng.random())?;
        let x: Vector = (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = Vector::basis(widths[widths.len() - 1], rng.random_range(0..widths[widths.len() - 1]));
        let bp = backprop_oracle(&params, &x, &y, args.loss)?;
        let fd = finite_difference_oracle(&params, &x, &y, args.loss, args.h)?;
        let mut schemes = Vec::new();
        for (scheme, alpha) in [(Scheme::Dpt, 0.0), (Scheme::Dpt, 0.5), (Scheme::Dpt, 1.0), (Scheme::Dp, 0.5)] {
            let cfg = NudgeConfig::new(scheme, alpha, args.beta);
            let report = run_inference(&params, &x, &y, &cfg, args.loss)?;
            let g = weight_gradient(&params, &report.state, &cfg)?;
            let cos: Vec<Option<f64>> = grad_cosine(&g, &bp)?;
            schemes.push(json!({ "scheme": scheme.to_string(), "alpha": alpha, "cosine": cos }));
        }
        rows.push(json!({
            "net": net,
            "fd_relative_error": relative_error(bp.layers(), fd.layers()),
            "estimates": schemes,
        }));
    }
    print_json(&json!({ "arch": args.arch, "beta": args.beta, "nets": rows }))?;
    Ok(ExitCode::SUCCESS)
}

fn infer(args: &InferArgs) -> Result<ExitCode> {
    let params = load_checkpoint(&args.checkpoint)?;
    let cfg = args.flags.resolve()?;
    let data = load_experiment_data(&cfg)?;
    let eval = data.test.as_ref().unwrap_or(&data.validation);
    if args.index >= eval.len() {
        bail!("index {} out of range for {} samples", args.index, eval.len());
    }
    let x = &eval.inputs()[args.index];
    let y = eval.target(args.index);
    let out = params.predict(x)?;
    let report = run_inference(&params, x, &y, &cfg.nudge(), cfg.loss)?;
    let argmax = |v: &Vector| (0..v.dim()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
    print_json(&json!({
        "accuracy": dualprop::learning::accuracy(&params, eval)?,
        "index": args.index,
        "label": eval.labels()[args.index],
        "prediction": argmax(&out),
        "output": out.as_slice(),
        "nudged_plus": report.state.plus(params.depth()).as_slice(),
        "nudged_minus": report.state.minus(params.depth()).as_slice(),
        "iterations": report.iterations,
        "residual": report.residual,
        "diverged": report.diverged,
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let data = synth_blobs(args.classes, args.dim, args.n, args.sep, args.seed)?;
    let mut text = Vec::new();
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..args.dim).map(|j| format!("x{j}")))
        .collect();
    writeln!(text, "{}", header.join(","))?;
    for (x, label) in data.inputs().iter().zip(data.labels()) {
        let cols: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(text, "{label},{}", cols.join(","))?;
    }
    write_file(&args.out, &String::from_utf8(text)?)?;
    eprintln!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
