//! Command-line interface: train, eval, sweep, ablation, gen-data.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dtsl_core::config::{TrainConfig, TrainMode};
use dtsl_core::divergence::ClgStrategy;
use dtsl_core::model::ModelParams;
use dtsl_core::train::{build_dataset, evaluate_model, run_training, sweep, sweep_csv};
use dtsl_core::{fmt_sig6, pgm};

#[derive(Parser)]
#[command(
    name = "dtsl",
    version,
    about = "Dual teacher-student semi-supervised segmentation on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write all run artifacts.
    Train(TrainArgs),
    /// Re-evaluate the checkpoints of a finished run on its test corpus.
    Eval(EvalArgs),
    /// Run a hyperparameter grid, one training run per value (x seeds).
    Sweep(SweepArgs),
    /// Run the five module-toggle configurations and compare them.
    Ablation(AblationArgs),
    /// Generate corpus samples as paired image/label PGM files.
    GenData(GenDataArgs),
}

/// Flags mirroring TrainConfig; unset flags fall back to --config, then to
/// built-in defaults. DTSL_SEED overrides --seed.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// key=value config file applied before any flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// semi | supervised-dtsl | supervised-plain | mt | plain-dtsl
    #[arg(long)]
    mode: Option<String>,
    /// default | strategy1 | strategy2 | strategy3
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    labeled_batch: Option<usize>,
    #[arg(long)]
    unlabeled_batch: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long)]
    probe_count: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, String> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(|e| e.to_string())?;
        }
        if let Some(v) = &self.mode {
            cfg.mode = TrainMode::parse(v).map_err(|e| e.to_string())?;
        }
        if let Some(v) = &self.strategy {
            cfg.strategy = ClgStrategy::parse(v).map_err(|e| e.to_string())?;
        }
        macro_rules! take {
            ($($field:ident => $slot:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$slot = v; })*
            };
        }
        take!(
            seed => seed, max_iter => max_iter, labeled_batch => labeled_batch,
            unlabeled_batch => unlabeled_batch, eta0 => eta0, omega => omega,
            kappa => kappa, alpha => alpha, beta => beta, classes => num_classes,
            base_channels => base_channels, image_size => image_size,
            train_count => train_count, test_count => test_count,
            labeled_fraction => labeled_fraction, noise_sigma => noise_sigma,
            snapshot_every => snapshot_every, probe_count => probe_count
        );
        if let Ok(env_seed) = std::env::var("DTSL_SEED") {
            cfg.seed = env_seed
                .parse()
                .map_err(|_| format!("DTSL_SEED '{env_seed}' is not an integer"))?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for manifest, CSVs, snapshots, and checkpoints.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of a finished training run (manifest.txt + *.ckpt).
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Hyperparameter to vary: kappa | omega | alpha | beta | strategy
    #[arg(long)]
    param: String,
    /// Comma-separated values, or start..end (step 0.01), or start..end:step
    #[arg(long)]
    values: String,
    /// Seeds to run per value (comma-separated).
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seeds to run per configuration (comma-separated).
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of samples to export.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablation(args) => cmd_ablation(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum CmdError {
    Usage(String),
    Runtime(String),
}

type CmdResult = Result<(), CmdError>;

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(msg.to_string())
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let cfg = args.config.resolve().map_err(usage)?;
    let split = build_dataset(&cfg).map_err(runtime)?;
    let report = run_training(&cfg, &split, Some(&args.out_dir)).map_err(runtime)?;
    let fg = report.headline();
    println!(
        "run complete: student0 foreground DSC {} Jaccard {} (artifacts in {})",
        fmt_sig6(fg.dsc),
        fmt_sig6(fg.jaccard),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let manifest = args.run_dir.join("manifest.txt");
    if !manifest.is_file() {
        return Err(usage(format!("{} has no manifest.txt", args.run_dir.display())));
    }
    let mut cfg = TrainConfig::default();
    cfg.apply_file(&manifest).map_err(runtime)?;
    let split = build_dataset(&cfg).map_err(runtime)?;

    let mut rows = String::from("model,class,dsc,jaccard,hd95,asd\n");
    let fmt_opt =
        |v: Option<f64>| v.map(fmt_sig6).unwrap_or_else(|| "undefined".to_string());
    let mut found = 0;
    for name in ["student0", "teacher0", "student1", "teacher1"] {
        let path = args.run_dir.join(format!("{name}.ckpt"));
        if !path.is_file() {
            continue;
        }
        found += 1;
        let params = ModelParams::load(&path).map_err(runtime)?;
        let report = evaluate_model(&params, &split.test).map_err(runtime)?;
        for row in &report.per_class {
            rows.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                row.class,
                fmt_sig6(row.dsc),
                fmt_sig6(row.jaccard),
                fmt_opt(row.hd95),
                fmt_opt(row.asd)
            ));
        }
        let fg = &report.foreground;
        rows.push_str(&format!(
            "{name},foreground_mean,{},{},{},{}\n",
            fmt_sig6(fg.dsc),
            fmt_sig6(fg.jaccard),
            fmt_opt(fg.hd95),
            fmt_opt(fg.asd)
        ));
    }
    if found == 0 {
        return Err(usage(format!(
            "{} holds no checkpoints",
            args.run_dir.display()
        )));
    }
    let out = args.run_dir.join("metrics_eval.csv");
    std::fs::write(&out, &rows).map_err(runtime)?;
    print!("{rows}");
    println!("written to {}", out.display());
    Ok(())
}

/// Parse "a,b,c", "a..b" (step 0.01), or "a..b:step" numeric value lists.
fn parse_values(spec: &str) -> Result<Vec<f64>, CmdError> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(usage("empty --values list"));
    }
    if let Some((range, step)) = spec
        .split_once(':')
        .map(|(r, s)| (r, Some(s)))
        .or(Some((spec, None)))
    {
        if let Some((a, b)) = range.split_once("..") {
            let a: f64 = a.trim().parse().map_err(|_| usage("bad range start"))?;
            let b: f64 = b.trim().parse().map_err(|_| usage("bad range end"))?;
            let step: f64 = match step {
                Some(s) => s.trim().parse().map_err(|_| usage("bad range step"))?,
                None => 0.01,
            };
            if step <= 0.0 || b < a {
                return Err(usage("range needs start <= end and positive step"));
            }
            let count = ((b - a) / step).round() as usize + 1;
            return Ok((0..count).map(|i| a + step * i as f64).collect());
        }
    }
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("bad value '{v}'")))
        })
        .collect()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, CmdError> {
    let seeds: Result<Vec<u64>, _> = spec
        .split(',')
        .map(|v| v.trim().parse::<u64>().map_err(|_| usage(format!("bad seed '{v}'"))))
        .collect();
    let seeds = seeds?;
    if seeds.is_empty() {
        return Err(usage("empty --seeds list"));
    }
    Ok(seeds)
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let base = args.config.resolve().map_err(usage)?;
    let seeds = parse_seeds(&args.seeds)?;
    let param = args.param.to_ascii_lowercase();

    let mut configs: Vec<(String, TrainConfig)> = Vec::new();
    if param == "strategy" {
        for name in args.values.split(',') {
            let strategy = ClgStrategy::parse(name.trim()).map_err(|e| usage(e.to_string()))?;
            for &seed in &seeds {
                let mut cfg = base.clone();
                cfg.strategy = strategy;
                cfg.seed = seed;
                configs.push((format!("strategy-{}_seed{seed}", strategy.name()), cfg));
            }
        }
    } else {
        let values = parse_values(&args.values)?;
        if values.is_empty() {
            return Err(usage("empty --values list"));
        }
        for &value in &values {
            for &seed in &seeds {
                let mut cfg = base.clone();
                match param.as_str() {
                    "kappa" => cfg.kappa = value,
                    "omega" => cfg.omega = value,
                    "alpha" => cfg.alpha = value,
                    "beta" => cfg.beta = value,
                    other => return Err(usage(format!("unknown sweep parameter '{other}'"))),
                }
                cfg.validate().map_err(|e| usage(e.to_string()))?;
                configs.push((format!("{param}{value}_seed{seed}"), cfg));
            }
        }
    }

    std::fs::create_dir_all(&args.out_dir).map_err(runtime)?;
    let results = sweep(&configs, args.jobs, Some(&args.out_dir));
    let csv = sweep_csv(&results);
    std::fs::write(args.out_dir.join("sweep.csv"), &csv).map_err(runtime)?;
    print!("{csv}");
    let failures = results.iter().filter(|(_, r)| r.is_err()).count();
    println!(
        "{} runs, {failures} failed; table in {}",
        results.len(),
        args.out_dir.join("sweep.csv").display()
    );
    Ok(())
}

/// The five module-toggle rows: single-group mean teacher, dual pseudo-labels
/// without masking, consensus masking alone, and each with the uniform
/// regularization term.
fn ablation_rows(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let with = |mode: TrainMode, beta: f64| -> TrainConfig {
        let mut cfg = base.clone();
        cfg.mode = mode;
        cfg.beta = beta;
        cfg
    };
    vec![
        ("mt", with(TrainMode::VanillaMt, 0.0)),
        ("plain-dtsl", with(TrainMode::PlainDtsl, 0.0)),
        ("clg", with(TrainMode::SemiDtsl, 0.0)),
        ("plain-dtsl+url", with(TrainMode::PlainDtsl, base.beta)),
        ("clg+url", with(TrainMode::SemiDtsl, base.beta)),
    ]
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    values[values.len() / 2]
}

fn cmd_ablation(args: AblationArgs) -> CmdResult {
    let base = args.config.resolve().map_err(usage)?;
    let seeds = parse_seeds(&args.seeds)?;

    let mut configs = Vec::new();
    for (label, cfg) in ablation_rows(&base) {
        for &seed in &seeds {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            configs.push((format!("{label}_seed{seed}"), cfg));
        }
    }
    std::fs::create_dir_all(&args.out_dir).map_err(runtime)?;
    let results = sweep(&configs, args.jobs, Some(&args.out_dir));

    // median over seeds per row, all four metrics
    let mut table = String::from("row,dsc,jaccard,hd95,asd\n");
    let mut medians: Vec<(String, f64)> = Vec::new();
    for (label, _) in ablation_rows(&base) {
        let mut dscs = Vec::new();
        let mut jacs = Vec::new();
        let mut hds = Vec::new();
        let mut asds = Vec::new();
        for (run_label, result) in &results {
            if !run_label.starts_with(&format!("{label}_seed")) {
                continue;
            }
            let report = result
                .as_ref()
                .map_err(|e| runtime(format!("{run_label}: {e}")))?;
            let fg = report.headline();
            dscs.push(fg.dsc);
            jacs.push(fg.jaccard);
            if let Some(v) = fg.hd95 {
                hds.push(v);
            }
            if let Some(v) = fg.asd {
                asds.push(v);
            }
        }
        let fmt_med = |v: &mut Vec<f64>| {
            if v.is_empty() {
                "undefined".to_string()
            } else {
                fmt_sig6(median(v))
            }
        };
        let dsc_med = median(&mut dscs);
        medians.push((label.to_string(), dsc_med));
        table.push_str(&format!(
            "{label},{},{},{},{}\n",
            fmt_sig6(dsc_med),
            fmt_med(&mut jacs),
            fmt_med(&mut hds),
            fmt_med(&mut asds)
        ));
    }
    std::fs::write(args.out_dir.join("ablation.csv"), &table).map_err(runtime)?;
    print!("{table}");

    let get = |name: &str| medians.iter().find(|(l, _)| l == name).map(|(_, v)| *v);
    if let (Some(clg_url), Some(plain)) = (get("clg+url"), get("plain-dtsl")) {
        let verdict = if clg_url >= plain { "holds" } else { "violated" };
        println!(
            "direction check: clg+url DSC {} vs plain-dtsl DSC {} -> {verdict}",
            fmt_sig6(clg_url),
            fmt_sig6(plain)
        );
    }
    println!("table in {}", args.out_dir.join("ablation.csv").display());
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> CmdResult {
    let cfg = args.config.resolve().map_err(usage)?;
    if args.count == 0 {
        return Err(usage("--count must be positive"));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(runtime)?;
    let samples = dtsl_core::data::generate(
        cfg.seed,
        args.count,
        cfg.image_size,
        cfg.image_size,
        cfg.num_classes,
        cfg.noise_sigma,
    )
    .map_err(runtime)?;
    for (i, s) in samples.iter().enumerate() {
        write_sample(&args.out_dir, i, s).map_err(runtime)?;
    }
    println!(
        "{} samples written to {}",
        samples.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn write_sample(dir: &Path, index: usize, s: &dtsl_core::data::SyntheticSample) -> dtsl_core::Result<()> {
    pgm::write_gray(
        &dir.join(format!("sample_{index:03}_image.pgm")),
        s.width,
        s.height,
        &s.image,
    )?;
    pgm::write_labels(
        &dir.join(format!("sample_{index:03}_label.pgm")),
        &s.label,
        0,
    )
}
