//! `vllfl`: run federated prompt-learning experiments on the synthetic
//! detection benchmark.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vllfl_core::baselines::base_adaptation;
use vllfl_core::datagen::{generate_world, read_scene_file};
use vllfl_core::error::{Error, Result};
use vllfl_core::experiment::{compare, run_train, sweep_participation, write_report, ExperimentConfig, Method};
use vllfl_core::model::PromptModel;
use vllfl_core::network::{overhead_report, NetworkModel};
use vllfl_core::pipeline::evaluate_prompts;
use vllfl_core::surrogate::{encode_classnames, Scene};

const PUBLISHED_REDUCTION: f64 = 99.3;
const YOLOV3_PARAMS: u64 = 62_000_000;

#[derive(Parser)]
#[command(name = "vllfl", version, about = "Federated prompt learning on a synthetic open-vocabulary detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method and write metrics.csv, final_report.json, checkpoint.vlpg.
    Train(Common),
    /// Compare methods on identical worlds and scenes.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods (default: config `compare.methods`).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Comma-separated seeds (default: config `compare.seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Train with a fixed number of participants per round, for each count.
    SweepParticipation {
        #[command(flatten)]
        common: Common,
        /// Comma-separated participant counts (default: config `sweep.counts`).
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
        /// Comma-separated seeds (default: config `sweep.seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Payload size and upload time of prompt-only versus full-model exchange.
    Overhead(OverheadArgs),
    /// Evaluate a checkpoint on a scene file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Line-delimited scene records.
        #[arg(long)]
        scenes: PathBuf,
        /// Comma-separated world class ids to score (default: all).
        #[arg(long, value_delimiter = ',')]
        classes: Vec<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set federation.rounds=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Clients selected per round.
    #[arg(long)]
    participation: Option<usize>,
    #[arg(long)]
    base_adaptation_steps: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("output_dir={}", toml_string(&o.to_string_lossy())));
        }
        if let Some(m) = &self.method {
            Method::parse(m)?;
            overrides.push(format!("method={}", toml_string(m)));
        }
        if let Some(r) = self.rounds {
            overrides.push(format!("federation.rounds={r}"));
        }
        if let Some(k) = self.participation {
            overrides.push(format!("federation.participants={k}"));
        }
        if let Some(f) = self.base_adaptation_steps {
            overrides.push(format!("base_adaptation.steps={f}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long, default_value_t = 1_000_000)]
    prompt_params: u64,
    #[arg(long, default_value_t = 172_000_000)]
    full_params: u64,
    #[arg(long, default_value_t = 4)]
    bytes_per_param: u64,
    /// Link bandwidth in bits per second.
    #[arg(long, default_value_t = 100e6)]
    bandwidth: f64,
    /// Per-message latency in seconds.
    #[arg(long, default_value_t = 0.0)]
    latency: f64,
    /// `yolov3`: full model of 62M parameters.
    #[arg(long)]
    preset: Option<String>,
    /// Directory for overhead.json.
    #[arg(long, default_value = "runs/overhead")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(common) => train(&common),
        Command::Compare { common, methods, seeds } => cmd_compare(&common, &methods, &seeds),
        Command::SweepParticipation { common, counts, seeds } => cmd_sweep(&common, &counts, &seeds),
        Command::Overhead(args) => cmd_overhead(&args),
        Command::Eval {
            common,
            checkpoint,
            scenes,
            classes,
        } => cmd_eval(&common, &checkpoint, &scenes, &classes),
    }
}

fn train(common: &Common) -> Result<()> {
    let config = common.load()?;
    let art = run_train(&config)?;
    let eval = &art.run.final_eval;
    println!("method       {}", config.method.label());
    println!("rounds       {}", art.run.records.len());
    println!("global mAP   {:.4}", eval.global_map);
    for (i, m) in eval.client_map.iter().enumerate() {
        println!("client {i} mAP {m:.4}");
    }
    println!("wrote {}", art.metrics.display());
    println!("wrote {}", art.report.display());
    println!("wrote {}", art.checkpoint.display());
    Ok(())
}

fn cmd_compare(common: &Common, methods: &[String], seeds: &[u64]) -> Result<()> {
    let config = common.load()?;
    let methods = if methods.is_empty() {
        config.compare.methods.clone()
    } else {
        methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?
    };
    let seeds = if seeds.is_empty() { config.compare.seeds.clone() } else { seeds.to_vec() };
    let report = compare(&config, &methods, &seeds)?;
    print!("{}", report.table());
    let path = write_report(&config, "compare.json", &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(common: &Common, counts: &[usize], seeds: &[u64]) -> Result<()> {
    let config = common.load()?;
    let counts = if counts.is_empty() { config.sweep.counts.clone() } else { counts.to_vec() };
    let seeds = if seeds.is_empty() { config.sweep.seeds.clone() } else { seeds.to_vec() };
    let rounds = common.rounds.unwrap_or(config.sweep.rounds);
    let report = sweep_participation(&config, &counts, &seeds, rounds)?;
    print!("{}", report.table());
    for (k, m) in report.final_means() {
        println!("participants {k}: round-{rounds} mean mAP {m:.4}");
    }
    let path = write_report(&config, "sweep_participation.json", &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_overhead(args: &OverheadArgs) -> Result<()> {
    let full = match args.preset.as_deref() {
        None => args.full_params,
        Some("yolov3") => YOLOV3_PARAMS,
        Some(other) => return Err(Error::Config(format!("unknown preset {other:?} (expected yolov3)"))),
    };
    let network = NetworkModel {
        bandwidth_bps: args.bandwidth,
        latency_s: args.latency,
    };
    let r = overhead_report(args.prompt_params, full, args.bytes_per_param, network)?;
    println!("prompt payload   {:>12} params  {:>10.2} MB", r.prompt_params, r.mb_prompt);
    println!("full model       {:>12} params  {:>10.2} MB", r.full_params, r.mb_full);
    println!(
        "reduction        {:.2}% (published figure: {PUBLISHED_REDUCTION}%)",
        r.reduction_percent
    );
    println!(
        "upload at {} bps: prompt {:.3} s, full {:.2} s",
        args.bandwidth, r.seconds_per_upload_prompt, r.seconds_per_upload_full
    );
    let doc = serde_json::json!({
        "report": r,
        "published_reduction_percent": PUBLISHED_REDUCTION,
        "preset": args.preset,
        "network": network,
    });
    let path = args.out.join("overhead.json");
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    vllfl_core::experiment::write_atomic(&path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &PathBuf, scenes_path: &PathBuf, classes: &[usize]) -> Result<()> {
    let config = common.load()?;
    let seeds = config.resolved_seeds();
    let world = generate_world(&config.world, seeds.world)?;
    let ad = &config.base_adaptation;
    let backbone = base_adaptation(&world, ad.steps, ad.shots_per_class, ad.optimizer, seeds.scenes, config.exec)?;
    let bytes = std::fs::read(checkpoint)?;
    let model = PromptModel::from_bytes(&bytes)?;
    let file = File::open(scenes_path)?;
    let scenes = read_scene_file(BufReader::new(file), world.dim(), world.n_classes())?;
    let class_ids: Vec<usize> = if classes.is_empty() {
        (0..world.n_classes()).collect()
    } else {
        classes.to_vec()
    };
    if let Some(bad) = class_ids.iter().find(|&&c| c >= world.n_classes()) {
        return Err(Error::Config(format!("class id {bad} out of range")));
    }
    let names = world.names_of(&class_ids);
    let batch = encode_classnames(&backbone, &names)?;
    let prompts = model.prompts(&batch)?;
    let refs: Vec<&Scene> = scenes.iter().collect();
    let report = evaluate_prompts(
        &backbone,
        &batch,
        &class_ids,
        &prompts,
        &refs,
        config.thresholds,
        config.exec,
    )?;
    for (name, ap) in names.iter().zip(&report.per_class_ap) {
        match ap {
            Some(ap) => println!("{name:<12} AP {ap:.4}"),
            None => println!("{name:<12} AP -"),
        }
    }
    println!("mAP {:.4} over {} scenes", report.map, scenes.len());
    let path = write_report(&config, "eval_report.json", &report)?;
    println!("wrote {}", path.display());
    Ok(())
}
