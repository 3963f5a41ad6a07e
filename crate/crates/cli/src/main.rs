use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dggn_core::data::{export_csv, Dataset};
use dggn_core::harness::{
    ablation_rows, evaluate, load_results, render_table, report_emit, run_variants, write_run_artifacts, Experiment,
    Preset, RunConfig, Variant,
};
use dggn_core::classifiers::ForestModel;
use dggn_core::encoder::Encoder;
use dggn_core::memory::Strategy;

#[derive(Parser, Debug)]
#[command(name = "dggn", version, about = "Dual-granularity class-incremental fault diagnosis")]
struct Cli {
    /// Run configuration (JSON); overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, replacing the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: PresetArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Baep,
    Herding,
    Random,
    Mixed,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Baep => Strategy::Baep,
            StrategyArg::Herding => Strategy::Herding,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Mixed => Strategy::Mixed,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic dataset as train.csv / test.csv.
    Generate,
    /// Train all sessions and write results, tables, embeddings and checkpoints.
    Train,
    /// Evaluate saved checkpoints on the test split of all scheduled classes.
    Eval(EvalArgs),
    /// Rebuild table.csv and cka.csv from a results.json.
    Report(ReportArgs),
    /// Run ablation variants next to the full method and write a comparison table.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory; defaults to <out>/checkpoints.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Defaults to <out>/results.json.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Component to switch off: moia, ca_branch, msca, knowledge_transfer, finetune or sqrt_scale.
    #[arg(long)]
    component: Vec<String>,
    /// Replay strategy to compare.
    #[arg(long, value_enum)]
    replay: Vec<StrategyArg>,
    /// Every component variant and every replay strategy.
    #[arg(long)]
    all: bool,
}

/// Errors that should exit with the usage status.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(Usage(format!("config file {} does not exist", p.display())).into());
            }
            RunConfig::load(p).map_err(|e| Usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => RunConfig::preset(match cli.preset {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Usage(format!("invalid config: {e}")))?;
    Ok(cfg)
}

fn generate(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let schedule = cfg.schedule.build()?;
    let data = Dataset::synthetic(&cfg.generator, &schedule, cfg.seed)?;
    let shape = data.shape();
    std::fs::create_dir_all(&cli.out)?;
    export_csv(&data.train, shape, cli.out.join("train.csv"))?;
    export_csv(&data.test, shape, cli.out.join("test.csv"))?;
    std::fs::write(cli.out.join("config.json"), cfg.to_json()?)?;
    println!("wrote {} train and {} test windows to {}", data.train.len(), data.test.len(), cli.out.display());
    Ok(())
}

fn train(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let exp = Experiment::new(cfg)?;
    let (result, state) = exp.run()?;
    write_run_artifacts(&exp, &state, &result, &cli.out)?;
    for s in &result.sessions {
        println!(
            "session {}: accuracy {:.2}%, macro {:.2}%, fused head {:.2}%",
            s.session + 1,
            100.0 * s.checkpoint_averaged_accuracy,
            100.0 * s.checkpoint_averaged_macro,
            100.0 * s.fused_head_accuracy
        );
    }
    println!("average {:.2}%; results in {}", 100.0 * result.average_accuracy, cli.out.display());
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> anyhow::Result<()> {
    let dir = args.checkpoint.clone().unwrap_or_else(|| cli.out.join("checkpoints"));
    let cfg_path = dir.join("config.json");
    if !cfg_path.is_file() {
        return Err(Usage(format!("no checkpoint config at {}", cfg_path.display())).into());
    }
    let cfg = RunConfig::load(&cfg_path)?;
    let encoder = Encoder::load_json(dir.join("encoder_cs.json"))?;
    let forest = ForestModel::load_json(dir.join("forest.json"))?;
    let exp = Experiment::new(cfg)?;
    let classes = exp.schedule.all_classes();
    let test = exp.data.test_of(&classes);
    let e = evaluate(&encoder, &forest, &test, &classes, exp.cfg.training.eval_batch)?;
    println!("{}", serde_json::to_string_pretty(&e)?);
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> anyhow::Result<()> {
    let path = args.results.clone().unwrap_or_else(|| cli.out.join("results.json"));
    if !path.is_file() {
        return Err(Usage(format!("results file {} does not exist", path.display())).into());
    }
    let result = load_results(&path)?;
    report_emit(&result, &cli.out)?;
    println!("report written to {}", cli.out.display());
    Ok(())
}

fn ablate(cli: &Cli, args: &AblateArgs) -> anyhow::Result<()> {
    let mut variants = vec![Variant::Full];
    let mut push = |v: Variant| {
        if !variants.contains(&v) {
            variants.push(v);
        }
    };
    if args.all {
        Variant::COMPONENTS.into_iter().for_each(&mut push);
        push(Variant::Finetune);
        Strategy::ALL.into_iter().map(Variant::Replay).for_each(&mut push);
    }
    for c in &args.component {
        push(Variant::from_component(c).map_err(|e| Usage(e.to_string()))?);
    }
    for s in &args.replay {
        push(Variant::Replay((*s).into()));
    }
    if variants.len() == 1 {
        bail!(Usage("ablate needs --component, --replay or --all".into()));
    }
    let cfg = load_config(cli)?;
    let results = run_variants(&cfg, &variants)?;
    let table = render_table(&ablation_rows(&results))?;
    std::fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("ablation.csv");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    for (v, r) in &results {
        report_emit(r, cli.out.join(slug(&v.label())))?;
    }
    print!("{table}");
    Ok(())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Generate => generate(cli),
        Command::Train => train(cli),
        Command::Eval(a) => eval(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Ablate(a) => ablate(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
