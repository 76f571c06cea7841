use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phonecls::experiments::{
    expand_grid, load_report, run_stages, tabulate, ComparisonTable, EvaluationReport, ExperimentConfig, GridSpec,
    RunOptions, Stage,
};
use phonecls::models::BackendRegistry;
use phonecls::synth::{generate, SynthConfig};
use phonecls::{Error, Result};

#[derive(Parser)]
#[command(name = "phonecls", version, about = "Frame-level phone classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Override every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Discard an existing run directory first.
    #[arg(long)]
    force: bool,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse alignments and cut frames.
    Ingest(Common),
    /// Balance fine-tuning frames and split train/validation.
    Balance(Common),
    /// Extract features and train; keeps the best validation epoch.
    Train(Common),
    /// Score test corpora: balanced accuracy, bootstrap CI, confusion.
    Evaluate(Common),
    /// Correlate per-speaker accuracy with expert ratings.
    Correlate(Common),
    /// Assemble report.json, or tabulate existing reports.
    Report(ReportArgs),
    /// All stages in order.
    Run(Common),
    /// Expand a config template over factor lists, optionally running each.
    Grid(GridArgs),
    /// Write a synthetic corpus with ratings and an example config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Report files or run directories to compare instead of running.
    #[arg(long, num_args = 1..)]
    tabulate: Vec<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// TOML file with a `[factors]` table of dotted paths → value lists.
    #[arg(long)]
    factors: PathBuf,
    /// Run every expanded config and tabulate the reports.
    #[arg(long)]
    run: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite an existing synthetic corpus.
    #[arg(long)]
    force: bool,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn stage(common: &Common, until: Stage) -> Result<()> {
    let cfg = load_config(&common.config, common.seed)?;
    let opts = RunOptions {
        out_dir: common.out.clone(),
        force: common.force,
        until,
    };
    let outcome = run_stages(&cfg, &opts, &BackendRegistry::default())?;
    for s in &outcome.executed {
        println!("{}: {s} done", cfg.run_id);
    }
    if let Some(report) = &outcome.report {
        print_table(std::slice::from_ref(report))?;
    }
    println!("run directory: {}", outcome.run_dir.display());
    Ok(())
}

fn print_table(reports: &[EvaluationReport]) -> Result<ComparisonTable> {
    let table = tabulate(reports)?;
    print!("{}", table.to_text());
    Ok(table)
}

fn write_table(table: &ComparisonTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    table.write_csv(&dir.join("table.csv"))?;
    let txt = dir.join("table.txt");
    fs::write(&txt, table.to_text()).map_err(|e| Error::Io {
        path: txt.display().to_string(),
        message: e.to_string(),
    })?;
    println!("tables: {} and {}", dir.join("table.csv").display(), txt.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    if !args.tabulate.is_empty() {
        let reports = args
            .tabulate
            .iter()
            .map(|p| {
                if p.is_dir() {
                    load_report(p)
                } else {
                    EvaluationReport::read(p)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let table = print_table(&reports)?;
        return write_table(&table, &args.out);
    }
    let Some(config) = &args.config else {
        return Err(Error::Config("report needs --config or --tabulate".into()));
    };
    stage(
        &Common {
            config: config.clone(),
            seed: args.seed,
            force: args.force,
            out: args.out.clone(),
        },
        Stage::Report,
    )
}

fn grid(args: &GridArgs) -> Result<()> {
    let template = load_config(&args.common.config, args.common.seed)?;
    let text = fs::read_to_string(&args.factors).map_err(|e| Error::Config(format!("{}: {e}", args.factors.display())))?;
    let points = expand_grid(&template, &GridSpec::from_toml(&text)?)?;
    let grid_dir = args.common.out.join(format!("{}-grid", template.run_id));
    fs::create_dir_all(&grid_dir).map_err(|e| Error::Io {
        path: grid_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut index = serde_json::Map::new();
    for p in &points {
        let mut cfg = p.config.clone();
        cfg.absolutize();
        let path = grid_dir.join(format!("{}.json", cfg.run_id));
        let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        index.insert(cfg.run_id.clone(), serde_json::to_value(&p.assignment).expect("values serialize"));
        println!("{}", path.display());
    }
    let index_path = grid_dir.join("grid.json");
    fs::write(&index_path, serde_json::to_string_pretty(&index).expect("index serializes") + "\n").map_err(|e| {
        Error::Io {
            path: index_path.display().to_string(),
            message: e.to_string(),
        }
    })?;
    if !args.run {
        return Ok(());
    }
    let mut reports = Vec::new();
    for p in &points {
        let opts = RunOptions {
            out_dir: args.common.out.clone(),
            force: args.common.force,
            until: Stage::Report,
        };
        let outcome = run_stages(&p.config, &opts, &BackendRegistry::default())?;
        reports.push(outcome.report.expect("report stage ran"));
    }
    let table = print_table(&reports)?;
    write_table(&table, &grid_dir)
}

fn synth(args: &SynthArgs) -> Result<()> {
    if args.out.join("experiment.toml").exists() && !args.force {
        return Err(Error::Config(format!(
            "{} already holds a synthetic corpus; use --force to overwrite",
            args.out.display()
        )));
    }
    let cfg = SynthConfig {
        seed: args.seed,
        ..SynthConfig::default()
    };
    let summary = generate(&args.out, &cfg)?;
    println!(
        "{:.1} minutes over {} corpora, {} speakers",
        summary.total_seconds / 60.0,
        summary.manifests.len(),
        summary.speakers.len()
    );
    println!("config: {}", summary.config_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(c) => stage(c, Stage::Ingest),
        Command::Balance(c) => stage(c, Stage::Balance),
        Command::Train(c) => stage(c, Stage::Train),
        Command::Evaluate(c) => stage(c, Stage::Evaluate),
        Command::Correlate(c) => stage(c, Stage::Correlate),
        Command::Run(c) => stage(c, Stage::Report),
        Command::Report(a) => report(a),
        Command::Grid(a) => grid(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
