use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fedvps_core::harness::{
    experiment_recognizer, experiment_selector, experiment_stitch_convergence, presets, run_scenario, write_csv,
    ScenarioConfig, Summary,
};

#[derive(Parser)]
#[command(name = "fedvps", version, about = "Federated visual positioning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write cycles.csv and summary.json.
    Run {
        /// Scenario JSON file or preset name.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a Monte-Carlo experiment and write <name>.csv and summary.json.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentKind,
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Largest observation count for the stitch experiment.
        #[arg(long, default_value_t = 10)]
        max_obs: usize,
    },
    /// Print a preset as JSON, or list presets when no name is given.
    Preset { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Stitch,
    Selector,
    Recognizer,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Stitch => "stitch",
            ExperimentKind::Selector => "selector",
            ExperimentKind::Recognizer => "recognizer",
        }
    }
}

fn load_config(source: &str, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = if Path::new(source).exists() {
        let text = std::fs::read_to_string(source).with_context(|| format!("reading {source}"))?;
        ScenarioConfig::from_json(&text).with_context(|| format!("loading {source}"))?
    } else if let Some(cfg) = presets::by_name(source) {
        cfg
    } else {
        bail!("{source}: no such file or preset (presets: {})", presets::NAMES.join(", "));
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)? + "\n";
    std::fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let report = run_scenario(&cfg)?;
            report.write_to(&out)?;
            let s = &report.summary;
            println!(
                "{} cycles, {} with a fix, median position error {:.3} m -> {}",
                s.cycles,
                s.fixed_cycles,
                s.pos_err_median_m,
                out.display()
            );
        }
        Command::Experiment {
            name,
            config,
            trials,
            out,
            seed,
            max_obs,
        } => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let cfg = load_config(&config, seed)?;
            std::fs::create_dir_all(&out)?;
            let file = std::fs::File::create(out.join(format!("{}.csv", name.name())))?;
            let mut summary = Summary {
                seed: cfg.seed,
                ..Summary::default()
            };
            match name {
                ExperimentKind::Stitch => {
                    summary.stitch_error = experiment_stitch_convergence(&cfg, trials, max_obs)?;
                    write_csv(file, &summary.stitch_error)?;
                }
                ExperimentKind::Selector => {
                    summary.selector = experiment_selector(&cfg, trials)?;
                    write_csv(file, &summary.selector)?;
                }
                ExperimentKind::Recognizer => {
                    summary.recognizer = experiment_recognizer(&cfg, trials)?;
                    write_csv(file, &summary.recognizer)?;
                }
            }
            write_summary(&out, &summary)?;
            println!("{} experiment, {trials} trials -> {}", name.name(), out.display());
        }
        Command::Preset { name: None } => {
            for n in presets::NAMES {
                println!("{n}");
            }
        }
        Command::Preset { name: Some(n) } => {
            let cfg = presets::by_name(&n).with_context(|| format!("unknown preset {n}"))?;
            println!("{}", cfg.to_json());
        }
    }
    Ok(())
}
