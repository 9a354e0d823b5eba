mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jhgp::config::RunConfig;
use jhgp::Error;

#[derive(Parser)]
#[command(
    name = "jhgp",
    version,
    about = "Joint hierarchical Gaussian process models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set fit.mcmc.iterations=2000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Simulation preset: sim1, sim2, sim3 or table2.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Jhgp,
    HgpOnly,
    SurvivalOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Table1,
    Table2,
    Table3,
    Figure4,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write data, truth and a masked train/held-out split.
    Simulate(Common),
    /// Fit the model and write posterior draws, a manifest and a summary.
    Fit(Common),
    /// Forecast held-out ticks, or a horizon past each subject's last record.
    Forecast(Common),
    /// Score a forecast against simulation truth.
    Evaluate(Common),
    /// Rerun a simulation experiment and compare with the published values.
    Reproduce {
        #[arg(value_enum)]
        which: Experiment,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn resolve(&self) -> jhgp::Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("out={}", toml_string(&o.display().to_string())));
        }
        if let Some(p) = &self.preset {
            overrides.push(format!("simulate.preset={}", toml_string(p)));
        }
        if let Some(m) = self.mode {
            let name = match m {
                ModeArg::Jhgp => "jhgp",
                ModeArg::HgpOnly => "hgp-only",
                ModeArg::SurvivalOnly => "survival-only",
            };
            overrides.push(format!("fit.mode=\"{name}\""));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Config(_)) {
        1
    } else {
        2
    }
}

fn run(cli: Cli) -> jhgp::Result<()> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.resolve()?),
        Command::Fit(c) => commands::fit(&c.resolve()?, c.preset.is_some()),
        Command::Forecast(c) => commands::forecast(&c.resolve()?),
        Command::Evaluate(c) => commands::evaluate(&c.resolve()?),
        Command::Reproduce { which, common } => {
            let names: Vec<&str> = match which {
                Experiment::Table1 => vec!["table1"],
                Experiment::Table2 => vec!["table2"],
                Experiment::Table3 => vec!["table3"],
                Experiment::Figure4 => vec!["figure4"],
                Experiment::All => jhgp::reproduce::EXPERIMENTS.to_vec(),
            };
            commands::reproduce(&common.resolve()?, &names)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
