use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use lssm::config::{parse_config_with, RunConfig};
use lssm_cli::{artifact_root, cmd_audit, cmd_bound_sweep, cmd_ensemble, cmd_run, cmd_spectrum_dump};

#[derive(Parser)]
#[command(name = "lssm", version, about = "Stochastic Ladyzhenskaya-Smagorinsky simulator and statistics harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Override a config key, e.g. `--set flow.nu=0.05` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact root (default: $LSSM_ARTIFACT_ROOT or ./artifacts).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    echo: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut ov = self.overrides.clone();
        if let Some(t) = self.threads {
            ov.push(format!("ensemble.parallel_width={t}"));
        }
        Ok(parse_config_with(&self.config, &ov)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stream index of the trajectory.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Continue from a checkpoint instead of the initial condition.
        #[arg(long)]
        restart: Option<PathBuf>,
    },
    /// Run an ensemble and report pooled statistics.
    Ensemble {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Override `ensemble.members`.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Re-check stored ensemble artifacts.
    Audit {
        /// Directory `<root>/<config_hash>/<seed>`.
        dir: PathBuf,
    },
    /// Ensembles over a list of viscosities.
    BoundSweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated viscosities.
        #[arg(long, value_delimiter = ',', required = true)]
        nu: Vec<f64>,
        /// Output directory for `sweep.csv` and `sweep_plot.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Largest acceptable `ratio_B3`.
        #[arg(long, default_value_t = 4.0)]
        ratio_cap: f64,
    },
    /// Print the shell energy spectrum of a checkpoint.
    SpectrumDump {
        checkpoint: PathBuf,
    },
}

fn status(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { cfg, index, restart } => {
            let c = cfg.load()?;
            if cfg.echo {
                print!("{}", c.to_toml());
                return Ok(ExitCode::SUCCESS);
            }
            let root = artifact_root(cfg.root.as_deref());
            let out = cmd_run(&c, &root, index, restart.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&out.report)?);
            eprintln!("artifacts: {}", out.dir.join(index.to_string()).display());
            Ok(status(out.report.pass))
        }
        Command::Ensemble { cfg, members } => {
            let mut c = cfg.load()?;
            if let Some(m) = members {
                c.ensemble.members = m;
                c.validate()?;
            }
            if cfg.echo {
                print!("{}", c.to_toml());
                return Ok(ExitCode::SUCCESS);
            }
            let root = artifact_root(cfg.root.as_deref());
            let out = cmd_ensemble(&c, &root)?;
            let r = &out.report;
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({
                "config_hash": r.config_hash,
                "members": r.members,
                "survivors": r.survivors,
                "pooled": r.pooled,
                "stderr": r.stderr,
                "bound": r.bound,
                "pass": r.pass,
            }))?);
            eprintln!("report: {}", out.dir.join("ensemble.json").display());
            Ok(status(r.pass))
        }
        Command::Audit { dir } => {
            let rep = cmd_audit(&dir)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(status(rep.pass))
        }
        Command::BoundSweep { cfg, nu, out, ratio_cap } => {
            let c = cfg.load()?;
            let root = artifact_root(cfg.root.as_deref());
            let res = cmd_bound_sweep(&c, &nu, &root, &out, ratio_cap)?;
            print!("{}", std::fs::read_to_string(&res.table)?);
            eprintln!("plot data: {}", res.plot.display());
            Ok(status(res.pass))
        }
        Command::SpectrumDump { checkpoint } => {
            println!("shell,energy");
            for (k, e) in cmd_spectrum_dump(&checkpoint)? {
                println!("{k},{e:e}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
