use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thinlimit::experiment::{load_or_build_table, run_case, run_gamma_sweep, run_verify, CaseMode, ExperimentConfig, VerifySuite};
use thinlimit::io::write_atomic;
use thinlimit::{Error, Result};

#[derive(Parser)]
#[command(name = "thinlimit", version, about = "Membrane limits of thin non-Euclidean elastic bodies")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed-order pairwise reductions.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Membrane,
    Bulk,
}

#[derive(Subcommand)]
enum Command {
    /// Build the relaxed membrane density table and write it as CSV.
    Envelope {
        #[command(flatten)]
        common: Common,
    },
    /// Minimize the membrane or the bulk energy once.
    Minimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "membrane")]
        mode: Mode,
        /// Thickness for bulk runs; defaults to the smallest configured h.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Run the membrane case and a bulk case per thickness.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run a verification battery: geometry, density, envelope or gradient.
    Verify {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.reproducible |= common.reproducible;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Envelope { common } => {
            let mut cfg = load(&common)?;
            let out = common.out.clone().or_else(|| cfg.output.envelope_table.clone()).unwrap_or_else(|| PathBuf::from("envelope.csv"));
            // Always rebuild: the table is the product here.
            cfg.output.envelope_table = None;
            let table = load_or_build_table(&cfg)?;
            let meta = table.write(&out)?;
            print_paths(&[out, meta]);
            Ok(0)
        }
        Command::Minimize { common, mode, h } => {
            let mut cfg = load(&common)?;
            let mode = match mode {
                Mode::Membrane => CaseMode::Membrane,
                Mode::Bulk => {
                    let h = match h {
                        Some(h) => {
                            cfg.h_list = vec![h];
                            cfg.validate()?;
                            h
                        }
                        None => *cfg.h_list.last().expect("validated non-empty"),
                    };
                    CaseMode::Bulk { h }
                }
            };
            let table = match mode {
                CaseMode::Membrane if cfg.relaxed => Some(load_or_build_table(&cfg)?),
                _ => None,
            };
            let run = run_case(&cfg, mode, table.as_ref())?;
            let paths = run.write(&out_dir(&common, &cfg))?;
            println!("{}", serde_json::to_string_pretty(&run.report)?);
            print_paths(&paths);
            Ok(0)
        }
        Command::Sweep { common } => {
            let cfg = load(&common)?;
            let table = if cfg.relaxed { Some(load_or_build_table(&cfg)?) } else { None };
            let report = run_gamma_sweep(&cfg, table.as_ref())?;
            let paths = report.write(&out_dir(&common, &cfg))?;
            print!("{}", report.to_csv());
            print_paths(&paths);
            if report.incomplete {
                for f in &report.failures {
                    eprintln!("error: case {:?} failed: {}", f.h, f.error);
                }
                return Ok(3);
            }
            Ok(0)
        }
        Command::Verify { suite, common } => {
            let suite: VerifySuite = suite.parse()?;
            let cfg = load(&common)?;
            let report = run_verify(suite, &cfg, None)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(p) = &common.out {
                write_atomic(Path::new(p), json.as_bytes())?;
            }
            println!("{json}");
            Ok(if report.passed { 0 } else { Error::Verification(String::new()).exit_code() })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
