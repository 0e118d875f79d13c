use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use haloscope::physics::DpdmParams;
use haloscope_cli::commands::{self, CollectOptions, ServeOptions};
use haloscope_cli::config::{PipelineConfig, Resolved};
use haloscope_cli::criteria::Profile;
use haloscope_cli::output::Output;
use haloscope_cli::reproduce;
use haloscope_cli::{CliError, Result};
use haloscope_wire::{data_dir, DATA_DIR_ENV};

/// Magnetometer-network dark-photon haloscope: simulation, streaming,
/// correlation and detection statistics.
///
/// Exit codes: 0 success, 1 acceptance criterion failed, 2 usage or
/// configuration error, 3 data-integrity error.
#[derive(Parser, Debug)]
#[command(name = "haloscope", version, about, long_about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Pipeline configuration file (JSON). Defaults give the 15-sensor, 2000 s network.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override for simulation and Monte-Carlo trials.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (default: the config's output_dir, else "out"; run
    /// files default to the data directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArg {
    /// Run file to analyse. Relative paths not found as given are looked up
    /// in the data directory. Without it the run is simulated from the config.
    #[arg(long, value_name = "PATH")]
    run: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Monte-Carlo noise trials for the threshold.
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Confidence level of thresholds and limits.
    #[arg(long, value_name = "FRACTION")]
    cl: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the physical constants table as JSON (and write constants.json with --out).
    Constants,
    /// Simulate the configured run and write a run file plus a JSON sidecar.
    Simulate {
        /// Override the run duration, seconds (0 gives a valid empty run).
        #[arg(long, value_name = "SECONDS")]
        duration: Option<f64>,
        /// Run file name inside the output directory.
        #[arg(long, default_value = "run.amlr", value_name = "NAME")]
        name: String,
    },
    /// Stream a run to a collector, one node per station.
    Serve {
        /// Collector address.
        #[arg(long, value_name = "HOST:PORT")]
        endpoint: String,
        #[command(flatten)]
        run: RunArg,
        /// Samples per frame.
        #[arg(long, default_value_t = 4096, value_name = "SAMPLES")]
        chunk: usize,
        /// Consecutive failed attempts tolerated before giving up.
        #[arg(long, default_value_t = 8, value_name = "N")]
        max_retries: u32,
        /// Fault injection: drop the first station's connection after this
        /// send (0-based, repeatable).
        #[arg(long, value_name = "N")]
        drop_after: Vec<usize>,
    },
    /// Receive every configured sensor, align and write a run file.
    Collect {
        /// Address to listen on.
        #[arg(long, value_name = "HOST:PORT")]
        endpoint: String,
        /// Run file name inside the output directory.
        #[arg(long, default_value = "collected.amlr", value_name = "NAME")]
        name: String,
        /// Largest tolerated sample-grid offset between sensors, seconds.
        #[arg(long, default_value_t = 10e-6, value_name = "SECONDS")]
        tolerance: f64,
        /// Give up if the run is incomplete after this many seconds.
        #[arg(long, default_value_t = 120.0, value_name = "SECONDS")]
        deadline: f64,
    },
    /// Cross-correlation spectra, subset averages and the sensitivity curve.
    Correlate {
        #[command(flatten)]
        run: RunArg,
    },
    /// Search for candidates above the Monte-Carlo threshold and apply vetoes.
    Scan {
        #[command(flatten)]
        run: RunArg,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Inject signals, rerun the pipeline and report recovery.
    Inject {
        #[command(flatten)]
        run: RunArg,
        #[command(flatten)]
        detect: DetectArgs,
        /// Tone frequency, Hz (repeatable, paired with --epsilon).
        #[arg(long, required = true, value_name = "HZ")]
        frequency: Vec<f64>,
        /// Kinetic mixing of each tone (repeatable; one value applies to all).
        #[arg(long, required = true, value_name = "EPSILON")]
        epsilon: Vec<f64>,
    },
    /// Exclusion curve (mass_eV, epsilon_95) with a provenance sidecar.
    Limits {
        #[command(flatten)]
        run: RunArg,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Run the desk-scale reproduction and report every acceptance criterion.
    ReproducePaper {
        /// "full" (acceptance sizes) or "quick" (reduced sizes).
        #[arg(long, default_value = "full", value_name = "NAME")]
        profile: String,
        /// Earlier report.json; adds the determinism criterion comparing artifact hashes.
        #[arg(long, value_name = "PATH")]
        compare: Option<PathBuf>,
    },
    /// Plot-ready CSV tables from earlier artifacts.
    ExportPlots {
        /// Directory holding sensitivity.csv, exclusion.csv and snr_histogram.csv.
        #[arg(long, value_name = "DIR")]
        artifacts: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<Resolved> {
    let cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.resolve(common.seed)
}

fn out_dir(common: &Common, cfg: Option<&Resolved>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_path(p: &Path) -> PathBuf {
    if p.is_relative() && !p.exists() {
        let alt = data_dir().join(p);
        if alt.exists() {
            return alt;
        }
    }
    p.to_path_buf()
}

fn apply_detect(cfg: &mut Resolved, d: &DetectArgs) -> Result<()> {
    if let Some(n) = d.trials {
        cfg.detection.n_trials = n;
    }
    if let Some(cl) = d.cl {
        if !(cl > 0.0 && cl < 1.0) {
            return Err(CliError::Usage(format!("--cl {cl} must lie in (0, 1)")));
        }
        cfg.detection.cl = cl;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Constants => {
            let out = match &common.out {
                Some(d) => Some(Output::new(d, "none")?),
                None => None,
            };
            println!("{}", commands::constants(out.as_ref())?);
        }
        Command::Simulate { duration, name } => {
            let mut cfg = resolve(common)?;
            if let Some(d) = duration {
                cfg.spec.duration = d;
                cfg.spec.validate()?;
            }
            let dir = common.out.clone().unwrap_or_else(data_dir);
            let out = Output::new(&dir, &cfg.hash())?;
            let path = commands::simulate(&cfg, &out, &name)?;
            println!("{}", path.display());
        }
        Command::Serve {
            endpoint,
            run,
            chunk,
            max_retries,
            drop_after,
        } => {
            let cfg = resolve(common)?;
            let loaded = commands::load_run(&cfg, run.run.as_deref().map(run_path).as_deref())?;
            let frames = commands::serve(
                &loaded.run,
                &endpoint,
                &ServeOptions {
                    chunk,
                    max_retries,
                    drop_after,
                },
            )?;
            eprintln!("sent {frames} frames to {endpoint}");
        }
        Command::Collect {
            endpoint,
            name,
            tolerance,
            deadline,
        } => {
            let cfg = resolve(common)?;
            if !(deadline > 0.0 && deadline.is_finite()) || !(tolerance >= 0.0) {
                return Err(CliError::Usage("deadline must be positive, tolerance non-negative".into()));
            }
            let dir = common.out.clone().unwrap_or_else(data_dir);
            let out = Output::new(&dir, &cfg.hash())?;
            let opts = CollectOptions {
                tolerance_s: tolerance,
                deadline: Duration::from_secs_f64(deadline),
            };
            let path = commands::collect(&cfg, &endpoint, &out, &name, &opts)?;
            println!("{}", path.display());
        }
        Command::Correlate { run } => {
            let cfg = resolve(common)?;
            let loaded = commands::load_run(&cfg, run.run.as_deref().map(run_path).as_deref())?;
            let out = Output::new(&out_dir(common, Some(&cfg)), &cfg.hash())?;
            commands::correlate(&cfg, &loaded, &out)?;
            println!("{}", out.dir.display());
        }
        Command::Scan { run, detect } => {
            let mut cfg = resolve(common)?;
            apply_detect(&mut cfg, &detect)?;
            let loaded = commands::load_run(&cfg, run.run.as_deref().map(run_path).as_deref())?;
            let out = Output::new(&out_dir(common, Some(&cfg)), &cfg.hash())?;
            let s = commands::scan(&cfg, &loaded, &out)?;
            println!(
                "{} candidates in {} bins, {} pass vetoes",
                s.candidates, s.bins, s.passed
            );
        }
        Command::Inject {
            run,
            detect,
            frequency,
            epsilon,
        } => {
            let mut cfg = resolve(common)?;
            apply_detect(&mut cfg, &detect)?;
            if epsilon.len() != 1 && epsilon.len() != frequency.len() {
                return Err(CliError::Usage(format!(
                    "{} --frequency values but {} --epsilon values",
                    frequency.len(),
                    epsilon.len()
                )));
            }
            let tones = frequency
                .iter()
                .enumerate()
                .map(|(i, &f)| DpdmParams::new(f, epsilon[i.min(epsilon.len() - 1)]))
                .collect::<Result<Vec<_>, _>>()?;
            let loaded = commands::load_run(&cfg, run.run.as_deref().map(run_path).as_deref())?;
            let out = Output::new(&out_dir(common, Some(&cfg)), &cfg.hash())?;
            for row in commands::inject(&cfg, &loaded, &tones, &out)? {
                println!("{}", row.join(","));
            }
        }
        Command::Limits { run, detect } => {
            let mut cfg = resolve(common)?;
            apply_detect(&mut cfg, &detect)?;
            let loaded = commands::load_run(&cfg, run.run.as_deref().map(run_path).as_deref())?;
            let out = Output::new(&out_dir(common, Some(&cfg)), &cfg.hash())?;
            let (slope, top) = commands::limits(&cfg, &loaded, &out)?;
            println!("log-log slope {slope:.4}, epsilon_95 at top frequency {top:.3e}");
        }
        Command::ReproducePaper { profile, compare } => {
            let p = Profile::by_name(&profile)
                .ok_or_else(|| CliError::Usage(format!("unknown profile {profile:?} (quick, full)")))?;
            let seed = common.seed.unwrap_or(0);
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("reproduction"));
            let out = Output::new(&dir, &reproduce::reproduction_hash(&p, seed))?;
            let report = reproduce::run(&p, seed, &out, compare.as_deref(), &mut |c, secs| {
                println!("{}  [{secs:.1} s]", c.line());
            })?;
            let failed = report.failed();
            if !failed.is_empty() {
                let names: Vec<String> = failed.iter().map(|c| format!("{} ({})", c.id, c.name)).collect();
                return Err(CliError::Criterion(names.join(", ")));
            }
        }
        Command::ExportPlots { artifacts } => {
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("plots"));
            for p in commands::export_plots(&artifacts, &dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors and 0 for --help / --version.
    let cli = Cli::parse();
    log::debug!("data directory {} (override with {DATA_DIR_ENV})", data_dir().display());
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
