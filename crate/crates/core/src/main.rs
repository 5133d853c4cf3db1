use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dtsim::calibrate::{self, Band, CalibrationError};
use dtsim::config::{self, ScenarioConfig};
use dtsim::metrics::{self, DemandRecord, ExportError};
use dtsim::{DeploymentMode, Simulation};

#[derive(Parser)]
#[command(name = "dtsim", version, about = "Digital-twin network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Deployment {
    Centralized,
    Multilayer,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or both deployments and write results.
    Run {
        /// Scenario file; built-in defaults if omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides `deployment` from the scenario.
        #[arg(long, value_enum)]
        deployment: Option<Deployment>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds.
        #[arg(long, allow_negative_numbers = true)]
        duration: Option<f64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Format of the per-demand record files.
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Check a scenario file and print the resolved configuration.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Fit workload sizes so predicted mean latencies sit mid-band.
    Calibrate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Centralized target band in seconds, `lo,hi`.
        #[arg(long, default_value = "0.870,0.930")]
        centralized: String,
        /// Multi-layer target band in seconds, `lo,hi`.
        #[arg(long, default_value = "0.330,0.360")]
        multilayer: String,
    },
}

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

fn load(path: Option<&Path>) -> Result<ScenarioConfig, ExitCode> {
    let parsed = match path {
        Some(p) => config::parse_file(p),
        None => Ok(ScenarioConfig::default()),
    };
    parsed.map_err(|errs| {
        for e in &errs.0 {
            eprintln!("error: {e}");
        }
        let code = if errs.0.iter().any(|e| matches!(e, config::ConfigError::Io { .. })) {
            EXIT_RUNTIME
        } else {
            EXIT_INVALID
        };
        ExitCode::from(code)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Validate { scenario } => match load(scenario.as_deref()) {
            Ok(cfg) => {
                print!("{}", cfg.to_text());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            scenario,
            deployment,
            seed,
            duration,
            out,
            format,
        } => {
            let mut cfg = match load(scenario.as_deref()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            let errs = cfg.validate();
            if !errs.is_empty() {
                for e in errs {
                    eprintln!("error: {e}");
                }
                return ExitCode::from(EXIT_INVALID);
            }
            let modes = match deployment {
                None => vec![cfg.deployment],
                Some(Deployment::Centralized) => vec![DeploymentMode::Centralized],
                Some(Deployment::Multilayer) => vec![DeploymentMode::MultiLayer],
                Some(Deployment::Both) => vec![DeploymentMode::Centralized, DeploymentMode::MultiLayer],
            };
            match run(&cfg, &modes, &out, format) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(EXIT_RUNTIME),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Calibrate {
            scenario,
            centralized,
            multilayer,
        } => {
            let cfg = match load(scenario.as_deref()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let bands = match (Band::parse(&centralized), Band::parse(&multilayer)) {
                (Ok(c), Ok(m)) => (c, m),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            match calibrate::calibrate(&cfg, bands.0, bands.1) {
                Ok(fit) => {
                    print!("{}", fit.render());
                    ExitCode::SUCCESS
                }
                Err(CalibrationError::Infeasible { report, .. }) => {
                    eprint!("{report}");
                    ExitCode::from(EXIT_INFEASIBLE)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_INVALID)
                }
            }
        }
    }
}

/// Runs each mode on its own thread and writes the result files. Returns
/// `false` if any run stopped on an invariant violation.
fn run(cfg: &ScenarioConfig, modes: &[DeploymentMode], out: &Path, format: Format) -> Result<bool, ExportError> {
    std::fs::create_dir_all(out).map_err(|source| ExportError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let outputs: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&mode| s.spawn(move || Simulation::new(cfg, mode).map(Simulation::run)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut ok = true;
    let mut record_files = Vec::new();
    for (mode, output) in modes.iter().zip(outputs) {
        let output = match output {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: {mode}: {e}");
                ok = false;
                continue;
            }
        };
        let name = mode.as_str();
        let records_path = match format {
            Format::Csv => {
                let p = out.join(format!("{name}.records.csv"));
                metrics::write_records_csv(&p, &output.records)?;
                p
            }
            Format::Json => {
                let p = out.join(format!("{name}.records.json"));
                metrics::write_records_json(&p, &output.records)?;
                p
            }
        };
        metrics::write_json(&out.join(format!("{name}.summary.json")), &output.summary)?;
        if let Some(f) = &output.summary.failure {
            eprintln!("error: {name} run aborted: {f}");
            ok = false;
        }
        let s = &output.summary;
        println!(
            "{name}: {} demands, {} completed, mean latency {}",
            s.generated,
            s.completed,
            s.latency.mean.map_or("n/a".into(), |m| format!("{m:.4} s")),
        );
        record_files.push((*mode, records_path));
    }
    if ok && record_files.len() == 2 {
        let read = |p: &Path| -> Result<Vec<DemandRecord>, ExportError> {
            match format {
                Format::Csv => metrics::read_records_csv(p),
                Format::Json => {
                    let text = std::fs::read(p).map_err(|source| ExportError::Io {
                        path: p.display().to_string(),
                        source,
                    })?;
                    serde_json::from_slice(&text).map_err(|source| ExportError::Json {
                        path: p.display().to_string(),
                        source,
                    })
                }
            }
        };
        let central = read(&record_files[0].1)?;
        let multi = read(&record_files[1].1)?;
        let cmp = metrics::compare(&central, &multi, cfg.duration_s);
        metrics::write_json(&out.join("comparison.json"), &cmp)?;
    }
    Ok(ok)
}
