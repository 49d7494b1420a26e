use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mra::bispectrum::{mom_estimate, BispectrumIndexSet, PilotMode};
use mra::harness::{
    fit_scaling_exponent, risk_sweep, Axis, CellSummary, Family, FitOptions, Method, ReportSummary, Response,
    RiskReport, SweepConfig,
};
use mra::io::{read_batch_file, read_signal, write_batch_file, write_signal, write_trace, EstimateDiagnostics, EstimateFile};
use mra::mle::{mle_estimate, OptimizerConfig, QuadratureGrid};
use mra::{loss, sample, sample_noiseless, SignalSpec};

#[derive(Parser)]
#[command(name = "mra", version, about = "Multi-reference alignment estimators and risk sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Generic,
    Hypercube,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Sigma,
    N,
    K,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponseArg {
    Mean,
    MeanTimesN,
    Trimmed,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a signal and write a batch of rotated noisy observations.
    Simulate {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "generic")]
        family: FamilyArg,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 0.5)]
        c_lo: f64,
        #[arg(long, default_value_t = 2.0)]
        c_hi: f64,
        #[arg(long)]
        out: PathBuf,
        /// Where the true signal goes; defaults to OUT with extension `signal.json`.
        #[arg(long)]
        signal_out: Option<PathBuf>,
    },
    /// Estimate the signal from a batch file.
    Estimate {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        /// True signal; enables the loss field and the oracle method.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines optimizer trace (likelihood methods only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep; writes records.csv and report.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a log-log scaling exponent from a sweep's records.csv or report.json.
    Fit {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long, value_enum, default_value = "mean")]
        response: ResponseArg,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: mra::MraError| e.to_string())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { k, sigma, n, seed, family, r, c_lo, c_hi, out, signal_out } => {
            let family = match family {
                FamilyArg::Generic => Family::Generic { r, c_lo, c_hi },
                FamilyArg::Hypercube => Family::Hypercube { r },
            };
            let truth = family.draw(k, sigma, n, seed)?;
            let batch = if sigma == 0.0 {
                sample_noiseless(&truth, n, seed)?
            } else {
                sample(&truth, sigma, n, seed)?
            };
            write_batch_file(&out, &batch).with_context(|| format!("writing {}", out.display()))?;
            let signal_out = signal_out.unwrap_or_else(|| out.with_extension("signal.json"));
            write_signal(&signal_out, &truth)?;
        }
        Command::Estimate { method, input, truth, out, trace } => {
            let batch = read_batch_file(&input).with_context(|| format!("reading {}", input.display()))?;
            let truth = truth.map(|p| read_signal(&p)).transpose()?;
            let est = estimate(&batch, method, truth.as_ref(), trace.as_deref())?;
            let file = File::create(&out).with_context(|| format!("writing {}", out.display()))?;
            serde_json::to_writer_pretty(BufWriter::new(file), &est)?;
        }
        Command::Sweep { config, out_dir } => {
            let cfg = SweepConfig::from_json_file(&config).with_context(|| format!("reading {}", config.display()))?;
            let report = risk_sweep(&cfg)?;
            report.write_dir(&out_dir)?;
            let failed: usize = report.cells().iter().map(|c| c.failed).sum();
            println!("{} records, {} cells, {failed} failed, digest {}", report.records().len(), report.cells().len(), report.digest());
        }
        Command::Fit { report, axis, method, response } => {
            let cells = load_cells(&report)?;
            let axis = match axis {
                AxisArg::Sigma => Axis::Sigma,
                AxisArg::N => Axis::N,
                AxisArg::K => Axis::K,
            };
            let response = match response {
                ResponseArg::Mean => Response::MeanLoss,
                ResponseArg::MeanTimesN => Response::MeanLossTimesN,
                ResponseArg::Trimmed => Response::TrimmedMean,
            };
            let fit = fit_scaling_exponent(&cells, axis, FitOptions { response, method })?;
            println!("{}", serde_json::to_string(&fit)?);
        }
    }
    Ok(())
}

fn load_cells(path: &Path) -> Result<Vec<CellSummary>> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Ok(RiskReport::read_csv(file)?.cells().to_vec()),
        Some("json") => Ok(serde_json::from_reader::<_, ReportSummary>(file)?.cells),
        _ => bail!("report must be a .csv records file or a .json summary"),
    }
}

fn estimate(
    batch: &mra::SampleBatch,
    method: Method,
    truth: Option<&SignalSpec>,
    trace: Option<&Path>,
) -> Result<EstimateFile> {
    let k = batch.k_max();
    let (signal, pilot_objective) = match method {
        Method::MomFm | Method::MomLinf | Method::MomOracle => {
            let mode = match method {
                Method::MomFm => PilotMode::FrequencyMarching,
                Method::MomLinf => PilotMode::LinfRefined,
                _ => match truth {
                    Some(t) => PilotMode::Oracle(t.phases().to_vec()),
                    None => bail!("mom-oracle needs --truth"),
                },
            };
            let m = mom_estimate(batch, &mode)?;
            (m.signal, m.pilot_objective)
        }
        Method::Mle | Method::MleFromMom => {
            let init = mom_estimate(batch, &PilotMode::FrequencyMarching)?;
            let r_max = init.signal.magnitudes().iter().cloned().fold(0.0, f64::max);
            let quad = QuadratureGrid::for_problem(k, r_max, batch.sigma())?;
            let out = mle_estimate(batch, &init.signal, &OptimizerConfig::default(), &quad)?;
            if let Some(w) = out.warning {
                eprintln!("warning: {w:?} after {} iterations, gradient norm {:.3e}", out.iterations, out.grad_norm);
            }
            if let Some(p) = trace {
                write_trace(BufWriter::new(File::create(p)?), &out.trace)?;
            }
            (out.signal, init.pilot_objective)
        }
    };
    let bispectrum_count = BispectrumIndexSet::new(k).len();
    Ok(EstimateFile {
        method: method.to_string(),
        k,
        r_hat: signal.magnitudes().to_vec(),
        phi_hat: signal.phases().to_vec(),
        diagnostics: EstimateDiagnostics { pilot_objective, bispectrum_count },
        loss: truth.map(|t| loss(&signal, t)).transpose()?,
    })
}
