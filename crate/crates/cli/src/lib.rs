//! Command implementations behind the `heraldsim` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use heraldsim_core::experiments::{
    calibrate_tau, low_power_tau, read_reference_table, reproduce_number_tables,
    run_power_comparison, run_sweep, simulate, simulate_tomography, symmetric_sweep,
    ExperimentConfig, SweepPoint, CALIBRATION_P00, HIGH_POWER_W, LOW_POWER_W,
};
use heraldsim_core::metrics::{
    chsh_max, fidelity_to_phi_plus, preparation_efficiency, tangle, total_state_fidelity_from,
    visibility_from_scan, MetricsReport, RateEstimate,
};
use heraldsim_core::tomography::{
    mle_reconstruct, monte_carlo_errors, read_counts_csv, McOptions, McStat, MleOptions, Resampling,
};
use heraldsim_core::{DetectorModel, Error, SpdcParams, TwoQubitDensityMatrix};
use serde::Serialize;

pub mod plot;

#[derive(Debug, Parser)]
#[command(
    name = "heraldsim",
    version,
    about = "Heralded entangled-photon simulation and tomography"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, env = "HERALDSIM_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact simulation of one configuration: number table, post-selected state, metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Preparation probability versus splitter transmission (T1 = T2).
    Sweep {
        /// Comma-separated transmissions.
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<f64>,
        /// 3 keeps the three-pair term alone; larger values use the full
        /// source truncated at that many pairs.
        #[arg(long, default_value_t = 4)]
        pairs: usize,
        /// Pair amplitude at high pump power (ignored for --pairs 3). Defaults
        /// to the value calibrated on the 50/50 vacuum probability.
        #[arg(long)]
        tau: Option<f64>,
        /// Also compare fidelities at high and reduced pump power.
        #[arg(long)]
        power_comparison: bool,
        /// Transmission of the power comparison.
        #[arg(long, default_value_t = 0.3)]
        power_t: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sample tomography counts from the exact post-selected state.
    TomoSim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Maximum-likelihood reconstruction from a count table.
    Reconstruct {
        #[arg(long)]
        counts: PathBuf,
        /// Maximize the fidelity over local unitaries.
        #[arg(long)]
        optimize_local: bool,
        /// Poisson-resampled reconstructions for error bars (0 disables).
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
        /// Iteration limit of the likelihood ascent.
        #[arg(long, default_value_t = MleOptions::default().max_iterations)]
        max_iterations: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Figures of merit from a state file or from rates.
    Metrics {
        /// JSON file with a `rho` field (16 `[re, im]` entries).
        #[arg(long)]
        rho: Option<PathBuf>,
        #[arg(long)]
        p11: Option<f64>,
        #[arg(long)]
        c4: Option<f64>,
        #[arg(long)]
        c6: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        /// Comma-separated coincidence counts of a phase scan.
        #[arg(long, value_delimiter = ',')]
        scan: Vec<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Photon-number tables compared with reference values.
    ReproduceTables {
        #[arg(long)]
        config: PathBuf,
        /// CSV with columns quantity,ratio,value,error.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit the pair amplitude to a measured vacuum probability.
    Calibrate {
        #[arg(long, default_value_t = CALIBRATION_P00)]
        target_p00: f64,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Base configuration for source and detector parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(Error::NonConvergence { .. }) => 3,
            CliError::Data(_) | CliError::File { .. } | CliError::Io(_) | CliError::Json(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn require_seed(seed: Option<u64>, command: &str) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage(format!("{command} is stochastic and requires --seed")))
}

fn out_dir(out: &OutArgs) -> CliResult<&Path> {
    fs::create_dir_all(&out.out)?;
    Ok(&out.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn open(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

fn create(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    Ok(ExperimentConfig::from_reader(open(path)?)?)
}

/// Runs one command, writing its outputs; returns the paths written.
pub fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Sweep {
            t,
            pairs,
            tau,
            power_comparison,
            power_t,
            out,
        } => cmd_sweep(&t, pairs, tau, power_comparison.then_some(power_t), &out),
        Command::TomoSim { config, seed, out } => {
            let seed = require_seed(seed, "tomo-sim")?;
            let cfg = load_config(&config)?;
            let table = simulate_tomography(&cfg, seed)?;
            let path = out_dir(&out)?.join(format!("counts_{}.csv", cfg.ratio_label()));
            table.write_csv(create(&path)?)?;
            Ok(vec![path])
        }
        Command::Reconstruct {
            counts,
            optimize_local,
            mc_samples,
            max_iterations,
            seed,
            out,
        } => {
            let seed = if mc_samples > 0 {
                Some(require_seed(seed, "reconstruct with --mc-samples")?)
            } else {
                seed
            };
            let mle = MleOptions {
                max_iterations,
                ..MleOptions::default()
            };
            cmd_reconstruct(&counts, optimize_local, mc_samples, seed, mle, &out)
        }
        Command::Metrics {
            rho,
            p11,
            c4,
            c6,
            eta,
            scan,
            out,
        } => cmd_metrics(rho.as_deref(), p11, (c4, c6, eta), &scan, &out),
        Command::ReproduceTables {
            config,
            reference,
            out,
        } => {
            let cfg = load_config(&config)?;
            let rows = match reference {
                Some(p) => read_reference_table(open(&p)?)?,
                None => Vec::new(),
            };
            let report = reproduce_number_tables(&cfg, &rows)?;
            let dir = out_dir(&out)?;
            let table_path = dir.join(format!("number_table_{}.csv", report.label));
            report.table.write_csv(create(&table_path)?)?;
            let cmp_path = dir.join(format!("table_comparison_{}.json", report.label));
            write_json(&cmp_path, &report.rows)?;
            Ok(vec![table_path, cmp_path])
        }
        Command::Calibrate {
            target_p00,
            t,
            config,
            out,
        } => {
            let (spdc, detectors) = match config {
                Some(p) => {
                    let c = load_config(&p)?;
                    (c.spdc, c.detectors)
                }
                None => (SpdcParams::default(), DetectorModel::default()),
            };
            let cal = calibrate_tau(target_p00, t, &spdc, &detectors)?;
            let path = out_dir(&out)?.join("calibration.json");
            write_json(&path, &cal)?;
            Ok(vec![path])
        }
    }
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: &'a ExperimentConfig,
    herald_probability: f64,
    coincidence_probability: f64,
    metrics: &'a MetricsReport,
    rho: Option<Vec<[f64; 2]>>,
}

fn cmd_simulate(config: &Path, out: &OutArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = load_config(config)?;
    let sim = simulate(&cfg)?;
    let dir = out_dir(out)?;
    let label = cfg.ratio_label();
    let table_path = dir.join(format!("number_table_{label}.csv"));
    sim.number_table.write_csv(create(&table_path)?)?;
    let report_path = dir.join(format!("simulate_{label}.json"));
    write_json(
        &report_path,
        &SimulateReport {
            config: &cfg,
            herald_probability: sim.herald_probability,
            coincidence_probability: sim.coincidence_probability,
            metrics: &sim.metrics,
            rho: sim.rho_post.as_ref().map(TwoQubitDensityMatrix::to_entries),
        },
    )?;
    Ok(vec![table_path, report_path])
}

fn cmd_sweep(
    ts: &[f64],
    pairs: usize,
    tau: Option<f64>,
    power_t: Option<f64>,
    out: &OutArgs,
) -> CliResult<Vec<PathBuf>> {
    if pairs < 3 {
        return Err(CliError::Usage("--pairs must be at least 3".into()));
    }
    let base = SpdcParams::default();
    let spdc = if pairs == 3 {
        SpdcParams {
            tau: 0.0,
            max_pairs: 3,
            ..base
        }
    } else {
        let tau = match tau {
            Some(t) => t,
            None => calibrate_tau(CALIBRATION_P00, 0.5, &base, &DetectorModel::default())?.tau_high,
        };
        let spdc = SpdcParams {
            tau,
            max_pairs: pairs,
            photon_cap: 2 * pairs,
            ..base
        };
        spdc.validate()?;
        spdc
    };
    let detectors = DetectorModel::default();
    let points: Vec<SweepPoint> = if ts.is_empty() {
        Vec::new()
    } else {
        run_sweep(&symmetric_sweep(ts, &spdc, &detectors))?
    };
    let dir = out_dir(out)?;
    let sweep_path = dir.join("sweep.csv");
    plot::write_sweep_csv(create(&sweep_path)?, &points)?;
    let fig2 = dir.join("fig2_series.csv");
    let series: Vec<plot::SeriesPoint> = points
        .iter()
        .map(|p| plot::SeriesPoint {
            x: p.t1,
            y: p.p_estimator,
            error: None,
        })
        .collect();
    plot::write_series(create(&fig2)?, "transmission", "probability", &series)?;
    let mut written = vec![sweep_path, fig2];
    if let Some(t) = power_t {
        let tau_high = match tau {
            Some(t) => t,
            None => {
                calibrate_tau(CALIBRATION_P00, 0.5, &SpdcParams::default(), &detectors)?.tau_high
            }
        };
        let spdc = SpdcParams {
            tau: tau_high,
            ..SpdcParams::default()
        };
        let cmp = run_power_comparison(tau_high, low_power_tau(tau_high)?, t, &spdc, &detectors)?;
        let fig3 = dir.join("fig3_series.csv");
        let series = [
            plot::SeriesPoint {
                x: LOW_POWER_W,
                y: cmp.f_post_low,
                error: None,
            },
            plot::SeriesPoint {
                x: HIGH_POWER_W,
                y: cmp.f_post_high,
                error: None,
            },
        ];
        plot::write_series(create(&fig3)?, "power_w", "fidelity", &series)?;
        let json = dir.join("power_comparison.json");
        write_json(&json, &cmp)?;
        written.extend([fig3, json]);
    }
    Ok(written)
}

#[derive(Serialize)]
struct Estimate {
    value: f64,
    mc_mean: Option<f64>,
    mc_std: Option<f64>,
}

#[derive(Serialize)]
struct MonteCarloInfo {
    samples: usize,
    seed: u64,
    successes: usize,
    failures: usize,
}

#[derive(Serialize)]
struct ReconstructionReport {
    label: String,
    rho: Vec<[f64; 2]>,
    log_likelihood: f64,
    iterations: usize,
    optimize_local: bool,
    fidelity: Estimate,
    tangle: Estimate,
    chsh: Estimate,
    monte_carlo: Option<MonteCarloInfo>,
}

fn cmd_reconstruct(
    counts: &Path,
    optimize_local: bool,
    mc_samples: usize,
    seed: Option<u64>,
    mle: MleOptions,
    out: &OutArgs,
) -> CliResult<Vec<PathBuf>> {
    let table = read_counts_csv(open(counts)?)?;
    let fit = mle_reconstruct(&table, &mle)?;
    let fid = move |r: &TwoQubitDensityMatrix| fidelity_to_phi_plus(r, optimize_local);
    let functionals: [&(dyn Fn(&TwoQubitDensityMatrix) -> f64 + Sync); 3] =
        [&fid, &tangle, &chsh_max];
    let (stats, info): (Vec<Option<McStat>>, _) = match (mc_samples, seed) {
        (n, Some(seed)) if n > 0 => {
            let opts = McOptions {
                samples: n,
                seed,
                resampling: Resampling::Poisson,
                mle,
            };
            let s = monte_carlo_errors(&table, &opts, &functionals)?;
            let info = MonteCarloInfo {
                samples: n,
                seed,
                successes: s.successes,
                failures: s.failures,
            };
            (s.stats.into_iter().map(Some).collect(), Some(info))
        }
        _ => (vec![None; 3], None),
    };
    let est = |k: usize| Estimate {
        value: functionals[k](&fit.rho),
        mc_mean: stats[k].map(|s| s.mean),
        mc_std: stats[k].map(|s| s.std),
    };
    let report = ReconstructionReport {
        label: table.label.clone(),
        rho: fit.rho.to_entries(),
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
        optimize_local,
        fidelity: est(0),
        tangle: est(1),
        chsh: est(2),
        monte_carlo: info,
    };
    let path = out_dir(out)?.join(format!("reconstruction_{}.json", table.label));
    write_json(&path, &report)?;
    Ok(vec![path])
}

#[derive(serde::Deserialize)]
struct RhoFile {
    rho: Vec<[f64; 2]>,
}

fn cmd_metrics(
    rho: Option<&Path>,
    p11: Option<f64>,
    rates: (Option<f64>, Option<f64>, Option<f64>),
    scan: &[f64],
    out: &OutArgs,
) -> CliResult<Vec<PathBuf>> {
    let mut report = MetricsReport::default();
    if let Some(path) = rho {
        let file: RhoFile = serde_json::from_reader(open(path)?)?;
        let state = TwoQubitDensityMatrix::from_entries(&file.rho)?;
        report = MetricsReport::from_state(&state);
        if let Some(p) = p11 {
            report.fidelity_meas = report
                .fidelity_post
                .map(|f| total_state_fidelity_from(p, f));
        }
    } else if p11.is_some() {
        return Err(CliError::Usage(
            "--p11 needs --rho for the post-selected fidelity".into(),
        ));
    }
    match rates {
        (Some(c4), Some(c6), Some(eta)) => {
            let est = preparation_efficiency(&RateEstimate { c4, c6, eta })?;
            if est.exceeds_unity {
                eprintln!(
                    "warning: C6/(C4 eta^2) = {:.4} exceeds 1; reporting 1",
                    est.raw
                );
            }
            report.p_estimator = Some(est.value);
        }
        (None, None, None) => {}
        _ => {
            return Err(CliError::Usage(
                "--c4, --c6 and --eta must be given together".into(),
            ))
        }
    }
    if !scan.is_empty() {
        report.visibility = Some(visibility_from_scan(scan)?);
    }
    let path = out_dir(out)?.join("metrics.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                let _ = writeln!(stdout, "{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
