//! Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance
//! and runtime budget.
//!
//! Criteria listed in `KNOWN_INFEASIBLE` are run unchanged and reported as
//! FAIL; they do not fail the target. If one of them starts passing, the
//! target fails so the list gets updated.

#[path = "../../core/tests/support/mod.rs"]
mod dense_oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use heraldsim_core::detection::{
    convention_correction, herald_source, layout_keys, postselect_two_qubit,
};
use heraldsim_core::experiments::{
    calibrate_tau, low_power_tau, run_power_comparison, run_sweep, symmetric_sweep,
    two_pair_leakage, CALIBRATION_P00,
};
use heraldsim_core::metrics::{
    chsh_max, concurrence, fidelity_to_phi_plus, tangle, total_state_fidelity_from,
};
use heraldsim_core::qubit::su2_from_rotation_vector;
use heraldsim_core::source::{pair_term, SourceComponent};
use heraldsim_core::tomography::{
    ingest_counts, mle_reconstruct, monte_carlo_errors, simulate_counts, McOptions,
    MeasurementSetting, MleOptions, Resampling,
};
use heraldsim_core::{
    build_heralding_circuit, BellState, DetectorModel, Pauli, SpdcParams, TwoQubitDensityMatrix,
};

/// The measured 30/70 counts reconstruct to F ~ 0.64, tangle ~ 0.09 and
/// S ~ 1.81, all below their windows; the 50/50 clause passes.
const KNOWN_INFEASIBLE: &[usize] = &[4];

const GRID: [f64; 4] = [0.17, 0.3, 0.5, 0.7];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Result<Outcome, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ideal_heralding() -> Result<Outcome, String> {
    let detectors = DetectorModel::number_resolving(1.0);
    let sign = SpdcParams::default().bell_phase;
    let mut worst = 1.0f64;
    for &t1 in &GRID {
        for &t2 in &GRID {
            let layout = build_heralding_circuit(t1, t2, (Pauli::Z, Pauli::Z)).map_err(err)?;
            let comps = [SourceComponent {
                pairs: 3,
                weight: 1.0,
                distinguishable: false,
                ket: pair_term(3, 8, sign).map_err(err)?,
            }];
            let ens = herald_source(&layout, &comps, &detectors).map_err(err)?;
            let corr = convention_correction(t1, t2, sign).map_err(err)?;
            let post = postselect_two_qubit(
                &ens,
                &layout_keys(&layout.output_modes),
                &detectors,
                Some(&corr),
            )
            .map_err(err)?;
            worst = worst.min(fidelity_to_phi_plus(&post.rho, false));
        }
    }
    Ok(Outcome::new(
        worst >= 1.0 - 1e-9,
        format!("min F over 16 splitter pairs = {worst:.12}"),
    ))
}

fn two_pair_suppression() -> Result<Outcome, String> {
    let detectors = DetectorModel::default();
    let base = SpdcParams::default();
    let mut worst_coherent = 0.0f64;
    let mut worst_ratio_dev = 0.0f64;
    for &t1 in &GRID {
        for &t2 in &GRID {
            let at = |v: f64| {
                two_pair_leakage(
                    t1,
                    t2,
                    &SpdcParams {
                        visibility: v,
                        ..base.clone()
                    },
                    &detectors,
                )
            };
            worst_coherent = worst_coherent.max(at(1.0).map_err(err)?.abs());
            let ratio = at(0.862).map_err(err)? / at(0.0).map_err(err)?;
            worst_ratio_dev = worst_ratio_dev.max((ratio - 0.138).abs());
        }
    }
    Ok(Outcome::new(
        worst_coherent <= 1e-12 && worst_ratio_dev <= 1e-9,
        format!("max P(V=1) = {worst_coherent:.2e}, max |ratio - 0.138| = {worst_ratio_dev:.2e}"),
    ))
}

fn total_fidelity_identity() -> Result<Outcome, String> {
    let measured = [
        ("17/83", 2.58e-4, 0.637, 1.64e-4),
        ("30/70", 6.14e-4, 0.842, 5.17e-4),
        ("50/50", 3.06e-3, 0.575, 1.76e-3),
        ("70/30", 8.03e-3, 0.619, 4.97e-3),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (label, p11, f_post, f_meas) in measured {
        let rel = ((total_state_fidelity_from(p11, f_post) - f_meas) / f_meas).abs();
        worst = worst.max(rel);
        parts.push(format!("{label} {:.2}%", 100.0 * rel));
    }
    Ok(Outcome::new(
        worst < 0.02,
        format!("relative errors: {}", parts.join(", ")),
    ))
}

fn measured_tomography() -> Result<Outcome, String> {
    let fid = |r: &TwoQubitDensityMatrix| fidelity_to_phi_plus(r, true);
    let mut pass = true;
    let mut parts = Vec::new();
    let mut check = |name: &str, v: f64, lo: f64, hi: f64, std: f64| {
        let ok = (lo..=hi).contains(&v);
        pass &= ok;
        parts.push(format!(
            "{name} = {v:.3} +- {std:.3} in [{lo}, {hi}] {}",
            if ok { "ok" } else { "MISS" }
        ));
    };
    for (file, windows) in [
        (
            "counts_30_70.csv",
            vec![(0.70, 0.93), (0.17, 0.93), (1.92, 2.80)],
        ),
        ("counts_50_50.csv", vec![(0.50, 0.65)]),
    ] {
        let counts = ingest_counts(root().join("fixtures").join(file)).map_err(err)?;
        let fit = mle_reconstruct(&counts, &MleOptions::default()).map_err(err)?;
        let opts = McOptions {
            samples: 200,
            seed: 7,
            resampling: Resampling::Poisson,
            mle: MleOptions::default(),
        };
        let mc = monte_carlo_errors(&counts, &opts, &[&fid, &tangle, &chsh_max]).map_err(err)?;
        let label = &file[7..12];
        let values = [fid(&fit.rho), tangle(&fit.rho), chsh_max(&fit.rho)];
        for (k, (lo, hi)) in windows.into_iter().enumerate() {
            let name = format!("{label} {}", ["F", "tangle", "S"][k]);
            check(&name, values[k], lo, hi, mc.stats[k].std);
        }
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn mle_self_consistency() -> Result<Outcome, String> {
    let states = [
        ("phi+", TwoQubitDensityMatrix::bell(BellState::PhiPlus)),
        ("psi-", TwoQubitDensityMatrix::bell(BellState::PsiMinus)),
        ("I/4", TwoQubitDensityMatrix::maximally_mixed()),
        (
            "werner(0.8)",
            TwoQubitDensityMatrix::werner(0.8).map_err(err)?,
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (seed, (name, rho)) in states.iter().enumerate() {
        let counts =
            simulate_counts(rho, &MeasurementSetting::all(), 100_000, seed as u64).map_err(err)?;
        let fit = mle_reconstruct(&counts, &MleOptions::default()).map_err(err)?;
        let d = fit.rho.trace_distance(rho);
        worst = worst.max(d);
        parts.push(format!("{name} {d:.4}"));
    }
    Ok(Outcome::new(
        worst < 0.02,
        format!("trace distances: {}", parts.join(", ")),
    ))
}

fn sweep_shape() -> Result<Outcome, String> {
    let detectors = DetectorModel::default();
    let ts = [0.17, 0.5, 0.7];
    let three = SpdcParams {
        tau: 0.0,
        max_pairs: 3,
        ..SpdcParams::default()
    };
    let points = run_sweep(&symmetric_sweep(&ts, &three, &detectors)).map_err(err)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &points {
        let rel = (p.p_direct - p.quadratic_line) / p.quadratic_line;
        pass &= rel.abs() <= 0.25;
        parts.push(format!(
            "P({}) = {:.4} ({:+.1}%)",
            p.t1,
            p.p_direct,
            100.0 * rel
        ));
    }
    let tau = calibrate_tau(CALIBRATION_P00, 0.5, &SpdcParams::default(), &detectors)
        .map_err(err)?
        .tau_high;
    let four = SpdcParams {
        tau,
        max_pairs: 4,
        ..SpdcParams::default()
    };
    let with_four = run_sweep(&symmetric_sweep(&[0.7], &four, &detectors)).map_err(err)?;
    let increased = with_four[0].p_estimator > points[2].p_direct;
    pass &= increased;
    parts.push(format!(
        "4 pairs at tau = {tau:.4}: P_estimator(0.7) = {:.4} (direct {:.4})",
        with_four[0].p_estimator, with_four[0].p_direct
    ));
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn power_ordering() -> Result<Outcome, String> {
    let detectors = DetectorModel::default();
    let base = SpdcParams::default();
    let tau_high = calibrate_tau(CALIBRATION_P00, 0.5, &base, &detectors)
        .map_err(err)?
        .tau_high;
    let tau_low = low_power_tau(tau_high).map_err(err)?;
    let spdc = SpdcParams {
        tau: tau_high,
        ..base
    };
    let cmp = run_power_comparison(tau_high, tau_low, 0.3, &spdc, &detectors).map_err(err)?;
    let background = cmp.dominant_background_high.to_string();
    Ok(Outcome::new(
        cmp.f_post_low > cmp.f_post_high && background == "psi-",
        format!(
            "F_post low = {:.4}, high = {:.4}, dominant background {background}",
            cmp.f_post_low, cmp.f_post_high
        ),
    ))
}

fn fock_oracle() -> Result<Outcome, String> {
    match dense_oracle::compare_random_cases(2024, 1000, 1e-9) {
        Ok(()) => Ok(Outcome::new(true, "1000 random cases agree within 1e-9")),
        Err(e) => Ok(Outcome::new(false, e)),
    }
}

fn metrics_analytic() -> Result<Outcome, String> {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let phi = TwoQubitDensityMatrix::bell(BellState::PhiPlus);
    let mixed = TwoQubitDensityMatrix::maximally_mixed();
    let phi_ok = close(fidelity_to_phi_plus(&phi, false), 1.0)
        && close(tangle(&phi), 1.0)
        && close(chsh_max(&phi), 2.0 * std::f64::consts::SQRT_2);
    let mixed_ok = close(fidelity_to_phi_plus(&mixed, true), 0.25)
        && close(tangle(&mixed), 0.0)
        && close(chsh_max(&mixed), 0.0);
    let u = su2_from_rotation_vector([0.4, -1.3, 2.1]);
    let bell_ok = BellState::ALL.iter().all(|&b| {
        let rho = TwoQubitDensityMatrix::bell(b);
        close(fidelity_to_phi_plus(&rho, true), 1.0)
            && close(
                fidelity_to_phi_plus(&rho.local_rotated(&u, &u.adjoint()), true),
                1.0,
            )
    });
    let mut threshold = f64::NAN;
    for k in 0..=10_000 {
        let p = k as f64 / 10_000.0;
        if concurrence(&TwoQubitDensityMatrix::werner(p).map_err(err)?) > 1e-9 {
            threshold = p;
            break;
        }
    }
    let werner_ok = (threshold - 1.0 / 3.0).abs() < 1e-3;
    Ok(Outcome::new(
        phi_ok && mixed_ok && bell_ok && werner_ok,
        format!(
            "phi+ {phi_ok}, I/4 {mixed_ok}, Bell equivalence {bell_ok}, Werner onset p = {threshold:.4}"
        ),
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn determinism() -> Result<Outcome, String> {
    let root = root();
    let config = |name: &str| root.join("configs").join(name).display().to_string();
    let counts = root.join("fixtures/counts_30_70.csv").display().to_string();
    let table1 = root.join("fixtures/table1.csv").display().to_string();
    let commands: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--config".into(), config("30_70.json")],
        vec![
            "sweep".into(),
            "--t".into(),
            "0.17,0.3,0.5,0.7".into(),
            "--power-comparison".into(),
        ],
        vec![
            "tomo-sim".into(),
            "--config".into(),
            config("50_50.json"),
            "--seed".into(),
            "11".into(),
        ],
        vec![
            "reconstruct".into(),
            "--counts".into(),
            counts,
            "--optimize-local".into(),
            "--mc-samples".into(),
            "50".into(),
            "--seed".into(),
            "7".into(),
        ],
        vec![
            "metrics".into(),
            "--c4".into(),
            "1000".into(),
            "--c6".into(),
            "3".into(),
            "--eta".into(),
            "0.1".into(),
        ],
        vec![
            "reproduce-tables".into(),
            "--config".into(),
            config("17_83.json"),
            "--reference".into(),
            table1,
        ],
        vec!["calibrate".into()],
    ];
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().map_err(err)?;
            for args in &commands {
                let status = Command::new(env!("CARGO_BIN_EXE_heraldsim"))
                    .args(args)
                    .arg("--out")
                    .arg(dir.path().join(&args[0]))
                    .output()
                    .map_err(err)?;
                if !status.status.success() {
                    return Err(format!(
                        "{} failed: {}",
                        args[0],
                        String::from_utf8_lossy(&status.stderr)
                    ));
                }
            }
            Ok(snapshot(dir.path()))
        })
        .collect::<Result<_, String>>()?;
    let identical = runs[0] == runs[1] && !runs[0].is_empty();
    Ok(Outcome::new(
        identical,
        format!(
            "{} commands, {} files compared byte for byte",
            commands.len(),
            runs[0].len()
        ),
    ))
}

fn main() {
    let criteria: [(usize, &str, Option<Duration>, Check); 10] = [
        (
            1,
            "ideal heralding exactness",
            Some(Duration::from_secs(1)),
            ideal_heralding,
        ),
        (
            2,
            "two-pair suppression",
            Some(Duration::from_secs(1)),
            two_pair_suppression,
        ),
        (3, "total fidelity identity", None, total_fidelity_identity),
        (
            4,
            "tomography on measured counts",
            Some(Duration::from_secs(30)),
            measured_tomography,
        ),
        (
            5,
            "MLE self-consistency",
            Some(Duration::from_secs(10)),
            mle_self_consistency,
        ),
        (6, "sweep shape", None, sweep_shape),
        (7, "power-dependence ordering", None, power_ordering),
        (
            8,
            "Fock oracle suite",
            Some(Duration::from_secs(30)),
            fock_oracle,
        ),
        (9, "metrics analytic suite", None, metrics_analytic),
        (10, "determinism", None, determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed < b);
        let pass = outcome.pass && in_time;
        let budget_note = budget.map(|b| format!(" / {:.0?}", b)).unwrap_or_default();
        println!(
            "criterion {id:>2} {} {name} [{elapsed:.2?}{budget_note}] {}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        let expected_fail = KNOWN_INFEASIBLE.contains(&id);
        if pass == expected_fail {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
