//! End-to-end runs: transmission sweeps, pump-power comparison, photon-number
//! tables and simulated tomography.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{
    convention_correction, herald_source, layout_keys, number_table, postselect_two_qubit,
    ConditionalEnsemble, DetectorModel, LocalCorrection, NumberTable,
};
use crate::elements::{build_heralding_circuit, CircuitLayout};
use crate::error::{Error, Result};
use crate::metrics::{
    chsh_max, direct_preparation_probability, fidelity_to_phi_plus, preparation_from_p11,
    quadratic_line, tangle, total_state_fidelity_from, MetricsReport,
};
use crate::qubit::{BellState, Pauli, TwoQubitDensityMatrix};
use crate::source::{
    distinguishable_pairs, pair_probability, pair_term, scale_tau_with_power, source_components,
    SourceComponent, SpdcParams,
};
use crate::tomography::{simulate_counts, CountTable, MeasurementSetting};

pub const SCHEMA_VERSION: u32 = 1;

/// Pump powers of the high- and reduced-power runs, in watts.
pub const HIGH_POWER_W: f64 = 1.2;
pub const LOW_POWER_W: f64 = 0.62;

/// `P_{0;0}` of the 50/50 configuration used to calibrate `tau`.
pub const CALIBRATION_P00: f64 = 0.915;

fn default_settings() -> Vec<MeasurementSetting> {
    MeasurementSetting::all().to_vec()
}

fn default_events() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub label: Option<String>,
    pub t1: f64,
    pub t2: f64,
    #[serde(default)]
    pub spdc: SpdcParams,
    #[serde(default)]
    pub detectors: DetectorModel,
    #[serde(default = "default_settings")]
    pub settings: Vec<MeasurementSetting>,
    #[serde(default = "default_events")]
    pub events_per_setting: u64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(t1: f64, t2: f64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            label: None,
            t1,
            t2,
            spdc: SpdcParams::default(),
            detectors: DetectorModel::default(),
            settings: default_settings(),
            events_per_setting: default_events(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for t in [self.t1, self.t2] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "transmission {t} outside [0, 1]"
                )));
            }
        }
        self.spdc.validate()?;
        self.detectors.validate()?;
        if self.events_per_setting == 0 {
            return Err(Error::InvalidParameter(
                "events_per_setting must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_reader(reader)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// `"17_83"`-style label derived from the transmissions.
    pub fn ratio_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| ratio_label(self.t1))
    }
}

pub fn ratio_label(t: f64) -> String {
    let pct = (t * 100.0).round() as i64;
    format!("{}_{}", pct, 100 - pct)
}

/// Source components propagated through `layout` and heralded.
///
/// `tau = 0` is taken as the weak-pump limit in which the three-pair term
/// alone produces the output pair.
pub fn heralded_ensemble(
    layout: &CircuitLayout,
    spdc: &SpdcParams,
    detectors: &DetectorModel,
) -> Result<ConditionalEnsemble> {
    spdc.validate()?;
    let components = if spdc.tau == 0.0 {
        vec![SourceComponent {
            pairs: 3,
            weight: 1.0,
            distinguishable: false,
            ket: pair_term(3, spdc.photon_cap, spdc.bell_phase)?,
        }]
    } else {
        source_components(spdc)?
    };
    herald_source(layout, &components, detectors)
}

/// Output-arm efficiency used by the `C6/(C4 eta^2)` estimator: the geometric
/// mean of the two arms' mean efficiencies.
pub fn output_efficiency(layout: &CircuitLayout, detectors: &DetectorModel) -> f64 {
    let etas: Vec<f64> = layout_keys(&layout.output_modes)
        .iter()
        .map(|k| detectors.efficiency_for(k))
        .collect();
    (0.5 * (etas[0] + etas[1]) * 0.5 * (etas[2] + etas[3])).sqrt()
}

#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub config: ExperimentConfig,
    pub herald_probability: f64,
    pub number_table: NumberTable,
    pub p_direct: f64,
    pub p_estimator: f64,
    /// Post-selected, convention-corrected state; `None` without coincidences.
    pub rho_post: Option<TwoQubitDensityMatrix>,
    pub coincidence_probability: f64,
    pub metrics: MetricsReport,
}

/// Exact (non-sampled) simulation of one configuration in the z/z setting.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulationResult> {
    config.validate()?;
    let layout = build_heralding_circuit(config.t1, config.t2, (Pauli::Z, Pauli::Z))?;
    let ensemble = heralded_ensemble(&layout, &config.spdc, &config.detectors)?;
    if !(ensemble.herald_probability > 0.0) {
        return Err(Error::ZeroProbability(format!(
            "herald at T1 = {}, T2 = {}",
            config.t1, config.t2
        )));
    }
    let outputs = layout_keys(&layout.output_modes);
    let table = number_table(&ensemble, &outputs, &config.detectors)?;
    let p_direct = direct_preparation_probability(&ensemble, &outputs)?;
    let p_estimator =
        preparation_from_p11(table.p11(), output_efficiency(&layout, &config.detectors))?.raw;
    let correction = correction_for(config.t1, config.t2, &config.spdc)?;
    let post =
        match postselect_two_qubit(&ensemble, &outputs, &config.detectors, correction.as_ref()) {
            Ok(p) => Some(p),
            Err(Error::ZeroProbability(_)) => None,
            Err(e) => return Err(e),
        };
    let mut metrics = post
        .as_ref()
        .map(|p| MetricsReport::from_state(&p.rho))
        .unwrap_or_default();
    metrics.p_direct = Some(p_direct);
    metrics.p_estimator = Some(p_estimator);
    metrics.fidelity_meas = metrics
        .fidelity_post
        .map(|f| total_state_fidelity_from(table.p11(), f));
    metrics.visibility = Some(config.spdc.visibility);
    Ok(SimulationResult {
        config: config.clone(),
        herald_probability: ensemble.herald_probability,
        number_table: table,
        p_direct,
        p_estimator,
        coincidence_probability: post.as_ref().map_or(0.0, |p| p.coincidence_probability),
        rho_post: post.map(|p| p.rho),
        metrics,
    })
}

/// Convention correction, or `None` where the ideal herald is impossible
/// (a splitter at full transmission or reflection).
fn correction_for(t1: f64, t2: f64, spdc: &SpdcParams) -> Result<Option<LocalCorrection>> {
    match convention_correction(t1, t2, spdc.bell_phase) {
        Ok(c) => Ok(Some(c)),
        Err(Error::ZeroProbability(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Herald probability of the two-pair block alone at the given visibility.
///
/// The interfering part never heralds, so this is `(1 - V)` times the
/// herald probability of two distinguishable pairs.
pub fn two_pair_leakage(
    t1: f64,
    t2: f64,
    spdc: &SpdcParams,
    detectors: &DetectorModel,
) -> Result<f64> {
    let layout = build_heralding_circuit(t1, t2, (Pauli::Z, Pauli::Z))?;
    let v = spdc.visibility;
    let mut components = Vec::new();
    if v > 0.0 {
        components.push(SourceComponent {
            pairs: 2,
            weight: v,
            distinguishable: false,
            ket: pair_term(2, spdc.photon_cap, spdc.bell_phase)?,
        });
    }
    if v < 1.0 {
        components.push(SourceComponent {
            pairs: 2,
            weight: 1.0 - v,
            distinguishable: true,
            ket: distinguishable_pairs(2, spdc.bell_phase)?,
        });
    }
    Ok(herald_source(&layout, &components, detectors)?.herald_probability)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t1: f64,
    pub t2: f64,
    pub herald_probability: f64,
    /// Herald probability relative to the largest one in the sweep.
    pub herald_rate_relative: f64,
    #[serde(rename = "P_direct")]
    pub p_direct: f64,
    #[serde(rename = "P_estimator")]
    pub p_estimator: f64,
    /// `T1 T2`.
    pub quadratic_line: f64,
}

/// Runs every configuration (in parallel) and returns points in input order.
pub fn run_sweep(configs: &[ExperimentConfig]) -> Result<Vec<SweepPoint>> {
    if configs.is_empty() {
        return Err(Error::EmptyInput("sweep has no configurations".into()));
    }
    let raw: Vec<SweepPoint> = configs
        .par_iter()
        .map(|cfg| {
            cfg.validate()?;
            let layout = build_heralding_circuit(cfg.t1, cfg.t2, (Pauli::Z, Pauli::Z))?;
            let ensemble = heralded_ensemble(&layout, &cfg.spdc, &cfg.detectors)?;
            let outputs = layout_keys(&layout.output_modes);
            let (p_direct, p_estimator) = if ensemble.herald_probability > 0.0 {
                let table = number_table(&ensemble, &outputs, &cfg.detectors)?;
                let eta = output_efficiency(&layout, &cfg.detectors);
                (
                    direct_preparation_probability(&ensemble, &outputs)?,
                    preparation_from_p11(table.p11(), eta)?.raw,
                )
            } else {
                (0.0, 0.0)
            };
            Ok(SweepPoint {
                t1: cfg.t1,
                t2: cfg.t2,
                herald_probability: ensemble.herald_probability,
                herald_rate_relative: 0.0,
                p_direct,
                p_estimator,
                quadratic_line: quadratic_line(cfg.t1, cfg.t2),
            })
        })
        .collect::<Result<_>>()?;
    let max = raw.iter().map(|p| p.herald_probability).fold(0.0, f64::max);
    Ok(raw
        .into_iter()
        .map(|mut p| {
            p.herald_rate_relative = if max > 0.0 {
                p.herald_probability / max
            } else {
                0.0
            };
            p
        })
        .collect())
}

/// Sweep configurations at equal splitters `T1 = T2 = t`.
pub fn symmetric_sweep(
    transmissions: &[f64],
    spdc: &SpdcParams,
    detectors: &DetectorModel,
) -> Vec<ExperimentConfig> {
    transmissions
        .iter()
        .map(|&t| ExperimentConfig {
            spdc: spdc.clone(),
            detectors: detectors.clone(),
            ..ExperimentConfig::new(t, t)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerComparison {
    pub t: f64,
    pub tau_high: f64,
    pub tau_low: f64,
    pub f_post_high: f64,
    pub f_post_low: f64,
    /// Bell-state populations of the high-power post-selected state.
    pub populations_high: Vec<(String, f64)>,
    /// Largest non-phi+ Bell component of the high-power state.
    pub dominant_background_high: String,
}

/// Post-selected state (convention-corrected) at one transmission.
pub fn post_selected_state(
    t1: f64,
    t2: f64,
    spdc: &SpdcParams,
    detectors: &DetectorModel,
) -> Result<TwoQubitDensityMatrix> {
    let layout = build_heralding_circuit(t1, t2, (Pauli::Z, Pauli::Z))?;
    let ensemble = heralded_ensemble(&layout, spdc, detectors)?;
    let correction = correction_for(t1, t2, spdc)?;
    Ok(postselect_two_qubit(
        &ensemble,
        &layout_keys(&layout.output_modes),
        detectors,
        correction.as_ref(),
    )?
    .rho)
}

/// Locally optimized post-selected fidelity at two pair amplitudes.
pub fn run_power_comparison(
    tau_high: f64,
    tau_low: f64,
    t: f64,
    spdc: &SpdcParams,
    detectors: &DetectorModel,
) -> Result<PowerComparison> {
    if !(0.0 <= tau_low && tau_low <= tau_high && tau_high < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= tau_low <= tau_high < 1, got {tau_low}, {tau_high}"
        )));
    }
    let at = |tau: f64| {
        let params = SpdcParams {
            tau,
            ..spdc.clone()
        };
        post_selected_state(t, t, &params, detectors)
    };
    let (rho_high, rho_low) = rayon::join(|| at(tau_high), || at(tau_low));
    let (rho_high, rho_low) = (rho_high?, rho_low?);
    let populations = rho_high.bell_populations();
    let dominant = populations
        .iter()
        .filter(|(b, _)| *b != BellState::PhiPlus)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(b, _)| b.name().to_string())
        .unwrap_or_default();
    Ok(PowerComparison {
        t,
        tau_high,
        tau_low,
        f_post_high: fidelity_to_phi_plus(&rho_high, true),
        f_post_low: fidelity_to_phi_plus(&rho_low, true),
        populations_high: populations
            .iter()
            .map(|(b, p)| (b.name().to_string(), *p))
            .collect(),
        dominant_background_high: dominant,
    })
}

/// Low-power amplitude for a run at `LOW_POWER_W` given the high-power one.
pub fn low_power_tau(tau_high: f64) -> Result<f64> {
    scale_tau_with_power(tau_high, HIGH_POWER_W, LOW_POWER_W)
}

/// Row of a measured per-arm number table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub quantity: String,
    pub ratio: String,
    pub value: f64,
    pub error: f64,
}

pub fn read_reference_table<R: Read>(reader: R) -> Result<Vec<ReferenceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: ReferenceRow = rec.map_err(|e| Error::MalformedData {
            line: i + 2,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("reference table has no rows".into()));
    }
    Ok(rows)
}

/// Polarization-summed quantities in reporting order.
pub const REDUCTION_QUANTITIES: [(&str, &[(u8, u8)]); 6] = [
    ("P00", &[(0, 0)]),
    ("P10+P01", &[(1, 0), (0, 1)]),
    ("P11", &[(1, 1)]),
    ("P20+P02", &[(2, 0), (0, 2)]),
    ("P21+P12", &[(2, 1), (1, 2)]),
    ("P22", &[(2, 2)]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub quantity: String,
    pub simulated: f64,
    pub reference: Option<f64>,
    pub reference_error: Option<f64>,
    /// `simulated / reference`.
    pub ratio: Option<f64>,
    /// Set when the two differ by more than a factor of three.
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct NumberTableReport {
    pub label: String,
    pub table: NumberTable,
    pub rows: Vec<ReductionRow>,
}

/// Reduces `table` by arm and compares with `reference` rows of `label`.
pub fn reduce_number_table(
    table: &NumberTable,
    label: &str,
    reference: &[ReferenceRow],
) -> Vec<ReductionRow> {
    let agg = table.aggregated();
    let refs: BTreeMap<&str, &ReferenceRow> = reference
        .iter()
        .filter(|r| r.ratio == label)
        .map(|r| (r.quantity.as_str(), r))
        .collect();
    REDUCTION_QUANTITIES
        .iter()
        .map(|(name, keys)| {
            let simulated: f64 = keys
                .iter()
                .map(|k| agg.get(k).copied().unwrap_or(0.0))
                .sum();
            let r = refs.get(name);
            let ratio = r.and_then(|r| (r.value > 0.0).then(|| simulated / r.value));
            let flagged = match (r, ratio) {
                (_, Some(q)) => !(1.0 / 3.0..=3.0).contains(&q),
                // a zero reference is matched only by a negligible simulation
                (Some(_), None) => simulated > 1e-6,
                (None, None) => false,
            };
            ReductionRow {
                quantity: name.to_string(),
                simulated,
                reference: r.map(|r| r.value),
                reference_error: r.map(|r| r.error),
                ratio,
                flagged,
            }
        })
        .collect()
}

pub fn reproduce_number_tables(
    config: &ExperimentConfig,
    reference: &[ReferenceRow],
) -> Result<NumberTableReport> {
    let sim = simulate(config)?;
    let label = config.ratio_label();
    let rows = reduce_number_table(&sim.number_table, &label, reference);
    Ok(NumberTableReport {
        label,
        table: sim.number_table,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau_high: f64,
    pub tau_low: f64,
    pub target_p00: f64,
    pub achieved_p00: f64,
    pub transmission: f64,
    /// Pair-number probability mass beyond `max_pairs` at `tau_high`.
    pub truncated_weight: f64,
    pub iterations: usize,
}

/// Fits `tau` so that the simulated `P_{0;0}` at `T1 = T2 = transmission`
/// equals `target_p00` (bisection; `P_{0;0}` falls with `tau`).
pub fn calibrate_tau(
    target_p00: f64,
    transmission: f64,
    spdc: &SpdcParams,
    detectors: &DetectorModel,
) -> Result<Calibration> {
    if !(0.0 < target_p00 && target_p00 < 1.0) {
        return Err(Error::InvalidParameter(format!("target P00 {target_p00}")));
    }
    let p00 = |tau: f64| -> Result<f64> {
        let cfg = ExperimentConfig {
            spdc: SpdcParams {
                tau,
                ..spdc.clone()
            },
            detectors: detectors.clone(),
            ..ExperimentConfig::new(transmission, transmission)
        };
        let layout = build_heralding_circuit(cfg.t1, cfg.t2, (Pauli::Z, Pauli::Z))?;
        let ens = heralded_ensemble(&layout, &cfg.spdc, &cfg.detectors)?;
        Ok(number_table(&ens, &layout_keys(&layout.output_modes), &cfg.detectors)?.p_arms(0, 0))
    };
    let (mut lo, mut hi) = (1e-3, 0.95);
    let (f_lo, f_hi) = (p00(lo)?, p00(hi)?);
    if !(f_hi <= target_p00 && target_p00 <= f_lo) {
        return Err(Error::InvalidParameter(format!(
            "target P00 {target_p00} outside the reachable range [{f_hi:.4}, {f_lo:.4}]"
        )));
    }
    let mut iterations = 0;
    while hi - lo > 1e-10 && iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if p00(mid)? > target_p00 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau_high = 0.5 * (lo + hi);
    let truncated_weight = 1.0
        - (0..=spdc.max_pairs)
            .map(|n| pair_probability(tau_high, n))
            .sum::<f64>();
    Ok(Calibration {
        tau_high,
        tau_low: low_power_tau(tau_high)?,
        target_p00,
        achieved_p00: p00(tau_high)?,
        transmission,
        truncated_weight,
        iterations,
    })
}

/// Exact post-selected state sampled into a nine-setting count table.
pub fn simulate_tomography(config: &ExperimentConfig, seed: u64) -> Result<CountTable> {
    let sim = simulate(config)?;
    let rho = sim
        .rho_post
        .ok_or_else(|| Error::ZeroProbability("no output coincidences".into()))?;
    let mut table = simulate_counts(&rho, &config.settings, config.events_per_setting, seed)?;
    table.label = config.ratio_label();
    Ok(table)
}

/// Fidelity, tangle and CHSH of a state, as a report.
pub fn state_metrics(rho: &TwoQubitDensityMatrix) -> MetricsReport {
    MetricsReport {
        fidelity_post: Some(fidelity_to_phi_plus(rho, true)),
        tangle: Some(tangle(rho)),
        chsh: Some(chsh_max(rho)),
        ..Default::default()
    }
}
