//! Detector models, heralding and post-selection.
//!
//! Every element after the source is passive, so detector inefficiency is
//! applied as binomial thinning at detection rather than through explicit loss
//! modes. Detectors are blind to internal tags: photons in modes that differ
//! only by tag are counted together.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{Matrix2, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::elements::CircuitLayout;
use crate::error::{Error, Result};
use crate::fock::{DetectorKey, OccupationVector, SparseKet};
use crate::qubit::{c, Pauli, TwoQubitDensityMatrix, C64};
use crate::source::{pair_term, PairSign, SourceComponent};

/// Fiber coupling (0.23) times detector efficiency (0.42) per mode.
pub const DEFAULT_EFFICIENCY: f64 = 0.23 * 0.42;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    /// Distinguishes only "no photon" from "at least one".
    #[default]
    Threshold,
    NumberResolving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Efficiency of every detection mode without an override.
    pub efficiency: f64,
    /// Per-mode efficiencies keyed by detector name (`t1H`, `r2V`, ...).
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default)]
    pub resolution: Resolution,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel::threshold(DEFAULT_EFFICIENCY)
    }
}

impl DetectorModel {
    pub fn threshold(efficiency: f64) -> Self {
        DetectorModel {
            efficiency,
            overrides: BTreeMap::new(),
            resolution: Resolution::Threshold,
        }
    }

    pub fn number_resolving(efficiency: f64) -> Self {
        DetectorModel {
            efficiency,
            overrides: BTreeMap::new(),
            resolution: Resolution::NumberResolving,
        }
    }

    pub fn ideal() -> Self {
        Self::number_resolving(1.0)
    }

    pub fn with_override(mut self, mode: &str, efficiency: f64) -> Self {
        self.overrides.insert(mode.to_string(), efficiency);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: f64| !(0.0..=1.0).contains(&e);
        if bad(self.efficiency) {
            return Err(Error::InvalidParameter(format!(
                "detector efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        if let Some((k, v)) = self.overrides.iter().find(|(_, &v)| bad(v)) {
            return Err(Error::InvalidParameter(format!(
                "detector efficiency {v} for {k} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn efficiency_for(&self, key: &DetectorKey) -> f64 {
        self.overrides
            .get(&key.to_string())
            .copied()
            .unwrap_or(self.efficiency)
    }

    /// Probability of each detector reading given `n` incident photons.
    fn readings(&self, n: u32, eta: f64) -> Vec<(u8, f64)> {
        match self.resolution {
            Resolution::Threshold => {
                let dark = (1.0 - eta).powi(n as i32);
                if n == 0 {
                    vec![(0, 1.0)]
                } else {
                    vec![(0, dark), (1, 1.0 - dark)]
                }
            }
            Resolution::NumberResolving => (0..=n)
                .map(|k| (k as u8, binomial_pmf(n, k, eta)))
                .collect(),
        }
    }

    /// Probability that a herald detector fires as required: any click for
    /// threshold detectors, exactly one registered photon otherwise.
    fn herald_success(&self, n: u32, eta: f64) -> f64 {
        match self.resolution {
            Resolution::Threshold => 1.0 - (1.0 - eta).powi(n as i32),
            Resolution::NumberResolving => binomial_pmf(n, 1, eta),
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn binomial_pmf(n: u32, k: u32, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    binomial(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Compensated (Neumaier) summation.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Register indices of each requested detector. Fails when the register holds
/// a mode none of them sees.
fn detector_indices(state: &SparseKet, modes: &[DetectorKey]) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); modes.len()];
    for (i, l) in state.register().labels().iter().enumerate() {
        let key = l.detector();
        let pos = modes.iter().position(|m| *m == key).ok_or_else(|| {
            Error::DimensionMismatch(format!("mode {l} is not one of the detection modes"))
        })?;
        groups[pos].push(i);
    }
    Ok(groups)
}

fn grouped_counts(occ: &OccupationVector, groups: &[Vec<usize>]) -> Vec<u32> {
    groups
        .iter()
        .map(|g| g.iter().map(|&i| u32::from(occ.counts()[i])).sum())
        .collect()
}

/// Distribution of detector readings over a fixed list of detection modes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickDistribution {
    pub modes: Vec<DetectorKey>,
    pub probabilities: BTreeMap<Vec<u8>, f64>,
}

impl ClickDistribution {
    pub fn probability(&self, pattern: &[u8]) -> f64 {
        self.probabilities.get(pattern).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.probabilities.values().copied())
    }
}

/// Exact reading distribution of `state` measured on `modes`.
///
/// Threshold detectors report 0/1 per mode; number-resolving detectors report
/// the registered photon count.
pub fn click_distribution(
    state: &SparseKet,
    modes: &[DetectorKey],
    detectors: &DetectorModel,
) -> Result<ClickDistribution> {
    detectors.validate()?;
    let groups = detector_indices(state, modes)?;
    let etas: Vec<f64> = modes.iter().map(|m| detectors.efficiency_for(m)).collect();
    let mut probabilities: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for (occ, amp) in state.iter() {
        let p = amp.norm_sqr();
        let counts = grouped_counts(occ, &groups);
        let mut partial: Vec<(Vec<u8>, f64)> = vec![(Vec::with_capacity(modes.len()), p)];
        for (n, &eta) in counts.iter().zip(&etas) {
            let readings = detectors.readings(*n, eta);
            let mut next = Vec::with_capacity(partial.len() * readings.len());
            for (pattern, q) in &partial {
                for &(r, pr) in &readings {
                    if pr == 0.0 {
                        continue;
                    }
                    let mut pat = pattern.clone();
                    pat.push(r);
                    next.push((pat, q * pr));
                }
            }
            partial = next;
        }
        for (pattern, q) in partial {
            *probabilities.entry(pattern).or_insert(0.0) += q;
        }
    }
    Ok(ClickDistribution {
        modes: modes.to_vec(),
        probabilities,
    })
}

/// One conditional output state with its (unnormalized) probability.
#[derive(Clone, Debug)]
pub struct EnsembleComponent {
    pub weight: f64,
    /// Normalized state of the non-herald modes.
    pub ket: SparseKet,
    /// Photon numbers found in the herald modes (tag-resolved register order).
    pub herald_occupation: Vec<u8>,
}

/// Heralded state as a weighted mixture of pure output states.
#[derive(Clone, Debug, Default)]
pub struct ConditionalEnsemble {
    pub components: Vec<EnsembleComponent>,
    pub herald_probability: f64,
}

impl ConditionalEnsemble {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Weighted union of ensembles.
    pub fn merge(parts: impl IntoIterator<Item = (f64, ConditionalEnsemble)>) -> Self {
        let mut components = Vec::new();
        for (w, e) in parts {
            for mut comp in e.components {
                comp.weight *= w;
                if comp.weight > 0.0 {
                    components.push(comp);
                }
            }
        }
        let herald_probability = compensated_sum(components.iter().map(|c| c.weight));
        ConditionalEnsemble {
            components,
            herald_probability,
        }
    }

    /// Single-component ensemble with unit herald probability.
    pub fn pure(ket: SparseKet) -> Self {
        ConditionalEnsemble {
            components: vec![EnsembleComponent {
                weight: 1.0,
                ket: ket.normalized(),
                herald_occupation: Vec::new(),
            }],
            herald_probability: 1.0,
        }
    }
}

/// Conditions `state` on every herald detector firing.
///
/// The output state of each herald-mode occupation is pure; its weight is the
/// occupation probability times the chance that the detectors fire as
/// required. Output modes are not vetoed.
pub fn herald(
    state: &SparseKet,
    herald_modes: &[DetectorKey],
    detectors: &DetectorModel,
) -> Result<ConditionalEnsemble> {
    detectors.validate()?;
    let labels = state.register().labels();
    let mut herald_groups: Vec<Vec<usize>> = vec![Vec::new(); herald_modes.len()];
    let mut rest = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match herald_modes.iter().position(|m| *m == l.detector()) {
            Some(p) => herald_groups[p].push(i),
            None => rest.push(i),
        }
    }
    if herald_groups.iter().any(Vec::is_empty) {
        return Err(Error::UnknownMode(
            "a herald mode is missing from the state register".into(),
        ));
    }
    let herald_indices: Vec<usize> = herald_groups.iter().flatten().copied().collect();
    let flat_groups = regroup(&herald_groups);
    let etas: Vec<f64> = herald_modes
        .iter()
        .map(|m| detectors.efficiency_for(m))
        .collect();

    let rest_register =
        crate::fock::ModeRegister::new(rest.iter().map(|&i| labels[i].clone()).collect())?;

    let mut by_outcome: BTreeMap<Vec<u8>, Vec<(OccupationVector, C64)>> = BTreeMap::new();
    for (occ, amp) in state.iter() {
        let key: Vec<u8> = herald_indices.iter().map(|&i| occ.counts()[i]).collect();
        let out: Vec<u8> = rest.iter().map(|&i| occ.counts()[i]).collect();
        by_outcome
            .entry(key)
            .or_default()
            .push((OccupationVector::new(out), *amp));
    }

    let mut components = Vec::new();
    for (outcome, amps) in by_outcome {
        let counts = grouped_counts(&OccupationVector::new(outcome.clone()), &flat_groups);
        let success: f64 = counts
            .iter()
            .zip(&etas)
            .map(|(&n, &eta)| detectors.herald_success(n, eta))
            .product();
        if success == 0.0 {
            continue;
        }
        let ket = SparseKet::from_amplitudes(rest_register.clone(), amps)?;
        let p = ket.norm_sqr();
        if p == 0.0 {
            continue;
        }
        components.push(EnsembleComponent {
            weight: p * success,
            ket: ket.normalized(),
            herald_occupation: outcome,
        });
    }
    let herald_probability = compensated_sum(components.iter().map(|c| c.weight));
    Ok(ConditionalEnsemble {
        components,
        herald_probability,
    })
}

/// Herald-group indices relative to the flattened herald occupation vector.
fn regroup(groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut offset = 0;
    groups
        .iter()
        .map(|g| {
            let r = (offset..offset + g.len()).collect();
            offset += g.len();
            r
        })
        .collect()
}

/// Propagates each source component through `layout` and heralds it.
pub fn herald_source(
    layout: &CircuitLayout,
    components: &[SourceComponent],
    detectors: &DetectorModel,
) -> Result<ConditionalEnsemble> {
    let herald_modes = layout_keys(&layout.herald_modes);
    let mut parts = Vec::with_capacity(components.len());
    for comp in components {
        if comp.ket.max_photons() < herald_modes.len() {
            // fewer photons than herald detectors: can never herald
            continue;
        }
        let out = layout.propagate(&comp.ket)?;
        parts.push((comp.weight, herald(&out, &herald_modes, detectors)?));
    }
    Ok(ConditionalEnsemble::merge(parts))
}

pub fn layout_keys(modes: &[crate::elements::NamedMode]) -> Vec<DetectorKey> {
    modes.iter().map(|m| m.label.detector()).collect()
}

/// Detected photon numbers `(n1H, n1V, n2H, n2V)` on the output modes, given
/// the herald. Threshold detectors contribute 0/1 flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NumberTable {
    pub probabilities: BTreeMap<[u8; 4], f64>,
}

pub const NUMBER_TABLE_HEADER: [&str; 5] = ["n1H", "n1V", "n2H", "n2V", "probability"];

impl NumberTable {
    pub fn probability(&self, pattern: [u8; 4]) -> f64 {
        self.probabilities.get(&pattern).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.probabilities.values().copied())
    }

    /// Summed over polarization: `(n1, n2) -> P_{n1;n2}`.
    pub fn aggregated(&self) -> BTreeMap<(u8, u8), f64> {
        let mut out = BTreeMap::new();
        for (k, p) in &self.probabilities {
            *out.entry((k[0] + k[1], k[2] + k[3])).or_insert(0.0) += p;
        }
        out
    }

    pub fn p_arms(&self, n1: u8, n2: u8) -> f64 {
        self.aggregated().get(&(n1, n2)).copied().unwrap_or(0.0)
    }

    /// One detected photon in each output arm.
    pub fn p11(&self) -> f64 {
        self.p_arms(1, 1)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(NUMBER_TABLE_HEADER)?;
        for (k, p) in &self.probabilities {
            w.write_record([
                k[0].to_string(),
                k[1].to_string(),
                k[2].to_string(),
                k[3].to_string(),
                format!("{p:e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != NUMBER_TABLE_HEADER {
            return Err(Error::MalformedData {
                line: 1,
                message: format!("unexpected header {headers:?}"),
            });
        }
        let mut probabilities = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |m: String| Error::MalformedData { line, message: m };
            let mut key = [0u8; 4];
            for (j, slot) in key.iter_mut().enumerate() {
                *slot = rec[j]
                    .trim()
                    .parse()
                    .map_err(|e| bad(format!("column {}: {e}", NUMBER_TABLE_HEADER[j])))?;
            }
            let p: f64 = rec[4]
                .trim()
                .parse()
                .map_err(|e| bad(format!("probability: {e}")))?;
            if !(p >= 0.0) {
                return Err(bad(format!("negative probability {p}")));
            }
            if probabilities.insert(key, p).is_some() {
                return Err(bad(format!("duplicate pattern {key:?}")));
            }
        }
        Ok(NumberTable { probabilities })
    }
}

/// Conditional detected-number distribution over the four output modes.
pub fn number_table(
    ensemble: &ConditionalEnsemble,
    output_modes: &[DetectorKey],
    detectors: &DetectorModel,
) -> Result<NumberTable> {
    if output_modes.len() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} output modes, expected 4",
            output_modes.len()
        )));
    }
    if ensemble.herald_probability <= 0.0 {
        return Err(Error::ZeroProbability("herald".into()));
    }
    let mut probabilities: BTreeMap<[u8; 4], f64> = BTreeMap::new();
    for comp in &ensemble.components {
        let w = comp.weight / ensemble.herald_probability;
        let dist = click_distribution(&comp.ket, output_modes, detectors)?;
        for (pattern, p) in dist.probabilities {
            let key = [pattern[0], pattern[1], pattern[2], pattern[3]];
            *probabilities.entry(key).or_insert(0.0) += w * p;
        }
    }
    Ok(NumberTable { probabilities })
}

/// Local unitary `U1 (x) U2` applied to post-selected states so that the ideal
/// heralded state reads as phi+.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalCorrection {
    pub u1: Matrix2<C64>,
    pub u2: Matrix2<C64>,
}

impl LocalCorrection {
    pub fn identity() -> Self {
        LocalCorrection {
            u1: Matrix2::identity(),
            u2: Matrix2::identity(),
        }
    }

    pub fn apply(&self, rho: &TwoQubitDensityMatrix) -> TwoQubitDensityMatrix {
        rho.local_rotated(&self.u1, &self.u2)
    }
}

/// Post-selected two-qubit state and the probability of the coincidence.
#[derive(Clone, Debug)]
pub struct PostSelection {
    pub rho: TwoQubitDensityMatrix,
    /// Probability, given the herald, of exactly one surviving photon per arm.
    pub coincidence_probability: f64,
}

/// Per lost-photon vector: `(tag1, tag2)` to the amplitude over polarization pairs.
type TagBranches = BTreeMap<(u8, u8), Vector4<C64>>;

/// Two-photon polarization state conditioned on exactly one surviving photon
/// in each output arm, after per-mode loss.
///
/// Loss is resolved into Kraus branches (photons lost per mode); branches and
/// internal tags add incoherently.
pub fn postselect_two_qubit(
    ensemble: &ConditionalEnsemble,
    output_modes: &[DetectorKey],
    detectors: &DetectorModel,
    correction: Option<&LocalCorrection>,
) -> Result<PostSelection> {
    detectors.validate()?;
    if output_modes.len() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} output modes, expected 4",
            output_modes.len()
        )));
    }
    let mut rho = Matrix4::<C64>::zeros();
    for comp in &ensemble.components {
        rho += coincidence_block(&comp.ket, output_modes, detectors)? * c(comp.weight, 0.0);
    }
    let weight = rho.trace().re;
    if !(weight > 0.0) {
        return Err(Error::ZeroProbability("output coincidence".into()));
    }
    let mut state = TwoQubitDensityMatrix::from_unnormalized(rho)?;
    if let Some(corr) = correction {
        state = corr.apply(&state);
    }
    let coincidence_probability = if ensemble.herald_probability > 0.0 {
        weight / ensemble.herald_probability
    } else {
        0.0
    };
    Ok(PostSelection {
        rho: state,
        coincidence_probability,
    })
}

/// Unnormalized coincidence-basis block of one pure output state.
fn coincidence_block(
    ket: &SparseKet,
    output_modes: &[DetectorKey],
    detectors: &DetectorModel,
) -> Result<Matrix4<C64>> {
    let groups = detector_indices(ket, output_modes)?;
    let labels = ket.register().labels();
    let n = labels.len();
    // (arm, polarization bit) of every register mode
    let mut role = vec![(0usize, 0usize); n];
    for (d, g) in groups.iter().enumerate() {
        for &i in g {
            role[i] = (d / 2, d % 2);
        }
    }
    let etas: Vec<f64> = labels
        .iter()
        .map(|l| detectors.efficiency_for(&l.detector()))
        .collect();

    let mut branches: BTreeMap<Vec<u8>, TagBranches> = BTreeMap::new();
    for (occ, amp) in ket.iter() {
        let k = occ.counts();
        for i in (0..n).filter(|&i| role[i].0 == 0 && k[i] > 0) {
            for j in (0..n).filter(|&j| role[j].0 == 1 && k[j] > 0) {
                let mut lost = k.to_vec();
                lost[i] -= 1;
                lost[j] -= 1;
                let mut coeff = 1.0;
                for m in 0..n {
                    let kept = k[m] - lost[m];
                    coeff *= (binomial(u32::from(k[m]), u32::from(lost[m]))
                        * etas[m].powi(i32::from(kept))
                        * (1.0 - etas[m]).powi(i32::from(lost[m])))
                    .sqrt();
                }
                if coeff == 0.0 {
                    continue;
                }
                let slot = 2 * role[i].1 + role[j].1;
                let v = branches
                    .entry(lost)
                    .or_default()
                    .entry((labels[i].tag, labels[j].tag))
                    .or_insert_with(Vector4::zeros);
                v[slot] += amp * coeff;
            }
        }
    }
    let mut rho = Matrix4::zeros();
    for by_tag in branches.values() {
        for v in by_tag.values() {
            rho += v * v.adjoint();
        }
    }
    Ok(rho)
}

/// Correction mapping the ideal heralded state of this circuit onto phi+.
///
/// The three-pair term is heralded with ideal number-resolving detectors; the
/// resulting pure two-qubit state `sum C_ab |a>|b>` is rotated on the second
/// qubit by the unitary maximizing `|tr(C W)|` (from the SVD of `C`).
pub fn convention_correction(t1: f64, t2: f64, sign: PairSign) -> Result<LocalCorrection> {
    let layout = crate::elements::build_heralding_circuit(t1, t2, (Pauli::Z, Pauli::Z))?;
    let components = [SourceComponent {
        pairs: 3,
        weight: 1.0,
        distinguishable: false,
        ket: pair_term(3, 8, sign)?,
    }];
    let ideal = DetectorModel::ideal();
    let ensemble = herald_source(&layout, &components, &ideal)?;
    if ensemble.herald_probability <= 0.0 {
        return Err(Error::ZeroProbability(format!(
            "ideal herald at T1 = {t1}, T2 = {t2}"
        )));
    }
    let post = postselect_two_qubit(&ensemble, &layout_keys(&layout.output_modes), &ideal, None)?;
    let eig = post.rho.matrix().symmetric_eigen();
    let top = (0..4)
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .expect("four eigenvalues");
    let psi = eig.eigenvectors.column(top).into_owned();
    let coeff = Matrix2::new(psi[0], psi[1], psi[2], psi[3]);
    let svd = coeff.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let w = v_t.adjoint() * u.adjoint();
    Ok(LocalCorrection {
        u1: Matrix2::identity(),
        u2: w.transpose(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{vacuum, ModeLabel, ModeRegister, Polarization};

    fn single_mode(name: &str) -> (ModeRegister, Vec<DetectorKey>) {
        let l = ModeLabel::new(name, Polarization::H);
        (
            ModeRegister::new(vec![l.clone()]).unwrap(),
            vec![l.detector()],
        )
    }

    #[test]
    fn vacuum_never_clicks() {
        let (reg, keys) = single_mode("x");
        let d = click_distribution(&vacuum(reg), &keys, &DetectorModel::threshold(0.5)).unwrap();
        assert_eq!(d.probability(&[0]), 1.0);
    }

    #[test]
    fn single_and_double_photon_clicks() {
        let (reg, keys) = single_mode("x");
        let one = SparseKet::basis(reg.clone(), vec![1]).unwrap();
        let d = click_distribution(&one, &keys, &DetectorModel::threshold(0.42)).unwrap();
        assert!((d.probability(&[1]) - 0.42).abs() < 1e-15);

        let two = SparseKet::basis(reg, vec![2]).unwrap();
        let thr = click_distribution(&two, &keys, &DetectorModel::threshold(0.5)).unwrap();
        assert!((thr.probability(&[1]) - 0.75).abs() < 1e-15);
        // explicit loss enumeration: both survive, first only, second only
        let nr = click_distribution(&two, &keys, &DetectorModel::number_resolving(0.5)).unwrap();
        assert!((nr.probability(&[2]) - 0.25).abs() < 1e-15);
        assert!((nr.probability(&[1]) - 0.5).abs() < 1e-15);
        assert!((nr.probability(&[1]) + nr.probability(&[2]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn register_mismatch_rejected() {
        let (reg, _) = single_mode("x");
        let other = vec![DetectorKey::new("y", Polarization::H)];
        assert!(matches!(
            click_distribution(&vacuum(reg), &other, &DetectorModel::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn invalid_efficiency_rejected() {
        let (reg, keys) = single_mode("x");
        let d = DetectorModel::threshold(0.5).with_override("xH", 1.5);
        assert!(click_distribution(&vacuum(reg), &keys, &d).is_err());
    }

    #[test]
    fn override_applies_by_name() {
        let d = DetectorModel::threshold(0.1).with_override("t1V", 0.3);
        assert_eq!(
            d.efficiency_for(&DetectorKey::new("t1", Polarization::V)),
            0.3
        );
        assert_eq!(
            d.efficiency_for(&DetectorKey::new("t1", Polarization::H)),
            0.1
        );
    }

    #[test]
    fn single_component_postselection() {
        let labels: Vec<ModeLabel> = ["t1", "t2"]
            .iter()
            .flat_map(|s| Polarization::BOTH.map(|p| ModeLabel::new(*s, p)))
            .collect();
        let keys: Vec<DetectorKey> = labels.iter().map(ModeLabel::detector).collect();
        let reg = ModeRegister::new(labels).unwrap();
        let hh = SparseKet::basis(reg, vec![1, 0, 1, 0]).unwrap();
        let ens = ConditionalEnsemble::pure(hh);
        let post = postselect_two_qubit(&ens, &keys, &DetectorModel::threshold(0.3), None).unwrap();
        assert!((post.rho.matrix()[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((post.coincidence_probability - 0.09).abs() < 1e-12);
    }

    #[test]
    fn number_table_csv_roundtrip() {
        let mut t = NumberTable::default();
        t.probabilities.insert([0, 0, 0, 0], 0.9);
        t.probabilities.insert([1, 0, 0, 1], 0.1);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = NumberTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("n1H,n1V,n2H,n2V,probability"));
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let v = [1.0, 1e-16, 1e-16, -1.0];
        assert!((compensated_sum(v) - 2e-16).abs() < 1e-30);
    }

    #[test]
    fn corrected_ideal_state_is_phi_plus() {
        use crate::elements::build_heralding_circuit;
        use crate::qubit::BellState;
        for (t1, t2) in [(0.5, 0.5), (0.3, 0.7), (0.17, 0.83)] {
            let corr = convention_correction(t1, t2, PairSign::Minus).unwrap();
            let layout = build_heralding_circuit(t1, t2, (Pauli::Z, Pauli::Z)).unwrap();
            let comps = [SourceComponent {
                pairs: 3,
                weight: 1.0,
                distinguishable: false,
                ket: pair_term(3, 8, PairSign::Minus).unwrap(),
            }];
            let ideal = DetectorModel::ideal();
            let ens = herald_source(&layout, &comps, &ideal).unwrap();
            let post = postselect_two_qubit(
                &ens,
                &layout_keys(&layout.output_modes),
                &ideal,
                Some(&corr),
            )
            .unwrap();
            let f = post.rho.overlap(&BellState::PhiPlus.vector());
            assert!((f - 1.0).abs() < 1e-9, "T1={t1} T2={t2}: F={f}");
        }
    }
}
