//! Scalar figures of merit for heralded two-photon states.

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::detection::{compensated_sum, ConditionalEnsemble, NumberTable};
use crate::error::{Error, Result};
use crate::fock::DetectorKey;
use crate::qubit::{c, kron2, BellState, Pauli, TwoQubitDensityMatrix, C64};
use crate::tomography::optimize_local_fidelity;

/// `<phi+|rho|phi+>`, or its maximum over local unitaries.
pub fn fidelity_to_phi_plus(rho: &TwoQubitDensityMatrix, optimize_local: bool) -> f64 {
    if optimize_local {
        optimize_local_fidelity(rho).fidelity
    } else {
        rho.overlap(&BellState::PhiPlus.vector())
    }
}

fn psd_sqrt(m: &Matrix4<C64>) -> Matrix4<C64> {
    let eig = SymmetricEigen::new(*m);
    let mut out = Matrix4::zeros();
    for k in 0..4 {
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * c(eig.eigenvalues[k].max(0.0).sqrt(), 0.0);
    }
    out
}

/// Wootters concurrence.
///
/// The `lambda_i` are the singular values of `sqrt(rho) sqrt(rho~)`, taken here
/// as square roots of the eigenvalues of the Hermitian `sqrt(rho) rho~ sqrt(rho)`.
pub fn concurrence(rho: &TwoQubitDensityMatrix) -> f64 {
    let yy = kron2(&Pauli::Y.matrix(), &Pauli::Y.matrix());
    let m = rho.matrix();
    let flipped = yy * m.map(|z| z.conj()) * yy;
    let s = psd_sqrt(m);
    let h = s * flipped * s;
    let h = (h + h.adjoint()) * c(0.5, 0.0);
    let mut lambdas: Vec<f64> = h
        .symmetric_eigenvalues()
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
}

/// Squared concurrence.
pub fn tangle(rho: &TwoQubitDensityMatrix) -> f64 {
    concurrence(rho).powi(2).min(1.0)
}

/// Maximal CHSH value `2 sqrt(m1 + m2)` from the two largest eigenvalues of
/// `M^T M`, with `M` the correlation matrix.
pub fn chsh_max(rho: &TwoQubitDensityMatrix) -> f64 {
    let m = rho.correlation_matrix();
    let mut eig: Vec<f64> = (m.transpose() * m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    2.0 * (eig[0].max(0.0) + eig[1].max(0.0)).sqrt()
}

/// Measured six-fold and four-fold rates with the per-mode output efficiency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub c4: f64,
    pub c6: f64,
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparationEstimate {
    /// `C6 / (C4 eta^2)` as computed.
    pub raw: f64,
    /// `raw` capped at 1.
    pub value: f64,
    /// The estimator is not a probability; values above 1 are flagged.
    pub exceeds_unity: bool,
}

/// `P = C6 / (C4 eta^2)`.
pub fn preparation_efficiency(rates: &RateEstimate) -> Result<PreparationEstimate> {
    if !(rates.c4 > 0.0) {
        return Err(Error::ZeroProbability("four-fold rate C4".into()));
    }
    if !(rates.c6 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "six-fold rate {}",
            rates.c6
        )));
    }
    if !(rates.eta > 0.0 && rates.eta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "efficiency {} outside (0, 1]",
            rates.eta
        )));
    }
    let raw = rates.c6 / (rates.c4 * rates.eta * rates.eta);
    Ok(PreparationEstimate {
        raw,
        value: raw.min(1.0),
        exceeds_unity: raw > 1.0,
    })
}

/// Estimator `P_{1;1} / eta^2`, i.e. `C6/(C4 eta^2)` expressed through the
/// conditional coincidence probability.
pub fn preparation_from_p11(p11: f64, eta: f64) -> Result<PreparationEstimate> {
    preparation_efficiency(&RateEstimate {
        c4: 1.0,
        c6: p11,
        eta,
    })
}

/// Efficiency that makes `p11 / eta^2` equal `preparation`.
pub fn implied_efficiency(p11: f64, preparation: f64) -> Result<f64> {
    if !(preparation > 0.0 && p11 >= 0.0) {
        return Err(Error::InvalidParameter(
            "need p11 >= 0 and preparation > 0".into(),
        ));
    }
    Ok((p11 / preparation).sqrt())
}

/// Probability, given the herald, of exactly one photon in each output arm
/// before detection loss. `output_modes` lists arm 1's two modes, then arm 2's.
pub fn direct_preparation_probability(
    ensemble: &ConditionalEnsemble,
    output_modes: &[DetectorKey],
) -> Result<f64> {
    if output_modes.len() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} output modes, expected 4",
            output_modes.len()
        )));
    }
    if !(ensemble.herald_probability > 0.0) {
        return Err(Error::ZeroProbability("herald".into()));
    }
    let mut terms = Vec::new();
    for comp in &ensemble.components {
        let arm: Vec<usize> = comp
            .ket
            .register()
            .labels()
            .iter()
            .map(|l| {
                output_modes
                    .iter()
                    .position(|k| *k == l.detector())
                    .map(|p| p / 2)
                    .ok_or_else(|| Error::UnknownMode(l.to_string()))
            })
            .collect::<Result<_>>()?;
        let p: f64 = comp
            .ket
            .iter()
            .filter(|(occ, _)| {
                let mut n = [0u32; 2];
                for (&k, &a) in occ.counts().iter().zip(&arm) {
                    n[a] += u32::from(k);
                }
                n == [1, 1]
            })
            .map(|(_, amp)| amp.norm_sqr())
            .sum();
        terms.push(comp.weight * p);
    }
    Ok(compensated_sum(terms) / ensemble.herald_probability)
}

/// Reference line `P = T1 T2` for an ideal three-pair source.
pub fn quadratic_line(t1: f64, t2: f64) -> f64 {
    t1 * t2
}

/// `F_meas = P_{1;1} F_post`.
pub fn total_state_fidelity_from(p11: f64, fidelity_post: f64) -> f64 {
    p11 * fidelity_post
}

/// `F_meas` from a number table and the post-selected state, with `F_post`
/// maximized over local unitaries.
pub fn total_state_fidelity(table: &NumberTable, rho_post: &TwoQubitDensityMatrix) -> f64 {
    total_state_fidelity_from(table.p11(), fidelity_to_phi_plus(rho_post, true))
}

/// Fringe visibility `(max - min) / (max + min)` of coincidence counts
/// recorded at several phase settings.
pub fn visibility_from_scan(counts: &[f64]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two phase points".into(),
        ));
    }
    if counts.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::InvalidParameter(
            "counts must be non-negative".into(),
        ));
    }
    let max = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = counts.iter().copied().fold(f64::INFINITY, f64::min);
    if max + min == 0.0 {
        return Err(Error::ZeroProbability("all counts are zero".into()));
    }
    Ok((max - min) / (max + min))
}

/// Per-experiment summary; fields that were not computed stay `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fidelity_post: Option<f64>,
    pub fidelity_meas: Option<f64>,
    pub tangle: Option<f64>,
    pub chsh: Option<f64>,
    #[serde(rename = "P_direct")]
    pub p_direct: Option<f64>,
    #[serde(rename = "P_estimator")]
    pub p_estimator: Option<f64>,
    pub visibility: Option<f64>,
}

impl MetricsReport {
    /// Fidelity (locally optimized), tangle and CHSH of a post-selected state.
    pub fn from_state(rho: &TwoQubitDensityMatrix) -> Self {
        MetricsReport {
            fidelity_post: Some(fidelity_to_phi_plus(rho, true)),
            tangle: Some(tangle(rho)),
            chsh: Some(chsh_max(rho)),
            ..Default::default()
        }
    }
}
