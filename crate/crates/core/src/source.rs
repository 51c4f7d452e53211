//! Multi-pair SPDC emission into the polarization modes of arms `a1`, `a2`.
//!
//! The n-pair term is `(a1H† a2V† - a1V† a2H†)^n |0>` normalized, which gives
//! `(1/sqrt(n+1)) sum_k (-1)^k |n-k, k; k, n-k>` on `(a1H, a1V, a2H, a2V)`.
//! Pair number follows `P(n) = (1 - tau^2)^2 (n + 1) tau^(2n)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    tensor, ModeLabel, ModeRegister, OccupationVector, Polarization, SparseKet, DEFAULT_PHOTON_CAP,
};
use crate::qubit::c;

/// Sign between the two polarization products of a single pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSign {
    /// `a1H† a2V† - a1V† a2H†` (singlet-type pairs).
    #[default]
    Minus,
    /// `a1H† a2V† + a1V† a2H†`.
    Plus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdcParams {
    /// Per-pair amplitude, `tanh` of the squeezing parameter.
    pub tau: f64,
    pub max_pairs: usize,
    #[serde(default)]
    pub bell_phase: PairSign,
    /// Visibility of the two-pair destructive interference.
    pub visibility: f64,
    #[serde(default = "default_cap")]
    pub photon_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_PHOTON_CAP
}

/// Default pair amplitude for uncalibrated runs.
pub const DEFAULT_TAU: f64 = 0.3;
/// Measured visibility of the destructive four-photon interference.
pub const DEFAULT_VISIBILITY: f64 = 0.862;

impl Default for SpdcParams {
    fn default() -> Self {
        SpdcParams {
            tau: DEFAULT_TAU,
            max_pairs: 4,
            bell_phase: PairSign::Minus,
            visibility: DEFAULT_VISIBILITY,
            photon_cap: DEFAULT_PHOTON_CAP,
        }
    }
}

impl SpdcParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau = {} outside [0, 1)",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::InvalidParameter(format!(
                "visibility = {} outside [0, 1]",
                self.visibility
            )));
        }
        if 2 * self.max_pairs > self.photon_cap {
            return Err(Error::PhotonCap {
                requested: 2 * self.max_pairs,
                cap: self.photon_cap,
            });
        }
        Ok(())
    }
}

/// `(a1H, a1V, a2H, a2V)` carrying internal tag `tag`.
pub fn source_register(tag: u8) -> ModeRegister {
    let mut labels = Vec::with_capacity(4);
    for arm in crate::elements::SOURCE_ARMS {
        for pol in Polarization::BOTH {
            labels.push(ModeLabel::new(arm, pol).with_tag(tag));
        }
    }
    ModeRegister::new(labels).expect("static source register")
}

/// Normalized n-pair term on the tag-0 source register.
pub fn pair_term(n: usize, photon_cap: usize, sign: PairSign) -> Result<SparseKet> {
    pair_term_tagged(n, photon_cap, sign, 0)
}

pub fn pair_term_tagged(n: usize, photon_cap: usize, sign: PairSign, tag: u8) -> Result<SparseKet> {
    if 2 * n > photon_cap {
        return Err(Error::PhotonCap {
            requested: 2 * n,
            cap: photon_cap,
        });
    }
    let norm = 1.0 / ((n + 1) as f64).sqrt();
    let amps = (0..=n).map(|k| {
        let s = match sign {
            PairSign::Minus if k % 2 == 1 => -1.0,
            _ => 1.0,
        };
        let (hi, lo) = ((n - k) as u8, k as u8);
        (
            OccupationVector::new(vec![hi, lo, lo, hi]),
            c(s * norm, 0.0),
        )
    });
    SparseKet::from_amplitudes(source_register(tag), amps)
}

/// `n` mutually distinguishable single pairs, one per internal tag.
pub fn distinguishable_pairs(n: usize, sign: PairSign) -> Result<SparseKet> {
    if n == 0 {
        return pair_term(0, DEFAULT_PHOTON_CAP, sign);
    }
    let mut state = pair_term_tagged(1, 2, sign, 0)?;
    for tag in 1..n {
        let tag = u8::try_from(tag)
            .map_err(|_| Error::InvalidParameter(format!("{n} distinguishable pairs")))?;
        state = tensor(&state, &pair_term_tagged(1, 2, sign, tag)?)?;
    }
    Ok(state)
}

/// Untruncated probability of emitting exactly `n` pairs.
pub fn pair_probability(tau: f64, n: usize) -> f64 {
    let t2 = tau * tau;
    (1.0 - t2).powi(2) * (n as f64 + 1.0) * t2.powi(n as i32)
}

/// Pair-number weights over `0..=max_pairs`, renormalized after truncation.
pub fn pair_weights(params: &SpdcParams) -> Result<Vec<f64>> {
    params.validate()?;
    let raw: Vec<f64> = (0..=params.max_pairs)
        .map(|n| pair_probability(params.tau, n))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|p| p / total).collect())
}

/// Probability mass beyond `max_pairs` that truncation discards.
pub fn truncation_weight(params: &SpdcParams) -> f64 {
    let kept: f64 = (0..=params.max_pairs)
        .map(|n| pair_probability(params.tau, n))
        .sum();
    (1.0 - kept).max(0.0)
}

/// The coherent truncated two-mode state, renormalized.
pub fn spdc_state(params: &SpdcParams) -> Result<SparseKet> {
    params.validate()?;
    let amp0 = 1.0 - params.tau * params.tau;
    let mut amps = Vec::new();
    for n in 0..=params.max_pairs {
        let a = amp0 * ((n + 1) as f64).sqrt() * params.tau.powi(n as i32);
        let term = pair_term(n, params.photon_cap, params.bell_phase)?;
        amps.extend(term.iter().map(|(k, v)| (k.clone(), v * a)));
    }
    Ok(SparseKet::from_amplitudes(source_register(0), amps)?.normalized())
}

/// Weights of the interfering and fully distinguishable two-pair channels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisibilityMix {
    pub coherent: f64,
    pub distinguishable: f64,
}

pub fn apply_visibility(visibility: f64) -> Result<VisibilityMix> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::InvalidParameter(format!(
            "visibility = {visibility} outside [0, 1]"
        )));
    }
    Ok(VisibilityMix {
        coherent: visibility,
        distinguishable: 1.0 - visibility,
    })
}

/// A pure source state entering the circuit with a classical weight.
#[derive(Clone, Debug)]
pub struct SourceComponent {
    pub pairs: usize,
    pub weight: f64,
    pub distinguishable: bool,
    pub ket: SparseKet,
}

/// Incoherent decomposition of the source by pair number.
///
/// Distinct pair numbers never contribute coherently to any photon-counting
/// statistic downstream (every detection event fixes the photon number), so
/// the source is handled as a mixture. The two-pair block is split into an
/// interfering and a distinguishable part according to the visibility.
pub fn source_components(params: &SpdcParams) -> Result<Vec<SourceComponent>> {
    let weights = pair_weights(params)?;
    let mix = apply_visibility(params.visibility)?;
    let mut out = Vec::new();
    for (n, &w) in weights.iter().enumerate() {
        let coherent = pair_term(n, params.photon_cap, params.bell_phase)?;
        if n == 2 {
            if mix.coherent > 0.0 {
                out.push(SourceComponent {
                    pairs: n,
                    weight: w * mix.coherent,
                    distinguishable: false,
                    ket: coherent,
                });
            }
            if mix.distinguishable > 0.0 {
                out.push(SourceComponent {
                    pairs: n,
                    weight: w * mix.distinguishable,
                    distinguishable: true,
                    ket: distinguishable_pairs(2, params.bell_phase)?,
                });
            }
        } else {
            out.push(SourceComponent {
                pairs: n,
                weight: w,
                distinguishable: false,
                ket: coherent,
            });
        }
    }
    Ok(out)
}

/// Pair amplitude at another pump power, assuming `tau^2` scales linearly with power.
pub fn scale_tau_with_power(tau: f64, from_power: f64, to_power: f64) -> Result<f64> {
    if !(from_power > 0.0 && to_power > 0.0) {
        return Err(Error::InvalidParameter(
            "pump powers must be positive".into(),
        ));
    }
    let t = tau * (to_power / from_power).sqrt();
    if t >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "scaled tau {t} not below 1"
        )));
    }
    Ok(t)
}
