//! Sparse Fock-space algebra over a labeled register of polarization modes.
//!
//! A [`SparseKet`] stores complex amplitudes keyed by exact occupation
//! vectors. Passive linear optics acts on it through [`ModeMap`]s, which
//! substitute every creation operator `a_i† -> sum_j M_ji b_j†` and expand the
//! resulting operator products back into normalized Fock kets.
//!
//! All maps are ordered (`BTreeMap`) so that floating-point accumulation order,
//! and therefore every derived number, is reproducible run to run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitudes with magnitude below this are dropped after every element.
pub const PRUNE_THRESHOLD: f64 = 1e-14;

/// Default hard cap on the total photon number (four pairs).
pub const DEFAULT_PHOTON_CAP: usize = 8;

/// Tolerance used when validating that a mode map is unitary or isometric.
pub const ISOMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::H, Polarization::V];
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::H => write!(f, "H"),
            Polarization::V => write!(f, "V"),
        }
    }
}

/// One bosonic mode: a spatial mode, a polarization and an internal tag.
///
/// The tag distinguishes otherwise identical modes that never interfere (for
/// example photons from different emission events). Detectors are blind to it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeLabel {
    pub spatial: String,
    pub pol: Polarization,
    #[serde(default)]
    pub tag: u8,
}

impl ModeLabel {
    pub fn new(spatial: impl Into<String>, pol: Polarization) -> Self {
        ModeLabel {
            spatial: spatial.into(),
            pol,
            tag: 0,
        }
    }

    pub fn with_tag(mut self, tag: u8) -> Self {
        self.tag = tag;
        self
    }

    /// The detector this mode is registered by, ignoring the internal tag.
    pub fn detector(&self) -> DetectorKey {
        DetectorKey {
            spatial: self.spatial.clone(),
            pol: self.pol,
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tag == 0 {
            write!(f, "{}{}", self.spatial, self.pol)
        } else {
            write!(f, "{}{}#{}", self.spatial, self.pol, self.tag)
        }
    }
}

/// A physical detection channel: spatial mode plus polarization.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectorKey {
    pub spatial: String,
    pub pol: Polarization,
}

impl DetectorKey {
    pub fn new(spatial: impl Into<String>, pol: Polarization) -> Self {
        DetectorKey {
            spatial: spatial.into(),
            pol,
        }
    }
}

impl fmt::Display for DetectorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.spatial, self.pol)
    }
}

/// Ordered list of unique mode labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeRegister {
    labels: Vec<ModeLabel>,
}

impl ModeRegister {
    pub fn new(labels: Vec<ModeLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidParameter(
                "a mode register needs at least one mode".into(),
            ));
        }
        Self::from_labels(labels)
    }

    /// Register with no modes. Only produced as the remainder of a projection
    /// onto every mode.
    pub(crate) fn empty() -> Self {
        ModeRegister { labels: Vec::new() }
    }

    fn from_labels(labels: Vec<ModeLabel>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::LabelCollision(l.to_string()));
            }
        }
        Ok(ModeRegister { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ModeLabel] {
        &self.labels
    }

    pub fn index_of(&self, label: &ModeLabel) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Concatenation; fails if the two registers share a label.
    pub fn concat(&self, other: &ModeRegister) -> Result<ModeRegister> {
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Self::from_labels(labels)
    }

    /// Distinct internal tags present, in ascending order.
    pub fn tags(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.labels.iter().map(|l| l.tag).collect();
        set.into_iter().collect()
    }

    /// Register indices grouped by detector, in order of first appearance.
    pub fn detector_groups(&self) -> Vec<(DetectorKey, Vec<usize>)> {
        let mut groups: Vec<(DetectorKey, Vec<usize>)> = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            let key = l.detector();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        groups
    }
}

/// Photon count per register mode.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccupationVector(Vec<u8>);

impl OccupationVector {
    pub fn new(counts: Vec<u8>) -> Self {
        OccupationVector(counts)
    }

    pub fn zeros(len: usize) -> Self {
        OccupationVector(vec![0; len])
    }

    pub fn counts(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    fn sqrt_factorial_product(&self) -> f64 {
        self.0.iter().map(|&n| sqrt_factorial(n)).product()
    }
}

impl From<Vec<u8>> for OccupationVector {
    fn from(v: Vec<u8>) -> Self {
        OccupationVector(v)
    }
}

fn sqrt_factorial(n: u8) -> f64 {
    (1..=n as u32).map(f64::from).product::<f64>().sqrt()
}

/// A pure multi-photon state as a sparse amplitude map over occupations.
#[derive(Clone, Debug)]
pub struct SparseKet {
    register: ModeRegister,
    amplitudes: BTreeMap<OccupationVector, Complex64>,
}

impl SparseKet {
    /// Builds a ket, merging nothing and pruning negligible amplitudes.
    pub fn from_amplitudes(
        register: ModeRegister,
        amplitudes: impl IntoIterator<Item = (OccupationVector, Complex64)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<OccupationVector, Complex64> = BTreeMap::new();
        for (occ, amp) in amplitudes {
            if occ.len() != register.len() {
                return Err(Error::DimensionMismatch(format!(
                    "occupation of length {} on a {}-mode register",
                    occ.len(),
                    register.len()
                )));
            }
            *map.entry(occ).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        let mut ket = SparseKet {
            register,
            amplitudes: map,
        };
        ket.prune();
        Ok(ket)
    }

    /// A single Fock basis state with unit amplitude.
    pub fn basis(register: ModeRegister, occupation: Vec<u8>) -> Result<Self> {
        Self::from_amplitudes(
            register,
            [(OccupationVector(occupation), Complex64::new(1.0, 0.0))],
        )
    }

    pub fn register(&self) -> &ModeRegister {
        &self.register
    }

    pub fn amplitudes(&self) -> &BTreeMap<OccupationVector, Complex64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, occupation: &[u8]) -> Complex64 {
        self.amplitudes
            .get(&OccupationVector(occupation.to_vec()))
            .copied()
            .unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OccupationVector, &Complex64)> {
        self.amplitudes.iter()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-10
    }

    /// Rescaled to unit norm; an empty ket stays empty.
    pub fn normalized(&self) -> SparseKet {
        let n = self.norm_sqr();
        if n == 0.0 {
            return self.clone();
        }
        self.scaled(Complex64::new(1.0 / n.sqrt(), 0.0))
    }

    pub fn scaled(&self, factor: Complex64) -> SparseKet {
        let mut ket = SparseKet {
            register: self.register.clone(),
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(k, &a)| (k.clone(), a * factor))
                .collect(),
        };
        ket.prune();
        ket
    }

    /// The total photon number if every component carries the same number.
    pub fn total_photons(&self) -> Option<usize> {
        let mut totals = self.amplitudes.keys().map(OccupationVector::total);
        let first = totals.next().unwrap_or(0);
        totals.all(|t| t == first).then_some(first)
    }

    pub fn max_photons(&self) -> usize {
        self.amplitudes
            .keys()
            .map(OccupationVector::total)
            .max()
            .unwrap_or(0)
    }

    /// Inner product `<self|other>` on a shared register.
    pub fn inner(&self, other: &SparseKet) -> Result<Complex64> {
        if self.register != other.register {
            return Err(Error::DimensionMismatch(
                "inner product of kets on different registers".into(),
            ));
        }
        Ok(self
            .amplitudes
            .iter()
            .filter_map(|(k, a)| other.amplitudes.get(k).map(|b| a.conj() * b))
            .sum())
    }

    /// Drops every component above `cap` photons, returning the removed weight.
    pub fn truncate_photons(&self, cap: usize) -> (SparseKet, f64) {
        let mut kept = BTreeMap::new();
        let mut removed = 0.0;
        for (k, a) in &self.amplitudes {
            if k.total() > cap {
                removed += a.norm_sqr();
            } else {
                kept.insert(k.clone(), *a);
            }
        }
        (
            SparseKet {
                register: self.register.clone(),
                amplitudes: kept,
            },
            removed,
        )
    }

    fn prune(&mut self) {
        self.amplitudes.retain(|_, a| a.norm() >= PRUNE_THRESHOLD);
    }
}

/// Vacuum on `register`.
pub fn vacuum(register: ModeRegister) -> SparseKet {
    let n = register.len();
    let mut amplitudes = BTreeMap::new();
    amplitudes.insert(OccupationVector::zeros(n), Complex64::new(1.0, 0.0));
    SparseKet {
        register,
        amplitudes,
    }
}

/// Tensor product on the concatenated register; norms multiply.
pub fn tensor(a: &SparseKet, b: &SparseKet) -> Result<SparseKet> {
    let register = a.register.concat(&b.register)?;
    let mut amplitudes = BTreeMap::new();
    for (ka, va) in &a.amplitudes {
        for (kb, vb) in &b.amplitudes {
            let mut occ = ka.0.clone();
            occ.extend_from_slice(&kb.0);
            amplitudes.insert(OccupationVector(occ), va * vb);
        }
    }
    let mut ket = SparseKet {
        register,
        amplitudes,
    };
    ket.prune();
    Ok(ket)
}

/// Projects the modes at `modes` onto `pattern`.
///
/// Returns the outcome probability and the renormalized state of the remaining
/// modes (empty when the probability is zero).
pub fn project_occupation(
    state: &SparseKet,
    modes: &[usize],
    pattern: &[u8],
) -> Result<(f64, SparseKet)> {
    if modes.len() != pattern.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} modes but a pattern of length {}",
            modes.len(),
            pattern.len()
        )));
    }
    let n = state.register.len();
    if let Some(&bad) = modes.iter().find(|&&m| m >= n) {
        return Err(Error::UnknownMode(format!(
            "index {bad} on a {n}-mode register"
        )));
    }
    let mut selected = vec![false; n];
    for &m in modes {
        if selected[m] {
            return Err(Error::DimensionMismatch(format!("mode {m} listed twice")));
        }
        selected[m] = true;
    }
    let remaining: Vec<usize> = (0..n).filter(|&i| !selected[i]).collect();
    let register = if remaining.is_empty() {
        ModeRegister::empty()
    } else {
        ModeRegister::from_labels(
            remaining
                .iter()
                .map(|&i| state.register.labels[i].clone())
                .collect(),
        )?
    };

    let mut amplitudes = BTreeMap::new();
    let mut probability = 0.0;
    for (occ, amp) in &state.amplitudes {
        if modes.iter().zip(pattern).all(|(&m, &p)| occ.0[m] == p) {
            probability += amp.norm_sqr();
            let rest: Vec<u8> = remaining.iter().map(|&i| occ.0[i]).collect();
            amplitudes.insert(OccupationVector(rest), *amp);
        }
    }
    let ket = SparseKet {
        register,
        amplitudes,
    };
    if probability == 0.0 {
        return Ok((0.0, ket));
    }
    Ok((
        probability,
        ket.scaled(Complex64::new(1.0 / probability.sqrt(), 0.0)),
    ))
}

/// Linear substitution of creation operators between two registers.
///
/// `matrix` has one row per output mode and one column per input mode, so
/// column `i` holds the image of `a_i†`. Columns must be orthonormal.
#[derive(Clone, Debug)]
pub struct ModeMap {
    inputs: ModeRegister,
    outputs: ModeRegister,
    matrix: DMatrix<Complex64>,
}

impl ModeMap {
    pub fn new(
        inputs: ModeRegister,
        outputs: ModeRegister,
        matrix: DMatrix<Complex64>,
    ) -> Result<Self> {
        if matrix.nrows() != outputs.len() || matrix.ncols() != inputs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for {} inputs and {} outputs",
                matrix.nrows(),
                matrix.ncols(),
                inputs.len(),
                outputs.len()
            )));
        }
        let deviation = isometry_deviation(&matrix);
        if deviation > ISOMETRY_TOLERANCE {
            return Err(Error::NotIsometric { deviation });
        }
        Ok(ModeMap {
            inputs,
            outputs,
            matrix,
        })
    }

    pub fn identity(register: ModeRegister) -> Self {
        let n = register.len();
        ModeMap {
            inputs: register.clone(),
            outputs: register,
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn inputs(&self) -> &ModeRegister {
        &self.inputs
    }

    pub fn outputs(&self) -> &ModeRegister {
        &self.outputs
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn is_unitary(&self) -> bool {
        self.matrix.is_square() && isometry_deviation(&self.matrix.adjoint()) <= ISOMETRY_TOLERANCE
    }

    /// `next` after `self`.
    pub fn then(&self, next: &ModeMap) -> Result<ModeMap> {
        if self.outputs != next.inputs {
            return Err(Error::DimensionMismatch(
                "composed maps do not share a register".into(),
            ));
        }
        Ok(ModeMap {
            inputs: self.inputs.clone(),
            outputs: next.outputs.clone(),
            matrix: &next.matrix * &self.matrix,
        })
    }

    /// Lifts a local element onto a full register.
    ///
    /// The element is specified on tag-0 labels; it is applied to every tag
    /// that has all of the element's input modes on `register`. Untouched
    /// modes pass through. Outputs of the element take the position of its
    /// first input in the new register.
    pub fn embed(&self, register: &ModeRegister) -> Result<ModeMap> {
        let local_in: Vec<(String, Polarization)> = self
            .inputs
            .labels
            .iter()
            .map(|l| (l.spatial.clone(), l.pol))
            .collect();
        let is_local = |l: &ModeLabel| local_in.iter().any(|(s, p)| *s == l.spatial && *p == l.pol);

        let mut out_labels: Vec<ModeLabel> = Vec::new();
        // (full input index, output column source)
        let mut placed_tags: BTreeSet<u8> = BTreeSet::new();
        for l in &register.labels {
            if is_local(l) {
                if placed_tags.insert(l.tag) {
                    for o in &self.outputs.labels {
                        out_labels.push(o.clone().with_tag(l.tag));
                    }
                }
            } else {
                out_labels.push(l.clone());
            }
        }
        let outputs = ModeRegister::from_labels(out_labels)?;

        let mut matrix = DMatrix::zeros(outputs.len(), register.len());
        for (col, l) in register.labels.iter().enumerate() {
            if is_local(l) {
                let local_col = self
                    .inputs
                    .labels
                    .iter()
                    .position(|x| x.spatial == l.spatial && x.pol == l.pol)
                    .expect("local label");
                for (local_row, o) in self.outputs.labels.iter().enumerate() {
                    let row = outputs
                        .index_of(&o.clone().with_tag(l.tag))
                        .expect("embedded output");
                    matrix[(row, col)] = self.matrix[(local_row, local_col)];
                }
            } else {
                let row = outputs.index_of(l).expect("pass-through label");
                matrix[(row, col)] = Complex64::new(1.0, 0.0);
            }
        }
        // Every tag must carry the complete set of local inputs.
        for tag in &placed_tags {
            for (s, p) in &local_in {
                let l = ModeLabel {
                    spatial: s.clone(),
                    pol: *p,
                    tag: *tag,
                };
                if register.index_of(&l).is_none() {
                    return Err(Error::UnknownMode(format!(
                        "element input {l} missing from register"
                    )));
                }
            }
        }
        ModeMap::new(register.clone(), outputs, matrix)
    }

    /// Pure relabeling into `order`, which must be a permutation of the outputs.
    pub fn reorder_outputs(&self, order: &[ModeLabel]) -> Result<ModeMap> {
        let target = ModeRegister::from_labels(order.to_vec())?;
        if target.len() != self.outputs.len() {
            return Err(Error::DimensionMismatch(
                "reordering must keep every mode".into(),
            ));
        }
        let mut matrix = DMatrix::zeros(target.len(), self.inputs.len());
        for (row, l) in self.outputs.labels.iter().enumerate() {
            let new_row = target
                .index_of(l)
                .ok_or_else(|| Error::UnknownMode(l.to_string()))?;
            matrix.set_row(new_row, &self.matrix.row(row));
        }
        Ok(ModeMap {
            inputs: self.inputs.clone(),
            outputs: target,
            matrix,
        })
    }
}

/// Largest entry of `M† M - I`.
fn isometry_deviation(m: &DMatrix<Complex64>) -> f64 {
    let gram = m.adjoint() * m;
    let n = gram.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Applies a mode substitution to every basis ket and merges amplitudes.
///
/// Each input mode is expanded separately: `(sum_j M_ji b_j†)^n_i` is built by
/// repeated multiplication on a monomial map before the next mode is
/// substituted, which keeps intermediate maps small.
pub fn apply_mode_map(state: &SparseKet, map: &ModeMap) -> Result<SparseKet> {
    if state.register != map.inputs {
        return Err(Error::DimensionMismatch(format!(
            "state register has {} modes, map expects {}",
            state.register.len(),
            map.inputs.len()
        )));
    }
    let n_out = map.outputs.len();
    let columns: Vec<Vec<(usize, Complex64)>> = (0..map.inputs.len())
        .map(|i| {
            (0..n_out)
                .filter_map(|j| {
                    let c = map.matrix[(j, i)];
                    (c.norm() > 0.0).then_some((j, c))
                })
                .collect()
        })
        .collect();

    let mut result: BTreeMap<OccupationVector, Complex64> = BTreeMap::new();
    for (occ, amp) in &state.amplitudes {
        // Coefficients of operator monomials prod_j (b_j†)^m_j acting on vacuum.
        let mut monomials: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
        monomials.insert(vec![0; n_out], amp / occ.sqrt_factorial_product());
        for (i, &n) in occ.0.iter().enumerate() {
            for _ in 0..n {
                let mut next: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
                for (m, c) in &monomials {
                    for &(j, coeff) in &columns[i] {
                        let mut m2 = m.clone();
                        m2[j] += 1;
                        *next.entry(m2).or_default() += c * coeff;
                    }
                }
                monomials = next;
            }
        }
        for (m, c) in monomials {
            let occ_out = OccupationVector(m);
            let value = c * occ_out.sqrt_factorial_product();
            *result.entry(occ_out).or_default() += value;
        }
    }
    let mut ket = SparseKet {
        register: map.outputs.clone(),
        amplitudes: result,
    };
    ket.prune();
    Ok(ket)
}
