//! Two-qubit polarization tomography from coincidence counts.
//!
//! Only the four one-photon-per-arm patterns of each setting enter the fit.
//! The per-setting intensity is profiled out, which leaves the multinomial
//! likelihood `L = sum n_sa log p_sa(rho)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubit::{
    c, kron2, kron_vec, su2_from_quaternion, BellState, Pauli, TwoQubitDensityMatrix, C64,
};

/// `sigma_i` on arm 1 and `sigma_j` on arm 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub first: Pauli,
    pub second: Pauli,
}

impl MeasurementSetting {
    pub fn new(first: Pauli, second: Pauli) -> Self {
        MeasurementSetting { first, second }
    }

    /// All nine settings in the order the count tables list them.
    pub fn all() -> [MeasurementSetting; 9] {
        use Pauli::*;
        [
            (X, X),
            (Y, Y),
            (Z, Z),
            (X, Z),
            (X, Y),
            (Z, Y),
            (Z, X),
            (Y, X),
            (Y, Z),
        ]
        .map(|(a, b)| MeasurementSetting::new(a, b))
    }

    /// Product eigenvectors for outcomes `(+,+), (+,-), (-,+), (-,-)`.
    pub fn outcome_vectors(&self) -> [Vector4<C64>; 4] {
        let a = self.first.eigenvectors();
        let b = self.second.eigenvectors();
        [
            kron_vec(&a[0], &b[0]),
            kron_vec(&a[0], &b[1]),
            kron_vec(&a[1], &b[0]),
            kron_vec(&a[1], &b[1]),
        ]
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.first, self.second)
    }
}

/// Click pattern `(n1H, n1V, n2H, n2V)` of a coincidence outcome index.
pub const COINCIDENCE_PATTERNS: [[u8; 4]; 4] =
    [[1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1]];

/// Largest per-mode photon number accepted in a count table.
pub const MAX_PATTERN_VALUE: u8 = 8;

pub fn coincidence_index(pattern: &[u8; 4]) -> Option<usize> {
    COINCIDENCE_PATTERNS.iter().position(|p| p == pattern)
}

/// Counts per setting and click pattern.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTable {
    /// Free-form label, e.g. the splitter ratio `30_70`.
    pub label: String,
    counts: BTreeMap<(MeasurementSetting, [u8; 4]), u64>,
}

pub const COUNT_HEADER: [&str; 8] = [
    "ratio",
    "setting_1",
    "setting_2",
    "n1H",
    "n1V",
    "n2H",
    "n2V",
    "count",
];

impl CountTable {
    pub fn new(label: impl Into<String>) -> Self {
        CountTable {
            label: label.into(),
            counts: BTreeMap::new(),
        }
    }

    /// Adds a row; a pattern may appear only once per setting.
    pub fn insert(
        &mut self,
        setting: MeasurementSetting,
        pattern: [u8; 4],
        count: u64,
    ) -> Result<()> {
        if pattern.iter().any(|&n| n > MAX_PATTERN_VALUE) {
            return Err(Error::InvalidParameter(format!(
                "pattern {pattern:?} out of range"
            )));
        }
        if self.counts.insert((setting, pattern), count).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate entry for {setting} {pattern:?}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, setting: MeasurementSetting, pattern: [u8; 4]) -> Option<u64> {
        self.counts.get(&(setting, pattern)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MeasurementSetting, [u8; 4], u64)> + '_ {
        self.counts.iter().map(|(&(s, p), &n)| (s, p, n))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn settings(&self) -> BTreeSet<MeasurementSetting> {
        self.counts.keys().map(|(s, _)| *s).collect()
    }

    /// Counts of the four coincidence outcomes of `setting`.
    pub fn coincidences(&self, setting: MeasurementSetting) -> [u64; 4] {
        COINCIDENCE_PATTERNS.map(|p| self.get(setting, p).unwrap_or(0))
    }

    pub fn total_coincidences(&self) -> u64 {
        self.settings()
            .into_iter()
            .map(|s| self.coincidences(s).iter().sum::<u64>())
            .sum()
    }

    /// Same table with every count replaced by `f(count)`.
    pub fn map_counts(&self, mut f: impl FnMut(u64) -> u64) -> CountTable {
        CountTable {
            label: self.label.clone(),
            counts: self.counts.iter().map(|(k, &n)| (*k, f(n))).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(COUNT_HEADER)?;
        for setting in MeasurementSetting::all() {
            for ((s, p), n) in self
                .counts
                .range((setting, [0; 4])..=(setting, [u8::MAX; 4]))
            {
                debug_assert_eq!(*s, setting);
                w.write_record([
                    self.label.clone(),
                    s.first.to_string(),
                    s.second.to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                    p[2].to_string(),
                    p[3].to_string(),
                    n.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a count CSV, rejecting malformed rows, negative counts, unknown
/// settings and duplicate keys.
pub fn read_counts_csv<R: Read>(reader: R) -> Result<CountTable> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput("count table has no header".into()));
    }
    if headers.iter().collect::<Vec<_>>() != COUNT_HEADER {
        return Err(Error::MalformedData {
            line: 1,
            message: format!("expected header {}", COUNT_HEADER.join(",")),
        });
    }
    let mut table: Option<CountTable> = None;
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| Error::MalformedData { line, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != COUNT_HEADER.len() {
            return Err(bad(format!("{} fields", rec.len())));
        }
        let pauli = |s: &str| Pauli::parse(s).ok_or_else(|| bad(format!("unknown setting {s:?}")));
        let setting = MeasurementSetting::new(pauli(&rec[1])?, pauli(&rec[2])?);
        let mut pattern = [0u8; 4];
        for (j, slot) in pattern.iter_mut().enumerate() {
            *slot = rec[3 + j]
                .parse()
                .ok()
                .filter(|&v| v <= MAX_PATTERN_VALUE)
                .ok_or_else(|| {
                    bad(format!(
                        "invalid {} value {:?}",
                        COUNT_HEADER[3 + j],
                        &rec[3 + j]
                    ))
                })?;
        }
        let count: i64 = rec[7]
            .parse()
            .map_err(|_| bad(format!("invalid count {:?}", &rec[7])))?;
        if count < 0 {
            return Err(bad(format!("negative count {count}")));
        }
        let t = table.get_or_insert_with(|| CountTable::new(&rec[0]));
        if t.label != rec[0] {
            return Err(bad(format!("mixed ratios {:?} and {:?}", t.label, &rec[0])));
        }
        t.insert(setting, pattern, count as u64)
            .map_err(|e| bad(e.to_string()))?;
    }
    table.ok_or_else(|| Error::EmptyInput("count table has no rows".into()))
}

pub fn ingest_counts(path: impl AsRef<Path>) -> Result<CountTable> {
    read_counts_csv(std::fs::File::open(path)?)
}

/// Outcome probabilities `(+,+), (+,-), (-,+), (-,-)` of `setting`.
pub fn expected_coincidences(rho: &TwoQubitDensityMatrix, setting: MeasurementSetting) -> [f64; 4] {
    setting.outcome_vectors().map(|e| rho.overlap(&e).max(0.0))
}

/// Multinomial coincidence counts, one ChaCha stream per setting.
pub fn simulate_counts(
    rho: &TwoQubitDensityMatrix,
    settings: &[MeasurementSetting],
    events_per_setting: u64,
    seed: u64,
) -> Result<CountTable> {
    if events_per_setting == 0 {
        return Err(Error::InvalidParameter(
            "events_per_setting must be >= 1".into(),
        ));
    }
    let mut table = CountTable::new("simulated");
    for (k, &setting) in settings.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let probs = expected_coincidences(rho, setting);
        let draws = multinomial(&mut rng, events_per_setting, &probs)?;
        for (pattern, n) in COINCIDENCE_PATTERNS.iter().zip(draws) {
            table.insert(setting, *pattern, n)?;
        }
    }
    Ok(table)
}

/// Multinomial draw as a chain of conditional binomials.
fn multinomial(rng: &mut ChaCha20Rng, n: u64, probs: &[f64]) -> Result<Vec<u64>> {
    let total: f64 = probs.iter().sum();
    let mut remaining = n;
    let mut mass = total;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        let draw = if i + 1 == probs.len() {
            remaining
        } else if remaining == 0 || mass <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                .sample(rng)
        };
        out.push(draw);
        remaining -= draw;
        mass -= p;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step improves L by less than this, relative to |L|.
    pub tolerance: f64,
    /// Initial dilution of the R rho R step.
    pub initial_step: f64,
    /// Weight of I/4 mixed into the starting point so that no outcome starts
    /// at zero probability.
    pub start_mixing: f64,
    pub record_trace: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iterations: 100_000,
            tolerance: 1e-10,
            initial_step: 1.0,
            start_mixing: 1e-3,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub rho: TwoQubitDensityMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood after every accepted step, when requested.
    pub trace: Vec<f64>,
}

/// Coincidence data flattened into (projector vector, count) pairs.
struct Observations {
    entries: Vec<(Vector4<C64>, f64)>,
    total: f64,
}

impl Observations {
    fn from_table(counts: &CountTable) -> Result<Self> {
        let present = counts.settings();
        if let Some(missing) = MeasurementSetting::all()
            .iter()
            .find(|s| !present.contains(s))
        {
            return Err(Error::InvalidParameter(format!(
                "count table lacks setting {missing}"
            )));
        }
        let mut entries = Vec::with_capacity(36);
        for s in MeasurementSetting::all() {
            for (e, n) in s.outcome_vectors().into_iter().zip(counts.coincidences(s)) {
                entries.push((e, n as f64));
            }
        }
        let total: f64 = entries.iter().map(|(_, n)| n).sum();
        if total == 0.0 {
            return Err(Error::ZeroProbability("no coincidence counts".into()));
        }
        Ok(Observations { entries, total })
    }

    fn log_likelihood(&self, rho: &Matrix4<C64>) -> f64 {
        self.entries
            .iter()
            .filter(|(_, n)| *n > 0.0)
            .map(|(e, n)| n * prob(rho, e).ln())
            .sum()
    }

    /// `R = (1/N) sum (n / p) |e><e|`; equals I at the maximum.
    fn r_operator(&self, rho: &Matrix4<C64>) -> Matrix4<C64> {
        let mut r = Matrix4::zeros();
        for (e, n) in self.entries.iter().filter(|(_, n)| *n > 0.0) {
            r += e * e.adjoint() * c(n / prob(rho, e), 0.0);
        }
        r / c(self.total, 0.0)
    }

    /// Linear inversion from correlations, projected onto the PSD cone.
    fn linear_inversion(&self) -> Matrix4<C64> {
        let mut sums = [[0.0f64; 4]; 4];
        let mut norms = [[0.0f64; 4]; 4];
        let signs = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        for (k, s) in MeasurementSetting::all().iter().enumerate() {
            let block = &self.entries[4 * k..4 * k + 4];
            let n: f64 = block.iter().map(|(_, n)| n).sum();
            if n == 0.0 {
                continue;
            }
            let (i, j) = (s.first.index() + 1, s.second.index() + 1);
            let mut add = |a: usize, b: usize, v: f64| {
                sums[a][b] += v;
                norms[a][b] += n;
            };
            let corr: f64 = block
                .iter()
                .zip(signs)
                .map(|((_, m), sg)| m * sg[0] * sg[1])
                .sum();
            let first: f64 = block.iter().zip(signs).map(|((_, m), sg)| m * sg[0]).sum();
            let second: f64 = block.iter().zip(signs).map(|((_, m), sg)| m * sg[1]).sum();
            add(i, j, corr);
            add(i, 0, first);
            add(0, j, second);
        }
        let paulis = [
            nalgebra::Matrix2::identity(),
            Pauli::X.matrix(),
            Pauli::Y.matrix(),
            Pauli::Z.matrix(),
        ];
        let mut rho = kron2(&paulis[0], &paulis[0]);
        for a in 0..4 {
            for b in 0..4 {
                if (a, b) != (0, 0) && norms[a][b] > 0.0 {
                    rho += kron2(&paulis[a], &paulis[b]) * c(sums[a][b] / norms[a][b], 0.0);
                }
            }
        }
        project_psd(&(rho / c(4.0, 0.0)))
    }
}

fn prob(rho: &Matrix4<C64>, e: &Vector4<C64>) -> f64 {
    (e.adjoint() * rho * e)[(0, 0)].re.max(f64::MIN_POSITIVE)
}

/// Nearest PSD matrix with unit trace (negative eigenvalues clipped).
fn project_psd(m: &Matrix4<C64>) -> Matrix4<C64> {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut out = Matrix4::zeros();
    for k in 0..4 {
        let lambda = eig.eigenvalues[k].max(0.0);
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * c(lambda, 0.0);
    }
    let tr = out.trace().re;
    if tr > 0.0 {
        out / c(tr, 0.0)
    } else {
        Matrix4::identity() / c(4.0, 0.0)
    }
}

fn normalized(m: Matrix4<C64>) -> Matrix4<C64> {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let tr = h.trace().re;
    h / c(tr, 0.0)
}

/// Maximum-likelihood density matrix from the coincidence counts.
///
/// Diluted `R rho R` ascent: with `A = I + eps R` the update
/// `rho -> A rho A / tr` keeps `rho = T†T` positive. `eps` doubles after an
/// accepted step and halves after a rejected one, so L never decreases.
pub fn mle_reconstruct(counts: &CountTable, options: &MleOptions) -> Result<MleResult> {
    let obs = Observations::from_table(counts)?;
    let start = obs.linear_inversion();
    let mix = options.start_mixing;
    let mut rho = start * c(1.0 - mix, 0.0) + Matrix4::identity() * c(mix / 4.0, 0.0);
    let mut ll = obs.log_likelihood(&rho);
    let mut eps = options.initial_step;
    let mut trace = Vec::new();
    if options.record_trace {
        trace.push(ll);
    }
    let mut last_improvement = f64::INFINITY;
    for iteration in 1..=options.max_iterations {
        let r = obs.r_operator(&rho);
        loop {
            let a = Matrix4::identity() + r * c(eps, 0.0);
            let candidate = normalized(a * rho * a);
            let cand_ll = obs.log_likelihood(&candidate);
            if cand_ll >= ll {
                last_improvement = (cand_ll - ll) / ll.abs().max(1.0);
                rho = candidate;
                ll = cand_ll;
                eps = (eps * 2.0).min(1e6);
                break;
            }
            eps *= 0.5;
            if eps < 1e-12 {
                // no ascent direction left at working precision
                last_improvement = 0.0;
                break;
            }
        }
        if options.record_trace {
            trace.push(ll);
        }
        if last_improvement < options.tolerance {
            return Ok(MleResult {
                rho: TwoQubitDensityMatrix::from_unnormalized(rho)?,
                log_likelihood: ll,
                iterations: iteration,
                trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        last_improvement,
    })
}

/// Best fidelity to phi+ over local unitaries, with the maximizing pair.
#[derive(Clone, Debug)]
pub struct LocalOptimum {
    pub fidelity: f64,
    pub u1: nalgebra::Matrix2<C64>,
    pub u2: nalgebra::Matrix2<C64>,
}

/// The 24 rotations of the cube as unit quaternions (one of each +/- pair).
pub fn cube_rotation_starts() -> Vec<[f64; 4]> {
    let h = 0.5;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = vec![
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    for sx in [h, -h] {
        for sy in [h, -h] {
            for sz in [h, -h] {
                out.push([h, sx, sy, sz]);
            }
        }
    }
    for i in 0..4 {
        for j in (i + 1)..4 {
            for sign in [s, -s] {
                let mut q = [0.0; 4];
                q[i] = s;
                q[j] = sign;
                out.push(q);
            }
        }
    }
    out
}

/// Maximizes `<phi+| (U1 (x) U2) rho (U1 (x) U2)† |phi+>`.
///
/// `(A (x) B)|phi+> = (A B^T (x) I)|phi+>`, so only `U1` is searched (with
/// `U2 = I`). Over SU(2) the objective is the quadratic form `q^T M q` of the
/// quaternion `q`; each of the 24 starts is refined by steepest ascent on the
/// unit sphere with an exact line search along each great circle.
pub fn optimize_local_fidelity(rho: &TwoQubitDensityMatrix) -> LocalOptimum {
    let m = quaternion_form(rho);
    let objective = |q: &Vector4<f64>| (q.transpose() * m * q)[(0, 0)];
    let mut best = (f64::NEG_INFINITY, Vector4::new(1.0, 0.0, 0.0, 0.0));
    for start in cube_rotation_starts() {
        let mut q = Vector4::from(start);
        let mut f = objective(&q);
        for _ in 0..1_000 {
            let mq = m * q;
            let tangent = mq - q * q.dot(&mq);
            let norm = tangent.norm();
            if norm < 1e-14 {
                break;
            }
            // exact maximum on the great circle through q along the gradient
            let d = tangent / norm;
            let (a, b, cc) = (f, d.dot(&mq), objective(&d));
            let theta = 0.5 * (2.0 * b).atan2(a - cc);
            let next = (q * theta.cos() + d * theta.sin()).normalize();
            let value = objective(&next);
            if value <= f + 1e-15 {
                if value > f {
                    q = next;
                    f = value;
                }
                break;
            }
            q = next;
            f = value;
        }
        if f > best.0 {
            best = (f, q);
        }
    }
    let q = best.1;
    LocalOptimum {
        fidelity: best.0.clamp(0.0, 1.0),
        u1: su2_from_quaternion([q[0], q[1], q[2], q[3]]),
        u2: nalgebra::Matrix2::identity(),
    }
}

/// Real symmetric `M` with fidelity `q^T M q` for `U1 = w I - i(xX + yY + zZ)`.
fn quaternion_form(rho: &TwoQubitDensityMatrix) -> nalgebra::Matrix4<f64> {
    let phi = BellState::PhiPlus.vector();
    let i2 = nalgebra::Matrix2::<C64>::identity();
    let basis = [
        i2,
        Pauli::X.matrix() * c(0.0, -1.0),
        Pauli::Y.matrix() * c(0.0, -1.0),
        Pauli::Z.matrix() * c(0.0, -1.0),
    ];
    let bra: Vec<_> = basis
        .iter()
        .map(|b| (kron2(b, &i2).adjoint() * phi).adjoint())
        .collect();
    let ket: Vec<_> = basis
        .iter()
        .map(|b| kron2(b, &i2).adjoint() * phi)
        .collect();
    nalgebra::Matrix4::from_fn(|a, b| (bra[a] * rho.matrix() * ket[b])[(0, 0)].re)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    /// Every count redrawn from a Poisson distribution with that mean.
    #[default]
    Poisson,
    /// Counts kept fixed; isolates optimizer determinism.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
    pub resampling: Resampling,
    pub mle: MleOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    /// One entry per functional, in the order given.
    pub stats: Vec<McStat>,
    pub successes: usize,
    pub failures: usize,
}

pub type Functional<'a> = &'a (dyn Fn(&TwoQubitDensityMatrix) -> f64 + Sync);

/// Mean and sample standard deviation of each functional over resampled
/// reconstructions. Sample `i` draws from ChaCha stream `i` of `seed`, so the
/// result does not depend on the thread count.
pub fn monte_carlo_errors(
    counts: &CountTable,
    options: &McOptions,
    functionals: &[Functional<'_>],
) -> Result<McSummary> {
    if options.samples < 2 {
        return Err(Error::InvalidParameter(
            "at least two Monte Carlo samples required".into(),
        ));
    }
    let samples: Vec<Option<Vec<f64>>> = (0..options.samples)
        .into_par_iter()
        .map(|i| {
            let table = match options.resampling {
                Resampling::None => counts.clone(),
                Resampling::Poisson => {
                    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
                    rng.set_stream(i as u64);
                    counts.map_counts(|n| {
                        if n == 0 {
                            0
                        } else {
                            Poisson::new(n as f64)
                                .map(|d| d.sample(&mut rng) as u64)
                                .unwrap_or(n)
                        }
                    })
                }
            };
            mle_reconstruct(&table, &options.mle)
                .ok()
                .map(|r| functionals.iter().map(|f| f(&r.rho)).collect())
        })
        .collect();
    let ok: Vec<&Vec<f64>> = samples.iter().flatten().collect();
    let failures = samples.len() - ok.len();
    if ok.len() < 2 {
        return Err(Error::ZeroProbability(format!(
            "{failures} of {} Monte Carlo reconstructions failed",
            samples.len()
        )));
    }
    let n = ok.len() as f64;
    let stats = (0..functionals.len())
        .map(|k| {
            let mean = ok.iter().map(|v| v[k]).sum::<f64>() / n;
            let var = ok.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            McStat {
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(McSummary {
        stats,
        successes: ok.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_settings() -> Vec<MeasurementSetting> {
        MeasurementSetting::all().to_vec()
    }

    #[test]
    fn nine_distinct_settings() {
        let s: BTreeSet<_> = MeasurementSetting::all().into_iter().collect();
        assert_eq!(s.len(), 9);
    }

    #[test]
    fn bell_and_mixed_outcomes() {
        let phi = TwoQubitDensityMatrix::bell(BellState::PhiPlus);
        for s in [
            MeasurementSetting::new(Pauli::Z, Pauli::Z),
            MeasurementSetting::new(Pauli::X, Pauli::X),
        ] {
            let p = expected_coincidences(&phi, s);
            for (a, b) in p.iter().zip([0.5, 0.0, 0.0, 0.5]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // phi+ is anticorrelated in y
        let p = expected_coincidences(&phi, MeasurementSetting::new(Pauli::Y, Pauli::Y));
        assert!((p[1] - 0.5).abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
        let mixed = TwoQubitDensityMatrix::maximally_mixed();
        for s in all_settings() {
            for p in expected_coincidences(&mixed, s) {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulation_is_seeded() {
        let rho = TwoQubitDensityMatrix::maximally_mixed();
        let a = simulate_counts(&rho, &all_settings(), 1000, 3).unwrap();
        let b = simulate_counts(&rho, &all_settings(), 1000, 3).unwrap();
        let c = simulate_counts(&rho, &all_settings(), 1000, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for s in all_settings() {
            assert_eq!(a.coincidences(s).iter().sum::<u64>(), 1000);
        }
    }

    #[test]
    fn large_sample_statistics() {
        let phi = TwoQubitDensityMatrix::bell(BellState::PhiPlus);
        let zz = MeasurementSetting::new(Pauli::Z, Pauli::Z);
        let t = simulate_counts(&phi, &[zz], 1_000_000, 11).unwrap();
        let [hh, hv, vh, vv] = t.coincidences(zz);
        assert_eq!(hv + vh, 0);
        // 3 sigma of a binomial(1e6, 1/2) is 1500
        assert!((hh as f64 - 5e5).abs() < 1500.0);
        assert_eq!(hh + vv, 1_000_000);
    }

    #[test]
    fn zero_events_rejected() {
        let rho = TwoQubitDensityMatrix::maximally_mixed();
        assert!(simulate_counts(&rho, &all_settings(), 0, 1).is_err());
    }

    #[test]
    fn csv_validation() {
        let header = COUNT_HEADER.join(",");
        assert!(matches!(
            read_counts_csv("".as_bytes()),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            read_counts_csv(format!("{header}\n").as_bytes()),
            Err(Error::EmptyInput(_))
        ));
        let neg = format!("{header}\nr,x,x,1,0,1,0,-3\n");
        assert!(matches!(
            read_counts_csv(neg.as_bytes()),
            Err(Error::MalformedData { line: 2, .. })
        ));
        let unknown = format!("{header}\nr,w,x,1,0,1,0,3\n");
        assert!(read_counts_csv(unknown.as_bytes()).is_err());
        let dup = format!("{header}\nr,x,x,1,0,1,0,3\nr,x,x,1,0,1,0,4\n");
        assert!(matches!(
            read_counts_csv(dup.as_bytes()),
            Err(Error::MalformedData { line: 3, .. })
        ));
        let ok = format!("{header}\nr,x,y,1,0,0,1,5\n");
        let t = read_counts_csv(ok.as_bytes()).unwrap();
        assert_eq!(
            t.get(MeasurementSetting::new(Pauli::X, Pauli::Y), [1, 0, 0, 1]),
            Some(5)
        );
    }

    #[test]
    fn csv_roundtrip() {
        let rho = TwoQubitDensityMatrix::werner(0.6).unwrap();
        let t = simulate_counts(&rho, &all_settings(), 500, 9).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(read_counts_csv(&buf[..]).unwrap(), t);
    }

    #[test]
    fn mle_recovers_bell_state() {
        let phi = TwoQubitDensityMatrix::bell(BellState::PhiPlus);
        let t = simulate_counts(&phi, &all_settings(), 100_000, 5).unwrap();
        let r = mle_reconstruct(&t, &MleOptions::default()).unwrap();
        assert!(r.rho.overlap(&BellState::PhiPlus.vector()) >= 0.995);
    }

    #[test]
    fn mle_requires_counts() {
        let rho = TwoQubitDensityMatrix::maximally_mixed();
        let t = simulate_counts(&rho, &all_settings(), 10, 5)
            .unwrap()
            .map_counts(|_| 0);
        assert!(matches!(
            mle_reconstruct(&t, &MleOptions::default()),
            Err(Error::ZeroProbability(_))
        ));
        let partial = simulate_counts(&rho, &all_settings()[..8], 10, 5).unwrap();
        assert!(mle_reconstruct(&partial, &MleOptions::default()).is_err());
    }

    #[test]
    fn cube_starts_are_distinct_unit_quaternions() {
        let starts = cube_rotation_starts();
        assert_eq!(starts.len(), 24);
        for (i, a) in starts.iter().enumerate() {
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            for b in &starts[i + 1..] {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!(dot.abs() < 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn local_optimum_reaches_other_bell_states() {
        for b in BellState::ALL {
            let rho = TwoQubitDensityMatrix::bell(b);
            let opt = optimize_local_fidelity(&rho);
            assert!((opt.fidelity - 1.0).abs() < 1e-9, "{}", b.name());
            let rotated = rho.local_rotated(&opt.u1, &opt.u2);
            assert!((rotated.overlap(&BellState::PhiPlus.vector()) - opt.fidelity).abs() < 1e-9);
        }
    }

    #[test]
    fn monte_carlo_without_resampling_has_no_spread() {
        let rho = TwoQubitDensityMatrix::werner(0.7).unwrap();
        let t = simulate_counts(&rho, &all_settings(), 2000, 1).unwrap();
        let opts = McOptions {
            samples: 4,
            seed: 1,
            resampling: Resampling::None,
            mle: MleOptions::default(),
        };
        let trace = |r: &TwoQubitDensityMatrix| r.trace();
        let fid = |r: &TwoQubitDensityMatrix| r.overlap(&BellState::PhiPlus.vector());
        let s = monte_carlo_errors(&t, &opts, &[&trace, &fid]).unwrap();
        assert!((s.stats[0].mean - 1.0).abs() < 1e-12 && s.stats[0].std < 1e-12);
        assert!(s.stats[1].std == 0.0);
        assert_eq!(s.failures, 0);
    }
}
