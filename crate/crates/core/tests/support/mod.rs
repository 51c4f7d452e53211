//! Dense creation-operator oracle for sparse mode-map evolution, shared by
//! the core oracle tests and the acceptance target.
#![allow(dead_code)]

use heraldsim_core::fock::{
    apply_mode_map, ModeLabel, ModeMap, ModeRegister, OccupationVector, Polarization, SparseKet,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn register(prefix: &str, n: usize) -> ModeRegister {
    ModeRegister::new(
        (0..n)
            .map(|i| ModeLabel::new(format!("{prefix}{i}"), Polarization::H))
            .collect(),
    )
    .unwrap()
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-like isometry (`rows >= cols`) from the QR factor of a Gaussian matrix.
pub fn random_isometry(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(rows, rows, |_, _| gaussian(rng));
    let q = g.qr().q();
    q.columns(0, cols).into_owned()
}

pub fn random_ket(rng: &mut ChaCha8Rng, reg: &ModeRegister, max_photons: usize) -> SparseKet {
    let terms = rng.random_range(1..=4);
    let mut amps = Vec::new();
    for _ in 0..terms {
        let mut occ = vec![0u8; reg.len()];
        let n = rng.random_range(0..=max_photons);
        for _ in 0..n {
            occ[rng.random_range(0..reg.len())] += 1;
        }
        amps.push((OccupationVector::new(occ), gaussian(rng)));
    }
    SparseKet::from_amplitudes(reg.clone(), amps)
        .unwrap()
        .normalized()
}

fn factorial(n: u8) -> f64 {
    (1..=u32::from(n)).map(f64::from).product()
}

/// Dense evolution: `prod_i (sum_j U_ji b_j†)^{n_i} / sqrt(n_i!) |0>`.
pub fn dense_evolve(
    ket: &SparseKet,
    u: &DMatrix<Complex64>,
    cutoff: usize,
) -> Vec<(Vec<u8>, Complex64)> {
    let m = u.nrows();
    let base = cutoff + 1;
    let dim = base.pow(m as u32);
    let digits = |mut idx: usize| {
        let mut d = vec![0u8; m];
        for slot in d.iter_mut().rev() {
            *slot = (idx % base) as u8;
            idx /= base;
        }
        d
    };
    let index = |d: &[u8]| d.iter().fold(0usize, |acc, &x| acc * base + x as usize);
    let creation: Vec<DMatrix<Complex64>> = (0..m)
        .map(|j| {
            let mut b = DMatrix::zeros(dim, dim);
            for col in 0..dim {
                let mut d = digits(col);
                if (d[j] as usize) < cutoff {
                    let amp = (f64::from(d[j]) + 1.0).sqrt();
                    d[j] += 1;
                    b[(index(&d), col)] = Complex64::new(amp, 0.0);
                }
            }
            b
        })
        .collect();
    let images: Vec<DMatrix<Complex64>> = (0..u.ncols())
        .map(|i| {
            let mut a = DMatrix::zeros(dim, dim);
            for j in 0..m {
                a += &creation[j] * u[(j, i)];
            }
            a
        })
        .collect();
    let mut out = nalgebra::DVector::<Complex64>::zeros(dim);
    for (occ, amp) in ket.iter() {
        let mut v = nalgebra::DVector::zeros(dim);
        v[0] = *amp;
        for (i, &n) in occ.counts().iter().enumerate() {
            for _ in 0..n {
                v = &images[i] * v;
            }
            v /= Complex64::new(factorial(n).sqrt(), 0.0);
        }
        out += v;
    }
    (0..dim)
        .filter(|&k| out[k].norm() > 1e-13)
        .map(|k| (digits(k), out[k]))
        .collect()
}

/// Random cases on at most 3 modes and 3 photons, one in four an isometry
/// into one extra mode; returns the first disagreement beyond `tol`.
pub fn compare_random_cases(seed: u64, cases: usize, tol: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let m_in = rng.random_range(1..=3);
        let m_out = if m_in < 3 && case % 4 == 0 {
            m_in + 1
        } else {
            m_in
        };
        let u = random_isometry(&mut rng, m_out, m_in);
        let inputs = register("a", m_in);
        let map = ModeMap::new(inputs.clone(), register("b", m_out), u.clone())
            .map_err(|e| e.to_string())?;
        let ket = random_ket(&mut rng, &inputs, 3);
        let sparse = apply_mode_map(&ket, &map).map_err(|e| e.to_string())?;
        let dense = dense_evolve(&ket, &u, 3);
        for (occ, amp) in &dense {
            let got = sparse.amplitude(occ);
            if (got - amp).norm() >= tol {
                return Err(format!("case {case}: {occ:?} {got} vs {amp}"));
            }
        }
        for (occ, amp) in sparse.iter() {
            if amp.norm() > tol && !dense.iter().any(|(d, _)| d.as_slice() == occ.counts()) {
                return Err(format!("case {case}: spurious {occ:?}"));
            }
        }
    }
    Ok(())
}
