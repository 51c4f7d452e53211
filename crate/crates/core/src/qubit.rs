//! Two-qubit polarization algebra in the coincidence basis {HH, HV, VH, VV}.

use std::fmt;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for the Hermitian / unit-trace / PSD checks.
pub const DENSITY_TOLERANCE: f64 = 1e-10;

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Single-qubit Pauli observable selecting a measurement basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> Matrix2<C64> {
        match self {
            Pauli::X => Matrix2::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)),
            Pauli::Y => Matrix2::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)),
            Pauli::Z => Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)),
        }
    }

    /// Eigenvectors `[+1, -1]`: |H>,|V>; |+>,|->; |R>,|L> with R = (H + iV)/sqrt2.
    pub fn eigenvectors(self) -> [Vector2<C64>; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Pauli::Z => [
                Vector2::new(c(1.0, 0.0), c(0.0, 0.0)),
                Vector2::new(c(0.0, 0.0), c(1.0, 0.0)),
            ],
            Pauli::X => [
                Vector2::new(c(s, 0.0), c(s, 0.0)),
                Vector2::new(c(s, 0.0), c(-s, 0.0)),
            ],
            Pauli::Y => [
                Vector2::new(c(s, 0.0), c(0.0, s)),
                Vector2::new(c(s, 0.0), c(0.0, -s)),
            ],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Pauli::X => 0,
            Pauli::Y => 1,
            Pauli::Z => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Pauli> {
        match s.trim() {
            "x" | "X" => Some(Pauli::X),
            "y" | "Y" => Some(Pauli::Y),
            "z" | "Z" => Some(Pauli::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pauli::X => write!(f, "x"),
            Pauli::Y => write!(f, "y"),
            Pauli::Z => write!(f, "z"),
        }
    }
}

pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

pub fn kron_vec(a: &Vector2<C64>, b: &Vector2<C64>) -> Vector4<C64> {
    Vector4::from_fn(|i, _| a[i / 2] * b[i % 2])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PhiPlus,
        BellState::PhiMinus,
        BellState::PsiPlus,
        BellState::PsiMinus,
    ];

    pub fn vector(self) -> Vector4<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = c(0.0, 0.0);
        match self {
            BellState::PhiPlus => Vector4::new(c(s, 0.0), z, z, c(s, 0.0)),
            BellState::PhiMinus => Vector4::new(c(s, 0.0), z, z, c(-s, 0.0)),
            BellState::PsiPlus => Vector4::new(z, c(s, 0.0), c(s, 0.0), z),
            BellState::PsiMinus => Vector4::new(z, c(s, 0.0), c(-s, 0.0), z),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BellState::PhiPlus => "phi+",
            BellState::PhiMinus => "phi-",
            BellState::PsiPlus => "psi+",
            BellState::PsiMinus => "psi-",
        }
    }
}

/// 4x4 density matrix in the {HH, HV, VH, VV} coincidence basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitDensityMatrix {
    matrix: Matrix4<C64>,
}

impl TwoQubitDensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: Matrix4<C64>) -> Result<Self> {
        let herm = (matrix - matrix.adjoint()).camax();
        if herm > DENSITY_TOLERANCE {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = matrix.trace();
        if (tr - c(1.0, 0.0)).norm() > DENSITY_TOLERANCE {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        let rho = TwoQubitDensityMatrix { matrix };
        let min_eig = rho.eigenvalues()[0];
        if min_eig < -DENSITY_TOLERANCE {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(rho)
    }

    /// Hermitizes and normalizes `matrix` before validating it. Intended for
    /// results of floating-point pipelines that are physical up to rounding.
    pub fn from_unnormalized(matrix: Matrix4<C64>) -> Result<Self> {
        let h = (matrix + matrix.adjoint()) * c(0.5, 0.0);
        let tr = h.trace().re;
        if !(tr > 0.0) {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        Self::new(h / c(tr, 0.0))
    }

    pub fn pure(state: &Vector4<C64>) -> Result<Self> {
        let n = state.norm_squared();
        if n == 0.0 {
            return Err(Error::InvalidDensityMatrix("zero vector".into()));
        }
        Self::from_unnormalized(state * state.adjoint() / c(n, 0.0))
    }

    pub fn bell(state: BellState) -> Self {
        let v = state.vector();
        TwoQubitDensityMatrix {
            matrix: v * v.adjoint(),
        }
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitDensityMatrix {
            matrix: Matrix4::identity() * c(0.25, 0.0),
        }
    }

    /// `p |phi+><phi+| + (1 - p) I/4`.
    pub fn werner(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("Werner weight {p}")));
        }
        let bell = Self::bell(BellState::PhiPlus).matrix;
        Self::new(bell * c(p, 0.0) + Matrix4::identity() * c((1.0 - p) / 4.0, 0.0))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix4<C64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let eig = self.matrix.symmetric_eigenvalues();
        let mut v = [eig[0], eig[1], eig[2], eig[3]];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn expectation(&self, op: &Matrix4<C64>) -> f64 {
        (self.matrix * op).trace().re
    }

    pub fn overlap(&self, state: &Vector4<C64>) -> f64 {
        (state.adjoint() * self.matrix * state)[(0, 0)].re
    }

    /// Correlation matrix `M_ij = tr(rho sigma_i (x) sigma_j)`.
    pub fn correlation_matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_fn(|i, j| {
            self.expectation(&kron2(&Pauli::ALL[i].matrix(), &Pauli::ALL[j].matrix()))
        })
    }

    /// `(U1 (x) U2) rho (U1 (x) U2)†`.
    pub fn local_rotated(&self, u1: &Matrix2<C64>, u2: &Matrix2<C64>) -> Self {
        let u = kron2(u1, u2);
        TwoQubitDensityMatrix {
            matrix: u * self.matrix * u.adjoint(),
        }
    }

    /// Populations in the four Bell states.
    pub fn bell_populations(&self) -> [(BellState, f64); 4] {
        BellState::ALL.map(|b| (b, self.overlap(&b.vector())))
    }

    pub fn trace_distance(&self, other: &TwoQubitDensityMatrix) -> f64 {
        let diff = self.matrix - other.matrix;
        let eig = diff.symmetric_eigenvalues();
        0.5 * eig.iter().map(|e| e.abs()).sum::<f64>()
    }

    /// Row-major `[re, im]` pairs.
    pub fn to_entries(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                let z = self.matrix[(i, j)];
                out.push([z.re, z.im]);
            }
        }
        out
    }

    pub fn from_entries(entries: &[[f64; 2]]) -> Result<Self> {
        if entries.len() != 16 {
            return Err(Error::InvalidDensityMatrix(format!(
                "expected 16 entries, found {}",
                entries.len()
            )));
        }
        Self::new(Matrix4::from_fn(|i, j| {
            let [re, im] = entries[4 * i + j];
            c(re, im)
        }))
    }
}

/// `exp(-i (theta/2) n.sigma)` for a rotation vector `theta * n`.
pub fn su2_from_rotation_vector(v: [f64; 3]) -> Matrix2<C64> {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta == 0.0 {
        return Matrix2::identity();
    }
    let (s, co) = (0.5 * theta).sin_cos();
    let n = [v[0] / theta, v[1] / theta, v[2] / theta];
    let gen = Pauli::X.matrix() * c(n[0], 0.0)
        + Pauli::Y.matrix() * c(n[1], 0.0)
        + Pauli::Z.matrix() * c(n[2], 0.0);
    Matrix2::identity() * c(co, 0.0) - gen * c(0.0, s)
}

/// Unit quaternion `(w, x, y, z)` as the SU(2) element `w I - i (x X + y Y + z Z)`.
pub fn su2_from_quaternion(q: [f64; 4]) -> Matrix2<C64> {
    Matrix2::identity() * c(q[0], 0.0)
        - (Pauli::X.matrix() * c(q[1], 0.0)
            + Pauli::Y.matrix() * c(q[2], 0.0)
            + Pauli::Z.matrix() * c(q[3], 0.0))
            * c(0.0, 1.0)
}
