//! Optical elements as mode maps, and the heralding circuit built from them.
//!
//! Conventions (fixed once, any other choice differs by a local unitary on the
//! heralded pair):
//! - beam splitter `[[sqrt T, sqrt R], [sqrt R, -sqrt T]]`, real;
//! - PBS transmits H and reflects V with no reflection phase;
//! - half-wave plate at fast-axis angle `theta`: `[[cos 2t, sin 2t], [sin 2t, -cos 2t]]`;
//! - quarter-wave plate `R(-theta) diag(1, i) R(theta)`.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{apply_mode_map, ModeLabel, ModeMap, ModeRegister, Polarization, SparseKet};
use crate::qubit::{c, Pauli, C64};

/// Source spatial modes feeding the two beam splitters.
pub const SOURCE_ARMS: [&str; 2] = ["a1", "a2"];

/// Non-polarizing beam splitter with intensity transmission `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSplitter {
    pub transmission: f64,
}

impl BeamSplitter {
    pub fn new(transmission: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmission) || transmission.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "beam splitter transmission {transmission} outside [0, 1]"
            )));
        }
        Ok(BeamSplitter { transmission })
    }

    pub fn reflectivity(&self) -> f64 {
        1.0 - self.transmission
    }

    /// Two-port matrix: column 0 is the occupied input, column 1 the open port;
    /// row 0 the transmitted and row 1 the reflected output.
    pub fn unitary(&self) -> Matrix2<f64> {
        let t = self.transmission.sqrt();
        let r = self.reflectivity().sqrt();
        Matrix2::new(t, r, r, -t)
    }
}

/// Beam splitter acting on one occupied spatial mode, for both polarizations.
///
/// The open input port only ever carries vacuum, so the element is the
/// isometry from `{input H, input V}` into
/// `{transmitted H, transmitted V, reflected H, reflected V}`.
pub fn beam_splitter_map(
    transmission: f64,
    input: &str,
    transmitted: &str,
    reflected: &str,
) -> Result<ModeMap> {
    let bs = BeamSplitter::new(transmission)?;
    let u = bs.unitary();
    let inputs = pol_pair(input)?;
    let outputs = ModeRegister::new(vec![
        ModeLabel::new(transmitted, Polarization::H),
        ModeLabel::new(transmitted, Polarization::V),
        ModeLabel::new(reflected, Polarization::H),
        ModeLabel::new(reflected, Polarization::V),
    ])?;
    let mut m = DMatrix::zeros(4, 2);
    for p in 0..2 {
        m[(p, p)] = c(u[(0, 0)], 0.0);
        m[(2 + p, p)] = c(u[(1, 0)], 0.0);
    }
    ModeMap::new(inputs, outputs, m)
}

/// Full two-input beam splitter, unitary on
/// `{in1 H, in1 V, in2 H, in2 V} -> {t H, t V, r H, r V}`.
pub fn beam_splitter_two_port(
    transmission: f64,
    inputs: (&str, &str),
    outputs: (&str, &str),
) -> Result<ModeMap> {
    let u = BeamSplitter::new(transmission)?.unitary();
    let in_reg = pol_pair(inputs.0)?.concat(&pol_pair(inputs.1)?)?;
    let out_reg = pol_pair(outputs.0)?.concat(&pol_pair(outputs.1)?)?;
    let mut m = DMatrix::zeros(4, 4);
    for port_in in 0..2 {
        for port_out in 0..2 {
            for p in 0..2 {
                m[(2 * port_out + p, 2 * port_in + p)] = c(u[(port_out, port_in)], 0.0);
            }
        }
    }
    ModeMap::new(in_reg, out_reg, m)
}

pub fn hwp_jones(angle: f64) -> Matrix2<C64> {
    let (s, co) = (2.0 * angle).sin_cos();
    Matrix2::new(c(co, 0.0), c(s, 0.0), c(s, 0.0), c(-co, 0.0))
}

pub fn qwp_jones(angle: f64) -> Matrix2<C64> {
    let (s, co) = angle.sin_cos();
    let rot = Matrix2::new(c(co, 0.0), c(s, 0.0), c(-s, 0.0), c(co, 0.0));
    let retard = Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    rot.transpose() * retard * rot
}

pub fn hwp_map(angle: f64, mode: &str) -> Result<ModeMap> {
    jones_map(&hwp_jones(angle), mode)
}

pub fn qwp_map(angle: f64, mode: &str) -> Result<ModeMap> {
    jones_map(&qwp_jones(angle), mode)
}

/// Polarizing beam splitter as pure routing: H to `transmitted`, V to `reflected`.
pub fn pbs_map(input: &str, transmitted: &str, reflected: &str) -> Result<ModeMap> {
    let outputs = ModeRegister::new(vec![
        ModeLabel::new(transmitted, Polarization::H),
        ModeLabel::new(reflected, Polarization::V),
    ])?;
    ModeMap::new(pol_pair(input)?, outputs, DMatrix::identity(2, 2))
}

/// Jones matrix rotating the `+1` eigenvector of `setting` onto H (and `-1`
/// onto V) in front of an analysis PBS.
pub fn analysis_jones(setting: Pauli) -> Matrix2<C64> {
    analysis_plates(setting)
        .iter()
        .fold(Matrix2::identity(), |acc, e| e.jones() * acc)
}

/// Waveplates realizing a measurement basis, in beam order.
pub fn analysis_plates(setting: Pauli) -> Vec<Plate> {
    match setting {
        Pauli::Z => vec![],
        Pauli::X => vec![Plate::Half(FRAC_PI_8)],
        Pauli::Y => vec![Plate::Quarter(FRAC_PI_4), Plate::Half(0.0)],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Plate {
    Half(f64),
    Quarter(f64),
}

impl Plate {
    pub fn jones(&self) -> Matrix2<C64> {
        match *self {
            Plate::Half(a) => hwp_jones(a),
            Plate::Quarter(a) => qwp_jones(a),
        }
    }
}

fn jones_map(j: &Matrix2<C64>, mode: &str) -> Result<ModeMap> {
    let reg = pol_pair(mode)?;
    let m = DMatrix::from_fn(2, 2, |r, col| j[(r, col)]);
    ModeMap::new(reg.clone(), reg, m)
}

fn pol_pair(spatial: &str) -> Result<ModeRegister> {
    ModeRegister::new(vec![
        ModeLabel::new(spatial, Polarization::H),
        ModeLabel::new(spatial, Polarization::V),
    ])
}

/// One wired element of the circuit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Element {
    BeamSplitter {
        input: String,
        transmitted: String,
        reflected: String,
        transmission: f64,
    },
    Plate {
        mode: String,
        plate: Plate,
    },
    Pbs {
        input: String,
        transmitted: String,
        reflected: String,
    },
}

impl Element {
    pub fn local_map(&self) -> Result<ModeMap> {
        match self {
            Element::BeamSplitter {
                input,
                transmitted,
                reflected,
                transmission,
            } => beam_splitter_map(*transmission, input, transmitted, reflected),
            Element::Plate { mode, plate } => jones_map(&plate.jones(), mode),
            Element::Pbs {
                input,
                transmitted,
                reflected,
            } => pbs_map(input, transmitted, reflected),
        }
    }
}

/// A detection mode with its display name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedMode {
    pub name: String,
    pub label: ModeLabel,
}

/// The heralding setup: two beam splitters, an H/V analyzer on `r1`, a
/// +/- analyzer on `r2`, and setting-dependent analysis on `t1`, `t2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitLayout {
    pub t1: f64,
    pub t2: f64,
    pub settings: (Pauli, Pauli),
    pub elements: Vec<Element>,
    /// r1H, r1V, r2+, r2-.
    pub herald_modes: Vec<NamedMode>,
    /// t1H, t1V, t2H, t2V (port H is the +1 outcome of the arm's setting).
    pub output_modes: Vec<NamedMode>,
}

pub fn build_heralding_circuit(
    t1: f64,
    t2: f64,
    settings: (Pauli, Pauli),
) -> Result<CircuitLayout> {
    BeamSplitter::new(t1)?;
    BeamSplitter::new(t2)?;
    let mut elements = vec![
        Element::BeamSplitter {
            input: "a1".into(),
            transmitted: "t1".into(),
            reflected: "r1".into(),
            transmission: t1,
        },
        Element::BeamSplitter {
            input: "a2".into(),
            transmitted: "t2".into(),
            reflected: "r2".into(),
            transmission: t2,
        },
        Element::Pbs {
            input: "r1".into(),
            transmitted: "r1".into(),
            reflected: "r1".into(),
        },
        Element::Plate {
            mode: "r2".into(),
            plate: Plate::Half(FRAC_PI_8),
        },
        Element::Pbs {
            input: "r2".into(),
            transmitted: "r2".into(),
            reflected: "r2".into(),
        },
    ];
    for (arm, setting) in [("t1", settings.0), ("t2", settings.1)] {
        for plate in analysis_plates(setting) {
            elements.push(Element::Plate {
                mode: arm.into(),
                plate,
            });
        }
        elements.push(Element::Pbs {
            input: arm.into(),
            transmitted: arm.into(),
            reflected: arm.into(),
        });
    }
    let named = |name: &str, spatial: &str, pol| NamedMode {
        name: name.into(),
        label: ModeLabel::new(spatial, pol),
    };
    Ok(CircuitLayout {
        t1,
        t2,
        settings,
        elements,
        herald_modes: vec![
            named("r1H", "r1", Polarization::H),
            named("r1V", "r1", Polarization::V),
            named("r2+", "r2", Polarization::H),
            named("r2-", "r2", Polarization::V),
        ],
        output_modes: vec![
            named("t1H", "t1", Polarization::H),
            named("t1V", "t1", Polarization::V),
            named("t2H", "t2", Polarization::H),
            named("t2V", "t2", Polarization::V),
        ],
    })
}

/// Parses `x|y|z` (case-insensitive) into a basis.
pub fn parse_setting(name: &str) -> Result<Pauli> {
    Pauli::parse(name).ok_or_else(|| Error::InvalidParameter(format!("unknown setting {name:?}")))
}

impl CircuitLayout {
    /// Detection modes in canonical order: herald modes then output modes.
    pub fn detection_order(&self) -> Vec<ModeLabel> {
        self.herald_modes
            .iter()
            .chain(&self.output_modes)
            .map(|m| m.label.clone())
            .collect()
    }

    /// The whole circuit as one map on `register` (which may carry several
    /// internal tags). Outputs are ordered tag-major in detection order.
    pub fn total_map(&self, register: &ModeRegister) -> Result<ModeMap> {
        let mut total = ModeMap::identity(register.clone());
        for e in &self.elements {
            let step = e.local_map()?.embed(total.outputs())?;
            total = total.then(&step)?;
        }
        let order: Vec<ModeLabel> = register
            .tags()
            .into_iter()
            .flat_map(|tag| {
                self.detection_order()
                    .into_iter()
                    .map(move |l| l.with_tag(tag))
            })
            .collect();
        total.reorder_outputs(&order)
    }

    pub fn propagate(&self, state: &SparseKet) -> Result<SparseKet> {
        apply_mode_map(state, &self.total_map(state.register())?)
    }

    pub fn named(&self, name: &str) -> Option<&NamedMode> {
        self.herald_modes
            .iter()
            .chain(&self.output_modes)
            .find(|m| m.name == name)
    }
}
