//! Measurement instruments and intervention maps on the two-level system.
//!
//! All superoperators here are 4×4 in the column-stacking convention of
//! [`crate::linops`]. Outcomes carry their eigenvalue labels ±1 so that
//! sequential moments need no separate value table.

use num_complex::Complex64;

use crate::error::Error;
use crate::linops::{identity, matvec, sandwich, unvec, vec_op, Matrix};
use crate::model::{sigma_x, sigma_y, sigma_z};

/// Measurement direction on the Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Axis {
    X,
    Y,
    Z,
    Bloch([f64; 3]),
}

impl Axis {
    /// The direction operator n̂·σ (unit-normalized for Bloch vectors).
    pub fn operator(&self) -> Result<Matrix, Error> {
        let n = match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
            Axis::Bloch(v) => *v,
        };
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidParameter(
                "measurement axis must be a nonzero finite Bloch vector".into(),
            ));
        }
        let op = sigma_x() * Complex64::new(n[0] / len, 0.0)
            + sigma_y() * Complex64::new(n[1] / len, 0.0)
            + sigma_z() * Complex64::new(n[2] / len, 0.0);
        Ok(op)
    }

    /// Eigenprojector (1 ± n̂·σ)/2 onto the chosen outcome.
    pub fn projector(&self, sign: f64) -> Result<Matrix, Error> {
        let op = self.operator()?;
        let s = if sign >= 0.0 { 1.0 } else { -1.0 };
        Ok((identity(2) + op * Complex64::new(s, 0.0)) * Complex64::new(0.5, 0.0))
    }
}

/// A measurement with labeled outcomes: one CP map per outcome, the sum
/// trace-preserving.
#[derive(Clone, Debug)]
pub struct Instrument {
    pub outcomes: Vec<f64>,
    pub elements: Vec<Matrix>,
}

impl Instrument {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Sum of the elements: the non-selective channel.
    pub fn total_map(&self) -> Matrix {
        let mut sum = self.elements[0].clone();
        for e in &self.elements[1..] {
            sum = sum + e;
        }
        sum
    }
}

/// Projective update ρ ↦ Π_a ρ Π_a for the two eigenprojectors of the
/// axis operator, outcomes labeled +1, −1.
pub fn lueders_instrument(axis: &Axis) -> Result<Instrument, Error> {
    let mut outcomes = Vec::with_capacity(2);
    let mut elements = Vec::with_capacity(2);
    for sign in [1.0f64, -1.0] {
        let p = axis.projector(sign)?;
        outcomes.push(sign);
        elements.push(sandwich(&p, &p));
    }
    Ok(Instrument { outcomes, elements })
}

/// Non-selective projective channel D[ρ] = Σ_a Π_a ρ Π_a.
pub fn dephasing_map(axis: &Axis) -> Result<Matrix, Error> {
    Ok(lueders_instrument(axis)?.total_map())
}

/// SuperMap of ρ ↦ Aρ.
pub fn left_multiplication(a: &Matrix) -> Matrix {
    crate::linops::left_mul(a)
}

/// A timed sequence of instruments applied to an initial system state.
/// The last step doubles as the readout.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub initial_state: Matrix,
    pub steps: Vec<(f64, Instrument)>,
}

impl Protocol {
    pub fn validate(&self) -> Result<(), Error> {
        let rho = &self.initial_state;
        if rho.nrows() != 2 || rho.ncols() != 2 {
            return Err(Error::DimensionMismatch(
                "protocol initial state must be 2x2".into(),
            ));
        }
        let tr = rho.diag().sum();
        if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "initial state trace {tr} is not 1"
            )));
        }
        let herm_gap = crate::linops::max_abs(&(rho - &crate::linops::dagger(rho)));
        if herm_gap > 1e-12 {
            return Err(Error::InvalidParameter(
                "initial state is not Hermitian".into(),
            ));
        }
        let (vals, _) = crate::linops::eigh(rho)?;
        if vals.iter().any(|&v| v < -1e-12) {
            return Err(Error::InvalidParameter(
                "initial state has a negative eigenvalue".into(),
            ));
        }
        let mut prev = -f64::EPSILON;
        for (t, inst) in &self.steps {
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "protocol time {t} must be finite and non-negative"
                )));
            }
            if *t <= prev {
                return Err(Error::InvalidParameter(
                    "protocol times must be strictly increasing".into(),
                ));
            }
            prev = *t;
            if inst.is_empty() || inst.outcomes.len() != inst.elements.len() {
                return Err(Error::InvalidParameter(
                    "instrument outcome and element counts differ".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A protocol with the measurement times left open, for sweeps that
/// slide the same instrument sequence across a time grid.
#[derive(Clone, Debug)]
pub struct ProtocolTemplate {
    pub initial_state: Matrix,
    pub instruments: Vec<Instrument>,
}

impl ProtocolTemplate {
    pub fn at_times(&self, times: &[f64]) -> Result<Protocol, Error> {
        if times.len() != self.instruments.len() {
            return Err(Error::InvalidParameter(format!(
                "template has {} instruments but {} times were given",
                self.instruments.len(),
                times.len()
            )));
        }
        let protocol = Protocol {
            initial_state: self.initial_state.clone(),
            steps: times
                .iter()
                .copied()
                .zip(self.instruments.iter().cloned())
                .collect(),
        };
        protocol.validate()?;
        Ok(protocol)
    }
}

/// Probability weight Tr[Φ[ρ]] of a (sub-normalized) map applied to a state.
pub fn outcome_weight(element: &Matrix, rho: &Matrix) -> Result<f64, Error> {
    let d = rho.nrows();
    let out = unvec(&matvec(element, &vec_op(rho)), d)?;
    let tr: Complex64 = out.diag().sum();
    Ok(tr.re)
}
