//! Spin plus damped-mode model: Hamiltonian, Lindblad generator, thermal
//! mode state, and the bath correlation function the perturbative kernel
//! consumes.
//!
//! The composite space orders the spin first: operators live on
//! dimension 2(n_max+1) with row index `s * (n_max+1) + n`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::Error;
use crate::linops::{self, identity, kron, left_mul, right_mul, sandwich, Matrix};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Physical parameters. `beta` is the inverse temperature;
/// `f64::INFINITY` selects the zero-temperature limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub omega0: f64,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beta: f64,
    pub n_max: usize,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("omega0", self.omega0),
            ("eta", self.eta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self.eta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive or infinite, got {}",
                self.beta
            )));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidParameter(
                "n_max must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Mode dimension n_max + 1.
    pub fn dim_mode(&self) -> usize {
        self.n_max + 1
    }

    /// Composite dimension 2(n_max + 1).
    pub fn dim_total(&self) -> usize {
        2 * self.dim_mode()
    }
}

pub fn sigma_x() -> Matrix {
    ndarray::array![
        [Complex64::new(0., 0.), Complex64::new(1., 0.)],
        [Complex64::new(1., 0.), Complex64::new(0., 0.)]
    ]
}

pub fn sigma_y() -> Matrix {
    ndarray::array![
        [Complex64::new(0., 0.), Complex64::new(0., -1.)],
        [Complex64::new(0., 1.), Complex64::new(0., 0.)]
    ]
}

pub fn sigma_z() -> Matrix {
    ndarray::array![
        [Complex64::new(1., 0.), Complex64::new(0., 0.)],
        [Complex64::new(0., 0.), Complex64::new(-1., 0.)]
    ]
}

/// Annihilation operator on the truncated Fock ladder: b|n> = sqrt(n)|n-1>.
pub fn annihilation(dim: usize) -> Matrix {
    let mut b: Matrix = Array2::zeros((dim, dim));
    for n in 1..dim {
        b[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    b
}

/// Mean thermal occupation 1/(e^{beta*eta} - 1); zero at infinite beta.
pub fn n_thermal(eta: f64, beta: f64) -> Result<f64, Error> {
    if eta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive or infinite, got {beta}"
        )));
    }
    if beta.is_infinite() {
        return Ok(0.0);
    }
    Ok(1.0 / ((beta * eta).exp_m1()))
}

/// (omega0/2) sigma_z ⊗ 1 + eta 1 ⊗ b†b + lambda sigma_x ⊗ (b + b†).
pub fn build_h_sm(p: &ModelParams) -> Result<Matrix, Error> {
    p.validate()?;
    let dm = p.dim_mode();
    let b = annihilation(dm);
    let bdag = linops::dagger(&b);
    let num = linops::matmul(&bdag, &b);
    let pos = &b + &bdag;
    let h = kron(&sigma_z(), &identity(dm)) * Complex64::new(0.5 * p.omega0, 0.0)
        + kron(&identity(2), &num) * Complex64::new(p.eta, 0.0)
        + kron(&sigma_x(), &pos) * Complex64::new(p.lambda, 0.0);
    Ok(h)
}

fn dissipator(l: &Matrix) -> Matrix {
    let ldag = linops::dagger(l);
    let ldl = linops::matmul(&ldag, l);
    let half = Complex64::new(0.5, 0.0);
    sandwich(l, &ldag) - (left_mul(&ldl) + right_mul(&ldl)) * half
}

/// Lindblad generator of the damped coupled pair:
/// -i[H, .] + 2 gamma (n_beta + 1) D_b + 2 gamma n_beta D_{b†}.
pub fn build_liouvillian_sm(p: &ModelParams) -> Result<Matrix, Error> {
    let h = build_h_sm(p)?;
    let nb = n_thermal(p.eta, p.beta)?;
    let d = p.dim_total();
    let b = kron(&identity(2), &annihilation(p.dim_mode()));
    let mut l = (left_mul(&h) - right_mul(&h)) * (-I);
    l = l + dissipator(&b) * Complex64::new(2.0 * p.gamma * (nb + 1.0), 0.0);
    if nb > 0.0 {
        l = l + dissipator(&linops::dagger(&b)) * Complex64::new(2.0 * p.gamma * nb, 0.0);
    }
    debug_assert_eq!(l.nrows(), d * d);
    Ok(l)
}

/// Thermal mode state diag ∝ e^{-beta*eta*n}, renormalized after the
/// Fock cutoff. Errors out if the cutoff drops more than 1e-6 of the
/// untruncated weight, since every downstream quantity would inherit
/// that bias silently.
pub fn thermal_pseudomode_state(p: &ModelParams) -> Result<Matrix, Error> {
    p.validate()?;
    let dm = p.dim_mode();
    let mut rho: Matrix = Array2::zeros((dm, dm));
    if p.beta.is_infinite() {
        rho[(0, 0)] = Complex64::new(1.0, 0.0);
        return Ok(rho);
    }
    let x = (-p.beta * p.eta).exp();
    let retained = 1.0 - x.powi(dm as i32);
    let required = 1.0 - 1e-6;
    if retained < required {
        return Err(Error::TruncationWeight {
            n_max: p.n_max,
            retained,
            required,
        });
    }
    let norm: f64 = (0..dm).map(|n| x.powi(n as i32)).sum();
    for n in 0..dm {
        rho[(n, n)] = Complex64::new(x.powi(n as i32) / norm, 0.0);
    }
    Ok(rho)
}

/// Lorentzian spectral density 2 lambda^2 gamma / ((omega - eta)^2 + gamma^2).
pub fn lorentzian_j(omega: f64, p: &ModelParams) -> f64 {
    let d = omega - p.eta;
    2.0 * p.lambda.powi(2) * p.gamma / (d * d + p.gamma * p.gamma)
}

/// Damped-oscillation bath correlation
/// C(t) = lambda^2 [(n_beta + 1) e^{-i eta t} + n_beta e^{+i eta t}] e^{-gamma t}.
pub fn bath_correlation(t: f64, p: &ModelParams) -> Result<Complex64, Error> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "correlation time must be non-negative, got {t}"
        )));
    }
    let nb = n_thermal(p.eta, p.beta)?;
    let l2 = Complex64::new(p.lambda * p.lambda, 0.0);
    let osc = Complex64::new(nb + 1.0, 0.0) * (-I * p.eta * t).exp()
        + Complex64::new(nb, 0.0) * (I * p.eta * t).exp();
    Ok(l2 * osc * Complex64::new((-p.gamma * t).exp(), 0.0))
}
