//! Second-order correction beyond the regression reconstruction. The
//! environment enters only through its two-point correlation, so the
//! leading memory kernel collapses to four system-superoperator terms
//! weighted by C(tau1+tau2) and its conjugate. Convolving that kernel
//! with the reduced maps yields the correction to the two-time joint
//! distribution and the residual distance it leaves behind.

use num_complex::Complex64;

use crate::error::Error;
use crate::instruments::Protocol;
use crate::linops::{dagger, left_mul, matvec, right_mul, sandwich, vec_op, Matrix};
use crate::model::{bath_correlation, sigma_x, ModelParams};
use crate::multitime::{qrt_joint, JointDistribution, PropagatorGrid, CLIP_TOL};

/// Default quadrature nodes per axis for the double convolution.
pub const QUAD_GRID: usize = 121;

/// Free system evolution rho -> e^{-i H_S t} rho e^{i H_S t} with
/// H_S = (omega0/2) sigma_z, as a 4x4 superoperator.
fn free_system_step(omega0: f64, t: f64) -> Matrix {
    let half = 0.5 * omega0 * t;
    let u = ndarray::array![
        [Complex64::from_polar(1.0, -half), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, half)]
    ];
    sandwich(&u, &dagger(&u))
}

fn trap_weight(j: usize, n: usize) -> f64 {
    if j == 0 || j == n {
        0.5
    } else {
        1.0
    }
}

/// Leading-order memory kernel for a system intervention `a1` placed
/// between two free-evolution windows:
///
///   K(tau2, tau1) = -[sx, U(tau2) A1 U(tau1) (C(tau) sx.rho - C*(tau) rho.sx)]
///
/// with tau = tau1 + tau2. The bath is eliminated exactly at this
/// order: it evolves freely through both windows because `a1` acts on
/// the system alone, leaving the two coupling insertions paired by
/// the correlation function. Scales exactly as lambda^2 through C.
pub fn second_order_kernel(
    a1: &Matrix,
    tau2: f64,
    tau1: f64,
    p: &ModelParams,
) -> Result<Matrix, Error> {
    if tau1 < 0.0 || tau2 < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kernel delays must be nonnegative, got ({tau1}, {tau2})"
        )));
    }
    let c = bath_correlation(tau1 + tau2, p)?;
    let sx = sigma_x();
    let lx = left_mul(&sx);
    let rx = right_mul(&sx);
    let seed = lx.mapv(|x| x * c) - rx.mapv(|x| x * c.conj());
    let com = &lx - &rx;
    let chain = com
        .dot(&free_system_step(p.omega0, tau2))
        .dot(a1)
        .dot(&free_system_step(p.omega0, tau1))
        .dot(&seed);
    Ok(chain.mapv(|x| -x))
}

fn accumulate_phi_q(
    a1: &Matrix,
    p: &ModelParams,
    maps_outer: &[Matrix],
    maps_inner: &[Matrix],
    h_outer: f64,
    h_inner: f64,
) -> Result<Matrix, Error> {
    let n_outer = maps_outer.len() - 1;
    let n_inner = maps_inner.len() - 1;
    let mut acc: Matrix = Matrix::zeros((4, 4));
    for j2 in 0..=n_outer {
        let tau2 = j2 as f64 * h_outer;
        let outer = &maps_outer[n_outer - j2];
        for j1 in 0..=n_inner {
            let tau1 = j1 as f64 * h_inner;
            let kernel = second_order_kernel(a1, tau2, tau1, p)?;
            let w = trap_weight(j2, n_outer) * trap_weight(j1, n_inner) * h_outer * h_inner;
            let term = outer.dot(&kernel).dot(&maps_inner[n_inner - j1]);
            acc = acc + term.mapv(|x| x * w);
        }
    }
    Ok(acc)
}

/// Q-part correction map: the double convolution
///
///   Phi_Q(t2, t1) = int_0^{t2-t1} dtau2 int_0^{t1} dtau1
///                   Lam(t2-t1-tau2) K(tau2, tau1) Lam(t1-tau1)
///
/// on a composite-trapezoid grid with `grid_n` nodes per axis. Both
/// degenerate windows (t1 = 0 or t2 = t1) give the zero map.
pub fn phi_q_second_order(
    a1: &Matrix,
    t2: f64,
    t1: f64,
    p: &ModelParams,
    grid_n: usize,
) -> Result<Matrix, Error> {
    if !(t2 >= t1 && t1 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need t2 >= t1 >= 0, got t1 = {t1}, t2 = {t2}"
        )));
    }
    assert!(grid_n >= 2, "quadrature needs at least 2 nodes per axis");
    if t1 == 0.0 || t2 == t1 {
        return Ok(Matrix::zeros((4, 4)));
    }
    let n = grid_n - 1;
    let inner_grid = PropagatorGrid::new(p, t1, n)?;
    let gap = t2 - t1;
    let maps_inner = inner_grid.maps;
    let maps_outer = if (gap - t1).abs() <= 1e-12 * t1.max(1.0) {
        maps_inner.clone()
    } else {
        PropagatorGrid::new(p, gap, n)?.maps
    };
    let h_inner = t1 / n as f64;
    let h_outer = gap / n as f64;
    accumulate_phi_q(a1, p, &maps_outer, &maps_inner, h_outer, h_inner)
}

/// Same convolution evaluated on an existing propagator grid, with
/// quadrature nodes every `stride` engine steps. Requires the window
/// boundaries to sit on stride-aligned nodes.
pub fn phi_q_on_grid(
    a1: &Matrix,
    grid: &PropagatorGrid,
    k1: usize,
    k2: usize,
    stride: usize,
) -> Result<Matrix, Error> {
    assert!(stride > 0 && k1 <= k2 && k2 <= grid.n_steps());
    assert!(k1 % stride == 0 && (k2 - k1) % stride == 0);
    if k1 == 0 || k2 == k1 {
        return Ok(Matrix::zeros((4, 4)));
    }
    let h = stride as f64 * grid.dt;
    let n_inner = k1 / stride;
    let n_outer = (k2 - k1) / stride;
    let maps_inner: Vec<Matrix> = (0..=n_inner)
        .map(|j| grid.reduced_map_at(j * stride).clone())
        .collect();
    let maps_outer: Vec<Matrix> = (0..=n_outer)
        .map(|j| grid.reduced_map_at(j * stride).clone())
        .collect();
    accumulate_phi_q(a1, &grid.params, &maps_outer, &maps_inner, h, h)
}

fn qubit_trace_of_vec(v: &ndarray::Array1<Complex64>) -> Complex64 {
    v[0] + v[3]
}

/// Two-time joint distribution with the second-order correction added
/// to the regression reconstruction, outcome order matching
/// `exact_joint` and `qrt_joint`.
pub fn corrected_joint_with_grid(
    protocol: &Protocol,
    p: &ModelParams,
    grid_n: usize,
) -> Result<JointDistribution, Error> {
    if protocol.steps.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "corrected statistics are defined for 2 steps, got {}",
            protocol.steps.len()
        )));
    }
    let base = qrt_joint(protocol, p)?;
    let (t1, first) = (&protocol.steps[0].0, &protocol.steps[0].1);
    let (t2, second) = (&protocol.steps[1].0, &protocol.steps[1].1);
    let rho0 = vec_op(&protocol.initial_state);
    let mut raw = base.raw.clone();
    let mut idx = 0;
    for el1 in &first.elements {
        let phi = phi_q_second_order(el1, *t2, *t1, p, grid_n)?;
        let w = matvec(&phi, &rho0);
        for el2 in &second.elements {
            raw[idx] += qubit_trace_of_vec(&matvec(el2, &w)).re;
            idx += 1;
        }
    }
    JointDistribution::from_raw(base.outcomes.clone(), raw, CLIP_TOL)
}

pub fn corrected_joint(
    protocol: &Protocol,
    p: &ModelParams,
) -> Result<JointDistribution, Error> {
    corrected_joint_with_grid(protocol, p, QUAD_GRID)
}

/// Residual distance after the correction: half the L1 gap between the
/// exact joint distribution and the corrected reconstruction.
pub fn epsilon_lambda2_with_grid(
    protocol: &Protocol,
    p: &ModelParams,
    grid_n: usize,
) -> Result<f64, Error> {
    let exact = crate::multitime::exact_joint(protocol, p)?;
    let corrected = corrected_joint_with_grid(protocol, p, grid_n)?;
    Ok(exact.kolmogorov_distance(&corrected))
}

pub fn epsilon_lambda2(protocol: &Protocol, p: &ModelParams) -> Result<f64, Error> {
    epsilon_lambda2_with_grid(protocol, p, QUAD_GRID)
}
