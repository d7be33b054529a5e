//! Quantifiers built on top of the propagator engine: the distance
//! between exact sequential statistics and their regression-type
//! reconstruction, time-averaged versions of that distance, and a
//! one-time witness that measures how far an interpolated propagator
//! steps outside the positivity domain on the Bloch ball.

use ndarray::Array1;

use crate::error::Error;
use crate::instruments::{Instrument, Protocol, ProtocolTemplate};
use crate::linops::{lu_solve, singular_values, Matrix, ZERO};
use crate::model::{sigma_x, sigma_y, sigma_z, ModelParams};
use crate::multitime::{exact_joint, qrt_joint, ClipStats, PropagatorGrid, CLIP_TOL};

/// Default number of lattice points on the Bloch sphere.
pub const SPHERE_SAMPLES: usize = 2048;

/// Default number of time-grid nodes for the averaged quantifiers.
pub const AVERAGE_GRID: usize = 81;

/// Propagators whose smallest singular value falls below this are
/// treated as numerically non-invertible.
pub const CONDITIONING_FLOOR: f64 = 1e-8;

/// Bloch-ball action of a qubit map: r ↦ M r + v.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub m: [[f64; 3]; 3],
    pub v: [f64; 3],
}

impl AffineMap {
    pub fn apply(&self, r: [f64; 3]) -> [f64; 3] {
        let mut out = self.v;
        for i in 0..3 {
            for j in 0..3 {
                out[i] += self.m[i][j] * r[j];
            }
        }
        out
    }

    /// Transpose action Mᵀ u, used by the gradient of ‖M r + v‖.
    fn apply_transpose(&self, u: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[j] += self.m[i][j] * u[i];
            }
        }
        out
    }
}

fn norm3(u: [f64; 3]) -> f64 {
    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
}

/// Extract the Bloch affine action of a 4x4 superoperator in the
/// column-stacking convention. Fails if any coefficient carries an
/// imaginary part above 1e-8, which signals a non-Hermiticity-
/// preserving map rather than roundoff.
pub fn affine_of(phi: &Matrix) -> Result<AffineMap, Error> {
    if phi.nrows() != 4 || phi.ncols() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "affine form needs a 4x4 qubit superoperator, got {}x{}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    let paulis = [sigma_x(), sigma_y(), sigma_z()];
    let id: Matrix = crate::linops::identity(2);
    // Column c of phi is the image of the matrix unit E_{r,c'} under
    // vec; assemble images of the Pauli basis directly instead.
    let image = |op: &Matrix| -> Matrix {
        let v = crate::linops::vec_op(op);
        let w = phi.dot(&v);
        crate::linops::unvec(&w, 2).expect("4-vector unstacks to 2x2")
    };
    let mut m = [[0.0; 3]; 3];
    let mut v = [0.0; 3];
    let mut worst_im = 0.0_f64;
    let herm_part = |sig: &Matrix, x: &Matrix, worst: &mut f64| -> f64 {
        let mut tr = ZERO;
        for r in 0..2 {
            for c in 0..2 {
                tr += sig[[r, c]] * x[[c, r]];
            }
        }
        *worst = worst.max(tr.im.abs() * 0.5);
        0.5 * tr.re
    };
    let img_id = image(&id);
    for (i, sig) in paulis.iter().enumerate() {
        v[i] = herm_part(sig, &img_id, &mut worst_im);
        for (j, src) in paulis.iter().enumerate() {
            let img = image(src);
            m[i][j] = herm_part(sig, &img, &mut worst_im);
        }
    }
    if worst_im > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "superoperator has imaginary Bloch coefficients up to {worst_im:.3e}; \
             it does not preserve Hermiticity"
        )));
    }
    Ok(AffineMap { m, v })
}

/// Deterministic Fibonacci lattice on the unit sphere. The same `n`
/// always yields bitwise-identical points.
#[derive(Clone, Debug)]
pub struct SphereSampler {
    points: Vec<[f64; 3]>,
}

impl SphereSampler {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "sampler needs at least one point");
        let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            points.push([rho * phi.cos(), rho * phi.sin(), z]);
        }
        SphereSampler { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }
}

impl Default for SphereSampler {
    fn default() -> Self {
        SphereSampler::new(SPHERE_SAMPLES)
    }
}

/// Largest image norm max_r ‖M r + v‖ over the unit sphere: lattice
/// scan plus one deterministic tangent-direction line search from the
/// best lattice point. The maximum of a convex function over the ball
/// is attained on the boundary, so sphere sampling suffices.
pub fn max_ball_image_norm(aff: &AffineMap, sampler: &SphereSampler) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut best_r = [0.0, 0.0, 1.0];
    for &r in sampler.points() {
        let f = norm3(aff.apply(r));
        if f > best {
            best = f;
            best_r = r;
        }
    }
    // Refine once: project the gradient of ‖M r + v‖ onto the tangent
    // plane and walk a fixed ladder of arc lengths in that direction.
    let u = aff.apply(best_r);
    let nu = norm3(u);
    if nu > 1e-300 {
        let g = aff.apply_transpose([u[0] / nu, u[1] / nu, u[2] / nu]);
        let radial = g[0] * best_r[0] + g[1] * best_r[1] + g[2] * best_r[2];
        let tang = [
            g[0] - radial * best_r[0],
            g[1] - radial * best_r[1],
            g[2] - radial * best_r[2],
        ];
        let nt = norm3(tang);
        if nt > 1e-14 {
            let dir = [tang[0] / nt, tang[1] / nt, tang[2] / nt];
            for &theta in &[0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001] {
                let (c, s) = (f64::cos(theta), f64::sin(theta));
                let cand = [
                    c * best_r[0] + s * dir[0],
                    c * best_r[1] + s * dir[1],
                    c * best_r[2] + s * dir[2],
                ];
                let f = norm3(aff.apply(cand));
                if f > best {
                    best = f;
                }
            }
        }
    }
    best
}

/// One-time positivity witness for the bridge map V(t2, t1) =
/// Λ(t2) Λ(t1)⁻¹: how far the image of the Bloch ball sticks out of
/// the ball, q = max{0, max_r ‖M r + v‖ − 1}. Zero for any map that
/// is positivity-preserving on that interval.
pub fn q_witness(
    lam_t2: &Matrix,
    lam_t1: &Matrix,
    sampler: &SphereSampler,
    conditioning: f64,
    t1: f64,
) -> Result<f64, Error> {
    let sv = singular_values(lam_t1)?;
    let sigma_min = sv[sv.len() - 1];
    if sigma_min < conditioning {
        return Err(Error::IllConditioned {
            t: t1,
            sigma_min,
            threshold: conditioning,
        });
    }
    // V Λ(t1) = Λ(t2)  ⇒  Λ(t1)ᵀ Vᵀ = Λ(t2)ᵀ.
    let vt = lu_solve(&lam_t1.t().to_owned(), &lam_t2.t().to_owned())?;
    let bridge = vt.t().to_owned();
    let aff = affine_of(&bridge)?;
    Ok((max_ball_image_norm(&aff, sampler) - 1.0).max(0.0))
}

/// Time average of `q_witness` with the final time fixed at the grid
/// node `k_f`, sweeping the intermediate time over nodes `0..=k_f` in
/// steps of `stride`.
#[derive(Clone, Debug)]
pub struct WitnessAverage {
    pub value: f64,
    /// Nodes dropped because Λ(t1) was numerically non-invertible.
    pub excluded: usize,
}

pub fn avg_n_witness(
    grid: &PropagatorGrid,
    k_f: usize,
    stride: usize,
    sampler: &SphereSampler,
    conditioning: f64,
) -> Result<WitnessAverage, Error> {
    assert!(stride > 0 && k_f <= grid.n_steps() && k_f % stride == 0);
    let lam_f = grid.reduced_map_at(k_f);
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    let mut excluded = 0usize;
    for k in (0..=k_f).step_by(stride) {
        let lam1 = grid.reduced_map_at(k);
        match q_witness(&lam_f, &lam1, sampler, conditioning, grid.time(k)) {
            Ok(q) => nodes.push((grid.time(k), q)),
            Err(Error::IllConditioned { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if nodes.len() < 2 {
        return Err(Error::IllConditioned {
            t: grid.time(k_f),
            sigma_min: 0.0,
            threshold: conditioning,
        });
    }
    // Non-uniform trapezoid over the surviving nodes, averaged over
    // the span they cover.
    let mut integral = 0.0;
    for w in nodes.windows(2) {
        integral += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
    }
    let span = nodes[nodes.len() - 1].0 - nodes[0].0;
    Ok(WitnessAverage {
        value: integral / span,
        excluded,
    })
}

/// Half the L1 distance between two joint outcome tables, after
/// absorbing small negative roundoff through the shared clip policy.
pub fn table_distance(
    exact: &[f64],
    reconstructed: &[f64],
    clip: &mut ClipStats,
    tol: f64,
) -> Result<f64, Error> {
    if exact.len() != reconstructed.len() {
        return Err(Error::DimensionMismatch(format!(
            "outcome tables have {} and {} entries",
            exact.len(),
            reconstructed.len()
        )));
    }
    let mut total = 0.0;
    for (p, q) in exact.iter().zip(reconstructed) {
        let p = clip.absorb(*p, tol, "exact joint")?;
        let q = clip.absorb(*q, tol, "regression joint")?;
        total += (p - q).abs();
    }
    Ok(0.5 * total)
}

fn flatten2(t: &[Vec<f64>]) -> Vec<f64> {
    t.iter().flatten().copied().collect()
}

fn flatten3(t: &[Vec<Vec<f64>>]) -> Vec<f64> {
    t.iter().flatten().flatten().copied().collect()
}

/// Two-time deviation for an explicit protocol, built from scratch
/// (one propagator exponential per interval).
pub fn epsilon_qrt(protocol: &Protocol, params: &ModelParams) -> Result<f64, Error> {
    if protocol.steps.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "two-time deviation needs exactly 2 steps, got {}",
            protocol.steps.len()
        )));
    }
    let exact = exact_joint(protocol, params)?;
    let recon = qrt_joint(protocol, params)?;
    Ok(exact.kolmogorov_distance(&recon))
}

/// Three-time deviation for an explicit protocol.
pub fn epsilon_qrt_3(protocol: &Protocol, params: &ModelParams) -> Result<f64, Error> {
    if protocol.steps.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "three-time deviation needs exactly 3 steps, got {}",
            protocol.steps.len()
        )));
    }
    let exact = exact_joint(protocol, params)?;
    let recon = qrt_joint(protocol, params)?;
    Ok(exact.kolmogorov_distance(&recon))
}

/// Two-time deviation at grid nodes, reusing a prepared trajectory and
/// readout rows. `rows` must hold one adjoint row family per outcome
/// of the second instrument, as produced by `PropagatorGrid::readout_rows`.
pub fn epsilon_two_time_grid(
    grid: &PropagatorGrid,
    trajectory: &[Array1<num_complex::Complex64>],
    rows: &[Vec<Array1<num_complex::Complex64>>],
    rho0: &Matrix,
    first: &Instrument,
    second: &Instrument,
    k1: usize,
    k2: usize,
    clip: &mut ClipStats,
    tol: f64,
) -> Result<f64, Error> {
    let exact = grid.exact_two_time(trajectory, rows, first, k1, k2);
    let recon = grid.qrt_two_time(rho0, first, second, k1, k2);
    table_distance(&flatten2(&exact), &flatten2(&recon), clip, tol)
}

/// Time-averaged two-time deviation with the readout fixed at node
/// `k_f`: (1/t_f) ∫₀^{t_f} ε(t_f, t1) dt1 on the trapezoid rule over
/// every `stride`-th node. Both endpoints vanish identically (at
/// t1 = 0 the state is uncorrelated, at t1 = t_f there is no
/// intermediate evolution), so only interior nodes are evaluated.
pub fn avg_epsilon_qrt_grid(
    grid: &PropagatorGrid,
    template: &ProtocolTemplate,
    k_f: usize,
    stride: usize,
    clip: &mut ClipStats,
    tol: f64,
) -> Result<f64, Error> {
    assert!(stride > 0 && k_f <= grid.n_steps() && k_f % stride == 0);
    if template.instruments.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "two-time average needs a 2-instrument template, got {}",
            template.instruments.len()
        )));
    }
    let first = &template.instruments[0];
    let second = &template.instruments[1];
    let trajectory = grid.forward_trajectory(&template.initial_state);
    let rows: Vec<_> = second
        .elements
        .iter()
        .map(|el| grid.readout_rows(el))
        .collect();
    let n_int = k_f / stride;
    let mut acc = 0.0;
    for j in 1..n_int {
        let k1 = j * stride;
        acc += epsilon_two_time_grid(
            grid,
            &trajectory,
            &rows,
            &template.initial_state,
            first,
            second,
            k1,
            k_f,
            clip,
            tol,
        )?;
    }
    Ok(acc / n_int as f64)
}

/// Doubly averaged three-time deviation with the readout fixed at node
/// `k_f`:
///   (1/t_f) ∫₀^{t_f} dt2 (1/t2) ∫₀^{t2} dt1 ε3(t_f, t2, t1),
/// nested trapezoid sums on the shared grid, with the degenerate inner
/// average at t2 = 0 defined as 0. Several middle instruments can be
/// evaluated in one pass since the conditioned trajectories depend
/// only on the first instrument and the readout rows only on the last.
pub fn avg_epsilon_qrt_3_grid(
    grid: &PropagatorGrid,
    initial_state: &Matrix,
    first: &Instrument,
    middles: &[&Instrument],
    last: &Instrument,
    k_f: usize,
    stride: usize,
    clip: &mut ClipStats,
    tol: f64,
) -> Result<Vec<f64>, Error> {
    assert!(stride > 0 && k_f <= grid.n_steps() && k_f % stride == 0);
    let n_int = k_f / stride;
    let trajectory = grid.forward_trajectory(initial_state);
    let rows: Vec<_> = last
        .elements
        .iter()
        .map(|el| grid.readout_rows(el))
        .collect();
    // eps[m][j2][j1] for middle instrument m, t2 = j2*stride*dt,
    // t1 = j1*stride*dt with j1 <= j2.
    let mut eps = vec![vec![vec![0.0; n_int + 1]; n_int + 1]; middles.len()];
    for j1 in 0..=n_int {
        let k1 = j1 * stride;
        // Conditioned branches after the first instrument.
        let mut branches: Vec<_> = first
            .elements
            .iter()
            .map(|el| grid.apply_element(el, &trajectory[k1]))
            .collect();
        let mut k = k1;
        for j2 in j1..=n_int {
            let k2 = j2 * stride;
            while k < k2 {
                for b in branches.iter_mut() {
                    *b = grid.step_vec(b);
                }
                k += 1;
            }
            for (m, middle) in middles.iter().enumerate() {
                let mut exact = Vec::with_capacity(
                    first.len() * middle.len() * last.len(),
                );
                for b in &branches {
                    for el2 in &middle.elements {
                        let w = grid.apply_element(el2, b);
                        for row_family in &rows {
                            let row = &row_family[k_f - k2];
                            let p = crate::multitime::dot_plain(row, &w).re;
                            exact.push(p);
                        }
                    }
                }
                let recon = grid.qrt_three_time(
                    initial_state,
                    first,
                    middle,
                    last,
                    k1,
                    k2,
                    k_f,
                );
                let recon_flat = flatten3(&recon);
                eps[m][j2][j1] =
                    table_distance(&exact, &recon_flat, clip, tol)?;
            }
        }
    }
    // Nested trapezoid: inner average over t1 in [0, t2], outer over
    // t2 in [0, t_f]; the j2 = 0 inner average is 0 by definition.
    let mut out = Vec::with_capacity(middles.len());
    for table in &eps {
        let mut inner = vec![0.0; n_int + 1];
        for j2 in 1..=n_int {
            let mut s = 0.5 * (table[j2][0] + table[j2][j2]);
            for j1 in 1..j2 {
                s += table[j2][j1];
            }
            inner[j2] = s / j2 as f64;
        }
        let mut outer = 0.5 * (inner[0] + inner[n_int]);
        for j2 in 1..n_int {
            outer += inner[j2];
        }
        out.push(outer / n_int as f64);
    }
    Ok(out)
}

/// One-shot averaged two-time deviation over [0, t_f] on `grid_n`
/// nodes, building a dedicated propagator grid.
pub fn avg_epsilon_qrt(
    t_f: f64,
    template: &ProtocolTemplate,
    params: &ModelParams,
    grid_n: usize,
) -> Result<f64, Error> {
    assert!(grid_n >= 3, "need at least 3 grid nodes");
    let grid = PropagatorGrid::new(params, t_f, grid_n - 1)?;
    let mut clip = ClipStats::default();
    avg_epsilon_qrt_grid(&grid, template, grid_n - 1, 1, &mut clip, CLIP_TOL)
}

/// One-shot doubly averaged three-time deviation over [0, t_f].
pub fn avg_epsilon_qrt_3(
    t_f: f64,
    template: &ProtocolTemplate,
    params: &ModelParams,
    grid_n: usize,
) -> Result<f64, Error> {
    assert!(grid_n >= 3, "need at least 3 grid nodes");
    if template.instruments.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "three-time average needs a 3-instrument template, got {}",
            template.instruments.len()
        )));
    }
    let grid = PropagatorGrid::new(params, t_f, grid_n - 1)?;
    let mut clip = ClipStats::default();
    let values = avg_epsilon_qrt_3_grid(
        &grid,
        &template.initial_state,
        &template.instruments[0],
        &[&template.instruments[1]],
        &template.instruments[2],
        grid_n - 1,
        1,
        &mut clip,
        CLIP_TOL,
    )?;
    Ok(values[0])
}
