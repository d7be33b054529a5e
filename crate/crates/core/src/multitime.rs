//! Sequential-measurement statistics, two ways: exact propagation of the
//! full spin+mode state with instruments applied in between, and the
//! regression-type prediction that chains the one-time reduced map through
//! the same instruments on the spin alone.
//!
//! The [`PropagatorGrid`] engine amortizes the cost over uniform time
//! grids: one matrix exponential per parameter point, after which joint
//! probabilities are matrix-vector chains against cached trajectories and
//! readout functionals.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::Error;
use crate::instruments::{Instrument, Protocol};
use crate::linops::{expm, identity, matmul, matvec, vec_op, Matrix, Vector, ONE, ZERO};
use crate::model::{build_liouvillian_sm, thermal_pseudomode_state, ModelParams};

/// Default roundoff budget for probabilities: anything more negative
/// than this is treated as a numerical failure rather than noise.
pub const CLIP_TOL: f64 = 1e-10;

/// Running account of probabilities nudged back into [0, 1].
#[derive(Clone, Copy, Debug, Default)]
pub struct ClipStats {
    pub clipped: usize,
    pub worst: f64,
}

impl ClipStats {
    /// Clip a raw probability into [0, 1], recording the excursion.
    /// Excursions beyond `tol` are hard errors.
    pub fn absorb(&mut self, raw: f64, tol: f64, context: &str) -> Result<f64, Error> {
        if !raw.is_finite() {
            return Err(Error::NonFinite("probability"));
        }
        if raw < -tol || raw > 1.0 + tol {
            return Err(Error::ProbabilityOutOfRange {
                value: raw,
                tol,
                outcome: context.to_string(),
            });
        }
        if raw < 0.0 {
            self.clipped += 1;
            self.worst = self.worst.max(-raw);
            Ok(0.0)
        } else if raw > 1.0 {
            self.clipped += 1;
            self.worst = self.worst.max(raw - 1.0);
            Ok(1.0)
        } else {
            Ok(raw)
        }
    }

    pub fn merge(&mut self, other: &ClipStats) {
        self.clipped += other.clipped;
        self.worst = self.worst.max(other.worst);
    }
}

/// Joint outcome distribution of a measurement sequence. Outcome tuples
/// are chronological. Probabilities are clipped into [0, 1]; the raw
/// values stay available for diagnostics.
#[derive(Clone, Debug)]
pub struct JointDistribution {
    pub outcomes: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
    pub raw: Vec<f64>,
    pub clip: ClipStats,
}

impl JointDistribution {
    pub fn from_raw(outcomes: Vec<Vec<f64>>, raw: Vec<f64>, tol: f64) -> Result<Self, Error> {
        let mut clip = ClipStats::default();
        let mut probabilities = Vec::with_capacity(raw.len());
        for (tuple, &p) in outcomes.iter().zip(raw.iter()) {
            probabilities.push(clip.absorb(p, tol, &format!("{tuple:?}"))?);
        }
        Ok(Self {
            outcomes,
            probabilities,
            raw,
            clip,
        })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// Half the L1 distance to another distribution over the same tuples.
    pub fn kolmogorov_distance(&self, other: &JointDistribution) -> f64 {
        0.5 * self
            .probabilities
            .iter()
            .zip(other.probabilities.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Unconjugated dot product; readout rows are already adjoint vectors.
pub fn dot_plain(a: &Vector, b: &Vector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Apply a 4x4 system superoperator to a vectorized spin+mode operator,
/// acting as (element ⊗ identity on the mode) in the vec picture.
pub fn apply_system_element(el: &Matrix, v: &Vector, dm: usize) -> Vector {
    let d = 2 * dm;
    let mut out: Vector = Array1::zeros(d * d);
    for s in 0..2 {
        for sp in 0..2 {
            for sig in 0..2 {
                for sigp in 0..2 {
                    let c = el[(s + 2 * sp, sig + 2 * sigp)];
                    if c == ZERO {
                        continue;
                    }
                    for mp in 0..dm {
                        let out_col = sp * dm + mp;
                        let in_col = sigp * dm + mp;
                        for m in 0..dm {
                            out[(s * dm + m) + d * out_col] +=
                                c * v[(sig * dm + m) + d * in_col];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Trace over the mode of a vectorized spin+mode operator, returned as a
/// vectorized 2x2 spin operator.
pub fn trace_out_mode(v: &Vector, dm: usize) -> Vector {
    let d = 2 * dm;
    let mut out: Vector = Array1::zeros(4);
    for s in 0..2 {
        for sp in 0..2 {
            let mut acc = ZERO;
            for m in 0..dm {
                acc += v[(s * dm + m) + d * (sp * dm + m)];
            }
            out[s + 2 * sp] = acc;
        }
    }
    out
}

fn trace_of_vec(v: &Vector, d: usize) -> Complex64 {
    (0..d).map(|r| v[r + d * r]).sum()
}

/// One-time reduced map at time t, reconstructed by propagating the four
/// spin matrix units (tensored with the thermal mode state) and tracing
/// out the mode.
pub fn reduced_map(t: f64, p: &ModelParams) -> Result<Matrix, Error> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "map time must be non-negative, got {t}"
        )));
    }
    let l = build_liouvillian_sm(p)?;
    let e = expm(&(&l * Complex64::new(t, 0.0)))?;
    let rho_m = thermal_pseudomode_state(p)?;
    let dm = p.dim_mode();
    let d = p.dim_total();
    let mut lam: Matrix = Array2::zeros((4, 4));
    for r in 0..2 {
        for c in 0..2 {
            let mut unit: Matrix = Array2::zeros((2, 2));
            unit[(r, c)] = ONE;
            let v0 = vec_op(&crate::linops::kron(&unit, &rho_m));
            let vt = matvec(&e, &v0);
            let col = trace_out_mode(&vt, dm);
            debug_assert_eq!(vt.len(), d * d);
            for i in 0..4 {
                lam[(i, r + 2 * c)] = col[i];
            }
        }
    }
    Ok(lam)
}

fn embed_initial(rho_s: &Matrix, p: &ModelParams) -> Result<Vector, Error> {
    let rho_m = thermal_pseudomode_state(p)?;
    Ok(vec_op(&crate::linops::kron(rho_s, &rho_m)))
}

/// Exact joint distribution: propagate the full spin+mode state between
/// instrument times inside one depth-first pass over outcome branches.
pub fn exact_joint(protocol: &Protocol, p: &ModelParams) -> Result<JointDistribution, Error> {
    exact_joint_with_tol(protocol, p, CLIP_TOL)
}

pub fn exact_joint_with_tol(
    protocol: &Protocol,
    p: &ModelParams,
    tol: f64,
) -> Result<JointDistribution, Error> {
    protocol.validate()?;
    let l = build_liouvillian_sm(p)?;
    let d = p.dim_total();
    let dm = p.dim_mode();
    let mut states = vec![(Vec::<f64>::new(), embed_initial(&protocol.initial_state, p)?)];
    let mut prev_t = 0.0;
    for (t, inst) in &protocol.steps {
        let dt = t - prev_t;
        prev_t = *t;
        let prop = if dt > 0.0 {
            Some(expm(&(&l * Complex64::new(dt, 0.0)))?)
        } else {
            None
        };
        let mut next = Vec::with_capacity(states.len() * inst.len());
        for (labels, v) in &states {
            let moved = match &prop {
                Some(e) => matvec(e, v),
                None => v.clone(),
            };
            for (label, el) in inst.outcomes.iter().zip(inst.elements.iter()) {
                let mut tagged = labels.clone();
                tagged.push(*label);
                next.push((tagged, apply_system_element(el, &moved, dm)));
            }
        }
        states = next;
    }
    let mut outcomes = Vec::with_capacity(states.len());
    let mut raw = Vec::with_capacity(states.len());
    for (labels, v) in states {
        outcomes.push(labels);
        raw.push(trace_of_vec(&v, d).re);
    }
    JointDistribution::from_raw(outcomes, raw, tol)
}

/// Regression-type joint distribution: the same instrument chain with
/// every interval replaced by the one-time reduced map on the spin.
pub fn qrt_joint(protocol: &Protocol, p: &ModelParams) -> Result<JointDistribution, Error> {
    qrt_joint_with_tol(protocol, p, CLIP_TOL)
}

pub fn qrt_joint_with_tol(
    protocol: &Protocol,
    p: &ModelParams,
    tol: f64,
) -> Result<JointDistribution, Error> {
    protocol.validate()?;
    let mut states = vec![(Vec::<f64>::new(), vec_op(&protocol.initial_state))];
    let mut prev_t = 0.0;
    for (t, inst) in &protocol.steps {
        let dt = t - prev_t;
        prev_t = *t;
        let lam = reduced_map(dt, p)?;
        let mut next = Vec::with_capacity(states.len() * inst.len());
        for (labels, v) in &states {
            let moved = matvec(&lam, v);
            for (label, el) in inst.outcomes.iter().zip(inst.elements.iter()) {
                let mut tagged = labels.clone();
                tagged.push(*label);
                next.push((tagged, matvec(el, &moved)));
            }
        }
        states = next;
    }
    let mut outcomes = Vec::with_capacity(states.len());
    let mut raw = Vec::with_capacity(states.len());
    for (labels, v) in states {
        outcomes.push(labels);
        raw.push(trace_of_vec(&v, 2).re);
    }
    JointDistribution::from_raw(outcomes, raw, tol)
}

/// Time-ordered two-point function Tr[A2 Λ(t2-t1)[A1 ρ_S(t1)]] evaluated
/// exactly on the spin+mode space with a left multiplication inserted
/// at t1.
pub fn correlator(
    a1: &Matrix,
    a2: &Matrix,
    t1: f64,
    t2: f64,
    p: &ModelParams,
    rho0: &Matrix,
) -> Result<Complex64, Error> {
    if !(t1 >= 0.0 && t2 >= t1) {
        return Err(Error::InvalidParameter(format!(
            "correlator times must satisfy 0 <= t1 <= t2, got ({t1}, {t2})"
        )));
    }
    let l = build_liouvillian_sm(p)?;
    let dm = p.dim_mode();
    let d = p.dim_total();
    let mut v = embed_initial(rho0, p)?;
    if t1 > 0.0 {
        v = matvec(&expm(&(&l * Complex64::new(t1, 0.0)))?, &v);
    }
    v = apply_system_element(&crate::instruments::left_multiplication(a1), &v, dm);
    if t2 > t1 {
        v = matvec(&expm(&(&l * Complex64::new(t2 - t1, 0.0)))?, &v);
    }
    v = apply_system_element(&crate::instruments::left_multiplication(a2), &v, dm);
    Ok(trace_of_vec(&v, d))
}

/// Product-of-labels expectation over the exact joint distribution.
pub fn sequential_moment(protocol: &Protocol, p: &ModelParams) -> Result<f64, Error> {
    let joint = exact_joint(protocol, p)?;
    Ok(joint
        .outcomes
        .iter()
        .zip(joint.raw.iter())
        .map(|(tuple, prob)| tuple.iter().product::<f64>() * prob)
        .sum())
}

/// Both evaluation routes for the gap between the two-point function and
/// the sequential moment.
#[derive(Clone, Copy, Debug)]
pub struct DiscrepancyRoutes {
    /// correlator minus sequential moment.
    pub from_moment: Complex64,
    /// Same quantity from a single exact run with the intervention
    /// (id - dephasing) ∘ left-multiplication at the first time.
    pub from_intervention: Complex64,
}

/// Requires a two-step protocol whose instruments are the Lüders
/// measurements of `a1` and `a2` with eigenvalue labels.
pub fn correlator_sequential_discrepancy(
    a1: &Matrix,
    a2: &Matrix,
    protocol: &Protocol,
    p: &ModelParams,
) -> Result<DiscrepancyRoutes, Error> {
    protocol.validate()?;
    if protocol.steps.len() != 2 {
        return Err(Error::InvalidParameter(
            "discrepancy requires a two-step protocol".into(),
        ));
    }
    let t1 = protocol.steps[0].0;
    let t2 = protocol.steps[1].0;
    let corr = correlator(a1, a2, t1, t2, p, &protocol.initial_state)?;
    let moment = sequential_moment(protocol, p)?;
    let from_moment = corr - Complex64::new(moment, 0.0);

    // dephasing projectors from a1's spectral decomposition
    let (_, vecs) = crate::linops::eigh(a1)?;
    let mut dephase: Matrix = Array2::zeros((4, 4));
    for i in 0..2 {
        let col = vecs.column(i);
        let mut proj: Matrix = Array2::zeros((2, 2));
        for r in 0..2 {
            for c in 0..2 {
                proj[(r, c)] = col[r] * col[c].conj();
            }
        }
        dephase = dephase + crate::linops::sandwich(&proj, &proj);
    }
    let intervention =
        matmul(&(&identity(4) - &dephase), &crate::instruments::left_multiplication(a1));

    let l = build_liouvillian_sm(p)?;
    let dm = p.dim_mode();
    let d = p.dim_total();
    let mut v = embed_initial(&protocol.initial_state, p)?;
    if t1 > 0.0 {
        v = matvec(&expm(&(&l * Complex64::new(t1, 0.0)))?, &v);
    }
    v = apply_system_element(&intervention, &v, dm);
    v = matvec(&expm(&(&l * Complex64::new(t2 - t1, 0.0)))?, &v);
    v = apply_system_element(&crate::instruments::left_multiplication(a2), &v, dm);
    let from_intervention = trace_of_vec(&v, d);
    Ok(DiscrepancyRoutes {
        from_moment,
        from_intervention,
    })
}

/// Uniform-grid propagation engine. All sweep-scale work funnels through
/// one matrix exponential of the generator per parameter point; forward
/// trajectories, reduced maps, and adjoint readout rows are then
/// incremental matrix-vector products.
pub struct PropagatorGrid {
    pub params: ModelParams,
    pub dt: f64,
    n: usize,
    d: usize,
    dm: usize,
    step: Matrix,
    step_t: Matrix,
    /// Reduced maps Λ(k·dt) for k = 0..=n, from matrix-unit tomography.
    pub maps: Vec<Matrix>,
    mode_state: Matrix,
}

impl PropagatorGrid {
    pub fn new(params: &ModelParams, t_max: f64, n_steps: usize) -> Result<Self, Error> {
        if !(t_max > 0.0) || n_steps == 0 {
            return Err(Error::InvalidParameter(
                "grid needs t_max > 0 and at least one step".into(),
            ));
        }
        let l = build_liouvillian_sm(params)?;
        let dt = t_max / n_steps as f64;
        let step = expm(&(&l * Complex64::new(dt, 0.0)))?;
        let step_t = step.t().to_owned();
        let mode_state = thermal_pseudomode_state(params)?;
        let dm = params.dim_mode();
        let d = params.dim_total();

        // tomography trajectories for the reduced-map family
        let mut units: Vec<Vector> = Vec::with_capacity(4);
        for c in 0..2 {
            for r in 0..2 {
                let mut unit: Matrix = Array2::zeros((2, 2));
                unit[(r, c)] = ONE;
                units.push(vec_op(&crate::linops::kron(&unit, &mode_state)));
            }
        }
        let mut maps = Vec::with_capacity(n_steps + 1);
        for k in 0..=n_steps {
            let mut lam: Matrix = Array2::zeros((4, 4));
            for (j, u) in units.iter().enumerate() {
                let col = trace_out_mode(u, dm);
                for i in 0..4 {
                    lam[(i, j)] = col[i];
                }
            }
            maps.push(lam);
            if k < n_steps {
                for u in units.iter_mut() {
                    *u = matvec(&step, u);
                }
            }
        }
        let id_gap = crate::linops::max_abs(&(&maps[0] - &identity(4)));
        if id_gap > 1e-12 {
            return Err(Error::NonFinite("tomography at t=0 is not the identity"));
        }
        Ok(Self {
            params: *params,
            dt,
            n: n_steps,
            d,
            dm,
            step,
            step_t,
            maps,
            mode_state,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn dim_mode(&self) -> usize {
        self.dm
    }

    /// Reduced map Λ(k·dt) from the tomography family.
    pub fn reduced_map_at(&self, k: usize) -> &Matrix {
        &self.maps[k]
    }

    /// vec(rho_s ⊗ thermal mode state).
    pub fn embed(&self, rho_s: &Matrix) -> Vector {
        vec_op(&crate::linops::kron(rho_s, &self.mode_state))
    }

    pub fn step_vec(&self, v: &Vector) -> Vector {
        matvec(&self.step, v)
    }

    /// Spin+mode trajectory at every node, 0..=n.
    pub fn forward_trajectory(&self, rho_s: &Matrix) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.n + 1);
        let mut v = self.embed(rho_s);
        for _ in 0..self.n {
            let next = matvec(&self.step, &v);
            out.push(v);
            v = next;
        }
        out.push(v);
        out
    }

    /// Adjoint readout rows g(m) = Tr ∘ element ∘ E^m for m = 0..=n.
    /// `dot_plain(g(m), v)` is the outcome weight after m further steps.
    pub fn readout_rows(&self, element: &Matrix) -> Vec<Vector> {
        let mut g: Vector = Array1::zeros(self.d * self.d);
        for sig in 0..2 {
            for sigp in 0..2 {
                let coeff = element[(0, sig + 2 * sigp)] + element[(3, sig + 2 * sigp)];
                if coeff == ZERO {
                    continue;
                }
                for m in 0..self.dm {
                    g[(sig * self.dm + m) + self.d * (sigp * self.dm + m)] = coeff;
                }
            }
        }
        let mut rows = Vec::with_capacity(self.n + 1);
        for _ in 0..self.n {
            let next = matvec(&self.step_t, &g);
            rows.push(g);
            g = next;
        }
        rows.push(g);
        rows
    }

    /// Apply a system element to a trajectory vector.
    pub fn apply_element(&self, element: &Matrix, v: &Vector) -> Vector {
        apply_system_element(element, v, self.dm)
    }

    /// Exact two-time probability table p[i1][i2] at nodes k1 <= k2,
    /// given a precomputed trajectory and readout rows per second-step
    /// outcome.
    pub fn exact_two_time(
        &self,
        trajectory: &[Vector],
        rows: &[Vec<Vector>],
        first: &Instrument,
        k1: usize,
        k2: usize,
    ) -> Vec<Vec<f64>> {
        assert!(k1 <= k2 && k2 <= self.n);
        let gap = k2 - k1;
        first
            .elements
            .iter()
            .map(|el| {
                let w = self.apply_element(el, &trajectory[k1]);
                rows.iter()
                    .map(|g| dot_plain(&g[gap], &w).re)
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    /// Regression-type two-time table from the reduced-map family alone.
    pub fn qrt_two_time(
        &self,
        rho0: &Matrix,
        first: &Instrument,
        second: &Instrument,
        k1: usize,
        k2: usize,
    ) -> Vec<Vec<f64>> {
        assert!(k1 <= k2 && k2 <= self.n);
        let v1 = matvec(&self.maps[k1], &vec_op(rho0));
        first
            .elements
            .iter()
            .map(|el1| {
                let w = matvec(&self.maps[k2 - k1], &matvec(el1, &v1));
                second
                    .elements
                    .iter()
                    .map(|el2| trace_of_vec(&matvec(el2, &w), 2).re)
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    /// Regression-type three-time table q[i1][i2][i3] from the
    /// reduced-map family alone, at nodes k1 <= k2 <= k3.
    pub fn qrt_three_time(
        &self,
        rho0: &Matrix,
        first: &Instrument,
        middle: &Instrument,
        last: &Instrument,
        k1: usize,
        k2: usize,
        k3: usize,
    ) -> Vec<Vec<Vec<f64>>> {
        assert!(k1 <= k2 && k2 <= k3 && k3 <= self.n);
        let v1 = matvec(&self.maps[k1], &vec_op(rho0));
        first
            .elements
            .iter()
            .map(|el1| {
                let w1 = matvec(&self.maps[k2 - k1], &matvec(el1, &v1));
                middle
                    .elements
                    .iter()
                    .map(|el2| {
                        let w2 = matvec(&self.maps[k3 - k2], &matvec(el2, &w1));
                        last.elements
                            .iter()
                            .map(|el3| trace_of_vec(&matvec(el3, &w2), 2).re)
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<Vec<f64>>>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruments::{lueders_instrument, Axis};
    use crate::linops::{is_completely_positive, is_trace_preserving, max_abs, sandwich, unvec};
    use crate::model::{sigma_x, sigma_y, sigma_z};
    use proptest::prelude::*;

    fn fig_params() -> ModelParams {
        ModelParams {
            omega0: 4.5,
            eta: 4.5,
            gamma: 0.1,
            lambda: 0.1,
            beta: f64::INFINITY,
            n_max: 8,
        }
    }

    fn z_up() -> Matrix {
        Axis::Z.projector(1.0).unwrap()
    }

    fn x_up() -> Matrix {
        Axis::X.projector(1.0).unwrap()
    }

    fn two_step(rho0: Matrix, a1: Axis, a2: Axis, t1: f64, t2: f64) -> Protocol {
        Protocol {
            initial_state: rho0,
            steps: vec![
                (t1, lueders_instrument(&a1).unwrap()),
                (t2, lueders_instrument(&a2).unwrap()),
            ],
        }
    }

    #[test]
    fn reduced_map_at_zero_is_identity() {
        let lam = reduced_map(0.0, &fig_params()).unwrap();
        assert!(max_abs(&(&lam - &identity(4))) < 1e-12);
    }

    #[test]
    fn uncoupled_reduced_map_is_phase_rotation() {
        let p = ModelParams {
            lambda: 0.0,
            n_max: 2,
            ..fig_params()
        };
        let t = 0.37;
        let lam = reduced_map(t, &p).unwrap();
        let apply = |op: &Matrix| {
            unvec(&matvec(&lam, &vec_op(op)), 2).unwrap()
        };
        let bloch = |rho: &Matrix, dir: &Matrix| {
            matmul(dir, rho).diag().sum().re
        };
        let rho = (identity(2) + sigma_x()) * Complex64::new(0.5, 0.0);
        let out = apply(&rho);
        let angle = p.omega0 * t;
        assert!((bloch(&out, &sigma_z()) - 0.0).abs() < 1e-12);
        assert!((bloch(&out, &sigma_x()) - angle.cos()).abs() < 1e-12);
        assert!((bloch(&out, &sigma_y()) - angle.sin()).abs() < 1e-12);
        let zs = apply(&z_up());
        assert!((bloch(&zs, &sigma_z()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_map_is_cptp_at_sampled_times() {
        let p = fig_params();
        for t in [1.0, 5.0, 10.0] {
            let lam = reduced_map(t, &p).unwrap();
            assert!(is_completely_positive(&lam, 1e-9).unwrap(), "t={t}");
            assert!(is_trace_preserving(&lam, 1e-9).unwrap(), "t={t}");
        }
    }

    #[test]
    fn trivial_instruments_give_unit_mass() {
        let trivial = Instrument {
            outcomes: vec![1.0],
            elements: vec![identity(4)],
        };
        let protocol = Protocol {
            initial_state: z_up(),
            steps: vec![(1.0, trivial.clone()), (2.0, trivial)],
        };
        let joint = exact_joint(&protocol, &fig_params()).unwrap();
        assert_eq!(joint.len(), 1);
        assert!((joint.probabilities[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncoupled_populations_are_deterministic() {
        let p = ModelParams {
            lambda: 0.0,
            n_max: 2,
            ..fig_params()
        };
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 3.0, 7.0);
        let joint = exact_joint(&protocol, &p).unwrap();
        assert!((joint.probabilities[0] - 1.0).abs() < 1e-12);
        for p in &joint.probabilities[1..] {
            assert!(p.abs() < 1e-12);
        }
        let qrt = qrt_joint(&protocol, &p).unwrap();
        for (a, b) in joint.raw.iter().zip(qrt.raw.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn joint_normalization_and_no_signaling() {
        let p = fig_params();
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 10.0);
        let joint = exact_joint(&protocol, &p).unwrap();
        assert!((joint.sum() - 1.0).abs() < 1e-10);
        let qrt = qrt_joint(&protocol, &p).unwrap();
        assert!((qrt.sum() - 1.0).abs() < 1e-10);

        // marginal over the later outcome must match the one-time weight
        let lam1 = reduced_map(5.0, &p).unwrap();
        let rho1 = unvec(&matvec(&lam1, &vec_op(&z_up())), 2).unwrap();
        let inst = lueders_instrument(&Axis::Z).unwrap();
        for (i, el) in inst.elements.iter().enumerate() {
            let weight = crate::instruments::outcome_weight(el, &rho1).unwrap();
            let marginal: f64 = joint
                .raw
                .iter()
                .zip(joint.outcomes.iter())
                .filter(|(_, tuple)| tuple[0] == inst.outcomes[i])
                .map(|(p, _)| p)
                .sum();
            assert!((marginal - weight).abs() < 1e-10, "outcome {i}");
        }
        // and be independent of the later time
        let later = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 8.0);
        let joint2 = exact_joint(&later, &p).unwrap();
        for i in 0..2 {
            let m1: f64 = joint.raw[2 * i] + joint.raw[2 * i + 1];
            let m2: f64 = joint2.raw[2 * i] + joint2.raw[2 * i + 1];
            assert!((m1 - m2).abs() < 1e-10);
        }
    }

    #[test]
    fn immediate_first_measurement_matches_regression() {
        let p = fig_params();
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 0.0, 3.0);
        let joint = exact_joint(&protocol, &p).unwrap();
        let qrt = qrt_joint(&protocol, &p).unwrap();
        for (a, b) in joint.raw.iter().zip(qrt.raw.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn separated_measurements_expose_memory() {
        let p = fig_params();
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 10.0);
        let joint = exact_joint(&protocol, &p).unwrap();
        let qrt = qrt_joint(&protocol, &p).unwrap();
        let gap = joint.kolmogorov_distance(&qrt);
        assert!(gap > 5e-3, "distance {gap}");
    }

    #[test]
    fn fock_cutoff_is_converged_at_reference_point() {
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 10.0);
        let a = exact_joint(&protocol, &fig_params()).unwrap();
        let b = exact_joint(
            &protocol,
            &ModelParams {
                n_max: 10,
                ..fig_params()
            },
        )
        .unwrap();
        for (x, y) in a.raw.iter().zip(b.raw.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn grid_engine_matches_one_shot_joint() {
        let p = fig_params();
        // deliberately fine grid so each interval is many sub-steps
        let grid = PropagatorGrid::new(&p, 10.0, 40).unwrap();
        let inst = lueders_instrument(&Axis::Z).unwrap();
        let traj = grid.forward_trajectory(&z_up());
        let rows: Vec<_> = inst.elements.iter().map(|e| grid.readout_rows(e)).collect();
        let table = grid.exact_two_time(&traj, &rows, &inst, 20, 40);
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 10.0);
        let joint = exact_joint(&protocol, &p).unwrap();
        for i1 in 0..2 {
            for i2 in 0..2 {
                assert!(
                    (table[i1][i2] - joint.raw[2 * i1 + i2]).abs() < 1e-10,
                    "({i1},{i2}): {} vs {}",
                    table[i1][i2],
                    joint.raw[2 * i1 + i2]
                );
            }
        }
        let qtable = grid.qrt_two_time(&z_up(), &inst, &inst, 20, 40);
        let qrt = qrt_joint(&protocol, &p).unwrap();
        for i1 in 0..2 {
            for i2 in 0..2 {
                assert!((qtable[i1][i2] - qrt.raw[2 * i1 + i2]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn grid_reduced_maps_match_one_shot() {
        let p = fig_params();
        let grid = PropagatorGrid::new(&p, 4.0, 8).unwrap();
        for k in [0usize, 3, 8] {
            let lam = reduced_map(grid.time(k), &p).unwrap();
            assert!(max_abs(&(&lam - &grid.maps[k])) < 1e-10, "k={k}");
        }
    }

    #[test]
    fn regression_prediction_is_tomography_invariant() {
        // rebuild the reduced map from physical-state inputs instead of
        // matrix units; predictions must not move
        let p = fig_params();
        let t1 = 2.0;
        let states = [
            z_up(),
            Axis::Z.projector(-1.0).unwrap(),
            x_up(),
            Axis::Y.projector(1.0).unwrap(),
        ];
        let images: Vec<Matrix> = states
            .iter()
            .map(|s| {
                let l = build_liouvillian_sm(&p).unwrap();
                let e = expm(&(&l * Complex64::new(t1, 0.0))).unwrap();
                let v = matvec(&e, &embed_initial(s, &p).unwrap());
                unvec(&trace_out_mode(&v, p.dim_mode()), 2).unwrap()
            })
            .collect();
        // E00 -> images[0], E11 -> images[1];
        // E01 + E10 = 2|x+> - E00 - E11; E10 - E01 = (2|y+> - E00 - E11)/i
        let s = (&images[2] * Complex64::new(2.0, 0.0)) - &images[0] - &images[1];
        let t = ((&images[3] * Complex64::new(2.0, 0.0)) - &images[0] - &images[1])
            .mapv(|z| z / Complex64::new(0.0, 1.0));
        let e10 = (&s + &t) * Complex64::new(0.5, 0.0);
        let e01 = (&s - &t) * Complex64::new(0.5, 0.0);
        let mut rebuilt: Matrix = Array2::zeros((4, 4));
        for (j, img) in [(0, &images[0]), (3, &images[1]), (2, &e01), (1, &e10)] {
            let col = vec_op(img);
            for i in 0..4 {
                rebuilt[(i, j)] = col[i];
            }
        }
        let standard = reduced_map(t1, &p).unwrap();
        assert!(max_abs(&(&rebuilt - &standard)) < 1e-12);
    }

    #[test]
    fn correlator_reference_values() {
        let p = fig_params();
        let id = identity(2);
        let c = correlator(&id, &id, 1.0, 4.0, &p, &z_up()).unwrap();
        assert!((c - ONE).norm() < 1e-10);
        let eq = correlator(&sigma_z(), &sigma_z(), 2.0, 2.0, &p, &z_up()).unwrap();
        assert!((eq - ONE).norm() < 1e-10);
        let free = ModelParams {
            lambda: 0.0,
            n_max: 2,
            ..fig_params()
        };
        for (t1, t2) in [(0.0, 1.0), (2.0, 6.0)] {
            let c = correlator(&sigma_z(), &sigma_z(), t1, t2, &free, &z_up()).unwrap();
            assert!((c - ONE).norm() < 1e-12, "({t1},{t2})");
        }
    }

    #[test]
    fn sequential_moment_reference_values() {
        let free = ModelParams {
            lambda: 0.0,
            n_max: 2,
            ..fig_params()
        };
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 1.0, 2.0);
        let m = sequential_moment(&protocol, &free).unwrap();
        assert!((m - 1.0).abs() < 1e-12);

        let p = fig_params();
        let protocol = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 10.0);
        let m = sequential_moment(&protocol, &p).unwrap();
        assert!((-1.0..=1.0).contains(&m));
        // with eigenvalue-labeled projective outcomes the moment equals
        // the real part of the two-point function; the gap is purely
        // imaginary (anti-Hermitian off-diagonal block)
        let c = correlator(&sigma_z(), &sigma_z(), 5.0, 10.0, &p, &z_up()).unwrap();
        assert!((c.re - m).abs() < 1e-9, "{} vs {m}", c.re);
    }

    #[test]
    fn discrepancy_routes_agree() {
        let p = fig_params();
        // immediate measurement on a factorized diagonal state: the
        // off-diagonal block vanishes identically, so both routes give 0
        let diag0 = two_step(z_up(), Axis::Z, Axis::Z, 0.0, 10.0);
        let r = correlator_sequential_discrepancy(&sigma_z(), &sigma_z(), &diag0, &p).unwrap();
        assert!(r.from_moment.norm() < 1e-10, "{:?}", r);
        assert!(r.from_intervention.norm() < 1e-10);

        // later measurement: spin-mode correlations make the gap nonzero
        // but purely imaginary for eigenvalue-labeled z outcomes
        let diag = two_step(z_up(), Axis::Z, Axis::Z, 5.0, 10.0);
        let r = correlator_sequential_discrepancy(&sigma_z(), &sigma_z(), &diag, &p).unwrap();
        assert!(r.from_moment.re.abs() < 1e-9, "{:?}", r);
        assert!(r.from_moment.im.abs() > 1e-3);
        assert!((r.from_moment - r.from_intervention).norm() < 1e-9);

        // coherent case: nonzero and route-consistent
        let coh = two_step(x_up(), Axis::Z, Axis::X, 5.0, 10.0);
        let r = correlator_sequential_discrepancy(&sigma_z(), &sigma_x(), &coh, &p).unwrap();
        assert!(r.from_moment.norm() > 1e-3, "{:?}", r);
        assert!((r.from_moment - r.from_intervention).norm() < 1e-9, "{r:?}");

        let free = ModelParams {
            lambda: 0.0,
            n_max: 2,
            ..fig_params()
        };
        let r = correlator_sequential_discrepancy(&sigma_z(), &sigma_x(), &coh, &free).unwrap();
        assert!((r.from_moment - r.from_intervention).norm() < 1e-12);
    }

    #[test]
    fn clipping_counts_and_rejects() {
        let tuples = vec![vec![1.0], vec![-1.0]];
        let jd = JointDistribution::from_raw(tuples.clone(), vec![1.0, -5e-11], 1e-10).unwrap();
        assert_eq!(jd.clip.clipped, 1);
        assert_eq!(jd.probabilities[1], 0.0);
        assert_eq!(jd.raw[1], -5e-11);
        let err = JointDistribution::from_raw(tuples, vec![1.0, -1e-9], 1e-10);
        assert!(matches!(err, Err(Error::ProbabilityOutOfRange { .. })));
    }

    #[test]
    fn lifted_element_matches_explicit_kron() {
        let p = ModelParams {
            n_max: 2,
            ..fig_params()
        };
        let dm = p.dim_mode();
        let proj = Axis::X.projector(1.0).unwrap();
        let el = sandwich(&proj, &proj);
        let lifted = sandwich(
            &crate::linops::kron(&proj, &identity(dm)),
            &crate::linops::kron(&proj, &identity(dm)),
        );
        let mut seed_rho: Matrix = Array2::zeros((p.dim_total(), p.dim_total()));
        for i in 0..p.dim_total() {
            for j in 0..p.dim_total() {
                seed_rho[(i, j)] = Complex64::new(
                    ((i * 7 + j * 3) % 11) as f64 / 11.0,
                    ((i * 5 + j * 2) % 13) as f64 / 13.0,
                );
            }
        }
        let v = vec_op(&seed_rho);
        let a = apply_system_element(&el, &v, dm);
        let b = matvec(&lifted, &v);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn random_two_step_protocols_are_consistent(
            omega0 in 1.0f64..6.0,
            gamma in 0.05f64..0.8,
            lambda in 0.0f64..0.3,
            t1 in 0.1f64..3.0,
            gap in 0.1f64..3.0,
            axis1 in 0usize..3,
            axis2 in 0usize..3,
        ) {
            let p = ModelParams {
                omega0,
                eta: 4.5,
                gamma,
                lambda,
                beta: f64::INFINITY,
                n_max: 2,
            };
            let axes = [Axis::X, Axis::Y, Axis::Z];
            let protocol = two_step(z_up(), axes[axis1], axes[axis2], t1, t1 + gap);
            let joint = exact_joint(&protocol, &p).unwrap();
            prop_assert!((joint.sum() - 1.0).abs() < 1e-10);
            let qrt = qrt_joint(&protocol, &p).unwrap();
            prop_assert!((qrt.sum() - 1.0).abs() < 1e-10);
            for pr in joint.raw.iter().chain(qrt.raw.iter()) {
                prop_assert!(*pr > -1e-10 && *pr < 1.0 + 1e-10);
            }
            // marginal over the final outcome equals the one-time weight
            let lam1 = reduced_map(t1, &p).unwrap();
            let rho1 = unvec(&matvec(&lam1, &vec_op(&z_up())), 2).unwrap();
            let inst1 = lueders_instrument(&axes[axis1]).unwrap();
            for (i, el) in inst1.elements.iter().enumerate() {
                let w = crate::instruments::outcome_weight(el, &rho1).unwrap();
                let marg = joint.raw[2 * i] + joint.raw[2 * i + 1];
                prop_assert!((marg - w).abs() < 1e-10);
            }
        }
    }
}
