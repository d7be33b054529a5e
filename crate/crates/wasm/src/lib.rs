//! Browser-facing wrappers around the core simulation. Each export
//! takes plain numbers, runs a small fixed-resolution computation, and
//! returns a JSON string the page can plot directly. Sizes are capped
//! so a slider drag stays responsive; the native CLI is the tool for
//! production-resolution sweeps.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use qrtsim::instruments::{lueders_instrument, Axis};
use qrtsim::model::{bath_correlation, ModelParams};
use qrtsim::multitime::{ClipStats, PropagatorGrid, CLIP_TOL};
use qrtsim::quantifiers::{epsilon_two_time_grid, q_witness, SphereSampler};
use qrtsim::Error;

/// Fock cutoff for interactive use; plenty for the coupling range the
/// page exposes.
const DEMO_N_MAX: usize = 6;
const DEMO_T_MAX: f64 = 10.0;
const MAX_POINTS: usize = 41;
/// Bloch-sphere lattice for the witness; coarser than the CLI default
/// but the refinement step recovers most of the gap.
const DEMO_SPHERE: usize = 512;

fn demo_params(omega0: f64, gamma: f64, lambda: f64, beta: f64) -> Result<ModelParams, String> {
    let p = ModelParams {
        omega0,
        eta: 4.5,
        gamma,
        lambda,
        beta,
        n_max: DEMO_N_MAX,
    };
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

fn check_points(n_points: usize) -> Result<usize, String> {
    if !(3..=MAX_POINTS).contains(&n_points) {
        return Err(format!("n_points must be in [3, {MAX_POINTS}], got {n_points}"));
    }
    Ok(n_points - 1)
}

#[derive(Serialize)]
struct Landscape {
    times: Vec<f64>,
    /// values[i][j] is the deviation at t1 = times[i], t2 = times[j];
    /// null below the diagonal.
    values: Vec<Vec<Option<f64>>>,
    max: f64,
}

/// Deviation between exact and regression-type two-outcome statistics
/// over all ordered measurement-time pairs, z measurements from the
/// excited state.
#[wasm_bindgen]
pub fn deviation_landscape(
    omega0: f64,
    gamma: f64,
    lambda: f64,
    n_points: usize,
) -> Result<String, String> {
    let n = check_points(n_points)?;
    let params = demo_params(omega0, gamma, lambda, f64::INFINITY)?;
    let grid = PropagatorGrid::new(&params, DEMO_T_MAX, n).map_err(|e| e.to_string())?;
    let inst = lueders_instrument(&Axis::Z).map_err(|e| e.to_string())?;
    let rho0 = Axis::Z.projector(1.0).map_err(|e| e.to_string())?;
    let trajectory = grid.forward_trajectory(&rho0);
    let rows: Vec<_> = inst
        .elements
        .iter()
        .map(|el| grid.readout_rows(el))
        .collect();

    let mut clip = ClipStats::default();
    let mut values = vec![vec![None; n + 1]; n + 1];
    let mut max = 0.0_f64;
    for k1 in 0..=n {
        for k2 in k1..=n {
            let eps = epsilon_two_time_grid(
                &grid, &trajectory, &rows, &rho0, &inst, &inst, k1, k2, &mut clip, CLIP_TOL,
            )
            .map_err(|e| e.to_string())?;
            max = max.max(eps);
            values[k1][k2] = Some(eps);
        }
    }
    let out = Landscape {
        times: (0..=n).map(|k| grid.time(k)).collect(),
        values,
        max,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct WitnessCurve {
    times: Vec<f64>,
    /// q at intermediate time t1 with the final map fixed at t_max;
    /// null where the intermediate map is numerically singular.
    q: Vec<Option<f64>>,
    excluded: usize,
}

/// One-time divisibility witness along the intermediate time, final
/// map pinned at the end of the window.
#[wasm_bindgen]
pub fn witness_curve(
    omega0: f64,
    gamma: f64,
    lambda: f64,
    n_points: usize,
) -> Result<String, String> {
    let n = check_points(n_points)?;
    let params = demo_params(omega0, gamma, lambda, f64::INFINITY)?;
    let grid = PropagatorGrid::new(&params, DEMO_T_MAX, n).map_err(|e| e.to_string())?;
    let sampler = SphereSampler::new(DEMO_SPHERE);
    let last = grid.reduced_map_at(n);

    let mut q = Vec::with_capacity(n + 1);
    let mut excluded = 0;
    for k in 0..=n {
        match q_witness(last, grid.reduced_map_at(k), &sampler, 1e-8, grid.time(k)) {
            Ok(v) => q.push(Some(v)),
            Err(Error::IllConditioned { .. }) => {
                q.push(None);
                excluded += 1;
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let out = WitnessCurve {
        times: (0..=n).map(|k| grid.time(k)).collect(),
        q,
        excluded,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CorrelationCurve {
    times: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Bath correlation function of the underlying environment; `beta <= 0`
/// selects zero temperature.
#[wasm_bindgen]
pub fn correlation_curve(
    gamma: f64,
    lambda: f64,
    beta: f64,
    n_points: usize,
) -> Result<String, String> {
    let n = check_points(n_points)?;
    let beta = if beta <= 0.0 { f64::INFINITY } else { beta };
    let params = demo_params(4.5, gamma, lambda, beta)?;
    let dt = DEMO_T_MAX / n as f64;
    let mut out = CorrelationCurve {
        times: Vec::with_capacity(n + 1),
        re: Vec::with_capacity(n + 1),
        im: Vec::with_capacity(n + 1),
    };
    for k in 0..=n {
        let t = k as f64 * dt;
        let c = bath_correlation(t, &params).map_err(|e| e.to_string())?;
        out.times.push(t);
        out.re.push(c.re);
        out.im.push(c.im);
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}
