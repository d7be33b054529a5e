//! Experiment execution: one function per kind, a worker pool over
//! grid points, rows merged in grid order so reruns are bit-identical.

use rayon::prelude::*;

use qrtsim::instruments::{lueders_instrument, Axis, Instrument, ProtocolTemplate};
use qrtsim::linops::{matvec, vec_op, Matrix};
use qrtsim::model::{n_thermal, ModelParams};
use qrtsim::multitime::{ClipStats, PropagatorGrid, CLIP_TOL};
use qrtsim::perturbation::phi_q_on_grid;
use qrtsim::quantifiers::{
    avg_epsilon_qrt_3_grid, avg_epsilon_qrt_grid, avg_n_witness, epsilon_two_time_grid,
    q_witness, table_distance, SphereSampler,
};
use qrtsim::Error;

use crate::config::{ExperimentConfig, ExperimentKind, ProtocolSection, StateLabel};
use crate::table::{Diagnostics, Metadata, ResultTable};

fn core_err(e: Error) -> String {
    e.to_string()
}

fn initial_state(label: StateLabel) -> Matrix {
    let axis_and_sign = match label {
        StateLabel::Excited => (Axis::Z, 1.0),
        StateLabel::Ground => (Axis::Z, -1.0),
        StateLabel::Plus => (Axis::X, 1.0),
    };
    axis_and_sign
        .0
        .projector(axis_and_sign.1)
        .expect("fixed axes always yield projectors")
}

fn instruments_of(protocol: &ProtocolSection) -> Result<Vec<Instrument>, String> {
    protocol
        .axes
        .iter()
        .map(|a| lueders_instrument(&a.to_axis()).map_err(core_err))
        .collect()
}

fn metadata(config: &ExperimentConfig) -> Metadata {
    Metadata {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        diagnostics: Diagnostics::default(),
    }
}

fn ensure_finite(rows: &[Vec<f64>]) -> Result<(), String> {
    for row in rows {
        for &x in row {
            if x.is_nan() {
                return Err("internal error: NaN in result row".into());
            }
        }
    }
    Ok(())
}

pub fn run(config: &ExperimentConfig) -> Result<ResultTable, String> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Landscape => run_landscape(config),
        ExperimentKind::DivisibilityHeatmap => run_divisibility_heatmap(config),
        ExperimentKind::AvgHeatmap => run_avg_heatmap(config),
        ExperimentKind::PerturbationSweep => run_perturbation_sweep(config),
        ExperimentKind::ThreeTimeCompare => run_three_time_compare(config),
        ExperimentKind::TemperatureCompare => run_temperature_compare(config),
    }
}

/// Deviation over the (t1, t2) triangle from one shared propagator
/// grid; node values are exact powers of the one-step propagator.
fn run_landscape(config: &ExperimentConfig) -> Result<ResultTable, String> {
    let params = config.model.to_params()?;
    let protocol = config.protocol.as_ref().expect("validated");
    let insts = instruments_of(protocol)?;
    let rho0 = initial_state(protocol.initial_state);
    let n = config.sweep.time_points.expect("validated") - 1;
    let grid = PropagatorGrid::new(&params, config.t_max(), n).map_err(core_err)?;
    let trajectory = grid.forward_trajectory(&rho0);
    let rows: Vec<_> = insts[1]
        .elements
        .iter()
        .map(|el| grid.readout_rows(el))
        .collect();

    let mut table = ResultTable::new(vec!["t1", "t2", "eps_qrt"], metadata(config));
    let mut clip = ClipStats::default();
    for k1 in 0..=n {
        for k2 in k1..=n {
            let eps = epsilon_two_time_grid(
                &grid, &trajectory, &rows, &rho0, &insts[0], &insts[1], k1, k2, &mut clip,
                CLIP_TOL,
            )
            .map_err(core_err)?;
            table.push_row(vec![grid.time(k1), grid.time(k2), eps]);
        }
    }
    table.metadata.diagnostics.absorb_clip(&clip);
    ensure_finite(&table.rows)?;
    Ok(table)
}

/// Positivity witness over the (t1, t2) triangle; numerically singular
/// intermediate maps are skipped and counted.
fn run_divisibility_heatmap(config: &ExperimentConfig) -> Result<ResultTable, String> {
    let params = config.model.to_params()?;
    let n = config.sweep.time_points.expect("validated") - 1;
    let grid = PropagatorGrid::new(&params, config.t_max(), n).map_err(core_err)?;
    let sampler = SphereSampler::new(config.numerics.sampler_n);

    let mut table = ResultTable::new(vec!["t1", "t2", "q"], metadata(config));
    for k1 in 0..=n {
        for k2 in k1..=n {
            match q_witness(
                grid.reduced_map_at(k2),
                grid.reduced_map_at(k1),
                &sampler,
                config.numerics.conditioning,
                grid.time(k1),
            ) {
                Ok(q) => table.push_row(vec![grid.time(k1), grid.time(k2), q]),
                Err(Error::IllConditioned { .. }) => {
                    table.metadata.diagnostics.conditioning_excluded += 1;
                }
                Err(e) => return Err(core_err(e)),
            }
        }
    }
    ensure_finite(&table.rows)?;
    Ok(table)
}

struct PointOutput {
    rows: Vec<Vec<f64>>,
    diagnostics: Diagnostics,
}

fn merge_points(
    table: &mut ResultTable,
    points: Vec<Result<PointOutput, String>>,
) -> Result<(), String> {
    for point in points {
        let point = point?;
        table.metadata.diagnostics.merge(&point.diagnostics);
        for row in point.rows {
            table.push_row(row);
        }
    }
    ensure_finite(&table.rows)?;
    Ok(())
}

/// Averaged deviation and averaged witness over the (omega0, gamma)
/// plane; all horizons share one propagator grid per point.
fn run_avg_heatmap(config: &ExperimentConfig) -> Result<ResultTable, String> {
    let base = config.model.to_params()?;
    let protocol = config.protocol.as_ref().expect("validated");
    let insts = instruments_of(protocol)?;
    let template = ProtocolTemplate {
        initial_state: initial_state(protocol.initial_state),
        instruments: insts,
    };
    let om_values = config.sweep.omega0.expect("validated").values();
    let ga_values = config.sweep.gamma.expect("validated").values();
    let horizons: Vec<(f64, usize, usize)> = config
        .sweep
        .t_f
        .as_ref()
        .expect("validated")
        .iter()
        .map(|&t_f| {
            let (k_f, stride) = config.stride_for(t_f).expect("validated");
            (t_f, k_f, stride)
        })
        .collect();
    let sampler = SphereSampler::new(config.numerics.sampler_n);
    let conditioning = config.numerics.conditioning;
    let engine_steps = config.engine_steps();
    let t_max = config.t_max();

    let points: Vec<(f64, f64)> = ga_values
        .iter()
        .flat_map(|&g| om_values.iter().map(move |&w| (g, w)))
        .collect();
    let outputs: Vec<Result<PointOutput, String>> = points
        .par_iter()
        .map(|&(gamma, omega0)| {
            let params = ModelParams { omega0, gamma, ..base };
            params.validate().map_err(core_err)?;
            let grid = PropagatorGrid::new(&params, t_max, engine_steps).map_err(core_err)?;
            let mut out = PointOutput {
                rows: Vec::new(),
                diagnostics: Diagnostics::default(),
            };
            for &(t_f, k_f, stride) in &horizons {
                let mut clip = ClipStats::default();
                let eps = avg_epsilon_qrt_grid(&grid, &template, k_f, stride, &mut clip, CLIP_TOL)
                    .map_err(core_err)?;
                let witness = avg_n_witness(&grid, k_f, stride, &sampler, conditioning)
                    .map_err(core_err)?;
                out.diagnostics.absorb_clip(&clip);
                out.diagnostics.conditioning_excluded += witness.excluded;
                out.rows
                    .push(vec![omega0, gamma, t_f, eps, witness.value]);
            }
            Ok(out)
        })
        .collect();

    let mut table = ResultTable::new(
        vec!["omega0", "gamma", "t_f", "eps_avg", "n_avg"],
        metadata(config),
    );
    merge_points(&mut table, outputs)?;
    Ok(table)
}

/// Plain versus second-order-corrected reconstruction error across a
/// coupling sweep, engine-aligned quadrature.
fn run_perturbation_sweep(config: &ExperimentConfig) -> Result<ResultTable, String> {
    let base = config.model.to_params()?;
    let protocol = config.protocol.as_ref().expect("validated");
    let insts = instruments_of(protocol)?;
    let rho0 = initial_state(protocol.initial_state);
    let times = protocol.times.as_ref().expect("validated");
    let steps = config.engine_steps();
    let t2 = times[1];
    let k1 = (times[0] / t2 * steps as f64).round() as usize;
    let quad_stride = k1 / (config.numerics.quad_grid - 1);
    let lambdas = config.sweep.lambda.expect("validated").values();

    let outputs: Vec<Result<PointOutput, String>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let params = ModelParams { lambda, ..base };
            params.validate().map_err(core_err)?;
            let grid = PropagatorGrid::new(&params, t2, steps).map_err(core_err)?;
            let trajectory = grid.forward_trajectory(&rho0);
            let rows: Vec<_> = insts[1]
                .elements
                .iter()
                .map(|el| grid.readout_rows(el))
                .collect();
            let exact: Vec<f64> = grid
                .exact_two_time(&trajectory, &rows, &insts[0], k1, steps)
                .into_iter()
                .flatten()
                .collect();
            let plain: Vec<f64> = grid
                .qrt_two_time(&rho0, &insts[0], &insts[1], k1, steps)
                .into_iter()
                .flatten()
                .collect();

            // Corrected table: add the Q-part contribution per first
            // outcome, traced against the second elements.
            let rho0_vec = vec_op(&rho0);
            let mut corrected = plain.clone();
            let mut idx = 0;
            for el1 in &insts[0].elements {
                let phi =
                    phi_q_on_grid(el1, &grid, k1, steps, quad_stride).map_err(core_err)?;
                let w = matvec(&phi, &rho0_vec);
                for el2 in &insts[1].elements {
                    let v = matvec(el2, &w);
                    corrected[idx] += (v[0] + v[3]).re;
                    idx += 1;
                }
            }

            let mut clip = ClipStats::default();
            let eps_qrt =
                table_distance(&exact, &plain, &mut clip, CLIP_TOL).map_err(core_err)?;
            let eps_l2 =
                table_distance(&exact, &corrected, &mut clip, CLIP_TOL).map_err(core_err)?;
            let mut diagnostics = Diagnostics::default();
            diagnostics.absorb_clip(&clip);
            Ok(PointOutput {
                rows: vec![vec![lambda, eps_qrt, eps_l2]],
                diagnostics,
            })
        })
        .collect();

    let mut table = ResultTable::new(
        vec!["lambda", "eps_qrt", "eps_lambda2"],
        metadata(config),
    );
    merge_points(&mut table, outputs)?;
    Ok(table)
}

/// Two-time and three-time averaged deviations for the commuting base
/// protocol and its middle-axis-switched variant, one engine per
/// point, conditioned trajectories shared between the two variants.
fn run_three_time_compare(config: &ExperimentConfig) -> Result<ResultTable, String> {
    let base = config.model.to_params()?;
    let protocol = config.protocol.as_ref().expect("validated");
    let insts = instruments_of(protocol)?;
    let rho0 = initial_state(protocol.initial_state);
    let x_inst = lueders_instrument(&Axis::X).map_err(core_err)?;
    let om_values = config.sweep.omega0.expect("validated").values();
    let ga_values = config.sweep.gamma.expect("validated").values();
    let (k_f, stride) = config.stride_for(config.t_max()).expect("validated");
    let engine_steps = config.engine_steps();
    let t_max = config.t_max();

    let points: Vec<(f64, f64)> = ga_values
        .iter()
        .flat_map(|&g| om_values.iter().map(move |&w| (g, w)))
        .collect();
    let outputs: Vec<Result<PointOutput, String>> = points
        .par_iter()
        .map(|&(gamma, omega0)| {
            let params = ModelParams { omega0, gamma, ..base };
            params.validate().map_err(core_err)?;
            let grid = PropagatorGrid::new(&params, t_max, engine_steps).map_err(core_err)?;
            let mut clip = ClipStats::default();

            let two_time = |second: &Instrument, clip: &mut ClipStats| -> Result<f64, String> {
                let template = ProtocolTemplate {
                    initial_state: rho0.clone(),
                    instruments: vec![insts[0].clone(), second.clone()],
                };
                avg_epsilon_qrt_grid(&grid, &template, k_f, stride, clip, CLIP_TOL)
                    .map_err(core_err)
            };
            let eps_zz = two_time(&insts[1], &mut clip)?;
            let eps_zx = two_time(&x_inst, &mut clip)?;

            let three = avg_epsilon_qrt_3_grid(
                &grid,
                &rho0,
                &insts[0],
                &[&insts[1], &x_inst],
                &insts[2],
                k_f,
                stride,
                &mut clip,
                CLIP_TOL,
            )
            .map_err(core_err)?;

            let mut diagnostics = Diagnostics::default();
            diagnostics.absorb_clip(&clip);
            Ok(PointOutput {
                rows: vec![vec![omega0, gamma, eps_zz, eps_zx, three[0], three[1]]],
                diagnostics,
            })
        })
        .collect();

    let mut table = ResultTable::new(
        vec![
            "omega0",
            "gamma",
            "eps_avg_2t_commuting",
            "eps_avg_2t_mixed",
            "eps_avg_3t_commuting",
            "eps_avg_3t_mixed",
        ],
        metadata(config),
    );
    merge_points(&mut table, outputs)?;
    Ok(table)
}

/// Averaged deviation per temperature case over a small parameter
/// patch; Fock cutoffs follow the thermal occupation.
fn run_temperature_compare(config: &ExperimentConfig) -> Result<ResultTable, String> {
    let base = config.model.to_params()?;
    let protocol = config.protocol.as_ref().expect("validated");
    let insts = instruments_of(protocol)?;
    let template = ProtocolTemplate {
        initial_state: initial_state(protocol.initial_state),
        instruments: insts,
    };
    let om_values = config.sweep.omega0.expect("validated").values();
    let ga_values = config.sweep.gamma.expect("validated").values();
    let cases = &config.temperature.as_ref().expect("validated").cases;
    let (k_f, stride) = config.stride_for(config.t_max()).expect("validated");
    let engine_steps = config.engine_steps();
    let t_max = config.t_max();

    let mut jobs: Vec<(f64, usize, f64, f64)> = Vec::new();
    for case in cases {
        let beta = case.beta.to_f64()?;
        for &gamma in &ga_values {
            for &omega0 in &om_values {
                jobs.push((beta, case.n_max, gamma, omega0));
            }
        }
    }

    let outputs: Vec<Result<PointOutput, String>> = jobs
        .par_iter()
        .map(|&(beta, n_max, gamma, omega0)| {
            let params = ModelParams {
                omega0,
                gamma,
                beta,
                n_max,
                ..base
            };
            params.validate().map_err(core_err)?;
            let occupation = n_thermal(params.eta, beta).map_err(core_err)?;
            let grid = PropagatorGrid::new(&params, t_max, engine_steps).map_err(|e| {
                format!("beta = {beta}: {e}")
            })?;
            let mut clip = ClipStats::default();
            let eps = avg_epsilon_qrt_grid(&grid, &template, k_f, stride, &mut clip, CLIP_TOL)
                .map_err(core_err)?;
            let mut diagnostics = Diagnostics::default();
            diagnostics.absorb_clip(&clip);
            Ok(PointOutput {
                rows: vec![vec![omega0, gamma, beta, occupation, n_max as f64, eps]],
                diagnostics,
            })
        })
        .collect();

    let mut table = ResultTable::new(
        vec!["omega0", "gamma", "beta", "n_beta", "n_max", "eps_avg"],
        metadata(config),
    );
    merge_points(&mut table, outputs)?;
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub label: String,
    pub base: f64,
    pub refined: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub probes: Vec<ProbeResult>,
    pub failures: Vec<String>,
    pub max_deviation: f64,
    pub tol: f64,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_deviation <= self.tol
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.probes {
            out.push_str(&format!(
                "{}: base {:.9e}, refined {:.9e}, deviation {:.3e}\n",
                p.label, p.base, p.refined, p.deviation
            ));
        }
        for f in &self.failures {
            out.push_str(&format!("failure: {f}\n"));
        }
        out.push_str(&format!(
            "max deviation {:.3e} against tolerance {:.1e}: {}\n",
            self.max_deviation,
            self.tol,
            if self.passed() { "pass" } else { "FAIL" }
        ));
        out
    }
}

/// Scalar probes per experiment kind, evaluated at a designated small
/// subset of grid points for a given Fock cutoff.
fn probe_values(
    config: &ExperimentConfig,
    n_max: usize,
) -> Result<Vec<(String, f64)>, String> {
    let params = ModelParams {
        n_max,
        ..config.model.to_params()?
    };
    params.validate().map_err(core_err)?;
    let t_max = config.t_max();
    let mut probes = Vec::new();

    match config.kind {
        ExperimentKind::Landscape | ExperimentKind::DivisibilityHeatmap => {
            let grid = PropagatorGrid::new(&params, t_max, 4).map_err(core_err)?;
            if config.kind == ExperimentKind::Landscape {
                let protocol = config.protocol.as_ref().expect("validated");
                let insts = instruments_of(protocol)?;
                let rho0 = initial_state(protocol.initial_state);
                let trajectory = grid.forward_trajectory(&rho0);
                let rows: Vec<_> = insts[1]
                    .elements
                    .iter()
                    .map(|el| grid.readout_rows(el))
                    .collect();
                for (k1, k2) in [(2usize, 4usize), (1, 2), (1, 3)] {
                    let mut clip = ClipStats::default();
                    let eps = epsilon_two_time_grid(
                        &grid, &trajectory, &rows, &rho0, &insts[0], &insts[1], k1, k2,
                        &mut clip, CLIP_TOL,
                    )
                    .map_err(core_err)?;
                    probes.push((
                        format!("eps_qrt(t1={}, t2={})", grid.time(k1), grid.time(k2)),
                        eps,
                    ));
                }
            } else {
                let sampler = SphereSampler::new(config.numerics.sampler_n);
                for (k1, k2) in [(2usize, 4usize), (1, 3)] {
                    let q = q_witness(
                        grid.reduced_map_at(k2),
                        grid.reduced_map_at(k1),
                        &sampler,
                        config.numerics.conditioning,
                        grid.time(k1),
                    )
                    .map_err(core_err)?;
                    probes.push((
                        format!("q(t1={}, t2={})", grid.time(k1), grid.time(k2)),
                        q,
                    ));
                }
            }
        }
        ExperimentKind::AvgHeatmap => {
            let om = config.sweep.omega0.expect("validated").values();
            let ga = config.sweep.gamma.expect("validated").values();
            let omega0 = om[om.len() / 2];
            let gamma = ga[ga.len() / 2];
            let point = ModelParams { omega0, gamma, ..params };
            let grid =
                PropagatorGrid::new(&point, t_max, config.engine_steps()).map_err(core_err)?;
            let protocol = config.protocol.as_ref().expect("validated");
            let template = ProtocolTemplate {
                initial_state: initial_state(protocol.initial_state),
                instruments: instruments_of(protocol)?,
            };
            let t_f = config.sweep.t_f.as_ref().expect("validated")[0];
            let (k_f, stride) = config.stride_for(t_f)?;
            let mut clip = ClipStats::default();
            let eps = avg_epsilon_qrt_grid(&grid, &template, k_f, stride, &mut clip, CLIP_TOL)
                .map_err(core_err)?;
            probes.push((
                format!("eps_avg(omega0={omega0}, gamma={gamma}, t_f={t_f})"),
                eps,
            ));
            let sampler = SphereSampler::new(config.numerics.sampler_n);
            let witness = avg_n_witness(&grid, k_f, stride, &sampler, config.numerics.conditioning)
                .map_err(core_err)?;
            probes.push((
                format!("n_avg(omega0={omega0}, gamma={gamma}, t_f={t_f})"),
                witness.value,
            ));
        }
        ExperimentKind::PerturbationSweep => {
            let lam = config.sweep.lambda.expect("validated");
            let lambda = lam.max;
            let point = ModelParams { lambda, ..params };
            let protocol = config.protocol.as_ref().expect("validated");
            let insts = instruments_of(protocol)?;
            let rho0 = initial_state(protocol.initial_state);
            let times = protocol.times.as_ref().expect("validated");
            let steps = config.engine_steps();
            let k1 = (times[0] / times[1] * steps as f64).round() as usize;
            let quad_stride = k1 / (config.numerics.quad_grid - 1);
            let grid = PropagatorGrid::new(&point, times[1], steps).map_err(core_err)?;
            let trajectory = grid.forward_trajectory(&rho0);
            let rows: Vec<_> = insts[1]
                .elements
                .iter()
                .map(|el| grid.readout_rows(el))
                .collect();
            let exact: Vec<f64> = grid
                .exact_two_time(&trajectory, &rows, &insts[0], k1, steps)
                .into_iter()
                .flatten()
                .collect();
            let plain: Vec<f64> = grid
                .qrt_two_time(&rho0, &insts[0], &insts[1], k1, steps)
                .into_iter()
                .flatten()
                .collect();
            let rho0_vec = vec_op(&rho0);
            let mut corrected = plain.clone();
            let mut idx = 0;
            for el1 in &insts[0].elements {
                let phi =
                    phi_q_on_grid(el1, &grid, k1, steps, quad_stride).map_err(core_err)?;
                let w = matvec(&phi, &rho0_vec);
                for el2 in &insts[1].elements {
                    let v = matvec(el2, &w);
                    corrected[idx] += (v[0] + v[3]).re;
                    idx += 1;
                }
            }
            let mut clip = ClipStats::default();
            let eps_qrt =
                table_distance(&exact, &plain, &mut clip, CLIP_TOL).map_err(core_err)?;
            let eps_l2 =
                table_distance(&exact, &corrected, &mut clip, CLIP_TOL).map_err(core_err)?;
            probes.push((format!("eps_qrt(lambda={lambda})"), eps_qrt));
            probes.push((format!("eps_lambda2(lambda={lambda})"), eps_l2));
        }
        ExperimentKind::ThreeTimeCompare => {
            let om = config.sweep.omega0.expect("validated").values();
            let ga = config.sweep.gamma.expect("validated").values();
            let omega0 = om[om.len() / 2];
            let gamma = ga[ga.len() / 2];
            let point = ModelParams { omega0, gamma, ..params };
            let grid =
                PropagatorGrid::new(&point, t_max, config.engine_steps()).map_err(core_err)?;
            let protocol = config.protocol.as_ref().expect("validated");
            let insts = instruments_of(protocol)?;
            let rho0 = initial_state(protocol.initial_state);
            let (k_f, stride) = config.stride_for(t_max)?;
            let mut clip = ClipStats::default();
            let three = avg_epsilon_qrt_3_grid(
                &grid,
                &rho0,
                &insts[0],
                &[&insts[1]],
                &insts[2],
                k_f,
                stride,
                &mut clip,
                CLIP_TOL,
            )
            .map_err(core_err)?;
            probes.push((
                format!("eps_avg_3t(omega0={omega0}, gamma={gamma})"),
                three[0],
            ));
        }
        ExperimentKind::TemperatureCompare => {
            let om = config.sweep.omega0.expect("validated").values();
            let ga = config.sweep.gamma.expect("validated").values();
            let omega0 = om[om.len() / 2];
            let gamma = ga[ga.len() / 2];
            let protocol = config.protocol.as_ref().expect("validated");
            let template = ProtocolTemplate {
                initial_state: initial_state(protocol.initial_state),
                instruments: instruments_of(protocol)?,
            };
            let (k_f, stride) = config.stride_for(t_max)?;
            let cases = &config.temperature.as_ref().expect("validated").cases;
            for case in cases {
                let beta = case.beta.to_f64()?;
                // The probe shifts each case's cutoff by the same
                // increment the full check applies.
                let shift = n_max as i64 - config.model.n_max as i64;
                let case_n_max = (case.n_max as i64 + shift).max(1) as usize;
                let point = ModelParams {
                    omega0,
                    gamma,
                    beta,
                    n_max: case_n_max,
                    ..params
                };
                point.validate().map_err(core_err)?;
                let grid = PropagatorGrid::new(&point, t_max, config.engine_steps())
                    .map_err(|e| format!("beta = {beta}: {e}"))?;
                let mut clip = ClipStats::default();
                let eps =
                    avg_epsilon_qrt_grid(&grid, &template, k_f, stride, &mut clip, CLIP_TOL)
                        .map_err(core_err)?;
                probes.push((
                    format!("eps_avg(beta={beta}, n_max={case_n_max}, omega0={omega0})"),
                    eps,
                ));
            }
        }
    }
    Ok(probes)
}

/// Rerun the designated probes at n_max + 2 and report the drift.
pub fn check_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport, String> {
    config.validate()?;
    let tol = config.numerics.convergence_tol;
    let mut report = ConvergenceReport {
        probes: Vec::new(),
        failures: Vec::new(),
        max_deviation: 0.0,
        tol,
    };
    let base = match probe_values(config, config.model.n_max) {
        Ok(v) => v,
        Err(e) => {
            report.failures.push(e);
            return Ok(report);
        }
    };
    let refined = match probe_values(config, config.model.n_max + 2) {
        Ok(v) => v,
        Err(e) => {
            report.failures.push(e);
            return Ok(report);
        }
    };
    for ((label, a), (_, b)) in base.into_iter().zip(refined) {
        let deviation = (a - b).abs();
        report.max_deviation = report.max_deviation.max(deviation);
        report.probes.push(ProbeResult {
            label,
            base: a,
            refined: b,
            deviation,
        });
    }
    Ok(report)
}
