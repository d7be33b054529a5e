//! Declarative experiment configs. TOML in, strict schema: unknown
//! keys are errors, every kind validates the fields it needs before
//! any computation starts.

use serde::{Deserialize, Serialize};

use qrtsim::instruments::Axis;
use qrtsim::model::ModelParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Landscape,
    AvgHeatmap,
    PerturbationSweep,
    DivisibilityHeatmap,
    ThreeTimeCompare,
    TemperatureCompare,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Landscape => "landscape",
            ExperimentKind::AvgHeatmap => "avg-heatmap",
            ExperimentKind::PerturbationSweep => "perturbation-sweep",
            ExperimentKind::DivisibilityHeatmap => "divisibility-heatmap",
            ExperimentKind::ThreeTimeCompare => "three-time-compare",
            ExperimentKind::TemperatureCompare => "temperature-compare",
        }
    }
}

/// Inverse temperature: a positive number or the string "inf".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaValue {
    Number(f64),
    Text(String),
}

impl BetaValue {
    pub fn to_f64(&self) -> Result<f64, String> {
        match self {
            BetaValue::Number(x) if *x > 0.0 => Ok(*x),
            BetaValue::Number(x) => Err(format!("model.beta must be positive, got {x}")),
            BetaValue::Text(s) if s == "inf" => Ok(f64::INFINITY),
            BetaValue::Text(s) => Err(format!(
                "model.beta must be a positive number or \"inf\", got \"{s}\""
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub omega0: f64,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beta: BetaValue,
    pub n_max: usize,
}

impl ModelSection {
    pub fn to_params(&self) -> Result<ModelParams, String> {
        let p = ModelParams {
            omega0: self.omega0,
            eta: self.eta,
            gamma: self.gamma,
            lambda: self.lambda,
            beta: self.beta.to_f64()?,
            n_max: self.n_max,
        };
        p.validate().map_err(|e| format!("model: {e}"))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateLabel {
    Excited,
    Ground,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisLabel {
    X,
    Y,
    Z,
}

impl AxisLabel {
    pub fn to_axis(self) -> Axis {
        match self {
            AxisLabel::X => Axis::X,
            AxisLabel::Y => Axis::Y,
            AxisLabel::Z => Axis::Z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub initial_state: StateLabel,
    pub axes: Vec<AxisLabel>,
    /// Explicit measurement times; required by perturbation-sweep,
    /// rejected by the grid-driven kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RangeSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + i as f64 * step).collect()
    }

    fn validate(&self, name: &str) -> Result<(), String> {
        if self.count == 0 {
            return Err(format!("sweep.{name}.count must be at least 1"));
        }
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(format!("sweep.{name} bounds must be finite"));
        }
        if self.count > 1 && !(self.max > self.min) {
            return Err(format!("sweep.{name} needs max > min when count > 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// End of the propagation window; the largest time any experiment
    /// touches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Triangle grid resolution for the (t1, t2) kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<RangeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<RangeSpec>,
    /// Averaging horizons for avg-heatmap; each must land on engine
    /// nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<RangeSpec>,
}

fn default_grid_n() -> usize {
    qrtsim::quantifiers::AVERAGE_GRID
}

fn default_quad_grid() -> usize {
    qrtsim::perturbation::QUAD_GRID
}

fn default_sampler_n() -> usize {
    qrtsim::quantifiers::SPHERE_SAMPLES
}

fn default_conditioning() -> f64 {
    qrtsim::quantifiers::CONDITIONING_FLOOR
}

fn default_convergence_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    /// Trapezoid nodes per averaging window.
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Quadrature nodes per axis of the second-order convolution.
    #[serde(default = "default_quad_grid")]
    pub quad_grid: usize,
    /// Bloch-sphere lattice size for the witness maximization.
    #[serde(default = "default_sampler_n")]
    pub sampler_n: usize,
    /// Engine steps across [0, t_max]; defaults to grid_n - 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_steps: Option<usize>,
    /// Smallest singular value of an invertible intermediate map.
    #[serde(default = "default_conditioning")]
    pub conditioning: f64,
    /// Max allowed drift when rerunning probes at n_max + 2.
    #[serde(default = "default_convergence_tol")]
    pub convergence_tol: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            grid_n: default_grid_n(),
            quad_grid: default_quad_grid(),
            sampler_n: default_sampler_n(),
            engine_steps: None,
            conditioning: default_conditioning(),
            convergence_tol: default_convergence_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureCase {
    pub beta: BetaValue,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSection {
    pub cases: Vec<TemperatureCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: String,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<TemperatureSection>,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn t_max(&self) -> f64 {
        self.sweep.t_max.unwrap_or(10.0)
    }

    pub fn engine_steps(&self) -> usize {
        self.numerics
            .engine_steps
            .unwrap_or(self.numerics.grid_n - 1)
    }

    fn protocol_ref(&self) -> Result<&ProtocolSection, String> {
        self.protocol
            .as_ref()
            .ok_or_else(|| format!("kind {} requires a [protocol] section", self.kind.as_str()))
    }

    fn require_axes(&self, n: usize) -> Result<(), String> {
        let p = self.protocol_ref()?;
        if p.axes.len() != n {
            return Err(format!(
                "kind {} needs exactly {n} protocol.axes entries, got {}",
                self.kind.as_str(),
                p.axes.len()
            ));
        }
        Ok(())
    }

    fn forbid_times(&self) -> Result<(), String> {
        if let Some(p) = &self.protocol {
            if p.times.is_some() {
                return Err(format!(
                    "kind {} derives measurement times from the grid; remove protocol.times",
                    self.kind.as_str()
                ));
            }
        }
        Ok(())
    }

    /// Stride between averaging nodes on the engine grid for a given
    /// horizon, after checking the alignment is exact.
    pub fn stride_for(&self, t_f: f64) -> Result<(usize, usize), String> {
        let t_max = self.t_max();
        let steps = self.engine_steps();
        let exact = t_f / t_max * steps as f64;
        let k_f = exact.round() as usize;
        if (exact - k_f as f64).abs() > 1e-9 || k_f == 0 {
            return Err(format!(
                "t_f = {t_f} does not land on the engine grid ({steps} steps over [0, {t_max}])"
            ));
        }
        let n_avg = self.numerics.grid_n - 1;
        if k_f % n_avg != 0 {
            return Err(format!(
                "grid_n - 1 = {n_avg} must divide the {k_f} engine steps to t_f = {t_f}"
            ));
        }
        Ok((k_f, k_f / n_avg))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {} (this build reads {CONFIG_VERSION})",
                self.version
            ));
        }
        self.model.to_params()?;
        if self.numerics.grid_n < 3 {
            return Err("numerics.grid_n must be at least 3".into());
        }
        if self.numerics.quad_grid < 2 {
            return Err("numerics.quad_grid must be at least 2".into());
        }
        if self.numerics.sampler_n == 0 {
            return Err("numerics.sampler_n must be positive".into());
        }
        if !(self.numerics.conditioning > 0.0) {
            return Err("numerics.conditioning must be positive".into());
        }
        if let Some(t) = self.sweep.t_max {
            if !(t > 0.0) {
                return Err("sweep.t_max must be positive".into());
            }
        }
        if self.output.path.is_empty() {
            return Err("output.path must not be empty".into());
        }

        match self.kind {
            ExperimentKind::Landscape => {
                self.require_axes(2)?;
                self.forbid_times()?;
                let tp = self
                    .sweep
                    .time_points
                    .ok_or("landscape requires sweep.time_points")?;
                if tp < 2 {
                    return Err("sweep.time_points must be at least 2".into());
                }
            }
            ExperimentKind::DivisibilityHeatmap => {
                if self.protocol.is_some() {
                    return Err(
                        "divisibility-heatmap is protocol-free; remove the [protocol] section"
                            .into(),
                    );
                }
                let tp = self
                    .sweep
                    .time_points
                    .ok_or("divisibility-heatmap requires sweep.time_points")?;
                if tp < 2 {
                    return Err("sweep.time_points must be at least 2".into());
                }
            }
            ExperimentKind::AvgHeatmap => {
                self.require_axes(2)?;
                self.forbid_times()?;
                let om = self.sweep.omega0.ok_or("avg-heatmap requires sweep.omega0")?;
                let ga = self.sweep.gamma.ok_or("avg-heatmap requires sweep.gamma")?;
                om.validate("omega0")?;
                ga.validate("gamma")?;
                let horizons = self
                    .sweep
                    .t_f
                    .as_ref()
                    .ok_or("avg-heatmap requires sweep.t_f")?;
                if horizons.is_empty() {
                    return Err("sweep.t_f must not be empty".into());
                }
                for &t_f in horizons {
                    if !(t_f > 0.0 && t_f <= self.t_max()) {
                        return Err(format!("sweep.t_f entry {t_f} outside (0, t_max]"));
                    }
                    self.stride_for(t_f)?;
                }
            }
            ExperimentKind::PerturbationSweep => {
                self.require_axes(2)?;
                let p = self.protocol_ref()?;
                let times = p
                    .times
                    .as_ref()
                    .ok_or("perturbation-sweep requires protocol.times = [t1, t2]")?;
                if times.len() != 2 || !(times[0] > 0.0 && times[1] > times[0]) {
                    return Err("protocol.times must be [t1, t2] with 0 < t1 < t2".into());
                }
                let lam = self
                    .sweep
                    .lambda
                    .ok_or("perturbation-sweep requires sweep.lambda")?;
                lam.validate("lambda")?;
                if lam.min < 0.0 {
                    return Err("sweep.lambda.min must be nonnegative".into());
                }
                let t2 = times[1];
                if (self.t_max() - t2).abs() > 1e-12 {
                    return Err(format!(
                        "sweep.t_max must equal t2 = {t2} for perturbation-sweep"
                    ));
                }
                let steps = self.engine_steps();
                let k1 = times[0] / t2 * steps as f64;
                if (k1 - k1.round()).abs() > 1e-9 || k1.round() as usize == 0 {
                    return Err(format!(
                        "t1 = {} does not land on the engine grid ({steps} steps over [0, {t2}])",
                        times[0]
                    ));
                }
                let k1 = k1.round() as usize;
                let q = self.numerics.quad_grid - 1;
                if k1 % q != 0 || (steps - k1) % q != 0 {
                    return Err(format!(
                        "quad_grid - 1 = {q} must divide both window lengths ({k1} and {} steps)",
                        steps - k1
                    ));
                }
            }
            ExperimentKind::ThreeTimeCompare => {
                self.require_axes(3)?;
                self.forbid_times()?;
                let p = self.protocol_ref()?;
                if p.axes[1] == AxisLabel::X {
                    return Err(
                        "three-time-compare switches the middle axis to x itself; \
                         give the commuting base protocol"
                            .into(),
                    );
                }
                let om = self
                    .sweep
                    .omega0
                    .ok_or("three-time-compare requires sweep.omega0")?;
                let ga = self
                    .sweep
                    .gamma
                    .ok_or("three-time-compare requires sweep.gamma")?;
                om.validate("omega0")?;
                ga.validate("gamma")?;
                self.stride_for(self.t_max())?;
            }
            ExperimentKind::TemperatureCompare => {
                self.require_axes(2)?;
                self.forbid_times()?;
                let om = self
                    .sweep
                    .omega0
                    .ok_or("temperature-compare requires sweep.omega0")?;
                let ga = self
                    .sweep
                    .gamma
                    .ok_or("temperature-compare requires sweep.gamma")?;
                om.validate("omega0")?;
                ga.validate("gamma")?;
                let temp = self
                    .temperature
                    .as_ref()
                    .ok_or("temperature-compare requires a [temperature] section")?;
                if temp.cases.is_empty() {
                    return Err("temperature.cases must not be empty".into());
                }
                for (i, case) in temp.cases.iter().enumerate() {
                    case.beta
                        .to_f64()
                        .map_err(|e| format!("temperature.cases[{i}]: {e}"))?;
                    if case.n_max == 0 {
                        return Err(format!("temperature.cases[{i}].n_max must be positive"));
                    }
                }
                self.stride_for(self.t_max())?;
            }
        }
        Ok(())
    }
}

/// Bundled presets, one per reproduced figure.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "fig1" => Some(include_str!("../presets/fig1.toml")),
        "fig2" => Some(include_str!("../presets/fig2.toml")),
        "fig3" => Some(include_str!("../presets/fig3.toml")),
        "fig4" => Some(include_str!("../presets/fig4.toml")),
        "fig5" => Some(include_str!("../presets/fig5.toml")),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 5] = ["fig1", "fig2", "fig3", "fig4", "fig5"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_preset_validates() {
        for name in PRESET_NAMES {
            let text = preset(name).unwrap();
            let config = ExperimentConfig::from_toml(text)
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            assert_eq!(config.version, CONFIG_VERSION);
        }
        let extra = include_str!("../presets/divisibility.toml");
        ExperimentConfig::from_toml(extra).unwrap();
    }

    #[test]
    fn beta_accepts_inf_and_rejects_junk() {
        assert_eq!(
            BetaValue::Text("inf".into()).to_f64().unwrap(),
            f64::INFINITY
        );
        assert!(BetaValue::Number(-1.0).to_f64().is_err());
        assert!(BetaValue::Text("warm".into()).to_f64().is_err());
    }

    #[test]
    fn range_values_hit_both_ends() {
        let r = RangeSpec {
            min: 1.0,
            max: 2.0,
            count: 5,
        };
        let v = r.values();
        assert_eq!(v.len(), 5);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[4], 2.0);
        assert_eq!(
            RangeSpec {
                min: 3.0,
                max: 3.0,
                count: 1
            }
            .values(),
            vec![3.0]
        );
    }

    #[test]
    fn stride_requires_exact_alignment() {
        let text = preset("fig2").unwrap();
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.stride_for(10.0).unwrap(), (80, 1));
        assert_eq!(config.stride_for(30.0).unwrap(), (240, 3));
        assert!(config.stride_for(10.3).is_err());
    }
}
