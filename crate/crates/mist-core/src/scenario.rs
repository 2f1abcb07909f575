//! JSON scenario files.
//!
//! Keys carry their units (`_GHz`, `_MHz`, `_us`, `_ns`); frequencies are
//! ordinary and converted to rad/ns only by the accessor methods here.
//! Unknown keys are rejected and every error names its JSON path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::entanglement::EnMeasure;
use crate::qubit_spectrum::FluxoniumSpec;
use crate::units::{ghz, mhz};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QubitBlock {
    #[serde(rename = "E_C_GHz")]
    pub e_c_ghz: f64,
    #[serde(rename = "E_J_GHz")]
    pub e_j_ghz: f64,
    #[serde(rename = "E_L_GHz")]
    pub e_l_ghz: f64,
    /// External flux in units of the flux quantum.
    pub phi_ext_flux_quanta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k + 1 == self.count {
                    self.stop
                } else {
                    self.start + k as f64 * step
                }
            })
            .collect()
    }
}

/// A single value or a linear sweep.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ValueOrSweep {
    Value(f64),
    Sweep(Sweep),
}

impl ValueOrSweep {
    pub fn values(&self) -> Vec<f64> {
        match self {
            ValueOrSweep::Value(v) => vec![*v],
            ValueOrSweep::Sweep(s) => s.values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitBlock {
    #[serde(rename = "omega_r_GHz")]
    pub omega_r_ghz: f64,
    /// Defaults to the resonator frequency.
    #[serde(rename = "omega_d_GHz", default)]
    pub omega_d_ghz: Option<f64>,
    #[serde(rename = "g_GHz")]
    pub g_ghz: f64,
    #[serde(rename = "kappa_MHz")]
    pub kappa_mhz: f64,
    #[serde(rename = "epsilon_d_MHz")]
    pub epsilon_d_mhz: ValueOrSweep,
    /// Resonator-drive detuning grid for 2-D scans.
    #[serde(rename = "delta_a_MHz", default)]
    pub delta_a_mhz: Option<ValueOrSweep>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceBlock {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub h_level: Option<usize>,
}

fn default_k() -> usize {
    2
}

impl Default for ResonanceBlock {
    fn default() -> Self {
        Self { k: 2, h_level: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    /// Photon cutoff of the reduced model and of paper-scale full-model runs.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Qubit levels of the full and semiclassical models.
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    #[serde(default = "default_ho")]
    pub ho_truncation: usize,
    /// Photon cutoff of desk-scale full-model runs.
    #[serde(default = "default_full_n_max")]
    pub full_n_max: usize,
    /// Qubit levels available to the effective-parameter sums.
    #[serde(default = "default_sw_levels")]
    pub sw_levels: usize,
}

fn default_n_max() -> usize {
    100
}
fn default_j_max() -> usize {
    4
}
fn default_ho() -> usize {
    150
}
fn default_full_n_max() -> usize {
    40
}
fn default_sw_levels() -> usize {
    36
}

impl Default for TruncationBlock {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            j_max: default_j_max(),
            ho_truncation: default_ho(),
            full_n_max: default_full_n_max(),
            sw_levels: default_sw_levels(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Reduced,
    Full,
    Semiclassical,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Reduced => "reduced",
            Model::Full => "full",
            Model::Semiclassical => "semiclassical",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(Model::Reduced),
            "full" => Ok(Model::Full),
            "semiclassical" => Ok(Model::Semiclassical),
            _ => Err(Error::param("model", format!("unknown model `{s}` (reduced, full, semiclassical)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_t_end")]
    pub t_end_us: f64,
    #[serde(default = "default_dt")]
    pub dt_ns: f64,
    /// Spacing of recorded time points.
    #[serde(default = "default_output_dt")]
    pub output_dt_ns: f64,
    #[serde(default = "default_models")]
    pub models: Vec<Model>,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the trajectory-count policy of the full model.
    #[serde(default)]
    pub trajectories: Option<usize>,
}

fn default_t_end() -> f64 {
    5.0
}
fn default_dt() -> f64 {
    2.5
}
fn default_output_dt() -> f64 {
    10.0
}
fn default_models() -> Vec<Model> {
    vec![Model::Reduced, Model::Full, Model::Semiclassical]
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            t_end_us: default_t_end(),
            dt_ns: default_dt(),
            output_dt_ns: default_output_dt(),
            models: default_models(),
            seed: 0,
            trajectories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default)]
    pub entanglement: bool,
    #[serde(default)]
    pub plots: bool,
    /// Measure written to the `E_N` column.
    #[serde(default)]
    pub en_measure: EnMeasure,
    /// Dump reduced-model density matrices next to the time series.
    #[serde(default)]
    pub snapshots: bool,
}

fn default_dir() -> String {
    "out".into()
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            entanglement: false,
            plots: false,
            en_measure: EnMeasure::default(),
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub qubit: QubitBlock,
    pub circuit: CircuitBlock,
    #[serde(default)]
    pub resonance: ResonanceBlock,
    #[serde(default)]
    pub truncations: TruncationBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub outputs: OutputBlock,
}

/// A parsed scenario together with the hash of its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub sha256: String,
}

fn scenario_error(path: &str, message: impl Into<String>) -> Error {
    Error::Scenario {
        path: path.to_string(),
        message: message.into(),
    }
}

pub fn parse_scenario(path: &Path) -> Result<LoadedScenario> {
    let bytes = std::fs::read(path)
        .map_err(|e| scenario_error(&path.display().to_string(), e.to_string()))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| scenario_error(&path.display().to_string(), format!("not UTF-8: {e}")))?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<LoadedScenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        scenario_error(&path, e.into_inner().to_string())
    })?;
    scenario.validate()?;
    let sha256 = Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(LoadedScenario { scenario, sha256 })
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(scenario_error(path, format!("must be finite and positive, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(scenario_error(path, format!("must be finite and non-negative, got {v}")))
    }
}

fn check_sweep(path: &str, s: &ValueOrSweep, check: fn(&str, f64) -> Result<()>) -> Result<()> {
    match s {
        ValueOrSweep::Value(v) => check(path, *v),
        ValueOrSweep::Sweep(sw) => {
            if sw.count < 2 {
                return Err(scenario_error(&format!("{path}.count"), "sweep needs count >= 2"));
            }
            check(&format!("{path}.start"), sw.start)?;
            check(&format!("{path}.stop"), sw.stop)
        }
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(scenario_error(path, "must be finite"))
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let q = &self.qubit;
        positive("qubit.E_C_GHz", q.e_c_ghz)?;
        non_negative("qubit.E_J_GHz", q.e_j_ghz)?;
        positive("qubit.E_L_GHz", q.e_l_ghz)?;
        finite("qubit.phi_ext_flux_quanta", q.phi_ext_flux_quanta)?;
        let c = &self.circuit;
        positive("circuit.omega_r_GHz", c.omega_r_ghz)?;
        if let Some(w) = c.omega_d_ghz {
            positive("circuit.omega_d_GHz", w)?;
        }
        positive("circuit.g_GHz", c.g_ghz)?;
        positive("circuit.kappa_MHz", c.kappa_mhz)?;
        check_sweep("circuit.epsilon_d_MHz", &c.epsilon_d_mhz, non_negative)?;
        if let Some(d) = &c.delta_a_mhz {
            check_sweep("circuit.delta_a_MHz", d, finite)?;
        }
        let r = &self.resonance;
        if r.k < 2 {
            return Err(scenario_error("resonance.k", "photon order must be at least 2"));
        }
        let t = &self.truncations;
        if t.n_max < 1 {
            return Err(scenario_error("truncations.n_max", "must be at least 1"));
        }
        if t.full_n_max < 1 {
            return Err(scenario_error("truncations.full_n_max", "must be at least 1"));
        }
        if t.ho_truncation < crate::qubit_spectrum::MIN_HO_TRUNCATION {
            return Err(scenario_error(
                "truncations.ho_truncation",
                format!("must be at least {}", crate::qubit_spectrum::MIN_HO_TRUNCATION),
            ));
        }
        if t.sw_levels > t.ho_truncation {
            return Err(scenario_error("truncations.sw_levels", "cannot exceed ho_truncation"));
        }
        if let Some(h) = r.h_level {
            if h >= t.j_max {
                return Err(scenario_error("resonance.h_level", "must be below truncations.j_max"));
            }
        }
        if t.j_max < r.k + 1 || t.j_max > t.sw_levels {
            return Err(scenario_error(
                "truncations.j_max",
                format!("must lie in [{}, sw_levels]", r.k + 1),
            ));
        }
        let run = &self.run;
        positive("run.t_end_us", run.t_end_us)?;
        positive("run.dt_ns", run.dt_ns)?;
        positive("run.output_dt_ns", run.output_dt_ns)?;
        if run.models.is_empty() {
            return Err(scenario_error("run.models", "must list at least one model"));
        }
        if run.trajectories == Some(0) {
            return Err(scenario_error("run.trajectories", "must be positive"));
        }
        if self.outputs.directory.is_empty() {
            return Err(scenario_error("outputs.directory", "must not be empty"));
        }
        Ok(())
    }

    pub fn fluxonium(&self) -> FluxoniumSpec {
        FluxoniumSpec {
            e_c: self.qubit.e_c_ghz,
            e_l: self.qubit.e_l_ghz,
            e_j: self.qubit.e_j_ghz,
            phi_ext: std::f64::consts::TAU * self.qubit.phi_ext_flux_quanta,
            ho_truncation: self.truncations.ho_truncation,
        }
    }

    pub fn omega_r(&self) -> f64 {
        ghz(self.circuit.omega_r_ghz)
    }

    pub fn omega_d(&self) -> f64 {
        ghz(self.circuit.omega_d_ghz.unwrap_or(self.circuit.omega_r_ghz))
    }

    pub fn g(&self) -> f64 {
        ghz(self.circuit.g_ghz)
    }

    pub fn kappa(&self) -> f64 {
        mhz(self.circuit.kappa_mhz)
    }

    /// Drive amplitudes in ordinary MHz.
    pub fn epsilon_grid_mhz(&self) -> Vec<f64> {
        self.circuit.epsilon_d_mhz.values()
    }

    /// Detuning grid in ordinary MHz, if any.
    pub fn delta_a_grid_mhz(&self) -> Option<Vec<f64>> {
        self.circuit.delta_a_mhz.as_ref().map(|d| d.values())
    }

    /// Recorded times in ns, `0, output_dt, …, t_end`.
    pub fn time_grid_ns(&self) -> Vec<f64> {
        let t_end = self.run.t_end_us * 1e3;
        let n = (t_end / self.run.output_dt_ns - 1e-9).ceil().max(1.0) as usize;
        (0..=n).map(|k| (k as f64 * self.run.output_dt_ns).min(t_end)).collect()
    }
}
