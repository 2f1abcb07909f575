//! Python bindings for the MIST simulation library.
//!
//! Frequencies cross the boundary in ordinary-frequency units (GHz or MHz as
//! the argument names say), rates in 1/μs and times in ns.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use mist_core::entanglement::negativity_matrix;
use mist_core::pipeline::{Figure, Pipeline, RunOptions};
use mist_core::qubit_spectrum::{self, FluxoniumSpec};
use mist_core::rate_theory::{self, DressedLabel, RateResult};
use mist_core::reduced_model::{build_reduced_system_escalating, steady_point};
use mist_core::scenario::{self, LoadedScenario, Model};
use mist_core::sw_transform::ReducedParams as CoreParams;
use mist_core::units::{mhz, per_us, to_ghz, to_mhz};
use mist_core::Error;
use nalgebra::DMatrix;

create_exception!(mist_sim, ScenarioError, PyException);
create_exception!(mist_sim, NumericalError, PyException);

fn py_err(e: Error) -> PyErr {
    if e.is_configuration() {
        ScenarioError::new_err(e.to_string())
    } else {
        NumericalError::new_err(e.to_string())
    }
}

fn label(initial: &str) -> PyResult<DressedLabel> {
    match initial {
        "g" => Ok(DressedLabel::G),
        "h" => Ok(DressedLabel::H),
        _ => Err(ScenarioError::new_err(format!("initial state must be 'g' or 'h', got '{initial}'"))),
    }
}

/// Fluxonium eigenfrequencies and charge matrix elements.
#[pyclass(frozen, module = "mist_sim")]
struct Spectrum {
    inner: qubit_spectrum::QubitSpectrum,
}

#[pymethods]
impl Spectrum {
    /// `ω_j/2π` in GHz relative to the ground state.
    #[getter]
    fn omega_ghz(&self) -> Vec<f64> {
        self.inner.omega.iter().map(|w| to_ghz(*w)).collect()
    }

    #[getter]
    fn level_count(&self) -> usize {
        self.inner.level_count
    }

    fn charge_element(&self, i: usize, j: usize) -> PyResult<Complex64> {
        let l = self.inner.level_count;
        if i >= l || j >= l {
            return Err(ScenarioError::new_err(format!("level index out of range (level_count = {l})")));
        }
        Ok(self.inner.n_matrix[(i, j)])
    }

    fn __repr__(&self) -> String {
        format!("Spectrum(level_count={})", self.inner.level_count)
    }
}

/// Parameters of the reduced two-level model.
#[pyclass(frozen, skip_from_py_object, module = "mist_sim")]
#[derive(Clone)]
struct ReducedParams {
    inner: CoreParams,
}

#[pymethods]
impl ReducedParams {
    #[getter]
    fn chi_g_mhz(&self) -> f64 {
        to_mhz(self.inner.chi_g)
    }
    #[getter]
    fn chi_h_mhz(&self) -> f64 {
        to_mhz(self.inner.chi_h)
    }
    #[getter]
    fn lambda_g_mhz(&self) -> f64 {
        to_mhz(self.inner.lambda_g)
    }
    #[getter]
    fn lambda_h_mhz(&self) -> f64 {
        to_mhz(self.inner.lambda_h)
    }
    #[getter]
    fn g_eff_mhz(&self) -> Complex64 {
        self.inner.g_eff * to_mhz(1.0)
    }
    #[getter]
    fn delta_q_mhz(&self) -> f64 {
        to_mhz(self.inner.delta_q)
    }
    #[getter]
    fn kappa_mhz(&self) -> f64 {
        to_mhz(self.inner.kappa)
    }
    #[getter]
    fn epsilon_d_mhz(&self) -> f64 {
        to_mhz(self.inner.epsilon_d)
    }
    #[getter]
    fn order_k(&self) -> usize {
        self.inner.order_k
    }
    #[getter]
    fn h_level(&self) -> usize {
        self.inner.h_level
    }

    /// Copy at a different drive amplitude.
    fn with_drive(&self, epsilon_d_mhz: f64) -> Self {
        Self {
            inner: self.inner.with_drive(mhz(epsilon_d_mhz)),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "ReducedParams(chi_g_mhz={:.4}, chi_h_mhz={:.4}, |g_eff|_mhz={:.4}, epsilon_d_mhz={})",
            self.chi_g_mhz(),
            self.chi_h_mhz(),
            self.inner.g_eff.norm() * to_mhz(1.0),
            self.epsilon_d_mhz()
        )
    }
}

/// Analytic transition rates in 1/μs.
#[pyclass(frozen, module = "mist_sim")]
struct Rates {
    inner: RateResult,
}

#[pymethods]
impl Rates {
    #[getter]
    fn gamma_g(&self) -> f64 {
        per_us(self.inner.gamma_g)
    }
    #[getter]
    fn gamma_h(&self) -> f64 {
        per_us(self.inner.gamma_h)
    }
    #[getter]
    fn gamma(&self) -> f64 {
        per_us(self.inner.gamma)
    }
    #[getter]
    fn pg_ss(&self) -> f64 {
        self.inner.pg_ss
    }
    #[getter]
    fn ph_ss(&self) -> f64 {
        self.inner.ph_ss
    }
    #[getter]
    fn bad_cavity_ratio(&self) -> f64 {
        self.inner.bad_cavity_ratio
    }

    /// `(P_g, P_h)` at `t_ns` starting from `initial` (`"g"` or `"h"`).
    #[pyo3(signature = (t_ns, initial = "g"))]
    fn population_estimate(&self, t_ns: f64, initial: &str) -> PyResult<(f64, f64)> {
        Ok(rate_theory::population_estimate(&self.inner, t_ns, label(initial)?))
    }

    fn __repr__(&self) -> String {
        format!("Rates(gamma={:.4}/us, pg_ss={:.4})", self.gamma(), self.pg_ss())
    }
}

/// A validated scenario file.
#[pyclass(frozen, module = "mist_sim")]
struct Scenario {
    inner: LoadedScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::parse_scenario(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::parse_scenario_str(text).map_err(py_err)?,
        })
    }

    #[getter]
    fn sha256(&self) -> String {
        self.inner.sha256.clone()
    }

    #[getter]
    fn epsilon_grid_mhz(&self) -> Vec<f64> {
        self.inner.scenario.epsilon_grid_mhz()
    }

    /// Reduced parameters at the given drive amplitude (default: the first
    /// grid value).
    #[pyo3(signature = (epsilon_d_mhz = None))]
    fn reduced_params(&self, py: Python<'_>, epsilon_d_mhz: Option<f64>) -> PyResult<ReducedParams> {
        let p = Pipeline::new(self.inner.clone(), RunOptions::default());
        let prep = py.detach(|| p.prepare()).map_err(py_err)?;
        let eps = epsilon_d_mhz.unwrap_or_else(|| p.scenario.epsilon_grid_mhz()[0]);
        Ok(ReducedParams {
            inner: p.params_at(&prep, eps),
        })
    }

    fn spectrum(&self, py: Python<'_>) -> PyResult<Spectrum> {
        let p = Pipeline::new(self.inner.clone(), RunOptions::default());
        let inner = py.detach(|| p.spectrum()).map_err(py_err)?;
        Ok(Spectrum { inner })
    }

    fn __repr__(&self) -> String {
        format!("Scenario(sha256='{}')", &self.inner.sha256[..12])
    }
}

/// Diagonalizes a fluxonium given energies in GHz and flux in flux quanta.
#[pyfunction]
#[pyo3(signature = (e_c_ghz, e_j_ghz, e_l_ghz, phi_ext_flux_quanta, levels = 36, ho_truncation = 150))]
fn diagonalize(
    py: Python<'_>,
    e_c_ghz: f64,
    e_j_ghz: f64,
    e_l_ghz: f64,
    phi_ext_flux_quanta: f64,
    levels: usize,
    ho_truncation: usize,
) -> PyResult<Spectrum> {
    let spec = FluxoniumSpec {
        e_c: e_c_ghz,
        e_j: e_j_ghz,
        e_l: e_l_ghz,
        phi_ext: std::f64::consts::TAU * phi_ext_flux_quanta,
        ho_truncation,
    };
    let inner = py.detach(|| qubit_spectrum::diagonalize(&spec, levels)).map_err(py_err)?;
    Ok(Spectrum { inner })
}

#[pyfunction]
fn transition_rates(params: &ReducedParams) -> PyResult<Rates> {
    Ok(Rates {
        inner: rate_theory::transition_rates(&params.inner, None).map_err(py_err)?,
    })
}

/// Reduced-model steady state as a dict with `Pg`, `Ph`, `n_avg`, `W` and
/// `regime`.
#[pyfunction]
#[pyo3(signature = (params, n_max = 100))]
fn steady_state<'py>(py: Python<'py>, params: &ReducedParams, n_max: usize) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let s = py
        .detach(|| build_reduced_system_escalating(&params.inner, n_max).and_then(|sys| steady_point(&sys)))
        .map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("Pg", s.p_g)?;
    d.set_item("Ph", s.p_h)?;
    d.set_item("n_avg", s.n_avg)?;
    d.set_item("W", s.inversion)?;
    d.set_item("regime", s.regime.label())?;
    d.set_item("n_max", s.n_max)?;
    Ok(d)
}

/// `(negativity, log_negativity)` of a bipartite density matrix given as
/// nested lists.
#[pyfunction]
fn negativity(rho: Vec<Vec<Complex64>>, dims: Vec<usize>) -> PyResult<(f64, f64)> {
    let d = rho.len();
    if rho.iter().any(|r| r.len() != d) {
        return Err(ScenarioError::new_err("density matrix must be square"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| rho[i][j]);
    let n = negativity_matrix(&m, &dims).map_err(py_err)?;
    Ok((n.negativity, n.log_negativity))
}

/// Runs a CLI subcommand (`spectrum`, `reduce`, `rates`, `steady-scan`,
/// `evolve`, `figure`) and returns the written file paths.
#[pyfunction]
#[pyo3(signature = (scenario_path, command, out = None, figure = None, seed = None, paper_scale = false, entanglement = false, models = None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    scenario_path: PathBuf,
    command: &str,
    out: Option<PathBuf>,
    figure: Option<&str>,
    seed: Option<u64>,
    paper_scale: bool,
    entanglement: bool,
    models: Option<Vec<String>>,
) -> PyResult<Vec<String>> {
    let loaded = scenario::parse_scenario(&scenario_path).map_err(py_err)?;
    let models = models
        .map(|m| m.iter().map(|s| s.parse::<Model>()).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(py_err)?;
    let p = Pipeline::new(
        loaded,
        RunOptions {
            paper_scale,
            entanglement,
            plots: false,
            seed,
            out_dir: out,
            models,
        },
    );
    let figure = figure.map(|f| f.parse::<Figure>()).transpose().map_err(py_err)?;
    let outputs = py
        .detach(|| match command {
            "spectrum" => p.run_spectrum(),
            "reduce" => p.run_reduce(),
            "rates" => p.run_rates(),
            "steady-scan" => p.run_steady_scan(),
            "evolve" => p.run_evolve(),
            "figure" => match figure {
                Some(f) => p.run_figure(f),
                None => Err(Error::param("figure", "the figure command needs a figure name")),
            },
            other => Err(Error::param("command", format!("unknown command `{other}`"))),
        })
        .map_err(py_err)?;
    Ok(outputs.files.iter().map(|f| f.display().to_string()).collect())
}

#[pymodule]
fn mist_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", mist_core::VERSION)?;
    m.add("ScenarioError", m.py().get_type::<ScenarioError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<Spectrum>()?;
    m.add_class::<ReducedParams>()?;
    m.add_class::<Rates>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(diagonalize, m)?)?;
    m.add_function(wrap_pyfunction!(transition_rates, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(negativity, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
