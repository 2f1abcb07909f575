//! Scenario-driven pipelines behind the CLI subcommands and figures.
//!
//! Every pipeline collects its results in grid order before writing, so
//! output files do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde_json::json;

use crate::entanglement::{negativity_matrix, EnMeasure};
use crate::full_model::{
    monte_carlo_evolve, paper_trajectory_count, BareObservables, FullSystem, LabMap, McConfig,
    DESK_TRAJECTORIES,
};
use crate::operator_core::{BasisTag, StateVector, StepperConfig};
use crate::output::{render_svg, write_snapshot, Cell, CsvTable, Header};
use crate::qubit_spectrum::{diagonalize, find_multiphoton_resonance, QubitSpectrum};
use crate::rate_theory::{
    default_t_min, fit_initial_state, fit_relaxation, population_estimate, transition_rates,
    DressedLabel,
};
use crate::reduced_model::{
    build_reduced_system_escalating, evolve_reduced_with, measure_matrix, steady_scan,
    ReducedSystem,
};
use crate::scenario::{LoadedScenario, Model, Scenario};
use crate::semiclassical::{
    evolve_semiclassical, qubit_basis_state, SemiclassicalConfig, SEMICLASSICAL_NEGATIVITY,
};
use crate::sw_transform::{
    converged_second_order_params, first_order_generator, lab_frame_state, rwa_validity_report,
    third_order_params, CircuitInputs, ReducedParams, SWExpansion, DEFAULT_MARGIN,
};
use crate::units::{mhz, per_us, to_ghz, to_mhz};
use crate::{Error, Result, C64};

/// Snapshot times of the fig4 pipeline, in ns.
pub const FIG4_TIMES_NS: [f64; 3] = [250.0, 1000.0, 5000.0];

/// Start of the intermediate-level convergence loop and its step.
const SW_START_LEVELS: usize = 12;
const SW_STEP_LEVELS: usize = 4;
const SW_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig1b,
    Fig2a,
    Fig2b,
    Fig2c,
    Fig3,
    Fig4,
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig1b" => Figure::Fig1b,
            "fig2a" => Figure::Fig2a,
            "fig2b" => Figure::Fig2b,
            "fig2c" => Figure::Fig2c,
            "fig3" => Figure::Fig3,
            "fig4" => Figure::Fig4,
            _ => {
                return Err(Error::param(
                    "figure",
                    format!("unknown figure `{s}` (fig1b, fig2a, fig2b, fig2c, fig3, fig4)"),
                ))
            }
        })
    }
}

/// Command-line overrides of scenario settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub paper_scale: bool,
    pub entanglement: bool,
    pub plots: bool,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub models: Option<Vec<Model>>,
}

/// Tables produced by a pipeline, keyed by file name, and the files written.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub tables: BTreeMap<String, CsvTable>,
    pub files: Vec<PathBuf>,
}

/// Everything derived once from the qubit and circuit blocks.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spectrum: QubitSpectrum,
    pub h_level: usize,
    /// `ω_h − ω_g − k ω_r` in rad/ns.
    pub resonance_detuning: f64,
    pub base: ReducedParams,
    pub levels_used: usize,
    pub relative_change: f64,
}

/// Reduced-model time series with optional lab-frame and entanglement data.
#[derive(Debug, Clone)]
pub struct ReducedRun {
    pub times: Vec<f64>,
    pub p_g: Vec<f64>,
    pub p_h: Vec<f64>,
    pub n_avg: Vec<f64>,
    pub lab: Vec<BareObservables>,
    pub negativity: Vec<(f64, f64)>,
    pub n_max: usize,
    pub max_trace_drift: f64,
}

pub struct Pipeline {
    pub scenario: Scenario,
    pub sha256: String,
    pub opts: RunOptions,
}

fn j(v: f64) -> Cell {
    Cell::Num(v)
}

impl Pipeline {
    pub fn new(loaded: LoadedScenario, opts: RunOptions) -> Self {
        Self {
            scenario: loaded.scenario,
            sha256: loaded.sha256,
            opts,
        }
    }

    pub fn seed(&self) -> u64 {
        self.opts.seed.unwrap_or(self.scenario.run.seed)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.opts
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&self.scenario.outputs.directory))
    }

    pub fn entanglement(&self) -> bool {
        self.opts.entanglement || self.scenario.outputs.entanglement
    }

    pub fn plots(&self) -> bool {
        self.opts.plots || self.scenario.outputs.plots
    }

    pub fn models(&self) -> Vec<Model> {
        self.opts.models.clone().unwrap_or_else(|| self.scenario.run.models.clone())
    }

    fn header(&self) -> Header {
        Header::new(&self.sha256)
            .note("seed", self.seed())
            .note("scale", if self.opts.paper_scale { "paper" } else { "desk" })
    }

    fn stepper(&self) -> StepperConfig {
        StepperConfig {
            dt: self.scenario.run.dt_ns,
            ..Default::default()
        }
    }

    fn full_n_max(&self) -> usize {
        let t = &self.scenario.truncations;
        if self.opts.paper_scale {
            t.n_max
        } else {
            t.full_n_max
        }
    }

    fn trajectories(&self, epsilon_d_mhz: f64) -> usize {
        match self.scenario.run.trajectories {
            Some(n) => n,
            None if self.opts.paper_scale => paper_trajectory_count(epsilon_d_mhz),
            None => DESK_TRAJECTORIES,
        }
    }

    fn save(&self, out: &mut Outputs, name: &str, table: CsvTable, plot: Option<(&str, &[&str])>) -> Result<()> {
        let dir = self.out_dir();
        out.files.push(table.write(&dir, name, &self.header())?);
        if let (true, Some((x, ys))) = (self.plots(), plot) {
            if let Some(svg) = render_svg(&table, x, ys, name) {
                let path = dir.join(Path::new(name).with_extension("svg"));
                std::fs::write(&path, svg)?;
                out.files.push(path);
            }
        }
        out.tables.insert(name.to_string(), table);
        Ok(())
    }

    pub fn spectrum(&self) -> Result<QubitSpectrum> {
        diagonalize(&self.scenario.fluxonium(), self.scenario.truncations.sw_levels)
    }

    /// Spectrum, resonant level and converged base parameters at the first
    /// drive amplitude of the scenario.
    pub fn prepare(&self) -> Result<Prepared> {
        let s = &self.scenario;
        let spectrum = self.spectrum()?;
        let k = s.resonance.k;
        let h_level = match s.resonance.h_level {
            Some(h) => h,
            None => find_multiphoton_resonance(&spectrum, s.omega_r(), k)?.0,
        };
        let resonance_detuning = spectrum.omega_ij(0, h_level) - k as f64 * s.omega_r();
        let c = CircuitInputs {
            g: s.g(),
            omega_r: s.omega_r(),
            omega_d: s.omega_d(),
            epsilon_d: mhz(s.epsilon_grid_mhz()[0]),
            kappa: s.kappa(),
            g_level: 0,
            h_level,
        };
        let (base, levels_used, relative_change) = match k {
            2 => {
                let conv = converged_second_order_params(&spectrum, &c, SW_START_LEVELS, SW_STEP_LEVELS, SW_TOL)?;
                (conv.params, conv.levels_used, conv.relative_change)
            }
            3 => (third_order_params(&spectrum, &c)?, spectrum.level_count, f64::NAN),
            _ => return Err(Error::param("resonance.k", "only k = 2 and k = 3 are supported")),
        };
        Ok(Prepared {
            spectrum,
            h_level,
            resonance_detuning,
            base,
            levels_used,
            relative_change,
        })
    }

    pub fn params_at(&self, prep: &Prepared, epsilon_d_mhz: f64) -> ReducedParams {
        prep.base.with_drive(mhz(epsilon_d_mhz))
    }

    pub fn first_order(&self, prep: &Prepared) -> Result<SWExpansion> {
        let s = &self.scenario;
        first_order_generator(
            &prep.spectrum.truncated(s.truncations.j_max)?,
            s.g(),
            s.omega_r(),
            DEFAULT_MARGIN,
        )
    }

    pub fn full_system(&self, prep: &Prepared, epsilon_d_mhz: f64) -> Result<FullSystem> {
        let s = &self.scenario;
        FullSystem::new(
            &prep.spectrum,
            s.omega_r(),
            s.omega_d(),
            s.g(),
            s.kappa(),
            mhz(epsilon_d_mhz),
            self.full_n_max(),
            s.truncations.j_max,
        )
    }

    // ---- subcommands ----

    pub fn run_spectrum(&self) -> Result<Outputs> {
        let spec = self.spectrum()?;
        let mut out = Outputs::default();
        let mut levels = CsvTable::new(&["level", "omega_over_2pi_GHz"]);
        for (k, w) in spec.omega.iter().enumerate() {
            levels.push(vec![k.into(), j(to_ghz(*w))]);
        }
        self.save(&mut out, "spectrum.csv", levels, Some(("level", &["omega_over_2pi_GHz"])))?;
        let mut charge = CsvTable::new(&["i", "j", "re", "im"]);
        for a in 0..spec.level_count {
            for b in 0..spec.level_count {
                let z = spec.n_matrix[(a, b)];
                charge.push(vec![a.into(), b.into(), j(z.re), j(z.im)]);
            }
        }
        self.save(&mut out, "charge_matrix.csv", charge, None)?;
        Ok(out)
    }

    /// Reduced parameters in ordinary MHz plus the validity report, as JSON.
    pub fn reduced_params_json(&self) -> Result<serde_json::Value> {
        let prep = self.prepare()?;
        let p = &prep.base;
        let s = &self.scenario;
        let report = rwa_validity_report(
            &prep.spectrum.truncated(s.truncations.j_max)?,
            s.g(),
            s.omega_r(),
            s.omega_d(),
            p.epsilon_d,
            p.kappa,
            DEFAULT_MARGIN,
        );
        let (cg, ch) = p.chi_check();
        Ok(json!({
            "units": "MHz (ordinary frequency)",
            "delta_a": to_mhz(p.delta_a),
            "delta_g": to_mhz(p.delta_g),
            "delta_h": to_mhz(p.delta_h),
            "delta_q": to_mhz(p.delta_q),
            "chi_g": to_mhz(p.chi_g),
            "chi_h": to_mhz(p.chi_h),
            "chi_check_g": to_mhz(cg),
            "chi_check_h": to_mhz(ch),
            "lambda_g": to_mhz(p.lambda_g),
            "lambda_h": to_mhz(p.lambda_h),
            "g_eff": {"re": to_mhz(p.g_eff.re), "im": to_mhz(p.g_eff.im), "abs": to_mhz(p.g_eff.norm())},
            "order_k": p.order_k,
            "kappa": to_mhz(p.kappa),
            "epsilon_d": to_mhz(p.epsilon_d),
            "omega_r": to_mhz(p.omega_r),
            "omega_d": to_mhz(p.omega_d),
            "omega_g": to_mhz(p.omega_g),
            "omega_h": to_mhz(p.omega_h),
            "g_level": p.g_level,
            "h_level": p.h_level,
            "resonance_detuning": to_mhz(prep.resonance_detuning),
            "intermediate_levels": prep.levels_used,
            "convergence_relative_change": if prep.relative_change.is_finite() { json!(prep.relative_change) } else { json!(null) },
            "validity_report": report,
        }))
    }

    pub fn run_reduce(&self) -> Result<Outputs> {
        let value = self.reduced_params_json()?;
        let dir = self.out_dir();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("reduced_params.json");
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| Error::Numerical(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(Outputs {
            tables: BTreeMap::new(),
            files: vec![path],
        })
    }

    /// Analytic rates over the drive grid, in 1/μs.
    pub fn rates_table(&self, prep: &Prepared) -> CsvTable {
        let grid = self.scenario.epsilon_grid_mhz();
        let results: Vec<_> = grid
            .par_iter()
            .map(|&e| transition_rates(&self.params_at(prep, e), None))
            .collect();
        let mut t = CsvTable::new(&[
            "epsilon_d_MHz",
            "gamma_g",
            "gamma_h",
            "gamma",
            "Pg_ss",
            "Ph_ss",
            "kappa_over_geff",
            "note",
        ]);
        for (e, r) in grid.iter().zip(results) {
            match r {
                Ok(r) => t.push(vec![
                    j(*e),
                    j(per_us(r.gamma_g)),
                    j(per_us(r.gamma_h)),
                    j(per_us(r.gamma)),
                    j(r.pg_ss),
                    j(r.ph_ss),
                    j(r.bad_cavity_ratio),
                    "".into(),
                ]),
                Err(err) => t.push(vec![
                    j(*e),
                    j(f64::NAN),
                    j(f64::NAN),
                    j(f64::NAN),
                    j(f64::NAN),
                    j(f64::NAN),
                    j(f64::NAN),
                    err.to_string().into(),
                ]),
            }
        }
        t
    }

    pub fn run_rates(&self) -> Result<Outputs> {
        let prep = self.prepare()?;
        let mut out = Outputs::default();
        self.save(&mut out, "rates.csv", self.rates_table(&prep), Some(("epsilon_d_MHz", &["gamma"])))?;
        Ok(out)
    }

    /// Steady states over the drive grid (and detuning grid, if any).
    pub fn scan_table(&self, prep: &Prepared, with_detuning: bool) -> Result<CsvTable> {
        let eps: Vec<f64> = self.scenario.epsilon_grid_mhz().into_iter().map(mhz).collect();
        let deltas: Option<Vec<f64>> = if with_detuning {
            self.scenario.delta_a_grid_mhz().map(|d| d.into_iter().map(mhz).collect())
        } else {
            None
        };
        let scan = steady_scan(&prep.base, &eps, deltas.as_deref(), self.scenario.truncations.n_max)?;
        let mut t = CsvTable::new(&[
            "epsilon_d_MHz",
            "delta_a_MHz",
            "Pg_ss",
            "Ph_ss",
            "navg_ss",
            "W_ss",
            "regime",
            "n_max",
            "note",
        ]);
        for p in &scan.points {
            let (e, d) = (to_mhz(p.epsilon_d), to_mhz(p.delta_a));
            match &p.outcome {
                Ok(s) => t.push(vec![
                    j(e),
                    j(d),
                    j(s.p_g),
                    j(s.p_h),
                    j(s.n_avg),
                    j(s.inversion),
                    s.regime.label().into(),
                    s.n_max.into(),
                    "".into(),
                ]),
                Err(msg) => t.push(vec![
                    j(e),
                    j(d),
                    j(f64::NAN),
                    j(f64::NAN),
                    j(f64::NAN),
                    j(f64::NAN),
                    "".into(),
                    "".into(),
                    msg.clone().into(),
                ]),
            }
        }
        Ok(t)
    }

    pub fn run_steady_scan(&self) -> Result<Outputs> {
        let prep = self.prepare()?;
        let mut out = Outputs::default();
        let table = self.scan_table(&prep, true)?;
        self.save(&mut out, "scan.csv", table, Some(("epsilon_d_MHz", &["Pg_ss", "Ph_ss"])))?;
        Ok(out)
    }

    /// Reduced-model evolution from dressed `|initial, 0⟩`. Lab-frame
    /// observables are recorded when `lab` is given.
    pub fn reduced_run(
        &self,
        params: &ReducedParams,
        initial: DressedLabel,
        t_grid: &[f64],
        lab: Option<&LabMap>,
        entanglement: bool,
        snapshot_dir: Option<&Path>,
    ) -> Result<ReducedRun> {
        let system: ReducedSystem = build_reduced_system_escalating(params, self.scenario.truncations.n_max)?;
        let q = match initial {
            DressedLabel::G => 0,
            DressedLabel::H => 1,
        };
        let rho0 = system.basis_density(q, 0)?;
        let nf = system.n_max + 1;
        let dims = system.dims().to_vec();
        let mut run = ReducedRun {
            times: Vec::with_capacity(t_grid.len()),
            p_g: Vec::new(),
            p_h: Vec::new(),
            n_avg: Vec::new(),
            lab: Vec::new(),
            negativity: Vec::new(),
            n_max: system.n_max,
            max_trace_drift: 0.0,
        };
        if let Some(dir) = snapshot_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut index = 0usize;
        evolve_reduced_with(&system, &rho0, t_grid, &self.stepper(), |t, rho| {
            let o = measure_matrix(rho, nf);
            run.times.push(t);
            run.p_g.push(o.p_g);
            run.p_h.push(o.p_h);
            run.n_avg.push(o.n_avg);
            run.max_trace_drift = run.max_trace_drift.max((rho.trace().re - 1.0).abs());
            if let Some(map) = lab {
                run.lab.push(map.observe(rho, nf, t));
            }
            if entanglement {
                let n = negativity_matrix(rho, &dims)?;
                run.negativity.push((n.negativity, n.log_negativity));
            }
            if let Some(dir) = snapshot_dir {
                let d = crate::operator_core::DensityMatrix {
                    matrix: rho.clone(),
                    dims: dims.clone(),
                    basis: BasisTag::ReducedRotating,
                    trace: 1.0,
                };
                write_snapshot(&dir.join(format!("rho_{index:05}.bin")), &d)?;
            }
            index += 1;
            Ok(())
        })?;
        Ok(run)
    }

    fn en_columns(&self) -> Vec<&'static str> {
        vec!["negativity", "log_negativity", "E_N"]
    }

    fn en_cells(&self, neg: f64, log_neg: f64) -> Vec<Cell> {
        let en = match self.scenario.outputs.en_measure {
            EnMeasure::LogNegativity => log_neg,
            EnMeasure::Negativity => neg,
        };
        vec![j(neg), j(log_neg), j(en)]
    }

    /// Time series of the requested models at a single drive amplitude.
    pub fn evolve_models(&self, prep: &Prepared, epsilon_d_mhz: f64, models: &[Model], entanglement: bool) -> Result<Outputs> {
        let mut out = Outputs::default();
        let grid = self.scenario.time_grid_ns();
        let jm = self.scenario.truncations.j_max;
        let params = self.params_at(prep, epsilon_d_mhz);
        let p_cols: Vec<String> = (0..jm).map(|k| format!("P{k}")).collect();
        let needs_lab = models.contains(&Model::Full);
        let sw = self.first_order(prep)?;
        let full = self.full_system(prep, epsilon_d_mhz)?;
        if models.contains(&Model::Reduced) {
            let map = if needs_lab {
                Some(LabMap::new(&sw, &params, jm, full.n_max)?)
            } else {
                None
            };
            let snaps = self.scenario.outputs.snapshots.then(|| self.out_dir().join("reduced_snapshots"));
            let run = self.reduced_run(&params, DressedLabel::G, &grid, map.as_ref(), entanglement, snaps.as_deref())?;
            let mut cols: Vec<String> = ["t_ns", "Pg", "Ph", "n_avg"].iter().map(|s| s.to_string()).collect();
            if needs_lab {
                cols.extend(p_cols.iter().map(|c| format!("{c}_lab")));
            }
            if entanglement {
                cols.extend(self.en_columns().iter().map(|s| s.to_string()));
            }
            let mut t = CsvTable::new(&cols);
            for k in 0..run.times.len() {
                let mut row = vec![j(run.times[k]), j(run.p_g[k]), j(run.p_h[k]), j(run.n_avg[k])];
                if needs_lab {
                    row.extend(run.lab[k].populations.iter().map(|v| j(*v)));
                }
                if entanglement {
                    let (n, l) = run.negativity[k];
                    row.extend(self.en_cells(n, l));
                }
                t.push(row);
            }
            self.save(&mut out, "reduced_timeseries.csv", t, Some(("t_ns", &["Pg", "Ph"])))?;
        }
        if models.contains(&Model::Full) {
            let dressed = StateVector::basis_state(&full.dims(), &[0, 0], BasisTag::DressedRotating)?;
            let (psi0, _) = lab_frame_state(&sw, &dressed)?;
            let ens = monte_carlo_evolve(
                &full,
                &psi0,
                &grid,
                self.trajectories(epsilon_d_mhz),
                self.seed(),
                &McConfig::default(),
            )?;
            let mut cols = vec!["t_ns".to_string()];
            cols.extend(p_cols.iter().cloned());
            cols.push("n_avg".into());
            cols.push("stderr_Pg".into());
            let mut t = CsvTable::new(&cols);
            for k in 0..grid.len() {
                let mut row = vec![j(grid[k])];
                row.extend(ens.populations[k].iter().map(|v| j(*v)));
                row.push(j(ens.n_avg[k]));
                row.push(j(ens.stderr_pg[k]));
                t.push(row);
            }
            self.save(&mut out, "full_timeseries.csv", t, Some(("t_ns", &["P0", "P1"])))?;
        }
        if models.contains(&Model::Semiclassical) {
            let sc = evolve_semiclassical(
                &full,
                &qubit_basis_state(jm, 0)?,
                C64::new(0.0, 0.0),
                &grid,
                &SemiclassicalConfig {
                    dt: self.scenario.run.dt_ns,
                    ..Default::default()
                },
            )?;
            let mut cols = vec!["t_ns".to_string()];
            cols.extend(p_cols.iter().cloned());
            cols.push("n_avg".into());
            if entanglement {
                cols.extend(self.en_columns().iter().map(|s| s.to_string()));
            }
            let mut t = CsvTable::new(&cols);
            for k in 0..grid.len() {
                let mut row = vec![j(grid[k])];
                row.extend(sc.populations[k].iter().map(|v| j(*v)));
                row.push(j(sc.n_avg[k]));
                if entanglement {
                    row.extend(self.en_cells(SEMICLASSICAL_NEGATIVITY, SEMICLASSICAL_NEGATIVITY));
                }
                t.push(row);
            }
            self.save(&mut out, "sc_timeseries.csv", t, Some(("t_ns", &["P0", "P1"])))?;
        }
        Ok(out)
    }

    fn single_epsilon(&self) -> Result<f64> {
        let grid = self.scenario.epsilon_grid_mhz();
        if grid.len() != 1 {
            return Err(Error::Scenario {
                path: "circuit.epsilon_d_MHz".into(),
                message: "this pipeline needs a single drive amplitude, not a sweep".into(),
            });
        }
        Ok(grid[0])
    }

    pub fn run_evolve(&self) -> Result<Outputs> {
        let prep = self.prepare()?;
        self.evolve_models(&prep, self.single_epsilon()?, &self.models(), self.entanglement())
    }

    /// Rates fitted to reduced-model relaxation, next to the analytic ones.
    pub fn fitted_rates_table(&self, prep: &Prepared) -> CsvTable {
        let grid = self.scenario.epsilon_grid_mhz();
        let times = self.scenario.time_grid_ns();
        let t_min = default_t_min(self.scenario.kappa());
        let rows: Vec<Vec<Cell>> = grid
            .par_iter()
            .map(|&e| {
                let params = self.params_at(prep, e);
                let initial = fit_initial_state(e);
                let label = match initial {
                    DressedLabel::G => "g",
                    DressedLabel::H => "h",
                };
                let analytic = transition_rates(&params, None).map(|r| per_us(r.gamma)).unwrap_or(f64::NAN);
                let fitted = self
                    .reduced_run(&params, initial, &times, None, false, None)
                    .and_then(|run| fit_relaxation(&run.times, &run.p_g, t_min));
                match fitted {
                    Ok(f) => {
                        let g = per_us(f.gamma);
                        vec![j(e), label.into(), j(g), j(analytic), j((g - analytic) / analytic), j(f.p_ss), j(f.coverage), "".into()]
                    }
                    Err(err) => vec![
                        j(e),
                        label.into(),
                        j(f64::NAN),
                        j(analytic),
                        j(f64::NAN),
                        j(f64::NAN),
                        j(f64::NAN),
                        err.to_string().into(),
                    ],
                }
            })
            .collect();
        let mut t = CsvTable::new(&[
            "epsilon_d_MHz",
            "initial",
            "gamma_fit",
            "gamma_analytic",
            "relative_difference",
            "Pss_fit",
            "coverage",
            "note",
        ]);
        for r in rows {
            t.push(r);
        }
        t
    }

    /// Populations at [`FIG4_TIMES_NS`] for every drive amplitude, and the
    /// closed-form estimate at 1 μs.
    pub fn fig4_tables(&self, prep: &Prepared, models: &[Model]) -> Result<(CsvTable, CsvTable)> {
        let grid = self.scenario.epsilon_grid_mhz();
        let mut times = vec![0.0];
        times.extend(FIG4_TIMES_NS);
        let jm = self.scenario.truncations.j_max;
        let sw = self.first_order(prep)?;
        let per_point: Vec<(Vec<Vec<Cell>>, Vec<Cell>)> = grid
            .par_iter()
            .map(|&e| {
                let mut rows = Vec::new();
                let params = self.params_at(prep, e);
                let note = |r: &Result<()>| r.as_ref().err().map(|x| x.to_string()).unwrap_or_default();
                let mut reduced_1us = f64::NAN;
                if models.contains(&Model::Reduced) {
                    let r = self.reduced_run(&params, DressedLabel::G, &times, None, false, None).map(|run| {
                        for (k, t) in FIG4_TIMES_NS.iter().enumerate() {
                            rows.push(vec![j(e), j(t * 1e-3), "reduced".into(), j(run.p_g[k + 1]), "".into()]);
                        }
                        reduced_1us = run.p_g[2];
                    });
                    if r.is_err() {
                        rows.push(vec![j(e), j(f64::NAN), "reduced".into(), j(f64::NAN), note(&r).into()]);
                    }
                }
                if models.contains(&Model::Semiclassical) {
                    let r = self.full_system(prep, e).and_then(|full| {
                        let sc = evolve_semiclassical(
                            &full,
                            &qubit_basis_state(jm, 0)?,
                            C64::new(0.0, 0.0),
                            &times,
                            &SemiclassicalConfig {
                                dt: self.scenario.run.dt_ns,
                                ..Default::default()
                            },
                        )?;
                        for (k, t) in FIG4_TIMES_NS.iter().enumerate() {
                            rows.push(vec![j(e), j(t * 1e-3), "semiclassical".into(), j(sc.populations[k + 1][0]), "".into()]);
                        }
                        Ok(())
                    });
                    if r.is_err() {
                        rows.push(vec![j(e), j(f64::NAN), "semiclassical".into(), j(f64::NAN), note(&r).into()]);
                    }
                }
                if models.contains(&Model::Full) {
                    let r = self.full_system(prep, e).and_then(|full| {
                        let dressed = StateVector::basis_state(&full.dims(), &[0, 0], BasisTag::DressedRotating)?;
                        let (psi0, _) = lab_frame_state(&sw, &dressed)?;
                        let ens = monte_carlo_evolve(&full, &psi0, &times, self.trajectories(e), self.seed(), &McConfig::default())?;
                        for (k, t) in FIG4_TIMES_NS.iter().enumerate() {
                            rows.push(vec![j(e), j(t * 1e-3), "full".into(), j(ens.populations[k + 1][0]), "".into()]);
                        }
                        Ok(())
                    });
                    if r.is_err() {
                        rows.push(vec![j(e), j(f64::NAN), "full".into(), j(f64::NAN), note(&r).into()]);
                    }
                }
                let est = match transition_rates(&params, None) {
                    Ok(rates) => {
                        let (pg, _) = population_estimate(&rates, 1000.0, DressedLabel::G);
                        vec![j(e), j(pg), j(reduced_1us), "".into()]
                    }
                    Err(err) => vec![j(e), j(f64::NAN), j(reduced_1us), err.to_string().into()],
                };
                (rows, est)
            })
            .collect();
        let mut snaps = CsvTable::new(&["epsilon_d_MHz", "t_us", "model", "Pg", "note"]);
        let mut est = CsvTable::new(&["epsilon_d_MHz", "Pg_estimate_1us", "Pg_reduced_1us", "note"]);
        for (rows, e) in per_point {
            for r in rows {
                snaps.push(r);
            }
            est.push(e);
        }
        Ok((snaps, est))
    }

    pub fn run_figure(&self, figure: Figure) -> Result<Outputs> {
        match figure {
            Figure::Fig1b => self.run_spectrum(),
            Figure::Fig2a | Figure::Fig2b => {
                let prep = self.prepare()?;
                let mut out = Outputs::default();
                let scan = self.scan_table(&prep, false)?;
                self.save(&mut out, "scan.csv", scan, Some(("epsilon_d_MHz", &["Pg_ss", "Ph_ss", "navg_ss"])))?;
                self.save(&mut out, "rates.csv", self.rates_table(&prep), Some(("epsilon_d_MHz", &["gamma", "gamma_g", "gamma_h"])))?;
                let fitted = self.fitted_rates_table(&prep);
                self.save(&mut out, "fitted_rates.csv", fitted, Some(("epsilon_d_MHz", &["gamma_fit", "gamma_analytic"])))?;
                Ok(out)
            }
            Figure::Fig2c => {
                let prep = self.prepare()?;
                let mut out = Outputs::default();
                let scan = self.scan_table(&prep, true)?;
                let mut inv = CsvTable::new(&["epsilon_d_sq_MHz2", "delta_a_MHz", "W_ss"]);
                let (e, d, w) = (
                    scan.column("epsilon_d_MHz").unwrap(),
                    scan.column("delta_a_MHz").unwrap(),
                    scan.column("W_ss").unwrap(),
                );
                for k in 0..e.len() {
                    inv.push(vec![j(e[k] * e[k]), j(d[k]), j(w[k])]);
                }
                self.save(&mut out, "scan.csv", scan, None)?;
                self.save(&mut out, "fig2c_inversion.csv", inv, None)?;
                Ok(out)
            }
            Figure::Fig3 => {
                let prep = self.prepare()?;
                self.evolve_models(&prep, self.single_epsilon()?, &self.models(), true)
            }
            Figure::Fig4 => {
                let prep = self.prepare()?;
                let mut out = Outputs::default();
                let (snaps, est) = self.fig4_tables(&prep, &self.models())?;
                self.save(&mut out, "fig4_snapshots.csv", snaps, None)?;
                self.save(&mut out, "fig4d_estimate.csv", est, Some(("epsilon_d_MHz", &["Pg_estimate_1us", "Pg_reduced_1us"])))?;
                Ok(out)
            }
        }
    }
}
