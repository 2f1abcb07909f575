//! Two-level effective model in the dressed rotating frame.
//!
//! ```text
//! H_eff = δ_a a†a + (δ_g + χ_g a†a)|g⟩⟨g| + (δ_h + χ_h a†a)|h⟩⟨h|
//!       + g_eff (a†)^k |g⟩⟨h| + h.c. + ε_d (a + a†)
//! ```
//!
//! with a single cavity dissipator `κ D[a]`. The qubit factor comes first,
//! index 0 is `|g⟩` and index 1 is `|h⟩`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::operator_core::{
    destroy, evolve_density_matrix, evolve_with, number, projector, steady_state, BasisTag,
    DensityMatrix, EvolutionRecord, LabeledOperator, LindbladGenerator, StepperConfig,
};
use crate::rate_theory::conditional_amplitudes;
use crate::sw_transform::ReducedParams;
use crate::{Error, Result, C64};

pub const DEFAULT_N_MAX: usize = 100;
/// Largest truncation reached by automatic escalation.
pub const MAX_N_MAX: usize = 400;
pub const REGIME_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub params: ReducedParams,
    pub n_max: usize,
    pub h_eff: LabeledOperator,
    pub collapse: Vec<(f64, LabeledOperator)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedObservables {
    pub p_g: f64,
    pub p_h: f64,
    pub n_avg: f64,
}

/// Smallest truncation accepted for the drive in `params`, from the
/// heuristic `|α_g|² + 10 |α_g|`.
pub fn required_n_max(params: &ReducedParams) -> usize {
    let a = conditional_amplitudes(params).alpha_g.norm();
    (a * a + 10.0 * a).ceil() as usize
}

/// Truncation suggested when [`required_n_max`] exceeds the current one.
fn suggested_n_max(params: &ReducedParams) -> usize {
    (required_n_max(params) + 10).div_ceil(10) * 10
}

pub fn build_reduced_system(params: &ReducedParams, n_max: usize) -> Result<ReducedSystem> {
    params.validate()?;
    if n_max < 20 {
        return Err(Error::param("n_max", "must be at least 20"));
    }
    if params.kappa > 0.0 && required_n_max(params) > n_max {
        return Err(Error::Truncation(format!(
            "n_max = {n_max} is below |alpha_g|^2 + 10|alpha_g| = {}; use n_max >= {}",
            required_n_max(params),
            suggested_n_max(params)
        )));
    }
    let nf = n_max + 1;
    let a = destroy(nf);
    let ad = a.adjoint();
    let n = number(nf);
    let id = DMatrix::<C64>::identity(nf, nf);
    let (pg, ph) = (projector(2, 0), projector(2, 1));
    let re = |x: f64| C64::new(x, 0.0);

    let cav = &n * re(params.delta_a) + (&a + &ad) * re(params.epsilon_d);
    let hg = &id * re(params.delta_g) + &n * re(params.chi_g);
    let hh = &id * re(params.delta_h) + &n * re(params.chi_h);
    let mut adk = id.clone();
    for _ in 0..params.order_k {
        adk = &ad * adk;
    }
    let mut sgh = DMatrix::<C64>::zeros(2, 2);
    sgh[(0, 1)] = C64::new(1.0, 0.0);
    let coupling = sgh.kronecker(&(adk * params.g_eff));
    let h = DMatrix::<C64>::identity(2, 2).kronecker(&cav)
        + pg.kronecker(&hg)
        + ph.kronecker(&hh)
        + &coupling
        + coupling.adjoint();

    let dims = vec![2, nf];
    let h_eff = LabeledOperator::new(h, dims.clone(), BasisTag::ReducedRotating)?;
    if !h_eff.is_hermitian(1e-10) {
        return Err(Error::Numerical("effective Hamiltonian is not Hermitian".into()));
    }
    let a_full = LabeledOperator::new(
        DMatrix::<C64>::identity(2, 2).kronecker(&a),
        dims,
        BasisTag::ReducedRotating,
    )?;
    Ok(ReducedSystem {
        params: params.clone(),
        n_max,
        h_eff,
        collapse: vec![(params.kappa, a_full)],
    })
}

/// Like [`build_reduced_system`], raising `n_max` when the truncation
/// heuristic triggers. Returns the truncation actually used.
pub fn build_reduced_system_escalating(params: &ReducedParams, n_max: usize) -> Result<ReducedSystem> {
    let n = if params.kappa > 0.0 && required_n_max(params) > n_max {
        suggested_n_max(params).min(MAX_N_MAX)
    } else {
        n_max
    };
    build_reduced_system(params, n)
}

impl ReducedSystem {
    pub fn dims(&self) -> &[usize] {
        &self.h_eff.dims
    }

    /// `|q, n⟩⟨q, n|` with `q = 0` for `g` and `q = 1` for `h`.
    pub fn basis_density(&self, q: usize, n: usize) -> Result<DensityMatrix> {
        let nf = self.n_max + 1;
        if q > 1 || n >= nf {
            return Err(Error::dims(self.dims(), [q, n]));
        }
        let mut m = DMatrix::zeros(2 * nf, 2 * nf);
        m[(q * nf + n, q * nf + n)] = C64::new(1.0, 0.0);
        DensityMatrix::new(m, self.dims().to_vec(), BasisTag::ReducedRotating)
    }

    /// `[P_g, P_h, a†a]` as labeled operators.
    pub fn observables(&self) -> Result<[LabeledOperator; 3]> {
        let nf = self.n_max + 1;
        let id = DMatrix::<C64>::identity(nf, nf);
        let dims = self.dims().to_vec();
        let mk = |m: DMatrix<C64>| LabeledOperator::new(m, dims.clone(), BasisTag::ReducedRotating);
        Ok([
            mk(projector(2, 0).kronecker(&id))?,
            mk(projector(2, 1).kronecker(&id))?,
            mk(DMatrix::<C64>::identity(2, 2).kronecker(&number(nf)))?,
        ])
    }

    /// Dressed populations and photon number of `rho`.
    pub fn measure(&self, rho: &DensityMatrix) -> Result<ReducedObservables> {
        if rho.basis != BasisTag::ReducedRotating {
            return Err(Error::BasisMismatch {
                left: rho.basis,
                right: BasisTag::ReducedRotating,
            });
        }
        if rho.dims != self.dims() {
            return Err(Error::dims(self.dims(), &rho.dims));
        }
        Ok(measure_matrix(&rho.matrix, self.n_max + 1))
    }
}

/// Dressed populations and photon number of a raw `[2, nf]` density matrix.
pub fn measure_matrix(rho: &DMatrix<C64>, nf: usize) -> ReducedObservables {
    let mut p = [0.0; 2];
    let mut n_avg = 0.0;
    for q in 0..2 {
        for n in 0..nf {
            let v = rho[(q * nf + n, q * nf + n)].re;
            p[q] += v;
            n_avg += n as f64 * v;
        }
    }
    ReducedObservables {
        p_g: p[0],
        p_h: p[1],
        n_avg,
    }
}

#[derive(Debug, Clone)]
pub struct ReducedTimeSeries {
    pub times: Vec<f64>,
    pub observables: Vec<ReducedObservables>,
    pub snapshots: Vec<DensityMatrix>,
    pub record: EvolutionRecord,
}

pub fn evolve_reduced(
    system: &ReducedSystem,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    cfg: &StepperConfig,
    keep_snapshots: bool,
) -> Result<ReducedTimeSeries> {
    if rho0.basis != BasisTag::ReducedRotating {
        return Err(Error::BasisMismatch {
            left: rho0.basis,
            right: BasisTag::ReducedRotating,
        });
    }
    let obs = system.observables()?;
    let ts = evolve_density_matrix(rho0, &system.h_eff, &system.collapse, t_grid, cfg, &obs, keep_snapshots)?;
    let observables = (0..ts.times.len())
        .map(|k| ReducedObservables {
            p_g: ts.expectations[0][k].re,
            p_h: ts.expectations[1][k].re,
            n_avg: ts.expectations[2][k].re,
        })
        .collect();
    Ok(ReducedTimeSeries {
        times: ts.times,
        observables,
        snapshots: ts.snapshots,
        record: ts.record,
    })
}

/// Evolves `rho0` and hands every grid-time state to `observe` without
/// storing it.
pub fn evolve_reduced_with<F>(
    system: &ReducedSystem,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    cfg: &StepperConfig,
    observe: F,
) -> Result<EvolutionRecord>
where
    F: FnMut(f64, &DMatrix<C64>) -> Result<()>,
{
    if rho0.basis != BasisTag::ReducedRotating {
        return Err(Error::BasisMismatch {
            left: rho0.basis,
            right: BasisTag::ReducedRotating,
        });
    }
    if rho0.dims != system.dims() {
        return Err(Error::dims(system.dims(), &rho0.dims));
    }
    let collapse: Vec<(f64, &DMatrix<C64>)> = system.collapse.iter().map(|(r, l)| (*r, &l.matrix)).collect();
    let gen = LindbladGenerator::new(&system.h_eff.matrix, &collapse)?;
    evolve_with(&gen, &rho0.matrix, t_grid, cfg, observe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    #[serde(rename = "sub-MIST")]
    SubMist,
    #[serde(rename = "MIST")]
    Mist,
    #[serde(rename = "super-MIST")]
    SuperMist,
}

impl Regime {
    pub fn classify(p_g: f64, p_h: f64) -> Self {
        if p_g > REGIME_THRESHOLD {
            Regime::SubMist
        } else if p_h > REGIME_THRESHOLD {
            Regime::SuperMist
        } else {
            Regime::Mist
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::SubMist => "sub-MIST",
            Regime::Mist => "MIST",
            Regime::SuperMist => "super-MIST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyPoint {
    pub p_g: f64,
    pub p_h: f64,
    pub n_avg: f64,
    pub inversion: f64,
    pub regime: Regime,
    pub n_max: usize,
}

#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub epsilon_d: f64,
    pub delta_a: f64,
    pub outcome: std::result::Result<SteadyPoint, String>,
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
}

impl ScanResult {
    pub fn successes(&self) -> impl Iterator<Item = (&ScanPoint, &SteadyPoint)> {
        self.points.iter().filter_map(|p| p.outcome.as_ref().ok().map(|s| (p, s)))
    }
}

/// Steady state of one reduced system.
pub fn steady_point(system: &ReducedSystem) -> Result<SteadyPoint> {
    let cap = 2 * (MAX_N_MAX + 1);
    let rho = steady_state(&system.h_eff, &system.collapse, cap)?;
    let o = system.measure(&rho)?;
    Ok(SteadyPoint {
        p_g: o.p_g,
        p_h: o.p_h,
        n_avg: o.n_avg,
        inversion: o.p_h - o.p_g,
        regime: Regime::classify(o.p_g, o.p_h),
        n_max: system.n_max,
    })
}

/// Steady states over `epsilon_grid × delta_a_grid` (rad/ns). Without a
/// detuning grid the detuning of `params_base` is kept. Failures are
/// recorded per point. Points are ordered detuning-major.
pub fn steady_scan(
    params_base: &ReducedParams,
    epsilon_grid: &[f64],
    delta_a_grid: Option<&[f64]>,
    n_max: usize,
) -> Result<ScanResult> {
    if epsilon_grid.is_empty() || delta_a_grid.is_some_and(|d| d.is_empty()) {
        return Err(Error::param("grid", "must be nonempty"));
    }
    let detunings: Vec<f64> = delta_a_grid.map_or_else(|| vec![params_base.delta_a], |d| d.to_vec());
    let tasks: Vec<(f64, f64)> = detunings
        .iter()
        .flat_map(|&da| epsilon_grid.iter().map(move |&e| (e, da)))
        .collect();
    let points = tasks
        .par_iter()
        .map(|&(eps, da)| {
            let p = params_base
                .with_drive_frequency(params_base.omega_r - da)
                .with_drive(eps);
            let outcome = build_reduced_system_escalating(&p, n_max)
                .and_then(|s| steady_point(&s))
                .map_err(|e| e.to_string());
            ScanPoint {
                epsilon_d: eps,
                delta_a: da,
                outcome,
            }
        })
        .collect();
    Ok(ScanResult { points })
}
