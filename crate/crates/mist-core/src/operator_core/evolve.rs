use nalgebra::DMatrix;

use super::{
    expectation, hermitian_part, DensityGenerator, DensityMatrix, LabeledOperator,
    LindbladGenerator,
};
use crate::{Error, Result, C64};

/// Fixed-step RK4 settings.
///
/// Each output interval is cut into steps of at most `dt`; every step is
/// further split into equal substeps so that `h · rate_bound ≤ max_rate_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    /// Nominal step in ns.
    pub dt: f64,
    /// Cap on `h · R`, with `R` the generator's spectral bound.
    pub max_rate_step: f64,
    /// Trace drift above which the state is renormalized.
    pub renorm_tol: f64,
    /// Trace drift above which evolution aborts.
    pub abort_tol: f64,
    /// Check the minimum eigenvalue of every recorded state.
    pub check_positivity: bool,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt: 2.5,
            max_rate_step: 2.5,
            renorm_tol: 1e-7,
            abort_tol: 1e-4,
            check_positivity: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvolutionRecord {
    /// `(t, drift)` for each renormalization.
    pub renormalizations: Vec<(f64, f64)>,
    pub substeps: usize,
    pub min_eigenvalue: Option<f64>,
}

struct Rk4 {
    k1: DMatrix<C64>,
    k2: DMatrix<C64>,
    k3: DMatrix<C64>,
    k4: DMatrix<C64>,
    tmp: DMatrix<C64>,
    scratch: DMatrix<C64>,
}

impl Rk4 {
    fn new(d: usize) -> Self {
        let z = DMatrix::zeros(d, d);
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z.clone(),
            scratch: z,
        }
    }

    fn step<G: DensityGenerator + ?Sized>(&mut self, g: &G, t: f64, h: f64, rho: &mut DMatrix<C64>) {
        let half = C64::new(0.5 * h, 0.0);
        g.apply(t, rho, &mut self.k1, &mut self.scratch);
        self.tmp.copy_from(rho);
        axpy(&mut self.tmp, half, &self.k1);
        g.apply(t + 0.5 * h, &self.tmp, &mut self.k2, &mut self.scratch);
        self.tmp.copy_from(rho);
        axpy(&mut self.tmp, half, &self.k2);
        g.apply(t + 0.5 * h, &self.tmp, &mut self.k3, &mut self.scratch);
        self.tmp.copy_from(rho);
        axpy(&mut self.tmp, C64::new(h, 0.0), &self.k3);
        g.apply(t + h, &self.tmp, &mut self.k4, &mut self.scratch);
        let s = C64::new(h / 6.0, 0.0);
        let s2 = C64::new(h / 3.0, 0.0);
        axpy(rho, s, &self.k1);
        axpy(rho, s2, &self.k2);
        axpy(rho, s2, &self.k3);
        axpy(rho, s, &self.k4);
        hermitize(rho);
    }
}

/// Replaces `rho` by its Hermitian part. The generators assume Hermitian
/// input, so anti-Hermitian roundoff must not be carried between steps.
fn hermitize(rho: &mut DMatrix<C64>) {
    let d = rho.nrows();
    for j in 0..d {
        rho[(j, j)].im = 0.0;
        for i in j + 1..d {
            let m = 0.5 * (rho[(i, j)] + rho[(j, i)].conj());
            rho[(i, j)] = m;
            rho[(j, i)] = m.conj();
        }
    }
}

/// `y += a x` elementwise.
#[inline]
pub(crate) fn axpy(y: &mut DMatrix<C64>, a: C64, x: &DMatrix<C64>) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return Err(Error::param("t_grid", "must start at 0"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("t_grid", "must be strictly increasing and finite"));
    }
    Ok(())
}

/// Evolves `rho0` under `gen`, calling `observe(t, ρ)` at every grid time
/// (including `t = 0`).
pub fn evolve_with<G, F>(
    gen: &G,
    rho0: &DMatrix<C64>,
    t_grid: &[f64],
    cfg: &StepperConfig,
    mut observe: F,
) -> Result<EvolutionRecord>
where
    G: DensityGenerator + ?Sized,
    F: FnMut(f64, &DMatrix<C64>) -> Result<()>,
{
    check_grid(t_grid)?;
    if !(cfg.dt > 0.0 && cfg.max_rate_step > 0.0) {
        return Err(Error::param("stepper", "dt and max_rate_step must be positive"));
    }
    let d = gen.dim();
    if rho0.shape() != (d, d) {
        return Err(Error::dims((d, d), rho0.shape()));
    }
    let mut rho = rho0.clone();
    let mut rk = Rk4::new(d);
    let mut record = EvolutionRecord::default();
    let bound = gen.rate_bound();
    let check = |rho: &DMatrix<C64>, record: &mut EvolutionRecord| {
        if cfg.check_positivity {
            let m = DensityMatrix {
                matrix: hermitian_part(rho),
                dims: vec![d],
                basis: super::BasisTag::BareLab,
                trace: 1.0,
            }
            .min_eigenvalue();
            record.min_eigenvalue = Some(record.min_eigenvalue.map_or(m, |x: f64| x.min(m)));
        }
    };
    check(&rho, &mut record);
    observe(t_grid[0], &rho)?;
    for w in t_grid.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let outer = ((tb - ta) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let big = (tb - ta) / outer as f64;
        let sub = ((big * bound) / cfg.max_rate_step).ceil().max(1.0) as usize;
        let h = big / sub as f64;
        for o in 0..outer {
            let t0 = ta + o as f64 * big;
            for s in 0..sub {
                rk.step(gen, t0 + s as f64 * h, h, &mut rho);
            }
            record.substeps += sub;
            let tr = rho.trace().re;
            let drift = (tr - 1.0).abs();
            if !drift.is_finite() || drift > cfg.abort_tol {
                return Err(Error::StepInstability {
                    t: t0 + big,
                    drift,
                });
            }
            if drift > cfg.renorm_tol {
                rho.unscale_mut(tr);
                record.renormalizations.push((t0 + big, drift));
            }
        }
        check(&rho, &mut record);
        observe(tb, &rho)?;
    }
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct DensityTimeSeries {
    pub times: Vec<f64>,
    /// One row per observable, one column per time.
    pub expectations: Vec<Vec<C64>>,
    pub snapshots: Vec<DensityMatrix>,
    pub record: EvolutionRecord,
}

/// Lindblad evolution of labeled operands with expectation values recorded
/// at each grid time.
pub fn evolve_density_matrix(
    rho0: &DensityMatrix,
    h: &LabeledOperator,
    collapse: &[(f64, LabeledOperator)],
    t_grid: &[f64],
    cfg: &StepperConfig,
    observables: &[LabeledOperator],
    keep_snapshots: bool,
) -> Result<DensityTimeSeries> {
    let probe = rho0.as_operator();
    h.compatible(&probe)?;
    for (_, l) in collapse {
        h.compatible(l)?;
    }
    for o in observables {
        h.compatible(o)?;
    }
    let refs: Vec<(f64, &DMatrix<C64>)> = collapse.iter().map(|(r, l)| (*r, &l.matrix)).collect();
    let gen = LindbladGenerator::new(&h.matrix, &refs)?;
    let mut expectations = vec![Vec::with_capacity(t_grid.len()); observables.len()];
    let mut snapshots = Vec::new();
    let mut times = Vec::with_capacity(t_grid.len());
    let record = evolve_with(&gen, &rho0.matrix, t_grid, cfg, |t, rho| {
        times.push(t);
        let snap = DensityMatrix {
            matrix: rho.clone(),
            dims: rho0.dims.clone(),
            basis: rho0.basis,
            trace: rho.trace().re,
        };
        for (o, row) in observables.iter().zip(expectations.iter_mut()) {
            row.push(expectation(&snap, o)?);
        }
        if keep_snapshots {
            snapshots.push(snap);
        }
        Ok(())
    })?;
    Ok(DensityTimeSeries {
        times,
        expectations,
        snapshots,
        record,
    })
}
