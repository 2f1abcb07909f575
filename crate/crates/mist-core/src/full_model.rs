//! Full driven qubit-resonator model in the bare lab basis.
//!
//! ```text
//! H_full(t) = ω_r a†a + H_q + i g n (a† − a) − 2i ε_d sin(ω_d t) (a† − a)
//! ```
//!
//! with cavity decay `κ D[a]`. Since `H_full` is periodic with period
//! `T = 2π/ω_d`, quantum trajectories are propagated with one-period
//! non-Hermitian propagators sampled on a sub-grid of `T`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::operator_core::{
    axpy, destroy, gershgorin_spread, evolve_with, BasisTag, CsrMatrix, DensityGenerator, DensityMatrix, EvolutionRecord,
    LabeledOperator, StateVector, StepperConfig,
};
use crate::qubit_spectrum::QubitSpectrum;
use crate::sw_transform::{exp_generator, ReducedParams, SWExpansion};
use crate::{Error, Result, C64};

const I: C64 = C64::new(0.0, 1.0);

pub const DEFAULT_J_MAX: usize = 4;
pub const DESK_N_MAX: usize = 40;
pub const DESK_TRAJECTORIES: usize = 100;

/// Trajectory count for a drive amplitude in ordinary MHz: 200 up to
/// 12 MHz, 400 above.
pub fn paper_trajectory_count(epsilon_d_mhz: f64) -> usize {
    if epsilon_d_mhz <= 12.0 {
        200
    } else {
        400
    }
}

#[derive(Debug, Clone)]
pub struct FullSystem {
    pub spectrum: QubitSpectrum,
    pub omega_r: f64,
    pub omega_d: f64,
    pub g: f64,
    pub kappa: f64,
    pub epsilon_d: f64,
    pub n_max: usize,
    pub j_max: usize,
}

impl FullSystem {
    pub fn new(
        spectrum: &QubitSpectrum,
        omega_r: f64,
        omega_d: f64,
        g: f64,
        kappa: f64,
        epsilon_d: f64,
        n_max: usize,
        j_max: usize,
    ) -> Result<Self> {
        if j_max < 2 {
            return Err(Error::param("j_max", "must be at least 2"));
        }
        if n_max < 1 {
            return Err(Error::param("n_max", "must be at least 1"));
        }
        for (name, v) in [("omega_r", omega_r), ("omega_d", omega_d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if !(kappa >= 0.0 && g.is_finite() && epsilon_d.is_finite()) {
            return Err(Error::param("circuit", "kappa must be non-negative and g, epsilon_d finite"));
        }
        Ok(Self {
            spectrum: spectrum.truncated(j_max)?,
            omega_r,
            omega_d,
            g,
            kappa,
            epsilon_d,
            n_max,
            j_max,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.j_max, self.n_max + 1]
    }

    pub fn dim(&self) -> usize {
        self.j_max * (self.n_max + 1)
    }

    /// Bare energies `ω_j + n ω_r` in product order.
    pub fn bare_energies(&self) -> Vec<f64> {
        let nf = self.n_max + 1;
        (0..self.dim())
            .map(|k| self.spectrum.omega[k / nf] + (k % nf) as f64 * self.omega_r)
            .collect()
    }

    /// `I ⊗ a`.
    pub fn annihilation(&self) -> DMatrix<C64> {
        DMatrix::<C64>::identity(self.j_max, self.j_max).kronecker(&destroy(self.n_max + 1))
    }

    /// `I ⊗ (a† − a)`.
    pub fn quadrature(&self) -> DMatrix<C64> {
        let a = destroy(self.n_max + 1);
        DMatrix::<C64>::identity(self.j_max, self.j_max).kronecker(&(a.adjoint() - a))
    }

    /// `i g n ⊗ (a† − a)`.
    pub fn coupling(&self) -> DMatrix<C64> {
        let a = destroy(self.n_max + 1);
        (&self.spectrum.n_matrix * (I * self.g)).kronecker(&(a.adjoint() - a))
    }

    pub fn h_qr(&self) -> DMatrix<C64> {
        let mut h = self.coupling();
        for (k, e) in self.bare_energies().into_iter().enumerate() {
            h[(k, k)] += e;
        }
        h
    }

    /// `−2i ε_d sin(ω_d t)`, the coefficient of `(a† − a)`.
    pub fn drive_coefficient(&self, t: f64) -> C64 {
        -2.0 * I * self.epsilon_d * (self.omega_d * t).sin()
    }

    pub fn hamiltonian_at(&self, t: f64) -> Result<LabeledOperator> {
        if !(t >= 0.0) {
            return Err(Error::param("t", "must be non-negative"));
        }
        let h = self.h_qr() + self.quadrature() * self.drive_coefficient(t);
        LabeledOperator::new(h, self.dims(), BasisTag::BareLab)
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega_d
    }
}

/// Time-dependent Lindblad generator of the full model.
#[derive(Debug, Clone)]
pub struct FullGenerator {
    dim: usize,
    h_nh: CsrMatrix,
    drive: CsrMatrix,
    jump: CsrMatrix,
    kappa: f64,
    eps: f64,
    omega_d: f64,
    bound: f64,
}

impl FullGenerator {
    pub fn new(system: &FullSystem) -> Self {
        let mut h_nh = system.h_qr();
        let nf = system.n_max + 1;
        for k in 0..system.dim() {
            h_nh[(k, k)] -= I * (0.5 * system.kappa * (k % nf) as f64);
        }
        let quad = system.quadrature();
        let hq = system.h_qr();
        let spread = gershgorin_spread(&hq);
        let quad_norm = CsrMatrix::from_dense(&quad).row_sum_norm();
        Self {
            dim: system.dim(),
            h_nh: CsrMatrix::from_dense(&h_nh),
            drive: CsrMatrix::from_dense(&quad),
            jump: CsrMatrix::from_dense(&system.annihilation()),
            kappa: system.kappa,
            eps: system.epsilon_d,
            omega_d: system.omega_d,
            bound: spread + 4.0 * system.epsilon_d.abs() * quad_norm + system.kappa * system.n_max as f64,
        }
    }
}

impl DensityGenerator for FullGenerator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rate_bound(&self) -> f64 {
        self.bound
    }

    fn apply(&self, t: f64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, x: &mut DMatrix<C64>) {
        let d = self.dim;
        self.h_nh.mul_dense(rho, x);
        let s = -2.0 * I * self.eps * (self.omega_d * t).sin();
        if s.norm() > 0.0 {
            self.drive.mul_dense(rho, out);
            axpy(x, s, out);
        }
        for j in 0..d {
            for i in 0..d {
                let a = x[(i, j)];
                let b = x[(j, i)];
                out[(i, j)] = C64::new(a.im + b.im, -a.re + b.re);
            }
        }
        if self.kappa > 0.0 {
            self.jump.mul_dense(rho, x);
            self.jump.add_right_adjoint(self.kappa, x, out);
        }
    }
}

/// Bare-basis populations `P_j` and photon number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BareObservables {
    pub populations: Vec<f64>,
    pub n_avg: f64,
}

fn observe_amplitudes(psi: &[C64], j_max: usize, nf: usize) -> BareObservables {
    let mut populations = vec![0.0; j_max];
    let mut n_avg = 0.0;
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    for (k, z) in psi.iter().enumerate() {
        let p = z.norm_sqr() / norm;
        populations[k / nf] += p;
        n_avg += (k % nf) as f64 * p;
    }
    BareObservables { populations, n_avg }
}

fn observe_density(rho: &DMatrix<C64>, j_max: usize, nf: usize) -> BareObservables {
    let mut populations = vec![0.0; j_max];
    let mut n_avg = 0.0;
    for k in 0..j_max * nf {
        let p = rho[(k, k)].re;
        populations[k / nf] += p;
        n_avg += (k % nf) as f64 * p;
    }
    BareObservables { populations, n_avg }
}

fn require_bare(basis: BasisTag, dims: &[usize]) -> Result<()> {
    if basis != BasisTag::BareLab {
        return Err(Error::BasisMismatch {
            left: basis,
            right: BasisTag::BareLab,
        });
    }
    if dims.len() != 2 {
        return Err(Error::dims("[levels, photons]", dims));
    }
    Ok(())
}

pub fn bare_observables_state(psi: &StateVector) -> Result<BareObservables> {
    require_bare(psi.basis, &psi.dims)?;
    Ok(observe_amplitudes(psi.amplitudes.as_slice(), psi.dims[0], psi.dims[1]))
}

pub fn bare_observables(rho: &DensityMatrix) -> Result<BareObservables> {
    require_bare(rho.basis, &rho.dims)?;
    Ok(observe_density(&rho.matrix, rho.dims[0], rho.dims[1]))
}

/// Maps reduced-model states to bare lab-frame observables on a
/// `[j_max, n_max + 1]` space: undo the rotating frame, embed `g` and `h`,
/// then apply `e^{−S}`.
#[derive(Debug, Clone)]
pub struct LabMap {
    j_max: usize,
    nf: usize,
    g_level: usize,
    h_level: usize,
    k: usize,
    omega_d: f64,
    unitary: DMatrix<C64>,
}

impl LabMap {
    pub fn new(sw: &SWExpansion, params: &ReducedParams, j_max: usize, n_max: usize) -> Result<Self> {
        if params.g_level >= j_max || params.h_level >= j_max {
            return Err(Error::Truncation(format!(
                "levels ({}, {}) outside j_max = {j_max}",
                params.g_level, params.h_level
            )));
        }
        let s = sw.joint_generator(j_max, n_max + 1)?;
        Ok(Self {
            j_max,
            nf: n_max + 1,
            g_level: params.g_level,
            h_level: params.h_level,
            k: params.order_k,
            omega_d: params.omega_d,
            unitary: exp_generator(&s, -1.0),
        })
    }

    /// Bare observables of the reduced state `rho` (dims `[2, nf_reduced]`)
    /// at time `t`. Photon numbers above the lab cutoff are dropped and the
    /// result renormalized.
    pub fn observe(&self, rho: &DMatrix<C64>, nf_reduced: usize, t: f64) -> BareObservables {
        let nf = self.nf.min(nf_reduced);
        let mut support = Vec::with_capacity(2 * nf);
        let mut phase = Vec::with_capacity(2 * nf);
        let mut src = Vec::with_capacity(2 * nf);
        for (q, level) in [(0usize, self.g_level), (1, self.h_level)] {
            for n in 0..nf {
                support.push(level * self.nf + n);
                let theta = self.omega_d * t * (n + q * self.k) as f64;
                phase.push(C64::from_polar(1.0, -theta));
                src.push(q * nf_reduced + n);
            }
        }
        let m = support.len();
        let sub = DMatrix::from_fn(m, m, |a, b| phase[a] * rho[(src[a], src[b])] * phase[b].conj());
        let w = self.unitary.select_columns(&support);
        let mw = &w * &sub;
        let d = self.j_max * self.nf;
        let mut diag = vec![0.0; d];
        for r in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..m {
                acc += mw[(r, b)] * w[(r, b)].conj();
            }
            diag[r] = acc.re;
        }
        let total: f64 = diag.iter().sum();
        let mut populations = vec![0.0; self.j_max];
        let mut n_avg = 0.0;
        for (r, v) in diag.iter().enumerate() {
            populations[r / self.nf] += v / total;
            n_avg += (r % self.nf) as f64 * v / total;
        }
        BareObservables { populations, n_avg }
    }
}

/// Master-equation evolution of the full model, feasible for small
/// truncations.
pub fn evolve_master_equation(
    system: &FullSystem,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    cfg: &StepperConfig,
) -> Result<(Vec<BareObservables>, EvolutionRecord)> {
    require_bare(rho0.basis, &rho0.dims)?;
    if rho0.dims != system.dims() {
        return Err(Error::dims(system.dims(), &rho0.dims));
    }
    let gen = FullGenerator::new(system);
    let mut out = Vec::with_capacity(t_grid.len());
    let (j, nf) = (system.j_max, system.n_max + 1);
    let record = evolve_with(&gen, &rho0.matrix, t_grid, cfg, |_, rho| {
        out.push(observe_density(rho, j, nf));
        Ok(())
    })?;
    Ok((out, record))
}

/// Settings of the period-propagator trajectory integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Minimum RK4 steps per drive period.
    pub steps_per_period: usize,
    /// Sub-grid points per period used for jump times and output.
    pub sub_intervals: usize,
    /// Cap on `h · max|E_a − E_b|` over coupled bare states.
    pub max_phase_step: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            steps_per_period: 512,
            sub_intervals: 64,
            max_phase_step: 0.05,
        }
    }
}

/// Non-Hermitian propagators `U(lT/M)` for `l = 1..=M` and their inverses.
pub struct PeriodPropagators {
    pub period: f64,
    pub sub: Vec<DMatrix<C64>>,
    pub inverse: Vec<DMatrix<C64>>,
}

/// Integrates `U(t)` over one period in the interaction picture of the bare
/// energies, where only the coupling and drive remain.
pub fn period_propagators(system: &FullSystem, cfg: &McConfig) -> Result<PeriodPropagators> {
    let d = system.dim();
    let m = cfg.sub_intervals.max(1);
    let e0 = system.bare_energies();
    let nf = system.n_max + 1;
    let v = CsrMatrix::from_dense(&system.coupling());
    let x = CsrMatrix::from_dense(&system.quadrature());
    let damp: Vec<f64> = (0..d).map(|k| 0.5 * system.kappa * (k % nf) as f64).collect();
    let period = system.period();
    let mut max_gap: f64 = 0.0;
    for op in [&v, &x] {
        for r in 0..d {
            for (c, _) in op.row(r) {
                max_gap = max_gap.max((e0[r] - e0[c]).abs());
            }
        }
    }
    let drive_scale = 2.0 * system.epsilon_d.abs() * (nf as f64).sqrt() + system.g.abs() * 2.0 * (nf as f64).sqrt();
    let need = (period * (max_gap + drive_scale) / cfg.max_phase_step).ceil() as usize;
    let per_sub = cfg.steps_per_period.max(need).div_ceil(m);
    let steps = per_sub * m;
    let h = period / steps as f64;

    let rhs = |t: f64, u: &DMatrix<C64>, out: &mut DMatrix<C64>, w: &mut DMatrix<C64>, y: &mut DMatrix<C64>| {
        // out = −i P(t) (V + s(t) X − iK) P(t)* U with P(t) = diag(e^{i E0 t})
        let ph: Vec<C64> = e0.iter().map(|e| C64::from_polar(1.0, e * t)).collect();
        for c in 0..d {
            for r in 0..d {
                w[(r, c)] = ph[r].conj() * u[(r, c)];
            }
        }
        v.mul_dense(w, out);
        let s = system.drive_coefficient(t);
        if s.norm() > 0.0 {
            x.mul_dense(w, y);
            axpy(out, s, y);
        }
        for c in 0..d {
            for r in 0..d {
                let val = out[(r, c)] - I * damp[r] * w[(r, c)];
                out[(r, c)] = -I * ph[r] * val;
            }
        }
    };
    let mut u = DMatrix::<C64>::identity(d, d);
    let (mut k1, mut k2, mut k3, mut k4) = (u.clone(), u.clone(), u.clone(), u.clone());
    let (mut w, mut y, mut tmp) = (u.clone(), u.clone(), u.clone());
    let mut sub = Vec::with_capacity(m);
    let half = C64::new(0.5 * h, 0.0);
    for s in 0..steps {
        let t = s as f64 * h;
        rhs(t, &u, &mut k1, &mut w, &mut y);
        tmp.copy_from(&u);
        axpy(&mut tmp, half, &k1);
        rhs(t + 0.5 * h, &tmp, &mut k2, &mut w, &mut y);
        tmp.copy_from(&u);
        axpy(&mut tmp, half, &k2);
        rhs(t + 0.5 * h, &tmp, &mut k3, &mut w, &mut y);
        tmp.copy_from(&u);
        axpy(&mut tmp, C64::new(h, 0.0), &k3);
        rhs(t + h, &tmp, &mut k4, &mut w, &mut y);
        axpy(&mut u, C64::new(h / 6.0, 0.0), &k1);
        axpy(&mut u, C64::new(h / 3.0, 0.0), &k2);
        axpy(&mut u, C64::new(h / 3.0, 0.0), &k3);
        axpy(&mut u, C64::new(h / 6.0, 0.0), &k4);
        if (s + 1) % per_sub == 0 {
            let tt = (s + 1) as f64 * h;
            let mut schr = u.clone();
            for r in 0..d {
                let p = C64::from_polar(1.0, -e0[r] * tt);
                schr.row_mut(r).iter_mut().for_each(|z| *z *= p);
            }
            sub.push(schr);
        }
    }
    if sub.iter().any(|m| m.iter().any(|z| !z.is_finite())) {
        return Err(Error::Numerical("period propagator is not finite".into()));
    }
    let inverse = sub
        .iter()
        .map(|m| {
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular sub-period propagator".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PeriodPropagators { period, sub, inverse })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryEnsemble {
    pub trajectory_count: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// Jump times per trajectory; the only channel is `√κ a`.
    pub jumps: Vec<Vec<f64>>,
    /// `[time][level]` ensemble-averaged bare populations.
    pub populations: Vec<Vec<f64>>,
    pub n_avg: Vec<f64>,
    /// Standard error of the mean of `P_0`.
    pub stderr_pg: Vec<f64>,
}

struct Trajectory {
    jumps: Vec<f64>,
    obs: Vec<BareObservables>,
}

fn norm_sqr(v: &DVector<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn run_trajectory(
    props: &PeriodPropagators,
    powers: &[DMatrix<C64>],
    a: &CsrMatrix,
    psi0: &DVector<C64>,
    t_grid: &[f64],
    rng: &mut ChaCha8Rng,
    j_max: usize,
    nf: usize,
) -> Result<Trajectory> {
    let m = props.sub.len();
    let period = props.period;
    // output slots as (period index, sub-grid index; −1 = period start)
    let slots: Vec<(usize, isize)> = t_grid
        .iter()
        .map(|&t| {
            let p = (t / period).floor();
            let l = ((t - p * period) / period * m as f64).round() as isize - 1;
            if l == m as isize - 1 {
                (p as usize + 1, -1)
            } else {
                (p as usize, l)
            }
        })
        .collect();
    let mut obs = Vec::with_capacity(t_grid.len());
    let mut jumps = Vec::new();
    let mut phi = psi0.clone();
    let mut r: f64 = rng.random();
    let mut next = 0;
    let mut p = 0usize;
    let mut l0: isize = -1;
    let emit = |phi: &DVector<C64>, upto: isize, p: usize, next: &mut usize, obs: &mut Vec<BareObservables>| {
        while *next < slots.len() && slots[*next].0 == p && slots[*next].1 < upto {
            let l = slots[*next].1;
            let s = if l < 0 { phi.clone() } else { &props.sub[l as usize] * phi };
            obs.push(observe_amplitudes(s.as_slice(), j_max, nf));
            *next += 1;
        }
    };
    while next < slots.len() {
        if l0 < 0 {
            emit(&phi, 0, p, &mut next, &mut obs);
            if next == slots.len() {
                break;
            }
            // skip whole periods before the next output without a jump
            let target = slots[next].0;
            for k in (1..powers.len()).rev() {
                let span = 1usize << k;
                if p + span <= target {
                    let cand = &powers[k] * &phi;
                    if norm_sqr(&cand) >= r {
                        phi = cand;
                        p += span;
                    }
                }
            }
            emit(&phi, 0, p, &mut next, &mut obs);
            if next == slots.len() {
                break;
            }
        }
        let end = &powers[0] * &phi;
        let n_end = norm_sqr(&end);
        if !n_end.is_finite() {
            return Err(Error::Numerical("trajectory norm is not finite".into()));
        }
        if n_end >= r {
            emit(&phi, m as isize, p, &mut next, &mut obs);
            if n_end < 1e-300 {
                return Err(Error::Numerical("trajectory norm underflow without a jump".into()));
            }
            phi = end;
            p += 1;
            l0 = -1;
            continue;
        }
        // first sub-grid index whose norm falls below r
        let (mut lo, mut hi) = ((l0 + 1) as usize, m - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if norm_sqr(&(&props.sub[mid] * &phi)) < r {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        emit(&phi, lo as isize, p, &mut next, &mut obs);
        let before = &props.sub[lo] * &phi;
        let mut after = DVector::zeros(before.len());
        a.mul_vec(before.as_slice(), after.as_mut_slice());
        let n = after.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical("jump produced a null state".into()));
        }
        after.unscale_mut(n);
        jumps.push(p as f64 * period + (lo + 1) as f64 * period / m as f64);
        if lo == m - 1 {
            phi = after;
            p += 1;
            l0 = -1;
        } else {
            phi = &props.inverse[lo] * after;
            l0 = lo as isize;
        }
        r = rng.random();
    }
    Ok(Trajectory { jumps, obs })
}

/// Quantum-jump unravelling of the full model, averaged over
/// `trajectory_count` trajectories. Trajectory `k` draws from the ChaCha
/// stream `k` of `seed`, so results do not depend on scheduling.
pub fn monte_carlo_evolve(
    system: &FullSystem,
    psi0: &StateVector,
    t_grid: &[f64],
    trajectory_count: usize,
    seed: u64,
    cfg: &McConfig,
) -> Result<TrajectoryEnsemble> {
    require_bare(psi0.basis, &psi0.dims)?;
    if psi0.dims != system.dims() {
        return Err(Error::dims(system.dims(), &psi0.dims));
    }
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::param("psi0", "must be normalized"));
    }
    if trajectory_count == 0 {
        return Err(Error::param("trajectory_count", "must be positive"));
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("t_grid", "must be non-negative and strictly increasing"));
    }
    let props = period_propagators(system, cfg)?;
    let last = t_grid[t_grid.len() - 1] / props.period;
    let mut powers = vec![props.sub[props.sub.len() - 1].clone()];
    while ((1usize << powers.len()) as f64) <= last {
        let top = &powers[powers.len() - 1];
        powers.push(top * top);
    }
    let a = CsrMatrix::from_dense(&system.annihilation());
    let (j, nf) = (system.j_max, system.n_max + 1);
    let distinct = if system.kappa == 0.0 { 1 } else { trajectory_count };
    let runs: Vec<Trajectory> = (0..distinct)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            run_trajectory(&props, &powers, &a, &psi0.amplitudes, t_grid, &mut rng, j, nf)
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |k: usize| &runs[k.min(distinct - 1)];

    let n = trajectory_count as f64;
    let mut populations = Vec::with_capacity(t_grid.len());
    let mut n_avg = Vec::with_capacity(t_grid.len());
    let mut stderr_pg = Vec::with_capacity(t_grid.len());
    for ti in 0..t_grid.len() {
        let mut pops = vec![0.0; j];
        let mut nbar = 0.0;
        for k in 0..trajectory_count {
            let o = &pick(k).obs[ti];
            for (acc, v) in pops.iter_mut().zip(&o.populations) {
                *acc += v;
            }
            nbar += o.n_avg;
        }
        pops.iter_mut().for_each(|v| *v /= n);
        let mean = pops[0];
        let var = if trajectory_count > 1 {
            (0..trajectory_count)
                .map(|k| (pick(k).obs[ti].populations[0] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        populations.push(pops);
        n_avg.push(nbar / n);
        stderr_pg.push((var / n).sqrt());
    }
    Ok(TrajectoryEnsemble {
        trajectory_count,
        seed,
        times: t_grid.to_vec(),
        jumps: (0..trajectory_count).map(|k| pick(k).jumps.clone()).collect(),
        populations,
        n_avg,
        stderr_pg,
    })
}
