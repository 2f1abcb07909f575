//! Semiclassical backaction model: a coherent resonator amplitude coupled to
//! the qubit wavefunction,
//!
//! ```text
//! dα/dt = −i ω_r α + g ⟨ψ|n|ψ⟩ − 2 sin(ω_d t) ε_d − κ α / 2
//! dψ/dt = −i (H_q + 2 g n Im α) ψ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::full_model::FullSystem;
use crate::operator_core::{BasisTag, StateVector};
use crate::{Error, Result, C64};

const I: C64 = C64::new(0.0, 1.0);

/// Negativity of the semiclassical product state, identically zero.
pub const SEMICLASSICAL_NEGATIVITY: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SemiclassicalState {
    pub alpha: C64,
    pub psi: StateVector,
    pub t: f64,
}

impl SemiclassicalState {
    pub fn new(alpha: C64, psi: StateVector, t: f64) -> Result<Self> {
        if psi.dims.len() != 1 {
            return Err(Error::dims("[levels]", &psi.dims));
        }
        if (psi.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::param("psi", "must be normalized"));
        }
        if !alpha.is_finite() || !t.is_finite() {
            return Err(Error::param("state", "must be finite"));
        }
        Ok(Self { alpha, psi, t })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiclassicalConfig {
    /// Nominal step in ns.
    pub dt: f64,
    /// Cap on `h · R` for the fastest lab-frame frequency `R`.
    pub max_phase_step: f64,
    pub renorm_tol: f64,
    pub abort_tol: f64,
}

impl Default for SemiclassicalConfig {
    fn default() -> Self {
        Self {
            dt: 2.5,
            max_phase_step: 0.02,
            renorm_tol: 1e-9,
            abort_tol: 1e-3,
        }
    }
}

struct Rhs<'a> {
    system: &'a FullSystem,
    energies: Vec<f64>,
    n: &'a DMatrix<C64>,
}

impl<'a> Rhs<'a> {
    fn new(system: &'a FullSystem) -> Self {
        let w = &system.spectrum.omega;
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mid = 0.5 * (lo + hi);
        Self {
            system,
            energies: w.iter().map(|x| x - mid).collect(),
            n: &system.spectrum.n_matrix,
        }
    }

    fn eval(&self, t: f64, alpha: C64, psi: &DVector<C64>, dpsi: &mut DVector<C64>) -> C64 {
        let s = self.system;
        let npsi = self.n * psi;
        let n_avg = psi.dotc(&npsi).re;
        let dalpha = -I * s.omega_r * alpha + s.g * n_avg
            - 2.0 * (s.omega_d * t).sin() * s.epsilon_d
            - 0.5 * s.kappa * alpha;
        let c = 2.0 * s.g * alpha.im;
        for k in 0..psi.len() {
            dpsi[k] = -I * (self.energies[k] * psi[k] + c * npsi[k]);
        }
        dalpha
    }

    fn rate(&self, alpha: C64) -> f64 {
        let half = self.energies.iter().map(|e| e.abs()).fold(0.0, f64::max);
        let n_norm = self.n.iter().map(|z| z.norm()).sum::<f64>();
        let coupling = 2.0 * self.system.g.abs() * (alpha.norm() + 1.0) * n_norm;
        (self.system.omega_r + 0.5 * self.system.kappa).max(half + coupling)
    }
}

/// `(dα/dt, dψ/dt)` with `H_q` in the bare eigenbasis of `system`.
pub fn semiclassical_rhs(state: &SemiclassicalState, system: &FullSystem) -> Result<(C64, DVector<C64>)> {
    let l = system.j_max;
    if state.psi.dims != [l] {
        return Err(Error::dims([l], &state.psi.dims));
    }
    let n = &system.spectrum.n_matrix;
    let npsi = n * &state.psi.amplitudes;
    let n_avg = state.psi.amplitudes.dotc(&npsi).re;
    let s = system;
    let dalpha = -I * s.omega_r * state.alpha + s.g * n_avg
        - 2.0 * (s.omega_d * state.t).sin() * s.epsilon_d
        - 0.5 * s.kappa * state.alpha;
    let c = 2.0 * s.g * state.alpha.im;
    let dpsi = DVector::from_fn(l, |k, _| {
        -I * (s.spectrum.omega[k] * state.psi.amplitudes[k] + c * npsi[k])
    });
    Ok((dalpha, dpsi))
}

#[derive(Debug, Clone, Serialize)]
pub struct SemiclassicalTimeSeries {
    pub times: Vec<f64>,
    /// `[time][level]` qubit populations.
    pub populations: Vec<Vec<f64>>,
    /// `|α|²`.
    pub n_avg: Vec<f64>,
    pub alpha: Vec<C64>,
    /// `(t, drift)` for each renormalization of ψ.
    pub renormalizations: Vec<(f64, f64)>,
    pub substeps: usize,
}

pub fn evolve_semiclassical(
    system: &FullSystem,
    psi0: &StateVector,
    alpha0: C64,
    t_grid: &[f64],
    cfg: &SemiclassicalConfig,
) -> Result<SemiclassicalTimeSeries> {
    let state = SemiclassicalState::new(alpha0, psi0.clone(), 0.0)?;
    if state.psi.dims != [system.j_max] {
        return Err(Error::dims([system.j_max], &state.psi.dims));
    }
    if t_grid.first() != Some(&0.0) {
        return Err(Error::param("t_grid", "must start at 0"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("t_grid", "must be strictly increasing and finite"));
    }
    if !(cfg.dt > 0.0 && cfg.max_phase_step > 0.0) {
        return Err(Error::param("stepper", "dt and max_phase_step must be positive"));
    }
    let rhs = Rhs::new(system);
    let l = system.j_max;
    let mut alpha = alpha0;
    // ψ is carried with the shifted energies; populations are unaffected
    let mut psi = state.psi.amplitudes.clone();
    let mut out = SemiclassicalTimeSeries {
        times: t_grid.to_vec(),
        populations: Vec::with_capacity(t_grid.len()),
        n_avg: Vec::with_capacity(t_grid.len()),
        alpha: Vec::with_capacity(t_grid.len()),
        renormalizations: Vec::new(),
        substeps: 0,
    };
    let record = |out: &mut SemiclassicalTimeSeries, alpha: C64, psi: &DVector<C64>| {
        let nn = psi.norm_squared();
        out.populations.push(psi.iter().map(|z| z.norm_sqr() / nn).collect());
        out.n_avg.push(alpha.norm_sqr());
        out.alpha.push(alpha);
    };
    record(&mut out, alpha, &psi);
    let (mut k1, mut k2, mut k3, mut k4) = (
        DVector::zeros(l),
        DVector::zeros(l),
        DVector::zeros(l),
        DVector::zeros(l),
    );
    let mut tmp = DVector::zeros(l);
    for w in t_grid.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let outer = ((tb - ta) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let big = (tb - ta) / outer as f64;
        for o in 0..outer {
            let t0 = ta + o as f64 * big;
            let sub = (big * rhs.rate(alpha) / cfg.max_phase_step).ceil().max(1.0) as usize;
            let h = big / sub as f64;
            for s in 0..sub {
                let t = t0 + s as f64 * h;
                let a1 = rhs.eval(t, alpha, &psi, &mut k1);
                tmp.copy_from(&psi);
                tmp.axpy(C64::new(0.5 * h, 0.0), &k1, C64::new(1.0, 0.0));
                let a2 = rhs.eval(t + 0.5 * h, alpha + 0.5 * h * a1, &tmp, &mut k2);
                tmp.copy_from(&psi);
                tmp.axpy(C64::new(0.5 * h, 0.0), &k2, C64::new(1.0, 0.0));
                let a3 = rhs.eval(t + 0.5 * h, alpha + 0.5 * h * a2, &tmp, &mut k3);
                tmp.copy_from(&psi);
                tmp.axpy(C64::new(h, 0.0), &k3, C64::new(1.0, 0.0));
                let a4 = rhs.eval(t + h, alpha + h * a3, &tmp, &mut k4);
                alpha += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
                psi.axpy(C64::new(h / 6.0, 0.0), &k1, C64::new(1.0, 0.0));
                psi.axpy(C64::new(h / 3.0, 0.0), &k2, C64::new(1.0, 0.0));
                psi.axpy(C64::new(h / 3.0, 0.0), &k3, C64::new(1.0, 0.0));
                psi.axpy(C64::new(h / 6.0, 0.0), &k4, C64::new(1.0, 0.0));
            }
            out.substeps += sub;
            let norm = psi.norm();
            let drift = (norm - 1.0).abs();
            if !drift.is_finite() || drift > cfg.abort_tol || !alpha.is_finite() {
                return Err(Error::StepInstability { t: t0 + big, drift });
            }
            if drift > cfg.renorm_tol {
                psi.unscale_mut(norm);
                out.renormalizations.push((t0 + big, drift));
            }
        }
        record(&mut out, alpha, &psi);
    }
    Ok(out)
}

/// Initial qubit state `|j⟩` in the bare eigenbasis.
pub fn qubit_basis_state(levels: usize, j: usize) -> Result<StateVector> {
    StateVector::basis_state(&[levels], &[j], BasisTag::BareLab)
}
