//! Recursive Schrieffer-Wolff reduction of the qubit-resonator coupling.
//!
//! With `H_0 = H_q + ω_r a†a` and `V⁽¹⁾ = i g n (a† − a)`, the generator and
//! interaction are expanded in normal order, `S⁽ᵖ⁾ = Σ S⁽ᵖ⁾_nm (a†)ⁿ aᵐ`,
//! and the qubit-space components obey
//!
//! ```text
//! ⟨i|S⁽ᵖ⁾_nm|j⟩ = −⟨i|V⁽ᵖ⁾_nm|j⟩ / (ω_ij − (n − m) ω_r),   excluding i = j, n = m.
//! ```
//!
//! The second-order interaction yields the dispersive shifts
//! `χ_i = ⟨i|V⁽²⁾_11|i⟩`, the level shifts `Λ_i = ⟨i|V⁽²⁾_00|i⟩` and the
//! two-photon coupling `g_eff = ⟨g|V⁽²⁾_20|h⟩`. The third-order three-photon
//! coupling `⟨g|V⁽³⁾_30|j⟩` is available for `k = 3` resonances.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::operator_core::{destroy, unitary_from_hermitian, BasisTag, StateVector};
use crate::qubit_spectrum::QubitSpectrum;
use crate::{Error, Result, C64};

/// Default bound for every RWA / dispersive margin ratio.
pub const DEFAULT_MARGIN: f64 = 0.1;

const I: C64 = C64::new(0.0, 1.0);

/// Normal-ordered components keyed by `(order, n, m)`.
#[derive(Debug, Clone)]
pub struct SWExpansion {
    pub order: usize,
    pub g: f64,
    pub omega_r: f64,
    pub omega: Vec<f64>,
    pub generator_components: BTreeMap<(usize, usize, usize), DMatrix<C64>>,
    pub interaction_components: BTreeMap<(usize, usize, usize), DMatrix<C64>>,
}

impl SWExpansion {
    pub fn levels(&self) -> usize {
        self.omega.len()
    }

    pub fn s(&self, p: usize, n: usize, m: usize) -> Option<&DMatrix<C64>> {
        self.generator_components.get(&(p, n, m))
    }

    pub fn v(&self, p: usize, n: usize, m: usize) -> Option<&DMatrix<C64>> {
        self.interaction_components.get(&(p, n, m))
    }

    fn zero(&self) -> DMatrix<C64> {
        DMatrix::zeros(self.levels(), self.levels())
    }

    fn sz(&self, p: usize, n: usize, m: usize) -> DMatrix<C64> {
        self.s(p, n, m).cloned().unwrap_or_else(|| self.zero())
    }

    fn vz(&self, p: usize, n: usize, m: usize) -> DMatrix<C64> {
        self.v(p, n, m).cloned().unwrap_or_else(|| self.zero())
    }

    /// Largest violation of `(S_nm)† = −S_mn` and `(V_nm)† = V_mn`.
    pub fn hermiticity_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (&(p, n, m), s) in &self.generator_components {
            if let Some(t) = self.s(p, m, n) {
                worst = worst.max((s.adjoint() + t).iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        for (&(p, n, m), v) in &self.interaction_components {
            if let Some(t) = self.v(p, m, n) {
                worst = worst.max((v.adjoint() - t).iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        worst
    }

    /// First-order generator `S⁽¹⁾ = S_10 a† + S_01 a` on the joint space
    /// with `n_photons` Fock states, restricted to the first `levels` levels.
    pub fn joint_generator(&self, levels: usize, n_photons: usize) -> Result<DMatrix<C64>> {
        if levels > self.levels() {
            return Err(Error::Truncation(format!(
                "generator has {} levels, {levels} requested",
                self.levels()
            )));
        }
        let a = destroy(n_photons);
        let s10 = self.sz(1, 1, 0).view((0, 0), (levels, levels)).into_owned();
        let s01 = self.sz(1, 0, 1).view((0, 0), (levels, levels)).into_owned();
        Ok(s10.kronecker(&a.adjoint()) + s01.kronecker(&a))
    }

    /// Solves the generator condition for every order-`p` interaction
    /// component present.
    fn solve_generator(&mut self, p: usize) -> Result<()> {
        let keys: Vec<(usize, usize, usize)> = self
            .interaction_components
            .keys()
            .copied()
            .filter(|k| k.0 == p)
            .collect();
        for (p, n, m) in keys {
            let v = &self.interaction_components[&(p, n, m)];
            let l = self.levels();
            let shift = (n as f64 - m as f64) * self.omega_r;
            let mut s = DMatrix::zeros(l, l);
            for i in 0..l {
                for j in 0..l {
                    if i == j && n == m {
                        continue;
                    }
                    let den = self.omega[j] - self.omega[i] - shift;
                    if v[(i, j)] != C64::new(0.0, 0.0) {
                        if den == 0.0 {
                            return Err(Error::ResonantDenominator {
                                levels: vec![i, j],
                                value: den,
                            });
                        }
                        s[(i, j)] = -v[(i, j)] / den;
                    }
                }
            }
            self.generator_components.insert((p, n, m), s);
        }
        Ok(())
    }
}

fn comm(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

fn diag_part(a: &DMatrix<C64>) -> DMatrix<C64> {
    DMatrix::from_diagonal(&a.diagonal())
}

/// `S⁽¹⁾` from `V⁽¹⁾ = i g n (a† − a)`, after checking
/// `|g n_ij| < margin · |ω_ij − ω_r|` for every pair.
pub fn first_order_generator(
    spectrum: &QubitSpectrum,
    g: f64,
    omega_r: f64,
    margin: f64,
) -> Result<SWExpansion> {
    let l = spectrum.level_count;
    let n = &spectrum.n_matrix;
    for i in 0..l {
        for j in 0..l {
            let den = (spectrum.omega_ij(i, j) - omega_r).abs();
            let num = (g * n[(i, j)]).norm();
            if num > 0.0 && num >= margin * den {
                return Err(Error::NearResonance {
                    i,
                    j,
                    ratio: num / den,
                    limit: margin,
                });
            }
        }
    }
    let mut sw = SWExpansion {
        order: 1,
        g,
        omega_r,
        omega: spectrum.omega.clone(),
        generator_components: BTreeMap::new(),
        interaction_components: BTreeMap::new(),
    };
    sw.interaction_components.insert((1, 1, 0), n * (I * g));
    sw.interaction_components.insert((1, 0, 1), n * (-I * g));
    sw.solve_generator(1)?;
    Ok(sw)
}

/// Extends a first-order expansion with `V⁽²⁾` (from the explicit sums over
/// intermediate states) and the second-order generator.
pub fn extend_second_order(sw: &mut SWExpansion, spectrum: &QubitSpectrum) -> Result<()> {
    let l = spectrum.level_count;
    let n = &spectrum.n_matrix;
    let (g, wr) = (sw.g, sw.omega_r);
    let w = |i: usize, j: usize| spectrum.omega_ij(i, j);
    let mut v11 = DMatrix::zeros(l, l);
    let mut v00 = DMatrix::zeros(l, l);
    let mut v20 = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            let (mut a11, mut a00, mut a20) = (C64::default(), C64::default(), C64::default());
            for k in 0..l {
                let nn = n[(i, k)] * n[(k, j)];
                if nn == C64::new(0.0, 0.0) {
                    continue;
                }
                let (wki, wkj, wik) = (w(k, i), w(k, j), w(i, k));
                a11 += nn * (wki / (wki * wki - wr * wr) + wkj / (wkj * wkj - wr * wr));
                a00 += nn * (1.0 / (wki - wr) + 1.0 / (wkj - wr));
                a20 += nn * (1.0 / (wik - wr) - 1.0 / (wkj - wr));
            }
            v11[(i, j)] = a11 * (g * g);
            v00[(i, j)] = a00 * (0.5 * g * g);
            v20[(i, j)] = a20 * (0.5 * g * g);
        }
    }
    sw.interaction_components.insert((2, 0, 2), v20.adjoint());
    sw.interaction_components.insert((2, 1, 1), v11);
    sw.interaction_components.insert((2, 0, 0), v00);
    sw.interaction_components.insert((2, 2, 0), v20);
    sw.solve_generator(2)?;
    sw.order = 2;
    Ok(())
}

/// Adds the third-order interaction components `V⁽³⁾_10`, `V⁽³⁾_21`,
/// `V⁽³⁾_30` and their adjoints from the component formulas.
pub fn extend_third_order(sw: &mut SWExpansion) -> Result<()> {
    if sw.order < 2 {
        return Err(Error::param("order", "third order needs a second-order expansion"));
    }
    let (s110, s101) = (sw.sz(1, 1, 0), sw.sz(1, 0, 1));
    let (s211, s200, s220) = (sw.sz(2, 1, 1), sw.sz(2, 0, 0), sw.sz(2, 2, 0));
    let (v110, v101) = (sw.vz(1, 1, 0), sw.vz(1, 0, 1));
    let (v211, v200, v220, v202) = (sw.vz(2, 1, 1), sw.vz(2, 0, 0), sw.vz(2, 2, 0), sw.vz(2, 0, 2));
    let (d211, d200) = (diag_part(&v211), diag_part(&v200));
    let half = C64::new(0.5, 0.0);
    let sixth = C64::new(1.0 / 6.0, 0.0);

    let v310 = (&s211 * &v110 + comm(&s200, &v110) - &v101 * &s220 * C64::new(2.0, 0.0)) * half
        - (&v211 * &s110 + comm(&s110, &v200) + &s101 * &v220 * C64::new(2.0, 0.0)) * sixth
        + (&d211 * &s110 + comm(&s110, &d200)) * half;
    let v321 = (comm(&s211, &v110) + comm(&s220, &v101)) * half
        - (comm(&s110, &v211) + comm(&s101, &v202)) * sixth
        + comm(&s110, &d211) * half;
    let v330 = comm(&s220, &v110) * half - comm(&s110, &v202) * sixth;

    sw.interaction_components.insert((3, 0, 1), v310.adjoint());
    sw.interaction_components.insert((3, 1, 2), v321.adjoint());
    sw.interaction_components.insert((3, 0, 3), v330.adjoint());
    sw.interaction_components.insert((3, 1, 0), v310);
    sw.interaction_components.insert((3, 2, 1), v321);
    sw.interaction_components.insert((3, 3, 0), v330);
    sw.order = 3;
    Ok(())
}

/// Effective-model constants. All frequencies in rad/ns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedParams {
    pub delta_a: f64,
    pub delta_g: f64,
    pub delta_h: f64,
    pub chi_g: f64,
    pub chi_h: f64,
    pub lambda_g: f64,
    pub lambda_h: f64,
    pub g_eff: C64,
    pub order_k: usize,
    pub kappa: f64,
    pub epsilon_d: f64,
    pub delta_q: f64,
    pub omega_r: f64,
    pub omega_d: f64,
    pub omega_g: f64,
    pub omega_h: f64,
    pub g_level: usize,
    pub h_level: usize,
}

/// Inputs to [`ReducedParams::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameInputs {
    pub omega_r: f64,
    pub omega_d: f64,
    pub omega_g: f64,
    pub omega_h: f64,
    pub kappa: f64,
    pub epsilon_d: f64,
    pub g_level: usize,
    pub h_level: usize,
    pub order_k: usize,
}

impl ReducedParams {
    /// Builds the frame detunings from bare frequencies and shifts.
    pub fn new(
        frame: FrameInputs,
        chi: (f64, f64),
        lambda: (f64, f64),
        g_eff: C64,
    ) -> Result<Self> {
        let k = frame.order_k as f64;
        let delta_g = frame.omega_g + lambda.0;
        let delta_h = frame.omega_h + lambda.1 - k * frame.omega_d;
        let p = Self {
            delta_a: frame.omega_r - frame.omega_d,
            delta_g,
            delta_h,
            chi_g: chi.0,
            chi_h: chi.1,
            lambda_g: lambda.0,
            lambda_h: lambda.1,
            g_eff,
            order_k: frame.order_k,
            kappa: frame.kappa,
            epsilon_d: frame.epsilon_d,
            delta_q: delta_h - delta_g,
            omega_r: frame.omega_r,
            omega_d: frame.omega_d,
            omega_g: frame.omega_g,
            omega_h: frame.omega_h,
            g_level: frame.g_level,
            h_level: frame.h_level,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks the frame relations and finiteness.
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.delta_a,
            self.delta_g,
            self.delta_h,
            self.chi_g,
            self.chi_h,
            self.lambda_g,
            self.lambda_h,
            self.g_eff.re,
            self.g_eff.im,
            self.kappa,
            self.epsilon_d,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("reduced params", "non-finite value"));
        }
        if self.order_k < 1 {
            return Err(Error::param("order_k", "must be at least 1"));
        }
        if self.kappa < 0.0 {
            return Err(Error::param("kappa", "must be non-negative"));
        }
        let k = self.order_k as f64;
        let tol = 1e-9 * (1.0 + self.omega_h.abs() + self.omega_d.abs() * k);
        let checks = [
            ("delta_a", self.delta_a, self.omega_r - self.omega_d),
            ("delta_g", self.delta_g, self.omega_g + self.lambda_g),
            ("delta_h", self.delta_h, self.omega_h + self.lambda_h - k * self.omega_d),
            ("delta_q", self.delta_q, self.delta_h - self.delta_g),
        ];
        for (name, v, expect) in checks {
            if (v - expect).abs() > tol {
                return Err(Error::param(name, format!("{v} inconsistent with frame ({expect})")));
            }
        }
        Ok(())
    }

    /// Same parameters at a different drive amplitude.
    pub fn with_drive(&self, epsilon_d: f64) -> Self {
        Self {
            epsilon_d,
            ..self.clone()
        }
    }

    /// Same parameters at a different drive frequency.
    pub fn with_drive_frequency(&self, omega_d: f64) -> Self {
        let k = self.order_k as f64;
        let delta_h = self.omega_h + self.lambda_h - k * omega_d;
        Self {
            omega_d,
            delta_a: self.omega_r - omega_d,
            delta_h,
            delta_q: delta_h - self.delta_g,
            ..self.clone()
        }
    }

    pub fn with_g_eff(&self, g_eff: C64) -> Self {
        Self {
            g_eff,
            ..self.clone()
        }
    }

    /// `χ̌_i = χ_i + δ_a`.
    pub fn chi_check(&self) -> (f64, f64) {
        (self.chi_g + self.delta_a, self.chi_h + self.delta_a)
    }
}

/// Common inputs to the parameter builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitInputs {
    pub g: f64,
    pub omega_r: f64,
    pub omega_d: f64,
    pub epsilon_d: f64,
    pub kappa: f64,
    pub g_level: usize,
    pub h_level: usize,
}

/// Second-order reduced parameters summing over every level of `spectrum`.
pub fn second_order_params(spectrum: &QubitSpectrum, c: &CircuitInputs) -> Result<ReducedParams> {
    second_order_params_with_margin(spectrum, c, DEFAULT_MARGIN)
}

pub fn second_order_params_with_margin(
    spectrum: &QubitSpectrum,
    c: &CircuitInputs,
    margin: f64,
) -> Result<ReducedParams> {
    let l = spectrum.level_count;
    if c.g_level >= l || c.h_level >= l {
        return Err(Error::Truncation(format!(
            "levels ({}, {}) outside a {l}-level spectrum",
            c.g_level, c.h_level
        )));
    }
    let mut sw = first_order_generator(spectrum, c.g, c.omega_r, margin)?;
    extend_second_order(&mut sw, spectrum)?;
    let v11 = sw.v(2, 1, 1).unwrap();
    let v00 = sw.v(2, 0, 0).unwrap();
    let v20 = sw.v(2, 2, 0).unwrap();
    let (gl, hl) = (c.g_level, c.h_level);
    ReducedParams::new(
        FrameInputs {
            omega_r: c.omega_r,
            omega_d: c.omega_d,
            omega_g: spectrum.omega[gl],
            omega_h: spectrum.omega[hl],
            kappa: c.kappa,
            epsilon_d: c.epsilon_d,
            g_level: gl,
            h_level: hl,
            order_k: 2,
        },
        (v11[(gl, gl)].re, v11[(hl, hl)].re),
        (v00[(gl, gl)].re, v00[(hl, hl)].re),
        v20[(gl, hl)],
    )
}

/// Outcome of the intermediate-level convergence loop.
#[derive(Debug, Clone)]
pub struct ConvergedParams {
    pub params: ReducedParams,
    pub levels_used: usize,
    pub relative_change: f64,
}

/// Largest relative change between two parameter sets over χ, Λ and g_eff.
pub fn parameter_change(a: &ReducedParams, b: &ReducedParams) -> f64 {
    let rel = |x: f64, y: f64| {
        let s = x.abs().max(y.abs());
        if s == 0.0 {
            0.0
        } else {
            (x - y).abs() / s
        }
    };
    let ge = {
        let s = a.g_eff.norm().max(b.g_eff.norm());
        if s == 0.0 {
            0.0
        } else {
            (a.g_eff - b.g_eff).norm() / s
        }
    };
    [
        rel(a.chi_g, b.chi_g),
        rel(a.chi_h, b.chi_h),
        rel(a.lambda_g, b.lambda_g),
        rel(a.lambda_h, b.lambda_h),
        ge,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Adds `step` intermediate levels at a time, starting from `start`, until
/// every parameter changes by less than `tol` (relative).
pub fn converged_second_order_params(
    spectrum: &QubitSpectrum,
    c: &CircuitInputs,
    start: usize,
    step: usize,
    tol: f64,
) -> Result<ConvergedParams> {
    let mut levels = start.max(c.h_level.max(c.g_level) + 1);
    if levels + step > spectrum.level_count {
        return Err(Error::Truncation(format!(
            "convergence check needs {} levels, spectrum has {}",
            levels + step,
            spectrum.level_count
        )));
    }
    let mut prev = second_order_params(&spectrum.truncated(levels)?, c)?;
    loop {
        let next_levels = levels + step;
        if next_levels > spectrum.level_count {
            return Err(Error::NotConverged {
                change: f64::NAN,
                n_trunc: levels,
            });
        }
        let next = second_order_params(&spectrum.truncated(next_levels)?, c)?;
        let change = parameter_change(&prev, &next);
        if change < tol {
            return Ok(ConvergedParams {
                params: next,
                levels_used: next_levels,
                relative_change: change,
            });
        }
        prev = next;
        levels = next_levels;
    }
}

/// `⟨i|V⁽³⁾_30|j⟩` evaluated from the explicit double sum over `(k, ℓ)`.
pub fn third_order_coupling(
    spectrum: &QubitSpectrum,
    g: f64,
    omega_r: f64,
    i: usize,
    j: usize,
) -> Result<C64> {
    let l = spectrum.level_count;
    if i >= l || j >= l {
        return Err(Error::Truncation(format!("levels ({i}, {j}) outside {l}")));
    }
    let n = &spectrum.n_matrix;
    let w = |a: usize, b: usize| spectrum.omega_ij(a, b);
    let inv = |x: f64, levels: Vec<usize>| -> Result<f64> {
        if x.abs() < 1e-12 * omega_r.abs().max(1.0) {
            Err(Error::ResonantDenominator { levels, value: x })
        } else {
            Ok(1.0 / x)
        }
    };
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..l {
        for ll in 0..l {
            let nnn = n[(i, ll)] * n[(ll, k)] * n[(k, j)];
            if nnn == C64::new(0.0, 0.0) {
                continue;
            }
            let t1 = -(0.5 * inv(w(k, i) - 2.0 * omega_r, vec![i, k, j])?
                + inv(w(k, j) - omega_r, vec![k, j])? / 6.0)
                * (inv(w(i, ll) - omega_r, vec![i, ll])? - inv(w(k, j) - omega_r, vec![k, j])?);
            let t2 = (0.5 * inv(w(ll, j) - 2.0 * omega_r, vec![i, ll, j])?
                + inv(w(i, ll) - omega_r, vec![i, ll])? / 6.0)
                * (inv(w(ll, k) - omega_r, vec![ll, k])? - inv(w(k, j) - omega_r, vec![k, j])?);
            acc += nnn * (t1 + t2);
        }
    }
    Ok(acc * (I * g * g * g))
}

/// Reduced parameters for a three-photon resonance: second-order shifts with
/// the third-order coupling `g_eff⁽³⁾`.
pub fn third_order_params(spectrum: &QubitSpectrum, c: &CircuitInputs) -> Result<ReducedParams> {
    let second = second_order_params(spectrum, c)?;
    let two_photon = spectrum.omega_ij(c.g_level, c.h_level) - 2.0 * c.omega_r;
    if two_photon.abs() < DEFAULT_MARGIN * c.omega_r {
        return Err(Error::ResonantDenominator {
            levels: vec![c.g_level, c.h_level],
            value: two_photon,
        });
    }
    let g3 = third_order_coupling(spectrum, c.g, c.omega_r, c.g_level, c.h_level)?;
    ReducedParams::new(
        FrameInputs {
            omega_r: c.omega_r,
            omega_d: c.omega_d,
            omega_g: spectrum.omega[c.g_level],
            omega_h: spectrum.omega[c.h_level],
            kappa: c.kappa,
            epsilon_d: c.epsilon_d,
            g_level: c.g_level,
            h_level: c.h_level,
            order_k: 3,
        },
        (second.chi_g, second.chi_h),
        (second.lambda_g, second.lambda_h),
        g3,
    )
}

/// Margin ratios for one level pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginEntry {
    pub i: usize,
    pub j: usize,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub threshold: f64,
    pub entries: Vec<MarginEntry>,
    pub flagged: Vec<MarginEntry>,
    pub worst_r1: f64,
    pub worst_r2: f64,
    pub worst_r3: f64,
}

/// Dispersive (`r1`), drive (`r2`) and dissipator (`r3`) margins for every
/// level pair.
pub fn rwa_validity_report(
    spectrum: &QubitSpectrum,
    g: f64,
    omega_r: f64,
    omega_d: f64,
    epsilon_d: f64,
    kappa: f64,
    threshold: f64,
) -> ValidityReport {
    let l = spectrum.level_count;
    let mut entries = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            let gn = (g * spectrum.n_matrix[(i, j)]).norm();
            let wij = spectrum.omega_ij(i, j);
            let det = wij - omega_r;
            let (r1, r2, r3) = if gn == 0.0 {
                (0.0, 0.0, 0.0)
            } else {
                let worst_pm = (wij + omega_d).abs().min((wij - omega_d).abs());
                (
                    gn / det.abs(),
                    (epsilon_d * gn) / (det * worst_pm).abs(),
                    (kappa * gn) / (det * det),
                )
            };
            entries.push(MarginEntry { i, j, r1, r2, r3 });
        }
    }
    let flagged = entries
        .iter()
        .copied()
        .filter(|e| e.r1 > threshold || e.r2 > threshold || e.r3 > threshold)
        .collect();
    let worst = |f: fn(&MarginEntry) -> f64| entries.iter().map(f).fold(0.0, f64::max);
    ValidityReport {
        threshold,
        worst_r1: worst(|e| e.r1),
        worst_r2: worst(|e| e.r2),
        worst_r3: worst(|e| e.r3),
        flagged,
        entries,
    }
}

/// Maps a dressed joint state to the bare lab basis, `|ψ⟩ → e^{−S}|ψ⟩`,
/// renormalizing and returning the norm deviation before renormalization.
pub fn lab_frame_state(sw: &SWExpansion, dressed: &StateVector) -> Result<(StateVector, f64)> {
    if dressed.dims.len() != 2 {
        return Err(Error::dims("[levels, photons]", &dressed.dims));
    }
    let s = sw.joint_generator(dressed.dims[0], dressed.dims[1])?;
    let u = exp_generator(&s, -1.0);
    let mut out = StateVector {
        amplitudes: u * &dressed.amplitudes,
        dims: dressed.dims.clone(),
        basis: BasisTag::BareLab,
    };
    let norm = out.normalize();
    Ok((out, (norm - 1.0).abs()))
}

/// `exp(sign · S)` for anti-Hermitian `S`.
pub fn exp_generator(s: &DMatrix<C64>, sign: f64) -> DMatrix<C64> {
    // S = −iK with K = iS Hermitian, so exp(sign·S) = exp(−i·sign·K)
    let k = s * (I * sign);
    unitary_from_hermitian(&k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit_spectrum::{diagonalize, FluxoniumSpec};
    use crate::units::{ghz, mhz, to_mhz};

    fn table1_spectrum(levels: usize) -> QubitSpectrum {
        diagonalize(
            &FluxoniumSpec {
                e_c: 0.795,
                e_l: 0.89,
                e_j: 4.43,
                phi_ext: std::f64::consts::TAU * 0.01,
                ho_truncation: 150,
            },
            levels,
        )
        .unwrap()
    }

    fn inputs(g: f64) -> CircuitInputs {
        CircuitInputs {
            g,
            omega_r: ghz(5.9436),
            omega_d: ghz(5.9436),
            epsilon_d: mhz(12.0),
            kappa: mhz(4.086),
            g_level: 0,
            h_level: 3,
        }
    }

    fn ladder(l: usize, spacing: f64, anharm: f64) -> QubitSpectrum {
        let omega = (0..l).map(|k| k as f64 * spacing + anharm * (k * k) as f64).collect();
        let n = DMatrix::from_fn(l, l, |i, j| {
            if i + 1 == j {
                C64::new(0.0, -1.0)
            } else if j + 1 == i {
                C64::new(0.0, 1.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        QubitSpectrum::from_parts(omega, n).unwrap()
    }

    #[test]
    fn zero_coupling_gives_zero_generator() {
        let sw = first_order_generator(&table1_spectrum(4), 0.0, ghz(5.9436), 0.1).unwrap();
        assert!(sw.s(1, 1, 0).unwrap().iter().all(|z| z.norm() == 0.0));
        let p = second_order_params(&table1_spectrum(8), &inputs(0.0)).unwrap();
        assert_eq!((p.chi_g, p.chi_h, p.lambda_g, p.lambda_h), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(p.g_eff, C64::new(0.0, 0.0));
    }

    #[test]
    fn two_level_generator_element() {
        let (wq, wr, g) = (4.0, 6.0, 0.05);
        let n01 = C64::new(0.0, 0.7);
        let n = DMatrix::from_row_slice(2, 2, &[C64::default(), n01, n01.conj(), C64::default()]);
        let s = QubitSpectrum::from_parts(vec![0.0, wq], n).unwrap();
        let sw = first_order_generator(&s, g, wr, 0.1).unwrap();
        let expect = -I * g * n01 / (wq - wr);
        assert!((sw.s(1, 1, 0).unwrap()[(0, 1)] - expect).norm() < 1e-15);
        assert!(sw.hermiticity_violation() < 1e-15);
    }

    #[test]
    fn generator_matches_quotient_formula() {
        let s = table1_spectrum(4);
        let (g, wr) = (ghz(0.098), ghz(5.9436));
        let sw = first_order_generator(&s, g, wr, 0.1).unwrap();
        let s10 = sw.s(1, 1, 0).unwrap();
        let s01 = sw.s(1, 0, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let wij = s.omega[j] - s.omega[i];
                let a = C64::new(0.0, -g) * s.n_matrix[(i, j)] / (wij - wr);
                let b = C64::new(0.0, g) * s.n_matrix[(i, j)] / (wij + wr);
                assert!((s10[(i, j)] - a).norm() < 1e-14);
                assert!((s01[(i, j)] - b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn near_resonance_is_rejected() {
        let (wr, g) = (6.0, 0.05);
        let n = DMatrix::from_row_slice(2, 2, &[C64::default(), I, -I, C64::default()]);
        let s = QubitSpectrum::from_parts(vec![0.0, wr + 2.0 * g], n).unwrap();
        let err = first_order_generator(&s, g, wr, 0.1).unwrap_err();
        assert!(matches!(err, Error::NearResonance { i: 0, j: 1, .. }));
        let rep = rwa_validity_report(&s, g, wr, wr, 0.0, 0.0, 0.1);
        let e = rep.entries.iter().find(|e| e.i == 0 && e.j == 1).unwrap();
        assert!((e.r1 - 0.5).abs() < 1e-12);
        assert!(!rep.flagged.is_empty());
    }

    #[test]
    fn two_level_dispersive_shift() {
        let (wq, wr, g) = (4.0, 6.0, 0.05);
        let nabs = 0.7;
        let n = DMatrix::from_row_slice(2, 2, &[C64::default(), I * nabs, -I * nabs, C64::default()]);
        let s = QubitSpectrum::from_parts(vec![0.0, wq], n).unwrap();
        let mut sw = first_order_generator(&s, g, wr, 0.1).unwrap();
        extend_second_order(&mut sw, &s).unwrap();
        let v11 = sw.v(2, 1, 1).unwrap();
        let chi0 = -2.0 * g * g * nabs * nabs * wq / (wq * wq - wr * wr);
        let chi1 = -chi0;
        assert!((v11[(0, 0)].re - chi0).abs() < 1e-15);
        assert!((v11[(1, 1)].re - chi1).abs() < 1e-15);
        // χ_1 − χ_0 = 2g²|n|²(1/Δ + 1/Σ)
        let delta = wq - wr;
        let sigma = wq + wr;
        let expect = g * g * nabs * nabs * (1.0 / delta + 1.0 / sigma) * 2.0;
        assert!((v11[(1, 1)].re - v11[(0, 0)].re - expect).abs() < 1e-15);
    }

    #[test]
    fn generator_condition_residual() {
        let s = table1_spectrum(6);
        let (g, wr, np) = (ghz(0.098), ghz(5.9436), 8);
        let sw = first_order_generator(&s, g, wr, 0.1).unwrap();
        let sj = sw.joint_generator(6, np).unwrap();
        let a = destroy(np);
        let hq = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            6,
            s.omega.iter().map(|w| C64::new(*w, 0.0)),
        ));
        let h0 = hq.kronecker(&DMatrix::identity(np, np))
            + DMatrix::<C64>::identity(6, 6).kronecker(&(a.adjoint() * &a * C64::new(wr, 0.0)));
        let v1 = (&s.n_matrix * (I * g)).kronecker(&(a.adjoint() - &a));
        let res = &sj * &h0 - &h0 * &sj + v1;
        let scale = h0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(res.iter().all(|z| z.norm() < 1e-10 * scale));
    }

    /// Numerical conjugation oracle: `e^{S} H_qr e^{−S}` at small coupling,
    /// with Richardson extrapolation removing the g⁴ term.
    fn conjugation_oracle(s: &QubitSpectrum, g: f64, wr: f64, gl: usize, hl: usize) -> (f64, f64, f64, f64, C64) {
        let l = s.level_count;
        let np = 6;
        let measure = |gg: f64| {
            let sw = first_order_generator(s, gg, wr, 0.1).unwrap();
            let sj = sw.joint_generator(l, np).unwrap();
            let a = destroy(np);
            let hq = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                l,
                s.omega.iter().map(|w| C64::new(*w, 0.0)),
            ));
            let h = hq.kronecker(&DMatrix::identity(np, np))
                + DMatrix::<C64>::identity(l, l).kronecker(&(a.adjoint() * &a * C64::new(wr, 0.0)))
                + (&s.n_matrix * (I * gg)).kronecker(&(a.adjoint() - &a));
            let u = exp_generator(&sj, 1.0);
            let hp = &u * h * u.adjoint();
            let idx = |q: usize, n: usize| q * np + n;
            let chi = |q: usize| (hp[(idx(q, 1), idx(q, 1))] - hp[(idx(q, 0), idx(q, 0))]).re - wr;
            let lam = |q: usize| hp[(idx(q, 0), idx(q, 0))].re - s.omega[q];
            let ge = hp[(idx(gl, 2), idx(hl, 0))] / 2f64.sqrt();
            (chi(gl), chi(hl), lam(gl), lam(hl), ge)
        };
        let (s1, s2) = (0.02, 0.04);
        let a = measure(g * s1);
        let b = measure(g * s2);
        // value/g² extrapolated: f(s) = c2 s² + c4 s⁴
        let ext = |x: f64, y: f64| {
            let (x, y) = (x / (s1 * s1), y / (s2 * s2));
            (4.0 * x - y) / 3.0
        };
        let ext_c = |x: C64, y: C64| {
            let (x, y) = (x / (s1 * s1), y / (s2 * s2));
            (x * 4.0 - y) / 3.0
        };
        (ext(a.0, b.0), ext(a.1, b.1), ext(a.2, b.2), ext(a.3, b.3), ext_c(a.4, b.4))
    }

    #[test]
    fn second_order_matches_conjugation_oracle() {
        let s = table1_spectrum(8);
        let c = inputs(ghz(0.098));
        let p = second_order_params(&s, &c).unwrap();
        let (cg, ch, lg, lh, ge) = conjugation_oracle(&s, c.g, c.omega_r, 0, 3);
        let tol = 1e-5;
        assert!((p.chi_g - cg).abs() < tol * p.chi_g.abs(), "{} {}", p.chi_g, cg);
        assert!((p.chi_h - ch).abs() < tol * p.chi_h.abs(), "{} {}", p.chi_h, ch);
        assert!((p.lambda_g - lg).abs() < tol * p.lambda_g.abs(), "{} {}", p.lambda_g, lg);
        assert!((p.lambda_h - lh).abs() < tol * p.lambda_h.abs(), "{} {}", p.lambda_h, lh);
        assert!((p.g_eff - ge).norm() < tol * p.g_eff.norm(), "{} {}", p.g_eff, ge);
    }

    #[test]
    fn table1_reduced_parameters() {
        let s = table1_spectrum(37);
        let conv = converged_second_order_params(&s, &inputs(ghz(0.098)), 12, 4, 1e-3).unwrap();
        let p = &conv.params;
        // reference values (MHz) from an independent dense evaluation with 24 levels
        assert!((to_mhz(p.chi_g) - 4.0277).abs() < 2e-3, "{}", to_mhz(p.chi_g));
        assert!((to_mhz(p.chi_h) + 0.682).abs() < 2e-3, "{}", to_mhz(p.chi_h));
        assert!((to_mhz(p.g_eff.norm()) - 0.2144).abs() < 5e-4, "{}", to_mhz(p.g_eff.norm()));
        assert!((to_mhz(p.delta_q) - 27.06).abs() < 0.05, "{}", to_mhz(p.delta_q));
        assert!(conv.relative_change < 1e-3);
    }

    #[test]
    fn frame_relations_are_enforced() {
        let p = second_order_params(&table1_spectrum(8), &inputs(ghz(0.098))).unwrap();
        assert!(p.validate().is_ok());
        let mut bad = p.clone();
        bad.delta_q += 1e-3;
        assert!(bad.validate().is_err());
        let shifted = p.with_drive_frequency(p.omega_d + 0.01);
        assert!(shifted.validate().is_ok());
    }

    #[test]
    fn coupling_scaling() {
        let s = table1_spectrum(8);
        let base = second_order_params(&s, &inputs(ghz(0.098))).unwrap();
        let g3 = third_order_coupling(&s, ghz(0.098), ghz(5.9436), 0, 7).unwrap();
        for sc in [0.5, 1.3] {
            let p = second_order_params(&s, &inputs(ghz(0.098) * sc)).unwrap();
            let s2 = sc * sc;
            for (x, y) in [
                (p.chi_g, base.chi_g),
                (p.chi_h, base.chi_h),
                (p.lambda_g, base.lambda_g),
                (p.lambda_h, base.lambda_h),
            ] {
                assert!((x - s2 * y).abs() <= 1e-8 * (s2 * y).abs());
            }
            assert!((p.g_eff - base.g_eff * s2).norm() <= 1e-8 * (base.g_eff * s2).norm());
            let h3 = third_order_coupling(&s, ghz(0.098) * sc, ghz(5.9436), 0, 7).unwrap();
            assert!((h3 - g3 * sc.powi(3)).norm() <= 1e-8 * (g3 * sc.powi(3)).norm());
        }
    }

    #[test]
    fn third_order_selection_rules() {
        let two = ladder(2, 4.0, 0.0);
        assert_eq!(third_order_coupling(&two, 0.05, 6.0, 0, 0).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(third_order_coupling(&ladder(4, 4.0, -0.3), 0.0, 6.0, 0, 3).unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn third_order_double_sum_matches_loop_oracle() {
        let s = ladder(4, 4.1, -0.2);
        let (g, wr) = (0.03, 6.0);
        let got = third_order_coupling(&s, g, wr, 0, 3).unwrap();
        // brute force over the printed expression, independent indexing
        let w = |a: usize, b: usize| s.omega[b] - s.omega[a];
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..4 {
            for l in 0..4 {
                let nnn = s.n_matrix[(0, l)] * s.n_matrix[(l, k)] * s.n_matrix[(k, 3)];
                let a = -(0.5 / (w(k, 0) - 2.0 * wr) + 1.0 / (6.0 * (w(k, 3) - wr)))
                    * (1.0 / (w(0, l) - wr) - 1.0 / (w(k, 3) - wr));
                let b = (0.5 / (w(l, 3) - 2.0 * wr) + 1.0 / (6.0 * (w(0, l) - wr)))
                    * (1.0 / (w(l, k) - wr) - 1.0 / (w(k, 3) - wr));
                acc += nnn * C64::new(0.0, g * g * g) * (a + b);
            }
        }
        assert!((got - acc).norm() < 1e-15 * acc.norm().max(1e-300) + 1e-300);
        assert!(acc.norm() > 0.0);
    }

    #[test]
    fn expansion_components_hermiticity() {
        let s = table1_spectrum(8);
        let mut sw = first_order_generator(&s, ghz(0.098), ghz(5.9436), 0.1).unwrap();
        extend_second_order(&mut sw, &s).unwrap();
        extend_third_order(&mut sw).unwrap();
        assert!(sw.hermiticity_violation() < 1e-10);
    }

    #[test]
    fn validity_report_table1() {
        let s = table1_spectrum(8);
        let rep = rwa_validity_report(&s, ghz(0.098), ghz(5.9436), ghz(5.9436), mhz(12.0), mhz(4.086), 0.1);
        assert!(rep.flagged.is_empty());
        assert!((rep.worst_r1 - 0.0709639).abs() < 1e-5, "{}", rep.worst_r1);
        let zero = rwa_validity_report(&s, 0.0, ghz(5.9436), ghz(5.9436), mhz(12.0), mhz(4.086), 0.1);
        assert_eq!((zero.worst_r1, zero.worst_r2, zero.worst_r3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lab_frame_map() {
        let s = table1_spectrum(4);
        let sw = first_order_generator(&s, ghz(0.098), ghz(5.9436), 0.1).unwrap();
        let psi = StateVector::basis_state(&[4, 10], &[0, 0], BasisTag::DressedRotating).unwrap();
        let (lab, dev) = lab_frame_state(&sw, &psi).unwrap();
        assert!(dev < 1e-12);
        let overlap = lab.amplitudes[0].norm_sqr();
        let rep = rwa_validity_report(&s, ghz(0.098), ghz(5.9436), ghz(5.9436), 0.0, 0.0, 0.1);
        let bound = rep.entries.iter().filter(|e| e.i == 0).map(|e| e.r1 * e.r1).sum::<f64>()
            + rep.entries.iter().filter(|e| e.j == 0).map(|e| e.r1 * e.r1).sum::<f64>();
        assert!(overlap < 1.0 && 1.0 - overlap <= bound, "{overlap} {bound}");
        let sj = sw.joint_generator(4, 10).unwrap();
        let id = exp_generator(&sj, -1.0) * exp_generator(&sj, 1.0);
        assert!((id - DMatrix::<C64>::identity(40, 40)).norm() < 1e-10);
        let sw0 = first_order_generator(&s, 0.0, ghz(5.9436), 0.1).unwrap();
        let (same, _) = lab_frame_state(&sw0, &psi).unwrap();
        assert!((same.amplitudes - &psi.amplitudes).norm() < 1e-15);
    }
}
