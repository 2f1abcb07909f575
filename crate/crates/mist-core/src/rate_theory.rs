//! Analytic transition rates of the driven-dissipative effective model.
//!
//! In the conditional displaced frame the qubit coherence `ρ_hg` relaxes
//! quickly and is eliminated adiabatically. The remaining populations obey
//! `dP_g/dt = −γ_g P_g + γ_h P_h` with
//!
//! ```text
//! γ_g = −2|g_eff|² Re Σ_n (A_n0)* x_n^g,   c00_n0 x_n^g + c10_n0 x_{n+1}^g = A_n0
//! γ_h = −2|g_eff|² Re Σ_n (A_0n)* x_n^h,   c00_0n x_n^h + c01_0n x_{n+1}^h = A_0n
//! ```
//!
//! where `A = D†(α_h) a^k D(α_g)`.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::sw_transform::ReducedParams;
use crate::{Error, Result, C64};

const I: C64 = C64::new(0.0, 1.0);

/// Extra terms used by the tail convergence gate.
pub const GATE_TERMS: usize = 10;
/// Relative tolerance of the tail convergence gate.
pub const GATE_TOL: f64 = 1e-3;
const MAX_N_TRUNC: usize = 4000;

/// Cavity amplitudes conditioned on the qubit state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalAmplitudes {
    pub alpha_g: C64,
    pub alpha_h: C64,
    pub chi_check_g: f64,
    pub chi_check_h: f64,
}

/// `α_i = −ε_d / (χ̌_i − iκ/2)`, `χ̌_i = χ_i + δ_a`.
pub fn conditional_amplitudes(params: &ReducedParams) -> ConditionalAmplitudes {
    let (cg, ch) = params.chi_check();
    let eps = C64::new(params.epsilon_d, 0.0);
    let half = C64::new(0.0, 0.5 * params.kappa);
    ConditionalAmplitudes {
        alpha_g: -eps / (cg - half),
        alpha_h: -eps / (ch - half),
        chi_check_g: cg,
        chi_check_h: ch,
    }
}

impl ConditionalAmplitudes {
    pub fn max_photons(&self) -> f64 {
        self.alpha_g.norm_sqr().max(self.alpha_h.norm_sqr())
    }
}

/// Default truncation `max(60, ⌈6·max|α|² + 30⌉)`.
pub fn default_n_trunc(amps: &ConditionalAmplitudes) -> usize {
    ((6.0 * amps.max_photons() + 30.0).ceil() as usize).max(60)
}

/// Generalized Laguerre polynomial `L_n^{(a)}(x)` by upward recurrence.
fn laguerre(n: usize, a: f64, x: f64) -> f64 {
    let mut l0 = 1.0;
    if n == 0 {
        return l0;
    }
    let mut l1 = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 + a - x) * l1 - (kf + a) * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// Displaced-Fock overlap `⟨n|D(β)|m⟩`.
pub fn displaced_fock(n: usize, m: usize, beta: C64) -> C64 {
    let x = beta.norm_sqr();
    if x == 0.0 {
        return if n == m { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
    }
    let (lo, hi, base) = if n >= m { (m, n, beta) } else { (n, m, -beta.conj()) };
    let p = (hi - lo) as f64;
    let log_mag = 0.5 * (ln_gamma(lo as f64 + 1.0) - ln_gamma(hi as f64 + 1.0)) - 0.5 * x + p * base.norm().ln();
    C64::from_polar(log_mag.exp(), p * base.arg()) * laguerre(lo, p, x)
}

fn binomial(k: usize, j: usize) -> f64 {
    (ln_gamma(k as f64 + 1.0) - ln_gamma(j as f64 + 1.0) - ln_gamma((k - j) as f64 + 1.0))
        .exp()
        .round()
}

/// `⟨n|D†(α_h) a^k D(α_g)|m⟩`.
pub fn displaced_element(amps: &ConditionalAmplitudes, k: usize, n: usize, m: usize) -> C64 {
    let (ag, ah) = (amps.alpha_g, amps.alpha_h);
    let beta = ag - ah;
    let phase = C64::from_polar(1.0, (ah.conj() * ag).im);
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..=k {
        let ladder = (0.5 * (ln_gamma((n + j) as f64 + 1.0) - ln_gamma(n as f64 + 1.0))).exp();
        acc += ah.powu((k - j) as u32) * (binomial(k, j) * ladder) * displaced_fock(n + j, m, beta);
    }
    phase * acc
}

/// `A_n0` and `A_0m` for `n, m = 0..=n_trunc`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacedElements {
    pub k: usize,
    pub row_n0: Vec<C64>,
    pub col_0m: Vec<C64>,
}

pub fn displaced_matrix_elements(
    amps: &ConditionalAmplitudes,
    k: usize,
    n_trunc: usize,
) -> Result<DisplacedElements> {
    let need = 4.0 * amps.max_photons() + 20.0;
    if (n_trunc as f64) < need {
        return Err(Error::Truncation(format!(
            "n_trunc = {n_trunc} below 4 max|alpha|^2 + 20 = {need:.1}"
        )));
    }
    Ok(DisplacedElements {
        k,
        row_n0: (0..=n_trunc).map(|n| displaced_element(amps, k, n, 0)).collect(),
        col_0m: (0..=n_trunc).map(|m| displaced_element(amps, k, 0, m)).collect(),
    })
}

/// Printed form of `c00` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum C00Form {
    /// `−i(χ̌_h n − χ̌_g m + ω̃_q) − κ(n+m)/2 + κ(α_h α_g* − (|α_h|² + |α_g|²)/2)`.
    #[default]
    Primary,
    /// `(−iχ̌_h − κ/2) n + (iχ̌_g − κ/2) m − i(χ̌_h − χ̌_g) α_g* α_h + δ_q`,
    /// kept for comparison only.
    Alternative,
}

/// Recurrence coefficients along the `m = 0` row and `n = 0` column.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceCoefficients {
    pub c00_n0: Vec<C64>,
    pub c00_0m: Vec<C64>,
    pub c10_n0: Vec<C64>,
    pub c01_0m: Vec<C64>,
    pub omega_q_tilde: C64,
    /// Energy offset of the displaced frame; it cancels from every rate.
    pub offset_c: C64,
}

/// `c11_nm = κ √((n+1)(m+1))`.
pub fn c11(kappa: f64, n: usize, m: usize) -> f64 {
    kappa * (((n + 1) * (m + 1)) as f64).sqrt()
}

pub fn recurrence_coefficients(
    params: &ReducedParams,
    amps: &ConditionalAmplitudes,
    n_trunc: usize,
    form: C00Form,
) -> RecurrenceCoefficients {
    let (ag, ah) = (amps.alpha_g, amps.alpha_h);
    let (cg, ch) = (amps.chi_check_g, amps.chi_check_h);
    let kappa = params.kappa;
    let eps = C64::new(params.epsilon_d, 0.0);
    let omega_q_tilde = params.delta_q + ch * ah.norm_sqr() - cg * ag.norm_sqr()
        + eps * (ah.conj() - ag.conj())
        + eps.conj() * (ah - ag);
    let offset_c = (ch * ah.norm_sqr() + cg * ag.norm_sqr()
        + eps * (ah.conj() + ag.conj())
        + eps.conj() * (ah + ag))
        * 0.5;
    let cst = (ah * ag.conj() - 0.5 * (ah.norm_sqr() + ag.norm_sqr())) * kappa;
    let c00 = |n: f64, m: f64| match form {
        C00Form::Primary => -I * (ch * n - cg * m + omega_q_tilde) - 0.5 * kappa * (n + m) + cst,
        C00Form::Alternative => {
            C64::new(-0.5 * kappa, -ch) * n + C64::new(-0.5 * kappa, cg) * m - I * (ch - cg) * ag.conj() * ah
                + params.delta_q
        }
    };
    let dg = ag.conj() - ah.conj();
    let dh = ag - ah;
    RecurrenceCoefficients {
        c00_n0: (0..=n_trunc).map(|n| c00(n as f64, 0.0)).collect(),
        c00_0m: (0..=n_trunc).map(|m| c00(0.0, m as f64)).collect(),
        c10_n0: (0..=n_trunc).map(|n| dg * (kappa * ((n + 1) as f64).sqrt())).collect(),
        c01_0m: (0..=n_trunc).map(|m| -dh * (kappa * ((m + 1) as f64).sqrt())).collect(),
        omega_q_tilde,
        offset_c,
    }
}

/// Solves `b_n x_n + d_n x_{n+1} = y_n` for `n = 0..N` with `x_{N+1} = 0`,
/// which is the truncated backward sum
/// `x_n = Σ_{ℓ ≥ n} (−1)^{ℓ−n} (y_ℓ/b_ℓ) Π_{k=n}^{ℓ−1} d_k/b_k`.
///
/// The tail ratio `|d_k/b_k|` over the last [`GATE_TERMS`] indices must stay
/// below one.
pub fn solve_recurrence(y: &[C64], b: &[C64], d: &[C64]) -> Result<Vec<C64>> {
    let n = y.len();
    if b.len() != n || d.len() != n || n == 0 {
        return Err(Error::dims(n, (b.len(), d.len())));
    }
    for idx in n.saturating_sub(GATE_TERMS)..n {
        let ratio = if b[idx].norm() == 0.0 {
            f64::INFINITY
        } else {
            (d[idx] / b[idx]).norm()
        };
        if ratio >= 1.0 {
            return Err(Error::DivergentSeries { ratio, index: idx });
        }
    }
    if let Some(idx) = b.iter().position(|v| v.norm() == 0.0) {
        return Err(Error::DivergentSeries {
            ratio: f64::INFINITY,
            index: idx,
        });
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    x[n - 1] = y[n - 1] / b[n - 1];
    for k in (0..n - 1).rev() {
        x[k] = (y[k] - d[k] * x[k + 1]) / b[k];
    }
    Ok(x)
}

/// Intermediate quantities of one rate evaluation.
#[derive(Debug, Clone)]
pub struct RateWorkspace {
    pub amplitudes: ConditionalAmplitudes,
    pub elements: DisplacedElements,
    pub coefficients: RecurrenceCoefficients,
    pub x_g: Vec<C64>,
    pub x_h: Vec<C64>,
    pub n_trunc: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateResult {
    pub gamma_g: f64,
    pub gamma_h: f64,
    pub gamma: f64,
    pub pg_ss: f64,
    pub ph_ss: f64,
    pub n_trunc: usize,
    /// `κ / (|g_eff| · max(1, max|α|²)^{k/2})`; the theory assumes this is large.
    pub bad_cavity_ratio: f64,
}

impl RateResult {
    pub fn bad_cavity_ok(&self) -> bool {
        self.bad_cavity_ratio >= 5.0
    }
}

/// Unscaled sums `−2 Re Σ A* x` for the `g` and `h` rows at truncation `n_trunc`.
pub fn rate_workspace(params: &ReducedParams, n_trunc: usize, form: C00Form) -> Result<RateWorkspace> {
    let amps = conditional_amplitudes(params);
    let k = params.order_k;
    let elements = displaced_matrix_elements(&amps, k, n_trunc)?;
    let coefficients = recurrence_coefficients(params, &amps, n_trunc, form);
    let x_g = solve_recurrence(&elements.row_n0, &coefficients.c00_n0, &coefficients.c10_n0)?;
    let x_h = solve_recurrence(&elements.col_0m, &coefficients.c00_0m, &coefficients.c01_0m)?;
    Ok(RateWorkspace {
        amplitudes: amps,
        elements,
        coefficients,
        x_g,
        x_h,
        n_trunc,
        k,
    })
}

impl RateWorkspace {
    /// `(γ_g, γ_h) / |g_eff|²`.
    pub fn unit_rates(&self) -> (f64, f64) {
        let sum = |a: &[C64], x: &[C64]| -> f64 {
            let mut acc = C64::new(0.0, 0.0);
            for (ai, xi) in a.iter().zip(x) {
                acc += ai.conj() * xi;
            }
            -2.0 * acc.re
        };
        (sum(&self.elements.row_n0, &self.x_g), sum(&self.elements.col_0m, &self.x_h))
    }
}

fn relative_change(a: (f64, f64), b: (f64, f64)) -> f64 {
    let r = |x: f64, y: f64| {
        let s = x.abs().max(y.abs());
        if s == 0.0 {
            0.0
        } else {
            (x - y).abs() / s
        }
    };
    r(a.0, b.0).max(r(a.1, b.1))
}

/// Full rate pipeline with the tail convergence gate. `n_trunc = None`
/// uses [`default_n_trunc`]; the truncation grows by half until the gate
/// passes.
pub fn transition_rates(params: &ReducedParams, n_trunc: Option<usize>) -> Result<RateResult> {
    transition_rates_with(params, n_trunc, C00Form::Primary)
}

pub fn transition_rates_with(
    params: &ReducedParams,
    n_trunc: Option<usize>,
    form: C00Form,
) -> Result<RateResult> {
    params.validate()?;
    if params.kappa <= 0.0 {
        return Err(Error::param("kappa", "rate theory needs kappa > 0"));
    }
    let amps = conditional_amplitudes(params);
    let mut n = n_trunc.unwrap_or_else(|| default_n_trunc(&amps));
    let (unit, n_used) = loop {
        let a = rate_workspace(params, n, form)?.unit_rates();
        let b = rate_workspace(params, n + GATE_TERMS, form)?.unit_rates();
        let change = relative_change(a, b);
        if change < GATE_TOL {
            break (a, n);
        }
        if n >= MAX_N_TRUNC {
            return Err(Error::NotConverged { change, n_trunc: n });
        }
        n = (n + n / 2).min(MAX_N_TRUNC);
    };
    let g2 = params.g_eff.norm_sqr();
    let (mut gamma_g, mut gamma_h) = (g2 * unit.0, g2 * unit.1);
    if g2 == 0.0 || (gamma_g == 0.0 && gamma_h == 0.0) {
        return Err(Error::DegenerateRates);
    }
    let floor = 1e-12 * (gamma_g.abs() + gamma_h.abs());
    for (name, v) in [("gamma_g", &mut gamma_g), ("gamma_h", &mut gamma_h)] {
        if *v < -floor {
            return Err(Error::NegativeRate {
                name,
                value: *v,
                n_trunc: n_used,
            });
        }
        *v = v.max(0.0);
    }
    let gamma = gamma_g + gamma_h;
    let scale = amps.max_photons().max(1.0).powf(params.order_k as f64 / 2.0);
    Ok(RateResult {
        gamma_g,
        gamma_h,
        gamma,
        pg_ss: gamma_h / gamma,
        ph_ss: gamma_g / gamma,
        n_trunc: n_used,
        bad_cavity_ratio: params.kappa / (params.g_eff.norm() * scale),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DressedLabel {
    G,
    H,
}

/// Closed-form relaxation `P_i(t) = P_i^ss + (1 − P_i^ss) e^{−γt}` for the
/// initially occupied state `i`; the other population is `1 − P_i(t)`.
/// Returns `(P_g, P_h)`.
pub fn population_estimate(rates: &RateResult, t: f64, initial: DressedLabel) -> (f64, f64) {
    let decay = (-rates.gamma * t).exp();
    match initial {
        DressedLabel::G => {
            let pg = rates.pg_ss + (1.0 - rates.pg_ss) * decay;
            (pg, 1.0 - pg)
        }
        DressedLabel::H => {
            let ph = rates.ph_ss + (1.0 - rates.ph_ss) * decay;
            (1.0 - ph, ph)
        }
    }
}

/// Initial dressed state used for numerical rate extraction at drive
/// amplitude `epsilon_d_mhz` (ordinary MHz).
pub fn fit_initial_state(epsilon_d_mhz: f64) -> DressedLabel {
    if epsilon_d_mhz <= 7.0 {
        DressedLabel::H
    } else {
        DressedLabel::G
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub gamma: f64,
    pub p_ss: f64,
    pub c: f64,
    pub rms_residual: f64,
    /// `γ · (t_last − t_min)`.
    pub coverage: f64,
}

/// `t_min = 10/κ`.
pub fn default_t_min(kappa: f64) -> f64 {
    10.0 / kappa
}

/// `(P_ss, C)` minimizing the squared residual at fixed `γ`, and that residual.
fn project(t: &[f64], p: &[f64], gamma: f64) -> (f64, f64, f64) {
    let (mut s1, mut se, mut see, mut sp, mut sep) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&ti, &pi) in t.iter().zip(p) {
        let e = (-gamma * ti).exp();
        s1 += 1.0;
        se += e;
        see += e * e;
        sp += pi;
        sep += e * pi;
    }
    let det = s1 * see - se * se;
    let (pss, c) = if det.abs() < 1e-300 {
        (sp / s1, 0.0)
    } else {
        ((see * sp - se * sep) / det, (s1 * sep - se * sp) / det)
    };
    let r: f64 = t
        .iter()
        .zip(p)
        .map(|(&ti, &pi)| (pss + c * (-gamma * ti).exp() - pi).powi(2))
        .sum();
    (pss, c, r)
}

/// Least-squares fit of `P(t) = P_ss + C e^{−γt}` to samples with `t > t_min`.
pub fn fit_relaxation(times: &[f64], values: &[f64], t_min: f64) -> Result<FitResult> {
    if times.len() != values.len() {
        return Err(Error::dims(times.len(), values.len()));
    }
    let (t, p): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(ti, _)| **ti > t_min)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if t.len() < 5 {
        return Err(Error::Fit(format!("only {} samples after t_min = {t_min}", t.len())));
    }
    let span = t[t.len() - 1] - t[0];
    let spread = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - p.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread <= 1e-12 * p.iter().map(|v| v.abs()).fold(1.0, f64::max) {
        return Err(Error::Fit("series is constant; decay rate is indeterminate".into()));
    }

    // log-linear start: tail mean as P_ss, slope of ln|P − P_ss| over the head
    let tail = (t.len() / 10).max(1);
    let pss0 = p[p.len() - tail..].iter().sum::<f64>() / tail as f64;
    let head: Vec<(f64, f64)> = t
        .iter()
        .zip(&p)
        .take(t.len() - tail)
        .filter_map(|(&ti, &pi)| {
            let d = (pi - pss0).abs();
            (d > 1e-3 * spread).then(|| (ti, d.ln()))
        })
        .collect();
    let gamma0 = if head.len() >= 2 {
        let n = head.len() as f64;
        let (mt, my) = head.iter().fold((0.0, 0.0), |a, v| (a.0 + v.0 / n, a.1 + v.1 / n));
        let (sxy, sxx) = head
            .iter()
            .fold((0.0, 0.0), |a, v| (a.0 + (v.0 - mt) * (v.1 - my), a.1 + (v.0 - mt).powi(2)));
        -sxy / sxx
    } else {
        f64::NAN
    };
    let gamma0 = if gamma0.is_finite() && gamma0 > 0.0 { gamma0 } else { 3.0 / span };

    // variable projection over ln γ
    let (lo, hi) = (gamma0.ln() - 5.0, gamma0.ln() + 5.0);
    let steps = 400;
    let mut best = (f64::INFINITY, 0usize);
    for s in 0..=steps {
        let g = (lo + (hi - lo) * s as f64 / steps as f64).exp();
        let r = project(&t, &p, g).2;
        if r < best.0 {
            best = (r, s);
        }
    }
    if best.1 == 0 || best.1 == steps {
        return Err(Error::Fit("no decay resolved inside the fit window".into()));
    }
    let mut gamma = (lo + (hi - lo) * best.1 as f64 / steps as f64).exp();
    let (mut pss, mut c, mut rss) = project(&t, &p, gamma);

    // damped Gauss-Newton polish on (P_ss, C, γ)
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for (&ti, &pi) in t.iter().zip(&p) {
            let e = (-gamma * ti).exp();
            let r = pss + c * e - pi;
            let j = nalgebra::Vector3::new(1.0, e, -c * ti * e);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut a = jtj;
        for k in 0..3 {
            a[(k, k)] *= 1.0 + lambda;
        }
        let Some(step) = a.lu().solve(&(-jtr)) else {
            break;
        };
        let (np, nc, ng) = (pss + step[0], c + step[1], gamma + step[2]);
        let nr: f64 = t
            .iter()
            .zip(&p)
            .map(|(&ti, &pi)| (np + nc * (-ng * ti).exp() - pi).powi(2))
            .sum();
        if ng > 0.0 && nr <= rss {
            let done = (rss - nr) <= 1e-15 * rss.max(1e-300) && step.norm() <= 1e-13 * (1.0 + gamma.abs());
            (pss, c, gamma, rss) = (np, nc, ng, nr);
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if gamma <= 0.0 || c.abs() < 1e-9 * pss.abs().max(1.0) {
        return Err(Error::Fit(format!("non-decaying series (gamma = {gamma:.3e}, C = {c:.3e})")));
    }
    Ok(FitResult {
        gamma,
        p_ss: pss,
        c,
        rms_residual: (rss / t.len() as f64).sqrt(),
        coverage: gamma * (t[t.len() - 1] - t_min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::{destroy, unitary_from_hermitian};
    use crate::sw_transform::FrameInputs;
    use crate::units::mhz;
    use nalgebra::DMatrix;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn params(eps_mhz: f64) -> ReducedParams {
        ReducedParams::new(
            FrameInputs {
                omega_r: 37.345,
                omega_d: 37.345,
                omega_g: 0.0,
                omega_h: 74.867,
                kappa: mhz(4.086),
                epsilon_d: mhz(eps_mhz),
                g_level: 0,
                h_level: 3,
                order_k: 2,
            },
            (mhz(4.0277), mhz(-0.682)),
            (mhz(-0.348), mhz(-2.10)),
            C64::new(0.0, mhz(0.2144)),
        )
        .unwrap()
    }

    fn displacement(n: usize, beta: C64) -> DMatrix<C64> {
        let a = destroy(n);
        // D = exp(β a† − β* a) = exp(−iK) with K = i(β a† − β* a)
        let k = (a.adjoint() * beta - &a * beta.conj()) * I;
        unitary_from_hermitian(&k)
    }

    #[test]
    fn amplitudes_closed_form() {
        let z = conditional_amplitudes(&params(0.0));
        assert_eq!(z.alpha_g, C64::new(0.0, 0.0));
        assert_eq!(z.alpha_h, C64::new(0.0, 0.0));
        let mut p = params(5.0);
        p.chi_h = p.chi_g;
        let s = conditional_amplitudes(&p);
        assert_eq!(s.alpha_g, s.alpha_h);
    }

    #[test]
    fn displaced_elements_trivial_cases() {
        let alpha = C64::new(0.7, -0.4);
        let amps = ConditionalAmplitudes {
            alpha_g: alpha,
            alpha_h: alpha,
            chi_check_g: 0.0,
            chi_check_h: 0.0,
        };
        assert!((displaced_element(&amps, 2, 0, 0) - alpha * alpha).norm() < 1e-14);
        let zero = ConditionalAmplitudes {
            alpha_g: C64::new(0.0, 0.0),
            alpha_h: C64::new(0.0, 0.0),
            ..amps
        };
        for n in 0..10 {
            assert_eq!(displaced_element(&zero, 2, n, 0), C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn displaced_elements_match_matrix_product() {
        let amps = ConditionalAmplitudes {
            alpha_g: C64::new(0.9, 0.6),
            alpha_h: C64::new(-1.3, 1.1),
            chi_check_g: 0.0,
            chi_check_h: 0.0,
        };
        let n_trunc = 40;
        let el = displaced_matrix_elements(&amps, 2, n_trunc).unwrap();
        let big = n_trunc + 40;
        let a = destroy(big);
        let prod = displacement(big, amps.alpha_h).adjoint() * (&a * &a) * displacement(big, amps.alpha_g);
        for n in 0..=n_trunc {
            assert!((el.row_n0[n] - prod[(n, 0)]).norm() < 1e-8, "n0 {n}");
            assert!((el.col_0m[n] - prod[(0, n)]).norm() < 1e-8, "0m {n}");
        }
        assert!(displaced_matrix_elements(&amps, 2, 20).is_err());
    }

    #[test]
    fn coefficients_trivial_cases() {
        let p = params(0.0);
        let amps = conditional_amplitudes(&p);
        let c = recurrence_coefficients(&p, &amps, 5, C00Form::Primary);
        assert!((c.c00_n0[0] - C64::new(0.0, -p.delta_q)).norm() < 1e-15);
        let mut q = params(3.0);
        q.chi_h = q.chi_g;
        let amps = conditional_amplitudes(&q);
        let c = recurrence_coefficients(&q, &amps, 5, C00Form::Primary);
        assert!(c.c10_n0.iter().chain(&c.c01_0m).all(|v| v.norm() == 0.0));
        assert_eq!(c11(2.0, 1, 2), 2.0 * 6f64.sqrt());
    }

    /// Applies the displaced-frame Liouvillian of the `hg` coherence block to
    /// `|n⟩⟨m|` numerically and reads off the coefficients.
    #[test]
    fn coefficients_match_displaced_liouvillian() {
        let p = params(10.0);
        let amps = conditional_amplitudes(&p);
        let nb = 90;
        let a = destroy(nb);
        let ad = a.adjoint();
        let num = &ad * &a;
        let id = DMatrix::<C64>::identity(nb, nb);
        let eps = C64::new(p.epsilon_d, 0.0);
        let hg = &id * c(p.delta_g) + &num * c(p.chi_g + p.delta_a) + (&a + &ad) * eps;
        let hh = &id * c(p.delta_h) + &num * c(p.chi_h + p.delta_a) + (&a + &ad) * eps;
        let dg = displacement(nb, amps.alpha_g);
        let dh = displacement(nb, amps.alpha_h);
        let l0 = |x: &DMatrix<C64>| -> DMatrix<C64> {
            (&hh * x - x * &hg) * (-I) + (&a * x * &ad - (&num * x + x * &num) * c(0.5)) * c(p.kappa)
        };
        let coef = recurrence_coefficients(&p, &amps, 12, C00Form::Primary);
        for (n, m) in [(0usize, 0usize), (1, 0), (4, 0), (9, 0), (0, 1), (0, 5), (0, 9)] {
            let mut x = DMatrix::zeros(nb, nb);
            let mut probe = |nn: usize, mm: usize| {
                x.fill(C64::new(0.0, 0.0));
                x[(nn, mm)] = C64::new(1.0, 0.0);
                let lab = &dh * &x * dg.adjoint();
                let out = dh.adjoint() * l0(&lab) * &dg;
                out[(n, m)]
            };
            let c00 = probe(n, m);
            let c10 = probe(n + 1, m);
            let c01 = probe(n, m + 1);
            let c11v = probe(n + 1, m + 1);
            if m == 0 {
                assert!((c00 - coef.c00_n0[n]).norm() < 1e-9, "c00 n0 {n}: {c00} {}", coef.c00_n0[n]);
                assert!((c10 - coef.c10_n0[n]).norm() < 1e-9);
            }
            if n == 0 {
                assert!((c00 - coef.c00_0m[m]).norm() < 1e-9, "c00 0m {m}");
                assert!((c01 - coef.c01_0m[m]).norm() < 1e-9);
            }
            assert!((c11v.re - c11(p.kappa, n, m)).abs() < 1e-9 && c11v.im.abs() < 1e-9);
        }
    }

    #[test]
    fn alternative_c00_differs() {
        let p = params(10.0);
        let amps = conditional_amplitudes(&p);
        let a = recurrence_coefficients(&p, &amps, 4, C00Form::Primary);
        let b = recurrence_coefficients(&p, &amps, 4, C00Form::Alternative);
        assert!((a.c00_n0[0] - b.c00_n0[0]).norm() > 1e-3);
    }

    #[test]
    fn recurrence_trivial_cases() {
        let y: Vec<C64> = (0..6).map(|k| C64::new(k as f64 + 1.0, 0.5)).collect();
        let b: Vec<C64> = (0..6).map(|k| C64::new(2.0, k as f64)).collect();
        let d = vec![C64::new(0.0, 0.0); 6];
        let x = solve_recurrence(&y, &b, &d).unwrap();
        for k in 0..6 {
            assert!((x[k] - y[k] / b[k]).norm() < 1e-15);
        }
        let mut y = vec![C64::new(0.0, 0.0); 8];
        y[0] = C64::new(1.0, 0.0);
        let x = solve_recurrence(&y, &[C64::new(1.0, 0.0); 8], &[C64::new(0.5, 0.0); 8]).unwrap();
        assert_eq!(x[0], C64::new(1.0, 0.0));
        assert!(x[1..].iter().all(|v| v.norm() == 0.0));
        let err = solve_recurrence(&y, &[C64::new(1.0, 0.0); 8], &[C64::new(2.0, 0.0); 8]).unwrap_err();
        assert!(matches!(err, Error::DivergentSeries { .. }));
    }

    #[test]
    fn recurrence_matches_dense_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let b: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(1.0..2.0), rng.random_range(-1.0..1.0))).collect();
        let d: Vec<C64> = b
            .iter()
            .map(|bi| bi * C64::from_polar(rng.random_range(0.0..0.5), rng.random_range(0.0..6.28)))
            .collect();
        let y: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut m = DMatrix::<C64>::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = b[k];
            if k + 1 < n {
                m[(k, k + 1)] = d[k];
            }
        }
        let dense = m.lu().solve(&nalgebra::DVector::from_vec(y.clone())).unwrap();
        let x = solve_recurrence(&y, &b, &d).unwrap();
        for k in 0..n {
            assert!((x[k] - dense[k]).norm() < 1e-12);
        }
    }

    /// Second-order resolvent oracle: the rate out of `|h⟩ ⊗ |α_h⟩` from
    /// `−Tr_g L_V L_0⁻¹ L_V ρ_0` with dense linear algebra.
    fn resolvent_gamma_h(p: &ReducedParams, nf: usize) -> f64 {
        let amps = conditional_amplitudes(p);
        let a = destroy(nf);
        let ad = a.adjoint();
        let num = &ad * &a;
        let id = DMatrix::<C64>::identity(nf, nf);
        let eps = C64::new(p.epsilon_d, 0.0);
        let hg = &id * c(p.delta_g) + &num * c(p.chi_g + p.delta_a) + (&a + &ad) * eps;
        let hh = &id * c(p.delta_h) + &num * c(p.chi_h + p.delta_a) + (&a + &ad) * eps;
        let coh = displacement(nf, amps.alpha_h).column(0).into_owned();
        let rho_hh = &coh * coh.adjoint();
        // V = g_eff (a†)² |g⟩⟨h| + h.c.; (L_V ρ)_gh = −i V_gh ρ_hh
        let vgh = &ad * &ad * p.g_eff;
        let x_gh = (&vgh * &rho_hh) * (-I);
        // L_0 on the gh block: −i(H_g X − X H_h) + κ(a X a† − ½{n, X})
        let n2 = nf * nf;
        let mut sup = DMatrix::<C64>::zeros(n2, n2);
        let ac = a.map(|z| z.conj());
        sup += (id.kronecker(&hg) - hh.transpose().kronecker(&id)) * (-I);
        sup += (ac.kronecker(&a) - id.kronecker(&num) * c(0.5) - num.transpose().kronecker(&id) * c(0.5)) * c(p.kappa);
        let rhs = nalgebra::DVector::from_iterator(n2, x_gh.iter().cloned());
        let sol = sup.lu().solve(&rhs).unwrap();
        let r1_gh = DMatrix::from_column_slice(nf, nf, sol.as_slice()) * C64::new(-1.0, 0.0);
        // ρ1 = −L_0⁻¹ L_V ρ_0; dP_g/dt = Tr_g(L_V ρ1) = 2 Re(−i Tr(V_gh ρ1_hg))
        let r1_hg = r1_gh.adjoint();
        let v = (&vgh * &r1_hg).trace() * (-I);
        2.0 * v.re
    }

    #[test]
    fn rates_match_resolvent_oracle() {
        for eps in [3.0, 8.0] {
            let p = params(eps);
            let r = transition_rates(&p, None).unwrap();
            let oracle = resolvent_gamma_h(&p, 42);
            assert!((r.gamma_h - oracle).abs() < 1e-5 * oracle.abs(), "{eps}: {} {}", r.gamma_h, oracle);
        }
    }

    #[test]
    fn rates_scale_quadratically_and_are_deterministic() {
        let p = params(9.0);
        let r = transition_rates(&p, None).unwrap();
        assert_eq!(r, transition_rates(&p, None).unwrap());
        let q = p.with_g_eff(p.g_eff * 1.7);
        let s = transition_rates(&q, Some(r.n_trunc)).unwrap();
        assert!((s.gamma_g - 1.7f64.powi(2) * r.gamma_g).abs() < 1e-12 * s.gamma_g);
        assert!((s.gamma_h - 1.7f64.powi(2) * r.gamma_h).abs() < 1e-12 * s.gamma_h);
        assert_eq!(r.pg_ss + r.ph_ss, 1.0);
        assert!(matches!(transition_rates(&p.with_g_eff(C64::new(0.0, 0.0)), None), Err(Error::DegenerateRates)));
    }

    #[test]
    fn weak_drive_favours_ground_state() {
        let r = transition_rates(&params(2.0), None).unwrap();
        assert!(r.gamma_h > 10.0 * r.gamma_g);
        assert!(r.pg_ss > 0.95);
        assert!(r.bad_cavity_ok());
    }

    #[test]
    fn population_estimate_limits() {
        let r = transition_rates(&params(12.0), None).unwrap();
        assert_eq!(population_estimate(&r, 0.0, DressedLabel::G), (1.0, 0.0));
        assert_eq!(population_estimate(&r, 0.0, DressedLabel::H).1, 1.0);
        let (pg, ph) = population_estimate(&r, 1e9, DressedLabel::G);
        assert!((pg - r.pg_ss).abs() < 1e-15 && (ph - r.ph_ss).abs() < 1e-12);
        assert_eq!(fit_initial_state(7.0), DressedLabel::H);
        assert_eq!(fit_initial_state(7.5), DressedLabel::G);
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let t: Vec<f64> = (0..400).map(|k| k as f64 * 25.0).collect();
        let v: Vec<f64> = t.iter().map(|t| 0.31 + 0.55 * (-1.3e-3 * t).exp()).collect();
        let f = fit_relaxation(&t, &v, 100.0).unwrap();
        assert!((f.gamma - 1.3e-3).abs() < 1e-9 * 1.3e-3, "{}", f.gamma);
        assert!((f.p_ss - 0.31).abs() < 1e-9);
        assert!((f.c - 0.55).abs() < 1e-9);
        assert!(f.coverage > 3.0);
    }

    #[test]
    fn fit_flags_constant_series() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        assert!(matches!(fit_relaxation(&t, &[0.4; 50], 0.0), Err(Error::Fit(_))));
    }
}
