//! Fluxonium Hamiltonian, its diagonalization, and derived spectral data.
//!
//! The circuit Hamiltonian (energies in GHz·h)
//!
//! ```text
//! H_q = 4 E_C n² + ½ E_L φ² − E_J cos(φ − φ_ext)
//! ```
//!
//! is represented in the eigenbasis of its quadratic part, with
//! `φ = φ_zpf (b + b†)` and `n = i n_zpf (b† − b)`. The cosine is built from
//! the exact exponential of `−iφ` on the truncated space.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::units;
use crate::{Error, Result, C64};

/// Smallest harmonic-oscillator basis accepted by the builder.
pub const MIN_HO_TRUNCATION: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FluxoniumSpec {
    /// Charging energy, GHz·h.
    pub e_c: f64,
    /// Inductive energy, GHz·h.
    pub e_l: f64,
    /// Josephson energy, GHz·h.
    pub e_j: f64,
    /// External flux in radians, `2π Φ_ext/Φ_0`.
    pub phi_ext: f64,
    pub ho_truncation: usize,
}

impl FluxoniumSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("E_C", self.e_c),
            ("E_L", self.e_l),
            ("E_J", self.e_j),
            ("phi_ext", self.phi_ext),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if self.e_c <= 0.0 {
            return Err(Error::param("E_C", "must be positive"));
        }
        if self.e_l <= 0.0 {
            return Err(Error::param("E_L", "must be positive"));
        }
        if self.e_j < 0.0 {
            return Err(Error::param("E_J", "must be non-negative"));
        }
        if self.ho_truncation < MIN_HO_TRUNCATION {
            return Err(Error::Truncation(format!(
                "ho_truncation = {} is below {MIN_HO_TRUNCATION}",
                self.ho_truncation
            )));
        }
        Ok(())
    }

    pub fn phi_zpf(&self) -> f64 {
        (2.0 * self.e_c / self.e_l).powf(0.25)
    }

    pub fn n_zpf(&self) -> f64 {
        (self.e_l / (32.0 * self.e_c)).powf(0.25)
    }

    /// Flux and charge operators in the oscillator basis.
    pub fn ho_operators(&self) -> (DMatrix<f64>, DMatrix<C64>) {
        let n = self.ho_truncation;
        let (pz, nz) = (self.phi_zpf(), self.n_zpf());
        let mut phi = DMatrix::<f64>::zeros(n, n);
        let mut charge = DMatrix::<C64>::zeros(n, n);
        for k in 1..n {
            let s = (k as f64).sqrt();
            phi[(k - 1, k)] = pz * s;
            phi[(k, k - 1)] = pz * s;
            // n = i n_zpf (b† − b): <k|b†|k−1> = √k, <k−1|b|k> = √k
            charge[(k, k - 1)] = C64::new(0.0, nz * s);
            charge[(k - 1, k)] = C64::new(0.0, -nz * s);
        }
        (phi, charge)
    }
}

/// Diagonalized qubit: angular eigenfrequencies (rad/ns, `omega[0] = 0`) and
/// charge matrix elements in the eigenbasis.
#[derive(Debug, Clone)]
pub struct QubitSpectrum {
    pub omega: Vec<f64>,
    pub n_matrix: DMatrix<C64>,
    pub level_count: usize,
}

impl QubitSpectrum {
    /// Builds a spectrum from explicit data, e.g. a synthetic ladder.
    pub fn from_parts(omega: Vec<f64>, n_matrix: DMatrix<C64>) -> Result<Self> {
        let l = omega.len();
        if n_matrix.nrows() != l || n_matrix.ncols() != l {
            return Err(Error::dims((l, l), n_matrix.shape()));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("omega", "non-finite eigenfrequency"));
        }
        let scale = n_matrix.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        for i in 0..l {
            for j in 0..l {
                if (n_matrix[(i, j)] - n_matrix[(j, i)].conj()).norm() > 1e-10 * scale {
                    return Err(Error::param("n_matrix", "not Hermitian"));
                }
            }
        }
        Ok(Self {
            omega,
            n_matrix,
            level_count: l,
        })
    }

    /// First `levels` levels of this spectrum.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels > self.level_count {
            return Err(Error::Truncation(format!(
                "requested {levels} levels from a {}-level spectrum",
                self.level_count
            )));
        }
        Ok(Self {
            omega: self.omega[..levels].to_vec(),
            n_matrix: self.n_matrix.view((0, 0), (levels, levels)).into_owned(),
            level_count: levels,
        })
    }

    /// `ω_j − ω_i`.
    pub fn omega_ij(&self, i: usize, j: usize) -> f64 {
        self.omega[j] - self.omega[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersiveLimit {
    pub omega_q: f64,
    pub delta: f64,
    pub chi_two_level: f64,
}

/// Matrix of `H_q / h` in GHz on the oscillator basis.
pub fn build_fluxonium_hamiltonian(spec: &FluxoniumSpec) -> Result<DMatrix<C64>> {
    spec.validate()?;
    let n = spec.ho_truncation;
    let (phi, charge) = spec.ho_operators();

    let eig = SymmetricEigen::new(phi.clone());
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let phases = eig.eigenvalues.map(|w| C64::from_polar(1.0, -w));
    // M = exp(−iφ)
    let mut vd = v.clone();
    for (c, p) in phases.iter().enumerate() {
        for r in 0..n {
            vd[(r, c)] *= *p;
        }
    }
    let m = &vd * v.transpose();
    let shift = C64::from_polar(1.0, spec.phi_ext);
    // cos(φ − φ_ext) = (e^{iφ_ext} M + h.c.)/2
    let em = m * shift;
    let cos = (&em + em.adjoint()) * C64::new(0.5, 0.0);

    let n2 = &charge * &charge;
    let phi_c = phi.map(|x| C64::new(x, 0.0));
    let phi2 = &phi_c * &phi_c;
    let mut h = n2 * C64::new(4.0 * spec.e_c, 0.0) + phi2 * C64::new(0.5 * spec.e_l, 0.0)
        - cos * C64::new(spec.e_j, 0.0);
    // remove roundoff asymmetry
    let ha = h.adjoint();
    h = (&h + ha) * C64::new(0.5, 0.0);
    Ok(h)
}

/// Diagonalizes the qubit and returns the lowest `level_count` levels.
pub fn diagonalize(spec: &FluxoniumSpec, level_count: usize) -> Result<QubitSpectrum> {
    spec.validate()?;
    if level_count == 0 || level_count > spec.ho_truncation / 4 {
        return Err(Error::Truncation(format!(
            "level_count = {level_count} must be in 1..={} for ho_truncation = {}",
            spec.ho_truncation / 4,
            spec.ho_truncation
        )));
    }
    let h = build_fluxonium_hamiltonian(spec)?;
    let (_, charge) = spec.ho_operators();
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("qubit diagonalization did not converge".into()))?;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let order = &order[..level_count];

    let n = spec.ho_truncation;
    let mut u = DMatrix::<C64>::zeros(n, level_count);
    for (c, &k) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        fix_phase(col.as_mut_slice());
        u.set_column(c, &col);
    }
    let e0 = eig.eigenvalues[order[0]];
    let omega: Vec<f64> = order
        .iter()
        .map(|&k| units::ghz(eig.eigenvalues[k] - e0))
        .collect();
    if omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }

    let mut n_matrix = u.adjoint() * charge * &u;
    for i in 0..level_count {
        n_matrix[(i, i)] = C64::new(n_matrix[(i, i)].re, 0.0);
        for j in 0..i {
            let avg = (n_matrix[(i, j)] + n_matrix[(j, i)].conj()) * 0.5;
            n_matrix[(i, j)] = avg;
            n_matrix[(j, i)] = avg.conj();
        }
    }
    Ok(QubitSpectrum {
        omega,
        n_matrix,
        level_count,
    })
}

/// Rotates `v` so its largest-magnitude entry is real and positive.
pub(crate) fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        // tolerance keeps the pick stable under roundoff between near-equal entries
        if z.norm() > best_mag * (1.0 + 1e-9) {
            best = i;
            best_mag = z.norm();
        }
    }
    if best_mag > 0.0 {
        let p = v[best].conj() / best_mag;
        v.iter_mut().for_each(|z| *z *= p);
    }
}

/// `ω_q = ω_1 − ω_0`, `Δ = ω_q − ω_r`, `χ = g²/Δ`.
pub fn dispersive_limit(spectrum: &QubitSpectrum, g: f64, omega_r: f64) -> Result<DispersiveLimit> {
    if spectrum.level_count < 2 {
        return Err(Error::Truncation("dispersive limit needs two levels".into()));
    }
    let omega_q = spectrum.omega[1] - spectrum.omega[0];
    let delta = omega_q - omega_r;
    if delta == 0.0 {
        return Err(Error::param("omega_r", "zero qubit-resonator detuning"));
    }
    Ok(DispersiveLimit {
        omega_q,
        delta,
        chi_two_level: g * g / delta,
    })
}

/// Level `j` closest to the `k`-photon resonance `ω_j − ω_0 ≈ k ω_r`, and
/// the residual `ω_j − ω_0 − k ω_r`.
pub fn find_multiphoton_resonance(
    spectrum: &QubitSpectrum,
    omega_r: f64,
    k: usize,
) -> Result<(usize, f64)> {
    if k < 2 {
        return Err(Error::param("k", "photon order must be at least 2"));
    }
    if spectrum.level_count < k + 1 {
        return Err(Error::Truncation(format!(
            "{}-photon search needs at least {} levels",
            k,
            k + 1
        )));
    }
    let target = k as f64 * omega_r;
    let (j, res) = (0..spectrum.level_count)
        .map(|j| (j, spectrum.omega[j] - spectrum.omega[0] - target))
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("non-empty spectrum");
    Ok((j, res))
}
