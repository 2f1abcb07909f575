//! Finite-dimensional operator algebra shared by every model.
//!
//! Operators and states carry their subsystem dimensions and a
//! [`BasisTag`]; algebra between objects with different tags is rejected.

mod evolve;
mod lindblad;
pub mod sparse;
mod steady;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

pub use evolve::{
    evolve_density_matrix, evolve_with, DensityTimeSeries, EvolutionRecord, StepperConfig,
};
pub use lindblad::{
    lindblad_rhs, vectorized_liouvillian, DensityGenerator, LindbladGenerator,
};
pub use sparse::CsrMatrix;
pub(crate) use evolve::axpy;
pub(crate) use lindblad::gershgorin_spread;
pub use steady::{steady_state, steady_state_matrix, DEFAULT_STEADY_STATE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisTag {
    BareLab,
    DressedRotating,
    ReducedRotating,
}

fn check_dims(n: usize, dims: &[usize]) -> Result<()> {
    let prod: usize = dims.iter().product();
    if dims.is_empty() || prod != n {
        return Err(Error::dims(n, dims));
    }
    Ok(())
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relative deviation from Hermiticity, `max|A − A†| / max|A|`.
pub fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    pub matrix: DMatrix<C64>,
    pub dims: Vec<usize>,
    pub basis: BasisTag,
}

impl LabeledOperator {
    pub fn new(matrix: DMatrix<C64>, dims: Vec<usize>, basis: BasisTag) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::dims("square matrix", matrix.shape()));
        }
        check_dims(matrix.nrows(), &dims)?;
        Ok(Self {
            matrix,
            dims,
            basis,
        })
    }

    pub fn identity(dims: &[usize], basis: BasisTag) -> Self {
        let n = dims.iter().product();
        Self {
            matrix: DMatrix::identity(n, n),
            dims: dims.to_vec(),
            basis,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn compatible(&self, other: &Self) -> Result<()> {
        if self.basis != other.basis {
            return Err(Error::BasisMismatch {
                left: self.basis,
                right: other.basis,
            });
        }
        if self.dims != other.dims {
            return Err(Error::dims(&self.dims, &other.dims));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        Ok(Self {
            matrix: &self.matrix + &other.matrix,
            ..self.clone()
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        Ok(Self {
            matrix: &self.matrix - &other.matrix,
            ..self.clone()
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        Ok(Self {
            matrix: &self.matrix * &other.matrix,
            ..self.clone()
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            matrix: &self.matrix * s,
            ..self.clone()
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            ..self.clone()
        }
    }

    /// Tensor product; subsystem dimensions are concatenated.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        if self.basis != other.basis {
            return Err(Error::BasisMismatch {
                left: self.basis,
                right: other.basis,
            });
        }
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Ok(Self {
            matrix: self.matrix.kronecker(&other.matrix),
            dims,
            basis: self.basis,
        })
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        hermiticity_error(&self.matrix) <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: DVector<C64>,
    pub dims: Vec<usize>,
    pub basis: BasisTag,
}

impl StateVector {
    pub fn new(amplitudes: DVector<C64>, dims: Vec<usize>, basis: BasisTag) -> Result<Self> {
        check_dims(amplitudes.len(), &dims)?;
        Ok(Self {
            amplitudes,
            dims,
            basis,
        })
    }

    /// Product basis state with one index per subsystem.
    pub fn basis_state(dims: &[usize], index: &[usize], basis: BasisTag) -> Result<Self> {
        if index.len() != dims.len() || index.iter().zip(dims).any(|(i, d)| i >= d) {
            return Err(Error::dims(dims, index));
        }
        let n: usize = dims.iter().product();
        let flat = index.iter().zip(dims).fold(0, |acc, (i, d)| acc * d + i);
        let mut v = DVector::zeros(n);
        v[flat] = C64::new(1.0, 0.0);
        Ok(Self {
            amplitudes: v,
            dims: dims.to_vec(),
            basis,
        })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.unscale_mut(n);
        }
        n
    }

    pub fn expectation(&self, obs: &LabeledOperator) -> Result<C64> {
        if self.basis != obs.basis {
            return Err(Error::BasisMismatch {
                left: self.basis,
                right: obs.basis,
            });
        }
        if self.dims != obs.dims {
            return Err(Error::dims(&obs.dims, &self.dims));
        }
        Ok(self.amplitudes.dotc(&(&obs.matrix * &self.amplitudes)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub matrix: DMatrix<C64>,
    pub dims: Vec<usize>,
    pub basis: BasisTag,
    pub trace: f64,
}

impl DensityMatrix {
    /// Checks shape and Hermiticity (1e-9) and caches the trace.
    pub fn new(matrix: DMatrix<C64>, dims: Vec<usize>, basis: BasisTag) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::dims("square matrix", matrix.shape()));
        }
        check_dims(matrix.nrows(), &dims)?;
        if hermiticity_error(&matrix) > 1e-9 {
            return Err(Error::Numerical("density matrix is not Hermitian".into()));
        }
        let trace = matrix.trace().re;
        Ok(Self {
            matrix,
            dims,
            basis,
            trace,
        })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let m = &psi.amplitudes * psi.amplitudes.adjoint();
        let trace = m.trace().re;
        Self {
            matrix: m,
            dims: psi.dims.clone(),
            basis: psi.basis,
            trace,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn as_operator(&self) -> LabeledOperator {
        LabeledOperator {
            matrix: self.matrix.clone(),
            dims: self.dims.clone(),
            basis: self.basis,
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(hermitian_part(&self.matrix))
            .eigenvalues
            .iter()
            .copied()
            .collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }
}

pub(crate) fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `Tr(ρ O)`.
pub fn expectation(rho: &DensityMatrix, obs: &LabeledOperator) -> Result<C64> {
    if rho.basis != obs.basis {
        return Err(Error::BasisMismatch {
            left: rho.basis,
            right: obs.basis,
        });
    }
    if rho.dims != obs.dims {
        return Err(Error::dims(&obs.dims, &rho.dims));
    }
    Ok(trace_product(&rho.matrix, &obs.matrix))
}

/// `Tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Reduced state of subsystem `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    if keep >= rho.dims.len() {
        return Err(Error::dims(format!("subsystem < {}", rho.dims.len()), keep));
    }
    let dk = rho.dims[keep];
    let inner: usize = rho.dims[keep + 1..].iter().product();
    let outer: usize = rho.dims[..keep].iter().product();
    let mut out = DMatrix::<C64>::zeros(dk, dk);
    for o in 0..outer {
        for i in 0..dk {
            for j in 0..dk {
                let mut acc = C64::new(0.0, 0.0);
                for r in 0..inner {
                    let a = (o * dk + i) * inner + r;
                    let b = (o * dk + j) * inner + r;
                    acc += rho.matrix[(a, b)];
                }
                out[(i, j)] += acc;
            }
        }
    }
    let trace = out.trace().re;
    Ok(DensityMatrix {
        matrix: out,
        dims: vec![dk],
        basis: rho.basis,
        trace,
    })
}

/// Photon annihilation operator on `n` Fock states.
pub fn destroy(n: usize) -> DMatrix<C64> {
    let mut a = DMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn number(n: usize) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_fn(n, |k, _| C64::new(k as f64, 0.0)))
}

pub fn projector(n: usize, k: usize) -> DMatrix<C64> {
    let mut p = DMatrix::zeros(n, n);
    p[(k, k)] = C64::new(1.0, 0.0);
    p
}

/// Matrix exponential of an anti-Hermitian or Hermitian-times-i matrix via
/// eigendecomposition of the Hermitian generator: returns `exp(-i H)`.
pub fn unitary_from_hermitian(h: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(hermitian_part(h));
    let v = eig.eigenvectors;
    let mut vd = v.clone();
    for (c, w) in eig.eigenvalues.iter().enumerate() {
        let p = C64::from_polar(1.0, -w);
        vd.column_mut(c).iter_mut().for_each(|z| *z *= p);
    }
    vd * v.adjoint()
}
