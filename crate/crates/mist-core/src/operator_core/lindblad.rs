use nalgebra::DMatrix;

use super::{hermiticity_error, CsrMatrix, DensityMatrix, LabeledOperator};
use crate::{Error, Result, C64};

/// Right-hand side of a density-matrix equation `dρ/dt = G(t)[ρ]`.
pub trait DensityGenerator: Sync {
    fn dim(&self) -> usize;

    /// Upper bound on the spectral radius of the generator, used to pick
    /// RK4 substeps.
    fn rate_bound(&self) -> f64;

    /// Writes `G(t)[ρ]` into `out`; `scratch` is a `dim × dim` work buffer.
    fn apply(&self, t: f64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, scratch: &mut DMatrix<C64>);
}

/// Time-independent Lindblad generator
/// `−i[H, ρ] + Σ κ (L ρ L† − ½{L†L, ρ})`, evaluated with sparse products.
#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    dim: usize,
    h_nh: CsrMatrix,
    jumps: Vec<(f64, CsrMatrix)>,
    bound: f64,
}

impl LindbladGenerator {
    pub fn new(h: &DMatrix<C64>, collapse: &[(f64, &DMatrix<C64>)]) -> Result<Self> {
        let d = h.nrows();
        if !h.is_square() {
            return Err(Error::dims("square Hamiltonian", h.shape()));
        }
        let mut h_nh = h.clone();
        let mut diss_bound = 0.0;
        let mut jumps = Vec::with_capacity(collapse.len());
        for &(rate, l) in collapse {
            if l.shape() != (d, d) {
                return Err(Error::dims((d, d), l.shape()));
            }
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::param("collapse rate", "must be finite and non-negative"));
            }
            let ldl = l.adjoint() * l;
            h_nh -= &ldl * C64::new(0.0, 0.5 * rate);
            diss_bound += rate * CsrMatrix::from_dense(&ldl).row_sum_norm();
            jumps.push((rate, CsrMatrix::from_dense(l)));
        }
        let bound = spectral_spread(h) + diss_bound;
        Ok(Self {
            dim: d,
            h_nh: CsrMatrix::from_dense(&h_nh),
            jumps,
            bound,
        })
    }

    pub fn non_hermitian_hamiltonian(&self) -> &CsrMatrix {
        &self.h_nh
    }

    pub fn jumps(&self) -> &[(f64, CsrMatrix)] {
        &self.jumps
    }
}

/// Width of the Gershgorin interval enclosing the spectrum of Hermitian `h`.
/// `E_max − E_min` of a Hermitian matrix; falls back to the Gershgorin
/// estimate when the eigensolver does not converge.
pub(crate) fn spectral_spread(h: &DMatrix<C64>) -> f64 {
    let herm = (h + h.adjoint()) * C64::new(0.5, 0.0);
    match herm.try_symmetric_eigen(f64::EPSILON, 0) {
        Some(e) if e.eigenvalues.len() > 0 => e.eigenvalues.max() - e.eigenvalues.min(),
        _ => gershgorin_spread(h),
    }
}

pub(crate) fn gershgorin_spread(h: &DMatrix<C64>) -> f64 {
    let n = h.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let c = h[(i, i)].re;
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| h[(i, j)].norm()).sum();
        lo = lo.min(c - r);
        hi = hi.max(c + r);
    }
    if n == 0 {
        0.0
    } else {
        hi - lo
    }
}

impl DensityGenerator for LindbladGenerator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rate_bound(&self) -> f64 {
        self.bound
    }

    fn apply(&self, _t: f64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, x: &mut DMatrix<C64>) {
        let d = self.dim;
        self.h_nh.mul_dense(rho, x);
        // −i H_nh ρ + (−i H_nh ρ)†
        for j in 0..d {
            for i in 0..d {
                let a = x[(i, j)];
                let b = x[(j, i)];
                out[(i, j)] = C64::new(a.im + b.im, -a.re + b.re);
            }
        }
        for (rate, l) in &self.jumps {
            l.mul_dense(rho, x);
            l.add_right_adjoint(*rate, x, out);
        }
    }
}

/// Matrix-free Lindblad right-hand side for labeled operands.
pub fn lindblad_rhs(
    h: &LabeledOperator,
    collapse: &[(f64, LabeledOperator)],
    rho: &DensityMatrix,
) -> Result<DMatrix<C64>> {
    let probe = rho.as_operator();
    h.compatible(&probe)?;
    for (_, l) in collapse {
        h.compatible(l)?;
    }
    let refs: Vec<(f64, &DMatrix<C64>)> = collapse.iter().map(|(r, l)| (*r, &l.matrix)).collect();
    let gen = LindbladGenerator::new(&h.matrix, &refs)?;
    let mut out = DMatrix::zeros(rho.dim(), rho.dim());
    let mut scratch = out.clone();
    gen.apply(0.0, &rho.matrix, &mut out, &mut scratch);
    debug_assert!(hermiticity_error(&out) < 1e-10 || out.norm() < 1e-300);
    Ok(out)
}

/// Dense column-stacked superoperator, `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.
pub fn vectorized_liouvillian(h: &DMatrix<C64>, collapse: &[(f64, &DMatrix<C64>)]) -> DMatrix<C64> {
    let d = h.nrows();
    let id = DMatrix::<C64>::identity(d, d);
    let mi = C64::new(0.0, 1.0);
    let mut sup = (id.kronecker(h) - h.transpose().kronecker(&id)) * (-mi);
    for &(rate, l) in collapse {
        let ldl = l.adjoint() * l;
        let r = C64::new(rate, 0.0);
        sup += (l.conjugate().kronecker(l) - id.kronecker(&ldl) * C64::new(0.5, 0.0)
            - ldl.transpose().kronecker(&id) * C64::new(0.5, 0.0))
            * r;
    }
    sup
}
