//! Negativity of bipartite density matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::operator_core::{DensityMatrix, LabeledOperator};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NegativityResult {
    /// `‖ρ^{T_A}‖_1`.
    pub trace_norm: f64,
    /// Sum of the magnitudes of the negative eigenvalues of `ρ^{T_A}`.
    pub negativity: f64,
    /// `log₂ ‖ρ^{T_A}‖_1`.
    pub log_negativity: f64,
}

/// Entanglement measure written to the `E_N` output column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnMeasure {
    #[default]
    LogNegativity,
    Negativity,
}

impl NegativityResult {
    pub fn value(&self, measure: EnMeasure) -> f64 {
        match measure {
            EnMeasure::LogNegativity => self.log_negativity,
            EnMeasure::Negativity => self.negativity,
        }
    }
}

/// Matrix of `ρ` with the indices of `subsystem` (0 or 1) transposed.
pub fn partial_transpose_matrix(m: &DMatrix<C64>, dims: &[usize], subsystem: usize) -> Result<DMatrix<C64>> {
    if dims.len() != 2 || subsystem > 1 {
        return Err(Error::dims("two subsystems", dims));
    }
    let (da, db) = (dims[0], dims[1]);
    if m.shape() != (da * db, da * db) {
        return Err(Error::dims((da * db, da * db), m.shape()));
    }
    let mut out = DMatrix::zeros(da * db, da * db);
    for i in 0..da {
        for j in 0..da {
            for k in 0..db {
                for l in 0..db {
                    let v = m[(i * db + k, j * db + l)];
                    let (r, c) = if subsystem == 0 {
                        (j * db + k, i * db + l)
                    } else {
                        (i * db + l, j * db + k)
                    };
                    out[(r, c)] = v;
                }
            }
        }
    }
    Ok(out)
}

pub fn partial_transpose(rho: &DensityMatrix, subsystem: usize) -> Result<LabeledOperator> {
    let m = partial_transpose_matrix(&rho.matrix, &rho.dims, subsystem)?;
    LabeledOperator::new(m, rho.dims.clone(), rho.basis)
}

/// Negativity from the spectrum of the partial transpose over the first
/// (qubit) subsystem.
pub fn negativity(rho: &DensityMatrix) -> Result<NegativityResult> {
    negativity_matrix(&rho.matrix, &rho.dims)
}

pub fn negativity_matrix(m: &DMatrix<C64>, dims: &[usize]) -> Result<NegativityResult> {
    let pt = partial_transpose_matrix(m, dims, 0)?;
    let herm = (&pt + pt.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let neg: f64 = eig.eigenvalues.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let total: f64 = eig.eigenvalues.iter().map(|v| v.abs()).sum();
    let trace: f64 = eig.eigenvalues.iter().sum();
    // normalise to unit trace so that the identity ‖ρ^T‖ = 1 + 2N is exact
    let (neg, total) = (neg / trace, total / trace);
    Ok(NegativityResult {
        trace_norm: total,
        negativity: neg,
        log_negativity: total.log2().max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::{BasisTag, StateVector};
    use nalgebra::DVector;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pure(v: Vec<C64>, dims: Vec<usize>) -> DensityMatrix {
        let mut s = StateVector::new(DVector::from_vec(v), dims, BasisTag::BareLab).unwrap();
        s.normalize();
        DensityMatrix::from_pure(&s)
    }

    #[test]
    fn bell_state() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let rho = pure(vec![c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(h, 0.0)], vec![2, 2]);
        let pt = partial_transpose(&rho, 0).unwrap();
        let eig = SymmetricEigen::new(pt.matrix.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min + 0.5).abs() < 1e-12);
        let n = negativity(&rho).unwrap();
        assert!((n.negativity - 0.5).abs() < 1e-12);
        assert!((n.log_negativity - 1.0).abs() < 1e-12);
        assert!((n.trace_norm - 1.0 - 2.0 * n.negativity).abs() < 1e-9);
    }

    #[test]
    fn product_state_is_unentangled() {
        let a = [c(0.6, 0.0), c(0.0, 0.8)];
        let b = [c(0.5, 0.1), c(-0.3, 0.2), c(0.1, 0.7)];
        let v: Vec<C64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        let rho = pure(v, vec![2, 3]);
        let n = negativity(&rho).unwrap();
        assert!(n.negativity < 1e-12 && n.log_negativity < 1e-12);
        let pt = partial_transpose(&rho, 0).unwrap();
        let mut e1: Vec<f64> = SymmetricEigen::new(pt.matrix).eigenvalues.iter().cloned().collect();
        let mut e0 = rho.eigenvalues();
        e1.sort_by(f64::total_cmp);
        e0.sort_by(f64::total_cmp);
        for (x, y) in e0.iter().zip(&e1) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_an_involution() {
        let m = DMatrix::from_fn(12, 12, |i, j| c((i * 7 + j) as f64 * 0.01, (i as f64 - j as f64) * 0.02));
        for s in 0..2 {
            let t = partial_transpose_matrix(&m, &[2, 6], s).unwrap();
            assert_eq!(partial_transpose_matrix(&t, &[2, 6], s).unwrap(), m);
        }
        assert!(partial_transpose_matrix(&m, &[12], 0).is_err());
    }

    #[test]
    fn measure_selection() {
        let r = NegativityResult {
            trace_norm: 2.0,
            negativity: 0.5,
            log_negativity: 1.0,
        };
        assert_eq!(r.value(EnMeasure::default()), 1.0);
        assert_eq!(r.value(EnMeasure::Negativity), 0.5);
    }
}
