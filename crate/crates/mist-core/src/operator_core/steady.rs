use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;

use super::{
    hermitian_part, CsrMatrix, DensityGenerator, DensityMatrix, LabeledOperator,
    LindbladGenerator,
};
use crate::{Error, Result, C64};

/// Largest Hilbert-space dimension accepted by [`steady_state`] by default.
pub const DEFAULT_STEADY_STATE_CAP: usize = 512;

/// Steady state of a Lindblad generator by sparse LU on the column-stacked
/// Liouvillian with the `(0,0)` row replaced by the trace condition.
///
/// Returns the density matrix and the residual `‖L(ρ)‖_F / ‖L‖_F`.
pub fn steady_state_matrix(
    h: &DMatrix<C64>,
    collapse: &[(f64, &DMatrix<C64>)],
) -> Result<(DMatrix<C64>, f64)> {
    let d = h.nrows();
    let gen = LindbladGenerator::new(h, collapse)?;
    let hn = gen.non_hermitian_hamiltonian();
    let hc = CsrMatrix {
        values: hn.values.iter().map(|v| v.conj()).collect(),
        ..hn.clone()
    };
    let n = d * d;
    let mi = C64::new(0.0, -1.0);
    let pi = C64::new(0.0, 1.0);
    let mut trip: Vec<Triplet<usize, usize, C64>> = Vec::with_capacity(2 * n * 8);
    let mut push = |r: usize, c: usize, v: C64| {
        if r != 0 && v != C64::new(0.0, 0.0) {
            trip.push(Triplet::new(r, c, v));
        }
    };
    // −i (I ⊗ H_nh)
    for j in 0..d {
        for r in 0..d {
            for (c, v) in hn.row(r) {
                push(j * d + r, j * d + c, mi * v);
            }
        }
    }
    // +i (conj(H_nh) ⊗ I)
    for p in 0..d {
        for (q, v) in hc.row(p) {
            for r in 0..d {
                push(p * d + r, q * d + r, pi * v);
            }
        }
    }
    // κ (conj(L) ⊗ L)
    for (rate, l) in gen.jumps() {
        for p in 0..d {
            for (q, lpq) in l.row(p) {
                let w = lpq.conj() * *rate;
                for r in 0..d {
                    for (c, lrc) in l.row(r) {
                        push(p * d + r, q * d + c, w * lrc);
                    }
                }
            }
        }
    }
    let sup_norm = trip.iter().map(|t| t.val.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    for j in 0..d {
        trip.push(Triplet::new(0, j * d + j, C64::new(1.0, 0.0)));
    }
    let mat = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::DegenerateSteadyState(format!("LU factorization failed: {e:?}")))?;
    let mut rhs = faer::Col::<C64>::zeros(n);
    rhs[0] = C64::new(1.0, 0.0);
    let x = lu.solve(&rhs);

    let mut rho = DMatrix::from_fn(d, d, |r, c| x[c * d + r]);
    if rho.iter().any(|z| !z.is_finite()) {
        return Err(Error::DegenerateSteadyState("non-finite solution".into()));
    }
    rho = hermitian_part(&rho);
    let tr = rho.trace().re;
    rho.unscale_mut(tr);
    let frob = rho.norm();
    if frob > 1.0 + 1e-6 {
        return Err(Error::DegenerateSteadyState(format!(
            "solution has Frobenius norm {frob:.3e} > 1; null space is not one-dimensional"
        )));
    }
    let mut out = DMatrix::zeros(d, d);
    let mut scratch = DMatrix::zeros(d, d);
    gen.apply(0.0, &rho, &mut out, &mut scratch);
    let residual = out.norm() / sup_norm;
    if residual > 1e-10 {
        return Err(Error::Numerical(format!(
            "steady-state residual {residual:.3e} exceeds 1e-10"
        )));
    }
    Ok((rho, residual))
}

/// Steady state for labeled operands; rejects dimensions above `cap`.
pub fn steady_state(
    h: &LabeledOperator,
    collapse: &[(f64, LabeledOperator)],
    cap: usize,
) -> Result<DensityMatrix> {
    if h.dim() > cap {
        return Err(Error::Truncation(format!(
            "steady state requested for dimension {} above cap {cap}",
            h.dim()
        )));
    }
    for (_, l) in collapse {
        h.compatible(l)?;
    }
    let refs: Vec<(f64, &DMatrix<C64>)> = collapse.iter().map(|(r, l)| (*r, &l.matrix)).collect();
    let (rho, _) = steady_state_matrix(&h.matrix, &refs)?;
    let dm = DensityMatrix::new(rho, h.dims.clone(), h.basis)?;
    if dm.dim() <= 256 {
        let m = dm.min_eigenvalue();
        if m < -1e-7 {
            return Err(Error::Numerical(format!(
                "steady state has negative eigenvalue {m:.3e}"
            )));
        }
    }
    Ok(dm)
}
