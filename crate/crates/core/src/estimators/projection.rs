//! Euclidean projections onto the PSD cone and onto the set of density
//! matrices, both by eigenvalue thresholding.

use nalgebra::DVector;

use crate::error::Result;
use crate::spin::{ensure_hermitian, from_spectrum, hermitian_eigen, DensityMatrix, Operator};

const HERMITIAN_REL_TOL: f64 = 1e-10;

/// Frobenius-nearest positive semidefinite matrix: negative eigenvalues are
/// clipped to zero.
pub fn project_psd(h: &Operator) -> Result<Operator> {
    ensure_hermitian(h, HERMITIAN_REL_TOL)?;
    let (w, v) = hermitian_eigen(h);
    Ok(from_spectrum(&w.map(|x| x.max(0.0)), &v))
}

/// Frobenius-nearest element of `{rho >= 0, Tr rho = 1}`: the eigenvalues are
/// projected onto the probability simplex.
pub fn project_density(h: &Operator) -> Result<DensityMatrix> {
    ensure_hermitian(h, HERMITIAN_REL_TOL)?;
    let (w, v) = hermitian_eigen(h);
    let p = project_simplex(w.as_slice());
    Ok(DensityMatrix::from_trusted(from_spectrum(
        &DVector::from_vec(p),
        &v,
    )))
}

/// Euclidean projection of `v` onto `{p >= 0, sum p = 1}` by the sorted
/// threshold rule. The output sums to one up to a final renormalization.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|x| *x /= total);
    }
    p
}
