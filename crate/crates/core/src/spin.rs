//! Angular-momentum algebra and state-space primitives for the cesium ground
//! manifold.
//!
//! The Hilbert space is a direct sum of spin blocks. For the 6S1/2 ground
//! state the blocks are f = 3 (7 levels) followed by f = 4 (9 levels), each
//! ordered by ascending m, for a total dimension of 16. Every matrix in the
//! crate uses that ordering.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Dense complex square matrix. Used for Hamiltonians, unitaries and
/// observables alike.
pub type Operator = DMatrix<Complex64>;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A spin quantum number, stored as `2f` so half-integers are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    pub fn new(f: f64) -> Result<Self> {
        let twice = 2.0 * f;
        if !f.is_finite() || f < 0.0 || (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "spin must be a non-negative multiple of 1/2, got {f}"
            )));
        }
        Ok(Spin {
            twice: twice.round() as u32,
        })
    }

    pub const fn from_twice(twice: u32) -> Self {
        Spin { twice }
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    pub fn twice(self) -> u32 {
        self.twice
    }

    /// Number of magnetic sublevels, 2f + 1.
    pub fn multiplicity(self) -> usize {
        self.twice as usize + 1
    }

    /// Magnetic quantum numbers in ascending order.
    pub fn m_values(self) -> impl Iterator<Item = f64> {
        let f = self.value();
        (0..self.multiplicity()).map(move |k| k as f64 - f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinBlock {
    pub spin: Spin,
    pub offset: usize,
}

/// Direct sum of spin blocks with a fixed basis order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    dim: usize,
    blocks: Vec<SpinBlock>,
}

impl HilbertSpace {
    /// Blocks are laid out in the order given; no two may share a spin value.
    pub fn new(spins: &[Spin]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(spins.len());
        let mut offset = 0;
        for (i, &spin) in spins.iter().enumerate() {
            if spins[..i].contains(&spin) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate block f = {}",
                    spin.value()
                )));
            }
            blocks.push(SpinBlock { spin, offset });
            offset += spin.multiplicity();
        }
        if offset == 0 {
            return Err(Error::InvalidArgument("empty Hilbert space".into()));
        }
        Ok(HilbertSpace {
            dim: offset,
            blocks,
        })
    }

    /// The 16-level cesium ground manifold, f = 3 block first.
    pub fn cesium_ground() -> Self {
        Self::new(&[Spin::from_twice(6), Spin::from_twice(8)]).expect("static layout")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[SpinBlock] {
        &self.blocks
    }

    pub fn block(&self, spin: Spin) -> Result<SpinBlock> {
        self.blocks
            .iter()
            .copied()
            .find(|b| b.spin == spin)
            .ok_or(Error::UnknownBlock(spin.twice))
    }

    /// Basis index of |f, m>.
    pub fn index_of(&self, spin: Spin, m: f64) -> Result<usize> {
        let block = self.block(spin)?;
        let k = m + spin.value();
        if k < -1e-12 || k > spin.twice as f64 + 1e-12 || (k - k.round()).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "m = {m} is not a sublevel of f = {}",
                spin.value()
            )));
        }
        Ok(block.offset + k.round() as usize)
    }

    /// Labels "|f,m>" in basis order.
    pub fn labels(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| {
                let f = b.spin.value();
                b.spin.m_values().map(move |m| format!("|{f},{m}>"))
            })
            .collect()
    }

    /// Human-readable description of the basis order, stored in serialized
    /// state files.
    pub fn order_note(&self) -> String {
        self.blocks
            .iter()
            .map(|b| {
                let f = b.spin.value();
                format!("|{f},{}>...|{f},{}>", -f, f)
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Cartesian components of the angular momentum for one spin.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub fx: Operator,
    pub fy: Operator,
    pub fz: Operator,
}

/// `f_x`, `f_y`, `f_z` in the m-ascending basis, built from the ladder
/// operators.
pub fn angular_momentum_ops(f: f64) -> Result<SpinOperators> {
    Ok(spin_operators(Spin::new(f)?))
}

pub fn spin_operators(spin: Spin) -> SpinOperators {
    let n = spin.multiplicity();
    let f = spin.value();
    let ms: Vec<f64> = spin.m_values().collect();

    // f_+ |m> = sqrt(f(f+1) - m(m+1)) |m+1>
    let mut raise = Operator::zeros(n, n);
    for k in 0..n.saturating_sub(1) {
        let m = ms[k];
        raise[(k + 1, k)] = Complex64::new((f * (f + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let lower = raise.adjoint();

    let fx = (&raise + &lower).scale(0.5);
    let fy = (&raise - &lower) * Complex64::new(0.0, -0.5);
    let fz = Operator::from_diagonal(&DVector::from_iterator(
        n,
        ms.iter().map(|&m| Complex64::new(m, 0.0)),
    ));
    SpinOperators { fx, fy, fz }
}

/// Place a block operator on its diagonal sub-square of the full space.
pub fn embed_block(op: &Operator, space: &HilbertSpace, spin: Spin) -> Result<Operator> {
    let block = space.block(spin)?;
    let n = spin.multiplicity();
    if op.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: op.nrows(),
        });
    }
    let mut out = Operator::zeros(space.dim(), space.dim());
    out.view_mut((block.offset, block.offset), (n, n))
        .copy_from(op);
    Ok(out)
}

/// The measured observable: f_z of the f = 3 manifold, zero on f = 4.
pub fn probe_observable(space: &HilbertSpace) -> Result<Operator> {
    let spin = Spin::from_twice(6);
    embed_block(&spin_operators(spin).fz, space, spin)
}

pub fn max_abs(op: &Operator) -> f64 {
    op.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// max |H - H^dagger|.
pub fn hermiticity_defect(op: &Operator) -> f64 {
    let n = op.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for k in j..n {
            worst = worst.max((op[(j, k)] - op[(k, j)].conj()).norm());
        }
    }
    worst
}

/// Fails with `NotHermitian` when the defect exceeds `rel_tol * max|H|`
/// (or `rel_tol` for the zero matrix).
pub fn ensure_hermitian(op: &Operator, rel_tol: f64) -> Result<()> {
    if op.nrows() != op.ncols() {
        return Err(Error::DimensionMismatch {
            expected: op.nrows(),
            found: op.ncols(),
        });
    }
    let defect = hermiticity_defect(op);
    if defect > rel_tol * max_abs(op).max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// (H + H^dagger)/2.
pub fn hermitian_part(op: &Operator) -> Operator {
    (op + op.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues are returned as
/// reals, unsorted.
pub fn hermitian_eigen(op: &Operator) -> (DVector<f64>, Operator) {
    let eig = SymmetricEigen::new(hermitian_part(op));
    (eig.eigenvalues, eig.eigenvectors)
}

/// V diag(w) V^dagger.
pub fn from_spectrum(values: &DVector<f64>, vectors: &Operator) -> Operator {
    let mut scaled = vectors.clone();
    for (k, &w) in values.iter().enumerate() {
        let mut col = scaled.column_mut(k);
        col *= Complex64::new(w, 0.0);
    }
    let out = scaled * vectors.adjoint();
    hermitian_part(&out)
}

pub fn trace(op: &Operator) -> Complex64 {
    op.diagonal().iter().sum()
}

/// Orthonormal Hermitian operator basis of generalized Gell-Mann type.
///
/// Element order: `E_0 = I/sqrt(d)`, then the d-1 traceless diagonals, then
/// the symmetric off-diagonals `(|j><k| + |k><j|)/sqrt(2)`, then the
/// antisymmetric ones `i(|j><k| - |k><j|)/sqrt(2)`, each with `j < k` in
/// lexicographic order.
///
/// Expansion and reconstruction use the closed-form entry maps, which are
/// O(d^2); the dense element list is built on demand for cross-checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HermitianBasis {
    dim: usize,
    pairs: Vec<(usize, usize)>,
}

impl HermitianBasis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "basis dimension must be at least 2, got {dim}"
            )));
        }
        let pairs = (0..dim)
            .flat_map(|j| (j + 1..dim).map(move |k| (j, k)))
            .collect();
        Ok(HermitianBasis { dim, pairs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis elements, d^2.
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Dense matrix of element `alpha`.
    pub fn element(&self, alpha: usize) -> Operator {
        let d = self.dim;
        let p = self.n_pairs();
        let mut e = Operator::zeros(d, d);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        if alpha == 0 {
            let v = 1.0 / (d as f64).sqrt();
            e.fill_diagonal(Complex64::new(v, 0.0));
        } else if alpha < d {
            let l = alpha;
            let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
            for j in 0..l {
                e[(j, j)] = Complex64::new(norm, 0.0);
            }
            e[(l, l)] = Complex64::new(-(l as f64) * norm, 0.0);
        } else if alpha < d + p {
            let (j, k) = self.pairs[alpha - d];
            e[(j, k)] = Complex64::new(s, 0.0);
            e[(k, j)] = Complex64::new(s, 0.0);
        } else {
            let (j, k) = self.pairs[alpha - d - p];
            e[(j, k)] = Complex64::new(0.0, s);
            e[(k, j)] = Complex64::new(0.0, -s);
        }
        e
    }

    pub fn elements(&self) -> Vec<Operator> {
        (0..self.len()).map(|a| self.element(a)).collect()
    }

    /// Coefficients `r_alpha = Re Tr(op E_alpha)`. For Hermitian `op` these
    /// are the exact expansion coefficients.
    pub fn expand(&self, op: &Operator) -> Result<DVector<f64>> {
        self.check_dim(op)?;
        let mut r = DVector::zeros(self.len());
        self.expand_into(op, r.as_mut_slice());
        Ok(r)
    }

    pub(crate) fn expand_into(&self, op: &Operator, r: &mut [f64]) {
        let d = self.dim;
        let p = self.n_pairs();
        let sqrt2 = std::f64::consts::SQRT_2;

        let diag: Vec<f64> = (0..d).map(|j| op[(j, j)].re).collect();
        r[0] = diag.iter().sum::<f64>() / (d as f64).sqrt();
        let mut prefix = 0.0;
        for l in 1..d {
            prefix += diag[l - 1];
            r[l] = (prefix - l as f64 * diag[l]) / ((l * (l + 1)) as f64).sqrt();
        }
        for (q, &(j, k)) in self.pairs.iter().enumerate() {
            // Re/Im of the Hermitian part, so a slightly non-Hermitian input
            // still maps to its nearest Hermitian coefficients.
            let upper = op[(j, k)];
            let lower = op[(k, j)];
            r[d + q] = (upper.re + lower.re) / sqrt2;
            r[d + p + q] = (upper.im - lower.im) / sqrt2;
        }
    }

    /// `sum_alpha r_alpha E_alpha`.
    pub fn reconstruct(&self, r: &DVector<f64>) -> Result<Operator> {
        if r.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: r.len(),
            });
        }
        Ok(self.reconstruct_from(r.as_slice()))
    }

    pub(crate) fn reconstruct_from(&self, r: &[f64]) -> Operator {
        let d = self.dim;
        let p = self.n_pairs();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut out = Operator::zeros(d, d);

        let base = r[0] / (d as f64).sqrt();
        let mut diag = vec![base; d];
        // Element l contributes c/sqrt(l(l+1)) to j < l and -l c/sqrt(l(l+1))
        // to j = l; accumulate from the top down.
        let mut tail = 0.0;
        for l in (1..d).rev() {
            let c = r[l] / ((l * (l + 1)) as f64).sqrt();
            diag[l] += tail - l as f64 * c;
            tail += c;
        }
        diag[0] += tail;
        for j in 0..d {
            out[(j, j)] = Complex64::new(diag[j], 0.0);
        }
        for (q, &(j, k)) in self.pairs.iter().enumerate() {
            let z = Complex64::new(r[d + q] * s, r[d + p + q] * s);
            out[(j, k)] = z;
            out[(k, j)] = z.conj();
        }
        out
    }

    fn check_dim(&self, op: &Operator) -> Result<()> {
        if op.nrows() != self.dim || op.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: op.nrows(),
            });
        }
        Ok(())
    }
}

/// Normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: DVector<Complex64>,
}

impl PureState {
    /// Normalizes the given amplitudes; fails on the zero vector.
    pub fn new(amplitudes: DVector<Complex64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument(
                "state vector must have finite nonzero norm".into(),
            ));
        }
        Ok(PureState {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    /// Basis vector |index>.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut v = DVector::zeros(dim);
        v[index] = ONE;
        Ok(PureState { amplitudes: v })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    /// |psi><psi|.
    pub fn density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix {
            entries: hermitian_part(&m),
        }
    }

    pub fn expectation(&self, op: &Operator) -> Result<Complex64> {
        if op.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: op.nrows(),
            });
        }
        Ok(self.amplitudes.dotc(&(op * &self.amplitudes)))
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: Operator,
}

impl DensityMatrix {
    pub const HERMITIAN_TOL: f64 = 1e-12;
    pub const EIGEN_FLOOR: f64 = -1e-10;
    pub const TRACE_TOL: f64 = 1e-10;

    /// Validates physicality; the stored matrix is the exact Hermitian part
    /// of the input.
    pub fn new(entries: Operator) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        let defect = hermiticity_defect(&entries);
        if defect > Self::HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let entries = hermitian_part(&entries);
        let tr = trace(&entries).re;
        if (tr - 1.0).abs() > Self::TRACE_TOL {
            return Err(Error::InvalidArgument(format!(
                "density matrix trace is {tr}, expected 1"
            )));
        }
        let (w, _) = hermitian_eigen(&entries);
        let lowest = w.iter().copied().fold(f64::INFINITY, f64::min);
        if lowest < Self::EIGEN_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "density matrix has negative eigenvalue {lowest:e}"
            )));
        }
        Ok(DensityMatrix { entries })
    }

    /// For matrices produced by a projection that is physical by
    /// construction.
    pub(crate) fn from_trusted(entries: Operator) -> Self {
        DensityMatrix {
            entries: hermitian_part(&entries),
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut entries = Operator::zeros(dim, dim);
        entries.fill_diagonal(Complex64::new(1.0 / dim as f64, 0.0));
        DensityMatrix { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &Operator {
        &self.entries
    }

    pub fn into_matrix(self) -> Operator {
        self.entries
    }

    pub fn purity(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Eigenvalues in descending order.
    pub fn spectrum(&self) -> Vec<f64> {
        let (w, _) = hermitian_eigen(&self.entries);
        let mut w: Vec<f64> = w.iter().copied().collect();
        w.sort_by(|a, b| b.total_cmp(a));
        w
    }
}

/// Haar-random pure state: the first column of a Haar unitary obtained from
/// the QR decomposition of a complex Ginibre matrix with R's diagonal phases
/// moved into Q.
pub fn haar_random_pure_state(dim: usize, seed: u64) -> Result<PureState> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = rng::seeded(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let ginibre = Operator::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re * scale, im * scale)
    });
    let qr = ginibre.qr();
    let q = qr.q();
    let r = qr.r();
    let r00 = r[(0, 0)];
    let phase = if r00.norm() > 0.0 {
        r00 / r00.norm()
    } else {
        ONE
    };
    let column = q.column(0).map(|z| z * phase);
    PureState::new(column)
}

/// Pure-state fidelity `<psi|rho|psi>`, clamped to [0, 1] when the round-off
/// excursion is within 1e-10.
pub fn fidelity(psi: &PureState, rho: &DensityMatrix) -> Result<f64> {
    let value = psi.expectation(rho.matrix())?.re;
    clamp_unit(value)
}

pub(crate) fn clamp_unit(value: f64) -> Result<f64> {
    const WINDOW: f64 = 1e-10;
    if !(-WINDOW..=1.0 + WINDOW).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "fidelity {value} outside [0, 1]; input is not physical"
        )));
    }
    Ok(value.clamp(0.0, 1.0))
}

pub(crate) fn identity(dim: usize) -> Operator {
    Operator::identity(dim, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const ZERO: Complex64 = Complex64::new(0.0, 0.0);

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn commutator(a: &Operator, b: &Operator) -> Operator {
        a * b - b * a
    }

    fn random_hermitian(dim: usize, seed: u64) -> Operator {
        let mut rng = rng::seeded(seed);
        let m = Operator::from_fn(dim, dim, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        });
        hermitian_part(&m)
    }

    #[test]
    fn spin_half_fz() {
        let ops = angular_momentum_ops(0.5).unwrap();
        assert_eq!(ops.fz[(0, 0)], c(-0.5));
        assert_eq!(ops.fz[(1, 1)], c(0.5));
        assert_eq!(ops.fz[(0, 1)], ZERO);
        // sigma_x / 2
        assert_abs_diff_eq!(ops.fx[(0, 1)].re, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn casimir_f3() {
        let ops = angular_momentum_ops(3.0).unwrap();
        let casimir = &ops.fx * &ops.fx + &ops.fy * &ops.fy + &ops.fz * &ops.fz;
        let expected = identity(7).scale(12.0);
        assert!(max_abs(&(casimir - expected)) < 1e-12);
    }

    #[test]
    fn commutation_relations() {
        for f in [0.5, 1.0, 1.5, 3.0, 4.0] {
            let o = angular_momentum_ops(f).unwrap();
            let i = Complex64::new(0.0, 1.0);
            assert!(max_abs(&(commutator(&o.fx, &o.fy) - &o.fz * i)) < 1e-13);
            assert!(max_abs(&(commutator(&o.fy, &o.fz) - &o.fx * i)) < 1e-13);
            assert!(max_abs(&(commutator(&o.fz, &o.fx) - &o.fy * i)) < 1e-13);
        }
    }

    #[test]
    fn invalid_spin_rejected() {
        assert!(matches!(
            angular_momentum_ops(-1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            angular_momentum_ops(0.3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn cesium_layout() {
        let space = HilbertSpace::cesium_ground();
        assert_eq!(space.dim(), 16);
        let labels = space.labels();
        assert_eq!(labels[0], "|3,-3>");
        assert_eq!(labels[6], "|3,3>");
        assert_eq!(labels[7], "|4,-4>");
        assert_eq!(labels[15], "|4,4>");
        assert_eq!(space.index_of(Spin::from_twice(6), 3.0).unwrap(), 6);
        assert_eq!(space.index_of(Spin::from_twice(8), 4.0).unwrap(), 15);
        assert!(space.index_of(Spin::from_twice(8), 5.0).is_err());
    }

    #[test]
    fn embedding() {
        let space = HilbertSpace::cesium_ground();
        let f3 = Spin::from_twice(6);
        let id = embed_block(&identity(7), &space, f3).unwrap();
        for j in 0..16 {
            assert_eq!(id[(j, j)], if j < 7 { ONE } else { ZERO });
        }
        let fz = spin_operators(f3).fz;
        let embedded = embed_block(&fz, &space, f3).unwrap();
        assert_eq!(trace(&embedded), trace(&fz));
        let mut spectrum: Vec<f64> = hermitian_eigen(&embedded).0.iter().copied().collect();
        spectrum.sort_by(f64::total_cmp);
        let mut expected: Vec<f64> = (-3..=3).map(f64::from).chain([0.0; 9]).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in spectrum.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        assert!(matches!(
            embed_block(&fz, &space, Spin::from_twice(2)),
            Err(Error::UnknownBlock(2))
        ));
        assert!(matches!(
            embed_block(&identity(9), &space, f3),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn probe_observable_values() {
        let space = HilbertSpace::cesium_ground();
        let o = probe_observable(&space).unwrap();
        assert_eq!(trace(&o), ZERO);
        assert_eq!(o[(6, 6)], c(3.0));
        assert_eq!(o[(15, 15)], ZERO);
        assert_eq!(hermiticity_defect(&o), 0.0);
    }

    #[test]
    fn qubit_basis_is_scaled_paulis() {
        let basis = HermitianBasis::new(2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e = basis.elements();
        assert_eq!(e.len(), 4);
        // I/sqrt2, sigma_z-like diagonal, sigma_x, sigma_y
        assert_abs_diff_eq!(e[0][(0, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1][(0, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1][(1, 1)].re, -s, epsilon = 1e-15);
        assert_abs_diff_eq!(e[2][(0, 1)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(e[3][(0, 1)].im, s, epsilon = 1e-15);
        assert_abs_diff_eq!(e[3][(1, 0)].im, -s, epsilon = 1e-15);
    }

    #[test]
    fn basis_gram_is_identity() {
        for d in [2usize, 3, 5, 16] {
            let basis = HermitianBasis::new(d).unwrap();
            let elems = basis.elements();
            assert_eq!(elems.len(), d * d);
            for (a, ea) in elems.iter().enumerate() {
                assert!(hermiticity_defect(ea) == 0.0);
                if a > 0 {
                    assert!(trace(ea).norm() < 1e-12);
                }
                for (b, eb) in elems.iter().enumerate().skip(a) {
                    let g = trace(&(ea * eb));
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((g - c(want)).norm() < 1e-12, "d={d} a={a} b={b}");
                }
            }
        }
        assert!(HermitianBasis::new(1).is_err());
    }

    #[test]
    fn fast_expand_matches_traces() {
        let basis = HermitianBasis::new(5).unwrap();
        let h = random_hermitian(5, 11);
        let fast = basis.expand(&h).unwrap();
        for (a, e) in basis.elements().iter().enumerate() {
            let slow = trace(&(&h * e)).re;
            assert_abs_diff_eq!(fast[a], slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn expand_reconstruct_round_trip() {
        let basis = HermitianBasis::new(16).unwrap();
        let h = random_hermitian(16, 3);
        let back = basis.reconstruct(&basis.expand(&h).unwrap()).unwrap();
        assert!(max_abs(&(back - &h)) < 1e-12);

        let mixed = DensityMatrix::maximally_mixed(16);
        let r = basis.expand(mixed.matrix()).unwrap();
        assert_abs_diff_eq!(r[0], 0.25, epsilon = 1e-15);
        assert!(r.iter().skip(1).all(|x| x.abs() < 1e-15));

        let tr = trace(&h).re;
        assert_abs_diff_eq!(basis.expand(&h).unwrap()[0] * 4.0, tr, epsilon = 1e-12);

        assert!(basis.expand(&identity(3)).is_err());
        assert!(basis.reconstruct(&DVector::zeros(10)).is_err());
    }

    #[test]
    fn haar_states_normalized_and_seeded() {
        let a = haar_random_pure_state(16, 42).unwrap();
        let b = haar_random_pure_state(16, 42).unwrap();
        let c = haar_random_pure_state(16, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_abs_diff_eq!(a.amplitudes().norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn haar_qubit_population_is_uniform() {
        // |<0|psi>|^2 is uniform on [0,1] for Haar qubit states: mean 1/2,
        // standard error sqrt(1/12 / n).
        let n = 10_000;
        let mean = (0..n)
            .map(|s| haar_random_pure_state(2, s as u64).unwrap().amplitudes()[0].norm_sqr())
            .sum::<f64>()
            / n as f64;
        let se = (1.0 / 12.0 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn fidelity_cases() {
        let psi = haar_random_pure_state(16, 9).unwrap();
        assert_abs_diff_eq!(
            fidelity(&psi, &psi.density()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let mixed = DensityMatrix::maximally_mixed(16);
        assert_abs_diff_eq!(fidelity(&psi, &mixed).unwrap(), 0.0625, epsilon = 1e-15);
        let e0 = PureState::basis(16, 0).unwrap();
        let e1 = PureState::basis(16, 1).unwrap();
        assert_eq!(fidelity(&e0, &e1.density()).unwrap(), 0.0);
        assert!(matches!(
            fidelity(&e0, &DensityMatrix::maximally_mixed(4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(identity(3)).is_err());
        let mut m = Operator::zeros(2, 2);
        m[(0, 0)] = c(1.5);
        m[(1, 1)] = c(-0.5);
        assert!(DensityMatrix::new(m).is_err());
        let mut m = Operator::zeros(2, 2);
        m[(0, 0)] = c(0.5);
        m[(1, 1)] = c(0.5);
        m[(0, 1)] = Complex64::new(0.0, 0.1);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotHermitian(_))));
    }
}
