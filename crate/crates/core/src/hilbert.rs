//! Composite Hilbert space of two three-level qubits and two truncated
//! bosonic modes, with the operator algebra the rest of the crate builds on.
//!
//! Basis ordering is the Kronecker order of the subsystem list, first
//! subsystem most significant. The global subsystem order is always
//! `(QA, QB, RA, RB)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Subsystem index of qubit A.
pub const QA: usize = 0;
/// Subsystem index of qubit B.
pub const QB: usize = 1;
/// Subsystem index of resonator A.
pub const RA: usize = 2;
/// Subsystem index of resonator B.
pub const RB: usize = 3;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const POSITIVITY_TOL: f64 = 1e-9;

/// Ordered subsystem dimensions of a tensor-product space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertLayout {
    dims: Vec<usize>,
}

impl HilbertLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("layout needs at least one subsystem".into()));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::Dimension(format!("subsystem dimension {d} < 2")));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, subsystem: usize) -> usize {
        self.dims[subsystem]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat basis index of a product state given per-subsystem levels.
    pub fn index(&self, levels: &[usize]) -> usize {
        debug_assert_eq!(levels.len(), self.dims.len());
        levels
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&l, &d)| {
                debug_assert!(l < d);
                acc * d + l
            })
    }

    /// Per-subsystem levels of a flat basis index.
    pub fn levels(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    /// Layout made of the selected subsystems, in the given order.
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        self.check_selection(keep)?;
        Self::new(keep.iter().map(|&k| self.dims[k]).collect())
    }

    fn check_selection(&self, keep: &[usize]) -> Result<()> {
        if keep.is_empty() {
            return Err(Error::Subsystem("empty subsystem set".into()));
        }
        for (i, &k) in keep.iter().enumerate() {
            if k >= self.dims.len() {
                return Err(Error::Subsystem(format!(
                    "subsystem {k} out of range for {} subsystems",
                    self.dims.len()
                )));
            }
            if keep[..i].contains(&k) {
                return Err(Error::Subsystem(format!("subsystem {k} listed twice")));
            }
        }
        Ok(())
    }
}

/// Layout `[qubit, qubit, resonator, resonator]` in the fixed `(QA, QB, RA, RB)` order.
pub fn build_space(qubit_levels: usize, resonator_levels: usize) -> Result<HilbertLayout> {
    if qubit_levels < 3 {
        return Err(Error::Dimension(format!(
            "qubits need at least three levels, got {qubit_levels}"
        )));
    }
    if resonator_levels < 2 {
        return Err(Error::Dimension(format!(
            "resonators need at least two levels, got {resonator_levels}"
        )));
    }
    HilbertLayout::new(vec![qubit_levels, qubit_levels, resonator_levels, resonator_levels])
}

/// Dense square complex operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self(matrix))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    /// Truncated bosonic lowering operator `a`.
    pub fn annihilation(dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        for n in 1..dim {
            m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
        }
        Self(m)
    }

    pub fn creation(dim: usize) -> Self {
        Self::annihilation(dim).adjoint()
    }

    pub fn number(dim: usize) -> Self {
        Self(CMatrix::from_diagonal(&CVector::from_fn(dim, |n, _| {
            C64::new(n as f64, 0.0)
        })))
    }

    /// `|to⟩⟨from|`
    pub fn transition(dim: usize, from: usize, to: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        m[(to, from)] = ONE;
        Self(m)
    }

    /// `|k⟩⟨k|`
    pub fn projector(dim: usize, k: usize) -> Self {
        Self::transition(dim, k, k)
    }

    /// Qubit lowering `s_ge = |g⟩⟨e|`.
    pub fn s_ge(levels: usize) -> Self {
        Self::transition(levels, 1, 0)
    }

    /// Qubit lowering `s_ef = |e⟩⟨f|`.
    pub fn s_ef(levels: usize) -> Self {
        Self::transition(levels, 2, 1)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn kron(&self, other: &Operator) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.0, &self.0.adjoint())
    }

    /// Eigenvalues of a Hermitian operator in ascending order.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.0).0
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

/// Lift a single-subsystem operator to the full layout, identity elsewhere.
pub fn embed(local: &Operator, subsystem: usize, layout: &HilbertLayout) -> Result<Operator> {
    if subsystem >= layout.num_subsystems() {
        return Err(Error::Subsystem(format!("subsystem {subsystem} out of range")));
    }
    if local.dim() != layout.dim(subsystem) {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(subsystem),
            got: local.dim(),
        });
    }
    let before: usize = layout.dims()[..subsystem].iter().product();
    let after: usize = layout.dims()[subsystem + 1..].iter().product();
    let m = CMatrix::identity(before, before)
        .kronecker(&local.0)
        .kronecker(&CMatrix::identity(after, after));
    Ok(Operator(m))
}

/// `D(α) = exp(α a† − α* a)` on a `dim`-level truncated mode.
///
/// The generator is anti-Hermitian in the truncated space, so the result is
/// exactly unitary there and `D(−α) = D(α)†`.
pub fn displacement_operator(alpha: C64, dim: usize) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::Dimension(format!("displacement needs dim >= 2, got {dim}")));
    }
    if alpha == ZERO {
        return Ok(Operator::identity(dim));
    }
    let a = Operator::annihilation(dim);
    let generator = a.adjoint().0 * alpha - &a.0 * alpha.conj();
    Ok(Operator(generator.exp()))
}

/// Normalized truncated coherent state `|α⟩`.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<CVector> {
    if dim < 2 {
        return Err(Error::Dimension(format!("coherent state needs dim >= 2, got {dim}")));
    }
    if alpha.norm_sqr() / dim as f64 > 0.25 {
        tracing::warn!(
            alpha = %alpha,
            dim,
            "coherent state truncation unsafe: |alpha|^2/dim > 0.25"
        );
    }
    let mut v = CVector::zeros(dim);
    let mut amp = ONE;
    v[0] = amp;
    for n in 1..dim {
        amp = amp * alpha / (n as f64).sqrt();
        v[n] = amp;
    }
    let norm = v.norm();
    Ok(v / C64::new(norm, 0.0))
}

/// Density operator on a known layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    layout: HilbertLayout,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(layout: HilbertLayout, matrix: CMatrix) -> Result<Self> {
        let rho = Self::unchecked(layout, matrix)?;
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn unchecked(layout: HilbertLayout, matrix: CMatrix) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.nrows(),
            });
        }
        Ok(Self { layout, matrix })
    }

    /// Validate with a looser positivity bound, then symmetrize.
    ///
    /// Used for integrator output, where eigenvalues may dip slightly below
    /// zero from truncation error.
    pub(crate) fn from_numerical(layout: HilbertLayout, matrix: CMatrix, positivity_tol: f64) -> Result<Self> {
        let mut rho = Self::unchecked(layout, matrix)?;
        let herm = max_abs_diff(&rho.matrix, &rho.matrix.adjoint());
        if herm > 1e-8 {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        rho.matrix = (&rho.matrix + rho.matrix.adjoint()) * C64::new(0.5, 0.0);
        let tr = rho.trace();
        if (tr - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min_ev = rho.min_eigenvalue();
        if min_ev < -positivity_tol {
            return Err(Error::InvalidState(format!("min eigenvalue {min_ev:e}")));
        }
        Ok(rho)
    }

    pub fn pure(layout: HilbertLayout, psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi = psi / C64::new(norm, 0.0);
        let m = &psi * psi.adjoint();
        Self::new(layout, m)
    }

    /// Product basis state `|levels⟩⟨levels|`.
    pub fn basis(layout: HilbertLayout, levels: &[usize]) -> Result<Self> {
        if levels.len() != layout.num_subsystems() {
            return Err(Error::DimensionMismatch {
                expected: layout.num_subsystems(),
                got: levels.len(),
            });
        }
        for (l, d) in levels.iter().zip(layout.dims()) {
            if l >= d {
                return Err(Error::Dimension(format!("level {l} outside subsystem of dim {d}")));
            }
        }
        let n = layout.total_dim();
        let mut m = CMatrix::zeros(n, n);
        let k = layout.index(levels);
        m[(k, k)] = ONE;
        Ok(Self { layout, matrix: m })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: op.dim(),
            });
        }
        Ok((op.matrix() * &self.matrix).trace())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        Operator(self.matrix.clone()).hermitian_eigenvalues()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_ev:e}")));
        }
        Ok(())
    }

    /// `U ρ U†`
    pub fn conjugate_by(&self, u: &Operator) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.dim(),
            });
        }
        let m = u.matrix() * &self.matrix * u.matrix().adjoint();
        Ok(Self {
            layout: self.layout.clone(),
            matrix: m,
        })
    }

    /// Mean occupation `⟨n⟩` of one subsystem.
    pub fn mean_level(&self, subsystem: usize) -> f64 {
        (0..self.dim())
            .map(|i| self.matrix[(i, i)].re * self.layout.levels(i)[subsystem] as f64)
            .sum()
    }

    /// Population in the highest level of a subsystem (truncation leak monitor).
    pub fn top_level_population(&self, subsystem: usize) -> f64 {
        let top = self.layout.dim(subsystem) - 1;
        (0..self.dim())
            .filter(|&i| self.layout.levels(i)[subsystem] == top)
            .map(|i| self.matrix[(i, i)].re)
            .sum()
    }
}

/// Trace out every subsystem not in `keep`; the result follows `keep`'s order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let layout = rho.layout();
    let kept_layout = layout.select(keep)?;
    let traced: Vec<usize> = (0..layout.num_subsystems()).filter(|s| !keep.contains(s)).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&t| layout.dim(t)).collect();
    let traced_total: usize = traced_dims.iter().product();

    // group full indices by their traced-out levels
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); traced_total.max(1)];
    for i in 0..layout.total_dim() {
        let lv = layout.levels(i);
        let k: Vec<usize> = keep.iter().map(|&s| lv[s]).collect();
        let t = traced.iter().fold(0, |acc, &s| acc * layout.dim(s) + lv[s]);
        groups[t].push((i, kept_layout.index(&k)));
    }

    let n = kept_layout.total_dim();
    let mut out = CMatrix::zeros(n, n);
    let m = rho.matrix();
    for group in &groups {
        for &(r, kr) in group {
            for &(c, kc) in group {
                out[(kr, kc)] += m[(r, c)];
            }
        }
    }
    DensityMatrix::unchecked(kept_layout, out)
}

/// Hermitian eigendecomposition with eigenvalues ascending.
///
/// Decoupled blocks of the sparsity pattern are diagonalized separately: the
/// dense solver can return NaN on matrices that are mostly exact zeros.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for c in 0..n {
        for r in 0..c {
            if m[(r, c)] != ZERO || m[(c, r)] != ZERO {
                let (a, b) = (root(&mut parent, r), root(&mut parent, c));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut block_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if block_of[r] == usize::MAX {
            block_of[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[block_of[r]].push(i);
    }

    let mut pairs: Vec<(f64, CVector)> = Vec::with_capacity(n);
    for idx in &blocks {
        if idx.len() == 1 {
            let mut v = CVector::zeros(n);
            v[idx[0]] = ONE;
            pairs.push((m[(idx[0], idx[0])].re, v));
            continue;
        }
        let sub = CMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
        let eig = SymmetricEigen::new(sub);
        for k in 0..idx.len() {
            let mut v = CVector::zeros(n);
            for (i, &g) in idx.iter().enumerate() {
                v[g] = eig.eigenvectors[(i, k)];
            }
            pairs.push((eig.eigenvalues[k], v));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| pairs[j].1[i]);
    (values, vectors)
}

/// Square root of a positive semidefinite Hermitian matrix.
pub(crate) fn sqrt_psd(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let d = CVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v.max(0.0).sqrt(), 0.0)));
    &vectors * CMatrix::from_diagonal(&d) * vectors.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn eigen_of_block_sparse_matrix() {
        // 81×81 with one coupled 3×3 block and tiny diagonal entries elsewhere
        let mut m = CMatrix::zeros(81, 81);
        let idx = [4, 30, 77];
        let block = [
            [0.5, 0.1, 0.02],
            [0.1, 0.3, -0.05],
            [0.02, -0.05, 0.2],
        ];
        for i in 0..3 {
            for j in 0..3 {
                m[(idx[i], idx[j])] = C64::new(block[i][j], if i < j { 0.01 } else if i > j { -0.01 } else { 0.0 });
            }
        }
        m[(10, 10)] = C64::new(3e-33, 0.0);
        let (values, vectors) = hermitian_eigen(&m);
        assert!(values.iter().all(|v| v.is_finite()));
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
        let d = CVector::from_iterator(81, values.iter().map(|&v| C64::new(v, 0.0)));
        let back = &vectors * CMatrix::from_diagonal(&d) * vectors.adjoint();
        assert!(max_abs_diff(&back, &m) < 1e-12);
        assert!(max_abs_diff(&(vectors.adjoint() * &vectors), &CMatrix::identity(81, 81)) < 1e-12);
    }

    #[test]
    fn build_space_dims() {
        assert_eq!(build_space(3, 6).unwrap().total_dim(), 324);
        assert_eq!(build_space(3, 3).unwrap().total_dim(), 81);
        assert_eq!(build_space(3, 5).unwrap().total_dim(), 225);
        assert!(build_space(2, 6).is_err());
        assert!(build_space(3, 1).is_err());
        assert!(HilbertLayout::new(vec![3, 1]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let l = build_space(3, 4).unwrap();
        for i in 0..l.total_dim() {
            assert_eq!(l.index(&l.levels(i)), i);
        }
        assert_eq!(l.index(&[0, 0, 0, 1]), 1);
        assert_eq!(l.index(&[1, 0, 0, 0]), 3 * 4 * 4);
    }

    #[test]
    fn embed_identity_is_identity() {
        let l = build_space(3, 3).unwrap();
        let e = embed(&Operator::identity(3), QA, &l).unwrap();
        assert_eq!(e, Operator::identity(81));
    }

    #[test]
    fn embed_rejects_mismatch() {
        let l = build_space(3, 3).unwrap();
        assert!(matches!(
            embed(&Operator::identity(4), QA, &l),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(embed(&Operator::identity(3), 7, &l).is_err());
    }

    #[test]
    fn truncated_commutator() {
        let levels = 6;
        let l = build_space(3, levels).unwrap();
        let a = embed(&Operator::annihilation(levels), RA, &l).unwrap();
        let ad = embed(&Operator::creation(levels), RA, &l).unwrap();
        let comm = &(&a * &ad) - &(&ad * &a);
        // direct computation: I − (n_max+1)|n_max⟩⟨n_max| on RA
        let local = &Operator::identity(levels) - &Operator::projector(levels, levels - 1).scale(c(levels as f64, 0.0));
        let expected = embed(&local, RA, &l).unwrap();
        assert!(max_abs_diff(comm.matrix(), expected.matrix()) < 1e-12);
    }

    #[test]
    fn disjoint_embeddings_commute() {
        let l = build_space(3, 4).unwrap();
        let s = embed(&Operator::s_ge(3), QA, &l).unwrap();
        let b = embed(&Operator::annihilation(4), RB, &l).unwrap();
        assert!(s.commutator(&b).max_abs() < 1e-14);
    }

    #[test]
    fn embed_preserves_spectrum() {
        let l = build_space(3, 3).unwrap();
        let x = Operator::new(CMatrix::from_row_slice(
            3,
            3,
            &[c(1.0, 0.0), c(0.2, 0.1), c(0.0, 0.0), c(0.2, -0.1), c(-0.5, 0.0), c(0.3, 0.0), c(0.0, 0.0), c(0.3, 0.0), c(2.0, 0.0)],
        ))
        .unwrap();
        let local = x.hermitian_eigenvalues();
        let full = embed(&x, QB, &l).unwrap().hermitian_eigenvalues();
        let mult = 81 / 3;
        let mut expected: Vec<f64> = local.iter().flat_map(|&v| std::iter::repeat_n(v, mult)).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in full.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn displacement_identity_at_zero() {
        assert_eq!(displacement_operator(ZERO, 5).unwrap(), Operator::identity(5));
        assert!(displacement_operator(c(0.1, 0.0), 1).is_err());
    }

    #[test]
    fn displacement_vacuum_overlap() {
        // ⟨0|D(α)|0⟩ = exp(−|α|²/2) from the coherent-state series
        let d = displacement_operator(c(0.35, 0.0), 10).unwrap();
        assert_abs_diff_eq!(d.matrix()[(0, 0)].re, (-0.35f64 * 0.35 / 2.0).exp(), epsilon = 1e-6);
        assert_abs_diff_eq!(d.matrix()[(0, 0)].re, 0.9406, epsilon = 1e-4);
    }

    #[test]
    fn displacement_mean_phonon() {
        let dim = 10;
        let d = displacement_operator(c(0.5, 0.0), dim).unwrap();
        let psi = d.matrix().column(0).into_owned();
        let n: f64 = (0..dim).map(|k| k as f64 * psi[k].norm_sqr()).sum();
        assert_abs_diff_eq!(n, 0.25, epsilon = 1e-6);
    }

    #[test]
    fn displacement_inverse_is_adjoint() {
        let alpha = c(0.3, -0.2);
        let d = displacement_operator(alpha, 8).unwrap();
        let dm = displacement_operator(-alpha, 8).unwrap();
        assert!(max_abs_diff(dm.matrix(), &d.matrix().adjoint()) < 1e-12);
    }

    #[test]
    fn coherent_state_properties() {
        let v = coherent_state(ZERO, 6).unwrap();
        assert_abs_diff_eq!(v[0].re, 1.0);
        let v = coherent_state(c(0.3, 0.0), 8).unwrap();
        assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v[1].norm_sqr() / v[0].norm_sqr(), 0.09, epsilon = 1e-6);
        assert!(coherent_state(ZERO, 1).is_err());
    }

    #[test]
    fn partial_trace_product_state() {
        let l = build_space(3, 3).unwrap();
        // |g⟩⟨g| ⊗ |g⟩⟨g| ⊗ ρ_R with ρ_R a mixed two-mode state
        let lr = l.select(&[RA, RB]).unwrap();
        let mut rr = CMatrix::zeros(9, 9);
        rr[(1, 1)] = c(0.3, 0.0);
        rr[(3, 3)] = c(0.7, 0.0);
        rr[(1, 3)] = c(0.1, 0.2);
        rr[(3, 1)] = c(0.1, -0.2);
        let rho_r = DensityMatrix::new(lr, rr.clone()).unwrap();
        let qq = CMatrix::from_fn(9, 9, |i, j| if i == 0 && j == 0 { ONE } else { ZERO });
        let full = DensityMatrix::new(l, qq.kronecker(&rr)).unwrap();
        let red = partial_trace(&full, &[RA, RB]).unwrap();
        assert!(max_abs_diff(red.matrix(), rho_r.matrix()) < 1e-14);
        assert_abs_diff_eq!(red.trace(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn partial_trace_entangled_four_body() {
        // (|eg10⟩ + |ge01⟩)/√2 traced over qubits → ½(|10⟩⟨10| + |01⟩⟨01|)
        let l = build_space(3, 2).unwrap();
        let mut psi = CVector::zeros(l.total_dim());
        psi[l.index(&[1, 0, 1, 0])] = ONE;
        psi[l.index(&[0, 1, 0, 1])] = ONE;
        let rho = DensityMatrix::pure(l, &psi).unwrap();
        let red = partial_trace(&rho, &[RA, RB]).unwrap();
        let lr = red.layout().clone();
        let i10 = lr.index(&[1, 0]);
        let i01 = lr.index(&[0, 1]);
        assert_abs_diff_eq!(red.matrix()[(i10, i10)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(red.matrix()[(i01, i01)].re, 0.5, epsilon = 1e-12);
        assert!(red.matrix()[(i10, i01)].norm() < 1e-12);
        red.validate().unwrap();
    }

    #[test]
    fn partial_trace_rejects_bad_sets() {
        let l = build_space(3, 2).unwrap();
        let rho = DensityMatrix::basis(l, &[0, 0, 0, 0]).unwrap();
        assert!(partial_trace(&rho, &[]).is_err());
        assert!(partial_trace(&rho, &[4]).is_err());
        assert!(partial_trace(&rho, &[1, 1]).is_err());
    }

    #[test]
    fn density_validation() {
        let l = HilbertLayout::new(vec![2]).unwrap();
        let bad = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.6, 0.0), c(0.6, 0.0), c(0.5, 0.0)]);
        assert!(DensityMatrix::new(l.clone(), bad).is_err());
        let bad_trace = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), ZERO, ZERO, c(0.6, 0.0)]);
        assert!(DensityMatrix::new(l, bad_trace).is_err());
    }
}
