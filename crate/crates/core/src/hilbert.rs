//! Composite Hilbert space of a four-level dot and two truncated cavity modes.
//!
//! Basis ordering is fixed: dot level slowest (G=0, H=1, V=2, B=3), then the
//! H-mode photon number, then the V-mode photon number. Flat index of
//! `(level, n_h, n_v)` is `(level * (n_max_h + 1) + n_h) * (n_max_v + 1) + n_v`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Quantum-dot levels in basis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DotLevel {
    G = 0,
    H = 1,
    V = 2,
    B = 3,
}

impl DotLevel {
    pub const ALL: [DotLevel; 4] = [DotLevel::G, DotLevel::H, DotLevel::V, DotLevel::B];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of electron-hole pairs carried by the level.
    pub fn excitation(self) -> usize {
        match self {
            DotLevel::G => 0,
            DotLevel::H | DotLevel::V => 1,
            DotLevel::B => 2,
        }
    }
}

/// Photon polarization / cavity mode label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    pub const ALL: [Polarization; 2] = [Polarization::H, Polarization::V];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Annihilate,
    Create,
}

/// Truncated composite space `dot ⊗ Fock_H ⊗ Fock_V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    n_max_h: usize,
    n_max_v: usize,
}

/// Basis label of one composite state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub level: DotLevel,
    pub n_h: usize,
    pub n_v: usize,
}

impl BasisState {
    pub fn new(level: DotLevel, n_h: usize, n_v: usize) -> Self {
        Self { level, n_h, n_v }
    }

    /// Total excitation number: dot excitations plus photons.
    pub fn excitation(&self) -> usize {
        self.level.excitation() + self.n_h + self.n_v
    }
}

/// Build the composite space. Negative truncations are rejected.
pub fn build_space(n_max_h: i64, n_max_v: i64) -> Result<SpaceDescriptor> {
    if n_max_h < 0 || n_max_v < 0 {
        return Err(Error::InvalidTruncation { n_max_h, n_max_v });
    }
    Ok(SpaceDescriptor {
        n_max_h: n_max_h as usize,
        n_max_v: n_max_v as usize,
    })
}

impl SpaceDescriptor {
    pub fn n_max_h(&self) -> usize {
        self.n_max_h
    }

    pub fn n_max_v(&self) -> usize {
        self.n_max_v
    }

    pub fn dim(&self) -> usize {
        4 * (self.n_max_h + 1) * (self.n_max_v + 1)
    }

    fn fock_dim(&self) -> usize {
        (self.n_max_h + 1) * (self.n_max_v + 1)
    }

    /// Flat index of a basis state, `None` if a photon number exceeds the truncation.
    pub fn index(&self, state: BasisState) -> Option<usize> {
        if state.n_h > self.n_max_h || state.n_v > self.n_max_v {
            return None;
        }
        Some((state.level.index() * (self.n_max_h + 1) + state.n_h) * (self.n_max_v + 1) + state.n_v)
    }

    pub fn state(&self, index: usize) -> Option<BasisState> {
        if index >= self.dim() {
            return None;
        }
        let nv1 = self.n_max_v + 1;
        let n_v = index % nv1;
        let rest = index / nv1;
        let n_h = rest % (self.n_max_h + 1);
        let level = DotLevel::ALL[rest / (self.n_max_h + 1)];
        Some(BasisState { level, n_h, n_v })
    }

    pub fn states(&self) -> impl Iterator<Item = BasisState> + '_ {
        (0..self.dim()).map(move |i| self.state(i).expect("index in range"))
    }

    /// Pure-state projector `|s⟩⟨s|`.
    pub fn pure_state(&self, state: BasisState) -> Result<DensityMatrix> {
        let i = self.index(state).ok_or(Error::StateOutOfSpace)?;
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        m[(i, i)] = C64::new(1.0, 0.0);
        DensityMatrix::new(m)
    }

    pub fn identity(&self) -> Operator {
        Operator(CMatrix::identity(self.dim(), self.dim()))
    }

    fn check(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }
}

/// Dense operator on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    /// Wrap a raw matrix built against `space`.
    pub fn from_matrix(space: &SpaceDescriptor, m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        space.check(m.nrows())?;
        Ok(Operator(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Operator(CMatrix::zeros(dim, dim))
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

    pub fn dagger(&self) -> Operator {
        Operator(self.0.adjoint())
    }

    pub fn mul(&self, other: &Operator) -> Operator {
        Operator(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Operator) -> Operator {
        Operator(&self.0 + &other.0)
    }

    pub fn scale(&self, c: C64) -> Operator {
        Operator(&self.0 * c)
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        Operator(&self.0 * &other.0 - &other.0 * &self.0)
    }

    /// Largest elementwise deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs_diff(&self.0, &self.0.adjoint())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Non-zero entries as `(row, col, value)`, used to compile fast kernels.
    pub fn nonzeros(&self) -> Vec<(usize, usize, C64)> {
        let mut out = Vec::new();
        for c in 0..self.0.ncols() {
            for r in 0..self.0.nrows() {
                let v = self.0[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    out.push((r, c, v));
                }
            }
        }
        out
    }
}

/// `|to⟩⟨from| ⊗ 1 ⊗ 1`.
pub fn embed_dot_operator(space: &SpaceDescriptor, to: DotLevel, from: DotLevel) -> Operator {
    let dim = space.dim();
    let fock = space.fock_dim();
    let mut m = CMatrix::zeros(dim, dim);
    for f in 0..fock {
        m[(to.index() * fock + f, from.index() * fock + f)] = C64::new(1.0, 0.0);
    }
    Operator(m)
}

/// Truncated ladder operator on one cavity mode, identity elsewhere.
/// `a†|n_max⟩ = 0` under truncation.
pub fn embed_mode_operator(space: &SpaceDescriptor, pol: Polarization, kind: Ladder) -> Operator {
    let dim = space.dim();
    let mut m = CMatrix::zeros(dim, dim);
    for s in space.states() {
        let from = space.index(s).expect("state in space");
        let n = match pol {
            Polarization::H => s.n_h,
            Polarization::V => s.n_v,
        };
        let (target_n, amp) = match kind {
            Ladder::Annihilate if n > 0 => (n - 1, (n as f64).sqrt()),
            Ladder::Create => (n + 1, ((n + 1) as f64).sqrt()),
            _ => continue,
        };
        let target = match pol {
            Polarization::H => BasisState::new(s.level, target_n, s.n_v),
            Polarization::V => BasisState::new(s.level, s.n_h, target_n),
        };
        if let Some(to) = space.index(target) {
            m[(to, from)] = C64::new(amp, 0.0);
        }
    }
    Operator(m)
}

/// Total excitation number operator `N`: |H⟩⟨H| + |V⟩⟨V| + 2|B⟩⟨B| + a_H†a_H + a_V†a_V.
pub fn excitation_number(space: &SpaceDescriptor) -> Operator {
    let dim = space.dim();
    let mut m = CMatrix::zeros(dim, dim);
    for (i, s) in space.states().enumerate() {
        m[(i, i)] = C64::new(s.excitation() as f64, 0.0);
    }
    Operator(m)
}

/// Density matrix. Construction checks Hermiticity (1e-10) and unit trace (1e-8);
/// positivity is checked separately with [`DensityMatrix::min_eigenvalue`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-7;

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let herm = max_abs_diff(&m, &m.adjoint());
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "Hermiticity defect {herm:.3e}"
            )));
        }
        let tr = m.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        Ok(DensityMatrix(m))
    }

    pub(crate) fn new_unchecked(m: CMatrix) -> Self {
        DensityMatrix(m)
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

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_hermitian_eigenvalue(&self.0)
    }

    pub fn is_positive(&self) -> bool {
        self.min_eigenvalue() >= -POSITIVITY_TOL
    }
}

/// `Tr[op · ρ]`.
pub fn expectation(op: &Operator, rho: &DensityMatrix) -> Result<C64> {
    if op.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: rho.dim(),
        });
    }
    Ok(trace_of_product(op.matrix(), rho.matrix()))
}

/// `Tr[A B]` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    // Σ_ij A_ij B_ji; B column i is contiguous.
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Partial trace over both photon modes, giving the 4×4 dot density matrix.
pub fn reduce_to_dot(rho: &DensityMatrix, space: &SpaceDescriptor) -> Result<nalgebra::Matrix4<C64>> {
    space.check(rho.dim())?;
    let fock = space.fock_dim();
    let m = rho.matrix();
    let mut out = nalgebra::Matrix4::<C64>::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let mut acc = C64::new(0.0, 0.0);
            for f in 0..fock {
                acc += m[(a * fock + f, b * fock + f)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Spectrum of the Hermitian part of `m`, ascending.
///
/// Uses the real symmetric embedding `[[A, −B], [B, A]]` of `A + iB`, whose
/// spectrum is that of `A + iB` with every eigenvalue doubled.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    let mut real = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            real[(i, j)] = z.re;
            real[(i + n, j + n)] = z.re;
            real[(i, j + n)] = -z.im;
            real[(i + n, j)] = z.im;
        }
    }
    let mut ev: Vec<f64> = real.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.into_iter().step_by(2).collect()
}

pub(crate) fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn ket(space: &SpaceDescriptor, s: BasisState) -> nalgebra::DVector<C64> {
        let mut v = nalgebra::DVector::zeros(space.dim());
        v[space.index(s).unwrap()] = c(1.0);
        v
    }

    #[test]
    fn dimensions() {
        assert_eq!(build_space(1, 1).unwrap().dim(), 16);
        assert_eq!(build_space(3, 3).unwrap().dim(), 64);
        assert_eq!(build_space(0, 0).unwrap().dim(), 4);
        assert_eq!(build_space(2, 0).unwrap().dim(), 12);
        assert!(matches!(
            build_space(-1, 2),
            Err(Error::InvalidTruncation { .. })
        ));
    }

    #[test]
    fn index_map_round_trips() {
        let space = build_space(3, 2).unwrap();
        let mut seen = vec![false; space.dim()];
        for i in 0..space.dim() {
            let s = space.state(i).unwrap();
            assert_eq!(space.index(s), Some(i));
            seen[i] = true;
        }
        assert!(seen.into_iter().all(|x| x));
        assert_eq!(space.state(space.dim()), None);
        assert_eq!(space.index(BasisState::new(DotLevel::G, 4, 0)), None);
        // dot level is the slowest index
        assert_eq!(space.index(BasisState::new(DotLevel::H, 0, 0)), Some(12));
        assert_eq!(space.index(BasisState::new(DotLevel::G, 1, 0)), Some(3));
    }

    #[test]
    fn dot_transition_action() {
        let space = build_space(2, 2).unwrap();
        let s_h1 = embed_dot_operator(&space, DotLevel::H, DotLevel::B);
        let out = s_h1.matrix() * ket(&space, BasisState::new(DotLevel::B, 0, 0));
        assert_eq!(out, ket(&space, BasisState::new(DotLevel::H, 0, 0)));
        assert_eq!(s_h1.mul(&s_h1).max_abs(), 0.0);

        let down = embed_dot_operator(&space, DotLevel::G, DotLevel::H);
        let up = embed_dot_operator(&space, DotLevel::H, DotLevel::G);
        assert_eq!(down.dagger(), up);
    }

    #[test]
    fn ladder_action() {
        let space = build_space(3, 3).unwrap();
        let a_h = embed_mode_operator(&space, Polarization::H, Ladder::Annihilate);
        let ad_h = embed_mode_operator(&space, Polarization::H, Ladder::Create);
        let one = ket(&space, BasisState::new(DotLevel::G, 1, 0));
        assert_eq!(a_h.matrix() * &one, ket(&space, BasisState::new(DotLevel::G, 0, 0)));
        let two = ket(&space, BasisState::new(DotLevel::G, 2, 0)) * c(2f64.sqrt());
        assert_eq!(ad_h.matrix() * &one, two);
        assert_eq!(a_h.dagger(), ad_h);
        let top = ket(&space, BasisState::new(DotLevel::B, 3, 1));
        assert_eq!((ad_h.matrix() * top).norm(), 0.0);
    }

    #[test]
    fn truncated_commutator_deviates_only_at_top_level() {
        let space = build_space(3, 3).unwrap();
        let a = embed_mode_operator(&space, Polarization::H, Ladder::Annihilate);
        let ad = embed_mode_operator(&space, Polarization::H, Ladder::Create);
        let comm = a.commutator(&ad);
        for (i, s) in space.states().enumerate() {
            for j in 0..space.dim() {
                let expected = match (i == j, s.n_h) {
                    (false, _) => 0.0,
                    (true, 3) => -3.0,
                    (true, _) => 1.0,
                };
                assert!((comm.matrix()[(i, j)] - c(expected)).norm() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn dot_and_mode_operators_commute() {
        let space = build_space(2, 3).unwrap();
        for to in DotLevel::ALL {
            for from in DotLevel::ALL {
                let s = embed_dot_operator(&space, to, from);
                for pol in Polarization::ALL {
                    for kind in [Ladder::Annihilate, Ladder::Create] {
                        let a = embed_mode_operator(&space, pol, kind);
                        assert_eq!(s.commutator(&a).max_abs(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn expectation_basics() {
        let space = build_space(3, 3).unwrap();
        let rho = space.pure_state(BasisState::new(DotLevel::B, 1, 0)).unwrap();
        assert!((expectation(&space.identity(), &rho).unwrap() - c(1.0)).norm() < 1e-15);
        let a = embed_mode_operator(&space, Polarization::H, Ladder::Annihilate);
        let n = a.dagger().mul(&a);
        assert!((expectation(&n, &rho).unwrap() - c(1.0)).norm() < 1e-15);
        let small = build_space(0, 0).unwrap();
        assert!(matches!(
            expectation(&small.identity(), &rho),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reduce_examples() {
        let space = build_space(3, 3).unwrap();
        let rho = space.pure_state(BasisState::new(DotLevel::B, 0, 0)).unwrap();
        let red = reduce_to_dot(&rho, &space).unwrap();
        assert_eq!(red, nalgebra::Matrix4::from_diagonal(&nalgebra::Vector4::new(c(0.0), c(0.0), c(0.0), c(1.0))));

        let g0 = space.pure_state(BasisState::new(DotLevel::G, 0, 0)).unwrap();
        let g11 = space.pure_state(BasisState::new(DotLevel::G, 1, 1)).unwrap();
        let mix = DensityMatrix::new((g0.matrix() + g11.matrix()) * c(0.5)).unwrap();
        let red = reduce_to_dot(&mix, &space).unwrap();
        assert!((red[(0, 0)] - c(1.0)).norm() < 1e-15);
        assert!((red.trace() - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn density_matrix_validation() {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = c(0.5);
        assert!(DensityMatrix::new(m.clone()).is_err());
        m[(1, 1)] = c(0.5);
        m[(0, 1)] = C64::new(0.0, 0.1);
        assert!(DensityMatrix::new(m.clone()).is_err());
        m[(1, 0)] = C64::new(0.0, -0.1);
        let rho = DensityMatrix::new(m).unwrap();
        assert!(rho.is_positive());
    }
}
