//! Single-time diagnostics, two-time correlators and the two-photon density matrix.
//!
//! Two-time correlators `G(t, t') = ⟨a_μ†(t) a_ν†(t') a_ζ(t') a_ξ(t)⟩`, `t' ≥ t`,
//! follow the quantum regression theorem: seed `Λ = a_ξ ρ(t) a_μ†`, evolve it
//! with the master-equation generator to `t'`, read `Tr[a_ν† a_ζ Λ(t')]`.
//!
//! [`RegressionMode::Split`] evaluates the same quantity in two stages. While
//! the drive is on, seeds are propagated forward row by row. Once the
//! envelope has fallen below 1e-12 of its peak the generator is constant,
//! so `Tr[B e^{L s} Λ] = Tr[e^{L† s}(B) Λ]`; the four observables
//! `a_ν† a_ζ` are evolved once in the Heisenberg picture and every remaining
//! entry becomes a dot product over the observables' non-zero support.
//! [`RegressionMode::Forward`] propagates every row to the end of the grid
//! and serves as a cross-check.

use log::warn;
use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{
    embed_mode_operator, expectation, reduce_to_dot, trace_of_product, CMatrix, Ladder, Operator, Polarization,
    SpaceDescriptor, C64,
};
use crate::model::Model;
use crate::propagator::{
    compute_pinched_trajectory, BalancedGenerator, Generator, IntegratorOptions, Picture, Propagation, TimeGrid,
    Trajectory,
};

const ZERO: C64 = C64::new(0.0, 0.0);

pub use crate::propagator::DRIVE_OFF_LEVEL;

/// Pre-normalization Hermiticity tolerance, relative to the diagonal sum.
pub const HERMITICITY_REL_TOL: f64 = 1e-6;

fn pol_index(p: Polarization) -> usize {
    match p {
        Polarization::H => 0,
        Polarization::V => 1,
    }
}

/// Indices of `⟨a_μ†(t) a_ν†(t') a_ζ(t') a_ξ(t)⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorrelatorSpec {
    pub mu: Polarization,
    pub nu: Polarization,
    pub xi: Polarization,
    pub zeta: Polarization,
}

impl CorrelatorSpec {
    pub fn new(mu: Polarization, nu: Polarization, xi: Polarization, zeta: Polarization) -> Self {
        Self { mu, nu, xi, zeta }
    }

    /// Position among the 16 correlators, `((μ·2 + ν)·2 + ξ)·2 + ζ`.
    pub fn index(&self) -> usize {
        ((pol_index(self.mu) * 2 + pol_index(self.nu)) * 2 + pol_index(self.xi)) * 2 + pol_index(self.zeta)
    }

    pub fn all() -> impl Iterator<Item = CorrelatorSpec> {
        use Polarization::*;
        [H, V].into_iter().flat_map(|mu| {
            [H, V].into_iter().flat_map(move |nu| {
                [H, V]
                    .into_iter()
                    .flat_map(move |xi| [H, V].into_iter().map(move |zeta| CorrelatorSpec::new(mu, nu, xi, zeta)))
            })
        })
    }
}

/// Per-time diagnostics of one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub rho_gg: Vec<f64>,
    pub rho_hh: Vec<f64>,
    pub rho_vv: Vec<f64>,
    pub rho_bb: Vec<f64>,
    pub rho_hv: Vec<C64>,
    pub n_h: Vec<f64>,
    pub n_v: Vec<f64>,
    /// Equal-time third-order correlation `⟨a_H†³ a_H³⟩`.
    pub ettocf: Vec<f64>,
}

impl DiagnosticSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `(a_H†)³ (a_H)³`, the zero operator when fewer than three photons fit.
pub fn ettocf_operator(space: &SpaceDescriptor) -> Operator {
    let a = embed_mode_operator(space, Polarization::H, Ladder::Annihilate);
    let a3 = a.mul(&a).mul(&a);
    a3.dagger().mul(&a3)
}

pub fn observables_series(traj: &Trajectory, space: &SpaceDescriptor) -> Result<DiagnosticSeries> {
    let a_h = embed_mode_operator(space, Polarization::H, Ladder::Annihilate);
    let a_v = embed_mode_operator(space, Polarization::V, Ladder::Annihilate);
    let n_h_op = a_h.dagger().mul(&a_h);
    let n_v_op = a_v.dagger().mul(&a_v);
    let e3 = ettocf_operator(space);

    let n = traj.len();
    let mut s = DiagnosticSeries {
        times: traj.grid.times(),
        rho_gg: Vec::with_capacity(n),
        rho_hh: Vec::with_capacity(n),
        rho_vv: Vec::with_capacity(n),
        rho_bb: Vec::with_capacity(n),
        rho_hv: Vec::with_capacity(n),
        n_h: Vec::with_capacity(n),
        n_v: Vec::with_capacity(n),
        ettocf: Vec::with_capacity(n),
    };
    for rho in traj.snapshots() {
        let rho = rho.as_ref();
        let dot = reduce_to_dot(rho, space)?;
        s.rho_gg.push(dot[(0, 0)].re);
        s.rho_hh.push(dot[(1, 1)].re);
        s.rho_vv.push(dot[(2, 2)].re);
        s.rho_bb.push(dot[(3, 3)].re);
        s.rho_hv.push(dot[(1, 2)]);
        s.n_h.push(expectation(&n_h_op, rho)?.re);
        s.n_v.push(expectation(&n_v_op, rho)?.re);
        s.ettocf.push(expectation(&e3, rho)?.re);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RegressionMode {
    #[default]
    Split,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionOptions {
    pub integrator: IntegratorOptions,
    pub mode: RegressionMode,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self { integrator: IntegratorOptions::default(), mode: RegressionMode::Split }
    }
}

/// Regression machinery shared by all rows of one trajectory.
pub struct RegressionEngine<'a> {
    traj: &'a Trajectory,
    forward: Generator,
    // drive-free Heisenberg generator on the balanced block, present when a split is possible
    adjoint: Option<BalancedGenerator>,
    opts: RegressionOptions,
    dim: usize,
    // non-zeros of a_H, a_V
    annihilators: [Vec<(usize, usize, C64)>; 2],
    // observables[ν·2 + ζ] = a_ν† a_ζ
    observables: Vec<CMatrix>,
    switch: usize,
}

/// One row `G(t_i, t_j)`, `j ≥ i`, for all 16 correlators.
pub type CorrelatorRow = Vec<[C64; 16]>;

fn combo(mu: usize, nu: usize, xi: usize, zeta: usize) -> usize {
    ((mu * 2 + nu) * 2 + xi) * 2 + zeta
}

/// `Σ_f b[f]·s[f]`.
fn dot(b: &[C64], s: &[C64]) -> C64 {
    let mut acc = ZERO;
    for (x, y) in b.iter().zip(s) {
        acc += x * y;
    }
    acc
}

/// `dot(B†, s)` given `B` on the balanced support and the support's transpose map.
fn dot_adjoint(b: &[C64], s: &[C64], transpose: &[usize]) -> C64 {
    let mut acc = ZERO;
    for (i, &j) in transpose.iter().enumerate() {
        acc += b[j].conj() * s[i];
    }
    acc
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Weight of `G(t_i, t_j)`, `j ≥ i`, in the ordered-domain trapezoid rule.
/// The diagonal gets half weight so the two triangles count it once in total.
pub fn triangle_weight(w: &[f64], i: usize, j: usize) -> f64 {
    if i == j {
        0.5 * w[i] * w[i]
    } else {
        w[i] * w[j]
    }
}

impl<'a> RegressionEngine<'a> {
    pub fn new(model: &Model, traj: &'a Trajectory, opts: RegressionOptions) -> Result<Self> {
        let space = model.space;
        let dim = space.dim();
        let found = if traj.is_empty() { 0 } else { traj.snapshot(0).dim() };
        if found != dim {
            return Err(Error::DimensionMismatch { expected: dim, found });
        }
        let a = [
            embed_mode_operator(&space, Polarization::H, Ladder::Annihilate),
            embed_mode_operator(&space, Polarization::V, Ladder::Annihilate),
        ];
        let mut observables = Vec::with_capacity(4);
        for nu in 0..2 {
            for zeta in 0..2 {
                observables.push(a[nu].dagger().mul(&a[zeta]).into_matrix());
            }
        }
        let grid = traj.grid;
        let n = grid.n_points();
        let switch = match opts.mode {
            RegressionMode::Forward => n - 1,
            RegressionMode::Split => {
                let t_off = model.params.pulse_end(DRIVE_OFF_LEVEL);
                (0..n).find(|&i| grid.time(i) >= t_off).unwrap_or(n - 1)
            }
        };
        let adjoint = if switch < n - 1 {
            Some(BalancedGenerator::new(model, Picture::Heisenberg)?)
        } else {
            None
        };

        Ok(Self {
            traj,
            forward: Generator::new(model, Picture::Schrodinger),
            adjoint,
            opts,
            dim,
            annihilators: [a[0].nonzeros(), a[1].nonzeros()],
            observables,
            switch,
        })
    }

    /// Grid index from which the generator is treated as time independent.
    pub fn switch_index(&self) -> usize {
        self.switch
    }

    /// `a_ξ X a_μ†` using the annihilators' non-zeros.
    fn seed(&self, x: &CMatrix, xi: usize, mu: usize) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        // (A X B)[r1, c2] = A[r1, c1] X[c1, r2] B[r2, c2] with B = a_μ†, B[r2, c2] = conj(a_μ[c2, r2])
        for &(r1, c1, v1) in &self.annihilators[xi] {
            for &(c2, r2, v2) in &self.annihilators[mu] {
                out[(r1, c2)] += v1 * x[(c1, r2)] * v2.conj();
            }
        }
        out
    }

    /// Balanced entries of the transposed seeds `(a_ξ ρ_i a_μ†)ᵀ` at grid point `i`, indexed `ξ·2 + μ`.
    fn seeds_transposed(&self, i: usize) -> [Vec<C64>; 4] {
        let adjoint = self.adjoint.as_ref().expect("split regression");
        let snap = self.traj.snapshot(i);
        let rho = snap.matrix();
        std::array::from_fn(|k| adjoint.gather_transposed(self.seed(rho, k / 2, k % 2).as_slice()))
    }

    fn record(&self, lam: &CMatrix, xi: usize, mu: usize, cell: &mut [C64; 16]) {
        for nu in 0..2 {
            for zeta in 0..2 {
                cell[combo(mu, nu, xi, zeta)] = trace_of_product(&self.observables[nu * 2 + zeta], lam);
            }
        }
    }

    /// Forward part of row `i < switch`: `G(t_i, t_j)` for `j = i..=switch`
    /// and the transposed propagated seeds at `t_switch` on the balanced support.
    fn forward_segment(&self, i: usize) -> Result<(CorrelatorRow, [Vec<C64>; 4])> {
        let grid = self.traj.grid;
        let snap = self.traj.snapshot(i);
        let rho = snap.matrix();
        let mut row = vec![[ZERO; 16]; self.switch - i + 1];
        let mut finals: [Vec<C64>; 4] = std::array::from_fn(|_| Vec::new());
        for xi in 0..2 {
            for mu in 0..2 {
                let lam = self.seed(rho, xi, mu);
                self.record(&lam, xi, mu, &mut row[0]);
                let mut prop = Propagation::new(&self.forward, &lam, grid.time(i), self.opts.integrator)?;
                for j in i + 1..=self.switch {
                    prop.advance_to(grid.time(j))?;
                    self.record(&prop.state(), xi, mu, &mut row[j - i]);
                }
                if let Some(adjoint) = &self.adjoint {
                    finals[xi * 2 + mu] = adjoint.gather_transposed(prop.state_slice());
                }
            }
        }
        Ok((row, finals))
    }

    /// Weighted sums over pairs `i ≤ j ≤ switch` for one weight set, with
    /// the diagonal restricted to `i < switch`, via forward accumulators
    /// `A(t) = Σ_{t_i < t} w_i U(t, t_i) Λ_i`. Also returns the transposed
    /// balanced `A(t_switch)` per seed when late rows follow.
    fn accumulate_early(&self, wv: &[f64]) -> Result<([C64; 16], [Vec<C64>; 4])> {
        let grid = self.traj.grid;
        let s = self.switch;
        let len = wv.len();
        let last = s.min(len - 1);
        let runs: Vec<([C64; 16], Vec<C64>)> = (0..4usize)
            .into_par_iter()
            .map(|seed| {
                let (xi, mu) = (seed / 2, seed % 2);
                let mut sum = [ZERO; 16];
                let mut cell = [ZERO; 16];
                let mut finals = Vec::new();
                let zero = CMatrix::zeros(self.dim, self.dim);
                let mut prop = Propagation::new(&self.forward, &zero, grid.time(0), self.opts.integrator)?;
                for j in 0..=last {
                    if j > 0 {
                        prop.advance_to(grid.time(j))?;
                        self.record(&prop.state(), xi, mu, &mut cell);
                        for c in 0..16 {
                            sum[c] += cell[c] * wv[j];
                        }
                    }
                    if j == s {
                        if let Some(adjoint) = &self.adjoint {
                            finals = adjoint.gather_transposed(prop.state_slice());
                        }
                        break;
                    }
                    let lam = self.seed(self.traj.snapshot(j).matrix(), xi, mu);
                    self.record(&lam, xi, mu, &mut cell);
                    for c in 0..16 {
                        sum[c] += cell[c] * (0.5 * wv[j] * wv[j]);
                    }
                    prop.add_scaled(C64::new(wv[j], 0.0), lam.as_slice());
                }
                Ok((sum, finals))
            })
            .collect::<Result<_>>()?;
        let mut total = [ZERO; 16];
        let mut finals: [Vec<C64>; 4] = std::array::from_fn(|_| Vec::new());
        for (seed, (sum, f)) in runs.into_iter().enumerate() {
            merge(&mut total, &sum, seed / 2, seed % 2);
            finals[seed] = f;
        }
        Ok((total, finals))
    }

    fn heisenberg_start(&self) -> Result<Vec<Propagation<'_>>> {
        let adjoint = self.adjoint.as_ref().expect("split regression");
        // B_VH(s) = B_HV(s)†, so only HH, HV and VV are propagated
        [0usize, 1, 3]
            .iter()
            .map(|&o| {
                let start = adjoint.gather(self.observables[o].as_slice());
                Propagation::from_vec(adjoint, start, 0.0, self.opts.integrator)
            })
            .collect()
    }

    /// `Tr[B_{νζ}(s) Λ]` for the three propagated observables and `Λᵀ = s_t`.
    fn contract(&self, props: &[Propagation<'_>], s_t: &[C64], xi: usize, mu: usize, scale: f64, out: &mut [C64; 16]) {
        let hh = dot(props[0].state_slice(), s_t);
        let hv = dot(props[1].state_slice(), s_t);
        let transpose = self.adjoint.as_ref().expect("split regression").transpose_map();
        let vh = dot_adjoint(props[1].state_slice(), s_t, transpose);
        let vv = dot(props[2].state_slice(), s_t);
        out[combo(mu, 0, xi, 0)] += hh * scale;
        out[combo(mu, 0, xi, 1)] += hv * scale;
        out[combo(mu, 1, xi, 0)] += vh * scale;
        out[combo(mu, 1, xi, 1)] += vv * scale;
    }

    fn advance_all(props: &mut [Propagation<'_>], s: f64) -> Result<()> {
        props.par_iter_mut().try_for_each(|p| p.advance_to(s))
    }

    /// Full rows `G(t_i, t_j)`, `j ≥ i`, for every `i`.
    pub fn rows(&self) -> Result<Vec<CorrelatorRow>> {
        let grid = self.traj.grid;
        let n = grid.n_points();
        let s = self.switch;
        let dt = grid.dt();

        let forward: Vec<(CorrelatorRow, [Vec<C64>; 4])> =
            (0..s).into_par_iter().map(|i| self.forward_segment(i)).collect::<Result<_>>()?;
        let mut rows: Vec<CorrelatorRow> = (0..n).map(|i| vec![[ZERO; 16]; n - i]).collect();
        for (i, (seg, _)) in forward.iter().enumerate() {
            rows[i][..seg.len()].copy_from_slice(seg);
        }

        if self.adjoint.is_none() {
            // switch == n - 1: only the last diagonal entry is left
            let snap = self.traj.snapshot(n - 1);
            let rho = snap.matrix();
            for xi in 0..2 {
                for mu in 0..2 {
                    self.record(&self.seed(rho, xi, mu), xi, mu, &mut rows[n - 1][0]);
                }
            }
            return Ok(rows);
        }
        let late: Vec<[Vec<C64>; 4]> = (s..n).map(|i| self.seeds_transposed(i)).collect();

        let mut props = self.heisenberg_start()?;
        for k in 0..n - s {
            if k > 0 {
                Self::advance_all(&mut props, k as f64 * dt)?;
            }
            // rows started before the switch reach j = s + k
            if k > 0 {
                for (i, (_, finals)) in forward.iter().enumerate() {
                    for seed in 0..4 {
                        let mut cell = [ZERO; 16];
                        self.contract(&props, &finals[seed], seed / 2, seed % 2, 1.0, &mut cell);
                        merge(&mut rows[i][s + k - i], &cell, seed / 2, seed % 2);
                    }
                }
            }
            // rows started after the switch reach j = i + k
            for (r, seeds) in late.iter().enumerate() {
                let i = s + r;
                if i + k >= n {
                    break;
                }
                for seed in 0..4 {
                    let mut cell = [ZERO; 16];
                    self.contract(&props, &seeds[seed], seed / 2, seed % 2, 1.0, &mut cell);
                    merge(&mut rows[i][k], &cell, seed / 2, seed % 2);
                }
            }
        }
        Ok(rows)
    }

    /// Ordered-domain trapezoid integrals `Σ_{i≤j} W_ij G(t_i, t_j)` for each
    /// weight set. A weight set of length `L` covers grid points `0..L` and
    /// must be the trapezoid rule on that sub-grid.
    pub fn weighted_integrals(&self, weight_sets: &[Vec<f64>]) -> Result<Vec<[C64; 16]>> {
        let grid = self.traj.grid;
        let n = grid.n_points();
        let s = self.switch;
        let dt = grid.dt();
        let width = self.adjoint.as_ref().map_or(0, |g| g.support().len());
        let mut out = vec![[ZERO; 16]; weight_sets.len()];

        let early: Vec<([C64; 16], [Vec<C64>; 4])> =
            weight_sets.iter().map(|wv| self.accumulate_early(wv)).collect::<Result<_>>()?;
        for (acc, (cell, _)) in out.iter_mut().zip(&early) {
            *acc = *cell;
        }

        if self.adjoint.is_none() {
            // switch == n - 1: the final diagonal point
            for (set, wv) in weight_sets.iter().enumerate() {
                if wv.len() == n {
                    let mut cell = [ZERO; 16];
                    let snap = self.traj.snapshot(n - 1);
            let rho = snap.matrix();
                    for xi in 0..2 {
                        for mu in 0..2 {
                            self.record(&self.seed(rho, xi, mu), xi, mu, &mut cell);
                        }
                    }
                    let w = triangle_weight(wv, n - 1, n - 1);
                    for c in 0..16 {
                        out[set][c] += cell[c] * w;
                    }
                }
            }
            return Ok(out);
        }

        struct SetState {
            len: usize,
            // Σ_{i<s} w_i Λ_i(t_s)ᵀ
            early: Vec<Vec<C64>>,
            // running Σ_{i=s}^{r} w_i Λ_iᵀ, starting from r = len − 2
            prefix: Vec<Vec<C64>>,
            // Σ_{i≥s} w_i²/2 Λ_iᵀ
            diag: Vec<Vec<C64>>,
        }
        let mut states: Vec<SetState> = weight_sets
            .iter()
            .zip(early)
            .map(|(wv, (_, finals))| {
                let len = wv.len();
                SetState {
                    len,
                    early: finals.into(),
                    prefix: vec![vec![ZERO; width]; 4],
                    diag: vec![vec![ZERO; width]; 4],
                }
            })
            .collect();
        // prefix sums and diagonal terms over the late rows
        for r in s..n {
            let seeds = self.seeds_transposed(r);
            for (st, wv) in states.iter_mut().zip(weight_sets) {
                if r >= st.len {
                    continue;
                }
                for seed in 0..4 {
                    if r + 1 < st.len {
                        axpy(&mut st.prefix[seed], C64::new(wv[r], 0.0), &seeds[seed]);
                    }
                    axpy(&mut st.diag[seed], C64::new(0.5 * wv[r] * wv[r], 0.0), &seeds[seed]);
                }
            }
        }

        let mut props = self.heisenberg_start()?;
        let mut scratch = vec![ZERO; width];
        for k in 0..n - s {
            if k > 0 {
                Self::advance_all(&mut props, k as f64 * dt)?;
            }
            for ((st, wv), acc) in states.iter_mut().zip(weight_sets).zip(out.iter_mut()) {
                let len = st.len;
                if len <= s || k > len - 1 - s {
                    continue;
                }
                if k == 0 {
                    for seed in 0..4 {
                        self.contract(&props, &st.diag[seed], seed / 2, seed % 2, 1.0, acc);
                    }
                    continue;
                }
                // early rows paired with j = s + k
                let wj = wv[s + k];
                for seed in 0..4 {
                    self.contract(&props, &st.early[seed], seed / 2, seed % 2, wj, acc);
                }
                // late rows: Σ_{i=s}^{r} w_i w_{i+k} Λ_i with r = len − 1 − k;
                // w_{i+k} = dt except w_{len−1} at i = r
                let r = len - 1 - k;
                let seeds = self.seeds_transposed(r);
                for seed in 0..4 {
                    let lam = &seeds[seed];
                    axpy(&mut st.prefix[seed], C64::new(-wv[r], 0.0), lam);
                    for ((o, p), l) in scratch.iter_mut().zip(&st.prefix[seed]).zip(lam) {
                        *o = p * dt + l * (wv[r] * wv[len - 1]);
                    }
                    self.contract(&props, &scratch, seed / 2, seed % 2, 1.0, acc);
                }
            }
        }
        Ok(out)
    }
}

/// Copy the four (ν, ζ) entries of one seed (ξ, μ) from `src` into `dst`.
fn merge(dst: &mut [C64; 16], src: &[C64; 16], xi: usize, mu: usize) {
    for nu in 0..2 {
        for zeta in 0..2 {
            let c = combo(mu, nu, xi, zeta);
            dst[c] = src[c];
        }
    }
}

/// Upper-triangular table of one correlator: `values[i][j - i] = G(t_i, t_j)`.
#[derive(Debug, Clone)]
pub struct CorrelatorTable {
    pub grid: TimeGrid,
    pub spec: CorrelatorSpec,
    pub values: Vec<Vec<C64>>,
}

impl CorrelatorTable {
    pub fn get(&self, i: usize, j: usize) -> Option<C64> {
        if j < i {
            return None;
        }
        self.values.get(i).and_then(|r| r.get(j - i)).copied()
    }
}

/// Evaluate one ordered correlator on the trajectory's grid.
pub fn ordered_correlator(spec: CorrelatorSpec, traj: &Trajectory, model: &Model, opts: RegressionOptions) -> Result<CorrelatorTable> {
    let all = ordered_correlators(traj, model, opts)?;
    let idx = spec.index();
    Ok(CorrelatorTable {
        grid: traj.grid,
        spec,
        values: all.into_iter().map(|row| row.into_iter().map(|c| c[idx]).collect()).collect(),
    })
}

/// All 16 correlators, row by row.
pub fn ordered_correlators(traj: &Trajectory, model: &Model, opts: RegressionOptions) -> Result<Vec<CorrelatorRow>> {
    RegressionEngine::new(model, traj, opts)?.rows()
}

/// Two-photon density matrix in the basis |HH⟩, |HV⟩, |VH⟩, |VV⟩.
#[derive(Debug, Clone, Serialize)]
pub struct TwoPhotonMatrix {
    /// Normalized and Hermitized.
    #[serde(serialize_with = "serialize_matrix4")]
    pub matrix: Matrix4<C64>,
    /// Before normalization and Hermitization.
    #[serde(serialize_with = "serialize_matrix4")]
    pub raw: Matrix4<C64>,
    /// Normalization constant `B = 1 / raw_diagonal_sum`.
    pub normalization: f64,
    pub raw_diagonal_sum: f64,
    /// `max|M − M†|` before Hermitization, relative to the diagonal sum.
    pub hermiticity_defect: f64,
    /// Diagonal sum using only `[0, T/2]`; measures horizon convergence.
    pub half_horizon_diagonal_sum: f64,
}

fn serialize_matrix4<S: serde::Serializer>(m: &Matrix4<C64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> = (0..4).map(|r| (0..4).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect()).collect();
    rows.serialize(s)
}

pub const BASIS_LABELS: [&str; 4] = ["HH", "HV", "VH", "VV"];

impl TwoPhotonMatrix {
    pub fn alpha_hh(&self) -> f64 {
        self.matrix[(0, 0)].re
    }

    pub fn beta_hv(&self) -> f64 {
        self.matrix[(1, 1)].re
    }

    pub fn beta_vh(&self) -> f64 {
        self.matrix[(2, 2)].re
    }

    pub fn alpha_vv(&self) -> f64 {
        self.matrix[(3, 3)].re
    }

    /// Coherence ⟨HH|ρ|VV⟩.
    pub fn gamma(&self) -> C64 {
        self.matrix[(0, 3)]
    }

    /// Relative change of the diagonal sum between the half and full horizon.
    pub fn horizon_change(&self) -> f64 {
        (self.raw_diagonal_sum - self.half_horizon_diagonal_sum).abs() / self.raw_diagonal_sum.abs().max(f64::MIN_POSITIVE)
    }

    /// Normalize and Hermitize an assembled raw matrix.
    pub fn from_raw(raw: Matrix4<C64>, half_horizon_diagonal_sum: f64) -> Result<Self> {
        let sum: f64 = (0..4).map(|k| raw[(k, k)].re).sum();
        if sum.is_nan() || sum.abs() < 1e-12 {
            return Err(Error::NoPhotonPairs { sum });
        }
        let defect = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| (raw[(r, c)] - raw[(c, r)].conj()).norm())
            .fold(0.0, f64::max)
            / sum.abs();
        if defect > HERMITICITY_REL_TOL {
            warn!("two-photon matrix Hermiticity defect {defect:.2e} exceeds {HERMITICITY_REL_TOL:.0e}");
        }
        let herm = (raw + raw.adjoint()) * C64::new(0.5, 0.0);
        let b = 1.0 / sum;
        Ok(Self {
            matrix: herm * C64::new(b, 0.0),
            raw,
            normalization: b,
            raw_diagonal_sum: sum,
            hermiticity_defect: defect,
            half_horizon_diagonal_sum,
        })
    }

    /// Smallest eigenvalue of the normalized matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = CMatrix::from_iterator(4, 4, self.matrix.iter().cloned());
        crate::hilbert::hermitian_eigenvalues(&m)[0]
    }
}

/// Combine ordered-domain integrals: `M_{μν,ξζ} = O_{μν,ξζ} + O_{νμ,ζξ}`.
fn assemble(ordered: &[C64; 16]) -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    for mu in 0..2 {
        for nu in 0..2 {
            for xi in 0..2 {
                for zeta in 0..2 {
                    let o1 = ordered[((mu * 2 + nu) * 2 + xi) * 2 + zeta];
                    let o2 = ordered[((nu * 2 + mu) * 2 + zeta) * 2 + xi];
                    m[(mu * 2 + nu, xi * 2 + zeta)] = o1 + o2;
                }
            }
        }
    }
    m
}

/// Two-photon matrix from an existing trajectory.
pub fn two_photon_matrix_from(traj: &Trajectory, model: &Model, opts: RegressionOptions) -> Result<TwoPhotonMatrix> {
    let engine = RegressionEngine::new(model, traj, opts)?;
    let grid = traj.grid;
    let n = grid.n_points();
    let w = grid.trapezoid_weights();
    let half = (n - 1) / 2;
    let mut w_half = w[..=half].to_vec();
    w_half[half] = 0.5 * grid.dt();

    let sums = engine.weighted_integrals(&[w, w_half])?;
    let raw = assemble(&sums[0]);
    let half_sum: f64 = {
        let m = assemble(&sums[1]);
        (0..4).map(|k| m[(k, k)].re).sum()
    };
    TwoPhotonMatrix::from_raw(raw, half_sum)
}

/// Trajectory plus tomography on `grid`.
pub fn two_photon_matrix(model: &Model, grid: &TimeGrid, opts: RegressionOptions) -> Result<TwoPhotonMatrix> {
    let traj = compute_pinched_trajectory(model, grid, opts.integrator)?;
    two_photon_matrix_from(&traj, model, opts)
}
