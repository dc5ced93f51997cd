//! Master-equation integration.
//!
//! The Lindblad generator is compiled once per model into term lists that
//! act on a flat column-major `dim²` buffer:
//!
//! ```text
//! L(X) = K_l X + X K_r + Ω(t)·s·(D X − X D) + Σ_k r_k A_k X B_k
//! ```
//!
//! Forward (Schrödinger picture): `K_l = −i H_eff`, `K_r = i H_eff†`,
//! `B_k = A_k†`, with `H_eff = H − (i/2) Σ r_k A_k†A_k`. The adjoint
//! (Heisenberg picture) generator swaps the roles; it is used by the
//! regression engine once the drive has switched off. Operators stay dense
//! everywhere else; only this kernel skips structural zeros.

use std::borrow::Cow;

use log::warn;

use crate::error::{Error, Result};
use crate::hilbert::{min_hermitian_eigenvalue, CMatrix, DensityMatrix, SpaceDescriptor, C64};
use crate::model::{Model, PhysicalParams, PulsePolarization};

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Uniform time mesh on `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_points: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n_points}")));
        }
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(Error::InvalidGrid(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        Ok(Self { t_start, t_end, n_points })
    }

    /// Grid on `[0, t_max]`.
    pub fn span(t_max: f64, n_points: usize) -> Result<Self> {
        Self::new(0.0, t_max, n_points)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_points - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.t_end
        } else {
            self.t_start + i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.time(i)).collect()
    }

    /// Trapezoidal weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut w = vec![dt; self.n_points];
        w[0] = 0.5 * dt;
        w[self.n_points - 1] = 0.5 * dt;
        w
    }

    /// Same spacing, twice the span (nested: every old point is a new point).
    pub fn doubled_span(&self) -> Self {
        Self {
            t_start: self.t_start,
            t_end: self.t_start + 2.0 * (self.t_end - self.t_start),
            n_points: 2 * (self.n_points - 1) + 1,
        }
    }

    /// Same span, half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * (self.n_points - 1) + 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Picture {
    /// Evolves states: `dρ/dt = L(ρ)`.
    Schrodinger,
    /// Evolves observables: `dX/dt = L†(X)`; only valid for time-independent drives.
    Heisenberg,
}

/// Lindblad generator compiled for fast application.
#[derive(Debug, Clone)]
pub struct Generator {
    dim: usize,
    // CSR of K_l including the anti-Hermitian decay part
    left_ptr: Vec<usize>,
    left_col: Vec<usize>,
    left_val: Vec<C64>,
    // entries (r, c, v) of K_r; applied as out[:, c] += X[:, r] · v
    right: Vec<(usize, usize, C64)>,
    drive: Vec<(usize, usize, C64)>,
    // s in Ω(t)·s·(D X − X D)
    drive_sign: C64,
    // (flat out index, flat in index, coefficient) of Σ r A X B
    jumps: Vec<(usize, usize, C64)>,
    params: PhysicalParams,
    picture: Picture,
}

impl Generator {
    pub fn new(model: &Model, picture: Picture) -> Self {
        let dim = model.space.dim();
        let h = model.static_h.matrix();
        let mut decay = CMatrix::zeros(dim, dim);
        for d in &model.dissipators {
            if d.rate != 0.0 {
                let a = d.jump.matrix();
                decay += a.adjoint() * a * C64::new(d.rate, 0.0);
            }
        }
        // half of Σ r A†A enters each side with a minus sign in both pictures
        let (hl, hr) = match picture {
            Picture::Schrodinger => (-I, I),
            Picture::Heisenberg => (I, -I),
        };
        let left_m = h * hl - &decay * C64::new(0.5, 0.0);
        let right_m = h * hr - &decay * C64::new(0.5, 0.0);

        let mut left_ptr = vec![0];
        let mut left_col = Vec::new();
        let mut left_val = Vec::new();
        for r in 0..dim {
            for c in 0..dim {
                let v = left_m[(r, c)];
                if v != ZERO {
                    left_col.push(c);
                    left_val.push(v);
                }
            }
            left_ptr.push(left_col.len());
        }
        let right = nonzeros(&right_m);
        let drive = nonzeros(model.drive.matrix());

        let mut jumps = Vec::new();
        for d in &model.dissipators {
            if d.rate == 0.0 {
                continue;
            }
            let (a, b) = match picture {
                Picture::Schrodinger => (d.jump.matrix().clone(), d.jump.matrix().adjoint()),
                Picture::Heisenberg => (d.jump.matrix().adjoint(), d.jump.matrix().clone()),
            };
            let a_nz = nonzeros(&a);
            let b_nz = nonzeros(&b);
            // (A X B)[r1, c2] += A[r1, c1] X[c1, r2] B[r2, c2]
            for &(r1, c1, v1) in &a_nz {
                for &(r2, c2, v2) in &b_nz {
                    jumps.push((r1 + c2 * dim, c1 + r2 * dim, v1 * v2 * d.rate));
                }
            }
        }
        jumps.sort_by_key(|&(o, i, _)| (o, i));

        Self {
            dim,
            left_ptr,
            left_col,
            left_val,
            right,
            drive,
            drive_sign: match picture {
                Picture::Schrodinger => -I,
                Picture::Heisenberg => I,
            },
            jumps,
            params: model.params.clone(),
            picture,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn picture(&self) -> Picture {
        self.picture
    }

    pub fn envelope(&self, t: f64) -> f64 {
        crate::model::pulse_envelope(t, &self.params)
    }

    /// `out = L(x)` on flat column-major buffers of length dim².
    pub fn apply(&self, t: f64, x: &[C64], out: &mut [C64]) {
        let n = self.dim;
        debug_assert_eq!(x.len(), n * n);
        debug_assert_eq!(out.len(), n * n);
        let omega = if self.drive.is_empty() { 0.0 } else { self.envelope(t) };

        for k in 0..n {
            let xc = &x[k * n..(k + 1) * n];
            let oc = &mut out[k * n..(k + 1) * n];
            for r in 0..n {
                let mut acc = ZERO;
                for idx in self.left_ptr[r]..self.left_ptr[r + 1] {
                    acc += self.left_val[idx] * xc[self.left_col[idx]];
                }
                oc[r] = acc;
            }
        }
        for &(r, c, v) in &self.right {
            let (xs, os) = (r * n, c * n);
            for i in 0..n {
                out[os + i] += x[xs + i] * v;
            }
        }
        if omega != 0.0 {
            let s = self.drive_sign * omega;
            // s·D X
            for &(r, c, v) in &self.drive {
                let sv = s * v;
                for k in 0..n {
                    out[r + k * n] += sv * x[c + k * n];
                }
            }
            // −s·X D
            for &(r, c, v) in &self.drive {
                let sv = -s * v;
                let (xs, os) = (r * n, c * n);
                for i in 0..n {
                    out[os + i] += x[xs + i] * sv;
                }
            }
        }
        for &(o, i, v) in &self.jumps {
            out[o] += v * x[i];
        }
    }

    /// `L(X)` at time `t` as a matrix.
    pub fn rhs(&self, t: f64, x: &CMatrix) -> Result<CMatrix> {
        check_dims(self.dim, x)?;
        let mut out = CMatrix::zeros(self.dim, self.dim);
        self.apply(t, x.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}

fn nonzeros(m: &CMatrix) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if m[(r, c)] != ZERO {
                out.push((r, c, m[(r, c)]));
            }
        }
    }
    out
}

fn check_dims(dim: usize, x: &CMatrix) -> Result<()> {
    if !x.is_square() {
        return Err(Error::NotSquare { rows: x.nrows(), cols: x.ncols() });
    }
    if x.nrows() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: x.nrows() });
    }
    Ok(())
}

/// `dρ/dt` of the master equation. Accepts non-Hermitian inputs.
pub fn lindblad_rhs(rho: &CMatrix, t: f64, model: &Model) -> Result<CMatrix> {
    Generator::new(model, Picture::Schrodinger).rhs(t, rho)
}

/// Linear right-hand side `dy/dt = L(t) y` on flat buffers.
pub trait LinearRhs: Sync {
    fn len(&self) -> usize;
    fn apply(&self, t: f64, x: &[C64], out: &mut [C64]);
}

impl LinearRhs for Generator {
    fn len(&self) -> usize {
        self.dim * self.dim
    }

    fn apply(&self, t: f64, x: &[C64], out: &mut [C64]) {
        Generator::apply(self, t, x, out)
    }
}

/// Envelope level (relative to peak) below which the drive is treated as off.
pub const DRIVE_OFF_LEVEL: f64 = 1e-12;

/// Flat indices `r + c·dim` whose row and column states carry the same
/// excitation number. Without the drive the generator maps this set onto itself
/// in both pictures, and every observable built from `a†a`-type operators lives on it.
pub fn balanced_support(space: &SpaceDescriptor) -> Vec<usize> {
    let dim = space.dim();
    let exc: Vec<_> = space.states().map(|b| b.excitation()).collect();
    let mut out = Vec::new();
    for c in 0..dim {
        for r in 0..dim {
            if exc[r] == exc[c] {
                out.push(r + c * dim);
            }
        }
    }
    out
}

/// Drive-free generator acting on the excitation-balanced entries only,
/// stored as a sparse matrix over [`balanced_support`].
#[derive(Debug, Clone)]
pub struct BalancedGenerator {
    dim: usize,
    support: Vec<usize>,
    // support position of the transposed entry
    transpose: Vec<usize>,
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<C64>,
}

impl BalancedGenerator {
    pub fn new(model: &Model, picture: Picture) -> Result<Self> {
        let params = PhysicalParams { pulse_polarization: PulsePolarization::None, ..model.params.clone() };
        let free = Model::new(params, model.space)?;
        let full = Generator::new(&free, picture);
        let dim = full.dim();
        let support = balanced_support(&model.space);
        let mut position = vec![usize::MAX; dim * dim];
        for (i, &f) in support.iter().enumerate() {
            position[f] = i;
        }
        let transpose = support.iter().map(|&f| position[(f / dim) + (f % dim) * dim]).collect();

        let mut triplets = Vec::new();
        let mut unit = vec![ZERO; dim * dim];
        let mut out = vec![ZERO; dim * dim];
        for (j, &f) in support.iter().enumerate() {
            unit[f] = C64::new(1.0, 0.0);
            full.apply(0.0, &unit, &mut out);
            unit[f] = ZERO;
            for (g, &v) in out.iter().enumerate() {
                if v != ZERO {
                    let i = position[g];
                    assert!(i != usize::MAX, "drive-free generator left the balanced block");
                    triplets.push((i, j, v));
                }
            }
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut ptr = vec![0; support.len() + 1];
        for &(i, _, _) in &triplets {
            ptr[i + 1] += 1;
        }
        for i in 0..support.len() {
            ptr[i + 1] += ptr[i];
        }
        Ok(Self {
            dim,
            support,
            transpose,
            ptr,
            col: triplets.iter().map(|t| t.1).collect(),
            val: triplets.iter().map(|t| t.2).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Support position of the transposed entry of each support entry.
    pub fn transpose_map(&self) -> &[usize] {
        &self.transpose
    }

    /// Balanced entries of a full flat buffer.
    pub fn gather(&self, full: &[C64]) -> Vec<C64> {
        self.support.iter().map(|&f| full[f]).collect()
    }

    /// Balanced entries of `xᵀ`.
    pub fn gather_transposed(&self, full: &[C64]) -> Vec<C64> {
        let n = self.dim;
        self.support.iter().map(|&f| full[f / n + (f % n) * n]).collect()
    }

    /// Full matrix with zeros off the balanced block.
    pub fn scatter(&self, part: &[C64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        let flat = m.as_mut_slice();
        for (&f, &v) in self.support.iter().zip(part) {
            flat[f] = v;
        }
        m
    }
}

impl LinearRhs for BalancedGenerator {
    fn len(&self) -> usize {
        self.support.len()
    }

    fn apply(&self, _t: f64, x: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.ptr[i]..self.ptr[i + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            *o = acc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dormand–Prince 5(4) with local error control.
    Adaptive,
    /// Classic fixed-step RK4, cross-check only.
    Rk4 { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Absolute and relative tolerance on matrix entries.
    pub tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::Adaptive,
            tol: 1e-9,
            initial_step: 1e-2,
            max_step: 5.0,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Default::default() }
    }

    pub fn rk4(step: f64) -> Self {
        Self { method: Method::Rk4 { step }, ..Default::default() }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Running counters of one propagation.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Stateful integrator that can be advanced through a sequence of times,
/// keeping its step-size history between stops.
pub struct Propagation<'g> {
    rhs: &'g dyn LinearRhs,
    // matrix dimension when the buffer is a full dim × dim matrix
    dim: Option<usize>,
    opts: IntegratorOptions,
    t: f64,
    h: f64,
    y: Vec<C64>,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    fsal_valid: bool,
    pub stats: StepStats,
}

impl<'g> Propagation<'g> {
    pub fn new(gen: &'g Generator, state: &CMatrix, t: f64, opts: IntegratorOptions) -> Result<Self> {
        check_dims(gen.dim(), state)?;
        let mut p = Self::from_vec(gen, state.as_slice().to_vec(), t, opts)?;
        p.dim = Some(gen.dim());
        Ok(p)
    }

    /// Propagation of a raw buffer under any linear right-hand side.
    pub fn from_vec(rhs: &'g dyn LinearRhs, y: Vec<C64>, t: f64, opts: IntegratorOptions) -> Result<Self> {
        let len = rhs.len();
        if y.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: y.len() });
        }
        Ok(Self {
            rhs,
            dim: None,
            opts,
            t,
            h: opts.initial_step,
            y,
            k: std::array::from_fn(|_| vec![ZERO; len]),
            tmp: vec![ZERO; len],
            fsal_valid: false,
            stats: StepStats::default(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state_slice(&self) -> &[C64] {
        &self.y
    }

    /// Current state as a matrix; only for propagations built with [`Propagation::new`].
    pub fn state(&self) -> CMatrix {
        let n = self.dim.expect("state() needs a matrix-shaped propagation");
        CMatrix::from_column_slice(n, n, &self.y)
    }

    /// Integrate up to exactly `t_to`.
    /// `y += a·x` at the current time.
    pub fn add_scaled(&mut self, a: C64, x: &[C64]) {
        assert_eq!(x.len(), self.y.len(), "buffer length");
        for (y, v) in self.y.iter_mut().zip(x) {
            *y += a * v;
        }
        self.fsal_valid = false;
    }

    pub fn advance_to(&mut self, t_to: f64) -> Result<()> {
        if t_to < self.t {
            return Err(Error::BackwardTime { from: self.t, to: t_to });
        }
        match self.opts.method {
            Method::Adaptive => self.advance_adaptive(t_to),
            Method::Rk4 { step } => self.advance_rk4(t_to, step),
        }
    }

    fn eval(&mut self, stage: usize, t: f64, use_tmp: bool) {
        let (src, dst) = if use_tmp {
            (&self.tmp, &mut self.k[stage])
        } else {
            (&self.y, &mut self.k[stage])
        };
        self.rhs.apply(t, src, dst);
        self.stats.rhs_evals += 1;
    }

    fn stage_input(&mut self, h: f64, coeffs: &[(usize, f64)]) {
        let y = &self.y;
        let tmp = &mut self.tmp;
        tmp.copy_from_slice(y);
        for &(s, a) in coeffs {
            let ha = h * a;
            for (t, k) in tmp.iter_mut().zip(&self.k[s]) {
                *t += k * ha;
            }
        }
    }

    fn advance_adaptive(&mut self, t_to: f64) -> Result<()> {
        let tol = self.opts.tol;
        while self.t < t_to {
            if !self.fsal_valid {
                self.eval(0, self.t, false);
                self.fsal_valid = true;
            }
            let remaining = t_to - self.t;
            let clipped = self.h >= remaining;
            let h = if clipped { remaining } else { self.h };
            let min_h = 1e-12 * self.t.abs().max(1.0);
            if h < min_h && !clipped {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            let t = self.t;

            self.stage_input(h, &[(0, A21)]);
            self.eval(1, t + C2 * h, true);
            self.stage_input(h, &[(0, A31), (1, A32)]);
            self.eval(2, t + C3 * h, true);
            self.stage_input(h, &[(0, A41), (1, A42), (2, A43)]);
            self.eval(3, t + C4 * h, true);
            self.stage_input(h, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
            self.eval(4, t + C5 * h, true);
            self.stage_input(h, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
            self.eval(5, t + h, true);
            // tmp <- 5th-order solution
            self.stage_input(h, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)]);
            self.eval(6, t + h, true);

            let mut err = 0.0f64;
            for i in 0..self.y.len() {
                let e = (self.k[0][i] * E1
                    + self.k[2][i] * E3
                    + self.k[3][i] * E4
                    + self.k[4][i] * E5
                    + self.k[5][i] * E6
                    + self.k[6][i] * E7)
                    * h;
                let scale = tol + tol * self.y[i].norm().max(self.tmp[i].norm());
                err = err.max(e.norm() / scale);
            }

            if err <= 1.0 {
                self.stats.accepted += 1;
                std::mem::swap(&mut self.y, &mut self.tmp);
                self.k.swap(0, 6);
                flush_tiny(&mut self.y);
                flush_tiny(&mut self.k[0]);
                self.t = if clipped { t_to } else { t + h };
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // a clipped step says little about the natural step size
                if !clipped || factor < 1.0 {
                    self.h = (h * factor).min(self.opts.max_step);
                }
            } else {
                self.stats.rejected += 1;
                let factor = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                self.h = h * factor;
                if self.h < min_h {
                    return Err(Error::StepUnderflow { t: self.t, h: self.h });
                }
            }
        }
        Ok(())
    }

    fn advance_rk4(&mut self, t_to: f64, step: f64) -> Result<()> {
        let span = t_to - self.t;
        if span <= 0.0 {
            return Ok(());
        }
        if step.is_nan() || step <= 0.0 {
            return Err(Error::StepUnderflow { t: self.t, h: step });
        }
        let n_steps = (span / step).ceil().max(1.0) as usize;
        let h = span / n_steps as f64;
        let len = self.y.len();
        let mut acc = vec![ZERO; len];
        for s in 0..n_steps {
            let t = self.t;
            self.eval(0, t, false);
            self.stage_input(h, &[(0, 0.5)]);
            self.eval(1, t + 0.5 * h, true);
            self.stage_input(h, &[(1, 0.5)]);
            self.eval(2, t + 0.5 * h, true);
            self.stage_input(h, &[(2, 1.0)]);
            self.eval(3, t + h, true);
            for i in 0..len {
                acc[i] = self.y[i]
                    + (self.k[0][i] + self.k[1][i] * 2.0 + self.k[2][i] * 2.0 + self.k[3][i]) * (h / 6.0);
            }
            std::mem::swap(&mut self.y, &mut acc);
            self.t = if s + 1 == n_steps { t_to } else { t + h };
            self.stats.accepted += 1;
        }
        self.fsal_valid = false;
        Ok(())
    }
}

/// Propagate `state` from `t_from` to `t_to`. Linear in `state`; works for
/// non-Hermitian inputs.
pub fn evolve(gen: &Generator, state: &CMatrix, t_from: f64, t_to: f64, opts: IntegratorOptions) -> Result<CMatrix> {
    check_dims(gen.dim(), state)?;
    if t_to < t_from {
        return Err(Error::BackwardTime { from: t_from, to: t_to });
    }
    if t_to == t_from {
        return Ok(state.clone());
    }
    let mut p = Propagation::new(gen, state, t_from, opts)?;
    p.advance_to(t_to)?;
    Ok(p.state())
}

/// Drift repaired on one snapshot.
/// Entries below this are zeroed after each accepted step, so long decays
/// never reach subnormal arithmetic.
const FLUSH_BELOW: f64 = 1e-200;

fn flush_tiny(v: &mut [C64]) {
    for z in v {
        if z.re.abs() < FLUSH_BELOW {
            z.re = 0.0;
        }
        if z.im.abs() < FLUSH_BELOW {
            z.im = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Correction {
    pub t: f64,
    pub trace_drift: f64,
    pub hermiticity_drift: f64,
}

pub const SILENT_DRIFT: f64 = 1e-10;
pub const FATAL_DRIFT: f64 = 1e-6;

/// Post-switch snapshots kept as their excitation-balanced entries.
#[derive(Debug, Clone)]
struct BalancedTail {
    dim: usize,
    support: Vec<usize>,
    // basis indices of each block; entries outside the blocks are zero
    blocks: Vec<Vec<usize>>,
    states: Vec<Vec<C64>>,
}

impl BalancedTail {
    fn new(dim: usize, support: Vec<usize>, states: Vec<Vec<C64>>) -> Self {
        let mut label: Vec<Option<usize>> = vec![None; dim];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for &f in &support {
            let (r, c) = (f % dim, f / dim);
            if r == c && label[r].is_none() {
                let members: Vec<usize> = (0..dim).filter(|&k| support.contains(&(r + k * dim))).collect();
                for &k in &members {
                    label[k] = Some(blocks.len());
                }
                blocks.push(members);
            }
        }
        Self { dim, support, blocks, states }
    }

    fn min_eigenvalue(&self, part: &[C64]) -> f64 {
        let mut flat = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        for (&f, &v) in self.support.iter().zip(part) {
            flat[f] = v;
        }
        self.blocks
            .iter()
            .map(|b| {
                let m = CMatrix::from_fn(b.len(), b.len(), |i, j| flat[b[i] + b[j] * self.dim]);
                min_hermitian_eigenvalue(&m)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    full: Vec<DensityMatrix>,
    tail: Option<BalancedTail>,
    /// Snapshots whose drift exceeded the silent threshold.
    pub corrections: Vec<Correction>,
    /// Largest raw drifts seen over the run.
    pub max_trace_drift: f64,
    pub max_hermiticity_drift: f64,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.full.len() + self.tail.as_ref().map_or(0, |t| t.states.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of leading snapshots stored as full matrices.
    pub fn full_len(&self) -> usize {
        self.full.len()
    }

    /// State at grid point `i`; compact snapshots are expanded on demand.
    pub fn snapshot(&self, i: usize) -> Cow<'_, DensityMatrix> {
        if i < self.full.len() {
            return Cow::Borrowed(&self.full[i]);
        }
        let tail = self.tail.as_ref().expect("snapshot index in range");
        let part = &tail.states[i - self.full.len()];
        let mut m = CMatrix::zeros(tail.dim, tail.dim);
        let flat = m.as_mut_slice();
        for (&f, &v) in tail.support.iter().zip(part) {
            flat[f] = v;
        }
        Cow::Owned(DensityMatrix::new_unchecked(m))
    }

    pub fn snapshots(&self) -> impl Iterator<Item = Cow<'_, DensityMatrix>> + '_ {
        (0..self.len()).map(|i| self.snapshot(i))
    }

    /// Smallest eigenvalue over all snapshots.
    pub fn min_eigenvalue(&self) -> f64 {
        let head = self.full.iter().map(|s| s.min_eigenvalue()).fold(f64::INFINITY, f64::min);
        self.tail.as_ref().map_or(head, |t| t.states.iter().map(|p| t.min_eigenvalue(p)).fold(head, f64::min))
    }
}

/// Integrate from the model's initial state and sample every grid point.
/// Snapshots are Hermitized and trace-normalized; the integrator itself
/// continues from the raw state.
pub fn compute_trajectory(model: &Model, grid: &TimeGrid, opts: IntegratorOptions) -> Result<Trajectory> {
    trajectory(model, grid, opts, false)
}

/// Like [`compute_trajectory`], but once the drive is off only the
/// excitation-balanced block is propagated; later snapshots are the state
/// with coherences between different excitation numbers removed. Populations,
/// photon numbers, `ρ_HV` and all photon correlators are unaffected.
pub fn compute_pinched_trajectory(model: &Model, grid: &TimeGrid, opts: IntegratorOptions) -> Result<Trajectory> {
    trajectory(model, grid, opts, true)
}

struct Sampler {
    corrections: Vec<Correction>,
    max_tr: f64,
    max_herm: f64,
    full: Vec<DensityMatrix>,
    tail: Vec<Vec<C64>>,
}

impl Sampler {
    /// Track drifts and return the trace to normalize by.
    fn check(&mut self, t: f64, tr: C64, herm: f64) -> Result<f64> {
        let tr_drift = (tr - C64::new(1.0, 0.0)).norm();
        self.max_tr = self.max_tr.max(tr_drift);
        self.max_herm = self.max_herm.max(herm);
        if tr_drift > FATAL_DRIFT {
            return Err(Error::Drift { t, what: "trace", value: tr_drift });
        }
        if herm > FATAL_DRIFT {
            return Err(Error::Drift { t, what: "Hermiticity", value: herm });
        }
        if tr_drift > SILENT_DRIFT || herm > SILENT_DRIFT {
            warn!("t = {t:.3} ps: corrected drift (trace {tr_drift:.2e}, Hermiticity {herm:.2e})");
            self.corrections.push(Correction { t, trace_drift: tr_drift, hermiticity_drift: herm });
        }
        Ok(tr.re)
    }

    fn push(&mut self, t: f64, raw: CMatrix) -> Result<()> {
        let herm = crate::hilbert::max_abs_diff(&raw, &raw.adjoint());
        let tr = self.check(t, raw.trace(), herm)?;
        let fixed = (&raw + raw.adjoint()) * C64::new(0.5 / tr, 0.0);
        self.full.push(DensityMatrix::new_unchecked(fixed));
        Ok(())
    }

    fn push_balanced(&mut self, t: f64, raw: &[C64], gen: &BalancedGenerator, diag: &[usize]) -> Result<()> {
        let tmap = gen.transpose_map();
        let herm = raw
            .iter()
            .zip(tmap)
            .map(|(v, &k)| (v - raw[k].conj()).norm())
            .fold(0.0, f64::max);
        let tr = self.check(t, diag.iter().map(|&k| raw[k]).sum(), herm)?;
        let scale = 0.5 / tr;
        self.tail.push(raw.iter().zip(tmap).map(|(v, &k)| (v + raw[k].conj()) * scale).collect());
        Ok(())
    }
}

fn trajectory(model: &Model, grid: &TimeGrid, opts: IntegratorOptions, pinch: bool) -> Result<Trajectory> {
    let gen = Generator::new(model, Picture::Schrodinger);
    let rho0 = model.initial_state();
    let mut prop = Propagation::new(&gen, rho0.matrix(), grid.t_start(), opts)?;
    let mut sampler = Sampler {
        corrections: Vec::new(),
        max_tr: 0.0,
        max_herm: 0.0,
        full: Vec::new(),
        tail: Vec::new(),
    };
    let t_off = model.params.pulse_end(DRIVE_OFF_LEVEL);
    let times = grid.times();
    let split = if pinch { times.iter().position(|&t| t >= t_off).unwrap_or(times.len()) } else { times.len() };

    for &t in &times[..split] {
        prop.advance_to(t)?;
        sampler.push(t, prop.state())?;
    }
    let mut stats = prop.stats;
    let mut tail = None;
    if split < times.len() {
        let balanced = BalancedGenerator::new(model, Picture::Schrodinger)?;
        let dim = balanced.dim();
        let diag: Vec<usize> =
            balanced.support().iter().enumerate().filter(|(_, &f)| f % dim == f / dim).map(|(k, _)| k).collect();
        let start = balanced.gather(prop.state_slice());
        let mut late = Propagation::from_vec(&balanced, start, prop.time(), opts)?;
        for &t in &times[split..] {
            late.advance_to(t)?;
            sampler.push_balanced(t, late.state_slice(), &balanced, &diag)?;
        }
        stats.accepted += late.stats.accepted;
        stats.rejected += late.stats.rejected;
        stats.rhs_evals += late.stats.rhs_evals;
        tail = Some(BalancedTail::new(dim, balanced.support().to_vec(), sampler.tail));
    }

    Ok(Trajectory {
        grid: *grid,
        full: sampler.full,
        tail,
        corrections: sampler.corrections,
        max_trace_drift: sampler.max_tr,
        max_hermiticity_drift: sampler.max_herm,
        stats,
    })
}
