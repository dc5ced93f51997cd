//! Concurrence of the two-photon matrix and cavity-induced ac-Stark shifts.

use nalgebra::{Matrix4, Schur};
use serde::Serialize;

use crate::correlations::{DiagnosticSeries, TwoPhotonMatrix};
use crate::error::{Error, Result};
use crate::hilbert::C64;
use crate::model::{PhysicalParams, PulsePolarization};

/// Imaginary parts of the spectrum above this are rejected.
pub const SPECTRUM_IMAG_FATAL: f64 = 1e-6;
/// Imaginary parts above this are logged.
pub const SPECTRUM_IMAG_WARN: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct ConcurrenceResult {
    pub concurrence: f64,
    /// Eigenvalues of `ρ T ρ* T`, decreasing, clamped at zero.
    pub eigenvalues: [f64; 4],
    /// `2|⟨HH|ρ|VV⟩|`.
    pub coherence_bound: f64,
}

fn spin_flip() -> Matrix4<C64> {
    let mut t = Matrix4::zeros();
    t[(0, 3)] = C64::new(-1.0, 0.0);
    t[(1, 2)] = C64::new(1.0, 0.0);
    t[(2, 1)] = C64::new(1.0, 0.0);
    t[(3, 0)] = C64::new(-1.0, 0.0);
    t
}

/// Wootters concurrence of a two-qubit matrix in the `HH, HV, VH, VV` basis.
pub fn concurrence_of(rho: &Matrix4<C64>) -> Result<ConcurrenceResult> {
    let t = spin_flip();
    let m = rho * t * rho.conjugate() * t;
    let norm = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diag = if norm == 0.0 {
        // the QR iteration does not terminate on an exact zero matrix
        Matrix4::<C64>::zeros().diagonal()
    } else {
        let schur = Schur::try_new(m / C64::new(norm, 0.0), f64::EPSILON, 10_000)
            .ok_or(Error::ComplexSpectrum { imag: f64::NAN })?;
        schur.unpack().1.diagonal() * C64::new(norm, 0.0)
    };
    let imag = diag.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let scale = diag.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if imag > SPECTRUM_IMAG_FATAL * scale {
        return Err(Error::ComplexSpectrum { imag });
    }
    if imag > SPECTRUM_IMAG_WARN * scale {
        log::warn!("concurrence spectrum has imaginary part {imag:.3e}");
    }
    let mut eig: [f64; 4] = std::array::from_fn(|k| diag[k].re.max(0.0));
    eig.sort_by(|a, b| b.total_cmp(a));
    // √λ_j are the singular values of √ρ T √ρ*; taking them directly avoids the
    // square-root amplification of roundoff in near-zero eigenvalues
    let root = psd_sqrt(rho);
    let mut sv: Vec<f64> = (root * t * root.conjugate()).singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let c = sv[0] - sv[1] - sv[2] - sv[3];
    Ok(ConcurrenceResult {
        concurrence: c.clamp(0.0, 1.0),
        eigenvalues: eig,
        coherence_bound: 2.0 * rho[(0, 3)].norm(),
    })
}

/// Square root of the Hermitian part of `m` with negative eigenvalues clamped.
fn psd_sqrt(m: &Matrix4<C64>) -> Matrix4<C64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let d = Matrix4::from_diagonal(&eig.eigenvalues.map(|x| C64::new(x.max(0.0).sqrt(), 0.0)));
    eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

pub fn concurrence(tp: &TwoPhotonMatrix) -> Result<ConcurrenceResult> {
    concurrence_of(&tp.matrix)
}

/// Cavity-induced ac-Stark shifts of the two excitons, in μeV.
#[derive(Debug, Clone, Serialize)]
pub struct StarkShiftSeries {
    pub times: Vec<f64>,
    pub delta_hh: Vec<f64>,
    pub delta_vv: Vec<f64>,
    pub peak_hh: f64,
    pub peak_vv: f64,
    pub window_avg_hh: f64,
    pub window_avg_vv: f64,
    /// Averaging window; the pulse FWHM window around `t0`, or the whole grid without a pulse.
    pub window: (f64, f64),
}

/// Trapezoid average of `y` over the samples with `t` inside `[a, b]`.
fn window_average(t: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= a && t[i] <= b).collect();
    match idx.len() {
        0 => 0.0,
        1 => y[idx[0]],
        _ => {
            let mut area = 0.0;
            for w in idx.windows(2) {
                area += 0.5 * (y[w[0]] + y[w[1]]) * (t[w[1]] - t[w[0]]);
            }
            area / (t[idx[idx.len() - 1]] - t[idx[0]])
        }
    }
}

pub fn stark_shift_series(diag: &DiagnosticSeries, params: &PhysicalParams) -> StarkShiftSeries {
    // 2⟨n⟩g²/δ_X with δ_X = (E_B ± δ)/2, everything in μeV
    let g2 = params.g_coupling * params.g_coupling;
    let det_h = 0.5 * (params.e_binding + params.delta);
    let det_v = 0.5 * (params.e_binding - params.delta);
    let delta_hh: Vec<f64> = diag.n_h.iter().map(|n| 2.0 * n * g2 / det_h).collect();
    let delta_vv: Vec<f64> = diag.n_v.iter().map(|n| 2.0 * n * g2 / det_v).collect();
    let peak = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let window = match params.pulse_polarization {
        PulsePolarization::None => (
            diag.times.first().copied().unwrap_or(0.0),
            diag.times.last().copied().unwrap_or(0.0),
        ),
        _ => (params.t0 - params.tau_fwhm, params.t0 + params.tau_fwhm),
    };
    StarkShiftSeries {
        peak_hh: peak(&delta_hh),
        peak_vv: peak(&delta_vv),
        window_avg_hh: window_average(&diag.times, &delta_hh, window.0, window.1),
        window_avg_vv: window_average(&diag.times, &delta_vv, window.0, window.1),
        window,
        times: diag.times.clone(),
        delta_hh,
        delta_vv,
    }
}
