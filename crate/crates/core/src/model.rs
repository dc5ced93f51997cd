//! Physical parameters, the rotating-frame Hamiltonian and the Lindblad channels.
//!
//! Units: energies in μeV, times in ps. Every operator handed to the propagator
//! is divided by ħ, so Hamiltonians carry angular frequency (rad/ps) and
//! dissipator rates are in ps⁻¹.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    embed_dot_operator, embed_mode_operator, DotLevel, Ladder, Operator, Polarization, SpaceDescriptor, C64,
};

/// ħ in μeV·ps.
pub const HBAR: f64 = 658.211_956_9;

/// Ratio between the intensity FWHM and the Gaussian field width τ.
pub const FWHM_PER_TAU: f64 = 1.177;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulsePolarization {
    Horizontal,
    Diagonal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Ground,
    Biexciton,
}

/// Rates and energies in μeV, times in ps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub gamma_e_rr: f64,
    pub gamma_b_rr: f64,
    pub gamma_e_d: f64,
    pub gamma_b_d: f64,
    pub e_binding: f64,
    pub delta: f64,
    pub g_coupling: f64,
    pub kappa: f64,
    pub rabi_peak: f64,
    pub tau_fwhm: f64,
    pub t0: f64,
    pub pulse_polarization: PulsePolarization,
    pub initial_state: InitialState,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let tau_fwhm = 3.53;
        Self {
            gamma_e_rr: 1.0,
            gamma_b_rr: 2.0,
            gamma_e_d: 2.0,
            gamma_b_d: 4.0,
            e_binding: 1000.0,
            delta: 0.0,
            g_coupling: 45.0,
            kappa: 65.0,
            rabi_peak: 1000.0,
            tau_fwhm,
            t0: 4.0 * tau_fwhm,
            pulse_polarization: PulsePolarization::Horizontal,
            initial_state: InitialState::Ground,
        }
    }
}

impl PhysicalParams {
    /// Biexciton prepared at t = 0, no excitation pulse.
    pub fn biexciton_no_pulse() -> Self {
        Self {
            pulse_polarization: PulsePolarization::None,
            initial_state: InitialState::Biexciton,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma_e_rr", self.gamma_e_rr),
            ("gamma_b_rr", self.gamma_b_rr),
            ("gamma_e_d", self.gamma_e_d),
            ("gamma_b_d", self.gamma_b_d),
            ("e_binding", self.e_binding),
            ("delta", self.delta),
            ("g_coupling", self.g_coupling),
            ("kappa", self.kappa),
            ("rabi_peak", self.rabi_peak),
            ("tau_fwhm", self.tau_fwhm),
            ("t0", self.t0),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
        }
        for (name, v) in &fields[..4] {
            if *v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.kappa < 0.0 {
            return Err(Error::InvalidParams(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.e_binding <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "e_binding must be > 0, got {}",
                self.e_binding
            )));
        }
        if self.delta.abs() >= self.e_binding {
            return Err(Error::InvalidParams(format!(
                "|delta| = {} must be below e_binding = {}",
                self.delta.abs(),
                self.e_binding
            )));
        }
        if self.pulse_polarization != PulsePolarization::None && self.tau_fwhm <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "tau_fwhm must be > 0 with a pulse, got {}",
                self.tau_fwhm
            )));
        }
        Ok(())
    }

    /// Gaussian field width τ = τ_FWHM / 1.177.
    pub fn tau(&self) -> f64 {
        self.tau_fwhm / FWHM_PER_TAU
    }

    /// δ_H = (E_B/ħ + δ)/2 in rad/ps.
    pub fn detuning_h(&self) -> f64 {
        0.5 * (self.e_binding + self.delta) / HBAR
    }

    /// δ_V = (E_B/ħ − δ)/2 in rad/ps.
    pub fn detuning_v(&self) -> f64 {
        0.5 * (self.e_binding - self.delta) / HBAR
    }

    /// Latest time after which the drive envelope stays below `rel` of its peak.
    pub fn pulse_end(&self, rel: f64) -> f64 {
        match self.pulse_polarization {
            PulsePolarization::None => f64::NEG_INFINITY,
            _ => self.t0 + self.tau() * (-rel.ln()).sqrt(),
        }
    }
}

/// Rabi frequency Ω(t) in rad/ps; zero when there is no pulse.
pub fn pulse_envelope(t: f64, params: &PhysicalParams) -> f64 {
    if params.pulse_polarization == PulsePolarization::None || params.rabi_peak == 0.0 {
        return 0.0;
    }
    let x = (t - params.t0) / params.tau();
    params.rabi_peak / HBAR * (-x * x).exp()
}

/// One Lindblad channel: `rate · (A ρ A† − ½{A†A, ρ})`, rate in ps⁻¹.
#[derive(Debug, Clone)]
pub struct Dissipator {
    pub rate: f64,
    pub jump: Operator,
    pub label: &'static str,
}

/// Time-independent part of H/ħ: dot energies plus cavity coupling.
pub fn static_hamiltonian(params: &PhysicalParams, space: &SpaceDescriptor) -> Operator {
    let mut h = embed_dot_operator(space, DotLevel::H, DotLevel::H).scale(C64::new(params.detuning_h(), 0.0));
    h = h.add(&embed_dot_operator(space, DotLevel::V, DotLevel::V).scale(C64::new(params.detuning_v(), 0.0)));

    let g = params.g_coupling / HBAR;
    if g != 0.0 {
        let mut coupling = Operator::zeros(space.dim());
        for (pol, exciton) in [(Polarization::H, DotLevel::H), (Polarization::V, DotLevel::V)] {
            let create = embed_mode_operator(space, pol, Ladder::Create);
            let lower = embed_dot_operator(space, DotLevel::G, exciton);
            let upper = embed_dot_operator(space, exciton, DotLevel::B);
            coupling = coupling.add(&create.mul(&lower)).add(&create.mul(&upper));
        }
        h = h.add(&coupling.add(&coupling.dagger()).scale(C64::new(g, 0.0)));
    }
    h
}

/// Drive coupling shape `D` such that the drive term of H/ħ is Ω(t)·D.
pub fn drive_operator(params: &PhysicalParams, space: &SpaceDescriptor) -> Operator {
    let ladder = |exciton: DotLevel| {
        embed_dot_operator(space, DotLevel::G, exciton).add(&embed_dot_operator(space, exciton, DotLevel::B))
    };
    let (shape, amp) = match params.pulse_polarization {
        PulsePolarization::None => return Operator::zeros(space.dim()),
        PulsePolarization::Horizontal => (ladder(DotLevel::H), 0.5),
        PulsePolarization::Diagonal => (
            ladder(DotLevel::H).add(&ladder(DotLevel::V)),
            0.5 / std::f64::consts::SQRT_2,
        ),
    };
    shape.add(&shape.dagger()).scale(C64::new(amp, 0.0))
}

/// Rotating-frame Hamiltonian divided by ħ (rad/ps) at time `t`.
pub fn hamiltonian_at(t: f64, params: &PhysicalParams, space: &SpaceDescriptor) -> Operator {
    let h = static_hamiltonian(params, space);
    let omega = pulse_envelope(t, params);
    if omega == 0.0 {
        return h;
    }
    h.add(&drive_operator(params, space).scale(C64::new(omega, 0.0)))
}

/// The nine Lindblad channels: four radiative, three dephasing, two cavity.
pub fn build_dissipators(params: &PhysicalParams, space: &SpaceDescriptor) -> Vec<Dissipator> {
    use DotLevel::*;
    let dot = |to, from| embed_dot_operator(space, to, from);
    let mode = |pol| embed_mode_operator(space, pol, Ladder::Annihilate);
    vec![
        Dissipator { rate: params.gamma_b_rr / HBAR, jump: dot(H, B), label: "rr |H><B|" },
        Dissipator { rate: params.gamma_b_rr / HBAR, jump: dot(V, B), label: "rr |V><B|" },
        Dissipator { rate: params.gamma_e_rr / HBAR, jump: dot(G, H), label: "rr |G><H|" },
        Dissipator { rate: params.gamma_e_rr / HBAR, jump: dot(G, V), label: "rr |G><V|" },
        Dissipator { rate: params.gamma_b_d / HBAR, jump: dot(B, B), label: "deph |B><B|" },
        Dissipator { rate: params.gamma_e_d / HBAR, jump: dot(H, H), label: "deph |H><H|" },
        Dissipator { rate: params.gamma_e_d / HBAR, jump: dot(V, V), label: "deph |V><V|" },
        Dissipator { rate: params.kappa / HBAR, jump: mode(Polarization::H), label: "cav a_H" },
        Dissipator { rate: params.kappa / HBAR, jump: mode(Polarization::V), label: "cav a_V" },
    ]
}

/// Everything the propagator needs for one parameter point.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: PhysicalParams,
    pub space: SpaceDescriptor,
    pub static_h: Operator,
    pub drive: Operator,
    pub dissipators: Vec<Dissipator>,
}

impl Model {
    pub fn new(params: PhysicalParams, space: SpaceDescriptor) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            static_h: static_hamiltonian(&params, &space),
            drive: drive_operator(&params, &space),
            dissipators: build_dissipators(&params, &space),
            params,
            space,
        })
    }

    pub fn hamiltonian_at(&self, t: f64) -> Operator {
        let omega = pulse_envelope(t, &self.params);
        if omega == 0.0 {
            return self.static_h.clone();
        }
        self.static_h.add(&self.drive.scale(C64::new(omega, 0.0)))
    }

    pub fn envelope(&self, t: f64) -> f64 {
        pulse_envelope(t, &self.params)
    }

    pub fn initial_state(&self) -> crate::hilbert::DensityMatrix {
        let level = match self.params.initial_state {
            InitialState::Ground => DotLevel::G,
            InitialState::Biexciton => DotLevel::B,
        };
        self.space
            .pure_state(crate::hilbert::BasisState::new(level, 0, 0))
            .expect("zero-photon state always representable")
    }
}
