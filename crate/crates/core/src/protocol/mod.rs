//! Three-stage entanglement protocol.
//!
//! 1. Qubit A interacts with chain spin `S_A` while the rest of the chain is
//!    frozen; the pair evolves exactly.
//! 2. The coupling is off and the chain evolves semiclassically: every
//!    quadrature node `Ω_k` for `S_A` seeds a classical trajectory, and the
//!    chain state is the weighted superposition of the corresponding
//!    product coherent states.
//! 3. Qubit B interacts with `S_B`; the reduced state of `(A, S_B, B)`
//!    evolves exactly and the A–B concurrence is tracked.
//!
//! Qubit basis: index 0 is `σ = +1` (spin up, the state written `|1⟩`),
//! index 1 is `σ = −1`.

mod stage1;
mod stage2;
mod stage3;

pub use stage1::{
    build_f_table, qubit_spin_hamiltonian, select_t1, stage1_evolve, FTable, StageOne, StageOneResult,
};
pub use stage2::{
    pair_overlap_product, site_density_matrices, site_density_matrix, site_entropy_profile, stage2_bundle,
    BundleTrajectories, Snapshot,
};
pub use stage3::{
    concurrence_scan, select_t2, stage3_hamiltonian, stage3_evolve, stage3_initial_state, two_qubit_state,
    ConcurrenceSample,
};

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::chain::{tw_soliton_config, ChainConfig, ChainError, SolitonParams, MAX_STEP};
use crate::numcore::NumError;
use crate::scs::{ScsError, SphereDirection, SpinMagnitude};

/// Time-scale ratio above which the frozen-chain approximation is flagged.
pub const TIMESCALE_WARNING: f64 = 0.1;

/// Row-block size of the parallel pair sums. Fixed so that the summation
/// order never depends on the number of worker threads.
pub(crate) const ROW_CHUNK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Scs(#[from] ScsError),
    #[error("invalid protocol configuration: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("time {0} is not among the bundle sample times")]
    MissingSample(f64),
    #[error("grid spin 2S={grid} does not match configured 2S={config}")]
    SpinMismatch { grid: u32, config: u32 },
    #[error("soliton did not reach site {site} within t - t1 = {limit}")]
    NoArrival { site: usize, limit: f64 },
    #[error("assembled density matrix has trace {trace:e} and cannot be normalized")]
    NonNormalizable { trace: f64 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Normalized single-qubit state, `[amp(σ=+1), amp(σ=−1)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState([Complex64; 2]);

impl QubitState {
    pub const UP: QubitState = QubitState([Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
    pub const DOWN: QubitState = QubitState([Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);

    pub fn new(up: Complex64, down: Complex64) -> Result<Self, ProtocolError> {
        let norm = (up.norm_sqr() + down.norm_sqr()).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("qubit", "zero or non-finite amplitudes"));
        }
        Ok(Self([up / norm, down / norm]))
    }

    pub fn amplitudes(&self) -> [Complex64; 2] {
        self.0
    }

    /// `exp(−i h σ^z t)|q⟩`.
    pub fn precessed(&self, h: f64, t: f64) -> Self {
        Self([
            self.0[0] * Complex64::from_polar(1.0, -h * t),
            self.0[1] * Complex64::from_polar(1.0, h * t),
        ])
    }
}

/// σ eigenvalue for qubit basis index 0 or 1.
#[inline]
pub(crate) fn sigma_value(index: usize) -> f64 {
    if index == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Physical and numerical parameters of a run. Times are in units of
/// `(JS)^-1`, couplings and fields in units of `JS`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub spin: SpinMagnitude,
    pub n_sites: usize,
    pub site_a: usize,
    pub site_b: usize,
    pub g: f64,
    pub field_a: f64,
    pub field_b: f64,
    pub soliton: SolitonParams,
    /// Time at which the soliton is centred on `site_a` and stage 1 starts.
    pub t0: f64,
    /// Fixed end of stage 1; `None` selects it by maximizing the A–S_A entropy.
    pub t1: Option<f64>,
    /// Fixed end of stage 2; `None` uses the measured soliton arrival at `site_b`.
    pub t2: Option<f64>,
    pub t1_window: f64,
    pub t1_step: f64,
    pub t3_window: f64,
    pub t3_step: f64,
    pub dt: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub qubit_a: QubitState,
    pub qubit_b: QubitState,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let soliton = SolitonParams::from_length(PI / 4.0, 10.0).expect("valid default soliton");
        let site_a = 40;
        Self {
            spin: SpinMagnitude::new(10).expect("valid spin"),
            n_sites: 256,
            site_a,
            site_b: 200,
            g: 1.0,
            field_a: 0.25,
            field_b: 0.25,
            soliton,
            t0: site_a as f64 / soliton.velocity,
            t1: None,
            t2: None,
            t1_window: 50.0,
            t1_step: 0.01,
            t3_window: 20.0,
            t3_step: 0.01,
            dt: 0.01,
            n_theta: 24,
            n_phi: 24,
            qubit_a: QubitState::UP,
            qubit_b: QubitState::UP,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.site_a >= self.n_sites {
            return Err(invalid("n_A", format!("{} outside chain of {} sites", self.site_a, self.n_sites)));
        }
        if self.site_b >= self.n_sites {
            return Err(invalid("n_B", format!("{} outside chain of {} sites", self.site_b, self.n_sites)));
        }
        if self.site_a >= self.site_b {
            return Err(invalid("n_B", format!("n_A = {} must be smaller than n_B = {}", self.site_a, self.site_b)));
        }
        let required = (8.0 * self.soliton.lambda).ceil() as usize;
        if self.n_sites < required {
            return Err(invalid("n_sites", format!("need at least {required} sites for the soliton")));
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return Err(invalid("g", "must be finite and non-negative"));
        }
        for (field, v) in [("h_A", self.field_a), ("h_B", self.field_b), ("t0", self.t0)] {
            if !v.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        if !(self.dt > 0.0 && self.dt <= MAX_STEP) {
            return Err(invalid("dt", format!("must lie in (0, {MAX_STEP}]")));
        }
        if self.n_theta < 2 || self.n_phi < 2 {
            return Err(invalid("n_theta", "quadrature needs at least 2x2 nodes"));
        }
        for (field, v) in [
            ("t1_window", self.t1_window),
            ("t1_step", self.t1_step),
            ("t3_window", self.t3_window),
            ("t3_step", self.t3_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(field, "must be positive"));
            }
        }
        if let Some(t1) = self.t1 {
            if !(t1 >= self.t0) {
                return Err(invalid("t1", format!("t1 = {t1} precedes t0 = {}", self.t0)));
            }
        }
        if let (Some(t2), Some(t1)) = (self.t2, self.t1) {
            if !(t2 >= t1) {
                return Err(invalid("t2", format!("t2 = {t2} precedes t1 = {t1}")));
            }
        }
        if let (Some(t2), None) = (self.t2, self.t1) {
            if !(t2 >= self.t0) {
                return Err(invalid("t2", format!("t2 = {t2} precedes t0 = {}", self.t0)));
            }
        }
        Ok(())
    }

    /// `(J/g) h sin 2β` with `J = 1/S` in units where `JS = 1`.
    pub fn timescale_ratio(&self) -> f64 {
        self.soliton.h * (2.0 * self.soliton.beta).sin() / (self.g * self.spin.s())
    }

    /// Human-readable warnings about approximations that are being stretched.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let ratio = self.timescale_ratio();
        if !(ratio < TIMESCALE_WARNING) {
            out.push(format!(
                "qubit-spin time scale is not well separated from the soliton time scale: (J/g) h sin2b = {ratio:.4}"
            ));
        }
        if self.soliton.continuum_warning {
            out.push(format!(
                "soliton length {:.3} is below 3 sites; the continuum profile is only approximate",
                self.soliton.lambda
            ));
        }
        out
    }

    /// Chain configuration at `t0`, with the soliton centred on `site_a`.
    pub fn initial_chain(&self) -> Result<ChainConfig, ProtocolError> {
        let offset = self.site_a as f64 - self.soliton.velocity * self.t0;
        Ok(tw_soliton_config(&self.soliton, self.t0, self.n_sites, offset)?)
    }

    /// `Ω⁰` of `S_A` at `t0`.
    pub fn initial_spin_a(&self) -> Result<SphereDirection, ProtocolError> {
        Ok(self.initial_chain()?.get(self.site_a))
    }

    /// Nominal stage-2 duration `(n_B − n_A)/v`.
    pub fn nominal_transit(&self) -> f64 {
        (self.site_b - self.site_a) as f64 / self.soliton.velocity
    }
}

/// Resolved stage boundaries `t0 ≤ t1 ≤ t2 < t3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl Schedule {
    pub fn new(t0: f64, t1: f64, t2: f64, t3: f64) -> Result<Self, ProtocolError> {
        if !(t0 <= t1 && t1 <= t2 && t2 < t3) {
            return Err(invalid(
                "schedule",
                format!("need t0 <= t1 <= t2 < t3, got {t0}, {t1}, {t2}, {t3}"),
            ));
        }
        Ok(Self { t0, t1, t2, t3 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ProtocolConfig::default();
        cfg.validate().unwrap();
        assert!((cfg.t0 - 200.0).abs() < 1e-9);
        assert!((cfg.nominal_transit() - 800.0).abs() < 1e-9);
        assert!(cfg.warnings().is_empty());
        let omega = cfg.initial_spin_a().unwrap();
        assert!((omega.theta() - PI / 2.0).abs() < 1e-12);
        assert!(omega.phi().abs() < 1e-9 || (omega.phi() - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn invalid_sites() {
        let cfg = ProtocolConfig {
            site_a: 300,
            ..ProtocolConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ProtocolError::Invalid { field: "n_A", .. })));
        let cfg = ProtocolConfig {
            site_b: 30,
            ..ProtocolConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn timescale_diagnostic() {
        let cfg = ProtocolConfig::default();
        assert!((cfg.timescale_ratio() - 0.004).abs() < 1e-12);
        let weak = ProtocolConfig {
            g: 0.01,
            ..ProtocolConfig::default()
        };
        assert_eq!(weak.warnings().len(), 1);
    }

    #[test]
    fn qubit_normalization() {
        let q = QubitState::new(Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)).unwrap();
        assert!((q.amplitudes()[0].re - 0.6).abs() < 1e-15);
        assert!(QubitState::new(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn schedule_ordering() {
        assert!(Schedule::new(0.0, 1.0, 2.0, 3.0).is_ok());
        assert!(Schedule::new(0.0, 0.0, 2.0, 3.0).is_ok());
        assert!(Schedule::new(0.0, 2.0, 1.0, 3.0).is_err());
        assert!(Schedule::new(0.0, 1.0, 2.0, 2.0).is_err());
    }
}
