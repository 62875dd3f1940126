//! Stage 1: qubit A coupled to a single chain spin.

use num_complex::Complex64;

use super::{sigma_value, ProtocolConfig, ProtocolError};
use crate::entanglement::von_neumann_entropy;
use crate::numcore::{partial_trace_matrix, tensor_product, tensor_vec, ComplexMatrix, DensityMatrix, Propagator};
use crate::scs::{scs_amplitudes, spin_operators, QuadratureGrid, SpinMagnitude};

/// `g(Ŝ^zσ^z + ½(Ŝ⁺σ⁻ + Ŝ⁻σ⁺)) + hq σ^z ⊗ I` on qubit ⊗ spin.
pub fn qubit_spin_hamiltonian(g: f64, hq: f64, s: SpinMagnitude) -> ComplexMatrix {
    let (sz, sp, sm) = spin_operators(s);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let sigma_z = ComplexMatrix::from_real_diagonal(&[1.0, -1.0]);
    // ½σ⁻ = |↓⟩⟨↑| and ½σ⁺ = |↑⟩⟨↓| in the (σ=+1, σ=−1) basis.
    let lower = ComplexMatrix::from_vec(2, 2, vec![zero, zero, one, zero]).expect("2x2");
    let raise = ComplexMatrix::from_vec(2, 2, vec![zero, one, zero, zero]).expect("2x2");
    let coupling = &(&tensor_product(&sigma_z, &sz) + &tensor_product(&lower, &sp)) + &tensor_product(&raise, &sm);
    let field = tensor_product(&sigma_z, &ComplexMatrix::identity(s.dim()));
    &coupling.scale(Complex64::new(g, 0.0)) + &field.scale(Complex64::new(hq, 0.0))
}

/// Exact stage-1 evolution, diagonalized once.
#[derive(Debug, Clone)]
pub struct StageOne {
    spin: SpinMagnitude,
    t0: f64,
    initial: Vec<Complex64>,
    propagator: Propagator,
}

impl StageOne {
    pub fn new(cfg: &ProtocolConfig) -> Result<Self, ProtocolError> {
        let omega = cfg.initial_spin_a()?;
        let initial = tensor_vec(&cfg.qubit_a.amplitudes(), &scs_amplitudes(omega, cfg.spin));
        let h = qubit_spin_hamiltonian(cfg.g, cfg.field_a, cfg.spin);
        Ok(Self {
            spin: cfg.spin,
            t0: cfg.t0,
            initial,
            propagator: Propagator::new(&h)?,
        })
    }

    /// State at absolute time `t ≥ t0`.
    pub fn at(&self, t: f64) -> StageOneResult {
        StageOneResult {
            spin: self.spin,
            time: t,
            state: self.propagator.apply(t - self.t0, &self.initial),
        }
    }
}

/// Joint state of qubit A and `S_A`, components `c_{σm}` at index `σ·(2S+1) + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneResult {
    spin: SpinMagnitude,
    time: f64,
    state: Vec<Complex64>,
}

impl StageOneResult {
    pub fn from_state(spin: SpinMagnitude, time: f64, state: Vec<Complex64>) -> Result<Self, ProtocolError> {
        if state.len() != 2 * spin.dim() {
            return Err(ProtocolError::SpinMismatch {
                grid: spin.two_s(),
                config: (state.len() / 2).saturating_sub(1) as u32,
            });
        }
        Ok(Self { spin, time, state })
    }

    pub fn spin(&self) -> SpinMagnitude {
        self.spin
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn state(&self) -> &[Complex64] {
        &self.state
    }

    /// `c_{σm}` with `sigma` the qubit basis index and `m` the spin basis index.
    pub fn coefficient(&self, sigma: usize, m: usize) -> Complex64 {
        self.state[sigma * self.spin.dim() + m]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.state.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn joint_density(&self) -> Result<DensityMatrix, ProtocolError> {
        Ok(DensityMatrix::from_pure(&self.state)?)
    }

    pub fn qubit_density(&self) -> Result<DensityMatrix, ProtocolError> {
        let pure = ComplexMatrix::outer(&self.state, &self.state);
        let reduced = partial_trace_matrix(&pure, &[2, self.spin.dim()], &[0])?;
        Ok(DensityMatrix::from_unnormalized(reduced)?)
    }

    pub fn spin_density(&self) -> Result<DensityMatrix, ProtocolError> {
        let pure = ComplexMatrix::outer(&self.state, &self.state);
        let reduced = partial_trace_matrix(&pure, &[2, self.spin.dim()], &[1])?;
        Ok(DensityMatrix::from_unnormalized(reduced)?)
    }

    /// Entanglement between qubit A and `S_A`, in bits.
    pub fn qubit_entropy(&self) -> Result<f64, ProtocolError> {
        Ok(von_neumann_entropy(&self.qubit_density()?, 2)?)
    }
}

pub fn stage1_evolve(cfg: &ProtocolConfig, t: f64) -> Result<StageOneResult, ProtocolError> {
    if !(t >= cfg.t0) {
        return Err(ProtocolError::Invalid {
            field: "t",
            reason: format!("stage 1 starts at t0 = {}, asked for {t}", cfg.t0),
        });
    }
    Ok(StageOne::new(cfg)?.at(t))
}

/// Scans `[t0, t0 + window]` in steps of `step` and returns the first time of
/// maximal qubit entropy together with the whole `(t, entropy)` curve.
pub fn select_t1(cfg: &ProtocolConfig, window: f64, step: f64) -> Result<(f64, Vec<(f64, f64)>), ProtocolError> {
    if !(window > 0.0 && step > 0.0) {
        return Err(ProtocolError::Invalid {
            field: "t1_window",
            reason: "window and step must be positive".into(),
        });
    }
    let stage = StageOne::new(cfg)?;
    let count = (window / step + 1e-9).floor() as usize;
    let mut curve = Vec::with_capacity(count + 1);
    let mut best = (cfg.t0, f64::NEG_INFINITY);
    for i in 0..=count {
        let t = cfg.t0 + i as f64 * step;
        let e = stage.at(t).qubit_entropy()?;
        if e > best.1 {
            best = (t, e);
        }
        curve.push((t, e));
    }
    Ok((best.0, curve))
}

/// `f_σ^{Ω_k} = Σ_m c_{σm} ⟨Ω_k|m⟩` on every grid node.
#[derive(Debug, Clone)]
pub struct FTable {
    grid: QuadratureGrid,
    values: Vec<[Complex64; 2]>,
}

impl FTable {
    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn values(&self) -> &[[Complex64; 2]] {
        &self.values
    }

    pub fn get(&self, node: usize) -> [Complex64; 2] {
        self.values[node]
    }

    /// `Σ_k w_k Σ_σ |f_σ^{Ω_k}|²`, the squared norm seen through the grid.
    pub fn grid_norm(&self) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(node, f)| node.weight * (f[0].norm_sqr() + f[1].norm_sqr()))
            .sum()
    }

    /// `ρ_{A,S_A} = Σ_{jk} w_j w_k f_σ^j conj(f_σ'^k) |σ⟩⟨σ'| ⊗ |Ω_j⟩⟨Ω_k|`,
    /// i.e. the outer product of `Σ_k w_k Σ_σ f_σ^k |σ⟩|Ω_k⟩` with itself.
    pub fn reconstructed_state(&self) -> Vec<Complex64> {
        let s = self.grid.spin();
        let dim = s.dim();
        let mut psi = vec![Complex64::new(0.0, 0.0); 2 * dim];
        for (node, f) in self.grid.nodes().iter().zip(&self.values) {
            let amps = scs_amplitudes(node.direction, s);
            for sigma in 0..2 {
                let coeff = f[sigma] * node.weight;
                for (m, a) in amps.iter().enumerate() {
                    psi[sigma * dim + m] += coeff * a;
                }
            }
        }
        psi
    }

    pub fn reconstructed_density(&self) -> ComplexMatrix {
        let psi = self.reconstructed_state();
        ComplexMatrix::outer(&psi, &psi)
    }
}

pub fn build_f_table(res: &StageOneResult, grid: &QuadratureGrid) -> Result<FTable, ProtocolError> {
    if grid.spin() != res.spin() {
        return Err(ProtocolError::SpinMismatch {
            grid: grid.spin().two_s(),
            config: res.spin().two_s(),
        });
    }
    let dim = res.spin().dim();
    let values = grid
        .nodes()
        .iter()
        .map(|node| {
            let amps = scs_amplitudes(node.direction, res.spin());
            let mut f = [Complex64::new(0.0, 0.0); 2];
            for (sigma, fs) in f.iter_mut().enumerate() {
                *fs = (0..dim).map(|m| res.coefficient(sigma, m) * amps[m].conj()).sum();
            }
            f
        })
        .collect();
    Ok(FTable {
        grid: grid.clone(),
        values,
    })
}

/// `e^{−i h t σ}` for qubit basis index `sigma`.
pub(crate) fn qubit_phase(h: f64, t: f64, sigma: usize) -> Complex64 {
    Complex64::from_polar(1.0, -h * t * sigma_value(sigma))
}
