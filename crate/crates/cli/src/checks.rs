//! Oracle checks shared by the `selftest` subcommand and the acceptance
//! suite. Each check compares library results against an independent
//! computation and reports the worst deviation it saw.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use qsolchain_core::chain::{chain_energy, soliton_center, total_sz, ChainConfig, ChainIntegrator, SolitonParams};
use qsolchain_core::entanglement::wootters_concurrence;
use qsolchain_core::numcore::{
    evolve_unitary, partial_trace_matrix, tensor_product, tensor_vec, ComplexMatrix, DensityMatrix,
};
use qsolchain_core::protocol::{
    build_f_table, qubit_spin_hamiltonian, site_density_matrix, stage1_evolve, stage2_bundle, stage3_initial_state,
    BundleTrajectories, FTable, ProtocolConfig, ProtocolError,
};
use qsolchain_core::scs::{build_quadrature, identity_residual, scs_amplitudes, scs_overlap, SphereDirection, SpinMagnitude};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    /// Passes when `value ≤ bound`.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self::new(name, value <= bound, format!("{value:.3e} <= {bound:.0e}"))
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_direction(rng: &mut impl Rng) -> SphereDirection {
    SphereDirection::new(rng.gen_range(-1.0f64..1.0).acos(), rng.gen_range(0.0..2.0 * PI))
}

/// Worst deviation of `|⟨Ω1|Ω2⟩|²` from `((1 + Ω1·Ω2)/2)^{2S}` over random pairs.
pub fn overlap_magnitude_error(pairs: usize, two_s_values: &[u32], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for &two_s in two_s_values {
        let s = SpinMagnitude::new(two_s).expect("positive spin");
        for _ in 0..pairs {
            let a = random_direction(&mut rng);
            let b = random_direction(&mut rng);
            let [x, y, z] = a.unit_vector();
            let [u, v, w] = b.unit_vector();
            let law = ((1.0 + x * u + y * v + z * w) / 2.0).powi(two_s as i32);
            worst = worst.max((scs_overlap(a, b, s).norm_sqr() - law).abs());
        }
    }
    worst
}

pub fn scs_checks(pairs: usize) -> Vec<Check> {
    let law = overlap_magnitude_error(pairs, &[2, 6, 10, 20], 11);
    let spin = SpinMagnitude::new(10).expect("S = 5");
    let residual = match build_quadrature(24, 24, spin) {
        Ok(grid) => identity_residual(&grid),
        Err(e) => return vec![Check::failed("quadrature identity", e)],
    };
    vec![
        Check::at_most("overlap magnitude law", law, 1e-12),
        Check::at_most("quadrature identity 24x24, S=5", residual, 1e-8),
    ]
}

/// Free-soliton run statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonRun {
    pub energy_drift: f64,
    pub sz_drift: f64,
    /// Measured velocity relative to the analytic one, minus 1.
    pub velocity_error: f64,
    /// Energy above the aligned chain relative to the analytic excess, minus 1.
    pub energy_excess_error: f64,
}

/// Releases the default soliton (`λ_β = 10`) on `n_sites` sites and runs it
/// for `duration`.
pub fn soliton_run(n_sites: usize, dt: f64, duration: f64) -> Result<SolitonRun, ProtocolError> {
    let cfg = ProtocolConfig {
        n_sites,
        dt,
        ..ProtocolConfig::default()
    };
    let p: SolitonParams = cfg.soliton;
    let initial = cfg.initial_chain()?;
    let e0 = chain_energy(&initial, p.h);
    let sz0 = total_sz(&initial);
    let mut integrator = ChainIntegrator::new(&initial, p.h, dt)?;
    let n = n_sites as f64;
    let mut previous = soliton_center(&initial)?;
    let mut travelled = 0.0;
    let mut energy_drift: f64 = 0.0;
    let mut sz_drift: f64 = 0.0;
    let probes = duration.ceil() as usize;
    for i in 1..=probes {
        let config = integrator.advance_to(duration * i as f64 / probes as f64)?;
        energy_drift = energy_drift.max((chain_energy(&config, p.h) - e0).abs());
        sz_drift = sz_drift.max((total_sz(&config) - sz0).abs());
        let center = soliton_center(&config)?;
        travelled += (center - previous + 0.5 * n).rem_euclid(n) - 0.5 * n;
        previous = center;
    }
    let excess = e0 - chain_energy(&ChainConfig::aligned(n_sites), p.h);
    Ok(SolitonRun {
        energy_drift,
        sz_drift,
        velocity_error: travelled / duration / p.velocity - 1.0,
        energy_excess_error: excess / p.energy - 1.0,
    })
}

pub fn chain_checks(duration: f64) -> Vec<Check> {
    match soliton_run(256, 0.01, duration) {
        Ok(r) => vec![
            Check::at_most("chain energy drift", r.energy_drift, 1e-6),
            Check::at_most("chain total Sz drift", r.sz_drift, 1e-8),
            Check::at_most("soliton velocity", r.velocity_error.abs(), 0.02),
            Check::at_most("soliton energy excess", r.energy_excess_error.abs(), 0.03),
        ],
        Err(e) => vec![Check::failed("chain suite", e)],
    }
}

/// `exp(−iHτ)ψ` by a truncated Taylor series on sub-steps of `dt`.
pub fn taylor_propagate(h: &ComplexMatrix, psi: &[Complex64], tau: f64, dt: f64) -> Vec<Complex64> {
    let steps = (tau / dt).ceil().max(1.0) as usize;
    let step = tau / steps as f64;
    let mut y = psi.to_vec();
    for _ in 0..steps {
        let mut term = y.clone();
        let mut sum = y.clone();
        for k in 1..=30 {
            term = h
                .mul_vec(&term)
                .into_iter()
                .map(|x| x * c(0.0, -step / k as f64))
                .collect();
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
            if term.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-18 {
                break;
            }
        }
        y = sum;
    }
    y
}

/// Largest amplitude difference between the eigendecomposition propagator
/// and the Taylor integrator at `t0 + τ` for every `τ` in `offsets`.
pub fn stage1_ode_error(cfg: &ProtocolConfig, offsets: &[f64]) -> Result<f64, ProtocolError> {
    let h = qubit_spin_hamiltonian(cfg.g, cfg.field_a, cfg.spin);
    let initial = tensor_vec(&cfg.qubit_a.amplitudes(), &scs_amplitudes(cfg.initial_spin_a()?, cfg.spin));
    let mut psi = initial;
    let mut elapsed = 0.0;
    let mut worst: f64 = 0.0;
    for &tau in offsets {
        psi = taylor_propagate(&h, &psi, tau - elapsed, 0.05);
        elapsed = tau;
        let exact = stage1_evolve(cfg, cfg.t0 + tau)?;
        let diff = exact.state().iter().zip(&psi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(worst)
}

pub fn stage1_checks(cfg: &ProtocolConfig) -> Vec<Check> {
    let run = || -> Result<Vec<Check>, ProtocolError> {
        let offsets: Vec<f64> = (1..=10).map(|i| cfg.t1_window * i as f64 / 10.0).collect();
        let ode = stage1_ode_error(cfg, &offsets)?;
        let start = stage1_evolve(cfg, cfg.t0)?.qubit_entropy()?;
        let (_, curve) = qsolchain_core::protocol::select_t1(cfg, cfg.t1_window, cfg.t1_step)?;
        let peak = curve.iter().map(|&(_, e)| e).fold(0.0, f64::max);
        Ok(vec![
            Check::at_most("stage-1 propagator vs Taylor integration", ode, 1e-8),
            Check::at_most("stage-1 entropy at t0", start, 1e-12),
            Check::new("stage-1 entropy exceeds 0.5", peak > 0.5, format!("peak {peak:.4} bits")),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::failed("stage-1 suite", e)])
}

/// Grid reconstruction of the qubit–spin state at `t` against the exact one.
pub fn representation_error(cfg: &ProtocolConfig, t: f64) -> Result<f64, ProtocolError> {
    let grid = build_quadrature(cfg.n_theta, cfg.n_phi, cfg.spin)?;
    let res = stage1_evolve(cfg, t)?;
    let table = build_f_table(&res, &grid)?;
    Ok(table.reconstructed_density().max_abs_diff(res.joint_density()?.matrix()))
}

pub fn representation_checks(cfg: &ProtocolConfig, t: f64) -> Vec<Check> {
    match representation_error(cfg, t) {
        Ok(err) => vec![Check::at_most("grid reconstruction of the stage-1 state", err, 1e-6)],
        Err(e) => vec![Check::failed("grid reconstruction", e)],
    }
}

fn werner(p: f64) -> DensityMatrix {
    let r = FRAC_1_SQRT_2;
    let bell = ComplexMatrix::outer(&[c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)], &[
        c(r, 0.0),
        c(0.0, 0.0),
        c(0.0, 0.0),
        c(r, 0.0),
    ]);
    let mixed = ComplexMatrix::identity(4).scale(c((1.0 - p) / 4.0, 0.0));
    DensityMatrix::new(&bell.scale(c(p, 0.0)) + &mixed).expect("valid Werner state")
}

fn random_unitary(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let h = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).hermitian_part();
    evolve_unitary(&h, rng.gen_range(0.0..3.0)).expect("Hermitian generator")
}

/// Largest change of the concurrence under random local unitaries.
pub fn local_unitary_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let psi: Vec<Complex64> = (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let g = ComplexMatrix::from_fn(4, 4, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let noise = DensityMatrix::from_unnormalized(g.matmul(&g.adjoint())).expect("positive");
        let pure = DensityMatrix::from_pure(&psi).expect("nonzero");
        let rho = DensityMatrix::new(&pure.into_matrix().scale(c(0.7, 0.0)) + &noise.into_matrix().scale(c(0.3, 0.0)))
            .expect("convex mixture");
        let u = tensor_product(&random_unitary(2, &mut rng), &random_unitary(2, &mut rng));
        let a = wootters_concurrence(&rho).expect("two qubits").concurrence;
        let b = wootters_concurrence(&rho.conjugate_by(&u)).expect("two qubits").concurrence;
        worst = worst.max((a - b).abs());
    }
    worst
}

pub fn concurrence_checks(samples: usize) -> Vec<Check> {
    let concurrence = |rho: &DensityMatrix| wootters_concurrence(rho).map(|r| r.concurrence).unwrap_or(f64::NAN);
    let bell = concurrence(&werner(1.0));
    let product = concurrence(&DensityMatrix::from_pure(&[c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0), c(0.0, 0.0)]).unwrap());
    let w = concurrence(&werner(0.5));
    vec![
        Check::at_most("Bell concurrence", (bell - 1.0).abs(), 1e-10),
        Check::at_most("product concurrence", product.abs(), 1e-10),
        Check::at_most("Werner p=0.5 concurrence", (w - 0.25).abs(), 1e-8),
        Check::at_most("concurrence local-unitary invariance", local_unitary_error(samples, 29), 1e-10),
    ]
}

/// Five spin-1/2 sites carrying a short soliton: small enough to hold the
/// whole chain state explicitly.
fn tiny_config() -> ProtocolConfig {
    let soliton = SolitonParams::from_length(PI / 4.0, 0.6).expect("valid soliton");
    ProtocolConfig {
        spin: SpinMagnitude::new(1).expect("spin 1/2"),
        n_sites: 5,
        site_a: 1,
        site_b: 3,
        soliton,
        t0: 1.0 / soliton.velocity,
        n_theta: 4,
        n_phi: 5,
        ..ProtocolConfig::default()
    }
}

/// `Σ_k w_k e^{−iS a_k} Σ_σ f_σ^k e^{−i h_A (t−t1) σ} |σ⟩ ⊗_l |Ω_l(t, Ω_k)⟩`
/// with `a_k` the classical action of history `k`.
fn explicit_state(cfg: &ProtocolConfig, ftable: &FTable, bundle: &BundleTrajectories, t: f64) -> Result<Vec<Complex64>, ProtocolError> {
    let snap = bundle.snapshot(t)?;
    let elapsed = t - bundle.t1();
    let mut psi = vec![Complex64::new(0.0, 0.0); 2 << cfg.n_sites];
    for (k, node) in ftable.grid().nodes().iter().enumerate() {
        let f = ftable.get(k);
        let action = cfg.spin.s() * snap.actions[k];
        let mut term = vec![
            f[0] * Complex64::from_polar(node.weight, -cfg.field_a * elapsed - action),
            f[1] * Complex64::from_polar(node.weight, cfg.field_a * elapsed - action),
        ];
        for l in 0..cfg.n_sites {
            term = tensor_vec(&term, &scs_amplitudes(snap.configs[k].get(l), cfg.spin));
        }
        for (p, x) in psi.iter_mut().zip(term) {
            *p += x;
        }
    }
    Ok(psi)
}

/// Largest deviation of the pair-overlap reduced states (every site, and the
/// stage-3 initial state) from partial traces of the explicit chain state.
pub fn full_state_error() -> Result<f64, ProtocolError> {
    let cfg = tiny_config();
    let t1 = cfg.t0 + 2.0;
    let t = t1 + 3.0;
    let grid = build_quadrature(cfg.n_theta, cfg.n_phi, cfg.spin)?;
    let ftable = build_f_table(&stage1_evolve(&cfg, t1)?, &grid)?;
    let bundle = stage2_bundle(&cfg, t1, &grid, &[t])?;
    let psi = explicit_state(&cfg, &ftable, &bundle, t)?;
    let full = ComplexMatrix::outer(&psi, &psi);
    let dims = vec![2; cfg.n_sites + 1];
    let mut worst: f64 = 0.0;
    for n in 0..cfg.n_sites {
        let exact = DensityMatrix::from_unnormalized(partial_trace_matrix(&full, &dims, &[n + 1])?)?;
        let rho = site_density_matrix(&cfg, &ftable, &bundle, n, t)?;
        worst = worst.max(rho.matrix().max_abs_diff(exact.matrix()));
    }
    let a_sb = DensityMatrix::from_unnormalized(partial_trace_matrix(&full, &dims, &[0, cfg.site_b + 1])?)?;
    let b = cfg.qubit_b.precessed(cfg.field_b, t - cfg.t0).amplitudes();
    let expected = a_sb.tensor(&DensityMatrix::from_pure(&b)?);
    let rho3 = stage3_initial_state(&cfg, &ftable, &bundle, t)?;
    Ok(worst.max(rho3.matrix().max_abs_diff(expected.matrix())))
}

pub fn full_state_checks() -> Vec<Check> {
    match full_state_error() {
        Ok(err) => vec![Check::at_most("reduced states vs explicit chain state", err, 1e-12)],
        Err(e) => vec![Check::failed("explicit chain state", e)],
    }
}

/// The quick oracle suite run by `selftest`.
pub fn selftest_checks() -> Vec<Check> {
    let cfg = ProtocolConfig::default();
    let mut out = scs_checks(200);
    out.extend(chain_checks(100.0));
    out.extend(stage1_checks(&cfg));
    out.extend(representation_checks(&cfg, cfg.t0 + 13.7));
    out.extend(concurrence_checks(50));
    out.extend(full_state_checks());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_matches_closed_form() {
        let h = ComplexMatrix::from_real_diagonal(&[0.5, -1.25]);
        let psi = taylor_propagate(&h, &[c(1.0, 0.0), c(0.0, 1.0)], 7.3, 0.05);
        assert!((psi[0] - Complex64::from_polar(1.0, -0.5 * 7.3)).norm() < 1e-13);
        assert!((psi[1] - c(0.0, 1.0) * Complex64::from_polar(1.0, 1.25 * 7.3)).norm() < 1e-13);
    }

    #[test]
    fn checks_report_failures() {
        assert!(!Check::at_most("x", 2.0, 1.0).passed);
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
        assert!(Check::at_most("x", 1.0, 1.0).passed);
    }
}
