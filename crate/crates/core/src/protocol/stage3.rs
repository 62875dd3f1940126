//! Stage 3: qubit B coupled to the chain spin reached by the soliton.

use num_complex::Complex64;

use super::stage1::qubit_phase;
use super::stage2::{pair_sum, SnapshotFactors};
use super::{BundleTrajectories, FTable, ProtocolConfig, ProtocolError};
use crate::chain::{soliton_center, ChainIntegrator};
use crate::entanglement::{wootters_concurrence, ConcurrenceResult};
use crate::numcore::{partial_trace_matrix, tensor_product, ComplexMatrix, DensityMatrix, NumError, Propagator};
use crate::scs::{scs_amplitudes, spin_operators};

/// Interval between soliton-centre probes when measuring the arrival time.
const ARRIVAL_PROBE: f64 = 1.0;

/// Time `t2 ≥ t1` at which the centre of the unperturbed soliton, released
/// at `t1` from its `t0` position, crosses `n_B`.
pub fn select_t2(cfg: &ProtocolConfig, t1: f64) -> Result<f64, ProtocolError> {
    let n = cfg.n_sites as f64;
    let limit = 4.0 * cfg.nominal_transit() + 10.0 * ARRIVAL_PROBE;
    let mut integrator = ChainIntegrator::new(&cfg.initial_chain()?, cfg.soliton.h, cfg.dt)?;
    let start = soliton_center(&integrator.config())?;
    let target = cfg.site_b as f64 - start;
    let mut travelled = 0.0;
    let mut previous = start;
    let mut step = 0usize;
    loop {
        let tau = (step + 1) as f64 * ARRIVAL_PROBE;
        if tau > limit {
            return Err(ProtocolError::NoArrival {
                site: cfg.site_b,
                limit,
            });
        }
        let center = soliton_center(&integrator.advance_to(tau)?)?;
        let delta = (center - previous + 0.5 * n).rem_euclid(n) - 0.5 * n;
        let next = travelled + delta;
        if next >= target {
            let fraction = if delta > 0.0 { (target - travelled) / delta } else { 1.0 };
            return Ok(t1 + tau - ARRIVAL_PROBE * (1.0 - fraction));
        }
        travelled = next;
        previous = center;
        step += 1;
    }
}

/// `h_A σ_A^z + g Ŝ_B·σ̂_B + h_B σ_B^z` on A ⊗ S_B ⊗ B.
pub fn stage3_hamiltonian(cfg: &ProtocolConfig) -> ComplexMatrix {
    let (sz, sp, sm) = spin_operators(cfg.spin);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let id2 = ComplexMatrix::identity(2);
    let id_s = ComplexMatrix::identity(cfg.spin.dim());
    let sigma_z = ComplexMatrix::from_real_diagonal(&[1.0, -1.0]);
    let lower = ComplexMatrix::from_vec(2, 2, vec![zero, zero, one, zero]).expect("2x2");
    let raise = ComplexMatrix::from_vec(2, 2, vec![zero, one, zero, zero]).expect("2x2");

    let coupling = &(&tensor_product(&sz, &sigma_z) + &tensor_product(&sp, &lower)) + &tensor_product(&sm, &raise);
    let spin_b = &coupling.scale(Complex64::new(cfg.g, 0.0))
        + &tensor_product(&id_s, &sigma_z).scale(Complex64::new(cfg.field_b, 0.0));
    let field_a = tensor_product(&tensor_product(&sigma_z, &id_s), &id2).scale(Complex64::new(cfg.field_a, 0.0));
    &field_a + &tensor_product(&id2, &spin_b)
}

/// State of `(A, S_B, B)` at `t2`, ordered A ⊗ S_B ⊗ B.
pub fn stage3_initial_state(
    cfg: &ProtocolConfig,
    ftable: &FTable,
    bundle: &BundleTrajectories,
    t2: f64,
) -> Result<DensityMatrix, ProtocolError> {
    let snapshot = bundle.snapshot(t2)?;
    let spin = cfg.spin;
    if ftable.grid().spin() != spin || bundle.grid().spin() != spin {
        return Err(ProtocolError::SpinMismatch {
            grid: bundle.grid().spin().two_s(),
            config: spin.two_s(),
        });
    }
    let elapsed = t2 - bundle.t1();
    let phases = [qubit_phase(cfg.field_a, elapsed, 0), qubit_phase(cfg.field_a, elapsed, 1)];
    let vectors: Vec<Vec<Complex64>> = snapshot
        .configs
        .iter()
        .zip(ftable.values())
        .map(|(config, f)| {
            let amps = scs_amplitudes(config.get(cfg.site_b), spin);
            (0..2)
                .flat_map(|sigma| {
                    let c = f[sigma] * phases[sigma];
                    amps.iter().map(move |a| c * a)
                })
                .collect()
        })
        .collect();
    let nodes = ftable.grid().nodes();
    let factors = SnapshotFactors::new(snapshot, spin);
    let history = snapshot.history_phases(spin);
    let raw = pair_sum(&factors, &[cfg.site_b], &vectors, |j, k| {
        history[j] * history[k].conj() * (nodes[j].weight * nodes[k].weight)
    })
    .remove(0);
    let a_sb = DensityMatrix::from_unnormalized(raw)?;
    let b = cfg.qubit_b.precessed(cfg.field_b, t2 - cfg.t0).amplitudes();
    let rho_b = DensityMatrix::from_pure(&b)?;
    Ok(a_sb.tensor(&rho_b))
}

/// `U ρ0 U†` with `U = exp(−i H (t − t2))`.
pub fn stage3_evolve(rho0: &DensityMatrix, cfg: &ProtocolConfig, t2: f64, t: f64) -> Result<DensityMatrix, ProtocolError> {
    check_dim(rho0, cfg)?;
    let propagator = Propagator::new(&stage3_hamiltonian(cfg))?;
    Ok(rho0.conjugate_by(&propagator.at(t - t2)))
}

fn check_dim(rho: &DensityMatrix, cfg: &ProtocolConfig) -> Result<(), ProtocolError> {
    if rho.dim() != 4 * cfg.spin.dim() {
        return Err(NumError::DimensionMismatch(format!(
            "stage-3 state has dimension {}, expected {}",
            rho.dim(),
            4 * cfg.spin.dim()
        ))
        .into());
    }
    Ok(())
}

/// Reduced state of the two qubits, ordered (A, B).
pub fn two_qubit_state(rho: &DensityMatrix) -> Result<DensityMatrix, ProtocolError> {
    let dim = rho.dim();
    if dim < 8 || dim % 4 != 0 {
        return Err(NumError::DimensionMismatch(format!(
            "expected a state on A ⊗ S_B ⊗ B, got dimension {dim}"
        ))
        .into());
    }
    let reduced = partial_trace_matrix(rho.matrix(), &[2, dim / 4, 2], &[0, 2])?;
    Ok(DensityMatrix::from_unnormalized(reduced)?)
}

/// One row of the concurrence scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcurrenceSample {
    pub t_minus_t2: f64,
    pub result: ConcurrenceResult,
}

/// A–B concurrence at `t − t2 = i·step` for `i = 0 ..= window/step`.
pub fn concurrence_scan(
    rho0: &DensityMatrix,
    cfg: &ProtocolConfig,
    window: f64,
    step: f64,
) -> Result<Vec<ConcurrenceSample>, ProtocolError> {
    check_dim(rho0, cfg)?;
    if !(window > 0.0 && step > 0.0) {
        return Err(ProtocolError::Invalid {
            field: "t3_window",
            reason: "window and step must be positive".into(),
        });
    }
    let propagator = Propagator::new(&stage3_hamiltonian(cfg))?;
    let count = (window / step + 1e-9).floor() as usize;
    (0..=count)
        .map(|i| {
            let tau = i as f64 * step;
            let rho = rho0.conjugate_by(&propagator.at(tau));
            Ok(ConcurrenceSample {
                t_minus_t2: tau,
                result: wootters_concurrence(&two_qubit_state(&rho)?)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::SolitonParams;
    use crate::numcore::hermitian_eigensystem;
    use crate::protocol::{build_f_table, select_t1, stage1_evolve, stage2_bundle};
    use crate::scs::{build_quadrature, SpinMagnitude};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_config() -> ProtocolConfig {
        let soliton = SolitonParams::from_length(std::f64::consts::FRAC_PI_4, 2.0).unwrap();
        ProtocolConfig {
            spin: SpinMagnitude::new(2).unwrap(),
            n_sites: 24,
            site_a: 4,
            site_b: 12,
            soliton,
            t0: 4.0 / soliton.velocity,
            n_theta: 8,
            n_phi: 8,
            ..ProtocolConfig::default()
        }
    }

    fn small_initial_state(cfg: &ProtocolConfig) -> (DensityMatrix, f64) {
        let (t1, _) = select_t1(cfg, 10.0, 0.05).unwrap();
        let t2 = select_t2(cfg, t1).unwrap();
        let grid = build_quadrature(cfg.n_theta, cfg.n_phi, cfg.spin).unwrap();
        let ftable = build_f_table(&stage1_evolve(cfg, t1).unwrap(), &grid).unwrap();
        let bundle = stage2_bundle(cfg, t1, &grid, &[t2]).unwrap();
        (stage3_initial_state(cfg, &ftable, &bundle, t2).unwrap(), t2)
    }

    fn random_density(n: usize, rng: &mut impl Rng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        DensityMatrix::from_unnormalized(g.matmul(&g.adjoint())).unwrap()
    }

    #[test]
    fn arrival_time_of_default_soliton() {
        let cfg = ProtocolConfig::default();
        let t1 = cfg.t0 + 10.0;
        let t2 = select_t2(&cfg, t1).unwrap();
        assert!(((t2 - t1) - cfg.nominal_transit()).abs() < 0.02 * cfg.nominal_transit());
    }

    #[test]
    fn hamiltonian_structure() {
        let cfg = small_config();
        let h = stage3_hamiltonian(&cfg);
        assert_eq!(h.rows(), 4 * cfg.spin.dim());
        assert_eq!(h.hermiticity_deviation(), 0.0);
        let decoupled = ProtocolConfig { g: 0.0, ..cfg.clone() };
        let e = hermitian_eigensystem(&stage3_hamiltonian(&decoupled)).unwrap().values;
        assert!((e[0] + cfg.field_a + cfg.field_b).abs() < 1e-12);
        assert!((e[e.len() - 1] - cfg.field_a - cfg.field_b).abs() < 1e-12);
    }

    #[test]
    fn initial_state_properties() {
        let cfg = small_config();
        let (rho0, t2) = small_initial_state(&cfg);
        assert_eq!(rho0.dim(), 4 * cfg.spin.dim());
        let ab = two_qubit_state(&rho0).unwrap();
        assert!(wootters_concurrence(&ab).unwrap().concurrence.abs() < 1e-10);
        let a = DensityMatrix::from_unnormalized(
            partial_trace_matrix(rho0.matrix(), &[2, cfg.spin.dim(), 2], &[0]).unwrap(),
        )
        .unwrap();
        assert!((a.matrix().trace().re - 1.0).abs() < 1e-12);
        for l in a.eigenvalues().unwrap() {
            assert!((-1e-12..=1.0 + 1e-12).contains(&l));
        }
        let same = stage3_evolve(&rho0, &cfg, t2, t2).unwrap();
        assert!(same.matrix().max_abs_diff(rho0.matrix()) < 1e-12);
    }

    #[test]
    fn evolution_preserves_spectrum() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho0 = random_density(4 * cfg.spin.dim(), &mut rng);
        let before = rho0.eigenvalues().unwrap();
        for t in [0.3, 4.0, 19.5] {
            let rho = stage3_evolve(&rho0, &cfg, 0.0, t).unwrap();
            assert!((rho.matrix().trace().re - 1.0).abs() < 1e-10);
            for (a, b) in rho.eigenvalues().unwrap().iter().zip(&before) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_coupling_keeps_concurrence() {
        let cfg = ProtocolConfig {
            g: 0.0,
            ..small_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho0 = random_density(4 * cfg.spin.dim(), &mut rng);
        let scan = concurrence_scan(&rho0, &cfg, 5.0, 0.5).unwrap();
        assert_eq!(scan.len(), 11);
        for s in &scan {
            assert!((s.result.concurrence - scan[0].result.concurrence).abs() < 1e-10);
        }
    }

    #[test]
    fn two_qubit_state_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_density(2, &mut rng);
        let s = random_density(5, &mut rng);
        let b = random_density(2, &mut rng);
        let ab = two_qubit_state(&a.tensor(&s).tensor(&b)).unwrap();
        assert!(ab.matrix().max_abs_diff(a.tensor(&b).matrix()) < 1e-12);
        assert!((ab.matrix().trace().re - 1.0).abs() < 1e-12);
        assert!(two_qubit_state(&DensityMatrix::maximally_mixed(6)).is_err());
    }

    #[test]
    fn two_qubit_state_brute_force_spin_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = random_density(12, &mut rng);
        let m = rho.matrix();
        let mut oracle = ComplexMatrix::zeros(4, 4);
        for a in 0..2 {
            for b in 0..2 {
                for a2 in 0..2 {
                    for b2 in 0..2 {
                        let mut sum = c(0.0, 0.0);
                        for s in 0..3 {
                            sum += m[(a * 6 + s * 2 + b, a2 * 6 + s * 2 + b2)];
                        }
                        oracle.as_mut_slice()[(a * 2 + b) * 4 + a2 * 2 + b2] = sum;
                    }
                }
            }
        }
        let ab = two_qubit_state(&rho).unwrap();
        assert!(ab.matrix().max_abs_diff(&oracle) < 1e-12);
    }
}
