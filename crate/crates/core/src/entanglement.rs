//! Von Neumann entropy and two-qubit concurrence.

use num_complex::Complex64;

use crate::numcore::{psd_sqrt, singular_values, ComplexMatrix, DensityMatrix, NumError, PSD_TOLERANCE};

/// Concurrence together with the four `μ_i` it is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcurrenceResult {
    pub concurrence: f64,
    /// Descending.
    pub mu: [f64; 4],
}

impl ConcurrenceResult {
    fn from_mu(mu: [f64; 4]) -> Self {
        Self {
            concurrence: (mu[0] - mu[1] - mu[2] - mu[3]).max(0.0),
            mu,
        }
    }
}

/// `−Σ λ log_base λ` over the spectrum of `rho`, with `0 log 0 = 0`.
pub fn von_neumann_entropy(rho: &DensityMatrix, base_dim: usize) -> Result<f64, NumError> {
    assert!(base_dim >= 2, "entropy base must be at least 2");
    let values = rho.eigenvalues()?;
    if values[0] < -PSD_TOLERANCE {
        return Err(NumError::NotPsd {
            min_eigenvalue: values[0],
        });
    }
    let ln_base = (base_dim as f64).ln();
    Ok(values
        .iter()
        .map(|&l| l.clamp(0.0, 1.0))
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln() / ln_base)
        .sum())
}

/// `σ^y ⊗ σ^y`, which is real.
fn sigma_yy() -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(4, 4);
    m[(0, 3)] = Complex64::new(-1.0, 0.0);
    m[(1, 2)] = Complex64::new(1.0, 0.0);
    m[(2, 1)] = Complex64::new(1.0, 0.0);
    m[(3, 0)] = Complex64::new(-1.0, 0.0);
    m
}

/// Spin-flipped state `(σ^y ⊗ σ^y) ρ* (σ^y ⊗ σ^y)`.
pub fn spin_flip(rho: &ComplexMatrix) -> ComplexMatrix {
    let y = sigma_yy();
    y.matmul(&rho.conj()).matmul(&y)
}

/// Wootters concurrence of a two-qubit state.
///
/// The `μ_i` are the square roots of the eigenvalues of `√ρ ρ̃ √ρ`. They are
/// obtained as the singular values of `√ρ √ρ̃`, whose Gram matrix is exactly
/// that operator, so vanishing `μ_i` come out at round-off level rather than
/// at its square root.
pub fn wootters_concurrence(rho: &DensityMatrix) -> Result<ConcurrenceResult, NumError> {
    if rho.dim() != 4 {
        return Err(NumError::DimensionMismatch(format!(
            "concurrence needs a 4x4 state, got {}x{}",
            rho.dim(),
            rho.dim()
        )));
    }
    let sqrt_rho = psd_sqrt(rho)?;
    let sqrt_tilde = spin_flip(&sqrt_rho);
    let sv = singular_values(&sqrt_rho.matmul(&sqrt_tilde))?;
    Ok(ConcurrenceResult::from_mu([sv[0], sv[1], sv[2], sv[3]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{hermitian_eigensystem, tensor_product};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bell() -> DensityMatrix {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        DensityMatrix::from_pure(&[c(r, 0.), c(0., 0.), c(0., 0.), c(r, 0.)]).unwrap()
    }

    fn werner(p: f64) -> DensityMatrix {
        let b = bell().into_matrix().scale(c(p, 0.0));
        let mixed = ComplexMatrix::identity(4).scale(c((1.0 - p) / 4.0, 0.0));
        DensityMatrix::new(&b + &mixed).unwrap()
    }

    fn random_density(n: usize, rng: &mut impl Rng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        DensityMatrix::from_unnormalized(g.matmul(&g.adjoint())).unwrap()
    }

    fn random_unitary(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let h = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .hermitian_part();
        crate::numcore::evolve_unitary(&h, rng.gen_range(0.0..3.0)).unwrap()
    }

    /// Eigenvalues of the Hermitian √ρ ρ̃ √ρ, descending: the textbook route.
    fn mu_squared_oracle(rho: &DensityMatrix) -> Vec<f64> {
        let s = psd_sqrt(rho).unwrap();
        let m = s.matmul(&spin_flip(rho.matrix())).matmul(&s);
        let mut v = hermitian_eigensystem(&m.hermitian_part()).unwrap().values;
        v.reverse();
        v
    }

    #[test]
    fn entropy_examples() {
        let pure = DensityMatrix::from_pure(&[c(0.3, 0.1), c(-0.5, 0.2), c(0.0, 0.7)]).unwrap();
        assert!(von_neumann_entropy(&pure, 3).unwrap().abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((von_neumann_entropy(&mixed, 2).unwrap() - 1.0).abs() < 1e-15);
        let d = DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[0.75, 0.25])).unwrap();
        let expected = -0.75 * 0.75f64.log2() - 0.25 * 0.25f64.log2();
        assert!((von_neumann_entropy(&d, 2).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.811278).abs() < 1e-6);
        let mm = DensityMatrix::maximally_mixed(11);
        assert!((von_neumann_entropy(&mm, 11).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn entropy_concavity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = random_density(4, &mut rng);
            let b = random_density(4, &mut rng);
            let mix = DensityMatrix::new(
                (a.matrix() + b.matrix()).scale(c(0.5, 0.0)),
            )
            .unwrap();
            let lhs = von_neumann_entropy(&mix, 4).unwrap();
            let rhs = 0.5 * von_neumann_entropy(&a, 4).unwrap() + 0.5 * von_neumann_entropy(&b, 4).unwrap();
            assert!(lhs >= rhs - 1e-12);
        }
    }

    #[test]
    fn bell_state_is_maximally_entangled() {
        let r = wootters_concurrence(&bell()).unwrap();
        assert!((r.concurrence - 1.0).abs() < 1e-10);
    }

    #[test]
    fn product_states_have_zero_concurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let a = random_density(2, &mut rng);
            let b = random_density(2, &mut rng);
            let r = wootters_concurrence(&a.tensor(&b)).unwrap();
            assert!(r.concurrence.abs() < 1e-10);
        }
        let up = DensityMatrix::from_pure(&[c(1., 0.), c(0., 0.)]).unwrap();
        let r = wootters_concurrence(&up.tensor(&up)).unwrap();
        assert_eq!(r.concurrence, 0.0);
    }

    #[test]
    fn werner_state() {
        for p in [0.2, 0.5, 0.8] {
            let r = wootters_concurrence(&werner(p)).unwrap();
            let oracle = mu_squared_oracle(&werner(p));
            let oracle_c = (oracle[0].sqrt() - oracle[1..].iter().map(|x| x.max(0.0).sqrt()).sum::<f64>()).max(0.0);
            assert!((r.concurrence - oracle_c).abs() < 1e-8);
            assert!((r.concurrence - ((3.0 * p - 1.0) / 2.0).max(0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn mu_matches_hermitian_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let rho = random_density(4, &mut rng);
            let r = wootters_concurrence(&rho).unwrap();
            let oracle = mu_squared_oracle(&rho);
            for (mu, sq) in r.mu.iter().zip(&oracle) {
                assert!((mu * mu - sq).abs() < 1e-12);
            }
            let trace = rho.matrix().matmul(&spin_flip(rho.matrix())).trace().re;
            let sum: f64 = r.mu.iter().map(|m| m * m).sum();
            assert!((sum - trace).abs() < 1e-10);
            assert!(r.mu.windows(2).all(|w| w[0] >= w[1]));
            assert!((0.0..=1.0).contains(&r.concurrence));
        }
    }

    #[test]
    fn local_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut entangled = 0;
        for _ in 0..100 {
            let psi: Vec<Complex64> = (0..4).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let pure = DensityMatrix::from_pure(&psi).unwrap().into_matrix().scale(c(0.7, 0.0));
            let noise = random_density(4, &mut rng).into_matrix().scale(c(0.3, 0.0));
            let rho = DensityMatrix::new(&pure + &noise).unwrap();
            let u = tensor_product(&random_unitary(2, &mut rng), &random_unitary(2, &mut rng));
            let a = wootters_concurrence(&rho).unwrap().concurrence;
            let b = wootters_concurrence(&rho.conjugate_by(&u)).unwrap().concurrence;
            assert!((a - b).abs() <= 1e-10);
            if a > 0.05 {
                entangled += 1;
            }
        }
        assert!(entangled > 20);
    }

    #[test]
    fn wrong_dimension() {
        assert!(wootters_concurrence(&DensityMatrix::maximally_mixed(3)).is_err());
    }
}
