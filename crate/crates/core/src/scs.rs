//! Spin coherent states of a single spin S and a product quadrature that
//! realizes their overcompleteness relation on a finite node set.
//!
//! The basis of the spin space is `|m⟩`, `m = -S, …, S`, stored in ascending
//! order: vector index `i` holds `m = -S + i`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::numcore::ComplexMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScsError {
    #[error("2S must be a positive integer, got {0}")]
    InvalidSpin(u32),
    #[error("quadrature needs n_theta >= 2 and n_phi >= 2, got {n_theta}x{n_phi}")]
    InvalidGridSize { n_theta: usize, n_phi: usize },
    #[error("quadrature node {index} has non-positive weight {weight}")]
    InvalidWeight { index: usize, weight: f64 },
}

/// Point on the unit sphere, `theta ∈ [0, π]`, `phi ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereDirection {
    theta: f64,
    phi: f64,
}

impl SphereDirection {
    pub const NORTH: SphereDirection = SphereDirection { theta: 0.0, phi: 0.0 };

    /// Clamps `theta` into `[0, π]` and reduces `phi` modulo `2π`.
    pub fn new(theta: f64, phi: f64) -> Self {
        let theta = theta.clamp(0.0, PI);
        let mut phi = phi.rem_euclid(2.0 * PI);
        if phi >= 2.0 * PI {
            phi = 0.0;
        }
        Self { theta, phi }
    }

    /// Direction of a (not necessarily normalized) Cartesian vector.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let rho = v[0].hypot(v[1]);
        Self::new(rho.atan2(v[2]), v[1].atan2(v[0]))
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn dot(&self, other: &SphereDirection) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    /// `(cos θ/2, sin θ/2, e^{iφ})`.
    #[inline]
    pub fn half_angle_factors(&self) -> (f64, f64, Complex64) {
        let (s, c) = (0.5 * self.theta).sin_cos();
        (c, s, Complex64::from_polar(1.0, self.phi))
    }
}

/// Spin quantum number, stored as the integer `2S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinMagnitude {
    two_s: u32,
}

impl SpinMagnitude {
    pub fn new(two_s: u32) -> Result<Self, ScsError> {
        if two_s == 0 {
            return Err(ScsError::InvalidSpin(two_s));
        }
        Ok(Self { two_s })
    }

    #[inline]
    pub fn two_s(&self) -> u32 {
        self.two_s
    }

    #[inline]
    pub fn s(&self) -> f64 {
        0.5 * self.two_s as f64
    }

    /// Hilbert-space dimension `2S + 1`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.two_s as usize + 1
    }

    /// `m` values in storage order.
    pub fn m_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| i as f64 - self.s()).collect()
    }
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|j| ((n - k + j) as f64 / j as f64).ln())
        .sum()
}

/// `⟨m|Ω⟩` for all `m`, ascending.
///
/// Component `m` is `√C(2S, S−m) cos^{S+m}(θ/2) sin^{S−m}(θ/2) e^{i(S−m)φ}`.
pub fn scs_amplitudes(omega: SphereDirection, s: SpinMagnitude) -> Vec<Complex64> {
    let n = s.two_s();
    let (c, sn, _) = omega.half_angle_factors();
    (0..=n)
        .map(|i| {
            let down = n - i; // S - m
            let magnitude = (0.5 * ln_binomial(n, down)).exp()
                * c.powi(i as i32)
                * sn.powi(down as i32);
            Complex64::from_polar(magnitude, down as f64 * omega.phi())
        })
        .collect()
}

/// Base of the overlap, `cos(θa/2)cos(θb/2) + sin(θa/2)sin(θb/2)e^{i(φb−φa)}`.
#[inline]
pub fn overlap_base(a: SphereDirection, b: SphereDirection) -> Complex64 {
    let (ca, sa, ua) = a.half_angle_factors();
    let (cb, sb, ub) = b.half_angle_factors();
    ua.conj() * ub * (sa * sb) + ca * cb
}

/// `⟨Ω_a|Ω_b⟩` for spin `s`.
pub fn scs_overlap(a: SphereDirection, b: SphereDirection, s: SpinMagnitude) -> Complex64 {
    overlap_base(a, b).powi(s.two_s() as i32)
}

/// `⟨Ω|Ŝ|Ω⟩ = S (sin θ cos φ, sin θ sin φ, cos θ)`.
pub fn scs_expectation(omega: SphereDirection, s: SpinMagnitude) -> [f64; 3] {
    let u = omega.unit_vector();
    [s.s() * u[0], s.s() * u[1], s.s() * u[2]]
}

/// Spin operators `(Ŝz, Ŝ+, Ŝ−)` in the ascending `m` basis.
pub fn spin_operators(s: SpinMagnitude) -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let d = s.dim();
    let sv = s.s();
    let ms = s.m_values();
    let sz = ComplexMatrix::from_real_diagonal(&ms);
    let mut splus = ComplexMatrix::zeros(d, d);
    for i in 0..d - 1 {
        let m = ms[i];
        splus[(i + 1, i)] = Complex64::new((sv * (sv + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let sminus = splus.adjoint();
    (sz, splus, sminus)
}

/// Cartesian spin operators `(Ŝx, Ŝy, Ŝz)`.
pub fn cartesian_spin_operators(s: SpinMagnitude) -> [ComplexMatrix; 3] {
    let (sz, sp, sm) = spin_operators(s);
    let sx = (&sp + &sm).scale(Complex64::new(0.5, 0.0));
    let sy = (&sp - &sm).scale(Complex64::new(0.0, -0.5));
    [sx, sy, sz]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureNode {
    pub direction: SphereDirection,
    pub weight: f64,
}

/// Weighted sphere nodes with `Σ_k w_k |Ω_k⟩⟨Ω_k| ≈ 1` and `Σ_k w_k = 2S + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<QuadratureNode>,
    spin: SpinMagnitude,
}

impl QuadratureGrid {
    /// Grid from explicit nodes. Weights must be positive.
    pub fn from_nodes(nodes: Vec<QuadratureNode>, spin: SpinMagnitude) -> Result<Self, ScsError> {
        if let Some((index, node)) = nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !(n.weight > 0.0))
        {
            return Err(ScsError::InvalidWeight {
                index,
                weight: node.weight,
            });
        }
        Ok(Self { nodes, spin })
    }

    pub fn nodes(&self) -> &[QuadratureNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spin(&self) -> SpinMagnitude {
        self.spin
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// The same grid with node order permuted: node `i` of the result is
    /// node `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            nodes: order.iter().map(|&i| self.nodes[i]).collect(),
            spin: self.spin,
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes descending.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

/// Gauss–Legendre in `cos θ` times a uniform `φ` rule.
///
/// Nodes are ordered with `θ` as the slow index and `φ = 2πj/n_phi` as the
/// fast one.
pub fn build_quadrature(n_theta: usize, n_phi: usize, s: SpinMagnitude) -> Result<QuadratureGrid, ScsError> {
    if n_theta < 2 || n_phi < 2 {
        return Err(ScsError::InvalidGridSize { n_theta, n_phi });
    }
    let gl = gauss_legendre(n_theta);
    let measure = s.dim() as f64 * (2.0 * PI / n_phi as f64) / (4.0 * PI);
    let mut nodes = Vec::with_capacity(n_theta * n_phi);
    for &(x, w) in &gl {
        let theta = x.clamp(-1.0, 1.0).acos();
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            nodes.push(QuadratureNode {
                direction: SphereDirection::new(theta, phi),
                weight: measure * w,
            });
        }
    }
    QuadratureGrid::from_nodes(nodes, s)
}

/// Max-entry norm of `Σ_k w_k |Ω_k⟩⟨Ω_k| − 1` in the `m` basis.
pub fn identity_residual(grid: &QuadratureGrid) -> f64 {
    let d = grid.spin().dim();
    let mut acc = ComplexMatrix::zeros(d, d);
    for node in grid.nodes() {
        let a = scs_amplitudes(node.direction, grid.spin());
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += a[i] * a[j].conj() * node.weight;
            }
        }
    }
    acc.max_abs_diff(&ComplexMatrix::identity(d))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn amplitudes_are_normalized(theta in 0.0..PI, phi in 0.0..(2.0 * PI), two_s in 1u32..60) {
            let s = SpinMagnitude::new(two_s).unwrap();
            let a = scs_amplitudes(SphereDirection::new(theta, phi), s);
            let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
