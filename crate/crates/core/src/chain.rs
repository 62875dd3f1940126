//! Classical ferromagnetic Heisenberg chain in a field along `ẑ`.
//!
//! Units: lattice spacing `d = 1`, frequency scale `JS = 1`. Boundary
//! conditions are periodic.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

use crate::output::fmt_f64;
use crate::scs::SphereDirection;

/// Largest integrator step accepted.
pub const MAX_STEP: f64 = 0.05;
/// Tolerance on spin components before renormalization.
const COMPONENT_SLACK: f64 = 1e-9;
/// Minimum peak of `1 − cos θ` for a configuration to count as carrying a soliton.
pub const SOLITON_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("soliton parameters out of range: {0}")]
    Domain(String),
    #[error("chain of {n_sites} sites is too short for a soliton of length {lambda:.3} (need >= {required})")]
    ChainTooShort {
        n_sites: usize,
        lambda: f64,
        required: usize,
    },
    #[error("time step {dt} outside (0, {MAX_STEP}]")]
    StepTooLarge { dt: f64 },
    #[error("spin component left the unit ball at site {site} (t = {time})")]
    NonFinite { site: usize, time: f64 },
    #[error("no soliton found: peak 1-cos(theta) = {peak:.3e}")]
    NoSoliton { peak: f64 },
    #[error("sample time {time} precedes the current integrator time {current}")]
    SampleInPast { time: f64, current: f64 },
}

/// Classical spin directions `Ω_n` for sites `n = 0 … N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    directions: Vec<SphereDirection>,
}

impl ChainConfig {
    pub fn new(directions: Vec<SphereDirection>) -> Self {
        Self { directions }
    }

    /// All spins along `+ẑ`.
    pub fn aligned(n_sites: usize) -> Self {
        Self::new(vec![SphereDirection::NORTH; n_sites])
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[SphereDirection] {
        &self.directions
    }

    pub fn get(&self, n: usize) -> SphereDirection {
        self.directions[n]
    }

    pub fn set(&mut self, n: usize, direction: SphereDirection) {
        self.directions[n] = direction;
    }

    pub fn with_site(mut self, n: usize, direction: SphereDirection) -> Self {
        self.directions[n] = direction;
        self
    }

    /// `1 − cos θ_n` for every site.
    pub fn deviation_profile(&self) -> Vec<f64> {
        self.directions.iter().map(|d| 1.0 - d.theta().cos()).collect()
    }

    /// Rigid rotation of every spin by `angle` about `ẑ`.
    pub fn rotated_about_z(&self, angle: f64) -> Self {
        Self::new(
            self.directions
                .iter()
                .map(|d| SphereDirection::new(d.theta(), d.phi() + angle))
                .collect(),
        )
    }

    /// Writes `n,theta,phi,one_minus_cos_theta` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n,theta,phi,one_minus_cos_theta")?;
        for (n, d) in self.directions.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                n,
                fmt_f64(d.theta()),
                fmt_f64(d.phi()),
                fmt_f64(1.0 - d.theta().cos())
            )?;
        }
        Ok(())
    }
}

/// Tjon–Wright soliton parameters in units `d = 1`, `JS = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonParams {
    pub beta: f64,
    pub h: f64,
    pub phi0: f64,
    /// Soliton length `1 / (√h sin β)`, in sites.
    pub lambda: f64,
    /// Velocity `2 √h cos β`, in sites per unit time.
    pub velocity: f64,
    /// Time scale `1 / (h sin 2β)`.
    pub tau: f64,
    /// Energy `8 √h sin β` in units of `JS²`.
    pub energy: f64,
    /// Set when `lambda < 3`: the continuum profile is a poor lattice soliton.
    pub continuum_warning: bool,
}

impl SolitonParams {
    /// Solves `λ = 1/(√h sin β)` for the field at fixed amplitude.
    pub fn from_length(beta: f64, lambda: f64) -> Result<Self, ChainError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(ChainError::Domain(format!("soliton length {lambda} must be positive")));
        }
        let h = 1.0 / (lambda * beta.sin()).powi(2);
        soliton_derived_params(beta, h)
    }

    pub fn with_phi0(mut self, phi0: f64) -> Self {
        self.phi0 = phi0;
        self
    }
}

pub fn soliton_derived_params(beta: f64, h: f64) -> Result<SolitonParams, ChainError> {
    if !(beta > 0.0 && beta < PI / 2.0) {
        return Err(ChainError::Domain(format!("beta = {beta} not in (0, pi/2)")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(ChainError::Domain(format!("field h = {h} must be positive")));
    }
    let rh = h.sqrt();
    let lambda = 1.0 / (rh * beta.sin());
    Ok(SolitonParams {
        beta,
        h,
        phi0: 0.0,
        lambda,
        velocity: 2.0 * rh * beta.cos(),
        tau: 1.0 / (h * (2.0 * beta).sin()),
        energy: 8.0 * rh * beta.sin(),
        continuum_warning: lambda < 3.0,
    })
}

/// Continuum one-soliton profile sampled on the lattice.
///
/// Site `n` sits at `ξ = (n − center_offset − v t)/λ`.
pub fn tw_soliton_config(
    params: &SolitonParams,
    t: f64,
    n_sites: usize,
    center_offset: f64,
) -> Result<ChainConfig, ChainError> {
    let required = (8.0 * params.lambda).ceil() as usize;
    if n_sites < required {
        return Err(ChainError::ChainTooShort {
            n_sites,
            lambda: params.lambda,
            required,
        });
    }
    let (sb, cb) = params.beta.sin_cos();
    let tb = sb / cb;
    let directions = (0..n_sites)
        .map(|n| {
            let xi = (n as f64 - center_offset - params.velocity * t) / params.lambda;
            let theta = 2.0 * (sb / xi.cosh()).asin();
            let phi = params.phi0 + xi / tb + (tb * xi.tanh()).atan();
            SphereDirection::new(theta, phi)
        })
        .collect();
    Ok(ChainConfig::new(directions))
}

/// `−Σ_n [s_n·s_{n+1} + h s_n^z]` with periodic wrap (units of `JS²`).
pub fn chain_energy(config: &ChainConfig, h: f64) -> f64 {
    let v: Vec<[f64; 3]> = config.directions.iter().map(|d| d.unit_vector()).collect();
    cartesian_energy(&v, h)
}

fn cartesian_energy(v: &[[f64; 3]], h: f64) -> f64 {
    let n = v.len();
    let mut e = 0.0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        e -= a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + h * a[2];
    }
    e
}

/// `Σ_n cos θ_n`.
pub fn total_sz(config: &ChainConfig) -> f64 {
    config.directions.iter().map(|d| d.theta().cos()).sum()
}

/// Fractional site of the maximum of `1 − cos θ_n`, from a parabola through
/// the maximal site and its two neighbours. The result lies in `[0, N)`.
pub fn soliton_center(config: &ChainConfig) -> Result<f64, ChainError> {
    let p = config.deviation_profile();
    let n = p.len();
    let (imax, &peak) = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(ChainError::NoSoliton { peak: 0.0 })?;
    if !(peak > SOLITON_THRESHOLD) {
        return Err(ChainError::NoSoliton { peak });
    }
    let left = p[(imax + n - 1) % n];
    let right = p[(imax + 1) % n];
    let curvature = left - 2.0 * peak + right;
    let offset = if curvature < 0.0 {
        (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok((imax as f64 + offset).rem_euclid(n as f64))
}

/// Fixed-step RK4 integrator for `∂_t s_n = s_n × (s_{n+1} + s_{n−1} + h ẑ)`,
/// renormalizing `|s_n| = 1` after every step.
///
/// Step `k` always lands at `k·dt` from the start, so samples requested
/// between steps are produced by a side step that does not perturb the main
/// sequence.
#[derive(Debug, Clone)]
pub struct ChainIntegrator {
    h: f64,
    dt: f64,
    steps: u64,
    phase: f64,
    state: SpinArrays,
    scratch: Rk4Scratch,
}

#[derive(Debug, Clone)]
struct SpinArrays {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl SpinArrays {
    fn zeros(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            y: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    fn from_config(config: &ChainConfig) -> Self {
        let mut s = Self::zeros(config.len());
        for (i, d) in config.directions().iter().enumerate() {
            let v = d.unit_vector();
            s.x[i] = v[0];
            s.y[i] = v[1];
            s.z[i] = v[2];
        }
        s
    }

    fn to_config(&self) -> ChainConfig {
        ChainConfig::new(
            (0..self.x.len())
                .map(|i| SphereDirection::from_vector([self.x[i], self.y[i], self.z[i]]))
                .collect(),
        )
    }

    fn vectors(&self) -> Vec<[f64; 3]> {
        (0..self.x.len()).map(|i| [self.x[i], self.y[i], self.z[i]]).collect()
    }
}

#[derive(Debug, Clone)]
struct Rk4Scratch {
    k: SpinArrays,
    acc: SpinArrays,
    stage: SpinArrays,
    terms: Vec<f64>,
}

/// Writes `s × (s_{n+1} + s_{n−1} + h ẑ)` into `out`.
#[inline(always)]
fn derivative(s: &SpinArrays, h: f64, out: &mut SpinArrays) {
    let n = s.x.len();
    let (x, y, z) = (&s.x[..n], &s.y[..n], &s.z[..n]);
    let mut edge = |i: usize, l: usize, r: usize| {
        let bx = x[l] + x[r];
        let by = y[l] + y[r];
        let bz = z[l] + z[r] + h;
        out.x[i] = y[i] * bz - z[i] * by;
        out.y[i] = z[i] * bx - x[i] * bz;
        out.z[i] = x[i] * by - y[i] * bx;
    };
    if n < 3 {
        for i in 0..n {
            edge(i, (i + n - 1) % n, (i + 1) % n);
        }
        return;
    }
    edge(0, n - 1, 1);
    edge(n - 1, n - 2, 0);

    let m = n - 2;
    let (xl, xc, xr) = (&x[..m], &x[1..m + 1], &x[2..m + 2]);
    let (yl, yc, yr) = (&y[..m], &y[1..m + 1], &y[2..m + 2]);
    let (zl, zc, zr) = (&z[..m], &z[1..m + 1], &z[2..m + 2]);
    let ox = &mut out.x[1..m + 1];
    let oy = &mut out.y[1..m + 1];
    let oz = &mut out.z[1..m + 1];
    for i in 0..m {
        let bx = xl[i] + xr[i];
        let by = yl[i] + yr[i];
        let bz = zl[i] + zr[i] + h;
        ox[i] = yc[i] * bz - zc[i] * by;
        oy[i] = zc[i] * bx - xc[i] * bz;
        oz[i] = xc[i] * by - yc[i] * bx;
    }
}

/// `acc = w_acc·acc + w_k·k` (or `acc = k` when `first`) and `stage = base + c·k`.
#[inline(always)]
fn accumulate(acc: &mut [f64], stage: &mut [f64], base: &[f64], k: &[f64], first: bool, c: f64) {
    let n = k.len();
    let (acc, stage, base) = (&mut acc[..n], &mut stage[..n], &base[..n]);
    if first {
        for i in 0..n {
            acc[i] = k[i];
            stage[i] = base[i] + c * k[i];
        }
    } else {
        for i in 0..n {
            acc[i] += 2.0 * k[i];
            stage[i] = base[i] + c * k[i];
        }
    }
}

/// Largest `|tan|` of a per-site step phase evaluated by the odd series.
const SERIES_LIMIT: f64 = 0.02;

/// Sum in four interleaved lanes, so the loop vectorizes while the
/// summation order stays fixed.
#[inline(always)]
fn lane_sum(terms: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let chunks = terms.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for j in 0..4 {
            lanes[j] += c[j];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `Σ_n 2 arg⟨Ω_n(a)|Ω_n(b)⟩^{1/2S}`: the geometric phase `∫ Σ (1 − cos θ) dφ`
/// along the geodesic chords between two nearby states, in the gauge of
/// [`scs_amplitudes`].
///
/// [`scs_amplitudes`]: crate::scs::scs_amplitudes
#[inline(always)]
fn step_phase(a: &SpinArrays, b: &SpinArrays, terms: &mut [f64]) -> f64 {
    let n = a.x.len();
    let (ax, ay, az) = (&a.x[..n], &a.y[..n], &a.z[..n]);
    let (bx, by, bz) = (&b.x[..n], &b.y[..n], &b.z[..n]);
    let terms = &mut terms[..n];
    let mut series = true;
    for i in 0..n {
        let num = ax[i] * by[i] - ay[i] * bx[i];
        let den = (1.0 + az[i]) * (1.0 + bz[i]) + ax[i] * bx[i] + ay[i] * by[i];
        let r = num / den;
        let r2 = r * r;
        series &= (den > 0.0) & (r.abs() < SERIES_LIMIT);
        terms[i] = r * (1.0 - r2 * (1.0 / 3.0 - r2 * (0.2 - r2 / 7.0)));
    }
    if !series {
        for i in 0..n {
            let num = ax[i] * by[i] - ay[i] * bx[i];
            let den = (1.0 + az[i]) * (1.0 + bz[i]) + ax[i] * bx[i] + ay[i] * by[i];
            terms[i] = num.atan2(den);
        }
    }
    2.0 * lane_sum(terms)
}

/// `Σ_n s_n·(ṡ_n × s̈_n)` with `ṡ = k = s × b`, where each term reduces to
/// `ṡ·ḃ − |ṡ|² (s·b)`. The solid angle between a step's geodesic chord and
/// the true arc is `dt³/12` times this to leading order.
#[inline(always)]
fn chord_curvature(s: &SpinArrays, k: &SpinArrays, h: f64, terms: &mut [f64]) -> f64 {
    let n = s.x.len();
    let site = |i: usize, l: usize, r: usize| {
        let speed = k.x[i] * k.x[i] + k.y[i] * k.y[i] + k.z[i] * k.z[i];
        let drive = k.x[i] * (k.x[l] + k.x[r]) + k.y[i] * (k.y[l] + k.y[r]) + k.z[i] * (k.z[l] + k.z[r]);
        let field = s.x[i] * (s.x[l] + s.x[r]) + s.y[i] * (s.y[l] + s.y[r]) + s.z[i] * (s.z[l] + s.z[r] + h);
        drive - speed * field
    };
    if n < 3 {
        return (0..n).map(|i| site(i, (i + n - 1) % n, (i + 1) % n)).sum();
    }
    let edges = site(0, n - 1, 1) + site(n - 1, n - 2, 0);
    let m = n - 2;
    let (xl, xc, xr) = (&s.x[..m], &s.x[1..m + 1], &s.x[2..m + 2]);
    let (yl, yc, yr) = (&s.y[..m], &s.y[1..m + 1], &s.y[2..m + 2]);
    let (zl, zc, zr) = (&s.z[..m], &s.z[1..m + 1], &s.z[2..m + 2]);
    let (pl, pc, pr) = (&k.x[..m], &k.x[1..m + 1], &k.x[2..m + 2]);
    let (ql, qc, qr) = (&k.y[..m], &k.y[1..m + 1], &k.y[2..m + 2]);
    let (rl, rc, rr) = (&k.z[..m], &k.z[1..m + 1], &k.z[2..m + 2]);
    let terms = &mut terms[..m];
    for i in 0..m {
        let speed = pc[i] * pc[i] + qc[i] * qc[i] + rc[i] * rc[i];
        let drive = pc[i] * (pl[i] + pr[i]) + qc[i] * (ql[i] + qr[i]) + rc[i] * (rl[i] + rr[i]);
        let field = xc[i] * (xl[i] + xr[i]) + yc[i] * (yl[i] + yr[i]) + zc[i] * (zl[i] + zr[i] + h);
        terms[i] = drive - speed * field;
    }
    edges + lane_sum(terms)
}

/// One RK4 step of `state` followed by renormalization. Returns the step's
/// geometric phase, or `None` if a component left `[−1−ε, 1+ε]` before
/// renormalization.
#[inline(always)]
fn rk4_kernel_generic(state: &mut SpinArrays, scratch: &mut Rk4Scratch, h: f64, dt: f64) -> Option<f64> {
    let Rk4Scratch { k, acc, stage, terms } = scratch;

    derivative(state, h, k);
    let arc = chord_curvature(state, k, h, terms) * dt * dt * dt / 12.0;
    accumulate(&mut acc.x, &mut stage.x, &state.x, &k.x, true, 0.5 * dt);
    accumulate(&mut acc.y, &mut stage.y, &state.y, &k.y, true, 0.5 * dt);
    accumulate(&mut acc.z, &mut stage.z, &state.z, &k.z, true, 0.5 * dt);

    derivative(stage, h, k);
    accumulate(&mut acc.x, &mut stage.x, &state.x, &k.x, false, 0.5 * dt);
    accumulate(&mut acc.y, &mut stage.y, &state.y, &k.y, false, 0.5 * dt);
    accumulate(&mut acc.z, &mut stage.z, &state.z, &k.z, false, 0.5 * dt);

    derivative(stage, h, k);
    accumulate(&mut acc.x, &mut stage.x, &state.x, &k.x, false, dt);
    accumulate(&mut acc.y, &mut stage.y, &state.y, &k.y, false, dt);
    accumulate(&mut acc.z, &mut stage.z, &state.z, &k.z, false, dt);

    derivative(stage, h, k);
    let w = dt / 6.0;
    let limit = 1.0 + COMPONENT_SLACK;
    let n = state.x.len();
    let (sx, sy, sz) = (&state.x[..n], &state.y[..n], &state.z[..n]);
    let (nx, ny, nz) = (&mut stage.x[..n], &mut stage.y[..n], &mut stage.z[..n]);
    let (ax, ay, az) = (&acc.x[..n], &acc.y[..n], &acc.z[..n]);
    let (kx, ky, kz) = (&k.x[..n], &k.y[..n], &k.z[..n]);
    let mut ok = true;
    for i in 0..n {
        let x = sx[i] + w * (ax[i] + kx[i]);
        let y = sy[i] + w * (ay[i] + ky[i]);
        let z = sz[i] + w * (az[i] + kz[i]);
        ok &= (x.abs() <= limit) & (y.abs() <= limit) & (z.abs() <= limit);
        let inv = 1.0 / (x * x + y * y + z * z).sqrt();
        nx[i] = x * inv;
        ny[i] = y * inv;
        nz[i] = z * inv;
    }
    let phase = step_phase(state, stage, terms) + arc;
    std::mem::swap(state, stage);
    ok.then_some(phase)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn rk4_kernel_avx2(state: &mut SpinArrays, scratch: &mut Rk4Scratch, h: f64, dt: f64) -> Option<f64> {
    rk4_kernel_generic(state, scratch, h, dt)
}

/// Same arithmetic on every target (no fused multiply-add), so results do
/// not depend on which instruction set is picked.
fn rk4_kernel(state: &mut SpinArrays, scratch: &mut Rk4Scratch, h: f64, dt: f64) -> Option<f64> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { rk4_kernel_avx2(state, scratch, h, dt) };
        }
    }
    rk4_kernel_generic(state, scratch, h, dt)
}

impl ChainIntegrator {
    pub fn new(config: &ChainConfig, h: f64, dt: f64) -> Result<Self, ChainError> {
        if !(dt > 0.0 && dt <= MAX_STEP) {
            return Err(ChainError::StepTooLarge { dt });
        }
        let n = config.len();
        Ok(Self {
            h,
            dt,
            steps: 0,
            phase: 0.0,
            state: SpinArrays::from_config(config),
            scratch: Rk4Scratch {
                k: SpinArrays::zeros(n),
                acc: SpinArrays::zeros(n),
                stage: SpinArrays::zeros(n),
                terms: vec![0.0; n],
            },
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time elapsed since the initial configuration.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn config(&self) -> ChainConfig {
        self.state.to_config()
    }

    /// Cartesian unit vectors of the current state.
    pub fn vectors(&self) -> Vec<[f64; 3]> {
        self.state.vectors()
    }

    pub fn energy(&self) -> f64 {
        cartesian_energy(&self.state.vectors(), self.h)
    }

    pub fn total_sz(&self) -> f64 {
        self.state.z.iter().sum()
    }

    /// `∫ Σ_n (1 − cos θ_n) φ̇_n dt` since the initial configuration.
    pub fn geometric_phase(&self) -> f64 {
        self.phase
    }

    fn rk4_step(&mut self, state: &mut SpinArrays, dt: f64) -> Result<f64, ChainError> {
        if let Some(phase) = rk4_kernel(state, &mut self.scratch, self.h, dt) {
            return Ok(phase);
        }
        let site = (0..state.x.len())
            .find(|&i| !(state.x[i].is_finite() && state.y[i].is_finite() && state.z[i].is_finite()))
            .unwrap_or(0);
        Err(ChainError::NonFinite {
            site,
            time: self.steps as f64 * self.dt,
        })
    }

    /// Advances by one full step.
    pub fn step(&mut self) -> Result<(), ChainError> {
        let mut state = std::mem::replace(&mut self.state, SpinArrays::zeros(0));
        let result = self.rk4_step(&mut state, self.dt);
        self.state = state;
        self.phase += result?;
        self.steps += 1;
        Ok(())
    }

    /// Configuration at elapsed time `t >= self.time()`.
    pub fn advance_to(&mut self, t: f64) -> Result<ChainConfig, ChainError> {
        Ok(self.sample(t)?.0)
    }

    /// Configuration and geometric phase at elapsed time `t >= self.time()`.
    pub fn sample(&mut self, t: f64) -> Result<(ChainConfig, f64), ChainError> {
        let current = self.time();
        if t < current - 1e-9 * self.dt {
            return Err(ChainError::SampleInPast { time: t, current });
        }
        let target_steps = (t / self.dt + 1e-9).floor().max(self.steps as f64) as u64;
        while self.steps < target_steps {
            self.step()?;
        }
        let remainder = t - self.time();
        if remainder <= 1e-9 * self.dt {
            return Ok((self.state.to_config(), self.phase));
        }
        let mut side = self.state.clone();
        let phase = self.rk4_step(&mut side, remainder)?;
        Ok((side.to_config(), self.phase + phase))
    }
}

/// Integrates `config` and returns the configuration at each sample time
/// (measured from the initial configuration), in the order requested.
pub fn integrate_eom(
    config: &ChainConfig,
    h: f64,
    dt: f64,
    sample_times: &[f64],
) -> Result<Vec<ChainConfig>, ChainError> {
    Ok(integrate_with_phase(config, h, dt, sample_times)?
        .into_iter()
        .map(|(c, _)| c)
        .collect())
}

/// As [`integrate_eom`], also returning the geometric phase
/// `∫ Σ_n (1 − cos θ_n) φ̇_n dt` accumulated up to each sample.
pub fn integrate_with_phase(
    config: &ChainConfig,
    h: f64,
    dt: f64,
    sample_times: &[f64],
) -> Result<Vec<(ChainConfig, f64)>, ChainError> {
    let mut integrator = ChainIntegrator::new(config, h, dt)?;
    let mut order: Vec<usize> = (0..sample_times.len()).collect();
    order.sort_by(|&a, &b| sample_times[a].total_cmp(&sample_times[b]));
    let mut out: Vec<Option<(ChainConfig, f64)>> = vec![None; sample_times.len()];
    for i in order {
        let t = sample_times[i];
        if t < 0.0 {
            return Err(ChainError::SampleInPast { time: t, current: 0.0 });
        }
        out[i] = Some(integrator.sample(t)?);
    }
    Ok(out.into_iter().map(|c| c.expect("every sample filled")).collect())
}

/// Largest angle between corresponding spins of two configurations.
pub fn max_angular_deviation(a: &ChainConfig, b: &ChainConfig) -> f64 {
    a.directions()
        .iter()
        .zip(b.directions())
        .map(|(x, y)| x.dot(y).clamp(-1.0, 1.0).acos())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_params() -> SolitonParams {
        SolitonParams::from_length(PI / 4.0, 10.0).unwrap()
    }

    #[test]
    fn derived_parameters() {
        let p = default_params();
        assert!((p.h - 0.02).abs() < 1e-12);
        let q = soliton_derived_params(PI / 4.0, 0.02).unwrap();
        assert!((q.velocity - 0.2).abs() < 1e-12);
        assert!((q.tau - 50.0).abs() < 1e-10);
        assert!((q.lambda - 10.0).abs() < 1e-12);
        assert!((q.energy - 0.8).abs() < 1e-12);
        assert!(!q.continuum_warning);
        let narrow = SolitonParams::from_length(PI / 4.0, 2.5).unwrap();
        assert!((narrow.h - 0.32).abs() < 1e-12);
        assert!(narrow.continuum_warning);
    }

    #[test]
    fn parameter_domain() {
        assert!(soliton_derived_params(0.0, 0.1).is_err());
        assert!(soliton_derived_params(PI / 2.0, 0.1).is_err());
        assert!(soliton_derived_params(0.3, 0.0).is_err());
        assert!(soliton_derived_params(0.3, -1.0).is_err());
    }

    #[test]
    fn soliton_profile_shape() {
        let p = default_params();
        let c = tw_soliton_config(&p, 0.0, 256, 40.0).unwrap();
        assert!((c.get(40).theta() - PI / 2.0).abs() < 1e-12);
        assert!(c.get(40).phi().abs() < 1e-12);
        assert!(c.get(200).theta() < 1e-5);

        let tall = soliton_derived_params(2f64.atan(), 0.01).unwrap();
        let c = tw_soliton_config(&tall, 0.0, 256, 100.0).unwrap();
        let peak = c.deviation_profile().into_iter().fold(0.0, f64::max);
        assert!((peak - 1.6).abs() < 1e-12);
    }

    #[test]
    fn soliton_needs_room() {
        let p = default_params();
        assert!(matches!(
            tw_soliton_config(&p, 0.0, 60, 30.0),
            Err(ChainError::ChainTooShort { .. })
        ));
    }

    #[test]
    fn center_detection() {
        let p = default_params();
        let c = tw_soliton_config(&p, 0.0, 256, 40.0).unwrap();
        assert!((soliton_center(&c).unwrap() - 40.0).abs() < 0.1);
        let c = tw_soliton_config(&p, 0.0, 256, 57.0).unwrap();
        assert!((soliton_center(&c).unwrap() - 57.0).abs() < 0.1);
        let c = tw_soliton_config(&p, 0.0, 256, 57.3).unwrap();
        assert!((soliton_center(&c).unwrap() - 57.3).abs() < 0.1);
        assert!(matches!(
            soliton_center(&ChainConfig::aligned(64)),
            Err(ChainError::NoSoliton { .. })
        ));
    }

    #[test]
    fn aligned_energy_and_sz() {
        let c = ChainConfig::aligned(256);
        assert!((chain_energy(&c, 0.02) + 261.12).abs() < 1e-9);
        assert_eq!(total_sz(&c), 256.0);
    }

    #[test]
    fn energy_invariant_under_z_rotation() {
        let c = tw_soliton_config(&default_params(), 0.0, 128, 60.0).unwrap();
        let e0 = chain_energy(&c, 0.02);
        let e1 = chain_energy(&c.rotated_about_z(1.234), 0.02);
        assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn soliton_energy_excess() {
        let p = default_params();
        let c = tw_soliton_config(&p, 0.0, 256, 128.0).unwrap();
        let excess = chain_energy(&c, p.h) - chain_energy(&ChainConfig::aligned(256), p.h);
        assert!((excess / p.energy - 1.0).abs() < 0.03, "excess {excess}");
    }

    #[test]
    fn soliton_magnetization_deficit() {
        // λ ∫ 2 sin²β sech²ξ dξ = 4 λ sin²β.
        let p = default_params();
        let c = tw_soliton_config(&p, 0.0, 256, 128.0).unwrap();
        let deficit = 256.0 - total_sz(&c);
        let continuum = 4.0 * p.lambda * p.beta.sin().powi(2);
        assert!((deficit - continuum).abs() < 1e-6 * continuum);
    }

    #[test]
    fn aligned_chain_is_stationary() {
        let c = ChainConfig::aligned(16);
        let out = integrate_eom(&c, 0.3, 0.01, &[5.0]).unwrap();
        assert_eq!(out[0], c);
    }

    #[test]
    fn step_bounds() {
        let c = ChainConfig::aligned(4);
        assert!(matches!(
            ChainIntegrator::new(&c, 0.0, 0.06),
            Err(ChainError::StepTooLarge { .. })
        ));
        assert!(ChainIntegrator::new(&c, 0.0, 0.0).is_err());
    }

    #[test]
    fn tilted_spin_conserves_energy() {
        let c = ChainConfig::aligned(32).with_site(10, SphereDirection::new(0.8, 0.3));
        let mut integ = ChainIntegrator::new(&c, 0.0, 0.005).unwrap();
        let e0 = integ.energy();
        let sz0 = integ.total_sz();
        integ.advance_to(100.0).unwrap();
        assert!((integ.energy() - e0).abs() < 1e-8);
        assert!((integ.total_sz() - sz0).abs() < 1e-8);
    }

    #[test]
    fn off_grid_samples_do_not_disturb_main_sequence() {
        let c = tw_soliton_config(&default_params(), 0.0, 96, 30.0).unwrap();
        let a = integrate_eom(&c, 0.02, 0.01, &[3.0]).unwrap();
        let b = integrate_eom(&c, 0.02, 0.01, &[1.234, 3.0, 2.5001]).unwrap();
        assert_eq!(a[0], b[1]);
        let mut integ = ChainIntegrator::new(&c, 0.02, 0.01).unwrap();
        assert!(integ.advance_to(2.0).is_ok());
        assert!(matches!(
            integ.advance_to(1.0),
            Err(ChainError::SampleInPast { .. })
        ));
    }

    #[test]
    fn fourth_order_convergence() {
        let p = default_params();
        let c = tw_soliton_config(&p, 0.0, 96, 40.0)
            .unwrap()
            .with_site(45, SphereDirection::new(2.0, 1.0));
        let run = |dt: f64| integrate_eom(&c, p.h, dt, &[50.0]).unwrap().remove(0);
        let coarse = run(0.05);
        let mid = run(0.025);
        let fine = run(0.0125);
        let d1 = max_angular_deviation(&coarse, &mid);
        let d2 = max_angular_deviation(&mid, &fine);
        assert!(d1 >= 8.0 * d2, "d1 = {d1:e}, d2 = {d2:e}");
    }

    fn uniform_tilt(n: usize, theta: f64) -> ChainConfig {
        ChainConfig::new(vec![SphereDirection::new(theta, 0.4); n])
    }

    #[test]
    fn geometric_phase_of_uniform_precession() {
        // Parallel neighbours exert no torque, so every spin precesses at φ̇ = −h.
        for (theta, h, dt) in [(0.7, 0.3, 0.01), (3.1, 0.3, 0.01), (3.1, 6.0, 0.01), (1.9, 2.0, 0.05)] {
            let mut integ = ChainIntegrator::new(&uniform_tilt(5, theta), h, dt).unwrap();
            let (_, phase) = integ.sample(7.3).unwrap();
            let exact = -5.0 * (1.0 - theta.cos()) * h * 7.3;
            assert!((phase - exact).abs() < 1e-6 * exact.abs(), "theta {theta}, h {h}: {phase} vs {exact}");
        }
    }

    #[test]
    fn geometric_phase_converges_with_step() {
        let p = default_params();
        let c = tw_soliton_config(&p, 0.0, 96, 40.0)
            .unwrap()
            .with_site(45, SphereDirection::new(2.6, 1.0));
        let run = |dt: f64| ChainIntegrator::new(&c, p.h, dt).unwrap().sample(20.0).unwrap().1;
        let (coarse, mid, fine) = (run(0.02), run(0.01), run(0.005));
        assert!((mid - fine).abs() < 1e-5, "{mid} vs {fine}");
        assert!((coarse - mid).abs() >= 8.0 * (mid - fine).abs());
    }

    #[test]
    fn side_samples_include_partial_step_phase() {
        let mut integ = ChainIntegrator::new(&uniform_tilt(3, 1.0), 0.5, 0.01).unwrap();
        let (_, phase) = integ.sample(0.015).unwrap();
        assert!((phase + 3.0 * (1.0 - 1f64.cos()) * 0.5 * 0.015).abs() < 1e-12, "{phase}");
        assert_eq!(integ.time(), 0.01);
    }

    #[test]
    fn csv_snapshot_format() {
        let c = ChainConfig::aligned(3);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,theta,phi,one_minus_cos_theta"));
        assert_eq!(lines.count(), 3);
    }
}
