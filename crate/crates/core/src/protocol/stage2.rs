//! Stage 2: semiclassical propagation of the chain after qubit A is decoupled.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{FTable, ProtocolConfig, ProtocolError, ROW_CHUNK};
use crate::chain::{chain_energy, integrate_with_phase, ChainConfig};
use crate::entanglement::von_neumann_entropy;
use crate::numcore::{ComplexMatrix, DensityMatrix};
use crate::scs::{scs_amplitudes, QuadratureGrid, SpinMagnitude};

/// Relative tolerance used to match a requested time against the sample times.
const SAMPLE_MATCH: f64 = 1e-9;

/// Chain configurations of every grid node at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    /// Indexed by grid node.
    pub configs: Vec<ChainConfig>,
    /// Classical action of each node's history since `t1`,
    /// `∫ Σ_l (1 − cos θ_l) φ̇_l dt + E (t − t1)`. The history carries the
    /// phase `e^{−iS·action}`.
    pub actions: Vec<f64>,
}

impl Snapshot {
    /// `e^{−iS·action}` for every node.
    pub fn history_phases(&self, spin: SpinMagnitude) -> Vec<Complex64> {
        self.actions
            .iter()
            .map(|a| Complex64::from_polar(1.0, -spin.s() * a))
            .collect()
    }
}

/// Classical trajectories seeded by each quadrature node, sampled at fixed times.
#[derive(Debug, Clone)]
pub struct BundleTrajectories {
    grid: QuadratureGrid,
    t1: f64,
    snapshots: Vec<Snapshot>,
}

impl BundleTrajectories {
    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn snapshot(&self, t: f64) -> Result<&Snapshot, ProtocolError> {
        let tol = SAMPLE_MATCH * t.abs().max(1.0);
        self.snapshots
            .iter()
            .find(|s| (s.time - t).abs() <= tol)
            .ok_or(ProtocolError::MissingSample(t))
    }

    /// The trajectories depend only on the node directions and on `t − t1`,
    /// so a bundle can be reused for another spin magnitude or another `t1`.
    /// `grid` must have the same node directions in the same order.
    pub fn rebased(&self, t1: f64, grid: &QuadratureGrid) -> Result<Self, ProtocolError> {
        let same = grid.len() == self.grid.len()
            && grid
                .nodes()
                .iter()
                .zip(self.grid.nodes())
                .all(|(a, b)| a.direction == b.direction);
        if !same {
            return Err(ProtocolError::Invalid {
                field: "grid",
                reason: "node directions differ from the bundle's grid".into(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            t1,
            snapshots: self
                .snapshots
                .iter()
                .map(|s| Snapshot {
                    time: s.time - self.t1 + t1,
                    configs: s.configs.clone(),
                    actions: s.actions.clone(),
                })
                .collect(),
        })
    }

    /// Same bundle with grid nodes reordered: node `i` of the result is node
    /// `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            grid: self.grid.permuted(order),
            t1: self.t1,
            snapshots: self
                .snapshots
                .iter()
                .map(|s| Snapshot {
                    time: s.time,
                    configs: order.iter().map(|&k| s.configs[k].clone()).collect(),
                    actions: order.iter().map(|&k| s.actions[k]).collect(),
                })
                .collect(),
        }
    }
}

/// Integrates the classical chain from `t1` for every grid node. Node `k`
/// starts from the configuration frozen at `t0` with site `n_A` set to `Ω_k`.
/// `sample_times` are absolute and must not precede `t1`.
pub fn stage2_bundle(
    cfg: &ProtocolConfig,
    t1: f64,
    grid: &QuadratureGrid,
    sample_times: &[f64],
) -> Result<BundleTrajectories, ProtocolError> {
    if let Some(&t) = sample_times.iter().find(|&&t| !(t >= t1)) {
        return Err(ProtocolError::Invalid {
            field: "sample_times",
            reason: format!("sample time {t} precedes t1 = {t1}"),
        });
    }
    let frozen = cfg.initial_chain()?;
    let relative: Vec<f64> = sample_times.iter().map(|t| t - t1).collect();
    let per_node: Vec<(f64, Vec<(ChainConfig, f64)>)> = grid
        .nodes()
        .par_iter()
        .map(|node| {
            let start = frozen.clone().with_site(cfg.site_a, node.direction);
            let energy = chain_energy(&start, cfg.soliton.h);
            integrate_with_phase(&start, cfg.soliton.h, cfg.dt, &relative).map(|s| (energy, s))
        })
        .collect::<Result<_, _>>()?;

    let mut snapshots: Vec<Snapshot> = sample_times
        .iter()
        .map(|&time| Snapshot {
            time,
            configs: Vec::with_capacity(grid.len()),
            actions: Vec::with_capacity(grid.len()),
        })
        .collect();
    for (energy, samples) in per_node {
        for ((snap, (config, phase)), tau) in snapshots.iter_mut().zip(samples).zip(&relative) {
            snap.configs.push(config);
            snap.actions.push(phase + energy * tau);
        }
    }
    Ok(BundleTrajectories {
        grid: grid.clone(),
        t1,
        snapshots,
    })
}

/// Half-angle factors of every `(node, site)` of a snapshot, node-major.
pub(crate) struct SnapshotFactors {
    n_sites: usize,
    two_s: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    phase: Vec<Complex64>,
}

impl SnapshotFactors {
    pub(crate) fn new(snapshot: &Snapshot, spin: SpinMagnitude) -> Self {
        let n_sites = snapshot.configs.first().map_or(0, |c| c.len());
        let total = snapshot.configs.len() * n_sites;
        let mut out = Self {
            n_sites,
            two_s: spin.two_s() as f64,
            cos: Vec::with_capacity(total),
            sin: Vec::with_capacity(total),
            phase: Vec::with_capacity(total),
        };
        for config in &snapshot.configs {
            for d in config.directions() {
                let (c, s, u) = d.half_angle_factors();
                out.cos.push(c);
                out.sin.push(s);
                out.phase.push(u);
            }
        }
        out
    }

    /// `log ⟨Ω_l^{bra}|Ω_l^{ket}⟩` for every site `l`.
    fn log_overlaps(&self, bra: usize, ket: usize, out: &mut [Complex64]) {
        let n = self.n_sites;
        let (b, k) = (bra * n, ket * n);
        let (cb, sb, ub) = (&self.cos[b..b + n], &self.sin[b..b + n], &self.phase[b..b + n]);
        let (ck, sk, uk) = (&self.cos[k..k + n], &self.sin[k..k + n], &self.phase[k..k + n]);
        for l in 0..n {
            let base = ub[l].conj() * uk[l] * (sb[l] * sk[l]) + cb[l] * ck[l];
            out[l] = base.ln() * self.two_s;
        }
    }
}

/// `∏_{l ≠ exclude} ⟨Ω_l(t, Ω_j)|Ω_l(t, Ω_k)⟩`, summed in log space.
pub fn pair_overlap_product(
    bundle: &BundleTrajectories,
    t: f64,
    j: usize,
    k: usize,
    exclude: Option<usize>,
) -> Result<Complex64, ProtocolError> {
    let snapshot = bundle.snapshot(t)?;
    if j == k {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let spin = bundle.grid().spin();
    let (a, b) = (&snapshot.configs[j], &snapshot.configs[k]);
    let log_sum: Complex64 = (0..a.len())
        .filter(|&l| Some(l) != exclude)
        .map(|l| crate::scs::overlap_base(a.get(l), b.get(l)).ln() * spin.two_s() as f64)
        .sum();
    Ok(log_sum.exp())
}

/// For each site `n` in `sites`, the matrix
/// `Σ_{jk} coef(j, k) [∏_{l≠n} ⟨Ω_l^k|Ω_l^j⟩] v_j^{(n)} v_k^{(n)†}`,
/// where `vectors[j * sites.len() + i]` is `v_j` for `sites[i]`.
///
/// Rows are processed in fixed-size blocks and the block results are summed
/// in order, so the result does not depend on the thread count.
pub(crate) fn pair_sum<F>(
    factors: &SnapshotFactors,
    sites: &[usize],
    vectors: &[Vec<Complex64>],
    coef: F,
) -> Vec<ComplexMatrix>
where
    F: Fn(usize, usize) -> Complex64 + Sync,
{
    let n_sites = factors.n_sites;
    let n_nodes = vectors.len() / sites.len().max(1);
    let dim = vectors.first().map_or(0, |v| v.len());
    let zero = Complex64::new(0.0, 0.0);

    let rows: Vec<usize> = (0..n_nodes).collect();
    let blocks: Vec<Vec<Vec<Complex64>>> = rows
        .par_chunks(ROW_CHUNK)
        .map(|block| {
            let mut acc = vec![vec![zero; dim * dim]; sites.len()];
            let mut logs = vec![zero; n_sites];
            let mut prefix = vec![zero; n_sites + 1];
            let mut suffix = vec![zero; n_sites + 1];
            let mut row = vec![vec![zero; dim]; sites.len()];
            for &j in block {
                for r in row.iter_mut() {
                    r.fill(zero);
                }
                for k in 0..n_nodes {
                    let c = coef(j, k);
                    if c == zero {
                        continue;
                    }
                    factors.log_overlaps(k, j, &mut logs);
                    for l in 0..n_sites {
                        prefix[l + 1] = prefix[l] + logs[l];
                    }
                    for l in (0..n_sites).rev() {
                        suffix[l] = suffix[l + 1] + logs[l];
                    }
                    for (i, &n) in sites.iter().enumerate() {
                        let weight = if j == k { c } else { c * (prefix[n] + suffix[n + 1]).exp() };
                        let vk = &vectors[k * sites.len() + i];
                        for (r, v) in row[i].iter_mut().zip(vk) {
                            *r += weight * v.conj();
                        }
                    }
                }
                for (i, a) in acc.iter_mut().enumerate() {
                    let vj = &vectors[j * sites.len() + i];
                    for (m, vm) in vj.iter().enumerate() {
                        let dst = &mut a[m * dim..(m + 1) * dim];
                        for (d, r) in dst.iter_mut().zip(&row[i]) {
                            *d += vm * r;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![vec![zero; dim * dim]; sites.len()];
    for block in blocks {
        for (t, b) in total.iter_mut().zip(block) {
            for (x, y) in t.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    total
        .into_iter()
        .map(|data| ComplexMatrix::from_vec(dim, dim, data).expect("square"))
        .collect()
}

/// `Σ_σ f_σ^j conj(f_σ^k)` weighted by `w_j w_k` and the history phases
/// `u_j conj(u_k)`.
fn collapsed_coefficient<'a>(
    ftable: &'a FTable,
    phases: &'a [Complex64],
) -> impl Fn(usize, usize) -> Complex64 + Sync + 'a {
    let nodes = ftable.grid().nodes();
    move |j, k| {
        let (fj, fk) = (ftable.get(j), ftable.get(k));
        (fj[0] * fk[0].conj() + fj[1] * fk[1].conj())
            * (phases[j] * phases[k].conj())
            * (nodes[j].weight * nodes[k].weight)
    }
}

fn check_tables(cfg: &ProtocolConfig, ftable: &FTable, bundle: &BundleTrajectories) -> Result<(), ProtocolError> {
    for spin in [ftable.grid().spin(), bundle.grid().spin()] {
        if spin != cfg.spin {
            return Err(ProtocolError::SpinMismatch {
                grid: spin.two_s(),
                config: cfg.spin.two_s(),
            });
        }
    }
    if ftable.grid().len() != bundle.grid().len() {
        return Err(ProtocolError::Invalid {
            field: "grid",
            reason: "f-table and bundle use different grids".into(),
        });
    }
    Ok(())
}

/// Reduced states of the chain spins `sites` at time `t`.
pub fn site_density_matrices(
    cfg: &ProtocolConfig,
    ftable: &FTable,
    bundle: &BundleTrajectories,
    sites: &[usize],
    t: f64,
) -> Result<Vec<DensityMatrix>, ProtocolError> {
    check_tables(cfg, ftable, bundle)?;
    let snapshot = bundle.snapshot(t)?;
    if let Some(&n) = sites.iter().find(|&&n| n >= cfg.n_sites) {
        return Err(ProtocolError::Invalid {
            field: "site",
            reason: format!("{n} outside chain of {} sites", cfg.n_sites),
        });
    }
    let factors = SnapshotFactors::new(snapshot, cfg.spin);
    let vectors: Vec<Vec<Complex64>> = snapshot
        .configs
        .par_iter()
        .flat_map_iter(|config| sites.iter().map(move |&n| scs_amplitudes(config.get(n), cfg.spin)))
        .collect();
    let phases = snapshot.history_phases(cfg.spin);
    pair_sum(&factors, sites, &vectors, collapsed_coefficient(ftable, &phases))
        .into_iter()
        .map(|m| DensityMatrix::from_unnormalized(m).map_err(ProtocolError::from))
        .collect()
}

pub fn site_density_matrix(
    cfg: &ProtocolConfig,
    ftable: &FTable,
    bundle: &BundleTrajectories,
    n: usize,
    t: f64,
) -> Result<DensityMatrix, ProtocolError> {
    Ok(site_density_matrices(cfg, ftable, bundle, &[n], t)?.remove(0))
}

/// `(n, E_{S_n})` for every site, with entropies in base `2S+1`.
pub fn site_entropy_profile(
    cfg: &ProtocolConfig,
    ftable: &FTable,
    bundle: &BundleTrajectories,
    t: f64,
) -> Result<Vec<(usize, f64)>, ProtocolError> {
    let sites: Vec<usize> = (0..cfg.n_sites).collect();
    let rhos = site_density_matrices(cfg, ftable, bundle, &sites, t)?;
    sites
        .into_iter()
        .zip(rhos)
        .map(|(n, rho)| Ok((n, von_neumann_entropy(&rho, cfg.spin.dim())?)))
        .collect()
}
