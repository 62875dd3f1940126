//! Subcommand orchestration and CSV emission.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qsolchain_core::chain::{chain_energy, integrate_eom, soliton_center, total_sz, ChainConfig, ChainIntegrator};
use qsolchain_core::output::fmt_f64;
use qsolchain_core::protocol::{
    build_f_table, concurrence_scan, select_t1, select_t2, site_entropy_profile, stage1_evolve, stage2_bundle,
    stage3_initial_state, BundleTrajectories, ConcurrenceSample, ProtocolConfig, ProtocolError,
};
use qsolchain_core::scs::{build_quadrature, SphereDirection, SpinMagnitude};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::manifest::Manifest;

/// Interval between rows of `soliton_conservation.csv`.
pub const CONSERVATION_STEP: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("output directory {} is not empty; pass --force to write into it", .0.display())]
    OutputNotEmpty(PathBuf),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: ProtocolError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot start worker threads: {0}")]
    Threads(String),
    #[error("{0} self-test check(s) failed")]
    SelftestFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::OutputNotEmpty(_) => 1,
            CliError::Stage { .. } | CliError::Io { .. } | CliError::Threads(_) => 2,
            CliError::SelftestFailed(_) => 3,
        }
    }
}

fn stage<E: Into<ProtocolError>>(stage: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Stage {
        stage,
        source: e.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Soliton,
    Stage1,
    Stage2,
    Concurrence,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Soliton => "soliton",
            Command::Stage1 => "stage1",
            Command::Stage2 => "stage2",
            Command::Concurrence => "concurrence",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Key results of a run, for reporting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub peak_concurrence: Option<f64>,
    pub files: Vec<PathBuf>,
}

/// Creates `out`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_output_dir(out: &Path, force: bool) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: out.to_path_buf(),
        source,
    };
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(io)?;
        if entries.next().is_some() && !force {
            return Err(CliError::OutputNotEmpty(out.to_path_buf()));
        }
    } else {
        fs::create_dir_all(out).map_err(io)?;
    }
    Ok(())
}

/// Runs `f` on a pool of `threads` workers, or the rayon default for 0.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Threads(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs `command` and writes its CSVs plus `manifest.cfg` into `out`, which
/// must already exist.
pub fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    let mut run = Run {
        cfg,
        out,
        manifest: Manifest::new(command.name(), cfg),
        summary: RunSummary::default(),
    };
    match command {
        Command::Soliton => run.soliton()?,
        Command::Stage1 => {
            run.stage1()?;
        }
        Command::Stage2 => run.stage2(None)?,
        Command::Concurrence => run.concurrence(None)?,
        Command::Pipeline => run.pipeline()?,
    }
    let path = out.join("manifest.cfg");
    write_file(&path, run.manifest.render().as_bytes())?;
    run.summary.files.push(path);
    Ok(run.summary)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    manifest: Manifest,
    summary: RunSummary,
}

/// Chain configuration and spin magnitude for one entry of `s_list`.
fn with_spin(p: &ProtocolConfig, two_s: u32) -> Result<ProtocolConfig, CliError> {
    let spin = SpinMagnitude::new(two_s).map_err(stage("stage2"))?;
    Ok(ProtocolConfig { spin, ..p.clone() })
}

impl Run<'_> {
    fn protocol(&self) -> &ProtocolConfig {
        &self.cfg.protocol
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let value = f(self)?;
        self.manifest.timing(label, start.elapsed().as_secs_f64());
        Ok(value)
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
        let path = self.out.join(name);
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(w, "{header}").map_err(io)?;
        rows(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
        self.summary.files.push(path);
        Ok(())
    }

    /// Stage-1 entropy curve and `t1` for `p`; an explicit `t1` overrides the
    /// scan maximum.
    fn resolve_t1(p: &ProtocolConfig) -> Result<(f64, Vec<(f64, f64)>), CliError> {
        let (best, curve) = select_t1(p, p.t1_window, p.t1_step).map_err(stage("stage1"))?;
        Ok((p.t1.unwrap_or(best), curve))
    }

    fn stage1(&mut self) -> Result<f64, CliError> {
        let (t1, curve) = self.timed("stage1", |run| Self::resolve_t1(run.protocol()))?;
        self.csv("stage1_entropy.csv", "t,entropy", |w| {
            for (t, e) in &curve {
                writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*e))?;
            }
            Ok(())
        })?;
        self.manifest.resolved("t1", t1);
        self.summary.t1 = Some(t1);
        Ok(t1)
    }

    fn t2(&mut self, t1: f64) -> Result<f64, CliError> {
        let p = self.protocol();
        let t2 = match p.t2 {
            Some(t2) => t2,
            None => select_t2(p, t1).map_err(stage("stage3"))?,
        };
        if !(t2 >= t1) {
            return Err(CliError::Stage {
                stage: "stage3",
                source: ProtocolError::Invalid {
                    field: "t2",
                    reason: format!("t2 = {t2} precedes t1 = {t1}"),
                },
            });
        }
        self.manifest.resolved("t2", t2);
        self.summary.t2 = Some(t2);
        Ok(t2)
    }

    /// Bundle for the configured spin, sampled at `t1 + profile_times` and
    /// at `extra`.
    fn bundle(&mut self, t1: f64, extra: &[f64]) -> Result<BundleTrajectories, CliError> {
        let p = self.protocol().clone();
        let mut times: Vec<f64> = self.cfg.profile_times.iter().map(|tau| t1 + tau).collect();
        times.extend_from_slice(extra);
        times.sort_by(f64::total_cmp);
        times.dedup();
        self.timed("stage2_bundle", |_| {
            let grid = build_quadrature(p.n_theta, p.n_phi, p.spin).map_err(stage("stage2"))?;
            stage2_bundle(&p, t1, &grid, &times).map_err(stage("stage2"))
        })
    }

    fn stage2(&mut self, shared: Option<(f64, &BundleTrajectories)>) -> Result<(), CliError> {
        let own;
        let (t1, base) = match shared {
            Some(s) => s,
            None => {
                let (t1, _) = self.timed("stage1", |run| Self::resolve_t1(run.protocol()))?;
                self.manifest.resolved("t1", t1);
                self.summary.t1 = Some(t1);
                own = self.bundle(t1, &[])?;
                (t1, &own)
            }
        };
        let cfg = self.cfg;
        let p = self.protocol().clone();
        let profiles = self.timed("stage2_profiles", |run| {
            let mut columns = Vec::with_capacity(cfg.s_list.len());
            for &two_s in &cfg.s_list {
                let ps = with_spin(&p, two_s)?;
                let ts1 = if ps.spin == p.spin { t1 } else { Self::resolve_t1(&ps)?.0 };
                if ps.spin != p.spin {
                    run.manifest.resolved(&format!("t1_two_s_{two_s}"), ts1);
                }
                let grid = build_quadrature(ps.n_theta, ps.n_phi, ps.spin).map_err(stage("stage2"))?;
                let ftable = build_f_table(&stage1_evolve(&ps, ts1).map_err(stage("stage1"))?, &grid)
                    .map_err(stage("stage2"))?;
                let bundle = base.rebased(ts1, &grid).map_err(stage("stage2"))?;
                let mut per_time = Vec::with_capacity(cfg.profile_times.len());
                for &tau in &cfg.profile_times {
                    let profile = site_entropy_profile(&ps, &ftable, &bundle, ts1 + tau).map_err(stage("stage2"))?;
                    per_time.push(profile.into_iter().map(|(_, e)| e).collect::<Vec<_>>());
                }
                columns.push(per_time);
            }
            Ok(columns)
        })?;
        let header = std::iter::once("t_minus_t1,n".to_string())
            .chain(cfg.s_list.iter().map(|s| format!("entropy_two_s_{s}")))
            .collect::<Vec<_>>()
            .join(",");
        self.csv("stage2_profile.csv", &header, |w| {
            for (i, tau) in cfg.profile_times.iter().enumerate() {
                for n in 0..p.n_sites {
                    write!(w, "{},{n}", fmt_f64(*tau))?;
                    for column in &profiles {
                        write!(w, ",{}", fmt_f64(column[i][n]))?;
                    }
                    writeln!(w)?;
                }
            }
            Ok(())
        })
    }

    fn concurrence(&mut self, shared: Option<(f64, f64, &BundleTrajectories)>) -> Result<(), CliError> {
        let own;
        let (t1, t2, bundle) = match shared {
            Some(s) => s,
            None => {
                let (t1, _) = self.timed("stage1", |run| Self::resolve_t1(run.protocol()))?;
                self.manifest.resolved("t1", t1);
                self.summary.t1 = Some(t1);
                let t2 = self.t2(t1)?;
                let p = self.protocol().clone();
                own = self.timed("stage2_bundle", |_| {
                    let grid = build_quadrature(p.n_theta, p.n_phi, p.spin).map_err(stage("stage2"))?;
                    stage2_bundle(&p, t1, &grid, &[t2]).map_err(stage("stage2"))
                })?;
                (t1, t2, &own)
            }
        };
        let p = self.protocol().clone();
        let samples = self.timed("stage3", |_| concurrence_samples(&p, t1, t2, bundle))?;
        let peak = samples.iter().map(|s| s.result.concurrence).fold(0.0, f64::max);
        self.summary.peak_concurrence = Some(peak);
        self.manifest.resolved("peak_concurrence", peak);
        self.csv("concurrence.csv", "t_minus_t2,concurrence,mu1,mu2,mu3,mu4", |w| {
            for s in &samples {
                let mu = s.result.mu;
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt_f64(s.t_minus_t2),
                    fmt_f64(s.result.concurrence),
                    fmt_f64(mu[0]),
                    fmt_f64(mu[1]),
                    fmt_f64(mu[2]),
                    fmt_f64(mu[3])
                )?;
            }
            Ok(())
        })
    }

    fn soliton(&mut self) -> Result<(), CliError> {
        let p = self.protocol().clone();
        let cfg = self.cfg;
        let h = p.soliton.h;
        let initial = p.initial_chain().map_err(stage("soliton"))?;
        let (profiles, conservation) = self.timed("soliton", |_| {
            let profiles = integrate_eom(&initial, h, p.dt, &cfg.soliton_times).map_err(stage("soliton"))?;
            let end = cfg.soliton_times.iter().cloned().fold(0.0, f64::max);
            let count = (end / CONSERVATION_STEP + 1e-9).floor() as usize;
            let mut integrator = ChainIntegrator::new(&initial, h, p.dt).map_err(stage("soliton"))?;
            let mut rows = Vec::with_capacity(count + 1);
            for i in 0..=count {
                let tau = i as f64 * CONSERVATION_STEP;
                let config = integrator.advance_to(tau).map_err(stage("soliton"))?;
                let center = soliton_center(&config).map_err(stage("soliton"))?;
                rows.push([tau, chain_energy(&config, h), total_sz(&config), center]);
            }
            Ok((profiles, rows))
        })?;
        let deformed = self.timed("deformed", |_| {
            let phi = initial.get(p.site_a).phi();
            cfg.deform_thetas
                .iter()
                .map(|&theta| {
                    let start = initial.clone().with_site(p.site_a, SphereDirection::new(theta, phi));
                    integrate_eom(&start, h, p.dt, &cfg.soliton_times).map_err(stage("soliton"))
                })
                .collect::<Result<Vec<_>, _>>()
        })?;

        self.csv("soliton_profiles.csv", "t_minus_t0,n,theta,phi,one_minus_cos_theta", |w| {
            for (tau, config) in cfg.soliton_times.iter().zip(&profiles) {
                write_profile(w, &[*tau], config)?;
            }
            Ok(())
        })?;
        self.csv("soliton_conservation.csv", "t_minus_t0,energy,total_sz,center", |w| {
            for row in &conservation {
                let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            Ok(())
        })?;
        self.csv(
            "deformed_profiles.csv",
            "theta_a,t_minus_t1,n,theta,phi,one_minus_cos_theta",
            |w| {
                for (theta, configs) in cfg.deform_thetas.iter().zip(&deformed) {
                    for (tau, config) in cfg.soliton_times.iter().zip(configs) {
                        write_profile(w, &[*theta, *tau], config)?;
                    }
                }
                Ok(())
            },
        )
    }

    fn pipeline(&mut self) -> Result<(), CliError> {
        self.soliton()?;
        let t1 = self.stage1()?;
        let t2 = self.t2(t1)?;
        let bundle = self.bundle(t1, &[t2])?;
        self.stage2(Some((t1, &bundle)))?;
        self.concurrence(Some((t1, t2, &bundle)))
    }
}

fn write_profile(w: &mut dyn Write, prefix: &[f64], config: &ChainConfig) -> std::io::Result<()> {
    let lead: String = prefix.iter().map(|&x| format!("{},", fmt_f64(x))).collect();
    for (n, (d, dev)) in config.directions().iter().zip(config.deviation_profile()).enumerate() {
        writeln!(
            w,
            "{lead}{n},{},{},{}",
            fmt_f64(d.theta()),
            fmt_f64(d.phi()),
            fmt_f64(dev)
        )?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Stage-3 scan for `p` from a bundle sampled at `t2`.
pub fn concurrence_samples(
    p: &ProtocolConfig,
    t1: f64,
    t2: f64,
    bundle: &BundleTrajectories,
) -> Result<Vec<ConcurrenceSample>, CliError> {
    let grid = bundle.grid();
    let ftable = build_f_table(&stage1_evolve(p, t1).map_err(stage("stage1"))?, grid).map_err(stage("stage3"))?;
    let rho0 = stage3_initial_state(p, &ftable, bundle, t2).map_err(stage("stage3"))?;
    concurrence_scan(&rho0, p, p.t3_window, p.t3_step).map_err(stage("stage3"))
}
