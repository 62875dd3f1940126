//! Flat `key = value` run configuration.
//!
//! Blank lines and anything after `#` are ignored. Every key is optional;
//! missing keys take the defaults listed in [`KEYS`]. Times accept `auto`
//! where noted.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use qsolchain_core::chain::SolitonParams;
use qsolchain_core::output::fmt_f64;
use qsolchain_core::protocol::{ProtocolConfig, ProtocolError, QubitState};
use qsolchain_core::scs::SpinMagnitude;
use thiserror::Error;

/// Recognized keys with their defaults.
pub const KEYS: &[(&str, &str)] = &[
    ("two_s", "10"),
    ("n_sites", "256"),
    ("n_A", "40"),
    ("n_B", "200"),
    ("g", "1"),
    ("h_A", "0.25"),
    ("h_B", "0.25"),
    ("beta", "0.78539816339744831"),
    ("lambda_beta", "10"),
    ("phi0", "0"),
    ("t0", "auto"),
    ("t1", "auto"),
    ("t2", "auto"),
    ("t1_window", "50"),
    ("t1_step", "0.01"),
    ("t3_window", "20"),
    ("t3_step", "0.01"),
    ("dt", "0.01"),
    ("n_theta", "24"),
    ("n_phi", "24"),
    ("qubit_A", "up"),
    ("qubit_B", "up"),
    ("s_list", "4,10,20"),
    ("profile_times", "400,800"),
    ("soliton_times", "0,400,800"),
    ("deform_thetas", "0.3,0.8,1.5707963267948966,2.4"),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },
}

fn validation(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Everything a run needs: the physical protocol plus output selections.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    /// `2S` values for the site-entropy profiles.
    pub s_list: Vec<u32>,
    /// Values of `t − t1` at which site-entropy profiles are written.
    pub profile_times: Vec<f64>,
    /// Values of `t − t0` at which the free soliton profile is written.
    pub soliton_times: Vec<f64>,
    /// Polar angles of the `S_A` deformations traced by the `soliton` command.
    pub deform_thetas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config_str("").expect("defaults are valid")
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut values: BTreeMap<&str, (usize, String)> = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        let Some(&(known, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        };
        if values.insert(known, (line, value.trim().to_string())).is_some() {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    let raw = Raw { values };
    raw.build()
}

struct Raw<'a> {
    values: BTreeMap<&'a str, (usize, String)>,
}

impl Raw<'_> {
    fn text(&self, key: &str) -> (usize, &str) {
        match self.values.get(key) {
            Some((line, v)) => (*line, v.as_str()),
            None => (0, KEYS.iter().find(|(k, _)| *k == key).expect("known key").1),
        }
    }

    fn error(&self, key: &str, message: String) -> ConfigError {
        match self.text(key) {
            (0, _) => validation(key, message),
            (line, _) => ConfigError::Parse { line, message },
        }
    }

    fn float(&self, key: &str) -> Result<f64, ConfigError> {
        let (_, v) = self.text(key);
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.error(key, format!("`{key}` expects a finite number, found `{v}`"))),
        }
    }

    fn auto_float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        if self.text(key).1.eq_ignore_ascii_case("auto") {
            Ok(None)
        } else {
            self.float(key).map(Some)
        }
    }

    fn uint(&self, key: &str) -> Result<usize, ConfigError> {
        let (_, v) = self.text(key);
        v.parse::<usize>()
            .map_err(|_| self.error(key, format!("`{key}` expects a non-negative integer, found `{v}`")))
    }

    fn float_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let (_, v) = self.text(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|item| match item.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(self.error(key, format!("`{key}` expects comma-separated numbers, found `{v}`"))),
            })
            .collect()
    }

    fn qubit(&self, key: &str) -> Result<QubitState, ConfigError> {
        let (_, v) = self.text(key);
        match v.to_ascii_lowercase().as_str() {
            "up" => return Ok(QubitState::UP),
            "down" => return Ok(QubitState::DOWN),
            _ => {}
        }
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| self.error(key, format!("`{key}` expects up, down or four numbers, found `{v}`")))?;
        if parts.len() != 4 {
            return Err(self.error(
                key,
                format!("`{key}` expects `re_up im_up re_down im_down`, found `{v}`"),
            ));
        }
        QubitState::new(Complex64::new(parts[0], parts[1]), Complex64::new(parts[2], parts[3]))
            .map_err(|e| validation(key, e.to_string()))
    }

    fn build(&self) -> Result<RunConfig, ConfigError> {
        let two_s = self.uint("two_s")?;
        let spin = u32::try_from(two_s)
            .ok()
            .and_then(|t| SpinMagnitude::new(t).ok())
            .ok_or_else(|| validation("two_s", format!("2S = {two_s} must be a positive integer")))?;
        let beta = self.float("beta")?;
        if !(beta > 0.0 && beta < PI / 2.0) {
            return Err(validation("beta", format!("{beta} is not in (0, pi/2)")));
        }
        let lambda = self.float("lambda_beta")?;
        if !(lambda > 0.0) {
            return Err(validation("lambda_beta", format!("{lambda} must be positive")));
        }
        let soliton = SolitonParams::from_length(beta, lambda)
            .map_err(|e| validation("lambda_beta", e.to_string()))?
            .with_phi0(self.float("phi0")?);
        let site_a = self.uint("n_A")?;
        let t0 = self
            .auto_float("t0")?
            .unwrap_or(site_a as f64 / soliton.velocity);

        let protocol = ProtocolConfig {
            spin,
            n_sites: self.uint("n_sites")?,
            site_a,
            site_b: self.uint("n_B")?,
            g: self.float("g")?,
            field_a: self.float("h_A")?,
            field_b: self.float("h_B")?,
            soliton,
            t0,
            t1: self.auto_float("t1")?,
            t2: self.auto_float("t2")?,
            t1_window: self.float("t1_window")?,
            t1_step: self.float("t1_step")?,
            t3_window: self.float("t3_window")?,
            t3_step: self.float("t3_step")?,
            dt: self.float("dt")?,
            n_theta: self.uint("n_theta")?,
            n_phi: self.uint("n_phi")?,
            qubit_a: self.qubit("qubit_A")?,
            qubit_b: self.qubit("qubit_B")?,
        };
        protocol.validate().map_err(|e| match e {
            ProtocolError::Invalid { field, reason } => validation(config_key(field), reason),
            other => validation("config", other.to_string()),
        })?;

        let s_list = self
            .float_list("s_list")?
            .into_iter()
            .map(|x| {
                if x >= 1.0 && x.fract() == 0.0 && x <= 200.0 {
                    Ok(x as u32)
                } else {
                    Err(validation("s_list", format!("{x} is not a valid 2S value")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let profile_times = self.float_list("profile_times")?;
        if let Some(t) = profile_times.iter().find(|t| !(**t >= 0.0)) {
            return Err(validation("profile_times", format!("{t} is negative")));
        }
        let soliton_times = self.float_list("soliton_times")?;
        if let Some(t) = soliton_times.iter().find(|t| !(**t >= 0.0)) {
            return Err(validation("soliton_times", format!("{t} is negative")));
        }
        let deform_thetas = self.float_list("deform_thetas")?;
        if let Some(t) = deform_thetas.iter().find(|t| !(**t >= 0.0 && **t <= PI)) {
            return Err(validation("deform_thetas", format!("{t} is not in [0, pi]")));
        }
        Ok(RunConfig {
            protocol,
            s_list,
            profile_times,
            soliton_times,
            deform_thetas,
        })
    }
}

/// Config key for a protocol validation field.
fn config_key(field: &str) -> &str {
    match field {
        "qubit" => "qubit_A",
        "schedule" => "t2",
        other => other,
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}

fn qubit_text(q: &QubitState) -> String {
    if *q == QubitState::UP {
        return "up".into();
    }
    if *q == QubitState::DOWN {
        return "down".into();
    }
    let [u, d] = q.amplitudes();
    format!("{} {} {} {}", fmt_f64(u.re), fmt_f64(u.im), fmt_f64(d.re), fmt_f64(d.im))
}

/// Serializes `cfg` in the format read by [`parse_config_str`], with every
/// key present and floats written to round-trip exactly.
pub fn render_config(cfg: &RunConfig) -> String {
    let p = &cfg.protocol;
    let opt = |t: Option<f64>| t.map_or("auto".to_string(), fmt_f64);
    let mut out = String::new();
    let mut put = |key: &str, value: String| {
        let _ = writeln!(out, "{key} = {value}");
    };
    put("two_s", p.spin.two_s().to_string());
    put("n_sites", p.n_sites.to_string());
    put("n_A", p.site_a.to_string());
    put("n_B", p.site_b.to_string());
    put("g", fmt_f64(p.g));
    put("h_A", fmt_f64(p.field_a));
    put("h_B", fmt_f64(p.field_b));
    put("beta", fmt_f64(p.soliton.beta));
    put("lambda_beta", fmt_f64(p.soliton.lambda));
    put("phi0", fmt_f64(p.soliton.phi0));
    put("t0", fmt_f64(p.t0));
    put("t1", opt(p.t1));
    put("t2", opt(p.t2));
    put("t1_window", fmt_f64(p.t1_window));
    put("t1_step", fmt_f64(p.t1_step));
    put("t3_window", fmt_f64(p.t3_window));
    put("t3_step", fmt_f64(p.t3_step));
    put("dt", fmt_f64(p.dt));
    put("n_theta", p.n_theta.to_string());
    put("n_phi", p.n_phi.to_string());
    put("qubit_A", qubit_text(&p.qubit_a));
    put("qubit_B", qubit_text(&p.qubit_b));
    put(
        "s_list",
        cfg.s_list.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    );
    put("profile_times", join(&cfg.profile_times));
    put("soliton_times", join(&cfg.soliton_times));
    put("deform_thetas", join(&cfg.deform_thetas));
    out
}
