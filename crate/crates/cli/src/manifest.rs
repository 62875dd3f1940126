//! `manifest.cfg`: the full configuration of a run followed by its resolved
//! and derived quantities as comments.
//!
//! The configuration part is written exactly as [`render_config`] produces
//! it, so a manifest is itself a valid config and re-running from it
//! reproduces the CSVs byte for byte. Automatically selected times stay
//! `auto` and their resolved values appear in the comments.

use std::fmt::Write as _;

use qsolchain_core::output::fmt_f64;

use crate::config::{render_config, RunConfig};

#[derive(Debug, Clone)]
pub struct Manifest {
    command: String,
    config: String,
    derived: Vec<(String, f64)>,
    resolved: Vec<(String, f64)>,
    timings: Vec<(String, f64)>,
    warnings: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let p = &cfg.protocol;
        let s = &p.soliton;
        Self {
            command: command.to_string(),
            config: render_config(cfg),
            derived: vec![
                ("h".into(), s.h),
                ("velocity".into(), s.velocity),
                ("lambda".into(), s.lambda),
                ("tau".into(), s.tau),
                ("soliton_energy".into(), s.energy),
                ("t0".into(), p.t0),
                ("timescale_ratio".into(), p.timescale_ratio()),
            ],
            resolved: Vec::new(),
            timings: Vec::new(),
            warnings: p.warnings(),
        }
    }

    pub fn resolved(&mut self, key: &str, value: f64) {
        match self.resolved.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.resolved.push((key.to_string(), value)),
        }
    }

    pub fn timing(&mut self, label: &str, seconds: f64) {
        match self.timings.iter_mut().find(|(k, _)| k == label) {
            Some(entry) => entry.1 += seconds,
            None => self.timings.push((label.to_string(), seconds)),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# qsolchain {} {}", env!("CARGO_PKG_VERSION"), self.command);
        for (key, value) in &self.derived {
            let _ = writeln!(out, "# derived {key} = {}", fmt_f64(*value));
        }
        for (key, value) in &self.resolved {
            let _ = writeln!(out, "# resolved {key} = {}", fmt_f64(*value));
        }
        for (label, seconds) in &self.timings {
            let _ = writeln!(out, "# time {label} = {seconds:.3} s");
        }
        for warning in &self.warnings {
            let _ = writeln!(out, "# warning: {warning}");
        }
        out.push_str(&self.config);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    #[test]
    fn manifest_parses_back_to_the_same_config() {
        let cfg = parse_config_str("lambda_beta = 2.5\ns_list = 2,4\n").unwrap();
        let mut m = Manifest::new("pipeline", &cfg);
        m.resolved("t1", 51.25);
        m.timing("stage1", 0.5);
        m.timing("stage1", 0.25);
        let text = m.render();
        assert!(text.contains("# resolved t1 = 5.1250000000000000e1"));
        assert!(text.contains("# time stage1 = 0.750 s"));
        assert!(text.contains("# warning:"));
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
    }
}
