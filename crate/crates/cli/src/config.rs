//! Resolved run configuration: a flat key-value file overlaid with command
//! line values, read through typed getters that remember what they returned.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pulsecorr_core::kv::parse_kv;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "synth.pulse_count",
    "synth.sample_period",
    "synth.repetition_period",
    "synth.pulse_length",
    "synth.pulse_width",
    "synth.base_energies",
    "synth.noise_sigma",
    "synth.baseline_offset",
    "synth.phase_offset",
    "synth.seed",
    "synth.settings_out",
    "trace.sample_period",
    "trace.repetition_period",
    "trace.phase",
    "filter.svd_keep",
    "filter.sg_degree",
    "filter.sg_window",
    "filter.spectrum_out",
    "analyze.xi",
    "analyze.delta",
    "analyze.input_kind",
    "protocol.p_signal",
    "protocol.p_decoy",
    "protocol.p_vacuum",
    "channel.eta_det",
    "channel.alpha_att",
    "channel.dark_count",
    "channel.misalignment",
    "channel.f_ec",
    "channel.q_z",
    "channel.q_x",
    "security.n_cut",
    "security.quadrature_nodes",
    "security.quadrature_tol",
    "model.source",
    "model.xi",
    "model.units",
    "model.signal_photons",
    "model.point_mass",
    "model.out",
    "scan.start_km",
    "scan.stop_km",
    "scan.step_km",
    "scan.attenuation_db",
];

/// Prefix of the per-pattern bias keys, e.g. `synth.bias.SD = 1.02`.
pub const BIAS_PREFIX: &str = "synth.bias.";

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl RunConfig {
    /// File values first, then `overrides` in order; later entries win.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Data(format!("cannot read config {}: {e}", path.display())))?;
            let origin = path.display().to_string();
            let entries = parse_kv(&text, &origin).map_err(|e| Failure::Usage(e.to_string()))?;
            for e in entries {
                check_key(&e.key).map_err(|m| Failure::Usage(format!("{origin}:{}: {m}", e.line)))?;
                values.insert(e.key, e.value);
            }
        }
        for (k, v) in overrides {
            check_key(k).map_err(Failure::Usage)?;
            values.insert(k.clone(), v.clone());
        }
        Ok(RunConfig {
            values,
            resolved: RefCell::new(BTreeMap::new()),
        })
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T, Failure>
    where
        T: FromStr + Display,
    {
        let v = match self.values.get(key) {
            Some(s) => s
                .parse()
                .map_err(|_| Failure::Usage(format!("`{key}`: cannot parse `{s}`")))?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr + Display,
    {
        match self.values.get(key) {
            Some(s) => {
                let v: T = s
                    .parse()
                    .map_err(|_| Failure::Usage(format!("`{key}`: cannot parse `{s}`")))?;
                self.record(key, v.to_string());
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// Whitespace- or comma-separated numbers.
    pub fn get_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, Failure> {
        let v = match self.values.get(key) {
            Some(s) => s
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Failure::Usage(format!("`{key}`: `{t}` is not a number")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => default.to_vec(),
        };
        let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        self.record(key, text.join(" "));
        Ok(v)
    }

    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        let p = self.values.get(key).map(PathBuf::from);
        if let Some(p) = &p {
            self.record(key, p.display().to_string());
        }
        p
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, String)> {
        let out: Vec<(String, String)> = self
            .values
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k[prefix.len()..].to_string(), v.clone()))
            .collect();
        for (k, v) in &out {
            self.record(&format!("{prefix}{k}"), v.clone());
        }
        out
    }

    /// Records a value that did not come from a key, such as an input path.
    pub fn note(&self, key: &str, value: impl Display) {
        self.record(key, value.to_string());
    }

    /// SHA-256 over the sorted `key = value` lines of everything resolved so
    /// far, leaving out where results are written.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.resolved.borrow().iter().filter(|(k, _)| !OUTPUT_KEYS.contains(&k.as_str())) {
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }
}

/// Output locations; they do not change any result.
const OUTPUT_KEYS: [&str; 3] = ["synth.settings_out", "filter.spectrum_out", "model.out"];

fn check_key(key: &str) -> Result<(), String> {
    if KNOWN_KEYS.contains(&key) || (key.starts_with(BIAS_PREFIX) && key.len() > BIAS_PREFIX.len()) {
        Ok(())
    } else {
        Err(format!("unknown key `{key}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_hash_tracks_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "analyze.xi = 1\nanalyze.delta = 0.2\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &[("analyze.xi".into(), "2".into())]).unwrap();
        assert_eq!(cfg.get::<usize>("analyze.xi", 0).unwrap(), 2);
        assert_eq!(cfg.get::<f64>("analyze.delta", 0.1).unwrap(), 0.2);
        let h1 = cfg.hash();
        let other = RunConfig::load(None, &[("analyze.xi".into(), "2".into())]).unwrap();
        other.get::<usize>("analyze.xi", 0).unwrap();
        other.get::<f64>("analyze.delta", 0.1).unwrap();
        assert_ne!(h1, other.hash());
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let e = RunConfig::load(None, &[("analyse.xi".into(), "1".into())]).unwrap_err();
        assert!(matches!(e, Failure::Usage(_)));
        let cfg = RunConfig::load(None, &[("synth.bias.SD".into(), "1.02".into())]).unwrap();
        assert_eq!(cfg.with_prefix(BIAS_PREFIX), vec![("SD".to_string(), "1.02".to_string())]);
        let cfg = RunConfig::load(None, &[("analyze.xi".into(), "one".into())]).unwrap();
        assert!(cfg.get::<usize>("analyze.xi", 0).is_err());
        let cfg = RunConfig::load(None, &[("scan.attenuation_db".into(), "0, 3 6".into())]).unwrap();
        assert_eq!(cfg.get_list("scan.attenuation_db", &[]).unwrap(), vec![0.0, 3.0, 6.0]);
    }
}
