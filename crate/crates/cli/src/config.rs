//! Flat `key = value` run configuration.
//!
//! Every key is known in advance and has a default; unknown keys and
//! unparsable values are config errors. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("phantom.width", "32"),
    ("phantom.height", "32"),
    ("phantom.depth", "18"),
    ("phantom.ellipses", "6"),
    ("phantom.z_variation", "1.0"),
    ("geometry.mode", "sparse"),
    ("geometry.views", "8"),
    ("geometry.n_det", "0"),
    ("schedule.steps", "1000"),
    ("schedule.beta_min", "0.0001"),
    ("schedule.beta_max", "0.02"),
    ("train.network", "joint"),
    ("train.k", "3"),
    ("train.j", "1"),
    ("train.hidden", "32"),
    ("train.emb_dim", "32"),
    ("train.skip", "true"),
    ("train.iterations", "1000"),
    ("train.batch_size", "4"),
    ("train.learning_rate", "0.001"),
    ("train.optimizer", "momentum"),
    ("train.momentum", "0.9"),
    ("train.grad_clip", "0.0"),
    ("train.crop", "0"),
    ("train.volumes", "16"),
    ("train.cross_frequency", "2"),
    ("recon.method", "blendpp"),
    ("recon.nfe", "200"),
    ("recon.eta", "0.85"),
    ("recon.cg_iters", "5"),
    ("recon.k", "3"),
    ("recon.j", "1"),
    ("recon.cross_frequency", "2"),
    ("recon.ablation", "none"),
    ("recon.ztv_weight", "0.05"),
    ("recon.direction", "rederived"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seed: 0,
            threads: 1,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::defaults();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::defaults()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                if !same_kind(slot, value) {
                    return Err(CliError::Config(format!("`{key}`: cannot parse {value:?}")));
                }
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no default for {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.parse()
            .map_err(|_| CliError::Config(format!("`{key}`: cannot parse {raw:?}")))
    }

    /// Value of `key`, which must be one of `choices`.
    pub fn choice(&self, key: &str, choices: &[&str]) -> Result<&str, CliError> {
        let v = self.str(key);
        if choices.contains(&v) {
            Ok(v)
        } else {
            Err(CliError::Config(format!("`{key}` must be one of {choices:?}, got {v:?}")))
        }
    }
}

/// Numeric and boolean keys keep the type of their default; integer
/// defaults are written without a decimal point.
fn same_kind(default: &str, value: &str) -> bool {
    if default.parse::<bool>().is_ok() {
        value.parse::<bool>().is_ok()
    } else if default.parse::<u64>().is_ok() {
        value.parse::<u64>().is_ok()
    } else if default.parse::<f64>().is_ok() {
        value.parse::<f64>().is_ok()
    } else {
        true
    }
}

impl fmt::Display for RunConfig {
    /// The resolved configuration in the same format it is read from.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        writeln!(f, "# seed = {}", self.seed)?;
        write!(f, "# threads = {}", self.threads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse("# desk\nrecon.eta = 0.5  # less noise\n\ntrain.k=1\n").unwrap();
        assert_eq!(c.get::<f64>("recon.eta").unwrap(), 0.5);
        assert_eq!(c.get::<usize>("train.k").unwrap(), 1);
        assert_eq!(c.str("recon.method"), "blendpp");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("recon.etta = 1").unwrap_err();
        assert!(err.to_string().contains("recon.etta"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_line() {
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn echo_parses_back() {
        let mut c = RunConfig::defaults();
        c.set("geometry.views", "4").unwrap();
        let back = RunConfig::parse(&c.to_string()).unwrap();
        assert_eq!(back.values, c.values);
    }

    #[test]
    fn values_keep_their_type() {
        let mut c = RunConfig::defaults();
        assert!(c.set("recon.eta", "fast").is_err());
        assert!(c.set("recon.nfe", "2.5").is_err());
        assert!(c.set("train.skip", "1").is_err());
        c.set("recon.eta", "1").unwrap();
        c.set("train.grad_clip", "0.5").unwrap();
        assert_eq!(c.get::<f64>("train.grad_clip").unwrap(), 0.5);
    }

    #[test]
    fn bad_choice() {
        let mut c = RunConfig::defaults();
        c.set("recon.method", "magic").unwrap();
        assert!(c.choice("recon.method", &["blendpp", "blend"]).is_err());
    }
}
