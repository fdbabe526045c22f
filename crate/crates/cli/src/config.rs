//! Run configuration: one JSON document covering corpus generation, feature
//! extraction, model, schedule and probes. Unknown keys are rejected and
//! every field has a default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use amtl::corpus::CorpusSpec;
use amtl::eval::ProbeConfig;
use amtl::frontend::MfccConfig;
use amtl::model::{Mode, ModelConfig};
use amtl::trainer::TrainSchedule;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    /// Feature archive manifests to train on. Relative paths are resolved
    /// against the directory of the config file.
    pub archives: Vec<PathBuf>,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub mfcc: MfccConfig,
    pub probe: ProbeConfig,
    pub modes: Vec<Mode>,
    /// When non-empty, train AGE_SPK once per value as `alpha_max`.
    pub alpha_sweep: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusSpec::default(),
            archives: vec![],
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            mfcc: MfccConfig::default(),
            probe: ProbeConfig::default(),
            modes: Mode::ALL.to_vec(),
            alpha_sweep: vec![],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Core(amtl::Error::Config {
                field: "config".into(),
                reason: e.to_string(),
            })
        })
    }

    /// Reads a config file, resolving archive paths relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for a in &mut cfg.archives {
            if a.is_relative() {
                *a = base.join(&*a);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Seeds corpus generation and training together.
    pub fn set_seed(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.schedule.seed = seed;
    }

    /// The config of one training run, as written next to its outputs.
    pub fn for_run(&self, mode: Mode, alpha_max: f64) -> RunConfig {
        let mut c = self.clone();
        c.modes = vec![mode];
        c.alpha_sweep = vec![];
        c.model.mode = mode;
        c.schedule.mode = mode;
        c.schedule.alpha_max = alpha_max;
        c
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Keys that legitimately differ between runs of one experiment.
const PER_RUN_KEYS: [&str; 5] = ["modes", "alpha_sweep", "model.mode", "schedule.mode", "schedule.alpha_max"];

/// Dotted keys whose values differ between `a` and `b`, ignoring the
/// per-run mode and α settings.
pub fn differing_keys(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    let (mut fa, mut fb) = (vec![], vec![]);
    flatten("", &serde_json::to_value(a).expect("config serializes"), &mut fa);
    flatten("", &serde_json::to_value(b).expect("config serializes"), &mut fb);
    let keys: BTreeSet<&String> = fa.iter().chain(&fb).map(|(k, _)| k).collect();
    keys.into_iter()
        .filter(|k| !PER_RUN_KEYS.contains(&k.as_str()))
        .filter(|k| {
            let va = fa.iter().find(|(x, _)| x == *k).map(|(_, v)| v);
            let vb = fb.iter().find(|(x, _)| x == *k).map(|(_, v)| v);
            va != vb
        })
        .cloned()
        .collect()
}

/// `all`, a single mode, or a comma-separated list.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Mode::ALL.to_vec());
    }
    s.split(',')
        .map(|m| m.trim().parse::<Mode>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| CliError::Usage(format!("invalid α value `{a}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"schedule": {"n_repeat": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("n_repeat"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn differing_keys_ignore_per_run_fields() {
        let a = RunConfig::default();
        let b = a.for_run(Mode::Spk, 0.1);
        assert!(differing_keys(&a, &b).is_empty());
        let mut c = b.clone();
        c.schedule.n_repeats = 3;
        c.corpus.seed = 9;
        assert_eq!(differing_keys(&a, &c), vec!["corpus.seed".to_string(), "schedule.n_repeats".to_string()]);
    }

    #[test]
    fn mode_and_alpha_lists() {
        assert_eq!(parse_modes("all").unwrap().len(), 4);
        assert_eq!(parse_modes("BASELINE,AGE_SPK").unwrap(), vec![Mode::Baseline, Mode::AgeSpk]);
        assert!(parse_modes("AGES").is_err());
        assert_eq!(parse_alphas("0.1, 0.01,0.001").unwrap(), vec![0.1, 0.01, 0.001]);
        assert!(parse_alphas("-1").is_err());
    }
}
