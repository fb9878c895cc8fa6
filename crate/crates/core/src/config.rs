//! Experiment configuration: strict-keyed TOML or JSON plus report-only
//! cross-parameter advisories.
//!
//! The schema has five top-level keys (experiment, seed, reps, out,
//! params); anything else is rejected. The params table stays opaque here
//! and is decoded strictly by the experiment that owns it, so unknown
//! parameter names fail there with a field-level message.

use crate::error::{Error, Result};
use crate::report::sha256_hex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    /// Replica count override; each experiment has its own default.
    pub reps: Option<u64>,
    /// Output directory; the CLI default is `out/<experiment>`.
    pub out: Option<String>,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
}

fn empty_params() -> serde_json::Value {
    serde_json::Value::Object(serde_json::Map::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

pub fn parse_config(text: &str, format: ConfigFormat) -> Result<ExperimentConfig> {
    let value: serde_json::Value = match format {
        ConfigFormat::Json => serde_json::from_str(text)
            .map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?,
        ConfigFormat::Toml => {
            let t: toml::Table = text
                .parse()
                .map_err(|e| Error::config(format!("config is not valid TOML: {e}")))?;
            serde_json::to_value(t)?
        }
    };
    let cfg: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| Error::config(format!("config schema: {e}")))?;
    if cfg.experiment.is_empty() {
        return Err(Error::config("config names no experiment"));
    }
    if let Some(0) = cfg.reps {
        return Err(Error::config("reps must be at least 1"));
    }
    Ok(cfg)
}

/// Format by extension: .json is JSON, everything else TOML.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ConfigFormat::Json,
        _ => ConfigFormat::Toml,
    };
    parse_config(&text, format)
}

impl ExperimentConfig {
    pub fn minimal(experiment: &str, seed: u64) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            seed,
            reps: None,
            out: None,
            params: empty_params(),
        }
    }

    /// Decode the params table into an experiment's own struct, strictly.
    pub fn params_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.params.clone()).map_err(|e| {
            Error::config(format!(
                "params for experiment '{}': {e}",
                self.experiment
            ))
        })
    }

    /// Canonical serialization for hashing: serde_json maps are sorted by
    /// key, so semantically equal configs hash equally.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn get_f64(params: &serde_json::Value, key: &str) -> Option<f64> {
    params.get(key).and_then(|v| v.as_f64())
}

/// Report-only cross-parameter checks. Schema and module preconditions are
/// enforced elsewhere (and fatally); these are the softer inter-parameter
/// rules where a run is legal but the theory behind it stops applying.
pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut violations = Vec::new();
    let p = &cfg.params;

    // Collision and spread windows sit inside one time cell.
    if matches!(cfg.experiment.as_str(), "cell-event" | "nu") {
        if let Some(ell) = get_f64(p, "ell") {
            let t = get_f64(p, "t_infect").unwrap_or_else(|| ell.powf(5.0 / 3.0));
            let beta = get_f64(p, "beta_time").unwrap_or(4.0 * ell * ell);
            if t >= beta {
                violations.push(format!(
                    "collision window t_infect = {t} must end before the cell length beta_time = {beta}"
                ));
            }
        }
    }

    // Confined mixing needs room between the coupling box and the target.
    if matches!(cfg.experiment.as_str(), "mixing" | "confined-mixing") {
        let k = get_f64(p, "k");
        let kp = get_f64(p, "k_prime");
        if let (Some(k), Some(kp)) = (k, kp) {
            let deltas: Vec<f64> = p
                .get("deltas")
                .and_then(|v| v.as_array())
                .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                .unwrap_or_default();
            let c1 = get_f64(p, "c1").unwrap_or(1.0);
            for delta in deltas {
                let need = c1 * (delta * delta.ln().max(1.0)).sqrt();
                if k - kp < need {
                    violations.push(format!(
                        "margin K - K' = {} below c1 sqrt(Delta ln Delta) = {need:.2} at Delta = {delta}",
                        k - kp
                    ));
                }
            }
        }
    }

    // Degenerate-weight fraction must stay subcritical: 0.5 is the d=2
    // bond threshold; 0.2488 is the d=3 literature value, advisory only.
    for key in ["p0", "p_bad"] {
        if let Some(p0) = get_f64(p, key) {
            let d = get_f64(p, "d").unwrap_or(2.0);
            if d <= 2.0 && p0 >= 0.5 {
                violations.push(format!("{key} = {p0} is not below the d=2 threshold 0.5"));
            } else if d >= 3.0 && p0 >= 0.2488 {
                violations.push(format!(
                    "{key} = {p0} is not below the d=3 advisory threshold 0.2488"
                ));
            }
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_parse_to_the_same_config() {
        let t = parse_config(
            "experiment = \"si-speed\"\nseed = 7\n\n[params]\nside = 200\nlambda0 = 2.0\n",
            ConfigFormat::Toml,
        )
        .unwrap();
        let j = parse_config(
            r#"{"experiment": "si-speed", "seed": 7, "params": {"side": 200, "lambda0": 2.0}}"#,
            ConfigFormat::Json,
        )
        .unwrap();
        assert_eq!(t.experiment, "si-speed");
        assert_eq!(t.seed, 7);
        assert_eq!(t.sha256(), j.sha256());
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let err = parse_config(
            "experiment = \"mixing\"\nsee = 3\n",
            ConfigFormat::Toml,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("see"));
    }

    #[test]
    fn empty_config_is_a_config_error() {
        assert_eq!(parse_config("", ConfigFormat::Toml).unwrap_err().exit_code(), 2);
        assert_eq!(
            parse_config("{}", ConfigFormat::Json).unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn params_decode_strictly() {
        #[derive(Debug, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct P {
            #[allow(dead_code)]
            side: usize,
        }
        let cfg = parse_config(
            "experiment = \"x\"\n[params]\nside = 8\nsid = 9\n",
            ConfigFormat::Toml,
        )
        .unwrap();
        let err = cfg.params_as::<P>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sid"));
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse_config("experiment = \"poincare\"\n", ConfigFormat::Toml).unwrap();
        assert_eq!(cfg.seed, 0);
        assert!(cfg.reps.is_none());
        assert!(cfg.params.as_object().unwrap().is_empty());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = parse_config(
            "experiment = \"x\"\n[params]\na = 1\nb = 2\n",
            ConfigFormat::Toml,
        )
        .unwrap();
        let b = parse_config(
            "experiment = \"x\"\n[params]\nb = 2\na = 1\n",
            ConfigFormat::Toml,
        )
        .unwrap();
        assert_eq!(a.sha256(), b.sha256());
    }

    fn cfg_with(experiment: &str, params: &str) -> ExperimentConfig {
        parse_config(
            &format!("experiment = \"{experiment}\"\n[params]\n{params}\n"),
            ConfigFormat::Toml,
        )
        .unwrap()
    }

    #[test]
    fn window_past_cell_end_is_listed() {
        let bad = cfg_with("cell-event", "ell = 8\nt_infect = 300.0");
        let report = validate(&bad);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("beta_time"));
        let good = cfg_with("cell-event", "ell = 8");
        assert!(validate(&good).is_clean());
    }

    #[test]
    fn thin_margin_is_listed() {
        let bad = cfg_with("mixing", "k = 24\nk_prime = 20\ndeltas = [64.0]");
        assert!(!validate(&bad).is_clean());
        let good = cfg_with("mixing", "k = 64\nk_prime = 16\ndeltas = [64.0]");
        assert!(validate(&good).is_clean());
    }

    #[test]
    fn supercritical_dilution_is_listed() {
        let bad = cfg_with("surface", "p_bad = 0.6");
        assert!(!validate(&bad).is_clean());
        let bad3 = cfg_with("surface", "p_bad = 0.3\nd = 3");
        assert!(!validate(&bad3).is_clean());
        let good = cfg_with("surface", "p_bad = 0.01");
        assert!(validate(&good).is_clean());
    }
}
