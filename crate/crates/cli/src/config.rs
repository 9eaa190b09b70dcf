//! Run configuration file: one JSON object with a schema version and one
//! section per pipeline stage. Unknown keys are rejected with a suggestion.

use crate::CliError;
use meshforge::pose_sequence::InterpConfig;
use meshforge::recover_net::TrainConfig;
use meshforge::scene_gen::SceneConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrapeSettings {
    /// Simulated-time budget for reaching equilibrium, seconds.
    pub max_seconds: f64,
}

impl Default for DrapeSettings {
    fn default() -> Self {
        Self { max_seconds: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub seed: u64,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub interp: InterpConfig,
    pub drape: DrapeSettings,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            scene: SceneConfig::default(),
            train: TrainConfig::default(),
            interp: InterpConfig::default(),
            drape: DrapeSettings::default(),
        }
    }
}

impl ConfigFile {
    /// Makes `seed` the single source of randomness for every section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn suggestion(key: &str, known: &Map<String, Value>) -> String {
    known
        .keys()
        .map(|k| (strsim::jaro_winkler(key, k), k))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| format!("; did you mean `{k}`?"))
        .unwrap_or_default()
}

fn check_keys(user: &Map<String, Value>, known: &Map<String, Value>, path: &str) -> Result<(), CliError> {
    for (key, value) in user {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        let Some(default) = known.get(key) else {
            return Err(CliError::Validation(format!("unknown config key `{full}`{}", suggestion(key, known))));
        };
        if let (Value::Object(u), Value::Object(k)) = (value, default) {
            check_keys(u, k, &full)?;
        }
    }
    Ok(())
}

fn log_defaults(user: Option<&Map<String, Value>>, effective: &Map<String, Value>, path: &str) {
    for (key, value) in effective {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match (user.and_then(|u| u.get(key)), value) {
            (None, Value::Object(inner)) => log_defaults(None, inner, &full),
            (Some(Value::Object(u)), Value::Object(inner)) => log_defaults(Some(u), inner, &full),
            (None, v) => log::info!("default {full} = {v}"),
            _ => {}
        }
    }
}

/// Parses and checks a configuration, filling in defaults (each logged).
pub fn validate_config(text: &str) -> Result<ConfigFile, CliError> {
    let user: Value = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
    let Value::Object(user) = user else {
        return Err(CliError::Validation("config must be a JSON object".into()));
    };
    let known = match serde_json::to_value(ConfigFile::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    };
    check_keys(&user, &known, "")?;
    if let Some(v) = user.get("schema_version") {
        if v.as_u64() != Some(CONFIG_SCHEMA_VERSION as u64) {
            return Err(CliError::Validation(format!(
                "config schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
            )));
        }
    }
    let cfg: ConfigFile =
        serde_json::from_value(Value::Object(user.clone())).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    cfg.scene.validate().map_err(|e| CliError::Validation(format!("scene: {e}")))?;
    cfg.scene.cloth.validate().map_err(|e| CliError::Validation(format!("scene.cloth: {e}")))?;
    cfg.train.validate().map_err(|e| CliError::Validation(format!("train: {e}")))?;
    let i = &cfg.interp;
    if !(i.radians_per_frame > 0.0) || i.min_frames < 2 || i.min_frames > i.max_frames {
        return Err(CliError::Validation(
            "interp: radians_per_frame must be positive and 2 ≤ min_frames ≤ max_frames".into(),
        ));
    }
    if !(cfg.drape.max_seconds > 0.0) {
        return Err(CliError::Validation("drape.max_seconds must be positive".into()));
    }
    if let Ok(Value::Object(effective)) = serde_json::to_value(&cfg) {
        log_defaults(Some(&user), &effective, "");
    }
    Ok(cfg)
}
