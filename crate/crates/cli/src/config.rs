//! Run configuration: JSON file, dotted overrides, validation.

use std::path::Path;

use boxrefine::losses::KlDirection;
use boxrefine::toytrain::TrainConfig;
use boxrefine::weighting::{DEFAULT_A, DEFAULT_BINS, DEFAULT_C};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weighting: WeightingSection,
    pub layers: usize,
    pub temperature: f64,
    pub loss_weights: LossWeights,
    pub train: TrainSection,
    pub data: DataSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingSection {
    pub a: f64,
    pub c: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub fgl: f64,
    pub ddf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub rematch_every: usize,
    pub distill: bool,
    pub kl_direction: KlDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub num_queries: usize,
    pub num_gt: usize,
    pub scene_size: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub epsilon: f64,
    /// Random instances per checked function.
    pub instances: usize,
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            weighting: WeightingSection::default(),
            layers: 3,
            temperature: t.temperature,
            loss_weights: LossWeights { fgl: t.w_fgl, ddf: t.w_ddf },
            train: TrainSection::default(),
            data: DataSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

impl Default for WeightingSection {
    fn default() -> Self {
        WeightingSection { a: DEFAULT_A, c: DEFAULT_C, n_bins: DEFAULT_BINS }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        let t = TrainConfig::default();
        LossWeights { fgl: t.w_fgl, ddf: t.w_ddf }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            steps: t.steps,
            learning_rate: t.learning_rate,
            seed: 0,
            rematch_every: t.rematch_every,
            distill: t.distill,
            kl_direction: t.kl_direction,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { num_queries: 8, num_gt: 4, scene_size: 100.0, noise: 0.05 }
    }
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection { epsilon: 1e-5, instances: 50, tolerance: 1e-5 }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            learning_rate: self.train.learning_rate,
            a: self.weighting.a,
            c: self.weighting.c,
            n_bins: self.weighting.n_bins,
            temperature: self.temperature,
            w_fgl: self.loss_weights.fgl,
            w_ddf: self.loss_weights.ddf,
            distill: self.train.distill,
            rematch_every: self.train.rematch_every,
            kl_direction: self.train.kl_direction,
        }
    }

    /// Range checks not expressible in the schema.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.layers < 2 {
            return Err(CliError::Config(format!("layers: need at least 2, got {}", self.layers)));
        }
        let d = &self.data;
        if d.num_gt == 0 || d.num_queries < d.num_gt {
            return Err(CliError::Config(format!(
                "data: need num_queries >= num_gt >= 1, got {} and {}",
                d.num_queries, d.num_gt
            )));
        }
        if !(d.scene_size.is_finite() && d.scene_size > 0.0) {
            return Err(CliError::Config(format!("data.scene_size: must be positive, got {}", d.scene_size)));
        }
        if !(d.noise.is_finite() && d.noise >= 0.0) {
            return Err(CliError::Config(format!("data.noise: must be non-negative, got {}", d.noise)));
        }
        let g = &self.gradcheck;
        if !(1e-7..=1e-3).contains(&g.epsilon) {
            return Err(CliError::Config(format!("gradcheck.epsilon: {} outside [1e-7, 1e-3]", g.epsilon)));
        }
        if g.instances == 0 {
            return Err(CliError::Config("gradcheck.instances: must be at least 1".into()));
        }
        if !(g.tolerance.is_finite() && g.tolerance > 0.0) {
            return Err(CliError::Config(format!("gradcheck.tolerance: must be positive, got {}", g.tolerance)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Parses a config document, naming the offending key on failure.
pub fn from_value(value: Value) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Config(inner.to_string())
        } else {
            CliError::Config(format!("{path}: {inner}"))
        }
    })
}

pub fn parse_str(text: &str) -> Result<RunConfig, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    from_value(value)
}

/// Reads the optional config file, applies overrides, validates.
pub fn load(path: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    for (key, raw) in overrides {
        set_dotted(&mut value, key, raw)?;
    }
    if let Some(seed) = seed {
        set_dotted(&mut value, "train.seed", &seed.to_string())?;
    }
    let config = from_value(value)?;
    config.validate()?;
    Ok(config)
}

/// Sets `a.b.c` in a JSON object. The raw text is read as JSON when it
/// parses, otherwise as a string.
pub fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    for part in parents {
        let obj =
            node.as_object_mut().ok_or_else(|| CliError::Config(format!("{key}: `{part}` is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("{key}: parent is not an object")))?;
    obj.insert(last.to_string(), parsed);
    Ok(())
}
