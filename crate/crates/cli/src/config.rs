//! Run configuration, loaded from TOML or JSON and overridable from flags.

use std::path::{Path, PathBuf};

use facesym_core::classify::{
    bridge_connect, geometric_fixture, Classifier, ConstantClassifier, Endpoint, GeometricConfig, IntensityClassifier,
    Surface, SurfaceClassifier,
};
use facesym_core::evolution::DeConfig;
use facesym_core::face::{load_model, FaceModel};
use facesym_core::probe::GridSpec;
use facesym_core::render::RenderSettings;
use facesym_core::stats::PermutationConfig;
use facesym_core::EmotionLabel;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, CliError, CliResult};

/// Environment variable that replaces the endpoint of a bridge classifier.
pub const BRIDGE_ENV: &str = "FACESYM_BRIDGE";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSource {
    /// The procedural head shipped with the library.
    #[default]
    Builtin,
    /// A binary or JSON model container.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Geometric(GeometricConfig),
    /// Reads `h(s, t)` from the request provenance.
    Surface(Surface),
    Constant { value: f64 },
    Intensity,
    Bridge { endpoint: String, model_id: String },
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Geometric(GeometricConfig::default())
    }
}

impl ClassifierSpec {
    /// Instantiate the classifier. Bridge classifiers connect and handshake
    /// here, so an unreachable bridge fails before any work starts.
    pub fn build(&self) -> CliResult<Box<dyn Classifier>> {
        Ok(match self {
            ClassifierSpec::Geometric(c) => Box::new(geometric_fixture(c.clone())),
            ClassifierSpec::Surface(s) => Box::new(SurfaceClassifier::uniform(*s)),
            ClassifierSpec::Constant { value } => Box::new(ConstantClassifier::uniform(*value)),
            ClassifierSpec::Intensity => Box::new(IntensityClassifier::default()),
            ClassifierSpec::Bridge { endpoint, model_id } => {
                let endpoint: Endpoint = endpoint.parse()?;
                Box::new(bridge_connect(&endpoint, model_id)?)
            }
        })
    }

    fn validate(&self) -> CliResult<()> {
        match self {
            ClassifierSpec::Bridge { endpoint, model_id } => {
                endpoint.parse::<Endpoint>()?;
                if model_id.is_empty() {
                    return Err(config_error("bridge classifier needs a model_id"));
                }
            }
            ClassifierSpec::Constant { value } if !value.is_finite() => {
                return Err(config_error("constant classifier value must be finite"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub classifier: ClassifierSpec,
    pub emotions: Vec<EmotionLabel>,
    pub individuals: usize,
    pub grid: GridSpec,
    pub de: DeConfig,
    pub permutation: PermutationConfig,
    pub render: RenderSettings,
    pub output: PathBuf,
    /// Master seed every stage seed is derived from. Required.
    pub seed: Option<u64>,
    /// Worker threads for the individual × emotion fan-out; all cores when
    /// unset.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::Builtin,
            classifier: ClassifierSpec::default(),
            emotions: EmotionLabel::BASE.to_vec(),
            individuals: 200,
            grid: GridSpec::default(),
            de: DeConfig::default(),
            permutation: PermutationConfig::default(),
            render: RenderSettings::default(),
            output: PathBuf::from("facesym-run"),
            seed: None,
            workers: None,
        }
    }
}

/// Flag values that replace config entries when given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub individuals: Option<usize>,
    pub emotions: Option<Vec<EmotionLabel>>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub permutations: Option<usize>,
}

impl RunConfig {
    /// Parse a config file; `.json` files are JSON, anything else TOML.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigFile { path: path.to_path_buf(), message: e.to_string() })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| CliError::ConfigFile { path: path.to_path_buf(), message })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = Some(v);
        }
        if let Some(v) = o.individuals {
            self.individuals = v;
        }
        if let Some(v) = &o.emotions {
            self.emotions = v.clone();
        }
        if let Some(v) = &o.output {
            self.output = v.clone();
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
        if let Some(v) = o.permutations {
            self.permutation.permutations = v;
        }
    }

    /// Replace a bridge endpoint with `value` (normally [`BRIDGE_ENV`]).
    pub fn apply_bridge_env(&mut self, value: Option<String>) {
        if let (ClassifierSpec::Bridge { endpoint, .. }, Some(v)) = (&mut self.classifier, value) {
            *endpoint = v;
        }
    }

    pub fn master_seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| config_error("a master seed is required (config `seed` or --seed)"))
    }

    /// Check everything that can be checked without touching the output
    /// directory or a bridge.
    pub fn validate(&self) -> CliResult<()> {
        self.master_seed()?;
        if self.individuals == 0 {
            return Err(config_error("at least one individual is required"));
        }
        if self.emotions.is_empty() {
            return Err(config_error("no emotions configured"));
        }
        if let Some(e) = self.emotions.iter().find(|e| !e.is_scored()) {
            return Err(config_error(format!("{e} is not a scored emotion")));
        }
        let mut seen = self.emotions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.emotions.len() {
            return Err(config_error("emotions are listed more than once"));
        }
        if self.workers == Some(0) {
            return Err(config_error("workers must be at least 1"));
        }
        if let ModelSource::Path(p) = &self.model {
            if !p.is_file() {
                return Err(config_error(format!("model file {} does not exist", p.display())));
            }
        }
        self.grid.validate()?;
        self.de.validate()?;
        self.permutation.validate()?;
        self.render.validate()?;
        self.classifier.validate()
    }

    pub fn load_model(&self) -> CliResult<FaceModel> {
        Ok(match &self.model {
            ModelSource::Builtin => FaceModel::builtin(),
            ModelSource::Path(p) => load_model(p)?,
        })
    }
}
