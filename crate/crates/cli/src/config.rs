//! Run configuration: one TOML file, dotted-key overrides, and the resolved
//! snapshot written next to every run's outputs.

use std::path::{Path, PathBuf};

use cropnet_core::augment::AugmentationConfig;
use cropnet_core::data::{load_dataset, Dataset, LabelSchema};
use cropnet_core::eval::Experiment;
use cropnet_core::synth::{default_templates, generate_region, CropTemplate, RegionConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where a dataset comes from: a JSON-lines file or the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: Option<PathBuf>,
    pub synth: Option<SynthSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub seed: u64,
    #[serde(default)]
    pub region: RegionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityGrid {
    pub windows: Vec<u32>,
    pub spans: Vec<(i32, i32)>,
}

impl Default for SensitivityGrid {
    fn default() -> Self {
        SensitivityGrid {
            windows: vec![5, 10, 15, 30],
            spans: vec![(121, 334)],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamConfig {
    /// Class names to map; empty means every class.
    pub classes: Vec<String>,
    /// Cap on samples averaged per class.
    pub max_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub threads: usize,
    /// Train share of the in-region split.
    pub train_fraction: f64,
    /// Class names; defaults to the seven-class schema.
    pub schema: Option<Vec<String>>,
    /// Generator templates; defaults to the built-in set.
    pub templates: Option<Vec<CropTemplate>>,
    pub checkpoint: Option<PathBuf>,
    pub experiment: Experiment,
    pub source: Option<DataSource>,
    pub target: Option<DataSource>,
    pub sensitivity: SensitivityGrid,
    /// Full augmentation whose prefixes form the ablation ladder.
    pub ablation: AugmentationConfig,
    pub cam: CamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: (1..=10).collect(),
            out: PathBuf::from("out"),
            threads: 1,
            train_fraction: 0.8,
            schema: None,
            templates: None,
            checkpoint: None,
            experiment: Experiment::default(),
            source: None,
            target: None,
            sensitivity: SensitivityGrid::default(),
            ablation: AugmentationConfig::default(),
            cam: CamConfig::default(),
        }
    }
}

/// Sets `path` (dot-separated keys) inside a TOML document, creating tables
/// on the way. The value is parsed as TOML, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!(
            "override key `{key}` is malformed"
        )));
    }
    let value = parse_value(raw.trim());
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads the file (if any), applies overrides in order, and validates.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        self.experiment.validate().map_err(config_error)?;
        self.ablation.validate().map_err(config_error)?;
        let schema = self.schema()?;
        self.experiment
            .rule
            .validate(&schema)
            .map_err(config_error)?;
        for (name, src) in [("source", &self.source), ("target", &self.target)] {
            if let Some(s) = src {
                match (&s.path, &s.synth) {
                    (Some(_), None) => {}
                    (None, Some(g)) => g.region.validate().map_err(config_error)?,
                    _ => {
                        return Err(CliError::Config(format!(
                            "{name} needs exactly one of `path` or `synth`"
                        )))
                    }
                }
            }
        }
        if let Some(t) = &self.templates {
            for tpl in t {
                tpl.validate().map_err(config_error)?;
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<LabelSchema, CliError> {
        match &self.schema {
            None => Ok(LabelSchema::crop_globe()),
            Some(names) => LabelSchema::new(names.iter().cloned()).map_err(config_error),
        }
    }

    pub fn templates(&self) -> Vec<CropTemplate> {
        self.templates.clone().unwrap_or_else(default_templates)
    }

    /// TOML snapshot of the merged configuration.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime {
            kind: "serialize",
            message: e.to_string(),
        })
    }

    pub fn load(&self, which: Which) -> Result<Dataset, CliError> {
        let src = match which {
            Which::Source => self.source.as_ref(),
            Which::Target => self.target.as_ref(),
        }
        .ok_or_else(|| CliError::Config(format!("no {} dataset configured", which.name())))?;
        let schema = self.schema()?;
        if let Some(path) = &src.path {
            let loaded = load_dataset(path, &schema).map_err(|e| CliError::Runtime {
                kind: e.kind(),
                message: format!("{}: {e}", path.display()),
            })?;
            if !loaded.rejected.is_empty() {
                log::warn!(
                    "{}: {} invalid lines skipped",
                    path.display(),
                    loaded.rejected.len()
                );
            }
            return Ok(loaded.dataset);
        }
        let g = src.synth.as_ref().expect("validated");
        Ok(generate_region(
            &self.templates(),
            &schema,
            &g.region,
            g.seed,
        )?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Source,
    Target,
}

impl Which {
    fn name(self) -> &'static str {
        match self {
            Which::Source => "source",
            Which::Target => "target",
        }
    }
}

fn config_error(e: cropnet_core::Error) -> CliError {
    CliError::Config(e.to_string())
}
