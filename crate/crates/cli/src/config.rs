//! Configuration file, environment credentials and flag overrides.
//!
//! Precedence is flags > environment > file > defaults. The environment
//! only supplies API keys (`RECLAIM_API_KEY_<ROLE>`, falling back to
//! `RECLAIM_API_KEY`); keys are attached after the digest is taken, so
//! they never reach manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use reclaim::backends::http::{BackendEndpoint, HttpGenerator, HttpNli, HttpSegmenter, DEFAULT_MAX_IN_FLIGHT};
use reclaim::backends::mock::{ContainmentNli, OverlapSegmenter, SeededMock, UniformMock, Unreachable};
use reclaim::backends::{GenerationBackend, NliBackend, SegmentationPrompt, SegmenterBackend, DEFAULT_NLI_THRESHOLD};
use reclaim::genpipe::{GenConfig, GenError, PromptTemplate};
use reclaim::textproc::Segmenter;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Hash-seeded pseudo-random generator.
    Seeded,
    /// Equal scores; replies with `reply`.
    Uniform,
    /// Content-word containment entailment.
    Containment,
    /// Cites the most overlapping passage sentence per answer sentence.
    Overlap,
    /// Always unavailable; for exercising checkpoints.
    Unreachable,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub url: String,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub headers: BTreeMap<String, String>,
    /// Entailment threshold (NLI role).
    pub threshold: f64,
    /// Fixed reply for the uniform mock.
    pub reply: String,
    /// Segmentation prompt template file (segmenter role).
    pub template: Option<PathBuf>,
}

impl BackendSpec {
    fn of(kind: BackendKind) -> Self {
        Self {
            kind,
            url: String::new(),
            model_name: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            headers: BTreeMap::new(),
            threshold: DEFAULT_NLI_THRESHOLD,
            reply: String::new(),
            template: None,
        }
    }

    fn endpoint(&self) -> Result<BackendEndpoint> {
        if self.url.trim().is_empty() {
            bail!("http backend needs a url");
        }
        Ok(BackendEndpoint {
            url: self.url.clone(),
            model_name: self.model_name.clone(),
            timeout: Duration::try_from_secs_f64(self.timeout_secs).context("invalid timeout_secs")?,
            max_retries: self.max_retries,
            headers: self.headers.clone(),
            max_in_flight: self.max_in_flight,
            ..BackendEndpoint::default()
        })
    }
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self::of(BackendKind::Seeded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub refer: BackendSpec,
    pub claim: BackendSpec,
    pub unified: BackendSpec,
    pub nli: BackendSpec,
    pub segmenter: BackendSpec,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            refer: BackendSpec::of(BackendKind::Seeded),
            claim: BackendSpec::of(BackendKind::Seeded),
            unified: BackendSpec::of(BackendKind::Seeded),
            nli: BackendSpec::of(BackendKind::Containment),
            segmenter: BackendSpec::of(BackendKind::Overlap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub generation: GenConfig,
    pub backends: BackendsConfig,
    /// Abbreviation stop-list, one entry per line.
    pub abbreviations: Option<PathBuf>,
    /// Instruction text file for generation prompts.
    pub instruction: Option<PathBuf>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub mode: Option<reclaim::GenMode>,
    pub constrained: Option<bool>,
    pub min_pairs: Option<usize>,
    pub max_pairs: Option<usize>,
    pub seed: Option<u64>,
    pub tokenizer: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config file {path} has unknown keys: {}", keys.join(", "))]
    UnknownKeys { path: PathBuf, keys: Vec<String> },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn is_validation(&self) -> bool {
        matches!(self, ConfigError::Invalid(_))
    }
}

/// Parses TOML, rejecting unknown keys with their full paths.
pub fn parse_config(text: &str, path: &Path) -> Result<AppConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    let config: AppConfig = serde_ignored::deserialize(de, |p| unknown.push(p.to_string())).map_err(|e| {
        ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        }
    })?;
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys {
            path: path.to_owned(),
            keys: unknown,
        });
    }
    Ok(config)
}

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<AppConfig, ConfigError> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_owned(),
                source,
            })?;
            parse_config(&text, p)?
        }
        None => AppConfig::default(),
    };
    apply_overrides(&mut config, overrides)?;
    config
        .generation
        .validate()
        .map_err(|e| match e {
            GenError::Config(m) => ConfigError::Invalid(m),
            other => ConfigError::Invalid(other.to_string()),
        })?;
    Ok(config)
}

fn apply_overrides(config: &mut AppConfig, o: &Overrides) -> Result<(), ConfigError> {
    let g = &mut config.generation;
    if let Some(name) = &o.preset {
        let p = GenConfig::preset(name).ok_or_else(|| ConfigError::Invalid(format!("unknown preset {name:?}")))?;
        g.min_pairs = p.min_pairs;
        g.max_pairs = p.max_pairs;
    }
    if let Some(m) = o.mode {
        g.mode = m;
    }
    if let Some(c) = o.constrained {
        g.constrained = c;
    }
    if let Some(n) = o.min_pairs {
        g.min_pairs = n;
    }
    if let Some(n) = o.max_pairs {
        g.max_pairs = n;
    }
    if let Some(s) = o.seed {
        g.seed = s;
    }
    if let Some(t) = &o.tokenizer {
        g.tokenizer = t.clone();
    }
    if o.threads.is_some() {
        config.threads = o.threads;
    }
    Ok(())
}

/// sha256 of the canonical JSON form of the effective config.
pub fn config_digest(config: &AppConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// API key for a role from the environment, if any.
fn api_key(role: &str, env: &dyn Fn(&str) -> Option<String>) -> Option<String> {
    env(&format!("RECLAIM_API_KEY_{}", role.to_uppercase())).or_else(|| env("RECLAIM_API_KEY"))
}

fn with_credentials(spec: &BackendSpec, role: &str, env: &dyn Fn(&str) -> Option<String>) -> BackendSpec {
    let mut spec = spec.clone();
    if let Some(key) = api_key(role, env) {
        spec.headers.insert("Authorization".into(), format!("Bearer {key}"));
    }
    spec
}

fn std_env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl AppConfig {
    pub fn segmenter(&self) -> Result<Segmenter> {
        match &self.abbreviations {
            Some(p) => Segmenter::from_stop_list(p).with_context(|| format!("reading abbreviation list {}", p.display())),
            None => Ok(Segmenter::default()),
        }
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate> {
        match &self.instruction {
            Some(p) => Ok(PromptTemplate {
                instruction: std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            }),
            None => Ok(PromptTemplate::default()),
        }
    }

    pub fn generation_backend(&self, role: &str) -> Result<Box<dyn GenerationBackend>> {
        let spec = match role {
            "refer" => &self.backends.refer,
            "claim" => &self.backends.claim,
            _ => &self.backends.unified,
        };
        let spec = with_credentials(spec, role, &std_env);
        Ok(match spec.kind {
            BackendKind::Seeded => Box::new(SeededMock::new(self.generation.seed)),
            BackendKind::Uniform => Box::new(UniformMock::with_reply(spec.reply.clone())),
            BackendKind::Unreachable => Box::new(Unreachable),
            BackendKind::Http => Box::new(HttpGenerator::new(spec.endpoint()?, self.generation.tokenizer.clone())?),
            other => bail!("backend kind {other:?} cannot serve the {role} role"),
        })
    }

    pub fn nli_backend(&self) -> Result<Box<dyn NliBackend>> {
        let spec = with_credentials(&self.backends.nli, "nli", &std_env);
        Ok(match spec.kind {
            BackendKind::Containment => Box::new(ContainmentNli::new()),
            BackendKind::Unreachable => Box::new(Unreachable),
            BackendKind::Http => Box::new(HttpNli::new(spec.endpoint()?)?.with_threshold(spec.threshold)),
            other => bail!("backend kind {other:?} cannot serve the nli role"),
        })
    }

    pub fn segmenter_backend(&self) -> Result<Box<dyn SegmenterBackend>> {
        let spec = with_credentials(&self.backends.segmenter, "segmenter", &std_env);
        Ok(match spec.kind {
            BackendKind::Overlap => Box::new(OverlapSegmenter::new()),
            BackendKind::Unreachable => Box::new(Unreachable),
            BackendKind::Http => {
                let prompt = match &spec.template {
                    Some(p) => SegmentationPrompt {
                        name: p.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
                        template: std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                    },
                    None => SegmentationPrompt::default(),
                };
                Box::new(HttpSegmenter::new(spec.endpoint()?, prompt)?)
            }
            other => bail!("backend kind {other:?} cannot serve the segmenter role"),
        })
    }
}
