//! Run configuration file and the registry, planner and evaluator it
//! describes. Relative paths are resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::knowledge::{self, Corpus, HashEmbedder};
use crate::orchestrator::{Budgets, ConfigSnapshot, Evaluator, Orchestrator, Planner, Toggles, DEFAULT_RETRIES};
use crate::perception::{self, MockPerception, RemotePerception};
use crate::protocol::{Address, Registry, RemoteEndpoint, DEFAULT_DEADLINE};
use crate::reasoning::{self, RemoteTextBackend, ScriptedBackend, TextBackend, DEFAULT_CONTEXT_LIMIT, REASONING_AGENT};
use crate::tools::general;

pub const DEFAULT_EMBEDDING_DIM: usize = 64;
pub const DEFAULT_RUN_DIR: &str = "runs";

/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("config: missing key `{0}`")]
    MissingKey(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("backend `{section}`: {reason}")]
    Backend { section: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_deadline_secs")]
    pub deadline_secs: f64,
}

fn default_retries() -> u32 {
    DEFAULT_RETRIES
}

fn default_deadline_secs() -> f64 {
    DEFAULT_DEADLINE.as_secs_f64()
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self { retries: default_retries(), deadline_secs: default_deadline_secs() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KnowledgeBackend {
    /// Local document directory with hashed embeddings.
    Corpus {
        corpus: PathBuf,
        #[serde(default = "default_dim")]
        embedding_dim: usize,
    },
    /// Tool server exposing the knowledge tools.
    Remote { address: String },
}

fn default_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptionBackendConfig {
    Mock { script: PathBuf },
    Remote { address: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextBackendConfig {
    Scripted {
        script: PathBuf,
        #[serde(default)]
        context_limit: Option<usize>,
    },
    Remote {
        address: String,
        #[serde(default)]
        tool: Option<String>,
        #[serde(default)]
        context_limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentBackendConfig {
    #[default]
    Rule,
    Scripted {
        script: PathBuf,
    },
    Remote {
        address: String,
        #[serde(default)]
        tool: Option<String>,
        #[serde(default)]
        context_limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneralBackend {
    #[default]
    Native,
    Remote {
        address: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    #[serde(default)]
    pub general: GeneralBackend,
    #[serde(default)]
    pub knowledge: Option<KnowledgeBackend>,
    #[serde(default)]
    pub perception: Option<PerceptionBackendConfig>,
    #[serde(default)]
    pub reasoning: Option<TextBackendConfig>,
    #[serde(default)]
    pub planner: AgentBackendConfig,
    #[serde(default)]
    pub evaluator: AgentBackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub toggles: Toggles,
    #[serde(default)]
    pub budgets: BudgetSection,
    /// Parallel questions; defaults to the available cores.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    /// Where segmentation masks are written.
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
    #[serde(default)]
    pub backends: Backends,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn backend_err(section: &str) -> impl Fn(String) -> ConfigError + '_ {
    move |reason| ConfigError::Backend { section: section.into(), reason }
}

fn endpoint(section: &str, address: &str) -> Result<Arc<RemoteEndpoint>, ConfigError> {
    let a: Address = address.parse().map_err(backend_err(section))?;
    Ok(Arc::new(RemoteEndpoint::new(a)))
}

/// `limit` overrides a scripted backend's context limit.
fn text_backend(
    section: &str,
    cfg: &AgentBackendConfig,
    limit: Option<usize>,
    base: &Path,
    deadline: Duration,
) -> Result<Option<Arc<dyn TextBackend>>, ConfigError> {
    Ok(match cfg {
        AgentBackendConfig::Rule => None,
        AgentBackendConfig::Scripted { script } => {
            let b = ScriptedBackend::load(&base.join(script)).map_err(backend_err(section))?;
            Some(Arc::new(match limit {
                Some(l) => b.with_context_limit(l),
                None => b,
            }))
        }
        AgentBackendConfig::Remote { address, tool, context_limit } => Some(Arc::new(RemoteTextBackend::new(
            endpoint(section, address)?,
            tool.clone().unwrap_or_else(|| REASONING_AGENT.into()),
            context_limit.unwrap_or(DEFAULT_CONTEXT_LIMIT),
            deadline,
        ))),
    })
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        if !table.contains_key("toggles") {
            return Err(ConfigError::MissingKey("toggles".into()));
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        if !(cfg.budgets.deadline_secs.is_finite() && cfg.budgets.deadline_secs > 0.0) {
            return Err(ConfigError::Invalid("budgets.deadline_secs must be positive".into()));
        }
        if cfg.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        cfg.base = base.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn budgets(&self) -> Budgets {
        Budgets { retries: self.budgets.retries, deadline: Duration::from_secs_f64(self.budgets.deadline_secs) }
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or_else(available_workers)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.base.join(self.run_dir.as_deref().unwrap_or(Path::new(DEFAULT_RUN_DIR)))
    }

    pub fn scratch_dir(&self) -> PathBuf {
        match &self.scratch_dir {
            Some(p) => self.base.join(p),
            None => std::env::temp_dir().join("geomm-masks"),
        }
    }

    /// Registry over every configured backend. Disabled capabilities are
    /// filtered later by the orchestrator.
    pub fn registry(&self) -> Result<Registry, ConfigError> {
        let b = &self.backends;
        let deadline = self.budgets().deadline;
        let mut reg = Registry::new().with_deadline(deadline);
        reg = match &b.general {
            GeneralBackend::Native => general::register(reg),
            GeneralBackend::Remote { address } => reg.register_remote(endpoint("general", address)?),
        }
        .map_err(|e| backend_err("general")(e.to_string()))?;
        if let Some(k) = &b.knowledge {
            reg = match k {
                KnowledgeBackend::Corpus { corpus, embedding_dim } => {
                    let corpus =
                        Corpus::load(&self.base.join(corpus)).map_err(|e| backend_err("knowledge")(e.to_string()))?;
                    knowledge::register(reg, Arc::new(corpus), Arc::new(HashEmbedder::new(*embedding_dim)))
                }
                KnowledgeBackend::Remote { address } => reg.register_remote(endpoint("knowledge", address)?),
            }
            .map_err(|e| backend_err("knowledge")(e.to_string()))?;
        }
        if let Some(p) = &b.perception {
            let backend: Arc<dyn perception::PerceptionBackend> = match p {
                PerceptionBackendConfig::Mock { script } => {
                    Arc::new(MockPerception::load(&self.base.join(script)).map_err(backend_err("perception"))?)
                }
                PerceptionBackendConfig::Remote { address } => {
                    Arc::new(RemotePerception::new(endpoint("perception", address)?, deadline))
                }
            };
            reg = perception::register(reg, backend, self.scratch_dir())
                .map_err(|e| backend_err("perception")(e.to_string()))?;
        }
        if let Some(r) = &b.reasoning {
            let (agent, limit) = match r {
                TextBackendConfig::Scripted { script, context_limit } => {
                    (AgentBackendConfig::Scripted { script: script.clone() }, *context_limit)
                }
                TextBackendConfig::Remote { address, tool, context_limit } => (
                    AgentBackendConfig::Remote {
                        address: address.clone(),
                        tool: tool.clone(),
                        context_limit: *context_limit,
                    },
                    None,
                ),
            };
            let backend =
                text_backend("reasoning", &agent, limit, &self.base, deadline)?.expect("not the rule backend");
            reg = reasoning::register(reg, backend).map_err(|e| backend_err("reasoning")(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn planner(&self) -> Result<Planner, ConfigError> {
        Ok(match text_backend("planner", &self.backends.planner, None, &self.base, self.budgets().deadline)? {
            None => Planner::Rule,
            Some(b) => Planner::Model(b),
        })
    }

    pub fn evaluator(&self) -> Result<Evaluator, ConfigError> {
        Ok(match text_backend("evaluator", &self.backends.evaluator, None, &self.base, self.budgets().deadline)? {
            None => Evaluator::Rule,
            Some(b) => Evaluator::Model(b),
        })
    }

    pub fn orchestrator(&self) -> Result<Orchestrator, ConfigError> {
        Ok(Orchestrator::new(self.registry()?, self.toggles, self.budgets())
            .with_planner(self.planner()?)
            .with_evaluator(self.evaluator()?))
    }
}

/// Short stable digest of the effective settings, used in run names.
pub fn config_hash(snapshot: &ConfigSnapshot) -> String {
    let json = serde_json::to_vec(snapshot).expect("snapshot serializes");
    hex::encode(Sha256::digest(&json))[..8].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggles_table_is_required() {
        let e = RunConfig::parse("workers = 2\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("toggles"), "{e}");
    }

    #[test]
    fn toggle_keys_default_on_and_unknown_keys_fail() {
        let c = RunConfig::parse("[toggles]\nknowledge = false\n", Path::new("/cfg")).unwrap();
        assert!(!c.toggles.knowledge && c.toggles.perception && c.toggles.self_evaluation);
        assert_eq!(c.budgets(), Budgets::default());
        assert_eq!(c.run_dir(), Path::new("/cfg/runs"));
        assert!(RunConfig::parse("[toggles]\nvision = false\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("[toggles]\n[budgets]\ndeadline_secs = 0.0\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("[toggles]\n[backends.perception]\nkind = \"magic\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn native_general_registry_by_default() {
        let c = RunConfig::parse("[toggles]\n", Path::new(".")).unwrap();
        let reg = c.registry().unwrap();
        assert_eq!(reg.len(), general::NATIVE_TOOLS.len());
        assert!(matches!(c.planner().unwrap(), Planner::Rule));
    }

    #[test]
    fn bad_address_names_the_section() {
        let c = RunConfig::parse(
            "[toggles]\n[backends.knowledge]\nkind = \"remote\"\naddress = \"ftp://x\"\n",
            Path::new("."),
        )
        .unwrap();
        assert!(c.registry().unwrap_err().to_string().starts_with("backend `knowledge`"));
    }

    #[test]
    fn hash_changes_with_settings() {
        let mut s = ConfigSnapshot {
            toggles: Toggles::default(),
            retries: 2,
            deadline_ms: 1000,
            planner: "Rule".into(),
            evaluator: "Rule".into(),
        };
        let a = config_hash(&s);
        assert_eq!(a.len(), 8);
        s.toggles.knowledge = false;
        assert_ne!(a, config_hash(&s));
    }
}
