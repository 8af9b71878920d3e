//! Run configuration: TOML file, then `COVERGAP_<SECTION>_<KEY>`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::change::SelectionFilter;
use crate::llm::Prices;

pub const ENV_PREFIX: &str = "COVERGAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Scripted backend driven by a JSON script.
    #[default]
    Fake,
    /// External adapter program.
    Process,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub mode: LlmMode,
    pub base_url: String,
    pub api_key_env: String,
    pub max_attempts: u32,
    pub timeout_secs: u64,
    /// USD per million prompt tokens.
    pub prompt_price: Decimal,
    /// USD per million completion tokens.
    pub completion_price: Decimal,
    /// Require recorded prompt hashes to match during replay.
    pub strict_replay: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let prices = Prices::default();
        LlmConfig {
            model: "gpt-4o-mini".into(),
            temperature: 0.7,
            mode: LlmMode::Replay,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 3,
            timeout_secs: 120,
            prompt_price: prices.prompt_per_mtok,
            completion_price: prices.completion_per_mtok,
            strict_replay: false,
        }
    }
}

impl LlmConfig {
    pub fn prices(&self) -> Prices {
        Prices {
            prompt_per_mtok: self.prompt_price,
            completion_per_mtok: self.completion_price,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub tests_per_pr: usize,
    pub max_feedback_rounds: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            tests_per_pr: 6,
            max_feedback_rounds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub max_links: usize,
    pub jaccard_top_k: usize,
    pub max_page_chars: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            max_links: 3,
            jaccard_top_k: 10,
            max_page_chars: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_code_files: usize,
    pub exclusion_keywords: Vec<String>,
    pub scope_denylist: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let f = SelectionFilter::default();
        FilterConfig {
            max_code_files: f.max_code_files,
            exclusion_keywords: f.exclusion_keywords,
            scope_denylist: f.scope_denylist,
        }
    }
}

impl FilterConfig {
    pub fn selection_filter(&self) -> SelectionFilter {
        SelectionFilter {
            max_code_files: self.max_code_files,
            exclusion_keywords: self.exclusion_keywords.clone(),
            scope_denylist: self.scope_denylist.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Checkout of the project under test.
    pub workspace: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Context cache; defaults to `<out_dir>/cache`.
    pub cache: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    /// Directory with `index.json` mapping URLs to saved pages.
    pub pages: Option<PathBuf>,
    /// Test-suite index; built from the workspace when absent.
    pub test_index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Script for the fake backend.
    pub script: Option<PathBuf>,
    /// Adapter program and leading arguments for the process backend.
    pub command: Vec<String>,
    pub timeout_secs: u64,
    pub scratch: String,
    /// Command that prints a web page given its URL as the last argument.
    pub fetch_command: Vec<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Fake,
            script: None,
            command: Vec::new(),
            timeout_secs: crate::exec::DEFAULT_TIMEOUT.as_secs(),
            scratch: crate::exec::DEFAULT_SCRATCH.into(),
            fetch_command: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub llm: LlmConfig,
    pub generation: GenerationConfig,
    pub context: ContextConfig,
    pub filter: FilterConfig,
    pub paths: PathsConfig,
    pub backend: BackendConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Read a config file. Relative paths in `[paths]` and the fake backend
    /// script resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.workspace,
            &mut p.out_dir,
            &mut p.cache,
            &mut p.cassette,
            &mut p.pages,
            &mut p.test_index,
            &mut self.backend.script,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    /// Apply `COVERGAP_<SECTION>_<KEY>` overrides from `vars`. Values are
    /// read as TOML literals, falling back to plain strings; list keys take
    /// comma-separated items.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut tree = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut touched = false;
        for (k, v) in vars {
            let (k, v) = (k.as_ref(), v.as_ref());
            let Some(rest) = k.strip_prefix(ENV_PREFIX).and_then(|r| r.strip_prefix('_')) else {
                continue;
            };
            let env_err = |message: String| ConfigError::Env {
                var: k.to_string(),
                message,
            };
            let table = tree.as_table_mut().expect("config serializes to a table");
            let (section, key) = table
                .iter_mut()
                .find_map(|(sname, sval)| {
                    let key_part = rest.strip_prefix(&sname.to_uppercase())?.strip_prefix('_')?;
                    let key = key_part.to_lowercase();
                    Some((sval, key))
                })
                .ok_or_else(|| env_err("no such configuration section".into()))?;
            let section = section.as_table_mut().expect("sections are tables");
            let is_list = matches!(section.get(&key), Some(toml::Value::Array(_)));
            let known = section.contains_key(&key) || self.optional_key_exists(&key);
            if !known {
                return Err(env_err(format!("unknown key {key:?}")));
            }
            let value = if is_list {
                toml::Value::Array(
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| toml::Value::String(s.to_string()))
                        .collect(),
                )
            } else {
                parse_scalar(v)
            };
            section.insert(key, value);
            touched = true;
        }
        if touched {
            *self = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        }
        Ok(())
    }

    /// Optional keys are absent from the serialized tree when unset.
    fn optional_key_exists(&self, key: &str) -> bool {
        matches!(
            key,
            "workspace" | "out_dir" | "cache" | "cassette" | "pages" | "test_index" | "script"
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return bad("llm.temperature must be within [0, 2]");
        }
        if self.llm.max_attempts == 0 {
            return bad("llm.max_attempts must be at least 1");
        }
        if self.generation.tests_per_pr == 0 {
            return bad("generation.tests_per_pr must be at least 1");
        }
        if self.generation.max_feedback_rounds == 0 {
            return bad("generation.max_feedback_rounds must be at least 1");
        }
        if self.context.max_links == 0 {
            return bad("context.max_links must be at least 1");
        }
        if self.context.jaccard_top_k == 0 {
            return bad("context.jaccard_top_k must be at least 1");
        }
        if self.filter.max_code_files == 0 {
            return bad("filter.max_code_files must be at least 1");
        }
        if self.backend.timeout_secs == 0 {
            return bad("backend.timeout_secs must be at least 1");
        }
        if self.llm.prompt_price.is_sign_negative() || self.llm.completion_price.is_sign_negative() {
            return bad("prices must not be negative");
        }
        Ok(())
    }
}

fn parse_scalar(v: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    match toml::from_str::<Probe>(&format!("v = {v}")) {
        Ok(p) if !matches!(p.v, toml::Value::Array(_) | toml::Value::Table(_)) => p.v,
        _ => toml::Value::String(v.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.llm.model, "gpt-4o-mini");
        assert_eq!(c.llm.temperature, 0.7);
        assert_eq!(c.generation.tests_per_pr, 6);
        assert_eq!(c.generation.max_feedback_rounds, 3);
        assert_eq!(c.context.max_links, 3);
        assert_eq!(c.context.jaccard_top_k, 10);
        assert_eq!(c.llm.prompt_price, Decimal::from_str("0.15").unwrap());
        assert_eq!(c.llm.mode, LlmMode::Replay);
        c.validate().unwrap();
        assert_eq!(Config::from_toml("").unwrap(), c);
    }

    #[test]
    fn file_then_env() {
        let mut c = Config::from_toml(
            "[llm]\nmodel = \"m1\"\ntemperature = 0.2\ncompletion_price = \"1.5\"\n[generation]\ntests_per_pr = 2\n[filter]\nscope_denylist = [\"vendored/\"]\n",
        )
        .unwrap();
        assert_eq!(c.llm.model, "m1");
        assert_eq!(c.llm.completion_price, Decimal::from_str("1.5").unwrap());
        c.apply_env([
            ("COVERGAP_LLM_MODEL", "m2"),
            ("COVERGAP_GENERATION_TESTS_PER_PR", "4"),
            ("COVERGAP_FILTER_EXCLUSION_KEYWORDS", "WIP, DOC"),
            ("COVERGAP_PATHS_OUT_DIR", "/tmp/o"),
            ("COVERGAP_LLM_PROMPT_PRICE", "0.3"),
            ("HOME", "/root"),
        ])
        .unwrap();
        assert_eq!(c.llm.model, "m2");
        assert_eq!(c.llm.temperature, 0.2);
        assert_eq!(c.generation.tests_per_pr, 4);
        assert_eq!(c.filter.exclusion_keywords, ["WIP", "DOC"]);
        assert_eq!(c.filter.scope_denylist, ["vendored/"]);
        assert_eq!(c.paths.out_dir, Some(PathBuf::from("/tmp/o")));
        assert_eq!(c.llm.prompt_price, Decimal::from_str("0.3").unwrap());
    }

    #[test]
    fn env_errors() {
        let mut c = Config::default();
        assert!(matches!(c.apply_env([("COVERGAP_NOPE_X", "1")]), Err(ConfigError::Env { .. })));
        assert!(matches!(c.apply_env([("COVERGAP_LLM_NOPE", "1")]), Err(ConfigError::Env { .. })));
        assert!(c.apply_env([("COVERGAP_GENERATION_TESTS_PER_PR", "many")]).is_err());
    }

    #[test]
    fn validation() {
        let mut c = Config::default();
        c.llm.temperature = 2.5;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.generation.tests_per_pr = 0;
        assert!(c.validate().is_err());
        assert!(Config::from_toml("[llm]\nbogus = 1\n").is_err());
    }

    #[test]
    fn relative_paths_follow_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "[paths]\ncassette = \"cass.json\"\nout_dir = \"/abs\"\n[backend]\nscript = \"b.json\"\n").unwrap();
        let c = Config::load(&f).unwrap();
        assert_eq!(c.paths.cassette, Some(dir.path().join("cass.json")));
        assert_eq!(c.paths.out_dir, Some(PathBuf::from("/abs")));
        assert_eq!(c.backend.script, Some(dir.path().join("b.json")));
    }
}
