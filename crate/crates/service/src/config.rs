//! Runtime configuration read from `DOCQA_*` environment variables.

use std::path::PathBuf;
use std::time::Duration;

use docqa_core::encoder::DEFAULT_DIM;
use docqa_core::qa::{GenerationConfig, GeneratorKind, DEFAULT_GROUNDING_THRESHOLD, DEFAULT_K};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_LIBRARY: &str = "./library";
pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_RETRY_BACKOFF: Duration = Duration::from_millis(100);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{var}: {message}")]
pub struct ConfigError {
    pub var: &'static str,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub library: PathBuf,
    pub port: u16,
    pub generator: GeneratorKind,
    pub embed_dim: usize,
    pub grounding_threshold: f64,
    pub k: usize,
    /// Moderation wordlist; the bundled list when unset.
    pub wordlist: Option<PathBuf>,
    /// Stopword list; the bundled list when unset.
    pub stopwords: Option<PathBuf>,
    pub workers: usize,
    pub retry_backoff: Duration,
    /// Static web client to serve at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            library: PathBuf::from(DEFAULT_LIBRARY),
            port: DEFAULT_PORT,
            generator: GeneratorKind::Extractive,
            embed_dim: DEFAULT_DIM,
            grounding_threshold: DEFAULT_GROUNDING_THRESHOLD,
            k: DEFAULT_K,
            wordlist: None,
            stopwords: None,
            workers: DEFAULT_WORKERS,
            retry_backoff: DEFAULT_RETRY_BACKOFF,
            ui_dir: None,
        }
    }
}

fn parsed<T: std::str::FromStr>(var: &'static str, value: Option<String>) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .map(|v| v.trim().parse::<T>().map_err(|e| ConfigError { var, message: format!("{v:?}: {e}") }))
        .transpose()
}

impl Config {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|key| std::env::var(key).ok().filter(|v| !v.is_empty()))
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = Config::default();
        if let Some(path) = get("DOCQA_LIBRARY") {
            config.library = path.into();
        }
        if let Some(port) = parsed("DOCQA_PORT", get("DOCQA_PORT"))? {
            config.port = port;
        }
        if let Some(dim) = parsed::<usize>("DOCQA_EMBED_DIM", get("DOCQA_EMBED_DIM"))? {
            if !(1..=usize::from(u16::MAX)).contains(&dim) {
                return Err(ConfigError { var: "DOCQA_EMBED_DIM", message: format!("{dim} outside 1..=65535") });
            }
            config.embed_dim = dim;
        }
        if let Some(t) = parsed::<f64>("DOCQA_GROUNDING_THRESHOLD", get("DOCQA_GROUNDING_THRESHOLD"))? {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError { var: "DOCQA_GROUNDING_THRESHOLD", message: format!("{t} outside [0, 1]") });
            }
            config.grounding_threshold = t;
        }
        if let Some(k) = parsed::<usize>("DOCQA_K", get("DOCQA_K"))? {
            if k == 0 {
                return Err(ConfigError { var: "DOCQA_K", message: "must be positive".into() });
            }
            config.k = k;
        }
        if let Some(workers) = parsed::<usize>("DOCQA_WORKERS", get("DOCQA_WORKERS"))? {
            config.workers = workers.max(1);
        }
        config.wordlist = get("DOCQA_WORDLIST").map(PathBuf::from);
        config.stopwords = get("DOCQA_STOPWORDS").map(PathBuf::from);
        config.ui_dir = get("DOCQA_UI_DIR").map(PathBuf::from);

        match get("DOCQA_GENERATOR").as_deref().map(str::trim) {
            None | Some("extractive") => {}
            Some("remote") => {
                let endpoint = get("DOCQA_LLM_ENDPOINT").ok_or(ConfigError {
                    var: "DOCQA_LLM_ENDPOINT",
                    message: "required when DOCQA_GENERATOR=remote".into(),
                })?;
                let model = get("DOCQA_LLM_MODEL").unwrap_or_default();
                config.generator = GeneratorKind::Remote { endpoint, model };
            }
            Some(other) => {
                return Err(ConfigError {
                    var: "DOCQA_GENERATOR",
                    message: format!("{other:?} is not extractive or remote"),
                })
            }
        }
        Ok(config)
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            k: self.k,
            grounding_threshold: self.grounding_threshold,
            generator: self.generator.clone(),
            ..GenerationConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn lookup(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults() {
        let c = Config::from_lookup(lookup(&[])).unwrap();
        assert_eq!(c.port, 8080);
        assert_eq!(c.embed_dim, 512);
        assert_eq!(c.generator, GeneratorKind::Extractive);
        assert_eq!(c.grounding_threshold, 0.6);
    }

    #[test]
    fn remote_requires_endpoint() {
        let err = Config::from_lookup(lookup(&[("DOCQA_GENERATOR", "remote")])).unwrap_err();
        assert_eq!(err.var, "DOCQA_LLM_ENDPOINT");
        let c = Config::from_lookup(lookup(&[
            ("DOCQA_GENERATOR", "remote"),
            ("DOCQA_LLM_ENDPOINT", "http://llm/v1"),
            ("DOCQA_LLM_MODEL", "m"),
        ]))
        .unwrap();
        assert_eq!(c.generator, GeneratorKind::Remote { endpoint: "http://llm/v1".into(), model: "m".into() });
    }

    #[test]
    fn bad_values_name_their_variable() {
        for (var, value) in [
            ("DOCQA_PORT", "http"),
            ("DOCQA_EMBED_DIM", "0"),
            ("DOCQA_GROUNDING_THRESHOLD", "2"),
            ("DOCQA_GENERATOR", "gpt"),
            ("DOCQA_K", "0"),
        ] {
            assert_eq!(Config::from_lookup(lookup(&[(var, value)])).unwrap_err().var, var);
        }
    }
}
