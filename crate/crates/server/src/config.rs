use std::collections::HashMap;
use std::path::{Path, PathBuf};

use esp_core::engine::{EngineConfig, WatchdogPolicy};
use esp_core::store::{Actor, Role};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Server configuration. Relative paths resolve against the directory of
/// the file they were read from.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "Config::default_listen")]
    pub listen: String,
    #[serde(default = "Config::default_store")]
    pub store: PathBuf,
    #[serde(default)]
    pub users_file: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub watchdog: WatchdogPolicy,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub workers: Option<usize>,
    pub simulation_threads: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: Self::default_listen(),
            store: Self::default_store(),
            users_file: None,
            engine: EngineSection::default(),
            watchdog: WatchdogPolicy::default(),
        }
    }
}

impl Config {
    fn default_listen() -> String {
        "127.0.0.1:8080".into()
    }

    fn default_store() -> PathBuf {
        "store".into()
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.store = base.join(&config.store);
        config.users_file = config.users_file.map(|u| base.join(u));
        Ok(config)
    }

    /// Reads `path`, else `$ESP_CONFIG`, else defaults; then applies
    /// `ESP_LISTEN` and `ESP_STORE`.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let from_env = std::env::var_os("ESP_CONFIG").map(PathBuf::from);
        let mut config = match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => Config::from_file(&p)?,
            None => Config::default(),
        };
        if let Ok(listen) = std::env::var("ESP_LISTEN") {
            config.listen = listen;
        }
        if let Some(store) = std::env::var_os("ESP_STORE") {
            config.store = store.into();
        }
        Ok(config)
    }

    pub fn engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let mut e = EngineConfig {
            policy: self.watchdog.clone(),
            ..EngineConfig::default()
        };
        if let Some(w) = self.engine.workers {
            e.workers = w;
        }
        if let Some(t) = self.engine.simulation_threads {
            e.simulation_threads = t;
        }
        if e.workers == 0 || e.simulation_threads == 0 {
            return Err(ConfigError::Invalid("workers and simulation_threads must be positive".into()));
        }
        Ok(e)
    }

    pub fn users(&self) -> Result<Users, ConfigError> {
        match &self.users_file {
            Some(p) => Users::from_file(p),
            None => Ok(Users::default()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct User {
    pub user_id: String,
    #[serde(default)]
    pub display_name: String,
    pub role: Role,
    pub api_token: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UsersFile {
    #[serde(default)]
    users: Vec<User>,
}

/// Token lookup table.
#[derive(Debug, Clone, Default)]
pub struct Users {
    by_token: HashMap<String, User>,
}

impl Users {
    pub fn new(users: Vec<User>) -> Result<Users, ConfigError> {
        let mut by_token = HashMap::new();
        let mut ids = std::collections::HashSet::new();
        for u in users {
            if u.api_token.is_empty() {
                return Err(ConfigError::Invalid(format!("user `{}` has an empty token", u.user_id)));
            }
            if !ids.insert(u.user_id.clone()) {
                return Err(ConfigError::Invalid(format!("user `{}` is listed twice", u.user_id)));
            }
            let id = u.user_id.clone();
            if by_token.insert(u.api_token.clone(), u).is_some() {
                return Err(ConfigError::Invalid(format!("token of `{id}` is not unique")));
            }
        }
        Ok(Users { by_token })
    }

    pub fn from_file(path: &Path) -> Result<Users, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let file: UsersFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Users::new(file.users)
    }

    pub fn authenticate(&self, token: &str) -> Option<Actor> {
        self.by_token
            .get(token)
            .map(|u| Actor::new(&u.user_id, u.role))
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }
}
