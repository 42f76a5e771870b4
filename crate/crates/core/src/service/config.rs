//! Server configuration: a TOML file, then environment overrides.
//!
//! | variable | effect |
//! |---|---|
//! | `BENCH_LISTEN` | listen address, `host:port` |
//! | `BENCH_PORT` | replaces only the port |
//! | `BENCH_DATA_DIR` | data directory |
//! | `BENCH_WORKERS` | evaluation worker count |
//! | `BENCH_ADMIN_TOKEN` | adds an admin token |
//! | `BENCH_PARTICIPANT_TOKENS` | adds participant tokens, `id:token,id:token` |

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auth::{AccessToken, Credentials, Scope};
use crate::error::{Error, Result};

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("bench-data")
}

fn default_workers() -> usize {
    1
}

fn default_idle_poll_ms() -> u64 {
    200
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Worker sleep between polls of an empty queue.
    #[serde(default = "default_idle_poll_ms")]
    pub idle_poll_ms: u64,
    #[serde(default)]
    pub tokens: Vec<AccessToken>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            data_dir: default_data_dir(),
            workers: default_workers(),
            idle_poll_ms: default_idle_poll_ms(),
            tokens: Vec::new(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Reads `path` if given, then applies overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with(path, |k| std::env::var(k).ok())
    }

    pub fn load_with(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        config.apply_env(env)?;
        if config.workers == 0 {
            return Err(Error::invalid("config: workers must be at least 1"));
        }
        Ok(config)
    }

    fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<()> {
        let bad = |k: &str, v: &str| Error::invalid(format!("{k}={v} is not valid"));
        if let Some(v) = env("BENCH_LISTEN") {
            self.listen = v.parse().map_err(|_| bad("BENCH_LISTEN", &v))?;
        }
        if let Some(v) = env("BENCH_PORT") {
            self.listen
                .set_port(v.parse().map_err(|_| bad("BENCH_PORT", &v))?);
        }
        if let Some(v) = env("BENCH_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = env("BENCH_WORKERS") {
            self.workers = v.parse().map_err(|_| bad("BENCH_WORKERS", &v))?;
        }
        if let Some(v) = env("BENCH_ADMIN_TOKEN") {
            self.tokens.push(AccessToken {
                token: v,
                scope: Scope::Admin,
                participant_id: None,
            });
        }
        if let Some(v) = env("BENCH_PARTICIPANT_TOKENS") {
            for pair in v.split(',').filter(|p| !p.is_empty()) {
                let (id, token) = pair
                    .split_once(':')
                    .ok_or_else(|| bad("BENCH_PARTICIPANT_TOKENS", pair))?;
                self.tokens.push(AccessToken {
                    token: token.to_string(),
                    scope: Scope::Participant,
                    participant_id: Some(id.to_string()),
                });
            }
        }
        Ok(())
    }

    pub fn credentials(&self) -> Result<Credentials> {
        Credentials::new(self.tokens.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_then_env() {
        let text = r#"
            listen = "0.0.0.0:9000"
            data_dir = "/srv/bench"

            [[tokens]]
            token = "p-secret"
            scope = "PARTICIPANT"
            participant_id = "team-a"
        "#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.toml");
        std::fs::write(&path, text).unwrap();
        let env: HashMap<&str, &str> = [
            ("BENCH_PORT", "9100"),
            ("BENCH_ADMIN_TOKEN", "root"),
            ("BENCH_PARTICIPANT_TOKENS", "team-b:tb"),
        ]
        .into();
        let c = Config::load_with(Some(&path), |k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.listen, "0.0.0.0:9100".parse().unwrap());
        assert_eq!(c.data_dir, PathBuf::from("/srv/bench"));
        assert_eq!(c.workers, 1);
        let creds = c.credentials().unwrap();
        assert!(creds.resolve("root").unwrap().is_admin());
        assert_eq!(creds.resolve("p-secret").unwrap().id, "team-a");
        assert_eq!(creds.resolve("tb").unwrap().id, "team-b");
        assert!(creds.resolve("nope").is_none());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_env() {
        assert!(Config::parse("colour = 3").is_err());
        assert!(Config::load_with(None, |k| (k == "BENCH_PORT").then(|| "http".into())).is_err());
        assert!(Config::load_with(None, |k| (k == "BENCH_WORKERS").then(|| "0".into())).is_err());
        assert_eq!(
            Config::load_with(None, |_| None).unwrap(),
            Config::default()
        );
    }
}
