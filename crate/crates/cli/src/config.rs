//! Flag/config-file merging. The config file is TOML: `seed`, `threads` and
//! `quiet` at top level, and one table per command whose keys are that
//! command's long flag names, e.g.
//!
//! ```toml
//! seed = 7
//! [generate]
//! scenes = 20
//! min-objects = 2
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use clap::CommandFactory;
use serde::de::DeserializeOwned;

use crate::args::Cli;

const GLOBAL_KEYS: [&str; 3] = ["seed", "threads", "quiet"];

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit status 2.
    Usage(String),
    /// The command itself failed: exit status 1.
    Run(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Run(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<amodal::Error> for CliError {
    fn from(e: amodal::Error) -> Self {
        CliError::Run(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Default)]
pub struct Config {
    path: PathBuf,
    table: toml::Table,
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let cfg = Config {
            path: path.to_path_buf(),
            table,
        };
        cfg.check_keys()?;
        Ok(cfg)
    }

    /// Every key must name a flag of its command (or a global flag).
    fn check_keys(&self) -> CliResult<()> {
        let cmd = Cli::command();
        for (key, value) in &self.table {
            if GLOBAL_KEYS.contains(&key.as_str()) {
                continue;
            }
            let Some(sub) = cmd.find_subcommand(key) else {
                return usage(format!("config {}: unknown key or command `{key}`", self.path.display()));
            };
            let Some(t) = value.as_table() else {
                return usage(format!("config {}: `{key}` must be a table", self.path.display()));
            };
            for k in t.keys() {
                let known = sub.get_arguments().any(|a| a.get_long() == Some(k.as_str()));
                if !known || GLOBAL_KEYS.contains(&k.as_str()) {
                    return usage(format!("config {}: `{key}` has no flag `--{k}`", self.path.display()));
                }
            }
        }
        Ok(())
    }

    fn lookup<T: DeserializeOwned>(&self, section: Option<&str>, key: &str) -> CliResult<Option<T>> {
        let value = match section {
            None => self.table.get(key),
            Some(s) => self.table.get(s).and_then(|t| t.as_table()).and_then(|t| t.get(key)),
        };
        let Some(v) = value else { return Ok(None) };
        let where_ = section.map_or_else(|| key.to_string(), |s| format!("{s}.{key}"));
        v.clone()
            .try_into()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("config {}: bad value for `{where_}`: {e}", self.path.display())))
    }

    pub fn global<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(None, key),
        }
    }

    pub fn section<'a>(&'a self, name: &'static str) -> Section<'a> {
        Section { cfg: self, name }
    }
}

/// Resolves one command's options: flag, then config file, then default.
pub struct Section<'a> {
    cfg: &'a Config,
    name: &'static str,
}

impl Section<'_> {
    pub fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.cfg.lookup(Some(self.name), key),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn need<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<T> {
        match self.opt(flag, key)? {
            Some(v) => Ok(v),
            None => usage(format!("{}: missing required --{key}", self.name)),
        }
    }
}
