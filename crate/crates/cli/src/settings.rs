//! Config file sections, flag overrides and exit codes.
//!
//! The config file holds one `[section]` per subcommand plus a shared
//! `[model]` section, each with `key = value` lines. A flag given on the
//! command line wins over the file, which wins over the built-in default.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;
pub const EXIT_CHECK: u8 = 5;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Format(String),
    /// A verification ran to completion and did not pass.
    Check(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Io(_) => EXIT_IO,
            Self::Format(_) => EXIT_FORMAT,
            Self::Check(_) => EXIT_CHECK,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Io(m) => write!(f, "I/O error: {m}"),
            Self::Format(m) => write!(f, "format error: {m}"),
            Self::Check(m) => write!(f, "check failed: {m}"),
            Self::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<avqa_core::Error> for Failure {
    fn from(e: avqa_core::Error) -> Self {
        use avqa_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => Self::Usage(msg),
            E::Io(_) => Self::Io(msg),
            E::Format { .. } | E::Csv(_) | E::Alignment(_) | E::Sample { .. } | E::Dimension { .. } => {
                Self::Format(msg)
            }
            _ => Self::Runtime(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Attaches the path to an I/O failure.
pub fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Default)]
pub struct ConfigFile {
    doc: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let doc = text
            .parse::<toml::Table>()
            .map_err(|e| Failure::Format(format!("{}: {e}", path.display())))?;
        for (key, value) in &doc {
            if !value.is_table() {
                return Err(Failure::Format(format!(
                    "{}: top-level key `{key}` must sit inside a [section]",
                    path.display()
                )));
            }
        }
        Ok(Self { doc })
    }

    pub fn section(&self, name: &'static str) -> Section {
        let table = self
            .doc
            .get(name)
            .and_then(|v| v.as_table())
            .cloned()
            .unwrap_or_default();
        Section {
            name,
            table,
            used: RefCell::default(),
            resolved: RefCell::default(),
        }
    }
}

/// One section of the config file with the effective values recorded as
/// they are resolved.
pub struct Section {
    name: &'static str,
    table: toml::Table,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Section {
    fn file_value<T: DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        self.used.borrow_mut().insert(key.to_string());
        self.table
            .get(key)
            .map(|v| {
                v.clone()
                    .try_into()
                    .map_err(|e| Failure::Usage(format!("[{}] {key}: {e}", self.name)))
            })
            .transpose()
    }

    fn record(&self, key: &str, shown: String) {
        self.resolved.borrow_mut().insert(key.to_string(), shown);
    }

    /// Flag, else file, else `default`.
    pub fn pick<T: DeserializeOwned + fmt::Display>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let file_value = self.file_value(key)?;
        let v = flag.or(file_value).unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Like [`pick`](Self::pick) for settings without a default.
    pub fn require<T: DeserializeOwned + fmt::Display>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        let file_value = self.file_value(key)?;
        let v = flag
            .or(file_value)
            .ok_or_else(|| Failure::Usage(format!("missing `{key}` (flag or [{}] entry)", self.name)))?;
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Flag, else file, else absent.
    pub fn optional<T: DeserializeOwned + fmt::Display>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let file_value = self.file_value(key)?;
        let v = flag.or(file_value);
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn pick_list<T: DeserializeOwned + fmt::Display>(&self, key: &str, flag: Vec<T>, default: Vec<T>) -> CliResult<Vec<T>> {
        let file_value: Option<Vec<T>> = self.file_value(key)?;
        let v = if !flag.is_empty() {
            flag
        } else {
            file_value.unwrap_or(default)
        };
        let shown: Vec<String> = v.iter().map(T::to_string).collect();
        self.record(key, format!("[{}]", shown.join(", ")));
        Ok(v)
    }

    /// Fails on keys that no setting asked for, which are almost always
    /// typos.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        match self.table.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Failure::Usage(format!("unknown key `{k}` in [{}]", self.name))),
            None => Ok(()),
        }
    }

    /// Effective values as sorted `key = value` lines under a header.
    pub fn render(&self) -> String {
        let mut s = format!("[{}]\n", self.name);
        for (k, v) in self.resolved.borrow().iter() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
