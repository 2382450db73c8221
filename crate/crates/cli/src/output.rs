//! One directory per run. Every file starts with the config hash and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::Result;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
}

/// A table cell: numbers are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(b.to_string())
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v:?}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// `YYYYMMDDTHHMMSSZ` in UTC.
fn timestamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

impl RunDir {
    /// Create `<root>/<subcommand>-<timestamp>-<hash prefix>`.
    pub fn create(root: &Path, subcommand: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let hash = cfg.hash();
        let stem = format!("{subcommand}-{}-{}", timestamp(), &hash[..12]);
        let mut path = root.join(&stem);
        let mut k = 1;
        while path.exists() {
            path = root.join(format!("{stem}-{k}"));
            k += 1;
        }
        Self::at(path, subcommand, cfg)
    }

    /// Use `path` as the run directory, creating it if needed.
    pub fn at(path: PathBuf, subcommand: &str, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&path)?;
        let dir = Self {
            path,
            subcommand: subcommand.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        fs::write(dir.path.join("config.toml"), format!("{}\n{}", dir.header(), cfg.to_toml()))?;
        Ok(dir)
    }

    pub fn header(&self) -> String {
        format!(
            "# gradual {} config_sha256={} seed={}",
            self.subcommand, self.config_hash, self.seed
        )
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_table(&self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write_text(name, &table.to_csv())
    }

    /// Write `body` after the header line.
    pub fn write_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.file(name);
        let mut s = self.header();
        s.push('\n');
        s.push_str(body);
        fs::write(&path, s)?;
        Ok(path)
    }

    /// JSON record `{config_sha256, seed, data}`.
    pub fn write_json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            subcommand: &'a str,
            config_sha256: &'a str,
            seed: u64,
            data: &'a T,
        }
        let w = Wrapped {
            subcommand: &self.subcommand,
            config_sha256: &self.config_hash,
            seed: self.seed,
            data,
        };
        let path = self.file(name);
        let mut s = serde_json::to_string_pretty(&w).map_err(std::io::Error::from)?;
        let _ = writeln!(s);
        fs::write(&path, s)?;
        Ok(path)
    }

    /// Write raw bytes produced by `f` after a header line.
    pub fn write_with<F>(&self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = self.header().into_bytes();
        buf.push(b'\n');
        f(&mut buf)?;
        let path = self.file(name);
        fs::write(&path, buf)?;
        Ok(path)
    }
}
