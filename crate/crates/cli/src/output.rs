//! File writers. Every artefact starts with the same provenance stamp.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "ricker";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_bytes: &[u8], seed: u64) -> Self {
        let digest = Sha256::digest(config_bytes);
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { config_sha256, seed }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "# {TOOL} {VERSION} config_sha256={} seed={}",
            self.config_sha256, self.seed
        )
    }

    pub fn json(&self) -> Value {
        json!({
            "tool": TOOL,
            "version": VERSION,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
        })
    }
}

pub struct Output {
    dir: PathBuf,
    prov: Provenance,
}

impl Output {
    pub fn new(dir: &Path, prov: Provenance) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prov,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv<I>(&self, name: &str, header: &str, rows: I) -> io::Result<PathBuf>
    where
        I: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "{}", self.prov.csv_line())?;
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{row}")?;
        }
        w.flush()?;
        Ok(path)
    }

    /// Writes `body` plus a `provenance` field and returns the text.
    pub fn json(&self, name: &str, body: Value) -> io::Result<String> {
        let mut obj = Map::new();
        obj.insert("provenance".into(), self.prov.json());
        match body {
            Value::Object(fields) => obj.extend(fields),
            other => {
                obj.insert("result".into(), other);
            }
        }
        let text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(io::Error::other)? + "\n";
        fs::write(self.path(name), &text)?;
        Ok(text)
    }
}

/// `None` becomes an empty CSV field.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
