use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance stamped on every emitted file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &'static str, config: &C, seed: u64, deterministic: bool) -> Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        let created_unix = if deterministic {
            None
        } else {
            SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
        };
        Ok(Self {
            tool: "kpo",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: hex::encode(Sha256::digest(&canonical)),
            seed,
            created_unix,
        })
    }

    fn write_comment<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# {} {} {}", self.tool, self.version, self.command)?;
        writeln!(w, "# config-sha256: {}", self.config_sha256)?;
        writeln!(w, "# seed: {}", self.seed)?;
        if let Some(t) = self.created_unix {
            writeln!(w, "# created-unix: {t}")?;
        }
        Ok(())
    }
}

/// Output directory that stamps provenance on every file it creates.
pub struct OutDir {
    root: PathBuf,
    pub provenance: Provenance,
}

impl OutDir {
    pub fn create(root: &Path, provenance: Provenance) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            provenance,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Opens `name` for writing with the provenance comment block already in place.
    pub fn csv(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        self.provenance.write_comment(&mut w)?;
        Ok(w)
    }

    /// Writes a JSON document `{"provenance": …, "<key>": value}`.
    pub fn json<T: Serialize>(&self, name: &str, key: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut doc = serde_json::Map::new();
        doc.insert("provenance".into(), serde_json::to_value(&self.provenance)?);
        doc.insert(key.into(), serde_json::to_value(value)?);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn finish(mut w: BufWriter<File>) -> Result<()> {
        w.flush()?;
        Ok(())
    }
}
