//! Report files with embedded provenance.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// SHA-256 of the effective config (after overrides), serialized as
    /// compact JSON.
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Provenance {
            tool: "dipolarbus",
            version: VERSION,
            command: command.to_string(),
            config_sha256: config_hash(config),
            seed: config.seed,
        }
    }

    /// The `#` comment line that opens every CSV file.
    pub fn csv_comment(&self) -> String {
        format!(
            "# {} {} command={} config_sha256={} seed={}\n",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    config: &'a RunConfig,
    result: &'a T,
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
        })
    }

    pub fn write_json<T: Serialize>(
        &self,
        name: &str,
        provenance: &Provenance,
        config: &RunConfig,
        result: &T,
    ) -> Result<PathBuf, CliError> {
        let env = Envelope {
            provenance,
            config,
            result,
        };
        let mut text =
            serde_json::to_string_pretty(&env).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Header row from `T`'s field names; `None` becomes an empty cell.
    pub fn write_csv<T: Serialize>(
        &self,
        name: &str,
        provenance: &Provenance,
        rows: &[T],
    ) -> Result<PathBuf, CliError> {
        let mut buf = provenance.csv_comment().into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            for row in rows {
                w.serialize(row)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
            }
            w.flush()
                .map_err(|e| CliError::io(self.root.join(name), e))?;
        }
        self.write(name, &buf)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
