//! Output files under `--out`. Every file a command creates is registered
//! here, and all of them are deleted if the command fails.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const EMBEDDING: &str = "embedding.txt";
pub const METRICS: &str = "metrics.json";
pub const CURVE: &str = "curve.csv";
pub const VIZ: &str = "viz.csv";
pub const EDGES: &str = "edges.csv";
pub const TRIPLETS: &str = "triplets.csv";
pub const RESPONSES: &str = "responses.jsonl";
pub const NK: &str = "nk.csv";
pub const WEIGHTS: &str = "weights.csv";
pub const POOLS: &str = "pools.csv";

pub struct Outputs {
    dir: PathBuf,
    created: Vec<PathBuf>,
    created_dir: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created: Vec::new(),
            created_dir,
        })
    }

    /// Registers `name` and returns its full path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.created.push(p.clone());
        p
    }

    /// Creates `name` and hands a buffered writer to `f`.
    pub fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Removes everything this run created.
    pub fn discard(self) {
        for p in &self.created {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}
