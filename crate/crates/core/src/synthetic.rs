//! Built-in benchmark corpus: labeled Gaussian clusters shaped like the
//! hand-drying discussion corpus (600 excerpts over 31 classes).

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, InputEmbeddings, Supercategory, Taxonomy};
use crate::{Error, Matrix, Result};

pub const EXCERPTS_FILE: &str = "excerpts.tsv";
pub const TAXONOMY_FILE: &str = "taxonomy.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// Excerpt totals per supercategory and the class ids they spread over.
const PROFILE: [(Supercategory, u32, u32, usize); 4] = [
    (Supercategory::ProPaper, 1, 15, 169),
    (Supercategory::ProDryer, 16, 23, 92),
    (Supercategory::Other, 24, 30, 49),
    (Supercategory::Irrelevant, 31, 31, 290),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    /// Standard deviation of class centers around the origin.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 64,
            center_scale: 1.0,
            noise: 2.0,
            seed: 0,
        }
    }
}

/// Per-class excerpt counts: each supercategory total split as evenly as
/// possible over its classes, larger shares first.
pub fn class_sizes() -> Vec<(u32, usize)> {
    let mut out = Vec::new();
    for (_, lo, hi, total) in PROFILE {
        let classes = (hi - lo + 1) as usize;
        for (i, id) in (lo..=hi).enumerate() {
            out.push((id, total / classes + usize::from(i < total % classes)));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub embeddings: InputEmbeddings,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.dim == 0 || !(cfg.noise >= 0.0) || !(cfg.center_scale >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad synthetic config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let taxonomy = Taxonomy::hand_drying();
    let sizes = class_sizes();
    let n: usize = sizes.iter().map(|s| s.1).sum();
    let mut records = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * cfg.dim);
    for &(class_id, count) in &sizes {
        let center: Vec<f64> = (0..cfg.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.center_scale * z
            })
            .collect();
        let description = &taxonomy.get(class_id).expect("profile uses taxonomy ids").description;
        for j in 0..count {
            records.push((class_id, format!("Synthetic excerpt {j} about: {description}")));
            data.extend(center.iter().map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + cfg.noise * z
            }));
        }
    }
    let corpus = Corpus::new(records, taxonomy)?;
    Ok(SyntheticCorpus {
        corpus,
        embeddings: InputEmbeddings(Matrix::from_vec(n, cfg.dim, data)),
    })
}

impl SyntheticCorpus {
    /// Writes excerpts, taxonomy and embeddings into `dir`; returns the three paths.
    pub fn save(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = [dir.join(EXCERPTS_FILE), dir.join(TAXONOMY_FILE), dir.join(EMBEDDINGS_FILE)];
        self.corpus.save_excerpts(&paths[0])?;
        self.corpus.taxonomy().save(&paths[1])?;
        self.embeddings.matrix().save_text(&paths[2])?;
        Ok(paths)
    }
}
