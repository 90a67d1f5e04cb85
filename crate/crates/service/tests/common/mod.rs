#![allow(dead_code)]

use std::path::Path;

use narrative_core::campaign::{Hit, PretestQuestion};
use narrative_core::synthetic::SyntheticConfig;
use narrative_service::{Campaign, ServiceConfig};

pub const PASSING: [usize; 5] = [0, 1, 0, 1, 0];
pub const FAILING: [usize; 5] = [1, 0, 0, 1, 0];

/// Small, fast configuration on the synthetic corpus, rooted at `dir`.
pub fn config(dir: &Path, sentinel_rate: f64) -> ServiceConfig {
    let pretest = dir.join("pretest.json");
    if !pretest.exists() {
        let questions: Vec<PretestQuestion> = PASSING
            .iter()
            .enumerate()
            .map(|(i, &correct)| PretestQuestion {
                probe: format!("probe {i}"),
                options: [format!("option {i}a"), format!("option {i}b")],
                correct,
            })
            .collect();
        std::fs::write(&pretest, serde_json::to_string(&questions).unwrap()).unwrap();
    }
    ServiceConfig {
        data_dir: dir.join("data"),
        pretest: Some(pretest),
        sentinel_rate,
        iters: 150,
        synthetic: SyntheticConfig {
            dim: 16,
            ..SyntheticConfig::default()
        },
        ..ServiceConfig::default()
    }
}

/// Picks same-class candidates first, so catch grids grade `both`.
pub fn answer(hit: &Hit, labels: &[u32]) -> Vec<Vec<usize>> {
    hit.grids
        .iter()
        .map(|g| {
            let mut order: Vec<usize> = (0..g.n()).collect();
            order.sort_by_key(|&p| labels[g.candidates[p]] != labels[g.anchor]);
            order.truncate(2);
            order
        })
        .collect()
}

/// Registers and qualifies a worker, then submits one answered HIT.
pub fn complete_hit(c: &mut Campaign) -> (String, String) {
    let w = c.register_worker().unwrap();
    c.submit_pretest(&w, PASSING.to_vec()).unwrap();
    let hit_id = c.next_hit(&w).unwrap().hit_id;
    let sel = answer(c.hit(&hit_id).unwrap(), c.labels());
    c.submit(&hit_id, &w, sel).unwrap();
    (w, hit_id)
}
