use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::FORMAT_VERSION;
use crate::solver::RidgeSchedule;

/// Source used to order heatmaps when none is configured and it exists.
pub const DEFAULT_ANCHOR_SOURCE: &str = "eye_position";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Seed for the uniform-feature baseline.
    pub random_seed: u64,
    pub ridge: RidgeSchedule,
    /// Rebuild the Gram per target over exactly its labelled train rows.
    pub exact_masks: bool,
    /// `None` keeps every source, target or layer.
    pub sources: Option<Vec<String>>,
    pub targets: Option<Vec<String>>,
    pub layers: Option<Vec<u32>>,
    pub anchor_source: Option<String>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.125,
            split_seed: 0,
            random_seed: 0,
            ridge: RidgeSchedule::default(),
            exact_masks: false,
            sources: None,
            targets: None,
            layers: None,
            anchor_source: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to reconstruct a run; written beside results.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format_version: u32,
    pub config: GridConfig,
    pub manifest_digest: String,
    pub labels_digest: String,
    pub predictions_digest: String,
    pub mask_mode: String,
}

impl Provenance {
    pub fn new(
        config: GridConfig,
        manifest_digest: String,
        labels_digest: String,
        predictions_digest: String,
    ) -> Self {
        let mask_mode = if config.exact_masks { "exact" } else { "shared" }.to_string();
        Self {
            format_version: FORMAT_VERSION,
            config,
            manifest_digest,
            labels_digest,
            predictions_digest,
            mask_mode,
        }
    }

    /// Identity of the run for resume purposes.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("provenance serializes").as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("provenance serializes");
        s.push('\n');
        s
    }
}
