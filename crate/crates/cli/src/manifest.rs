//! JSON run manifests. Everything except `timings` is a pure function of the
//! config and inputs.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;

pub const VERSION: &str = env!("HVOX_GIT_DESCRIBE");

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub plan_s: f64,
    pub permute_s: f64,
    pub blocks_s: f64,
    pub total_s: f64,
}

/// Partition actually used by a run; a monolithic or direct run is one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChunkSummary {
    pub vis_chunks: usize,
    pub pix_chunks: usize,
    pub direct_blocks: usize,
    pub nufft_blocks: usize,
    pub eps_block: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub eps: f64,
    pub chunks: Option<ChunkSummary>,
    pub peak_block_grid_bytes: Option<u64>,
    pub details: Map<String, Value>,
    pub config: RunConfig,
    pub timings: Timings,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            version: VERSION.to_string(),
            command: command.to_string(),
            config_hash: cfg.hash(),
            eps: cfg.eps,
            chunks: None,
            peak_block_grid_bytes: None,
            details: Map::new(),
            config: cfg.clone(),
            timings: Timings::default(),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.details.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }
}
