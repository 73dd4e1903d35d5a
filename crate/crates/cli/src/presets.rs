//! Desk-scale benchmark presets: SKA-Low layout truncated to a radius, DCOS
//! mesh with a fixed pixel count.

use crate::config::{MeshKind, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub radius_m: f64,
    /// DCOS side; `side²` pixels.
    pub side: usize,
}

pub const PRESETS: [Preset; 4] = [
    Preset { name: "r0.1", radius_m: 100.0, side: 80 },
    Preset { name: "r0.3", radius_m: 300.0, side: 160 },
    Preset { name: "r1", radius_m: 1000.0, side: 360 },
    Preset { name: "r3", radius_m: 3000.0, side: 900 },
];

pub fn preset(name: &str) -> CliResult<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::user(format!("unknown preset '{name}' (known: {})", known.join(", ")))
    })
}

impl Preset {
    /// Rewrites the observation and mesh of `cfg`; transform settings are kept.
    pub fn configure(&self, cfg: &mut RunConfig) {
        cfg.observation.layout = "ska-low-251".into();
        cfg.observation.layout_file = None;
        cfg.observation.antennas = None;
        cfg.observation.max_radius_m = Some(self.radius_m);
        cfg.mesh.kind = MeshKind::Dcos;
        cfg.mesh.size = self.side;
        cfg.mesh.fov_deg = None;
    }
}
