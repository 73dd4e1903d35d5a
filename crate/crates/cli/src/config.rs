//! JSON run configuration.

use std::path::{Path, PathBuf};

use hvox::chunked::{DEFAULT_BUDGET_BYTES, DEFAULT_DIRECT_THRESHOLD, DEFAULT_PLAN_CACHE};
use hvox::geometry::{builtin_layout, parse_layout_csv, truncate_layout};
use hvox::{ObservationConfig, PartitionBudget, PlanOptions, DEFAULT_UPSAMP, EPS_MAX, EPS_MIN};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    Dcos,
    Fibonacci,
}

/// Pixel mesh around the phase centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSpec {
    #[serde(rename = "type")]
    pub kind: MeshKind,
    /// Falls back to the observation's field of view.
    pub fov_deg: Option<f64>,
    /// Side length for `dcos`, point count for `fibonacci`.
    pub size: usize,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            kind: MeshKind::Dcos,
            fov_deg: None,
            size: 360,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationSpec {
    /// Builtin layout name; ignored when `layout_file` or `antennas` is set.
    pub layout: String,
    /// CSV with header `name,east_m,north_m,up_m`.
    pub layout_file: Option<PathBuf>,
    /// Explicit east-north-up positions [m].
    pub antennas: Option<Vec<[f64; 3]>>,
    /// Drops antennas farther than this from the array centre [m].
    pub max_radius_m: Option<f64>,
    pub latitude_deg: f64,
    pub dec_deg: f64,
    pub ra_deg: f64,
    pub n_times: usize,
    pub span_hours: f64,
    pub freq_hz: f64,
    pub fov_deg: f64,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        let o = ObservationConfig::default();
        Self {
            layout: "ska-low-251".into(),
            layout_file: None,
            antennas: None,
            max_radius_m: None,
            latitude_deg: o.latitude_deg,
            dec_deg: o.dec_deg,
            ra_deg: o.ra_deg,
            n_times: o.n_times,
            span_hours: o.span_hours,
            freq_hz: o.freq_hz,
            fov_deg: o.fov_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub observation: ObservationSpec,
    pub mesh: MeshSpec,
    pub eps: f64,
    pub budget_bytes: u64,
    pub alpha: f64,
    pub upsamp: f64,
    /// Blocks with `n_pix·n_vis` at or below this run the direct sum.
    pub threshold: u64,
    pub workers: Option<usize>,
    pub deterministic: bool,
    pub strict_accuracy: bool,
    /// Seed for synthetic data in `bench`.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            observation: ObservationSpec::default(),
            mesh: MeshSpec::default(),
            eps: 1e-6,
            budget_bytes: DEFAULT_BUDGET_BYTES,
            alpha: 1.0,
            upsamp: DEFAULT_UPSAMP,
            threshold: DEFAULT_DIRECT_THRESHOLD,
            workers: None,
            deterministic: false,
            strict_accuracy: false,
            seed: 0,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub eps: Option<f64>,
    pub budget_mb: Option<u64>,
    pub alpha: Option<f64>,
    pub threshold: Option<u64>,
    pub workers: Option<usize>,
    pub deterministic: bool,
    pub strict_accuracy: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::user(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::user(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        if let Some(e) = o.eps {
            self.eps = e;
        }
        if let Some(mb) = o.budget_mb {
            self.budget_bytes = mb
                .checked_mul(1024 * 1024)
                .ok_or_else(|| CliError::user("budget overflows"))?;
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(t) = o.threshold {
            self.threshold = t;
        }
        if let Some(w) = o.workers {
            self.workers = Some(w);
        }
        self.deterministic |= o.deterministic;
        self.strict_accuracy |= o.strict_accuracy;
        self.validate()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::User(format!("invalid config: {m}")));
        if !(EPS_MIN..=EPS_MAX).contains(&self.eps) {
            return bad(format!("eps must lie in [{EPS_MIN:e}, {EPS_MAX:e}], got {}", self.eps));
        }
        if self.budget_bytes == 0 {
            return bad("budget_bytes must be positive".into());
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be ≥ 1, got {}", self.alpha));
        }
        if !(self.upsamp > 1.0 && self.upsamp.is_finite()) {
            return bad(format!("upsamp must be > 1, got {}", self.upsamp));
        }
        if self.workers == Some(0) {
            return bad("workers must be ≥ 1".into());
        }
        if self.mesh.size == 0 {
            return bad("mesh.size must be ≥ 1".into());
        }
        if let Some(r) = self.observation.max_radius_m {
            if r.is_nan() || r <= 0.0 {
                return bad(format!("observation.max_radius_m must be positive, got {r}"));
            }
        }
        Ok(())
    }

    pub fn mesh_fov(&self) -> f64 {
        self.mesh.fov_deg.unwrap_or(self.observation.fov_deg)
    }

    /// Core observation with antennas resolved from the layout source.
    pub fn observation_config(&self) -> CliResult<ObservationConfig> {
        let o = &self.observation;
        let mut enu: Vec<[f64; 3]> = if let Some(a) = &o.antennas {
            a.clone()
        } else {
            let layout = match &o.layout_file {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::user(format!("cannot read layout {}: {e}", p.display())))?;
                    parse_layout_csv(&text)?
                }
                None => builtin_layout(&o.layout)?,
            };
            layout.into_iter().map(|a| a.enu).collect()
        };
        if let Some(r) = o.max_radius_m {
            let ants: Vec<_> = enu
                .iter()
                .map(|&e| hvox::geometry::Antenna { name: String::new(), enu: e })
                .collect();
            enu = truncate_layout(&ants, r).into_iter().map(|a| a.enu).collect();
        }
        let cfg = ObservationConfig {
            antennas: enu,
            latitude_deg: o.latitude_deg,
            dec_deg: o.dec_deg,
            ra_deg: o.ra_deg,
            n_times: o.n_times,
            span_hours: o.span_hours,
            freq_hz: o.freq_hz,
            fov_deg: o.fov_deg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn plan_options(&self) -> CliResult<PlanOptions> {
        let mut opts = PlanOptions::new(self.eps);
        opts.budget = PartitionBudget::new(self.budget_bytes, self.upsamp, self.alpha)?;
        opts.direct_threshold = self.threshold;
        opts.strict_accuracy = self.strict_accuracy;
        opts.deterministic = self.deterministic;
        opts.workers = self.workers;
        opts.plan_cache = DEFAULT_PLAN_CACHE;
        Ok(opts)
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"epsilon": 1e-3}"#), Err(CliError::User(_))));
        assert!(RunConfig::from_json(r#"{"mesh": {"type": "healpix"}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"observation": {"fov": 3}}"#).is_err());
    }

    #[test]
    fn overrides_and_validation() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            eps: Some(1e-4),
            budget_mb: Some(16),
            deterministic: true,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.budget_bytes, 16 << 20);
        assert!(cfg.deterministic);
        assert!(cfg.apply(&Overrides { eps: Some(1e-12), ..Default::default() }).is_err());
        assert!(cfg.apply(&Overrides { alpha: Some(0.5), eps: Some(1e-4), ..Default::default() }).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.eps = 1e-3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
