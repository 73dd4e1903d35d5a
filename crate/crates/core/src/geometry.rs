//! Coordinate conventions, bounding boxes, sky meshes and synthetic baselines.
//!
//! Baselines are stored in angular-frequency units, `p = 2π·uvw/λ`, so every
//! transform in this crate uses `exp(∓j⟨r, p⟩)` without hidden constants.
//! Sky directions are unit vectors expressed in the same frame as the
//! baselines; for UVW baselines the phase center is `(0, 0, 1)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Tolerance on ‖r‖ for sky pixels.
pub const UNIT_NORM_TOL: f64 = 1e-12;

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalized(a: &Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn all_finite(p: &Vec3) -> bool {
    p.iter().all(|v| v.is_finite())
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn from_point(p: &Vec3) -> Self {
        Self { min: *p, max: *p }
    }

    pub fn extents(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let mut out = *self;
        for k in 0..3 {
            out.min[k] = out.min[k].min(other.min[k]);
            out.max[k] = out.max[k].max(other.max[k]);
        }
        out
    }

    pub fn include(&mut self, p: &Vec3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    /// Containment with an absolute slack per axis.
    pub fn contains(&self, p: &Vec3, slack: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - slack && p[k] <= self.max[k] + slack)
    }

    /// True when every extent is at most the matching entry of `dims`.
    pub fn fits_within(&self, dims: &Vec3) -> bool {
        let e = self.extents();
        (0..3).all(|k| e[k] <= dims[k])
    }
}

/// Exact coordinate-wise extrema of a point cloud.
pub fn bounding_box(points: &[Vec3]) -> Result<BoundingBox> {
    let first = points
        .first()
        .ok_or_else(|| Error::domain("bounding box of an empty point set"))?;
    if let Some(i) = points.iter().position(|p| !all_finite(p)) {
        return Err(Error::domain(format!("non-finite coordinate at point {i}")));
    }
    let mut bbox = BoundingBox::from_point(first);
    for p in &points[1..] {
        bbox.include(p);
    }
    Ok(bbox)
}

/// Baseline coordinates `p_i` in angular-frequency units [rad].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSet {
    points: Vec<Vec3>,
}

impl BaselineSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("baseline set must not be empty"));
        }
        if let Some(i) = points.iter().position(|p| !all_finite(p)) {
            return Err(Error::domain(format!("baseline {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Converts metre-valued UVW coordinates at wavelength `lambda` [m].
    pub fn from_uvw_metres(uvw: &[Vec3], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain("wavelength must be positive"));
        }
        let scale = 2.0 * PI / lambda;
        Self::new(
            uvw.iter()
                .map(|p| [p[0] * scale, p[1] * scale, p[2] * scale])
                .collect(),
        )
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bbox(&self) -> BoundingBox {
        bounding_box(&self.points).expect("validated on construction")
    }

    /// Subset in the given index order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.points[i]).collect())
    }
}

/// Unit-sphere pixel directions with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSet {
    points: Vec<Vec3>,
    weights: Vec<f64>,
}

impl PixelSet {
    pub fn new(points: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("pixel set must not be empty"));
        }
        if points.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} pixels but {} weights",
                points.len(),
                weights.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !all_finite(p) || (norm(p) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::domain(format!("pixel {i} is not a unit vector")));
            }
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::domain(format!("weight {i} is not finite")));
        }
        Ok(Self { points, weights })
    }

    /// Unit weights.
    pub fn with_unit_weights(points: Vec<Vec3>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        *self = Self::new(std::mem::take(&mut self.points), weights)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bbox(&self) -> BoundingBox {
        bounding_box(&self.points).expect("validated on construction")
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            idx.iter().map(|&i| self.points[i]).collect(),
            idx.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

/// Rotation taking `+z` onto `target` along the shortest arc.
///
/// Identity when `target` is the north pole, a half-turn about `x` when it
/// is the south pole.
fn rotation_to(target: &Vec3) -> [[f64; 3]; 3] {
    let c = normalized(target);
    let z = [0.0, 0.0, 1.0];
    let axis = cross(&z, &c);
    let s = norm(&axis);
    let cos = c[2];
    if s < 1e-15 {
        return if cos > 0.0 {
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        } else {
            [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]
        };
    }
    let k = [axis[0] / s, axis[1] / s, axis[2] / s];
    let t = 1.0 - cos;
    [
        [
            cos + k[0] * k[0] * t,
            k[0] * k[1] * t - k[2] * s,
            k[0] * k[2] * t + k[1] * s,
        ],
        [
            k[1] * k[0] * t + k[2] * s,
            cos + k[1] * k[1] * t,
            k[1] * k[2] * t - k[0] * s,
        ],
        [
            k[2] * k[0] * t - k[1] * s,
            k[2] * k[1] * t + k[0] * s,
            cos + k[2] * k[2] * t,
        ],
    ]
}

fn rotate(m: &[[f64; 3]; 3], v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

fn check_center(phase_center: &Vec3) -> Result<()> {
    if !all_finite(phase_center) || norm(phase_center) == 0.0 {
        return Err(Error::domain("phase center must be a finite non-zero vector"));
    }
    Ok(())
}

/// Direction-cosine mesh of `side × side` pixels spanning `fov_deg` on the
/// tangent plane at `phase_center`.
///
/// The half-width in direction cosines is `sin(fov/2)`; the grid is uniform
/// in `(l, m)` and lifted with `n = √(1 − l² − m²)`. Pixels outside the unit
/// disk are dropped. Weights are 1.
pub fn make_dcos_mesh(phase_center: &Vec3, fov_deg: f64, side: usize) -> Result<PixelSet> {
    check_center(phase_center)?;
    if !(fov_deg > 0.0 && fov_deg <= 120.0) {
        return Err(Error::domain(format!(
            "direction-cosine mesh needs 0 < fov ≤ 120°, got {fov_deg}"
        )));
    }
    if side == 0 {
        return Err(Error::domain("mesh side must be at least 1"));
    }
    let half = (fov_deg.to_radians() / 2.0).sin();
    let coord = |i: usize| {
        if side == 1 {
            0.0
        } else {
            -half + 2.0 * half * i as f64 / (side - 1) as f64
        }
    };
    let rot = rotation_to(phase_center);
    let mut points = Vec::with_capacity(side * side);
    for i in 0..side {
        let l = coord(i);
        for j in 0..side {
            let m = coord(j);
            let rho2 = l * l + m * m;
            if rho2 >= 1.0 {
                continue;
            }
            let local = [l, m, (1.0 - rho2).sqrt()];
            points.push(rotate(&rot, &local));
        }
    }
    PixelSet::with_unit_weights(points)
}

/// Spherical Fibonacci lattice restricted to the cap of angular radius
/// `fov/2` around `phase_center`, with equal-area weights.
pub fn make_fibonacci_cap_mesh(phase_center: &Vec3, fov_deg: f64, n: usize) -> Result<PixelSet> {
    check_center(phase_center)?;
    if !(fov_deg > 0.0 && fov_deg <= 360.0) {
        return Err(Error::domain(format!("cap mesh needs 0 < fov ≤ 360°, got {fov_deg}")));
    }
    if n == 0 {
        return Err(Error::domain("mesh size must be at least 1"));
    }
    let theta_cap = (fov_deg.to_radians() / 2.0).min(PI);
    let depth = 1.0 - theta_cap.cos();
    let area = 2.0 * PI * depth;
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let rot = rotation_to(phase_center);
    let points: Vec<Vec3> = if n == 1 {
        vec![normalized(phase_center)]
    } else {
        (0..n)
            .map(|i| {
                let z = 1.0 - depth * (i as f64 + 0.5) / n as f64;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden_angle * i as f64;
                let local = [rho * phi.cos(), rho * phi.sin(), z];
                normalized(&rotate(&rot, &local))
            })
            .collect()
    };
    PixelSet::new(points, vec![area / n as f64; n])
}

/// One antenna of an array layout, in local east-north-up metres.
#[derive(Debug, Clone, PartialEq)]
pub struct Antenna {
    pub name: String,
    pub enu: Vec3,
}

/// Parses a `name,east_m,north_m,up_m` CSV layout.
pub fn parse_layout_csv(text: &str) -> Result<Vec<Antenna>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::domain("layout file is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["name", "east_m", "north_m", "up_m"] {
        return Err(Error::domain(format!("unexpected layout header '{header}'")));
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::domain(format!("layout row {} has {} fields", row + 1, fields.len())));
        }
        let mut enu = [0.0; 3];
        for k in 0..3 {
            enu[k] = fields[k + 1].parse::<f64>().map_err(|e| {
                Error::domain(format!("layout row {}: bad number '{}': {e}", row + 1, fields[k + 1]))
            })?;
        }
        if !all_finite(&enu) {
            return Err(Error::domain(format!("layout row {} is not finite", row + 1)));
        }
        out.push(Antenna {
            name: fields[0].to_string(),
            enu,
        });
    }
    Ok(out)
}

const SKA_LOW_251: &str = include_str!("../data/ska_low_251.csv");
const LOFAR_HBA_38: &str = include_str!("../data/lofar_hba_38.csv");

/// Names of the layouts compiled into the crate.
pub const BUILTIN_LAYOUTS: [&str; 2] = ["ska-low-251", "lofar-hba-38"];

pub fn builtin_layout(name: &str) -> Result<Vec<Antenna>> {
    match name {
        "ska-low-251" => parse_layout_csv(SKA_LOW_251),
        "lofar-hba-38" => parse_layout_csv(LOFAR_HBA_38),
        _ => Err(Error::domain(format!(
            "unknown builtin layout '{name}' (known: {})",
            BUILTIN_LAYOUTS.join(", ")
        ))),
    }
}

/// Keeps antennas within `radius_m` of the array centre (horizontal distance).
pub fn truncate_layout(antennas: &[Antenna], radius_m: f64) -> Vec<Antenna> {
    antennas
        .iter()
        .filter(|a| a.enu[0].hypot(a.enu[1]) <= radius_m)
        .cloned()
        .collect()
}

/// Observation geometry for baseline simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationConfig {
    /// Antenna positions, east-north-up [m].
    pub antennas: Vec<Vec3>,
    /// Array latitude [deg].
    pub latitude_deg: f64,
    /// Phase-centre declination [deg].
    pub dec_deg: f64,
    /// Phase-centre right ascension [deg]; recorded only, hour angles are explicit.
    pub ra_deg: f64,
    pub n_times: usize,
    /// Hour-angle span centred on transit [h].
    pub span_hours: f64,
    pub freq_hz: f64,
    pub fov_deg: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            antennas: Vec::new(),
            latitude_deg: -26.82,
            dec_deg: -45.0,
            ra_deg: 15.0,
            n_times: 3,
            span_hours: 8.0,
            freq_hz: 150e6,
            fov_deg: 30.0,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas.len() < 2 {
            return Err(Error::domain(format!(
                "need at least 2 antennas, got {}",
                self.antennas.len()
            )));
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return Err(Error::domain("frequency must be positive"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 180.0) {
            return Err(Error::domain("field of view must lie in (0, 180]°"));
        }
        if self.n_times == 0 {
            return Err(Error::domain("need at least one time sample"));
        }
        if !self.span_hours.is_finite() || !self.dec_deg.is_finite() || !self.latitude_deg.is_finite() {
            return Err(Error::domain("non-finite observation angle"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.freq_hz
    }

    /// Hour angles [rad], evenly spaced over the span and centred on transit.
    pub fn hour_angles(&self) -> Vec<f64> {
        let span = (self.span_hours * 15.0).to_radians();
        if self.n_times == 1 {
            return vec![0.0];
        }
        (0..self.n_times)
            .map(|t| -span / 2.0 + span * t as f64 / (self.n_times - 1) as f64)
            .collect()
    }

    pub fn n_pairs(&self) -> usize {
        let n = self.antennas.len();
        n * (n - 1) / 2
    }
}

/// Local east-north-up vector to equatorial XYZ at `latitude` [rad].
pub fn enu_to_xyz(enu: &Vec3, latitude: f64) -> Vec3 {
    let (sl, cl) = latitude.sin_cos();
    [-sl * enu[1] + cl * enu[2], enu[0], cl * enu[1] + sl * enu[2]]
}

/// Equatorial XYZ to UVW for hour angle `h` and declination `dec` [rad].
pub fn xyz_to_uvw(xyz: &Vec3, h: f64, dec: f64) -> Vec3 {
    let (sh, ch) = h.sin_cos();
    let (sd, cd) = dec.sin_cos();
    [
        sh * xyz[0] + ch * xyz[1],
        -sd * ch * xyz[0] + sd * sh * xyz[1] + cd * xyz[2],
        cd * ch * xyz[0] - cd * sh * xyz[1] + sd * xyz[2],
    ]
}

/// Baseline `p = 2π·R(H, δ)·(b_i − b_j)/λ` for one pair and hour angle.
pub fn baseline_for_pair(cfg: &ObservationConfig, i: usize, j: usize, hour_angle: f64) -> Vec3 {
    let a = &cfg.antennas[i];
    let b = &cfg.antennas[j];
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let xyz = enu_to_xyz(&d, cfg.latitude_deg.to_radians());
    let uvw = xyz_to_uvw(&xyz, hour_angle, cfg.dec_deg.to_radians());
    let scale = 2.0 * PI / cfg.wavelength();
    [uvw[0] * scale, uvw[1] * scale, uvw[2] * scale]
}

/// Cross-correlation baselines, time-major then pair `(i < j)` order.
/// Autocorrelations are excluded, so `N_vis = n_pairs × n_times`.
pub fn simulate_baselines(cfg: &ObservationConfig) -> Result<BaselineSet> {
    cfg.validate()?;
    let n = cfg.antennas.len();
    let mut points = Vec::with_capacity(cfg.n_pairs() * cfg.n_times);
    for h in cfg.hour_angles() {
        for i in 0..n {
            for j in (i + 1)..n {
                points.push(baseline_for_pair(cfg, i, j, h));
            }
        }
    }
    BaselineSet::new(points)
}
