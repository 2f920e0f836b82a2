//! Static network geometry: cells, users, a constellation snapshot and the
//! derived coverage and elevation-angle matrices.
//!
//! Cell index 0 is the macro cell, indices `1..=n_tsc` are traditionally
//! backhauled small cells and the remaining indices are LEO-backhauled small
//! cells. Each LEO-backhauled cell hosts one terminal (TST); terminals are
//! addressed by their local index `0..n_lsc`.

use crate::error::{Error, Result};
use crate::scalar::{rad_to_deg, Scalar};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

const PLACEMENT_ATTEMPTS: usize = 20_000;

/// Round-trip propagation delay `2h/c` in seconds.
pub fn round_trip_delay<T: Scalar>(altitude_m: T) -> T {
    T::lit(2.0) * altitude_m / T::lit(SPEED_OF_LIGHT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Macro,
    Tsc,
    Lsc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub kind: CellKind,
    /// Local tangent-plane coordinates of the base station, metres.
    pub position: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct User {
    pub position: [f64; 2],
    /// Data generated per second, bytes/s.
    pub data_generation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Satellite {
    pub altitude: f64,
    /// Sub-satellite point expressed as ground arc offsets from the macro
    /// site, metres (east, north).
    pub ground_track: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SatelliteLayout {
    /// Equally spaced on the rim of the projected-area disc.
    Ring,
    /// Square lattice clipped to the projected-area disc.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub macro_radius_m: f64,
    pub small_radius_m: f64,
    pub n_tsc: usize,
    pub n_lsc: usize,
    pub n_users: usize,
    pub data_generation_bytes_per_s: f64,
    pub n_satellites: usize,
    pub altitude_min_m: f64,
    pub altitude_max_m: f64,
    /// Area of the disc the sub-satellite points are spread over, km².
    pub projected_area_km2: f64,
    pub layout: SatelliteLayout,
    pub min_elevation_deg: f64,
    pub theta_th_deg: f64,
    pub n_r: usize,
    pub k_subch: usize,
    pub q_subch: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            macro_radius_m: 1000.0,
            small_radius_m: 200.0,
            n_tsc: 25,
            n_lsc: 25,
            n_users: 200,
            data_generation_bytes_per_s: 3000.0,
            n_satellites: 8,
            altitude_min_m: 600e3,
            altitude_max_m: 1200e3,
            projected_area_km2: 1.0e6,
            layout: SatelliteLayout::Ring,
            min_elevation_deg: 35.0,
            theta_th_deg: 5.0,
            n_r: 2,
            k_subch: 10,
            q_subch: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("macro_radius_m", self.macro_radius_m),
            ("small_radius_m", self.small_radius_m),
            ("altitude_min_m", self.altitude_min_m),
            ("altitude_max_m", self.altitude_max_m),
            ("projected_area_km2", self.projected_area_km2),
            ("theta_th_deg", self.theta_th_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.data_generation_bytes_per_s.is_finite() && self.data_generation_bytes_per_s >= 0.0) {
            return Err(Error::Config("data_generation_bytes_per_s must be >= 0".into()));
        }
        if self.altitude_min_m > self.altitude_max_m {
            return Err(Error::Config("altitude_min_m exceeds altitude_max_m".into()));
        }
        if !(0.0..90.0).contains(&self.min_elevation_deg) {
            return Err(Error::Config("min_elevation_deg must lie in [0, 90)".into()));
        }
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be at least 1".into()));
        }
        if self.n_r == 0 {
            return Err(Error::Config("n_r must be at least 1".into()));
        }
        if self.k_subch == 0 || self.q_subch == 0 {
            return Err(Error::Config("subchannel counts must be at least 1".into()));
        }
        if self.small_radius_m >= self.macro_radius_m {
            return Err(Error::Config("small_radius_m must be below macro_radius_m".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub macro_radius: f64,
    pub small_radius: f64,
    pub cells: Vec<Cell>,
    pub users: Vec<User>,
    pub satellites: Vec<Satellite>,
    pub theta_th: f64,
    pub n_r: usize,
    pub k_subch: usize,
    pub q_subch: usize,
    pub min_elevation: f64,
    pub altitude_range: [f64; 2],
}

/// `a[m][j]` is true iff user `j` lies inside cell `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub a: Vec<Vec<bool>>,
}

impl CoverageMatrix {
    pub fn covers(&self, cell: usize, user: usize) -> bool {
        self.a[cell][user]
    }

    pub fn cells_covering(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.a.len()).filter(move |&m| self.a[m][user])
    }
}

/// Elevation angle in degrees of every terminal-satellite pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleMatrix {
    pub theta: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_satellites(&self) -> usize {
        self.satellites.len()
    }

    pub fn n_tsc(&self) -> usize {
        self.cells.iter().filter(|c| c.kind == CellKind::Tsc).count()
    }

    pub fn n_lsc(&self) -> usize {
        self.cells.iter().filter(|c| c.kind == CellKind::Lsc).count()
    }

    /// Cell index hosting terminal `tst`.
    pub fn lsc_cell(&self, tst: usize) -> usize {
        self.cells.len() - self.n_lsc() + tst
    }

    /// Terminal index of a cell, if it is LEO-backhauled.
    pub fn tst_of_cell(&self, cell: usize) -> Option<usize> {
        let first = self.cells.len() - self.n_lsc();
        (cell >= first && cell < self.cells.len()).then(|| cell - first)
    }

    pub fn tst_position(&self, tst: usize) -> [f64; 2] {
        self.cells[self.lsc_cell(tst)].position
    }

    /// Unit line-of-sight vector from terminal `tst` to satellite `n` and the
    /// slant range in metres, in an Earth-centred frame.
    pub fn line_of_sight(&self, tst: usize, n: usize) -> ([f64; 3], f64) {
        let g = ground_point(self.tst_position(tst), 0.0);
        let s = ground_point(self.satellites[n].ground_track, self.satellites[n].altitude);
        let d = [s[0] - g[0], s[1] - g[1], s[2] - g[2]];
        let r = norm(d);
        ([d[0] / r, d[1] / r, d[2] / r], r)
    }

    /// Elevation angle of satellite `n` seen from terminal `tst`, degrees.
    pub fn elevation(&self, tst: usize, n: usize) -> f64 {
        let g = ground_point(self.tst_position(tst), 0.0);
        let up = scale(g, 1.0 / norm(g));
        let (u, _) = self.line_of_sight(tst, n);
        rad_to_deg(dot(up, u).clamp(-1.0, 1.0).asin()).max(0.0)
    }

    pub fn is_visible(&self, tst: usize, n: usize) -> bool {
        self.elevation(tst, n) >= self.min_elevation
    }

    pub fn slant_range(&self, tst: usize, n: usize) -> f64 {
        self.line_of_sight(tst, n).1
    }

    /// Geometric angle between two lines of sight at a terminal, degrees,
    /// without any visibility check.
    pub fn los_separation(&self, tst: usize, n1: usize, n2: usize) -> f64 {
        if n1 == n2 {
            return 0.0;
        }
        let (u, _) = self.line_of_sight(tst, n1);
        let (v, _) = self.line_of_sight(tst, n2);
        rad_to_deg(dot(u, v).clamp(-1.0, 1.0).acos())
    }

    pub fn user_cell_distance(&self, cell: usize, user: usize) -> f64 {
        let c = self.cells[cell].position;
        let u = self.users[user].position;
        (c[0] - u[0]).hypot(c[1] - u[1])
    }
}

/// Earth-centred position of a point given by ground arc offsets from the
/// reference site and a height above the surface.
fn ground_point(offset: [f64; 2], height: f64) -> [f64; 3] {
    let arc = offset[0].hypot(offset[1]);
    let central = arc / EARTH_RADIUS_M;
    let (sa, ca) = if arc > 0.0 {
        (offset[0] / arc, offset[1] / arc)
    } else {
        (0.0, 0.0)
    };
    let r = EARTH_RADIUS_M + height;
    [r * central.sin() * sa, r * central.sin() * ca, r * central.cos()]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn uniform_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let a = std::f64::consts::TAU * rng.random::<f64>();
    [r * a.cos(), r * a.sin()]
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut cells = vec![Cell {
        kind: CellKind::Macro,
        position: [0.0, 0.0],
        radius: config.macro_radius_m,
    }];
    let n_small = config.n_tsc + config.n_lsc;
    let spacing = config.small_radius_m;
    let placement_radius = config.macro_radius_m;
    for i in 0..n_small {
        let kind = if i < config.n_tsc { CellKind::Tsc } else { CellKind::Lsc };
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = uniform_in_disc(&mut rng, placement_radius);
            let clear = cells.iter().all(|c: &Cell| {
                (c.position[0] - p[0]).hypot(c.position[1] - p[1]) >= spacing
            });
            if clear {
                placed = Some(p);
                break;
            }
        }
        let position = placed.ok_or_else(|| {
            Error::Placement(format!(
                "could not place small cell {} of {n_small} with spacing {spacing} m",
                i + 1
            ))
        })?;
        cells.push(Cell { kind, position, radius: config.small_radius_m });
    }

    let users = (0..config.n_users)
        .map(|_| User {
            position: uniform_in_disc(&mut rng, config.macro_radius_m),
            data_generation: config.data_generation_bytes_per_s,
        })
        .collect();

    let satellites = place_satellites(config, &mut rng);

    Ok(Scenario {
        macro_radius: config.macro_radius_m,
        small_radius: config.small_radius_m,
        cells,
        users,
        satellites,
        theta_th: config.theta_th_deg,
        n_r: config.n_r,
        k_subch: config.k_subch,
        q_subch: config.q_subch,
        min_elevation: config.min_elevation_deg,
        altitude_range: [config.altitude_min_m, config.altitude_max_m],
    })
}

fn place_satellites(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Satellite> {
    let n = config.n_satellites;
    let radius = (config.projected_area_km2 * 1e6 / std::f64::consts::PI).sqrt();
    let rotation = std::f64::consts::TAU * rng.random::<f64>();
    let tracks: Vec<[f64; 2]> = match config.layout {
        SatelliteLayout::Ring => (0..n)
            .map(|i| {
                let a = rotation + std::f64::consts::TAU * i as f64 / n as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect(),
        SatelliteLayout::Grid => grid_points(n, radius, rotation),
    };
    tracks
        .into_iter()
        .map(|ground_track| Satellite {
            altitude: config.altitude_min_m
                + (config.altitude_max_m - config.altitude_min_m) * rng.random::<f64>(),
            ground_track,
        })
        .collect()
}

/// `n` lattice points inside a disc, taken nearest-first from a square lattice
/// whose pitch is chosen so that the disc holds at least `n` points.
fn grid_points(n: usize, radius: f64, rotation: f64) -> Vec<[f64; 2]> {
    if n == 0 {
        return Vec::new();
    }
    let side = (n as f64).sqrt().ceil() as i64;
    let pitch = if side > 1 { 2.0 * radius / side as f64 } else { radius };
    let mut pts = Vec::new();
    for ix in -side..=side {
        for iy in -side..=side {
            let p = [(ix as f64 + 0.5) * pitch, (iy as f64 + 0.5) * pitch];
            if p[0].hypot(p[1]) <= radius * std::f64::consts::SQRT_2 {
                pts.push(p);
            }
        }
    }
    pts.sort_by(|a, b| {
        a[0].hypot(a[1])
            .total_cmp(&b[0].hypot(b[1]))
            .then(a[0].total_cmp(&b[0]))
            .then(a[1].total_cmp(&b[1]))
    });
    pts.truncate(n);
    let (s, c) = rotation.sin_cos();
    pts.into_iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect()
}

pub fn coverage_matrix(s: &Scenario) -> CoverageMatrix {
    let a = (0..s.n_cells())
        .map(|m| {
            (0..s.n_users())
                .map(|j| s.user_cell_distance(m, j) <= s.cells[m].radius)
                .collect()
        })
        .collect();
    CoverageMatrix { a }
}

pub fn angle_matrix(s: &Scenario) -> AngleMatrix {
    let theta = (0..s.n_lsc())
        .map(|t| (0..s.n_satellites()).map(|n| s.elevation(t, n)).collect())
        .collect();
    AngleMatrix { theta }
}

/// Angle at terminal `tst` between the lines of sight to `n1` and `n2`.
pub fn angular_separation(s: &Scenario, tst: usize, n1: usize, n2: usize) -> Result<f64> {
    for n in [n1, n2] {
        if !s.is_visible(tst, n) {
            return Err(Error::Visibility { tst, sat: n });
        }
    }
    Ok(s.los_separation(tst, n1, n2))
}

/// True iff satellites `n1` and `n2` may share a subchannel at `tst`.
pub fn angle_gate(s: &Scenario, tst: usize, n1: usize, n2: usize) -> bool {
    elevation_gate(s.elevation(tst, n1), s.elevation(tst, n2), s.theta_th)
}

pub fn elevation_gate(theta1: f64, theta2: f64, theta_th: f64) -> bool {
    (theta1 - theta2).abs() >= theta_th
}

pub fn propagation_delay(s: &Scenario, n: usize) -> f64 {
    round_trip_delay(s.satellites[n].altitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ScenarioConfig {
        ScenarioConfig { n_tsc: 5, n_lsc: 5, n_users: 40, n_satellites: 4, ..Default::default() }
    }

    /// A single terminal at the macro site with hand-placed satellites.
    fn one_tst(sats: Vec<Satellite>) -> Scenario {
        Scenario {
            macro_radius: 1000.0,
            small_radius: 200.0,
            cells: vec![
                Cell { kind: CellKind::Macro, position: [0.0, 0.0], radius: 1000.0 },
                Cell { kind: CellKind::Lsc, position: [0.0, 0.0], radius: 200.0 },
            ],
            users: vec![],
            satellites: sats,
            theta_th: 5.0,
            n_r: 2,
            k_subch: 2,
            q_subch: 2,
            min_elevation: 35.0,
            altitude_range: [600e3, 1200e3],
        }
    }

    #[test]
    fn full_scale_config_generates() {
        let s = generate_scenario(&ScenarioConfig::default(), 3).unwrap();
        assert_eq!(s.n_cells(), 51);
        assert_eq!(s.n_tsc(), 25);
        assert_eq!(s.n_lsc(), 25);
        assert_eq!(s.n_satellites(), 8);
        assert_eq!(s.cells[0].kind, CellKind::Macro);
        for sat in &s.satellites {
            assert!((600e3..=1200e3).contains(&sat.altitude));
        }
        for (i, c) in s.cells.iter().enumerate().skip(1) {
            assert!(c.position[0].hypot(c.position[1]) >= 200.0);
            let want = if i <= 25 { CellKind::Tsc } else { CellKind::Lsc };
            assert_eq!(c.kind, want);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(&desk(), 11).unwrap();
        let b = generate_scenario(&desk(), 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scenario(&desk(), 12).unwrap());
    }

    #[test]
    fn zero_users_rejected() {
        let cfg = ScenarioConfig { n_users: 0, ..desk() };
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn crowded_layout_reports_placement_error() {
        let cfg = ScenarioConfig { n_tsc: 40, n_lsc: 40, ..desk() };
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::Placement(_))));
    }

    #[test]
    fn json_round_trip() {
        let s = generate_scenario(&desk(), 5).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn coverage_boundaries() {
        let mut s = generate_scenario(&desk(), 2).unwrap();
        let c = s.cells[1].position;
        s.users[0].position = [0.0, 0.0];
        s.users[1].position = [c[0] + 201.0, c[1]];
        s.users[2].position = [c[0] + 200.0, c[1]];
        let a = coverage_matrix(&s);
        assert!(a.covers(0, 0));
        assert!(!a.covers(1, 1));
        assert!(a.covers(1, 2));
    }

    #[test]
    fn coverage_monotone_in_radius() {
        let mut s = generate_scenario(&desk(), 9).unwrap();
        let before = coverage_matrix(&s);
        for c in s.cells.iter_mut().skip(1) {
            c.radius *= 1.3;
        }
        let after = coverage_matrix(&s);
        for m in 0..s.n_cells() {
            for j in 0..s.n_users() {
                assert!(!before.a[m][j] || after.a[m][j]);
            }
        }
    }

    #[test]
    fn zenith_satellite_has_ninety_degree_elevation() {
        let s = one_tst(vec![Satellite { altitude: 800e3, ground_track: [0.0, 0.0] }]);
        assert!((s.elevation(0, 0) - 90.0).abs() < 1e-9);
        assert!((s.slant_range(0, 0) - 800e3).abs() < 1e-6);
    }

    #[test]
    fn separation_of_identical_direction_is_zero() {
        let s = one_tst(vec![Satellite { altitude: 800e3, ground_track: [1e5, 0.0] }]);
        assert_eq!(angular_separation(&s, 0, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_satellites_at_45_degrees_are_90_apart() {
        // Find the ground offset giving 45 degrees elevation by bisection.
        let h = 700e3;
        let (mut lo, mut hi) = (1.0, 2e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s = one_tst(vec![Satellite { altitude: h, ground_track: [mid, 0.0] }]);
            if s.elevation(0, 0) > 45.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let d = 0.5 * (lo + hi);
        let s = one_tst(vec![
            Satellite { altitude: h, ground_track: [d, 0.0] },
            Satellite { altitude: h, ground_track: [-d, 0.0] },
        ]);
        assert!((s.elevation(0, 0) - 45.0).abs() < 1e-6);
        assert!((angular_separation(&s, 0, 0, 1).unwrap() - 90.0).abs() < 1e-6);
    }

    #[test]
    fn invisible_satellite_is_an_error() {
        let s = one_tst(vec![
            Satellite { altitude: 600e3, ground_track: [0.0, 0.0] },
            Satellite { altitude: 600e3, ground_track: [3e6, 0.0] },
        ]);
        assert!(!s.is_visible(0, 1));
        assert_eq!(angular_separation(&s, 0, 0, 1), Err(Error::Visibility { tst: 0, sat: 1 }));
    }

    #[test]
    fn angle_gate_examples() {
        assert!(!elevation_gate(40.0, 43.0, 5.0));
        assert!(elevation_gate(40.0, 50.0, 5.0));
        let s = one_tst(vec![Satellite { altitude: 800e3, ground_track: [2e5, 0.0] }]);
        assert!(!angle_gate(&s, 0, 0, 0));
    }

    #[test]
    fn propagation_delay_examples() {
        assert!((round_trip_delay(600e3_f64) * 1e3 - 4.003).abs() < 5e-4);
        assert!((round_trip_delay(1200e3_f64) * 1e3 - 8.005).abs() < 1e-3);
        assert_eq!(round_trip_delay(0.0_f64), 0.0);
        assert!((round_trip_delay(600e3_f32) - 4.003e-3).abs() < 1e-6);
    }

    #[test]
    fn grid_layout_places_requested_count() {
        let cfg = ScenarioConfig { layout: SatelliteLayout::Grid, n_satellites: 7, ..desk() };
        let s = generate_scenario(&cfg, 4).unwrap();
        assert_eq!(s.n_satellites(), 7);
    }
}
