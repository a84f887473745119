//! Synthetic planar scenes with square tags, and a ray-casting scan
//! simulator that produces point clouds plus exact ground truth.
//!
//! Scene files are TOML:
//!
//! ```toml
//! [scan_pattern]
//! alpha_a = 0.0012      # rad per column
//! alpha_i = 0.0012      # rad per row
//! fov_a = 1.396         # horizontal field of view, rad
//! fov_i = 0.35          # vertical field of view, rad
//!
//! [noise]
//! range_sigma = 0.005   # m, along the ray
//! intensity_sigma = 5.0
//!
//! [[planes]]
//! origin = [0.0, 8.0, 0.0]
//! normal = [0.0, -1.0, 0.0]   # faces the sensors
//! u_axis = [1.0, 0.0, 0.0]    # optional; in-plane horizontal axis
//! extent = [40.0, 4.0]        # half sizes along u and v, m
//! background = 90.0
//!
//! [[markers]]
//! id = 0
//! side = 0.692
//! plane = 0
//! center = [4.3, 0.0]         # plane (u, v) coordinates, m
//! rotation = 0.35             # about the plane normal, rad
//!
//! [[sensors]]
//! position = [0.0, 0.0, 0.0]
//! yaw = 1.5708                # rad, then pitch, then roll
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{write_cloud, CloudError, CloudFormat, Point, PointCloud};
use crate::geometry::{format_pose_line, Pose, Rotation, Vec3};
use crate::pose_svd::CanonicalCorners;
use crate::projection::{to_spherical, ProjectionParams};
use crate::tagdetect::dictionary::{DictionaryError, TagDictionary, DEFAULT_NAME};
use crate::tagdetect::render::tag_surface;
use crate::tagdetect::{write_records, DetectionRecord, RecordError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("sensor {0} sees no surface")]
    EmptyScan(usize),
    #[error("scene file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPattern {
    pub alpha_a: f64,
    pub alpha_i: f64,
    pub fov_a: f64,
    pub fov_i: f64,
}

impl ScanPattern {
    /// Image geometry whose pixel centers are exactly the simulated rays.
    pub fn projection(&self) -> ProjectionParams {
        ProjectionParams::centered(self.alpha_a, self.alpha_i, self.fov_a, self.fov_i)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub range_sigma: f64,
    pub intensity_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub origin: [f64; 3],
    pub normal: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_axis: Option<[f64; 3]>,
    pub extent: [f64; 2],
    #[serde(default = "default_background")]
    pub background: f64,
}

fn default_background() -> f64 {
    90.0
}

fn default_bright() -> f64 {
    200.0
}

fn default_dark() -> f64 {
    20.0
}

fn default_margin() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSpec {
    pub id: u32,
    pub side: f64,
    pub plane: usize,
    pub center: [f64; 2],
    #[serde(default)]
    pub rotation: f64,
    #[serde(default = "default_bright")]
    pub bright: f64,
    #[serde(default = "default_dark")]
    pub dark: f64,
    /// Bright quiet zone around the border, in cells.
    #[serde(default = "default_margin")]
    pub margin_cells: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
}

impl SensorSpec {
    /// Sensor-to-world transform.
    pub fn pose(&self) -> Pose {
        let r = Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw);
        Pose::new(Rotation::from_matrix_unchecked(r.into_inner()), Vec3::from(self.position))
    }
}

fn default_dictionary() -> String {
    DEFAULT_NAME.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scan_pattern: ScanPattern,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// `default16` or a dictionary file path.
    #[serde(default = "default_dictionary")]
    pub dictionary: String,
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub markers: Vec<MarkerSpec>,
    pub sensors: Vec<SensorSpec>,
}

/// Orthonormal plane frame: in-plane axes `u`, `v` and normal `n = u × v`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PlaneFrame {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    n: Vec3,
    extent: [f64; 2],
    background: f64,
}

impl PlaneFrame {
    fn new(p: &PlaneSpec) -> Result<Self, SynthError> {
        let n = Vec3::from(p.normal);
        if !(n.norm() > 0.0) {
            return Err(SynthError::InvalidSpec("plane normal must be non-zero".into()));
        }
        let n = n.normalize();
        let guess = match p.u_axis {
            Some(u) => Vec3::from(u),
            None if n.x.abs() < 0.9 => Vec3::x(),
            None => Vec3::y(),
        };
        let u = guess - n * n.dot(&guess);
        if u.norm() < 1e-9 {
            return Err(SynthError::InvalidSpec("plane u_axis is parallel to its normal".into()));
        }
        let u = u.normalize();
        Ok(PlaneFrame {
            origin: Vec3::from(p.origin),
            u,
            v: n.cross(&u),
            n,
            extent: p.extent,
            background: p.background,
        })
    }

    fn local(&self, x: &Vec3) -> (f64, f64) {
        let d = x - self.origin;
        (d.dot(&self.u), d.dot(&self.v))
    }

    fn contains(&self, a: f64, b: f64) -> bool {
        a.abs() <= self.extent[0] && b.abs() <= self.extent[1]
    }
}

struct PlacedMarker {
    id: u32,
    side: f64,
    plane: usize,
    /// Marker-to-world transform; z is the host plane normal.
    pose: Pose,
    code: u64,
    bright: f64,
    dark: f64,
    margin_cells: f64,
}

/// Validated scene with derived frames, ready for ray casting.
pub struct Scene {
    pub spec: SceneSpec,
    pub dictionary: TagDictionary,
    planes: Vec<PlaneFrame>,
    markers: Vec<PlacedMarker>,
}

struct Hit {
    range: f64,
    plane: usize,
    point: Vec3,
    front: bool,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Self, SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidSpec(m));
        let sp = &spec.scan_pattern;
        if !(sp.alpha_a > 0.0 && sp.alpha_i > 0.0) {
            return invalid("angular resolutions must be positive".into());
        }
        if !(sp.fov_a > 0.0 && sp.fov_a <= 2.0 * std::f64::consts::PI) {
            return invalid(format!("fov_a {} outside (0, 2π]", sp.fov_a));
        }
        if !(sp.fov_i > 0.0 && sp.fov_i / 2.0 + 2.0 * sp.alpha_i < std::f64::consts::FRAC_PI_2) {
            return invalid(format!("fov_i {} reaches the poles", sp.fov_i));
        }
        if spec.sensors.is_empty() {
            return invalid("no sensors".into());
        }
        let n = &spec.noise;
        if !(n.range_sigma >= 0.0 && n.intensity_sigma >= 0.0) {
            return invalid("noise sigmas must be non-negative".into());
        }
        let dictionary = TagDictionary::load(&spec.dictionary)?;
        let planes = spec
            .planes
            .iter()
            .map(PlaneFrame::new)
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(p) = planes.iter().find(|p| !(p.extent[0] > 0.0 && p.extent[1] > 0.0)) {
            return invalid(format!("plane at {:?} has non-positive extent", p.origin));
        }
        let mut markers: Vec<PlacedMarker> = Vec::new();
        for m in &spec.markers {
            let Some(plane) = planes.get(m.plane) else {
                return invalid(format!("marker {} references missing plane {}", m.id, m.plane));
            };
            if markers.iter().any(|o| o.id == m.id) {
                return invalid(format!("duplicate marker id {}", m.id));
            }
            if !(m.side > 0.0 && m.margin_cells >= 0.0) {
                return invalid(format!("marker {} needs side > 0 and margin >= 0", m.id));
            }
            let Some(code) = dictionary.code(m.id) else {
                return invalid(format!("marker id {} is not in the dictionary", m.id));
            };
            // Quiet-zone square must stay on the plane.
            let cells = (dictionary.grid_n + 2) as f64;
            let half = 0.5 * m.side * (cells + 2.0 * m.margin_cells) / cells;
            let reach = half * (m.rotation.cos().abs() + m.rotation.sin().abs());
            if m.center[0].abs() + reach > plane.extent[0] || m.center[1].abs() + reach > plane.extent[1] {
                return invalid(format!("marker {} extends past its plane", m.id));
            }
            let (c, s) = (m.rotation.cos(), m.rotation.sin());
            let x = plane.u * c + plane.v * s;
            let z = plane.n;
            let y = z.cross(&x);
            let origin = plane.origin + plane.u * m.center[0] + plane.v * m.center[1];
            let r = Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]));
            markers.push(PlacedMarker {
                id: m.id,
                side: m.side,
                plane: m.plane,
                pose: Pose::new(r, origin),
                code,
                bright: m.bright,
                dark: m.dark,
                margin_cells: m.margin_cells,
            });
        }
        Ok(Scene {
            spec,
            dictionary,
            planes,
            markers,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        Self::new(toml::from_str(text)?)
    }

    pub fn projection(&self) -> ProjectionParams {
        self.spec.scan_pattern.projection()
    }

    fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (k, p) in self.planes.iter().enumerate() {
            let denom = p.n.dot(dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = p.n.dot(&(p.origin - origin)) / denom;
            if !(t > 1e-9) || best.as_ref().is_some_and(|b| b.range <= t) {
                continue;
            }
            let point = origin + dir * t;
            let (a, b) = p.local(&point);
            if p.contains(a, b) {
                best = Some(Hit {
                    range: t,
                    plane: k,
                    point,
                    front: denom < 0.0,
                });
            }
        }
        best
    }

    fn intensity(&self, hit: &Hit) -> f64 {
        let plane = &self.planes[hit.plane];
        if hit.front {
            let n = (self.dictionary.grid_n + 2) as f64;
            for m in self.markers.iter().filter(|m| m.plane == hit.plane) {
                let local = m.pose.inverse().apply(&hit.point);
                let x = (local.x + m.side / 2.0) / m.side * n;
                let y = (m.side / 2.0 - local.y) / m.side * n;
                if let Some(bright) = tag_surface(m.code, self.dictionary.grid_n, x, y, m.margin_cells) {
                    return if bright { m.bright } else { m.dark };
                }
            }
        }
        plane.background
    }

    /// Noise-free returns of one sensor in grid order: pixel index,
    /// sensor-frame unit direction, range, intensity.
    fn trace(&self, sensor: &Pose) -> Vec<(usize, Vec3, f64, f64)> {
        let params = self.projection();
        let w = params.width;
        (0..params.width * params.height)
            .into_par_iter()
            .filter_map(|idx| {
                let dir = params.ray((idx % w) as f64, (idx / w) as f64);
                let world_dir = sensor.rotation * dir;
                let hit = self.cast(&sensor.translation, &world_dir)?;
                Some((idx, dir, hit.range, self.intensity(&hit)))
            })
            .collect()
    }

    /// Simulates every sensor. Scan ids follow sensor order. Noise for scan
    /// `k` comes from stream `k` of a generator seeded with `seed`.
    pub fn render_scans(&self, seed: u64) -> Result<(Vec<PointCloud>, GroundTruth), SynthError> {
        let ns = self.spec.noise;
        let range_noise = Normal::new(0.0, ns.range_sigma).expect("validated sigma");
        let intensity_noise = Normal::new(0.0, ns.intensity_sigma).expect("validated sigma");
        let mut clouds = Vec::with_capacity(self.spec.sensors.len());
        for (k, s) in self.spec.sensors.iter().enumerate() {
            let returns = self.trace(&s.pose());
            if returns.is_empty() {
                return Err(SynthError::EmptyScan(k));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let points = returns
                .into_iter()
                .map(|(_, dir, range, intensity)| {
                    let (mut r, mut i) = (range, intensity);
                    if ns.range_sigma > 0.0 {
                        r += range_noise.sample(&mut rng);
                    }
                    if ns.intensity_sigma > 0.0 {
                        i = (i + intensity_noise.sample(&mut rng)).max(0.0);
                    }
                    Point {
                        position: dir * r,
                        intensity: i,
                    }
                })
                .collect();
            clouds.push(PointCloud::new(k as u32, points));
        }
        Ok((clouds, self.ground_truth()))
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let world_scan_poses: Vec<Pose> = self.spec.sensors.iter().map(SensorSpec::pose).collect();
        let to_anchor = world_scan_poses[0].inverse();
        let mut marker_poses = BTreeMap::new();
        let mut corners = BTreeMap::new();
        let mut sides = BTreeMap::new();
        for m in &self.markers {
            let pose = to_anchor * m.pose;
            marker_poses.insert(m.id, pose);
            corners.insert(m.id, CanonicalCorners::new(m.side).corners.map(|c| pose.apply(&c)));
            sides.insert(m.id, m.side);
        }
        GroundTruth {
            scan_poses: world_scan_poses.iter().map(|p| to_anchor * *p).collect(),
            world_scan_poses,
            marker_poses,
            corners,
            sides,
        }
    }

    /// Markers whose centre and corners are imaged unoccluded, in front
    /// view and inside the frame of sensor `scan`.
    pub fn visible_markers(&self, scan: usize) -> Vec<u32> {
        let sensor = self.spec.sensors[scan].pose();
        let params = self.projection();
        self.markers
            .iter()
            .filter(|m| {
                let c = CanonicalCorners::new(m.side).corners;
                std::iter::once(Vec3::zeros()).chain(c).all(|local| {
                    let world = m.pose.apply(&local);
                    let in_sensor = sensor.inverse().apply(&world);
                    let Ok((theta, phi, range)) = to_spherical(&in_sensor) else {
                        return false;
                    };
                    let (u, v) = params.pixel_of(theta, phi);
                    let inside = u >= 0 && v >= 0 && (u as usize) < params.width && (v as usize) < params.height;
                    let dir = sensor.rotation * in_sensor.normalize();
                    inside
                        && self.cast(&sensor.translation, &dir).is_some_and(|h| {
                            h.plane == m.plane && h.front && (h.range - range).abs() < 1e-6 * range.max(1.0)
                        })
                })
            })
            .map(|m| m.id)
            .collect()
    }

    /// Exact corner positions for every visible marker of every scan, in
    /// that scan's frame.
    pub fn true_detections(&self) -> Vec<DetectionRecord> {
        let gt = self.ground_truth();
        let mut out = Vec::new();
        for scan in 0..self.spec.sensors.len() {
            for id in self.visible_markers(scan) {
                let corners = gt.corners_in_scan(scan, id);
                out.push(DetectionRecord {
                    scan_id: scan as u32,
                    marker_id: id,
                    corners3d: corners.map(|c| [c.x, c.y, c.z]),
                    e_pp: None,
                });
            }
        }
        out
    }
}

/// Exact scene geometry. Poses are relative to the first sensor's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Scan-to-anchor transforms, indexed by scan id.
    pub scan_poses: Vec<Pose>,
    /// Sensor-to-world transforms as specified.
    pub world_scan_poses: Vec<Pose>,
    pub marker_poses: BTreeMap<u32, Pose>,
    /// Canonical-order corners in the anchor frame.
    pub corners: BTreeMap<u32, [Vec3; 4]>,
    pub sides: BTreeMap<u32, f64>,
}

impl GroundTruth {
    pub fn corners_in_scan(&self, scan: usize, marker: u32) -> [Vec3; 4] {
        let to_scan = self.scan_poses[scan].inverse();
        self.corners[&marker].map(|c| to_scan.apply(&c))
    }

    pub fn pose_lines(&self) -> String {
        self.scan_poses
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{i} {}\n", format_pose_line(p)))
            .collect()
    }

    pub fn marker_lines(&self) -> String {
        self.marker_poses
            .iter()
            .map(|(j, p)| format!("{j} {}\n", format_pose_line(p)))
            .collect()
    }
}

/// Writes `scan_NNN.<ext>` clouds, `gt_poses.txt`, `gt_markers.txt`,
/// `gt_detections.json` and a matching `run.toml` into `dir`.
pub fn write_outputs(
    dir: &Path,
    scene: &Scene,
    clouds: &[PointCloud],
    gt: &GroundTruth,
    format: CloudFormat,
) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    for c in clouds {
        write_cloud(c, &dir.join(format!("scan_{:03}.{}", c.scan_id, format.extension())), format)?;
    }
    std::fs::write(dir.join("gt_poses.txt"), gt.pose_lines())?;
    std::fs::write(dir.join("gt_markers.txt"), gt.marker_lines())?;
    write_records(&dir.join("gt_detections.json"), &scene.true_detections())?;
    let p = scene.projection();
    let mut run = format!(
        "[projection]\nalpha_a = {:?}\nalpha_i = {:?}\nu_o = {}\nv_o = {}\nwidth = {}\nheight = {}\n",
        p.alpha_a, p.alpha_i, p.u_o, p.v_o, p.width, p.height
    );
    if let Some(&side) = gt.sides.values().next() {
        if gt.sides.values().all(|&s| s == side) {
            run = format!("marker_size = {side:?}\n\n") + &run;
        }
    }
    std::fs::write(dir.join("run.toml"), run)?;
    Ok(())
}

/// Ready-made scenes.
pub mod scenes {
    use super::*;

    /// Sensors step along a straight wall, each seeing a strip of it; tags
    /// sit in the strips shared by neighbouring sensors.
    #[derive(Clone, Debug, PartialEq)]
    pub struct Corridor {
        pub scans: usize,
        /// Distance from the sensor line to the wall, m.
        pub distance: f64,
        /// Sensor spacing along the wall, m.
        pub spacing: f64,
        pub markers_per_gap: usize,
        pub side: f64,
        pub pattern: ScanPattern,
        pub noise: NoiseSpec,
    }

    impl Default for Corridor {
        fn default() -> Self {
            Corridor {
                scans: 5,
                distance: 5.0,
                spacing: 12.0,
                markers_per_gap: 1,
                side: 0.692,
                pattern: ScanPattern {
                    alpha_a: 0.0012,
                    alpha_i: 0.0012,
                    fov_a: 80f64.to_radians(),
                    fov_i: 0.35,
                },
                noise: NoiseSpec::default(),
            }
        }
    }

    impl Corridor {
        /// Width of the wall strip seen by one sensor, m.
        pub fn footprint(&self) -> f64 {
            2.0 * self.distance * (self.pattern.fov_a / 2.0).tan()
        }

        pub fn spec(&self) -> SceneSpec {
            let half_len = 0.5 * (self.scans as f64 - 1.0) * self.spacing + self.footprint();
            let mid = 0.5 * (self.scans as f64 - 1.0) * self.spacing;
            let height = self.distance * 2.0 * self.pattern.fov_i.tan() + 2.0;
            let plane = PlaneSpec {
                origin: [mid, self.distance, 0.0],
                normal: [0.0, -1.0, 0.0],
                u_axis: Some([1.0, 0.0, 0.0]),
                extent: [half_len, height],
                background: 90.0,
            };
            let rot_cycle = [0.35, -0.45, 0.5, -0.3, 0.4, -0.55];
            let mut markers = Vec::new();
            for gap in 0..self.scans.saturating_sub(1) {
                let x = (gap as f64 + 0.5) * self.spacing - mid;
                for k in 0..self.markers_per_gap {
                    let id = (gap * self.markers_per_gap + k) as u32;
                    let dx = (k as f64 - 0.5 * (self.markers_per_gap as f64 - 1.0)) * 2.0 * self.side;
                    markers.push(MarkerSpec {
                        id,
                        side: self.side,
                        plane: 0,
                        center: [x + dx, 0.0],
                        rotation: rot_cycle[id as usize % rot_cycle.len()],
                        bright: default_bright(),
                        dark: default_dark(),
                        margin_cells: 1.0,
                    });
                }
            }
            let wobble = [(0.0, 0.0, 0.0), (0.25, 0.03, -0.04), (-0.2, -0.025, 0.05), (0.3, 0.02, 0.03), (-0.15, -0.03, -0.05), (0.1, 0.025, 0.04)];
            let sensors = (0..self.scans)
                .map(|k| {
                    let (dz, pitch, roll) = wobble[k % wobble.len()];
                    SensorSpec {
                        position: [k as f64 * self.spacing, 0.0, dz],
                        yaw: std::f64::consts::FRAC_PI_2,
                        pitch,
                        roll,
                    }
                })
                .collect();
            SceneSpec {
                scan_pattern: self.pattern,
                noise: self.noise,
                dictionary: DEFAULT_NAME.to_string(),
                planes: vec![plane],
                markers,
                sensors,
            }
        }
    }

    /// Five scans and four tags, with neighbouring scans sharing only a
    /// narrow strip of wall.
    pub fn low_overlap(noise: NoiseSpec) -> SceneSpec {
        let mut c = Corridor {
            noise,
            ..Default::default()
        };
        c.spacing = c.footprint() - 1.3;
        c.spec()
    }

    /// Five scans with two tags side by side in every shared strip.
    pub fn redundant(noise: NoiseSpec) -> SceneSpec {
        let mut c = Corridor {
            noise,
            markers_per_gap: 2,
            ..Default::default()
        };
        c.spacing = c.footprint() - 3.4;
        c.spec()
    }

    /// One sensor facing a wall with two tags of very different
    /// reflectance, so that no single threshold separates both.
    pub fn contrast_pair() -> SceneSpec {
        SceneSpec {
            scan_pattern: ScanPattern {
                alpha_a: 0.0015,
                alpha_i: 0.0015,
                fov_a: 0.7,
                fov_i: 0.35,
            },
            noise: NoiseSpec::default(),
            dictionary: DEFAULT_NAME.to_string(),
            planes: vec![PlaneSpec {
                origin: [5.0, 0.0, 0.0],
                normal: [-1.0, 0.0, 0.0],
                u_axis: Some([0.0, -1.0, 0.0]),
                extent: [5.0, 3.0],
                background: 45.0,
            }],
            markers: vec![
                MarkerSpec {
                    id: 1,
                    side: 0.692,
                    plane: 0,
                    center: [-0.7, 0.0],
                    rotation: 0.3,
                    bright: 45.0,
                    dark: 5.0,
                    margin_cells: 1.0,
                },
                MarkerSpec {
                    id: 3,
                    side: 0.692,
                    plane: 0,
                    center: [0.7, 0.05],
                    rotation: -0.4,
                    bright: 230.0,
                    dark: 55.0,
                    margin_cells: 1.0,
                },
            ],
            sensors: vec![SensorSpec {
                position: [0.0, 0.0, 0.0],
                yaw: 0.0,
                pitch: 0.0,
                roll: 0.0,
            }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::project;

    fn wall(noise: NoiseSpec) -> SceneSpec {
        SceneSpec {
            scan_pattern: ScanPattern {
                alpha_a: 0.0015,
                alpha_i: 0.0015,
                fov_a: 0.5,
                fov_i: 0.3,
            },
            noise,
            dictionary: DEFAULT_NAME.to_string(),
            planes: vec![PlaneSpec {
                origin: [5.0, 0.3, -0.2],
                normal: [-1.0, 0.1, 0.05],
                u_axis: None,
                extent: [4.0, 4.0],
                background: 90.0,
            }],
            markers: vec![MarkerSpec {
                id: 2,
                side: 0.692,
                plane: 0,
                center: [0.1, -0.2],
                rotation: 0.3,
                bright: 200.0,
                dark: 20.0,
                margin_cells: 1.0,
            }],
            sensors: vec![SensorSpec {
                position: [0.0, 0.0, 0.0],
                yaw: 0.02,
                pitch: -0.01,
                roll: 0.1,
            }],
        }
    }

    #[test]
    fn noise_free_points_lie_on_the_plane() {
        let scene = Scene::new(wall(NoiseSpec::default())).unwrap();
        let (clouds, gt) = scene.render_scans(1).unwrap();
        let plane = &scene.planes[0];
        let pose = gt.world_scan_poses[0];
        assert!(clouds[0].len() > 10_000);
        for p in &clouds[0].points {
            let w = pose.apply(&p.position);
            assert!(plane.n.dot(&(w - plane.origin)).abs() < 1e-12);
        }
    }

    #[test]
    fn marker_resolution_matches_small_angle_estimate() {
        // 0.692 m at 5 m with 0.0015 rad pixels spans about 92 pixels.
        let expected: f64 = 0.692 / 5.0 / 0.0015;
        assert!((expected - 92.27).abs() < 0.01);
        let mut spec = wall(NoiseSpec::default());
        spec.planes[0].normal = [-1.0, 0.0, 0.0];
        spec.planes[0].origin = [5.0, 0.0, 0.0];
        spec.markers[0].center = [0.0, 0.0];
        spec.markers[0].rotation = 0.0;
        spec.markers[0].margin_cells = 0.0;
        spec.sensors[0] = SensorSpec {
            position: [0.0; 3],
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        };
        let scene = Scene::new(spec).unwrap();
        let (clouds, _) = scene.render_scans(0).unwrap();
        let (img, _) = project(&clouds[0], &scene.projection()).unwrap();
        // Count tag-border pixels (dark) along the centre row.
        let v = scene.projection().v_o + 40;
        let dark_row: Vec<usize> = (0..img.width())
            .filter(|&u| img.get(u, v).is_some_and(|p| p.intensity < 50.0))
            .collect();
        let span = (dark_row.last().unwrap() - dark_row.first().unwrap() + 1) as f64;
        assert!((span - expected).abs() <= 2.0, "span {span}");
    }

    #[test]
    fn deterministic_per_seed() {
        let noisy = NoiseSpec {
            range_sigma: 0.005,
            intensity_sigma: 5.0,
        };
        let scene = Scene::new(wall(noisy)).unwrap();
        let (a, _) = scene.render_scans(7).unwrap();
        let (b, _) = scene.render_scans(7).unwrap();
        let (c, _) = scene.render_scans(8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ground_truth_corners_on_host_plane() {
        let scene = Scene::new(wall(NoiseSpec::default())).unwrap();
        let gt = scene.ground_truth();
        let plane = &scene.planes[0];
        let world = gt.world_scan_poses[0];
        for c in &gt.corners[&2] {
            assert!(plane.n.dot(&(world.apply(c) - plane.origin)).abs() < 1e-12);
        }
        assert_eq!(scene.visible_markers(0), vec![2]);
    }

    #[test]
    fn empty_scan_is_reported() {
        let mut spec = wall(NoiseSpec::default());
        spec.sensors.push(SensorSpec {
            position: [0.0; 3],
            yaw: std::f64::consts::PI,
            pitch: 0.0,
            roll: 0.0,
        });
        let scene = Scene::new(spec).unwrap();
        assert!(matches!(scene.render_scans(0), Err(SynthError::EmptyScan(1))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = wall(NoiseSpec::default());
        spec.markers[0].center = [3.9, 0.0];
        assert!(matches!(Scene::new(spec), Err(SynthError::InvalidSpec(_))));
        let mut spec = wall(NoiseSpec::default());
        spec.markers[0].id = 99;
        assert!(matches!(Scene::new(spec), Err(SynthError::InvalidSpec(_))));
        let mut spec = wall(NoiseSpec::default());
        spec.scan_pattern.fov_i = 3.2;
        assert!(matches!(Scene::new(spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn toml_round_trip() {
        let spec = scenes::low_overlap(NoiseSpec::default());
        let text = toml::to_string(&spec).unwrap();
        let back = Scene::from_toml(&text).unwrap();
        assert_eq!(back.spec, spec);
        let doc = include_str!("synth.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        assert!(Scene::from_toml(&doc).is_ok());
    }

    #[test]
    fn corridor_markers_are_seen_by_both_neighbours() {
        let scene = Scene::new(scenes::low_overlap(NoiseSpec::default())).unwrap();
        for k in 0..5 {
            let mut expected = Vec::new();
            if k > 0 {
                expected.push(k as u32 - 1);
            }
            if k < 4 {
                expected.push(k as u32);
            }
            assert_eq!(scene.visible_markers(k), expected, "scan {k}");
        }
    }
}
