//! End-to-end registration: projection, tag search, corner lifting, pose
//! fitting, shortest-path initialisation and factor-graph refinement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{read_cloud, write_merged, CloudError, CloudFormat, PointCloud};
use crate::fgo::{build_graph, solve_lm, FgoError, LmOptions, NoiseConfig};
use crate::geometry::{Pose, Vec3};
use crate::initgraph::{propagate_poses, shortest_paths, InitGraph, InitGraphError, InitialEstimate};
use crate::metrics::format_pose_file;
use crate::pose_svd::CanonicalCorners;
use crate::projection::{project, to_spherical, ProjectionError, ProjectionParams};
use crate::tagdetect::adaptive::{adaptive_threshold_search, AppendMode, SearchParams};
use crate::tagdetect::detector::refine_corners;
use crate::tagdetect::dictionary::{DictionaryError, TagDictionary, DEFAULT_NAME};
use crate::tagdetect::{
    lift_detections, read_records, write_records, DetectionRecord, MarkerObservation, RecordError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no markers detected in any scan")]
    NoMarkers,
    #[error(transparent)]
    Graph(#[from] InitGraphError),
    #[error("optimisation failed: {0}")]
    Solver(#[from] FgoError),
}

/// Process exit codes of the command-line tool.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const PARTIAL: i32 = 2;
    pub const NO_MARKERS: i32 = 3;
    pub const IO: i32 = 4;
    pub const SOLVER: i32 = 5;
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => exit_code::USAGE,
            PipelineError::Cloud(CloudError::Io(_)) | PipelineError::Io { .. } => exit_code::IO,
            PipelineError::Records(RecordError::Io { .. }) => exit_code::IO,
            PipelineError::Dictionary(DictionaryError::Io { .. }) => exit_code::IO,
            PipelineError::Cloud(_) | PipelineError::Records(_) | PipelineError::Dictionary(_) => exit_code::IO,
            PipelineError::NoMarkers => exit_code::NO_MARKERS,
            PipelineError::Graph(_) => exit_code::NO_MARKERS,
            PipelineError::Solver(_) => exit_code::SOLVER,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Shortest-path initialisation followed by factor-graph refinement.
    #[default]
    Full,
    /// Identity initial poses and identity relative-pose measurements.
    #[serde(alias = "no-first", alias = "no_first")]
    #[value(name = "no-first")]
    NoFirstGraph,
    /// Shortest-path initialisation only.
    #[serde(alias = "no-second", alias = "no_second")]
    #[value(name = "no-second")]
    NoSecondGraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub scope: usize,
    pub step: f64,
    pub append_mode: AppendMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let p = SearchParams::default();
        SearchConfig {
            scope: p.scope,
            step: p.step,
            append_mode: p.append_mode,
        }
    }
}

/// Image geometry when `[projection]` is absent from the config: pixels of
/// `resolution` radians sized to each cloud's angular extent.
pub const DEFAULT_RESOLUTION: f64 = 0.0015;

/// Everything needed for one run. Loaded from TOML; CLI flags override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub format: CloudFormatName,
    /// Marker side length, m.
    pub marker_size: f64,
    /// `default16` or a dictionary file.
    pub dictionary: String,
    pub projection: Option<ProjectionParams>,
    /// Angular resolution used when `projection` is unset, rad.
    pub resolution: f64,
    pub search: SearchConfig,
    pub noise: NoiseConfig,
    pub solver: LmOptions,
    pub mode: Mode,
    /// Seeds nothing in the deterministic pipeline; recorded in the report.
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Pre-computed detections replacing the image search.
    pub detections: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            format: CloudFormatName::Pcd,
            marker_size: 0.0,
            dictionary: DEFAULT_NAME.to_string(),
            projection: None,
            resolution: DEFAULT_RESOLUTION,
            search: SearchConfig::default(),
            noise: NoiseConfig::default(),
            solver: LmOptions::default(),
            mode: Mode::Full,
            seed: 0,
            output: None,
            detections: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormatName {
    Pcd,
    Csv,
}

impl From<CloudFormatName> for CloudFormat {
    fn from(f: CloudFormatName) -> Self {
        match f {
            CloudFormatName::Pcd => CloudFormat::PcdAscii,
            CloudFormatName::Csv => CloudFormat::XyziCsv,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.marker_size > 0.0 && self.marker_size.is_finite()) {
            return bad(format!("marker_size must be positive, got {}", self.marker_size));
        }
        if self.search.scope == 0 || !(self.search.step > 0.0) {
            return bad("search needs scope >= 1 and step > 0".into());
        }
        if let Some(p) = &self.projection {
            p.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        } else if !(self.resolution > 0.0) {
            return bad("resolution must be positive".into());
        }
        self.noise.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn options(&self) -> Result<RegistrationOptions, PipelineError> {
        self.validate()?;
        Ok(RegistrationOptions {
            marker_size: self.marker_size,
            dictionary: TagDictionary::load(&self.dictionary)?,
            projection: self.projection,
            resolution: self.resolution,
            search: SearchParams {
                scope: self.search.scope,
                step: self.search.step,
                append_mode: self.search.append_mode,
                ..Default::default()
            },
            noise: self.noise,
            solver: self.solver,
            mode: self.mode,
        })
    }
}

/// In-memory options of [`register`].
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationOptions {
    pub marker_size: f64,
    pub dictionary: TagDictionary,
    pub projection: Option<ProjectionParams>,
    pub resolution: f64,
    pub search: SearchParams,
    pub noise: NoiseConfig,
    pub solver: LmOptions,
    pub mode: Mode,
}

impl RegistrationOptions {
    pub fn new(marker_size: f64) -> Self {
        RegistrationOptions {
            marker_size,
            dictionary: TagDictionary::default16(),
            projection: None,
            resolution: DEFAULT_RESOLUTION,
            search: SearchParams::default(),
            noise: NoiseConfig::default(),
            solver: LmOptions::default(),
            mode: Mode::Full,
        }
    }
}

/// Smallest image at resolution `alpha` that holds every point of `cloud`.
pub fn fit_projection(cloud: &PointCloud, alpha: f64) -> Result<ProjectionParams, ProjectionError> {
    let (mut tmin, mut tmax, mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &cloud.points {
        if let Ok((t, ph, _)) = to_spherical(&p.position) {
            tmin = tmin.min(t);
            tmax = tmax.max(t);
            pmin = pmin.min(ph);
            pmax = pmax.max(ph);
        }
    }
    if !tmin.is_finite() {
        return Err(ProjectionError::AllPointsOutOfFrame);
    }
    let u_lo = (tmin / alpha).round() as i64;
    let u_hi = (tmax / alpha).round() as i64;
    let v_lo = (pmin / alpha).round() as i64;
    let v_hi = (pmax / alpha).round() as i64;
    Ok(ProjectionParams {
        alpha_a: alpha,
        alpha_i: alpha,
        u_o: (-u_lo) as usize,
        v_o: (-v_lo) as usize,
        width: (u_hi - u_lo + 1) as usize,
        height: (v_hi - v_lo + 1) as usize,
    })
}

/// Detection outcome for one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanDetections {
    pub scan_id: u32,
    /// Scalar threshold chosen by the sweep.
    pub optimal_threshold: f64,
    /// Decoded ids with the threshold each was first accepted at.
    pub decoded: Vec<(u32, f64)>,
    pub observations: Vec<MarkerObservation>,
    /// Ids decoded but rejected while lifting or fitting.
    pub rejected: Vec<u32>,
}

/// Projects, searches and lifts one scan.
pub fn detect_scan(cloud: &PointCloud, opts: &RegistrationOptions) -> Result<ScanDetections, ProjectionError> {
    let params = match opts.projection {
        Some(p) => p,
        None => fit_projection(cloud, opts.resolution)?,
    };
    let (img, _) = project(cloud, &params)?;
    let img = img.normalized();
    let mut queue = adaptive_threshold_search(&img, &opts.dictionary, &opts.search);
    for det in &mut queue.entries {
        *det = refine_corners(&img, &opts.dictionary, det, &opts.search.detector);
    }
    let canonical = CanonicalCorners::new(opts.marker_size);
    let mut observations = Vec::new();
    let mut rejected = Vec::new();
    let lifted = lift_detections(&queue.entries, &img, cloud);
    let lifted_ids: BTreeSet<u32> = lifted.iter().map(|(d, _)| d.id).collect();
    rejected.extend(queue.entries.iter().map(|d| d.id).filter(|id| !lifted_ids.contains(id)));
    for (det, corners) in lifted {
        match MarkerObservation::from_corners(cloud.scan_id, det.id, corners, &canonical) {
            Ok(o) => observations.push(o),
            Err(e) => {
                warn!("scan {}: dropping marker {}: {e}", cloud.scan_id, det.id);
                rejected.push(det.id);
            }
        }
    }
    Ok(ScanDetections {
        scan_id: cloud.scan_id,
        optimal_threshold: queue.optimal_threshold,
        decoded: queue.entries.iter().map(|d| (d.id, d.decision_threshold)).collect(),
        observations,
        rejected,
    })
}

/// Observations from imported corner sets. Sets that fail the square check
/// are dropped with a warning.
pub fn observations_from_records(records: &[DetectionRecord], marker_size: f64) -> Vec<MarkerObservation> {
    let canonical = CanonicalCorners::new(marker_size);
    records
        .iter()
        .filter_map(|r| match MarkerObservation::from_corners(r.scan_id, r.marker_id, r.corners(), &canonical) {
            Ok(o) => Some(o),
            Err(e) => {
                warn!("scan {}: ignoring imported marker {}: {e}", r.scan_id, r.marker_id);
                None
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DropReason {
    NoMarkers,
    Disconnected,
    Unprojectable(String),
}

impl std::fmt::Display for DropReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DropReason::NoMarkers => write!(f, "no usable markers"),
            DropReason::Disconnected => write!(f, "no marker chain to the anchor"),
            DropReason::Unprojectable(e) => write!(f, "projection failed: {e}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegistrationReport {
    pub anchor: u32,
    pub mode: Mode,
    /// Scan-to-anchor transforms of every admitted scan.
    pub scan_poses: BTreeMap<u32, Pose>,
    pub marker_poses: BTreeMap<u32, Pose>,
    pub corners: BTreeMap<u32, [Vec3; 4]>,
    pub detections: Vec<ScanDetections>,
    /// Observations used by the graph stages.
    pub observations: Vec<MarkerObservation>,
    /// Poses after shortest-path propagation.
    pub initial: Option<InitialEstimate>,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
    pub total_seconds: f64,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub solver_log: Option<String>,
    pub dropped: Vec<(u32, DropReason)>,
}

impl RegistrationReport {
    pub fn is_partial(&self) -> bool {
        !self.dropped.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode {:?}", self.mode);
        let _ = writeln!(out, "anchor {}", self.anchor);
        let _ = writeln!(out, "registered {}", self.scan_poses.len());
        for (id, reason) in &self.dropped {
            let _ = writeln!(out, "dropped {id}: {reason}");
        }
        for d in &self.detections {
            let ids: Vec<String> = d.decoded.iter().map(|(id, l)| format!("{id}@{l}")).collect();
            let _ = writeln!(
                out,
                "scan {} threshold {} decoded [{}] rejected {:?}",
                d.scan_id,
                d.optimal_threshold,
                ids.join(" "),
                d.rejected
            );
        }
        for o in &self.observations {
            let _ = writeln!(out, "observation scan {} marker {} e_pp {:e}", o.scan_id, o.marker_id, o.e_pp);
        }
        if let (Some(a), Some(b)) = (self.initial_cost, self.final_cost) {
            let _ = writeln!(out, "cost initial {a:e} final {b:e}");
        }
        for (stage, secs) in &self.timings {
            let _ = writeln!(out, "time {stage} {secs:.6}");
        }
        let _ = writeln!(out, "time total {:.6}", self.total_seconds);
        if let Some(log) = &self.solver_log {
            out.push_str(log);
        }
        out
    }

    pub fn records(&self) -> Vec<DetectionRecord> {
        self.observations.iter().map(MarkerObservation::to_record).collect()
    }
}

struct Stopwatch {
    start: Instant,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl Stopwatch {
    fn new() -> Self {
        let now = Instant::now();
        Stopwatch {
            start: now,
            last: now,
            stages: Vec::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.stages.push((name.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }

    fn total(&self) -> f64 {
        (self.last - self.start).as_secs_f64()
    }
}

/// Detects markers in every cloud (in parallel) and registers them.
pub fn register(clouds: &[PointCloud], opts: &RegistrationOptions) -> Result<RegistrationReport, PipelineError> {
    let mut watch = Stopwatch::new();
    let results: Vec<(u32, Result<ScanDetections, ProjectionError>)> = clouds
        .par_iter()
        .map(|c| (c.scan_id, detect_scan(c, opts)))
        .collect();
    watch.lap("detect");
    let mut detections = Vec::new();
    let mut dropped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(d) => detections.push(d),
            Err(e) => {
                warn!("scan {id}: {e}");
                dropped.push((id, DropReason::Unprojectable(e.to_string())));
            }
        }
    }
    let observations: Vec<MarkerObservation> = detections.iter().flat_map(|d| d.observations.clone()).collect();
    let scan_ids: Vec<u32> = clouds.iter().map(|c| c.scan_id).collect();
    let mut report = register_timed(&scan_ids, &observations, opts, &mut watch)?;
    report.detections = detections;
    dropped.extend(report.dropped.drain(..).filter(|(id, _)| !dropped.iter().any(|(d, _)| d == id)).collect::<Vec<_>>());
    dropped.sort_by_key(|(id, _)| *id);
    report.dropped = dropped;
    Ok(report)
}

/// Registers pre-computed observations of the scans `scan_ids`.
pub fn register_from_records(
    scan_ids: &[u32],
    records: &[DetectionRecord],
    opts: &RegistrationOptions,
) -> Result<RegistrationReport, PipelineError> {
    let mut watch = Stopwatch::new();
    let observations = observations_from_records(records, opts.marker_size);
    watch.lap("import");
    register_timed(scan_ids, &observations, opts, &mut watch)
}

/// Runs the graph stages on observations gathered elsewhere, for example
/// one detection pass shared by several modes.
pub fn register_observations(
    scan_ids: &[u32],
    observations: &[MarkerObservation],
    opts: &RegistrationOptions,
) -> Result<RegistrationReport, PipelineError> {
    register_timed(scan_ids, observations, opts, &mut Stopwatch::new())
}

/// Identity scan poses; each marker placed by its best-fitting observation.
pub fn identity_initialisation(g: &InitGraph, reachable: &InitialEstimate, canonical: &CanonicalCorners) -> InitialEstimate {
    let scan_poses: BTreeMap<u32, Pose> = reachable.scan_poses.keys().map(|&i| (i, Pose::identity())).collect();
    let mut marker_poses = BTreeMap::new();
    for &j in &g.marker_nodes {
        let best = g
            .edges
            .iter()
            .filter(|(k, _)| k.1 == j && scan_poses.contains_key(&k.0))
            .min_by(|a, b| a.1.weight.total_cmp(&b.1.weight).then(a.0.cmp(b.0)));
        if let Some((_, e)) = best {
            marker_poses.insert(j, e.pose);
        }
    }
    let corners = marker_poses
        .iter()
        .map(|(&j, p): (&u32, &Pose)| (j, canonical.corners.map(|c| p.apply(&c))))
        .collect();
    InitialEstimate {
        anchor: reachable.anchor,
        scan_poses,
        marker_poses,
        corners,
        path_weights: reachable.path_weights.clone(),
        unreachable: reachable.unreachable.clone(),
    }
}

fn register_timed(
    scan_ids: &[u32],
    observations: &[MarkerObservation],
    opts: &RegistrationOptions,
    watch: &mut Stopwatch,
) -> Result<RegistrationReport, PipelineError> {
    if observations.is_empty() {
        return Err(PipelineError::NoMarkers);
    }
    let canonical = CanonicalCorners::new(opts.marker_size);
    let graph = InitGraph::build(observations)?;
    let paths = shortest_paths(&graph);
    let propagated = propagate_poses(&graph, &paths, &canonical);
    watch.lap("init_graph");

    let mut dropped: Vec<(u32, DropReason)> = Vec::new();
    for &id in scan_ids {
        if !graph.scan_nodes.contains(&id) {
            dropped.push((id, DropReason::NoMarkers));
        } else if paths.unreachable.contains(&id) {
            dropped.push((id, DropReason::Disconnected));
        }
    }
    for (id, reason) in &dropped {
        warn!("scan {id} excluded: {reason}");
    }
    let used: Vec<MarkerObservation> = observations
        .iter()
        .filter(|o| propagated.scan_poses.contains_key(&o.scan_id))
        .cloned()
        .collect();

    let mut report = RegistrationReport {
        anchor: graph.anchor,
        mode: opts.mode,
        observations: used.clone(),
        dropped,
        ..Default::default()
    };

    let start = match opts.mode {
        Mode::NoSecondGraph => None,
        Mode::Full => Some(propagated.clone()),
        Mode::NoFirstGraph => Some(identity_initialisation(&graph, &propagated, &canonical)),
    };
    match start {
        None => {
            report.scan_poses = propagated.scan_poses.clone();
            report.marker_poses = propagated.marker_poses.clone();
            report.corners = propagated.corners.clone();
        }
        Some(init) => {
            let fg = build_graph(&used, &init, &opts.noise, &canonical)?;
            let summary = solve_lm(&fg.vars, &fg.factors, &opts.solver)?;
            info!(
                "optimised {} factors: cost {:e} -> {:e} ({:?})",
                fg.factors.len(),
                summary.initial_cost,
                summary.final_cost,
                summary.termination
            );
            report.initial_cost = Some(summary.initial_cost);
            report.final_cost = Some(summary.final_cost);
            report.solver_log = Some(summary.log_text());
            let v = &summary.vars;
            report.scan_poses = v.scan_poses.clone();
            report.marker_poses = v.marker_poses.clone();
            report.corners = v
                .marker_poses
                .keys()
                .map(|&j| (j, [0u8, 1, 2, 3].map(|s| v.corners[&(j, s)])))
                .collect();
            watch.lap("factor_graph");
        }
    }
    report.initial = Some(propagated);
    report.timings = watch.stages.clone();
    report.total_seconds = watch.total();
    Ok(report)
}

/// Cloud files in `dir` with the format's extension, sorted by name.
pub fn list_clouds(dir: &Path, format: CloudFormat) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(format.extension()))
        .filter(|p| !p.file_stem().is_some_and(|s| s.to_string_lossy().starts_with("merged")))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads the input directory, registers and writes outputs when an output
/// directory is configured. Scan ids are positions in name order.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RegistrationReport, PipelineError> {
    let opts = cfg.options()?;
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| PipelineError::Config("no input directory".into()))?;
    let format: CloudFormat = cfg.format.into();
    let files = list_clouds(input, format)?;
    if files.is_empty() {
        return Err(PipelineError::Config(format!(
            "no .{} files in {}",
            format.extension(),
            input.display()
        )));
    }
    let load_start = Instant::now();
    let clouds = files
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let (cloud, rep) = read_cloud(f, format, i as u32)?;
            if rep.dropped > 0 {
                warn!("{}: dropped {} non-finite rows", f.display(), rep.dropped);
            }
            Ok(cloud)
        })
        .collect::<Result<Vec<PointCloud>, CloudError>>()?;
    let load_seconds = load_start.elapsed().as_secs_f64();

    let mut report = match &cfg.detections {
        Some(path) => {
            let records = read_records(path)?;
            let ids: Vec<u32> = clouds.iter().map(|c| c.scan_id).collect();
            register_from_records(&ids, &records, &opts)?
        }
        None => register(&clouds, &opts)?,
    };
    report.timings.insert(0, ("load".to_string(), load_seconds));
    report.total_seconds += load_seconds;

    if let Some(out) = &cfg.output {
        let write_start = Instant::now();
        write_outputs(out, &clouds, &report, format)?;
        let secs = write_start.elapsed().as_secs_f64();
        report.timings.push(("write".to_string(), secs));
        report.total_seconds += secs;
        let report_path = out.join("report.txt");
        std::fs::write(&report_path, report.to_text()).map_err(|source| PipelineError::Io {
            path: report_path.display().to_string(),
            source,
        })?;
    }
    Ok(report)
}

/// Writes `poses.txt`, `markers.txt`, `detections.json` and the merged cloud.
pub fn write_outputs(
    dir: &Path,
    clouds: &[PointCloud],
    report: &RegistrationReport,
    format: CloudFormat,
) -> Result<(), PipelineError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| PipelineError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let poses = dir.join("poses.txt");
    std::fs::write(&poses, format_pose_file(&report.scan_poses)).map_err(io(&poses))?;
    let markers = dir.join("markers.txt");
    std::fs::write(&markers, format_pose_file(&report.marker_poses)).map_err(io(&markers))?;
    write_records(&dir.join("detections.json"), &report.records())?;
    let (kept, poses): (Vec<PointCloud>, Vec<Pose>) = clouds
        .iter()
        .filter_map(|c| report.scan_poses.get(&c.scan_id).map(|p| (c.clone(), *p)))
        .unzip();
    write_merged(&kept, &poses, &dir.join(format!("merged.{}", format.extension())), format)?;
    Ok(())
}
