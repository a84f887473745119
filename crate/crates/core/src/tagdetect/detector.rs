//! Binarization and square-tag detection on intensity images.
//!
//! Tags are dark-bordered squares: a ring of dark cells around a
//! `grid_n × grid_n` payload, surrounded by a bright quiet zone. Candidate
//! quads are the outer contours of dark connected components.
//!
//! Tag coordinates put `(0, 0)` at the top-left of the bordered grid and
//! `(N, N)` at the bottom-right, with `N = grid_n + 2`, as seen from the front.
//! Detected corners are reported in the marker order
//! `[(0, N), (N, N), (N, 0), (0, 0)]`, i.e. bottom-left first, then
//! counter-clockwise in a y-up view.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::dictionary::{bits_from_grid, TagDictionary};
use crate::projection::IntensityImage;

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    /// Threshold the image was produced with.
    pub threshold: f64,
}

impl BinaryImage {
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u] != 0
    }

    /// Out-of-image samples read as dark.
    pub fn sample(&self, u: f64, v: f64) -> bool {
        let (ur, vr) = (u.round(), v.round());
        if ur < 0.0 || vr < 0.0 || ur >= self.width as f64 || vr >= self.height as f64 {
            return false;
        }
        self.get(ur as usize, vr as usize)
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }
}

/// `1` where intensity exceeds `lambda`; empty pixels are `0`.
pub fn binarize(img: &IntensityImage, lambda: f64) -> BinaryImage {
    BinaryImage {
        width: img.width(),
        height: img.height(),
        data: img
            .pixels()
            .iter()
            .map(|p| p.is_some_and(|p| p.intensity > lambda) as u8)
            .collect(),
        threshold: lambda,
    }
}

/// Re-thresholds a binary image, treating set pixels as intensity 1.
pub fn binarize_binary(bin: &BinaryImage, lambda: f64) -> BinaryImage {
    BinaryImage {
        width: bin.width,
        height: bin.height,
        data: bin.data.iter().map(|&b| (b as f64 > lambda) as u8).collect(),
        threshold: lambda,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub id: u32,
    /// Subpixel `(u, v)` corners in marker order.
    pub corners: [(f64, f64); 4],
    pub decision_threshold: f64,
}

impl Detection2D {
    pub fn area(&self) -> f64 {
        polygon_area(&self.corners).abs()
    }
}

/// Signed shoelace area; positive for clockwise order on a rows-down raster.
pub fn polygon_area(q: &[(f64, f64); 4]) -> f64 {
    let mut s = 0.0;
    for k in 0..4 {
        let (a, b) = (q[k], q[(k + 1) % 4]);
        s += a.0 * b.1 - b.0 * a.1;
    }
    0.5 * s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Quads with any edge shorter than this are rejected.
    pub min_edge_px: f64,
    /// Border cells allowed to read bright.
    pub border_errors: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            min_edge_px: 8.0,
            border_errors: 2,
        }
    }
}

/// Plane projective map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Exact fit through four correspondences `src[k] -> dst[k]`.
    pub fn from_points(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for k in 0..4 {
            let (x, y) = src[k];
            let (u, v) = dst[k];
            let r = 2 * k;
            a.set_row(
                r,
                &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]),
            );
            a.set_row(
                r + 1,
                &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]),
            );
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a.lu().solve(&b)?;
        Some(Homography(Matrix3::new(
            h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
        )))
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    pub fn inverse(&self) -> Option<Self> {
        self.0.try_inverse().map(Homography)
    }
}

/// Tag-coordinate corners `(0,0), (N,0), (N,N), (0,N)`.
pub fn tag_square(grid_n: usize) -> [(f64, f64); 4] {
    let n = (grid_n + 2) as f64;
    [(0.0, 0.0), (n, 0.0), (n, n), (0.0, n)]
}

/// Maps image positions of `(0,0), (N,0), (N,N), (0,N)` to marker order.
pub fn marker_order(tag_corners: &[(f64, f64); 4]) -> [(f64, f64); 4] {
    [tag_corners[3], tag_corners[2], tag_corners[1], tag_corners[0]]
}

pub fn detect_tags(bin: &BinaryImage, dict: &TagDictionary) -> Vec<Detection2D> {
    detect_tags_with(bin, dict, &DetectorConfig::default())
}

pub fn detect_tags_with(
    bin: &BinaryImage,
    dict: &TagDictionary,
    cfg: &DetectorConfig,
) -> Vec<Detection2D> {
    let (w, h) = (bin.width, bin.height);
    let mut labels = vec![0u32; w * h];
    let mut next_label = 0u32;
    let mut stack = Vec::new();
    let mut members = Vec::new();
    let mut found: Vec<Detection2D> = Vec::new();

    for start in 0..w * h {
        if bin.data[start] != 0 || labels[start] != 0 {
            continue;
        }
        next_label += 1;
        let label = next_label;
        members.clear();
        stack.push(start);
        labels[start] = label;
        let (mut umin, mut umax, mut vmin, mut vmax) = (usize::MAX, 0, usize::MAX, 0);
        while let Some(idx) = stack.pop() {
            members.push(idx);
            let (u, v) = (idx % w, idx / w);
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
            let mut visit = |n: usize| {
                if bin.data[n] == 0 && labels[n] == 0 {
                    labels[n] = label;
                    stack.push(n);
                }
            };
            if u > 0 {
                visit(idx - 1);
            }
            if u + 1 < w {
                visit(idx + 1);
            }
            if v > 0 {
                visit(idx - w);
            }
            if v + 1 < h {
                visit(idx + w);
            }
        }
        if umin == 0 || vmin == 0 || umax + 1 == w || vmax + 1 == h {
            continue;
        }
        let min_extent = 0.7 * cfg.min_edge_px;
        if ((umax - umin + 1) as f64) < min_extent || ((vmax - vmin + 1) as f64) < min_extent {
            continue;
        }
        let bbox = (umin, vmin, umax, vmax);
        let cracks = outer_contour(w, &members, bbox);
        let Some(quad) = fit_quad(&cracks, cfg.min_edge_px) else {
            continue;
        };
        if let Some(det) = decode_quad(bin, dict, &quad, cfg) {
            found.push(det);
        }
    }

    // One detection per id: keep the larger quad.
    found.sort_by(|a, b| a.id.cmp(&b.id).then(b.area().total_cmp(&a.area())));
    found.dedup_by_key(|d| d.id);
    found
}

/// Boundary points of a component against the background reachable from
/// outside its bounding box, placed on the pixel cracks.
fn outer_contour(
    w: usize,
    members: &[usize],
    (umin, vmin, umax, vmax): (usize, usize, usize, usize),
) -> Vec<(f64, f64)> {
    let lw = umax - umin + 3;
    let lh = vmax - vmin + 3;
    // 0 = unknown, 1 = component, 2 = exterior
    let mut local = vec![0u8; lw * lh];
    for &idx in members {
        let (u, v) = (idx % w, idx / w);
        local[(v - vmin + 1) * lw + (u - umin + 1)] = 1;
    }
    let mut queue = VecDeque::new();
    for lu in 0..lw {
        for lv in [0, lh - 1] {
            local[lv * lw + lu] = 2;
            queue.push_back(lv * lw + lu);
        }
    }
    for lv in 1..lh - 1 {
        for lu in [0, lw - 1] {
            local[lv * lw + lu] = 2;
            queue.push_back(lv * lw + lu);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (lu, lv) = (i % lw, i / lw);
        let mut push = |j: usize| {
            if local[j] == 0 {
                local[j] = 2;
                queue.push_back(j);
            }
        };
        if lu > 0 {
            push(i - 1);
        }
        if lu + 1 < lw {
            push(i + 1);
        }
        if lv > 0 {
            push(i - lw);
        }
        if lv + 1 < lh {
            push(i + lw);
        }
    }
    let mut cracks = Vec::new();
    for &idx in members {
        let (u, v) = (idx % w, idx / w);
        let (lu, lv) = (u - umin + 1, v - vmin + 1);
        let li = lv * lw + lu;
        for (du, dv, j) in [
            (-0.5, 0.0, li - 1),
            (0.5, 0.0, li + 1),
            (0.0, -0.5, li - lw),
            (0.0, 0.5, li + lw),
        ] {
            if local[j] == 2 {
                cracks.push((u as f64 + du, v as f64 + dv));
            }
        }
    }
    cracks
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Distance from `p` to segment `a-b`, and the position of its projection
/// along the segment in pixels.
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt();
    let t = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len;
    let tc = t.clamp(0.0, len);
    let q = (a.0 + dx * tc / len, a.1 + dy * tc / len);
    (dist2(p, q).sqrt(), t)
}

fn is_convex(q: &[(f64, f64); 4]) -> bool {
    (0..4).all(|k| cross(q[k], q[(k + 1) % 4], q[(k + 2) % 4]) > 0.0)
}

/// Four-vertex simplification of an outer contour followed by least-squares
/// edge refinement. Returns corners in clockwise raster order.
fn fit_quad(points: &[(f64, f64)], min_edge: f64) -> Option<[(f64, f64); 4]> {
    if points.len() < 16 {
        return None;
    }
    let n = points.len() as f64;
    let c = (
        points.iter().map(|p| p.0).sum::<f64>() / n,
        points.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let farthest = |from: (f64, f64)| {
        points
            .iter()
            .copied()
            .max_by(|a, b| dist2(*a, from).total_cmp(&dist2(*b, from)))
            .unwrap()
    };
    let p0 = farthest(c);
    let p2 = farthest(p0);
    let diag2 = dist2(p0, p2);
    let p1 = points
        .iter()
        .copied()
        .max_by(|a, b| cross(p0, p2, *a).total_cmp(&cross(p0, p2, *b)))
        .unwrap();
    let p3 = points
        .iter()
        .copied()
        .min_by(|a, b| cross(p0, p2, *a).total_cmp(&cross(p0, p2, *b)))
        .unwrap();
    if cross(p0, p2, p1) < 0.1 * diag2 || -cross(p0, p2, p3) < 0.1 * diag2 {
        return None;
    }
    let mut quad = [p0, p1, p2, p3];
    if polygon_area(&quad) < 0.0 {
        quad = [p0, p3, p2, p1];
    }
    if !is_convex(&quad) {
        return None;
    }
    let lens: Vec<f64> = (0..4).map(|k| dist2(quad[k], quad[(k + 1) % 4]).sqrt()).collect();
    if lens.iter().any(|&l| l < min_edge) {
        return None;
    }
    let mean_edge = lens.iter().sum::<f64>() / 4.0;
    let tol = (0.06 * mean_edge).max(1.5);

    let mut edge_points: [Vec<(f64, f64)>; 4] = Default::default();
    for &p in points {
        let (k, d, t) = (0..4)
            .map(|k| {
                let (d, t) = segment_distance(p, quad[k], quad[(k + 1) % 4]);
                (k, d, t)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if d > tol {
            return None;
        }
        let margin = (0.08 * lens[k]).max(1.0);
        if t > margin && t < lens[k] - margin {
            edge_points[k].push(p);
        }
    }

    let mut lines = Vec::with_capacity(4);
    for pts in &edge_points {
        if pts.len() < 4 {
            return Some(quad);
        }
        lines.push(fit_line(pts)?);
    }
    let mut refined = quad;
    for k in 0..4 {
        // Corner k joins edge k-1 and edge k.
        let Some(x) = intersect(lines[(k + 3) % 4], lines[k]) else {
            return Some(quad);
        };
        if dist2(x, quad[k]) > 4.0f64.max(tol * tol) {
            return Some(quad);
        }
        refined[k] = x;
    }
    is_convex(&refined).then_some(refined)
}

type Line = ((f64, f64), (f64, f64));

/// Total least squares: centroid and unit direction.
fn fit_line(pts: &[(f64, f64)]) -> Option<Line> {
    let n = pts.len() as f64;
    let c = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let mut m = Matrix2::zeros();
    for p in pts {
        let d = nalgebra::Vector2::new(p.0 - c.0, p.1 - c.1);
        m += d * d.transpose();
    }
    let eig = m.symmetric_eigen();
    let k = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
    let dir = eig.eigenvectors.column(k);
    if !dir.x.is_finite() {
        return None;
    }
    Some((c, (dir.x, dir.y)))
}

fn intersect(a: Line, b: Line) -> Option<(f64, f64)> {
    let ((p, d), (q, e)) = (a, b);
    let den = d.0 * e.1 - d.1 * e.0;
    if den.abs() < 1e-9 {
        return None;
    }
    let t = ((q.0 - p.0) * e.1 - (q.1 - p.1) * e.0) / den;
    Some((p.0 + t * d.0, p.1 + t * d.1))
}

const SAMPLE_OFFSETS: [f64; 3] = [0.3, 0.5, 0.7];

fn sample_cell(bin: &BinaryImage, hom: &Homography, cx: usize, cy: usize) -> bool {
    let mut bright = 0;
    for a in SAMPLE_OFFSETS {
        for b in SAMPLE_OFFSETS {
            let (u, v) = hom.map(cx as f64 + a, cy as f64 + b);
            if bin.sample(u, v) {
                bright += 1;
            }
        }
    }
    bright * 2 > SAMPLE_OFFSETS.len() * SAMPLE_OFFSETS.len()
}

fn decode_quad(
    bin: &BinaryImage,
    dict: &TagDictionary,
    quad: &[(f64, f64); 4],
    cfg: &DetectorConfig,
) -> Option<Detection2D> {
    let n = dict.grid_n;
    let big_n = n + 2;
    let square = tag_square(n);
    let hom0 = Homography::from_points(&square, quad)?;

    let mut border_bad = 0;
    for cy in 0..big_n {
        for cx in 0..big_n {
            let on_border = cx == 0 || cy == 0 || cx == big_n - 1 || cy == big_n - 1;
            if on_border && sample_cell(bin, &hom0, cx, cy) {
                border_bad += 1;
            }
        }
    }
    if border_bad > cfg.border_errors {
        return None;
    }

    let mut best: Option<(u32, u32, usize)> = None;
    for shift in 0..4 {
        let assigned = [
            quad[shift],
            quad[(shift + 1) % 4],
            quad[(shift + 2) % 4],
            quad[(shift + 3) % 4],
        ];
        let hom = Homography::from_points(&square, &assigned)?;
        let mut grid = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                grid[r * n + c] = sample_cell(bin, &hom, c + 1, r + 1);
            }
        }
        let (id, dist) = dict.nearest(bits_from_grid(&grid, n))?;
        if best.is_none_or(|(_, d, _)| dist < d) {
            best = Some((id, dist, shift));
        }
    }
    let (id, dist, shift) = best?;
    if dist > dict.max_hamming {
        return None;
    }
    let tag_corners = [
        quad[shift],
        quad[(shift + 1) % 4],
        quad[(shift + 2) % 4],
        quad[(shift + 3) % 4],
    ];
    Some(Detection2D {
        id,
        corners: marker_order(&tag_corners),
        decision_threshold: bin.threshold,
    })
}

/// Re-fits the corners of `det` on a window thresholded halfway between the
/// dark and bright levels around the tag. The search keeps the first
/// threshold at which a tag decodes, which can sit close to the dark level
/// and leave a ragged contour under noise. Returns `det` unchanged when the
/// window does not yield the same id near the same place.
pub fn refine_corners(
    img: &IntensityImage,
    dict: &TagDictionary,
    det: &Detection2D,
    cfg: &DetectorConfig,
) -> Detection2D {
    let edge = (0..4)
        .map(|k| dist2(det.corners[k], det.corners[(k + 1) % 4]).sqrt())
        .fold(0.0, f64::max);
    let pad = 0.3 * edge + 3.0;
    let (umin, umax, vmin, vmax) = det.corners.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(u, v)| (a.min(u), b.max(u), c.min(v), d.max(v)),
    );
    let u0 = (umin - pad).floor().max(0.0) as usize;
    let v0 = (vmin - pad).floor().max(0.0) as usize;
    let u1 = ((umax + pad).ceil() as usize).min(img.width().saturating_sub(1));
    let v1 = ((vmax + pad).ceil() as usize).min(img.height().saturating_sub(1));
    if u1 <= u0 || v1 <= v0 {
        return det.clone();
    }
    let mut levels: Vec<f64> = (v0..=v1)
        .flat_map(|v| (u0..=u1).map(move |u| (u, v)))
        .filter_map(|(u, v)| img.get(u, v).map(|p| p.intensity))
        .collect();
    if levels.len() < 16 {
        return det.clone();
    }
    levels.sort_by(f64::total_cmp);
    let lo = levels[levels.len() / 10];
    let hi = levels[levels.len() * 9 / 10];
    if !(hi > lo) {
        return det.clone();
    }
    let mid = 0.5 * (lo + hi);
    let (w, h) = (u1 - u0 + 1, v1 - v0 + 1);
    let mut data = Vec::with_capacity(w * h);
    for v in v0..=v1 {
        for u in u0..=u1 {
            data.push(img.get(u, v).is_some_and(|p| p.intensity > mid) as u8);
        }
    }
    let window = BinaryImage {
        width: w,
        height: h,
        data,
        threshold: mid,
    };
    let tol = (0.1 * edge).max(1.5);
    detect_tags_with(&window, dict, cfg)
        .into_iter()
        .filter(|d| d.id == det.id)
        .map(|d| d.corners.map(|(u, v)| (u + u0 as f64, v + v0 as f64)))
        .find(|c| (0..4).all(|k| dist2(c[k], det.corners[k]).sqrt() <= tol))
        .map(|corners| Detection2D {
            id: det.id,
            corners,
            decision_threshold: det.decision_threshold,
        })
        .unwrap_or_else(|| det.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{IntensityImage, Pixel, ProjectionParams};
    use crate::tagdetect::render::{render_tags, TagPlacement, TagStyle};

    fn canvas(w: usize, h: usize) -> ProjectionParams {
        ProjectionParams {
            alpha_a: 0.001,
            alpha_i: 0.001,
            u_o: 0,
            v_o: 0,
            width: w,
            height: h,
        }
    }

    #[test]
    fn binarize_examples() {
        let mut img = IntensityImage::empty(canvas(4, 1));
        let bin = binarize(&img, 0.0);
        assert_eq!(bin.count_set(), 0);
        for (u, i) in [(0, 10.0), (1, 200.0), (2, 200.0)] {
            img.set(
                u,
                0,
                Some(Pixel {
                    intensity: i,
                    range: 1.0,
                    source_index: u,
                }),
            );
        }
        let bin = binarize(&img, 100.0);
        assert_eq!(bin.data, vec![0, 1, 1, 0]);
        assert_eq!(bin.threshold, 100.0);
        let twice = binarize_binary(&bin, 1.0);
        assert_eq!(twice.count_set(), 0);
    }

    #[test]
    fn homography_round_trip() {
        let src = tag_square(4);
        let dst = [(10.0, 12.0), (80.0, 5.0), (95.0, 70.0), (3.0, 88.0)];
        let h = Homography::from_points(&src, &dst).unwrap();
        for k in 0..4 {
            let (u, v) = h.map(src[k].0, src[k].1);
            assert!((u - dst[k].0).abs() < 1e-9 && (v - dst[k].1).abs() < 1e-9);
        }
        let inv = h.inverse().unwrap();
        let (x, y) = inv.map(dst[2].0, dst[2].1);
        assert!((x - 6.0).abs() < 1e-9 && (y - 6.0).abs() < 1e-9);
    }

    #[test]
    fn blank_image_has_no_detections() {
        let dict = TagDictionary::default16();
        let img = IntensityImage::empty(canvas(64, 64));
        assert!(detect_tags(&binarize(&img, 0.0), &dict).is_empty());
    }

    fn fronto(id: u32, x0: f64, y0: f64, cell: f64) -> TagPlacement {
        let s = 6.0 * cell;
        TagPlacement {
            id,
            tag_corners: [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)],
            style: TagStyle::default(),
        }
    }

    #[test]
    fn fronto_parallel_tag_decodes_with_accurate_corners() {
        let dict = TagDictionary::default16();
        let placement = fronto(3, 39.5, 29.5, 20.0);
        let img = render_tags(&dict, std::slice::from_ref(&placement), 200, 190, 4);
        let dets = detect_tags(&binarize(&img, 100.0), &dict);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].id, 3);
        let truth = marker_order(&placement.tag_corners);
        for (c, t) in dets[0].corners.iter().zip(&truth) {
            assert!(dist2(*c, *t).sqrt() <= 0.5, "{c:?} vs {t:?}");
        }
    }

    #[test]
    fn two_tags_in_one_image() {
        let dict = TagDictionary::default16();
        let a = fronto(1, 20.5, 20.5, 12.0);
        let b = fronto(7, 140.5, 60.5, 12.0);
        let img = render_tags(&dict, &[a, b], 260, 160, 3);
        let ids: Vec<u32> = detect_tags(&binarize(&img, 100.0), &dict)
            .iter()
            .map(|d| d.id)
            .collect();
        assert_eq!(ids, vec![1, 7]);
    }

    #[test]
    fn duplicate_ids_keep_larger_quad() {
        let dict = TagDictionary::default16();
        let small = fronto(5, 20.5, 20.5, 8.0);
        let large = fronto(5, 120.5, 20.5, 14.0);
        let img = render_tags(&dict, &[small, large.clone()], 240, 140, 3);
        let dets = detect_tags(&binarize(&img, 100.0), &dict);
        assert_eq!(dets.len(), 1);
        let truth = marker_order(&large.tag_corners);
        assert!(dist2(dets[0].corners[0], truth[0]).sqrt() < 1.0);
    }

    #[test]
    fn tiny_tags_are_rejected() {
        let dict = TagDictionary::default16();
        let tiny = fronto(2, 10.5, 10.5, 1.0);
        let img = render_tags(&dict, &[tiny], 40, 40, 4);
        assert!(detect_tags(&binarize(&img, 100.0), &dict).is_empty());
    }

    fn add_noise(img: &IntensityImage, sigma: f64, seed: u64) -> IntensityImage {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut out = img.clone();
        for v in 0..img.height() {
            for u in 0..img.width() {
                let mut px = *img.get(u, v).unwrap();
                px.intensity += normal.sample(&mut rng);
                out.set(u, v, Some(px));
            }
        }
        out
    }

    fn max_corner_error(det: &Detection2D, truth: &[(f64, f64); 4]) -> f64 {
        det.corners
            .iter()
            .zip(truth)
            .map(|(c, t)| dist2(*c, *t).sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn refinement_recovers_corners_from_a_low_threshold_detection() {
        let dict = TagDictionary::default16();
        let mut placement = fronto(6, 30.3, 25.8, 11.0);
        placement.tag_corners[1].1 += 4.0;
        placement.tag_corners[2].0 -= 3.0;
        let truth = marker_order(&placement.tag_corners);
        let clean = render_tags(&dict, &[placement], 140, 120, 1);
        let img = add_noise(&clean, 5.0, 11);
        let cfg = DetectorConfig::default();
        let coarse = detect_tags_with(&binarize(&img, 29.0), &dict, &cfg);
        assert_eq!(coarse.len(), 1);
        let refined = refine_corners(&img, &dict, &coarse[0], &cfg);
        assert_eq!(refined.id, 6);
        assert_eq!(refined.decision_threshold, 29.0);
        let before = max_corner_error(&coarse[0], &truth);
        let after = max_corner_error(&refined, &truth);
        assert!(after < 0.5, "refined error {after}, before {before}");
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn refinement_keeps_detection_when_window_disagrees() {
        let dict = TagDictionary::default16();
        let img = IntensityImage::empty(canvas(64, 64));
        let det = Detection2D {
            id: 2,
            corners: [(10.0, 50.0), (50.0, 50.0), (50.0, 10.0), (10.0, 10.0)],
            decision_threshold: 7.0,
        };
        assert_eq!(refine_corners(&img, &dict, &det, &DetectorConfig::default()), det);
    }

    #[test]
    fn oblique_tag_decodes() {
        // A tag seen 40 degrees off its normal is foreshortened along one axis.
        let dict = TagDictionary::default16();
        let s = 72.0;
        let k = 40f64.to_radians().cos();
        let (x0, y0) = (30.5, 20.5);
        let placement = TagPlacement {
            id: 9,
            tag_corners: [(x0, y0), (x0 + s * k, y0 + 3.0), (x0 + s * k, y0 + s + 6.0), (x0, y0 + s)],
            style: TagStyle::default(),
        };
        let truth = marker_order(&placement.tag_corners);
        let img = render_tags(&dict, &[placement], 130, 120, 4);
        let dets = detect_tags(&binarize(&img, 100.0), &dict);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].id, 9);
        assert!(max_corner_error(&dets[0], &truth) <= 1.0);
    }
}
