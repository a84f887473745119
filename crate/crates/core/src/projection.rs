//! Spherical projection of a scan into an intensity image with a per-pixel
//! range buffer, and the reverse lift from image coordinates back to 3D.
//!
//! Pixel `(u, v)` has its center on the ray with azimuth `(u - u_o) * alpha_a`
//! and inclination `(v - v_o) * alpha_i`. Row index `v` grows with
//! inclination, column index `u` grows with azimuth.

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::cloud_io::PointCloud;
use crate::geometry::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("point is at the sensor origin")]
    OriginPoint,
    #[error("point lies on the vertical axis, azimuth undefined")]
    Pole,
    #[error("no point of the cloud falls inside the image")]
    AllPointsOutOfFrame,
    #[error("no range sample supports image location ({u:.2}, {v:.2})")]
    NoRangeSupport { u: f64, v: f64 },
    #[error("invalid projection parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectionParams {
    /// Azimuth resolution, radians per pixel.
    pub alpha_a: f64,
    /// Inclination resolution, radians per pixel.
    pub alpha_i: f64,
    pub u_o: usize,
    pub v_o: usize,
    pub width: usize,
    pub height: usize,
}

impl ProjectionParams {
    /// Image centered on the +x axis covering `fov_a × fov_i` radians.
    pub fn centered(alpha_a: f64, alpha_i: f64, fov_a: f64, fov_i: f64) -> Self {
        let half_w = (0.5 * fov_a / alpha_a).round() as usize;
        let half_h = (0.5 * fov_i / alpha_i).round() as usize;
        ProjectionParams {
            alpha_a,
            alpha_i,
            u_o: half_w,
            v_o: half_h,
            width: 2 * half_w + 1,
            height: 2 * half_h + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::InvalidParams(m.to_string()));
        if !(self.alpha_a > 0.0 && self.alpha_i > 0.0) {
            return bad("angular resolutions must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image must be non-empty");
        }
        if self.u_o >= self.width || self.v_o >= self.height {
            return bad("offsets must lie inside the image");
        }
        Ok(())
    }

    /// Continuous image coordinates of a direction, before rounding.
    pub fn angles_to_image(&self, theta: f64, phi: f64) -> (f64, f64) {
        (
            theta / self.alpha_a + self.u_o as f64,
            phi / self.alpha_i + self.v_o as f64,
        )
    }

    pub fn image_to_angles(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.u_o as f64) * self.alpha_a,
            (v - self.v_o as f64) * self.alpha_i,
        )
    }

    /// Unit direction of the ray through `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let (theta, phi) = self.image_to_angles(u, v);
        direction(theta, phi)
    }

    /// Rounds half away from zero, then offsets.
    pub fn pixel_of(&self, theta: f64, phi: f64) -> (i64, i64) {
        (
            (theta / self.alpha_a).round() as i64 + self.u_o as i64,
            (phi / self.alpha_i).round() as i64 + self.v_o as i64,
        )
    }
}

pub fn direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(cp * ct, cp * st, sp)
}

/// `(theta, phi, r)` with `theta = atan2(y, x)` and `phi = atan2(z, hypot(x, y))`.
pub fn to_spherical(p: &Vec3) -> Result<(f64, f64, f64), ProjectionError> {
    let r = p.norm();
    if r == 0.0 {
        return Err(ProjectionError::OriginPoint);
    }
    let rho = p.x.hypot(p.y);
    if rho == 0.0 {
        return Err(ProjectionError::Pole);
    }
    Ok((p.y.atan2(p.x), p.z.atan2(rho), r))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub intensity: f64,
    /// Meters, always > 0.
    pub range: f64,
    pub source_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    pub params: ProjectionParams,
    pixels: Vec<Option<Pixel>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub projected: usize,
    pub out_of_frame: usize,
    pub near_pole: usize,
    /// Points hidden behind a nearer point on the same pixel.
    pub occluded: usize,
}

impl IntensityImage {
    pub fn empty(params: ProjectionParams) -> Self {
        IntensityImage {
            params,
            pixels: vec![None; params.width * params.height],
        }
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn get(&self, u: usize, v: usize) -> Option<&Pixel> {
        if u >= self.params.width || v >= self.params.height {
            return None;
        }
        self.pixels[v * self.params.width + u].as_ref()
    }

    pub fn set(&mut self, u: usize, v: usize, px: Option<Pixel>) {
        assert!(px.is_none_or(|p| p.range > 0.0), "stored ranges must be positive");
        let w = self.params.width;
        self.pixels[v * w + u] = px;
    }

    pub fn pixels(&self) -> &[Option<Pixel>] {
        &self.pixels
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Min-max rescale of valid intensities onto `[0, 255]`.
    pub fn normalized(&self) -> IntensityImage {
        let (lo, hi) = self
            .pixels
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.intensity), hi.max(p.intensity))
            });
        let span = hi - lo;
        let pixels = self
            .pixels
            .iter()
            .map(|p| {
                p.map(|mut p| {
                    p.intensity = if span > 0.0 {
                        255.0 * (p.intensity - lo) / span
                    } else {
                        0.0
                    };
                    p
                })
            })
            .collect();
        IntensityImage {
            params: self.params,
            pixels,
        }
    }

    /// ASCII PGM (P2) of the intensity channel; empty pixels are 0.
    pub fn to_pgm(&self) -> String {
        let max = self
            .pixels
            .iter()
            .flatten()
            .map(|p| p.intensity)
            .fold(0.0, f64::max)
            .max(1.0);
        let mut out = format!("P2\n{} {}\n255\n", self.width(), self.height());
        for v in 0..self.height() {
            let row: Vec<String> = (0..self.width())
                .map(|u| {
                    let val = self.get(u, v).map_or(0.0, |p| p.intensity);
                    ((255.0 * val / max).round() as u32).min(255).to_string()
                })
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

pub fn project(
    cloud: &PointCloud,
    params: &ProjectionParams,
) -> Result<(IntensityImage, ProjectionStats), ProjectionError> {
    params.validate()?;
    let mut img = IntensityImage::empty(*params);
    let mut stats = ProjectionStats::default();
    let pole_limit = std::f64::consts::FRAC_PI_2 - 2.0 * params.alpha_i;
    for (index, point) in cloud.points.iter().enumerate() {
        let (theta, phi, r) = match to_spherical(&point.position) {
            Ok(s) => s,
            Err(ProjectionError::Pole) => {
                stats.near_pole += 1;
                continue;
            }
            Err(_) => {
                stats.out_of_frame += 1;
                continue;
            }
        };
        if phi.abs() >= pole_limit {
            stats.near_pole += 1;
            continue;
        }
        let (u, v) = params.pixel_of(theta, phi);
        if u < 0 || v < 0 || u >= params.width as i64 || v >= params.height as i64 {
            stats.out_of_frame += 1;
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        let candidate = Pixel {
            intensity: point.intensity,
            range: r,
            source_index: index,
        };
        match img.get(u, v) {
            // Ties keep the earlier point.
            Some(existing) if existing.range <= r => stats.occluded += 1,
            Some(_) => {
                stats.occluded += 1;
                img.set(u, v, Some(candidate));
            }
            None => {
                stats.projected += 1;
                img.set(u, v, Some(candidate));
            }
        }
    }
    if stats.projected == 0 {
        return Err(ProjectionError::AllPointsOutOfFrame);
    }
    Ok((img, stats))
}

/// Point on the ray through `(u, v)` at a bilinearly interpolated range.
///
/// The support window is the 2×2 block of pixel centers around `(u, v)`;
/// weights of empty pixels are dropped and the rest renormalized.
pub fn lift_pixel(img: &IntensityImage, u: f64, v: f64) -> Result<Vec3, ProjectionError> {
    let none = ProjectionError::NoRangeSupport { u, v };
    if !(u.is_finite() && v.is_finite()) {
        return Err(none);
    }
    let (u0, v0) = (u.floor(), v.floor());
    let mut weight_sum = 0.0;
    let mut range_sum = 0.0;
    let mut nearest: Option<(f64, f64)> = None;
    for (du, dv) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let (pu, pv) = (u0 + du, v0 + dv);
        if pu < 0.0 || pv < 0.0 {
            continue;
        }
        let Some(px) = img.get(pu as usize, pv as usize) else {
            continue;
        };
        let w = (1.0 - (u - pu).abs()) * (1.0 - (v - pv).abs());
        weight_sum += w;
        range_sum += w * px.range;
        let d2 = (u - pu).powi(2) + (v - pv).powi(2);
        if nearest.is_none_or(|(best, _)| d2 < best) {
            nearest = Some((d2, px.range));
        }
    }
    let range = if weight_sum > 1e-12 {
        range_sum / weight_sum
    } else {
        nearest.ok_or(none)?.1
    };
    Ok(img.params.ray(u, v) * range)
}

/// Least-squares plane `(centroid, unit normal)`; `None` for fewer than three
/// points or a degenerate (collinear) set.
pub fn fit_plane(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // The two in-plane directions must carry real spread.
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(1e-300) {
        return None;
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    Some((centroid, normal))
}

fn inside_convex(poly: &[(f64, f64); 4], p: (f64, f64)) -> bool {
    let mut sign = 0.0;
    for k in 0..4 {
        let a = poly[k];
        let b = poly[(k + 1) % 4];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

/// Minimum number of range samples inside a quad for the plane fit.
pub const MIN_PLANE_SUPPORT: usize = 12;

/// Lifts the four corners of an image quad by intersecting each corner ray
/// with the plane fitted to the cloud points imaged inside the quad.
pub fn lift_quad_on_plane(
    img: &IntensityImage,
    cloud: &PointCloud,
    quad: &[(f64, f64); 4],
) -> Result<[Vec3; 4], ProjectionError> {
    let (umin, umax, vmin, vmax) = quad.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(u, v)| (a.min(u), b.max(u), c.min(v), d.max(v)),
    );
    let center = (
        quad.iter().map(|q| q.0).sum::<f64>() / 4.0,
        quad.iter().map(|q| q.1).sum::<f64>() / 4.0,
    );
    let no_support = ProjectionError::NoRangeSupport {
        u: center.0,
        v: center.1,
    };
    if !(umin.is_finite() && vmin.is_finite()) {
        return Err(no_support);
    }
    let mut support = Vec::new();
    let u_lo = umin.ceil().max(0.0) as usize;
    let v_lo = vmin.ceil().max(0.0) as usize;
    let u_hi = (umax.floor().max(-1.0) as i64).min(img.width() as i64 - 1);
    let v_hi = (vmax.floor().max(-1.0) as i64).min(img.height() as i64 - 1);
    for v in v_lo as i64..=v_hi {
        for u in u_lo as i64..=u_hi {
            if !inside_convex(quad, (u as f64, v as f64)) {
                continue;
            }
            if let Some(px) = img.get(u as usize, v as usize) {
                if let Some(p) = cloud.points.get(px.source_index) {
                    support.push(p.position);
                }
            }
        }
    }
    if support.len() < MIN_PLANE_SUPPORT {
        return Err(no_support);
    }
    let (centroid, normal) = fit_plane(&support).ok_or(no_support.clone())?;
    let mut out = [Vec3::zeros(); 4];
    for (slot, &(u, v)) in out.iter_mut().zip(quad) {
        let d = img.params.ray(u, v);
        let denom = normal.dot(&d);
        if denom.abs() < 1e-6 {
            return Err(ProjectionError::NoRangeSupport { u, v });
        }
        let t = normal.dot(&centroid) / denom;
        if t <= 0.0 {
            return Err(ProjectionError::NoRangeSupport { u, v });
        }
        *slot = d * t;
    }
    Ok(out)
}
