//! Point-cloud model and the two supported text formats: PCD ASCII v0.7
//! (`FIELDS x y z intensity`) and whitespace-separated `x y z intensity` rows.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::geometry::{Pose, Vec3};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("{path}: line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}: no valid points")]
    EmptyCloud(String),
    #[error("{0} clouds but {1} poses")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub position: Vec3,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Point {
            position: Vec3::new(x, y, z),
            intensity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub scan_id: u32,
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(scan_id: u32, points: Vec<Point>) -> Self {
        PointCloud { scan_id, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            scan_id: self.scan_id,
            points: self
                .points
                .iter()
                .map(|p| Point {
                    position: pose.apply(&p.position),
                    intensity: p.intensity,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    PcdAscii,
    XyziCsv,
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::PcdAscii => "pcd",
            CloudFormat::XyziCsv => "csv",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "pcd" => Some(CloudFormat::PcdAscii),
            "csv" | "txt" | "xyz" | "xyzi" => Some(CloudFormat::XyziCsv),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Rows with a non-finite coordinate or intensity.
    pub dropped: usize,
    /// Rows whose negative intensity was clamped to zero.
    pub clamped: usize,
}

pub fn read_cloud(
    path: &Path,
    format: CloudFormat,
    scan_id: u32,
) -> Result<(PointCloud, ParseReport), CloudError> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    parse_cloud(&text, format, scan_id, &name)
}

/// Parses an in-memory cloud; `name` only labels errors.
pub fn parse_cloud(
    text: &str,
    format: CloudFormat,
    scan_id: u32,
    name: &str,
) -> Result<(PointCloud, ParseReport), CloudError> {
    let mut report = ParseReport::default();
    let points = match format {
        CloudFormat::PcdAscii => parse_pcd(text, name, &mut report)?,
        CloudFormat::XyziCsv => parse_csv(text, name, &mut report)?,
    };
    if report.clamped > 0 {
        warn!("{name}: clamped {} negative intensities to 0", report.clamped);
    }
    if points.is_empty() {
        return Err(CloudError::EmptyCloud(name.to_string()));
    }
    Ok((PointCloud::new(scan_id, points), report))
}

fn format_err(name: &str, line: usize, msg: impl Into<String>) -> CloudError {
    CloudError::Format {
        path: name.to_string(),
        line,
        msg: msg.into(),
    }
}

fn push_row(values: [f64; 4], out: &mut Vec<Point>, report: &mut ParseReport) {
    if values.iter().any(|v| !v.is_finite()) {
        report.dropped += 1;
        return;
    }
    let mut intensity = values[3];
    if intensity < 0.0 {
        intensity = 0.0;
        report.clamped += 1;
    }
    out.push(Point::new(values[0], values[1], values[2], intensity));
}

fn parse_number(tok: &str, name: &str, line: usize) -> Result<f64, CloudError> {
    tok.parse::<f64>()
        .map_err(|_| format_err(name, line, format!("not a number: {tok:?}")))
}

fn parse_csv(text: &str, name: &str, report: &mut ParseReport) -> Result<Vec<Point>, CloudError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() != 4 {
            return Err(format_err(
                name,
                line_no,
                format!("expected 4 columns, got {}", toks.len()),
            ));
        }
        let mut values = [0.0; 4];
        for (v, tok) in values.iter_mut().zip(&toks) {
            *v = parse_number(tok, name, line_no)?;
        }
        push_row(values, &mut out, report);
    }
    Ok(out)
}

fn parse_pcd(text: &str, name: &str, report: &mut ParseReport) -> Result<Vec<Point>, CloudError> {
    let mut fields: Option<Vec<String>> = None;
    let mut declared_points: Option<usize> = None;
    let mut lines = text.lines().enumerate();
    let mut data_seen = false;

    for (idx, raw) in lines.by_ref() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or("").to_ascii_uppercase();
        let rest: Vec<&str> = toks.collect();
        match key.as_str() {
            "VERSION" | "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            "COUNT" => {
                if rest.iter().any(|c| *c != "1") {
                    return Err(format_err(name, line_no, "only COUNT 1 fields are supported"));
                }
            }
            "FIELDS" => fields = Some(rest.iter().map(|s| s.to_ascii_lowercase()).collect()),
            "POINTS" => {
                let n = rest
                    .first()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| format_err(name, line_no, "bad POINTS value"))?;
                declared_points = Some(n);
            }
            "DATA" => {
                if rest.first().map(|s| s.to_ascii_lowercase()) != Some("ascii".into()) {
                    return Err(format_err(name, line_no, "only DATA ascii is supported"));
                }
                data_seen = true;
                break;
            }
            other => return Err(format_err(name, line_no, format!("unknown header key {other}"))),
        }
    }
    if !data_seen {
        return Err(format_err(name, 0, "missing DATA line"));
    }
    let fields = fields.ok_or_else(|| format_err(name, 0, "missing FIELDS line"))?;
    let column = |f: &str| fields.iter().position(|x| x == f);
    let cols = match (column("x"), column("y"), column("z"), column("intensity")) {
        (Some(x), Some(y), Some(z), Some(i)) => [x, y, z, i],
        _ => return Err(format_err(name, 0, "FIELDS must contain x y z intensity")),
    };

    let mut out = Vec::new();
    let mut rows = 0usize;
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != fields.len() {
            return Err(format_err(
                name,
                idx + 1,
                format!("expected {} values, got {}", fields.len(), toks.len()),
            ));
        }
        let mut values = [0.0; 4];
        for (v, &c) in values.iter_mut().zip(&cols) {
            *v = parse_number(toks[c], name, idx + 1)?;
        }
        push_row(values, &mut out, report);
        rows += 1;
    }
    if let Some(n) = declared_points {
        if n != rows {
            return Err(format_err(name, 0, format!("POINTS {n} but {rows} data rows")));
        }
    }
    Ok(out)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<(), CloudError> {
    write_points(cloud.points.iter().copied(), cloud.len(), path, format)
}

/// Transforms every cloud by its pose and writes one combined file.
pub fn write_merged(
    clouds: &[PointCloud],
    poses: &[Pose],
    path: &Path,
    format: CloudFormat,
) -> Result<(), CloudError> {
    if clouds.len() != poses.len() {
        return Err(CloudError::LengthMismatch(clouds.len(), poses.len()));
    }
    let total = clouds.iter().map(PointCloud::len).sum();
    let points = clouds.iter().zip(poses).flat_map(|(c, pose)| {
        c.points.iter().map(move |p| Point {
            position: pose.apply(&p.position),
            intensity: p.intensity,
        })
    });
    write_points(points, total, path, format)
}

fn write_points(
    points: impl Iterator<Item = Point>,
    count: usize,
    path: &Path,
    format: CloudFormat,
) -> Result<(), CloudError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    if format == CloudFormat::PcdAscii {
        write!(
            w,
            "VERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n\
             WIDTH {count}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {count}\nDATA ascii\n"
        )?;
    }
    let mut line = String::with_capacity(96);
    for p in points {
        line.clear();
        let v = &p.position;
        // Shortest round-trip formatting keeps the text lossless.
        let _ = writeln!(line, "{} {} {} {}", v.x, v.y, v.z, p.intensity);
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotation, Vec3};

    #[test]
    fn csv_basic() {
        let (c, r) = parse_cloud("0 0 1 10\n1 0 1 20\n0 1 1 30\n", CloudFormat::XyziCsv, 0, "t")
            .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(r, ParseReport::default());
        assert_eq!(c.points[2], Point::new(0.0, 1.0, 1.0, 30.0));
    }

    #[test]
    fn csv_comments_and_nan() {
        let text = "# header\n1 2 3 4 # trailing\n\nnan 0 0 5\n";
        let (c, r) = parse_cloud(text, CloudFormat::XyziCsv, 3, "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.scan_id, 3);
        assert_eq!(r.dropped, 1);
    }

    #[test]
    fn csv_negative_intensity_clamped() {
        let (c, r) = parse_cloud("1 2 3 -4\n", CloudFormat::XyziCsv, 0, "t").unwrap();
        assert_eq!(c.points[0].intensity, 0.0);
        assert_eq!(r.clamped, 1);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_cloud("1 2 3\n", CloudFormat::XyziCsv, 0, "t"),
            Err(CloudError::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_cloud("1 2 x 4\n", CloudFormat::XyziCsv, 0, "t"),
            Err(CloudError::Format { .. })
        ));
        assert!(matches!(
            parse_cloud("nan 1 1 1\n", CloudFormat::XyziCsv, 0, "t"),
            Err(CloudError::EmptyCloud(_))
        ));
    }

    const PCD: &str = "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\n\
COUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA ascii\n1 2 3 4\n5e-1 6 7 8\n";

    #[test]
    fn pcd_basic() {
        let (c, _) = parse_cloud(PCD, CloudFormat::PcdAscii, 0, "t").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1], Point::new(0.5, 6.0, 7.0, 8.0));
    }

    #[test]
    fn pcd_field_order_and_errors() {
        let text = "FIELDS intensity z y x\nPOINTS 1\nDATA ascii\n9 3 2 1\n";
        let (c, _) = parse_cloud(text, CloudFormat::PcdAscii, 0, "t").unwrap();
        assert_eq!(c.points[0], Point::new(1.0, 2.0, 3.0, 9.0));

        let binary = PCD.replace("DATA ascii", "DATA binary");
        assert!(parse_cloud(&binary, CloudFormat::PcdAscii, 0, "t").is_err());
        let short = PCD.replace("POINTS 2", "POINTS 3");
        assert!(parse_cloud(&short, CloudFormat::PcdAscii, 0, "t").is_err());
        let no_i = "FIELDS x y z\nDATA ascii\n1 2 3\n";
        assert!(parse_cloud(no_i, CloudFormat::PcdAscii, 0, "t").is_err());
    }

    #[test]
    fn merged_output_transforms_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let cloud = PointCloud::new(0, vec![Point::new(1.0, 0.0, 0.0, 7.0)]);
        let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 2.0));
        write_merged(&[cloud], &[pose], &path, CloudFormat::XyziCsv).unwrap();
        let (back, _) = read_cloud(&path, CloudFormat::XyziCsv, 0).unwrap();
        assert_eq!(back.points, vec![Point::new(1.0, 0.0, 2.0, 7.0)]);
    }

    #[test]
    fn identity_merge_preserves_points_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(
            0,
            vec![Point::new(0.1, -2.5e-7, 3.3333333333, 1.0), Point::new(-0.0, 4.0, 1e9, 0.0)],
        );
        for fmt in [CloudFormat::PcdAscii, CloudFormat::XyziCsv] {
            let path = dir.path().join(format!("m.{}", fmt.extension()));
            write_merged(std::slice::from_ref(&cloud), &[Pose::identity()], &path, fmt).unwrap();
            let (back, _) = read_cloud(&path, fmt, 0).unwrap();
            assert_eq!(back.points, cloud.points);
        }
    }

    #[test]
    fn merged_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(0, vec![Point::new(1.0, 0.0, 0.0, 7.0)]);
        let r = write_merged(&[cloud], &[], &dir.path().join("x.csv"), CloudFormat::XyziCsv);
        assert!(matches!(r, Err(CloudError::LengthMismatch(1, 0))));
    }

    #[test]
    fn transformed_cloud() {
        let c = PointCloud::new(0, vec![Point::new(1.0, 0.0, 0.0, 1.0)]);
        let pose = Pose::new(
            Rotation::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2),
            Vec3::zeros(),
        );
        let t = c.transformed(&pose);
        assert!((t.points[0].position - Vec3::y()).norm() < 1e-15);
    }

    mod round_trip {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn write_read_round_trip(
                pts in proptest::collection::vec(
                    (-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3, 0f64..1e3), 1..50),
                pcd in any::<bool>(),
            ) {
                let fmt = if pcd { CloudFormat::PcdAscii } else { CloudFormat::XyziCsv };
                let cloud = PointCloud::new(0, pts.iter().map(|&(x, y, z, i)| Point::new(x, y, z, i)).collect());
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("c");
                write_cloud(&cloud, &path, fmt).unwrap();
                let (back, _) = read_cloud(&path, fmt, 0).unwrap();
                prop_assert_eq!(back.len(), cloud.len());
                for (a, b) in back.points.iter().zip(&cloud.points) {
                    prop_assert!((a.position - b.position).norm() <= 1e-6);
                }
            }
        }
    }
}
