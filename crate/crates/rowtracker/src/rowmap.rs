//! Offline 3D row-map builder: per-frame point clouds from depth images,
//! depth-range filtering, and odometry-referenced concatenation with frame
//! skipping. No fusion or deduplication — the map is the plain concatenation
//! of the kept frames' clouds in a common reference frame.

use std::fmt;
use std::io::{self, BufRead, Read, Write};

use crate::dataset::{DatasetError, RowDataset};
use crate::geom::{self, Calibration, Intrinsics, Point3, Transform};
use crate::mask::DepthImage;
use crate::sim::FrameRecord;

#[derive(Debug)]
pub enum MapError {
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    /// The dataset carries no calibration, so clouds cannot be referenced.
    MissingCalibration,
    InvalidConfig(String),
    Io(io::Error),
    Parse(String),
    Dataset(DatasetError),
}

impl fmt::Display for MapError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapError::DimensionMismatch { expected, actual } => write!(
                f,
                "dimension mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            MapError::MissingCalibration => write!(f, "dataset has no calibration"),
            MapError::InvalidConfig(msg) => write!(f, "invalid map config: {msg}"),
            MapError::Io(err) => write!(f, "i/o failure: {err}"),
            MapError::Parse(msg) => write!(f, "ply parse error: {msg}"),
            MapError::Dataset(err) => write!(f, "dataset error: {err}"),
        }
    }
}

impl std::error::Error for MapError {}

impl From<io::Error> for MapError {
    fn from(err: io::Error) -> Self {
        MapError::Io(err)
    }
}

impl From<DatasetError> for MapError {
    fn from(err: DatasetError) -> Self {
        MapError::Dataset(err)
    }
}

/// Map-building parameters: keep every `skip`-th frame and only depths
/// inside [d_min, d_max].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub skip: usize,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            skip: 60,
            d_min: 0.2,
            d_max: 1.4,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.skip < 1 {
            return Err(MapError::InvalidConfig("skip must be >= 1".into()));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(MapError::InvalidConfig(format!(
                "need 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Point3,
    pub color: [u8; 3],
    pub source_frame: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Translates every point by a constant offset.
    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| CloudPoint {
                    position: Point3::new(
                        p.position.x + offset[0],
                        p.position.y + offset[1],
                        p.position.z + offset[2],
                    ),
                    ..*p
                })
                .collect(),
        }
    }
}

/// Minimal RGB image for datasets that carry real color.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// Depth-mapped grayscale for depth-only datasets: near is bright.
fn depth_gray(d: f64, cfg: &MapConfig) -> u8 {
    let t = (cfg.d_max - d) / (cfg.d_max - cfg.d_min);
    (255.0 * t.clamp(0.0, 1.0)).round() as u8
}

/// Back-projects one frame into a camera-frame cloud, keeping pixels with
/// depth inside [d_min, d_max]. Pixels with no depth return are excluded.
pub fn frame_cloud(
    depth: &DepthImage,
    color: Option<&RgbImage>,
    frame_index: usize,
    k: &Intrinsics,
    cfg: &MapConfig,
) -> Result<PointCloud, MapError> {
    cfg.validate()?;
    if depth.dims() != k.dims() {
        return Err(MapError::DimensionMismatch {
            expected: k.dims(),
            actual: depth.dims(),
        });
    }
    if let Some(img) = color {
        if img.dims() != k.dims() {
            return Err(MapError::DimensionMismatch {
                expected: k.dims(),
                actual: img.dims(),
            });
        }
    }
    let mut points = Vec::new();
    for v in 0..k.height {
        for u in 0..k.width {
            let d = depth.get(u, v);
            if d < cfg.d_min || d > cfg.d_max {
                continue;
            }
            let position = geom::back_project(geom::Pixel::new(u as f64, v as f64), d, k)
                .expect("depth in range is positive");
            let color = match color {
                Some(img) => img.pixels[v as usize * k.width as usize + u as usize],
                None => {
                    let g = depth_gray(d, cfg);
                    [g, g, g]
                }
            };
            points.push(CloudPoint {
                position,
                color,
                source_frame: frame_index,
            });
        }
    }
    Ok(PointCloud { points })
}

/// Platform pose at rail position `s` composed with the camera extrinsics:
/// takes camera-frame points to world-frame points.
fn camera_to_world(odometry: f64, t_ec: &Transform) -> Transform {
    Transform::from_translation([odometry, 0.0, 0.0]).compose(t_ec)
}

/// Concatenates kept frames (0, skip, 2·skip, …) into one world-frame cloud
/// using the calibration's extrinsics and each frame's odometry.
pub fn build_map_frames<'a, I>(
    frames: I,
    cfg: &MapConfig,
    calib: &Calibration,
) -> Result<PointCloud, MapError>
where
    I: IntoIterator<Item = &'a FrameRecord>,
{
    cfg.validate()?;
    let mut map = PointCloud::default();
    for (i, frame) in frames.into_iter().enumerate() {
        if i % cfg.skip != 0 {
            continue;
        }
        let cloud = frame_cloud(
            &frame.depth,
            None,
            frame.frame_index,
            &calib.intrinsics,
            cfg,
        )?;
        let pose = camera_to_world(frame.odometry_distance, &calib.t_ec);
        map.points.extend(cloud.points.iter().map(|p| CloudPoint {
            position: pose.apply(p.position),
            ..*p
        }));
    }
    Ok(map)
}

/// [`build_map_frames`] over an on-disk dataset; only the kept frames are
/// read from disk.
pub fn build_map(dataset: &RowDataset, cfg: &MapConfig) -> Result<PointCloud, MapError> {
    cfg.validate()?;
    let calib = dataset.calibration.ok_or(MapError::MissingCalibration)?;
    let mut map = PointCloud::default();
    let mut index = 0;
    while index < dataset.frame_count {
        let frame = dataset.load_frame(index)?;
        let cloud = frame_cloud(&frame.depth, None, index, &calib.intrinsics, cfg)?;
        let pose = camera_to_world(frame.odometry_distance, &calib.t_ec);
        map.points.extend(cloud.points.iter().map(|p| CloudPoint {
            position: pose.apply(p.position),
            ..*p
        }));
        index += cfg.skip;
    }
    Ok(map)
}

/// Writes the cloud as ASCII PLY: xyz in meters with 6 decimal places plus
/// 8-bit RGB, one vertex per line.
pub fn write_ply(cloud: &PointCloud, dest: &mut dyn Write) -> Result<(), MapError> {
    let mut out = io::BufWriter::new(dest);
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "property uchar red")?;
    writeln!(out, "property uchar green")?;
    writeln!(out, "property uchar blue")?;
    writeln!(out, "end_header")?;
    for p in &cloud.points {
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2]
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Binary little-endian PLY with the same vertex content as [`write_ply`].
pub fn write_ply_binary(cloud: &PointCloud, dest: &mut dyn Write) -> Result<(), MapError> {
    let mut out = io::BufWriter::new(dest);
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "property uchar red")?;
    writeln!(out, "property uchar green")?;
    writeln!(out, "property uchar blue")?;
    writeln!(out, "end_header")?;
    for p in &cloud.points {
        out.write_all(&(p.position.x as f32).to_le_bytes())?;
        out.write_all(&(p.position.y as f32).to_le_bytes())?;
        out.write_all(&(p.position.z as f32).to_le_bytes())?;
        out.write_all(&p.color)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a PLY produced by [`write_ply`] or [`write_ply_binary`]. Only the
/// x/y/z + red/green/blue vertex layout is supported; `source_frame` is not
/// serialized and comes back as 0.
pub fn read_ply(src: &mut dyn Read) -> Result<PointCloud, MapError> {
    let mut reader = io::BufReader::new(src);
    let mut line = String::new();
    let mut read_line = |reader: &mut io::BufReader<&mut dyn Read>| -> Result<String, MapError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(MapError::Parse("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut reader)? != "ply" {
        return Err(MapError::Parse("missing ply magic".into()));
    }
    let format = read_line(&mut reader)?;
    let binary = match format.as_str() {
        "format ascii 1.0" => false,
        "format binary_little_endian 1.0" => true,
        other => return Err(MapError::Parse(format!("unsupported format `{other}`"))),
    };
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let header = read_line(&mut reader)?;
        if header == "end_header" {
            break;
        }
        if let Some(rest) = header.strip_prefix("element vertex ") {
            vertex_count = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| MapError::Parse("bad vertex count".into()))?,
            );
        } else if let Some(prop) = header.strip_prefix("property ") {
            properties.push(prop.to_string());
        } else if header.starts_with("element ") || header.starts_with("comment ") {
            // Other elements are not produced by this writer.
        } else {
            return Err(MapError::Parse(format!("unexpected header line `{header}`")));
        }
    }
    let expected = [
        "float x", "float y", "float z", "uchar red", "uchar green", "uchar blue",
    ];
    if properties != expected {
        return Err(MapError::Parse(format!(
            "unsupported vertex layout {properties:?}"
        )));
    }
    let count = vertex_count.ok_or_else(|| MapError::Parse("missing element vertex".into()))?;

    let mut points = Vec::with_capacity(count);
    if binary {
        for _ in 0..count {
            let mut xyz = [0u8; 12];
            reader.read_exact(&mut xyz)?;
            let x = f32::from_le_bytes(xyz[0..4].try_into().unwrap()) as f64;
            let y = f32::from_le_bytes(xyz[4..8].try_into().unwrap()) as f64;
            let z = f32::from_le_bytes(xyz[8..12].try_into().unwrap()) as f64;
            let mut rgb = [0u8; 3];
            reader.read_exact(&mut rgb)?;
            points.push(CloudPoint {
                position: Point3::new(x, y, z),
                color: rgb,
                source_frame: 0,
            });
        }
    } else {
        for i in 0..count {
            let row = read_line(&mut reader)
                .map_err(|_| MapError::Parse(format!("missing vertex line {i}")))?;
            let tokens: Vec<&str> = row.split_whitespace().collect();
            if tokens.len() != 6 {
                return Err(MapError::Parse(format!("vertex line {i}: need 6 fields")));
            }
            let coord = |t: &str| -> Result<f64, MapError> {
                t.parse()
                    .map_err(|_| MapError::Parse(format!("vertex line {i}: bad coordinate")))
            };
            let channel = |t: &str| -> Result<u8, MapError> {
                t.parse()
                    .map_err(|_| MapError::Parse(format!("vertex line {i}: bad color")))
            };
            points.push(CloudPoint {
                position: Point3::new(coord(tokens[0])?, coord(tokens[1])?, coord(tokens[2])?),
                color: [channel(tokens[3])?, channel(tokens[4])?, channel(tokens[5])?],
                source_frame: 0,
            });
        }
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::FrameDetections;

    fn camera() -> Intrinsics {
        Intrinsics::scaled_camera(64, 48)
    }

    fn uniform_depth(k: &Intrinsics, meters: f64) -> DepthImage {
        let mut d = DepthImage::new(k.width, k.height);
        for v in 0..k.height {
            for u in 0..k.width {
                d.set_meters(u, v, meters);
            }
        }
        d
    }

    #[test]
    fn uniform_one_meter_keeps_every_pixel() {
        let k = camera();
        let cloud = frame_cloud(&uniform_depth(&k, 1.0), None, 0, &k, &MapConfig::default())
            .unwrap();
        assert_eq!(cloud.len(), (k.width * k.height) as usize);
        assert!(cloud.points.iter().all(|p| p.position.z == 1.0));
    }

    #[test]
    fn uniform_two_meters_is_filtered_out() {
        let k = camera();
        let cloud = frame_cloud(&uniform_depth(&k, 2.0), None, 0, &k, &MapConfig::default())
            .unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn half_in_range_keeps_exactly_half() {
        let k = camera();
        let mut depth = uniform_depth(&k, 1.0);
        for v in 0..k.height {
            for u in 0..k.width / 2 {
                depth.set_meters(u, v, 0.1); // below d_min
            }
        }
        // Direct filter oracle: count the pixels the filter should keep.
        let cfg = MapConfig::default();
        let oracle = (0..k.height)
            .flat_map(|v| (0..k.width).map(move |u| (u, v)))
            .filter(|&(u, v)| {
                let d = depth.get(u, v);
                d >= cfg.d_min && d <= cfg.d_max
            })
            .count();
        assert_eq!(oracle, (k.width * k.height / 2) as usize);
        let cloud = frame_cloud(&depth, None, 0, &k, &cfg).unwrap();
        assert_eq!(cloud.len(), oracle);
    }

    #[test]
    fn frame_cloud_rejects_dimension_mismatch() {
        let k = camera();
        let depth = DepthImage::new(10, 10);
        assert!(matches!(
            frame_cloud(&depth, None, 0, &k, &MapConfig::default()),
            Err(MapError::DimensionMismatch { .. })
        ));
        let ok_depth = uniform_depth(&k, 1.0);
        let bad_color = RgbImage {
            width: 10,
            height: 10,
            pixels: vec![[0, 0, 0]; 100],
        };
        assert!(matches!(
            frame_cloud(&ok_depth, Some(&bad_color), 0, &k, &MapConfig::default()),
            Err(MapError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frame_cloud_uses_real_color_when_present() {
        let k = camera();
        let depth = uniform_depth(&k, 1.0);
        let n = (k.width * k.height) as usize;
        let pixels: Vec<[u8; 3]> = (0..n).map(|i| [(i % 251) as u8, 7, 9]).collect();
        let color = RgbImage {
            width: k.width,
            height: k.height,
            pixels: pixels.clone(),
        };
        let cloud = frame_cloud(&depth, Some(&color), 0, &k, &MapConfig::default()).unwrap();
        assert_eq!(cloud.len(), n);
        for (p, expect) in cloud.points.iter().zip(&pixels) {
            assert_eq!(&p.color, expect);
        }
    }

    fn frame_at(k: &Intrinsics, index: usize, odometry: f64, depth_m: f64) -> FrameRecord {
        FrameRecord {
            frame_index: index,
            odometry_distance: odometry,
            detections: FrameDetections::empty(index),
            depth: uniform_depth(k, depth_m),
            gt_ids: None,
        }
    }

    #[test]
    fn single_frame_map_equals_transformed_frame_cloud() {
        let k = camera();
        let calib = Calibration::new(k, Transform::rotation_y(0.3));
        let cfg = MapConfig::default();
        let frame = frame_at(&k, 0, 1.25, 0.9);
        let map = build_map_frames([&frame], &cfg, &calib).unwrap();
        let local = frame_cloud(&frame.depth, None, 0, &k, &cfg).unwrap();
        assert_eq!(map.len(), local.len());
        let pose = Transform::from_translation([1.25, 0.0, 0.0]).compose(&calib.t_ec);
        for (m, l) in map.points.iter().zip(&local.points) {
            let expect = pose.apply(l.position);
            assert!((m.position.x - expect.x).abs() < 1e-12);
            assert!((m.position.y - expect.y).abs() < 1e-12);
            assert!((m.position.z - expect.z).abs() < 1e-12);
            assert_eq!(m.color, l.color);
        }
    }

    #[test]
    fn two_kept_frames_offset_by_rail_travel() {
        let k = camera();
        let calib = Calibration::new(k, Transform::identity());
        let cfg = MapConfig {
            skip: 1,
            ..MapConfig::default()
        };
        // Same wall imaged from 0 and from 0.8 m down the rail.
        let frames = [frame_at(&k, 0, 0.0, 1.0), frame_at(&k, 1, 0.8, 1.0)];
        let map = build_map_frames(frames.iter(), &cfg, &calib).unwrap();
        let per_frame = (k.width * k.height) as usize;
        assert_eq!(map.len(), 2 * per_frame);
        let min_x = |pts: &[CloudPoint]| {
            pts.iter()
                .map(|p| p.position.x)
                .fold(f64::INFINITY, f64::min)
        };
        let max_x = |pts: &[CloudPoint]| {
            pts.iter()
                .map(|p| p.position.x)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let a = &map.points[..per_frame];
        let b = &map.points[per_frame..];
        assert!((min_x(b) - min_x(a) - 0.8).abs() < 1e-9);
        assert!((max_x(b) - max_x(a) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn point_count_is_conserved_and_skip_selects_frames() {
        let k = camera();
        let calib = Calibration::new(k, Transform::identity());
        let cfg = MapConfig {
            skip: 3,
            ..MapConfig::default()
        };
        let frames: Vec<FrameRecord> = (0..10)
            .map(|i| frame_at(&k, i, i as f64 * 0.0133, if i % 2 == 0 { 1.0 } else { 2.0 }))
            .collect();
        let map = build_map_frames(frames.iter(), &cfg, &calib).unwrap();
        // Kept frames 0, 3, 6, 9; the odd ones carry out-of-range depth.
        let expected: usize = [0usize, 3, 6, 9]
            .iter()
            .map(|&i| {
                frame_cloud(&frames[i].depth, None, i, &k, &cfg)
                    .unwrap()
                    .len()
            })
            .sum();
        assert_eq!(map.len(), expected);
        assert_eq!(expected, 2 * (k.width * k.height) as usize);
        let sources: std::collections::BTreeSet<usize> =
            map.points.iter().map(|p| p.source_frame).collect();
        assert_eq!(sources, [0usize, 6].into_iter().collect());
    }

    #[test]
    fn rigid_invariance_under_constant_pose_shift() {
        let k = camera();
        let calib = Calibration::new(k, Transform::rotation_y(0.2));
        let cfg = MapConfig {
            skip: 2,
            ..MapConfig::default()
        };
        let frames: Vec<FrameRecord> =
            (0..6).map(|i| frame_at(&k, i, i as f64 * 0.1, 1.1)).collect();
        let shifted: Vec<FrameRecord> = frames
            .iter()
            .map(|f| FrameRecord {
                odometry_distance: f.odometry_distance + 2.5,
                ..f.clone()
            })
            .collect();
        let base = build_map_frames(frames.iter(), &cfg, &calib).unwrap();
        let moved = build_map_frames(shifted.iter(), &cfg, &calib).unwrap();
        let expected = base.translated([2.5, 0.0, 0.0]);
        assert_eq!(moved.len(), expected.len());
        for (a, b) in moved.points.iter().zip(&expected.points) {
            assert!((a.position.x - b.position.x).abs() < 1e-9);
            assert!((a.position.y - b.position.y).abs() < 1e-9);
            assert!((a.position.z - b.position.z).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_cloud_writes_valid_ply() {
        let mut buf = Vec::new();
        write_ply(&PointCloud::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("element vertex 0"));
        let cloud = read_ply(&mut buf.as_slice()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn single_point_body_line_is_exact() {
        let cloud = PointCloud {
            points: vec![CloudPoint {
                position: Point3::new(1.0, 2.0, 3.0),
                color: [255, 255, 255],
                source_frame: 0,
            }],
        };
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("1.000000 2.000000 3.000000 255 255 255\n"));
    }

    #[test]
    fn ascii_roundtrip_preserves_point_multiset() {
        let k = camera();
        let mut depth = uniform_depth(&k, 1.0);
        depth.set_meters(3, 3, 0.753);
        let cloud = frame_cloud(&depth, None, 4, &k, &MapConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let parsed = read_ply(&mut buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), cloud.len());
        for (p, q) in parsed.points.iter().zip(&cloud.points) {
            // The writer quantizes to 6 decimals; the parse must return
            // exactly those quantized values.
            for (got, want) in [
                (p.position.x, q.position.x),
                (p.position.y, q.position.y),
                (p.position.z, q.position.z),
            ] {
                let quantized: f64 = format!("{want:.6}").parse().unwrap();
                assert_eq!(got, quantized);
            }
            assert_eq!(p.color, q.color);
        }
    }

    #[test]
    fn binary_flag_produces_identical_content() {
        let k = camera();
        let cloud = frame_cloud(&uniform_depth(&k, 0.8), None, 0, &k, &MapConfig::default())
            .unwrap();
        let mut ascii = Vec::new();
        let mut binary = Vec::new();
        write_ply(&cloud, &mut ascii).unwrap();
        write_ply_binary(&cloud, &mut binary).unwrap();
        let a = read_ply(&mut ascii.as_slice()).unwrap();
        let b = read_ply(&mut binary.as_slice()).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            // Both routes quantize (6 decimals vs f32); agree to f32 grid.
            assert!((p.position.x - q.position.x).abs() < 1e-4);
            assert!((p.position.y - q.position.y).abs() < 1e-4);
            assert!((p.position.z - q.position.z).abs() < 1e-4);
            assert_eq!(p.color, q.color);
        }
    }

    #[test]
    fn config_validation() {
        assert!(MapConfig {
            skip: 0,
            ..MapConfig::default()
        }
        .validate()
        .is_err());
        assert!(MapConfig {
            d_min: 1.5,
            d_max: 1.4,
            skip: 1
        }
        .validate()
        .is_err());
    }
}
