//! Pinhole camera model and rigid-transform algebra.
//!
//! Conventions, fixed once for the whole crate:
//! - camera frame: x right, y down, z forward (into the scene), meters;
//! - platform frame: x along the rail in the direction of travel, y down,
//!   z toward the surveyed row;
//! - `Transform` maps *points*, not poses: `q = R p + t`.
//!
//! The camera extrinsics `t_ec` take camera-frame coordinates to
//! platform-frame coordinates. Inter-frame camera motion is the conjugation
//! `t_ec⁻¹ ∘ te_ij ∘ t_ec`, where `te_ij` is the point transform induced by
//! the odometry increment (a platform advance of `d` meters moves static
//! points by `-d` along the platform x axis).
//!
//! Every operation here is a pure function over immutable inputs and safe
//! to call from any number of threads.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::mask::{DepthImage, Mask};

#[derive(Debug)]
pub enum GeomError {
    /// A point or depth sample lies on or behind the camera plane.
    NonPositiveDepth,
    /// Two images (or an image and the camera) disagree in size.
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    InvalidIntrinsics(String),
    /// Rotation failed the orthonormality / determinant check.
    InvalidRotation { residual: f64 },
    Parse(String),
    Io(io::Error),
}

impl fmt::Display for GeomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeomError::NonPositiveDepth => write!(f, "depth must be strictly positive"),
            GeomError::DimensionMismatch { expected, actual } => write!(
                f,
                "dimension mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            GeomError::InvalidIntrinsics(msg) => write!(f, "invalid intrinsics: {msg}"),
            GeomError::InvalidRotation { residual } => {
                write!(f, "rotation is not orthonormal (residual {residual:e})")
            }
            GeomError::Parse(msg) => write!(f, "calibration parse error: {msg}"),
            GeomError::Io(err) => write!(f, "calibration i/o error: {err}"),
        }
    }
}

impl std::error::Error for GeomError {}

impl From<io::Error> for GeomError {
    fn from(err: io::Error) -> Self {
        GeomError::Io(err)
    }
}

/// Tolerance on the orthonormality residual of a rotation matrix.
pub const ROTATION_TOL: f64 = 1e-9;

/// Pinhole camera intrinsics (no distortion; images are factory registered).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0 <= cx && cx < width as f64) || !(0.0 <= cy && cy < height as f64) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// The rig's recording camera: 1280x720 at 15 Hz. The focal length is
    /// chosen so a point at 0.5 m depth stays in view for exactly 40 frames
    /// at the nominal 0.2 m/s rail speed.
    pub fn default_camera() -> Self {
        Intrinsics {
            fx: 1200.0,
            fy: 1200.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280,
            height: 720,
        }
    }

    /// Same field of view as [`Intrinsics::default_camera`] at a reduced
    /// resolution; the synthetic benchmark uses this to keep runtimes low.
    pub fn scaled_camera(width: u32, height: u32) -> Self {
        let f = 0.9375 * width as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// Continuous image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Pixel { u, v }
    }

    /// True iff the pixel lies inside the image bounds of `k`.
    pub fn is_within(&self, k: &Intrinsics) -> bool {
        0.0 <= self.u && self.u < k.width as f64 && 0.0 <= self.v && self.v < k.height as f64
    }
}

/// A 3D point in meters; camera or platform frame depending on context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Rigid body transform stored as rotation + translation so the
/// orthonormality invariant stays assertable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Builds a transform from a rotation matrix and translation vector,
    /// rejecting rotations whose orthonormality residual exceeds
    /// [`ROTATION_TOL`] or whose determinant is not +1.
    pub fn from_parts(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, GeomError> {
        let t = Transform {
            rotation,
            translation,
        };
        let residual = t.orthonormality_residual();
        if !residual.is_finite() || residual > ROTATION_TOL {
            return Err(GeomError::InvalidRotation { residual });
        }
        let det = det3(&rotation);
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeomError::InvalidRotation {
                residual: (det - 1.0).abs(),
            });
        }
        Ok(t)
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Transform {
            rotation: Transform::identity().rotation,
            translation,
        }
    }

    /// Rotation about the camera y axis (yaw for an upright camera).
    pub fn rotation_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Transform {
            rotation: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Transform {
            rotation: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Transform {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    /// Max absolute entry of Rᵀ R − I.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Composition `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        let mut translation = [0.0; 3];
        for i in 0..3 {
            translation[i] =
                (0..3).map(|k| a[i][k] * other.translation[k]).sum::<f64>() + self.translation[i];
        }
        Transform {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let r = &self.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = r[j][i];
            }
        }
        let mut translation = [0.0; 3];
        for i in 0..3 {
            translation[i] = -(0..3).map(|k| rotation[i][k] * self.translation[k]).sum::<f64>();
        }
        Transform {
            rotation,
            translation,
        }
    }

    /// Applies the transform to a point: `R p + t`.
    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let v = [p.x, p.y, p.z];
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = (0..3).map(|k| r[i][k] * v[k]).sum::<f64>() + self.translation[i];
        }
        Point3::new(out[0], out[1], out[2])
    }

    pub fn approx_eq(&self, other: &Transform, tol: f64) -> bool {
        for i in 0..3 {
            for j in 0..3 {
                if (self.rotation[i][j] - other.rotation[i][j]).abs() > tol {
                    return false;
                }
            }
            if (self.translation[i] - other.translation[i]).abs() > tol {
                return false;
            }
        }
        true
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Projects a camera-frame point to continuous pixel coordinates.
///
/// The result may lie outside the image bounds; the caller filters.
pub fn project(p: Point3, k: &Intrinsics) -> Result<Pixel, GeomError> {
    if p.z <= 0.0 {
        return Err(GeomError::NonPositiveDepth);
    }
    Ok(Pixel::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Lifts a pixel with known depth back to a camera-frame 3D point.
pub fn back_project(px: Pixel, depth: f64, k: &Intrinsics) -> Result<Point3, GeomError> {
    if depth <= 0.0 {
        return Err(GeomError::NonPositiveDepth);
    }
    Ok(Point3::new(
        (px.u - k.cx) * depth / k.fx,
        (px.v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Camera motion between two frames from the odometry transform `te_ij` and
/// the camera-to-encoder extrinsics `t_ec`: `t_ec⁻¹ ∘ te_ij ∘ t_ec`.
pub fn camera_motion(te_ij: &Transform, t_ec: &Transform) -> Transform {
    t_ec.inverse().compose(te_ij).compose(t_ec)
}

/// Warps `(u, v, depth)` samples through a camera motion, returning landed
/// integer pixels with their new depths in input order. Out-of-image and
/// behind-camera results are dropped. Rounding collisions may land two
/// samples on the same pixel; both are kept, which is harmless for mask
/// rasterization and for further warping.
pub(crate) fn warp_depth_pixels(
    points: &[(u32, u32, f64)],
    motion: &Transform,
    k: &Intrinsics,
) -> Vec<(u32, u32, f64)> {
    let mut landed: Vec<(u32, u32, f64)> = Vec::with_capacity(points.len());
    for &(u, v, d) in points {
        if d <= 0.0 {
            continue;
        }
        let p = back_project(Pixel::new(u as f64, v as f64), d, k)
            .expect("depth checked positive");
        let q = motion.apply(p);
        if q.z <= 0.0 {
            continue;
        }
        let px = project(q, k).expect("depth checked positive");
        let (tu, tv) = (px.u.round(), px.v.round());
        if tu < 0.0 || tv < 0.0 || tu >= k.width as f64 || tv >= k.height as f64 {
            continue;
        }
        landed.push((tu as u32, tv as u32, q.z));
    }
    landed
}

/// Re-projects a mask from frame i into frame j through the camera motion.
///
/// Mask pixels with invalid (zero) depth are dropped rather than
/// interpolated; the forward-warped result is closed with a 3x3 structuring
/// element, one pass, to fill rounding holes.
pub fn reproject_mask(
    mask: &Mask,
    depth: &DepthImage,
    motion: &Transform,
    k: &Intrinsics,
) -> Result<Mask, GeomError> {
    if mask.dims() != k.dims() {
        return Err(GeomError::DimensionMismatch {
            expected: k.dims(),
            actual: mask.dims(),
        });
    }
    if depth.dims() != k.dims() {
        return Err(GeomError::DimensionMismatch {
            expected: k.dims(),
            actual: depth.dims(),
        });
    }
    let points: Vec<(u32, u32, f64)> = mask
        .pixels()
        .map(|(u, v)| (u, v, depth.get(u, v)))
        .filter(|&(_, _, d)| d > 0.0)
        .collect();
    let landed = warp_depth_pixels(&points, motion, k);
    let mut out = Mask::new(k.width, k.height);
    for &(u, v, _) in &landed {
        out.set(u, v);
    }
    Ok(out.close3x3())
}

/// Camera calibration: intrinsics plus camera-to-encoder extrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: Intrinsics,
    pub t_ec: Transform,
}

impl Calibration {
    pub fn new(intrinsics: Intrinsics, t_ec: Transform) -> Self {
        Calibration { intrinsics, t_ec }
    }

    /// Parses the `key = value` calibration format: fx, fy, cx, cy, width,
    /// height, and t_ec as 12 numbers (row-major rotation then translation).
    pub fn parse(text: &str) -> Result<Self, GeomError> {
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        let mut width = None;
        let mut height = None;
        let mut t_ec = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                GeomError::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| GeomError::Parse(format!("line {}: bad {what}", lineno + 1));
            match key {
                "fx" => fx = Some(value.parse::<f64>().map_err(|_| bad("fx"))?),
                "fy" => fy = Some(value.parse::<f64>().map_err(|_| bad("fy"))?),
                "cx" => cx = Some(value.parse::<f64>().map_err(|_| bad("cx"))?),
                "cy" => cy = Some(value.parse::<f64>().map_err(|_| bad("cy"))?),
                "width" => width = Some(value.parse::<u32>().map_err(|_| bad("width"))?),
                "height" => height = Some(value.parse::<u32>().map_err(|_| bad("height"))?),
                "t_ec" => {
                    let nums: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("t_ec"))?;
                    if nums.len() != 12 {
                        return Err(GeomError::Parse(format!(
                            "line {}: t_ec needs 12 numbers, got {}",
                            lineno + 1,
                            nums.len()
                        )));
                    }
                    let rotation = [
                        [nums[0], nums[1], nums[2]],
                        [nums[3], nums[4], nums[5]],
                        [nums[6], nums[7], nums[8]],
                    ];
                    let translation = [nums[9], nums[10], nums[11]];
                    t_ec = Some(Transform::from_parts(rotation, translation)?);
                }
                other => {
                    return Err(GeomError::Parse(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        let missing = |what: &str| GeomError::Parse(format!("missing key `{what}`"));
        let intrinsics = Intrinsics::new(
            fx.ok_or_else(|| missing("fx"))?,
            fy.ok_or_else(|| missing("fy"))?,
            cx.ok_or_else(|| missing("cx"))?,
            cy.ok_or_else(|| missing("cy"))?,
            width.ok_or_else(|| missing("width"))?,
            height.ok_or_else(|| missing("height"))?,
        )?;
        Ok(Calibration {
            intrinsics,
            t_ec: t_ec.ok_or_else(|| missing("t_ec"))?,
        })
    }

    pub fn to_config_string(&self) -> String {
        let k = &self.intrinsics;
        let r = self.t_ec.rotation();
        let t = self.t_ec.translation();
        format!(
            "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n\
             t_ec = {} {} {} {} {} {} {} {} {} {} {} {}\n",
            k.fx,
            k.fy,
            k.cx,
            k.cy,
            k.width,
            k.height,
            r[0][0],
            r[0][1],
            r[0][2],
            r[1][0],
            r[1][1],
            r[1][2],
            r[2][0],
            r[2][1],
            r[2][2],
            t[0],
            t[1],
            t[2],
        )
    }

    pub fn read(path: &Path) -> Result<Self, GeomError> {
        Calibration::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), GeomError> {
        fs::write(path, self.to_config_string())?;
        Ok(())
    }
}
