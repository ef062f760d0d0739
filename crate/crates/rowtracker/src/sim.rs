//! Synthetic glasshouse-row generator with exact ground truth.
//!
//! Fruits are spheres; their silhouettes have closed-form projections, which
//! gives the test suite exact oracles for masks, depths, and counts. The
//! camera travels along the rail (world x axis) and looks down the world z
//! axis at the crop, so a frame at rail position `s` sees the point
//! `(x - s, y, z)` in camera coordinates.
//!
//! Rendering and perturbation are pure given (scene, position, seed):
//! frames may be produced in parallel and ordered by index afterwards.

use std::fmt;

use crate::geom::{self, Intrinsics, Point3};
use crate::mask::{DepthImage, FrameDetections, Mask};
use crate::rng::Rng;

#[derive(Debug)]
pub enum SimError {
    InvalidSpec(String),
    Parse(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidSpec(msg) => write!(f, "invalid scene spec: {msg}"),
            SimError::Parse(msg) => write!(f, "scene spec parse error: {msg}"),
        }
    }
}

impl std::error::Error for SimError {}

/// Which crop row a fruit belongs to; the depth filter is supposed to reject
/// everything from background rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    Foreground,
    Background,
}

impl RowTag {
    fn parse(token: &str) -> Result<Self, SimError> {
        match token {
            "foreground" => Ok(RowTag::Foreground),
            "background" => Ok(RowTag::Background),
            other => Err(SimError::Parse(format!("unknown row tag `{other}`"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            RowTag::Foreground => "foreground",
            RowTag::Background => "background",
        }
    }
}

/// An explicitly placed spherical fruit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FruitSpec {
    pub center: Point3,
    pub radius: f64,
    pub row: RowTag,
}

/// Axis-aligned occluder box (leaf stand-in). Only its front face matters to
/// the camera, which looks down +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// A request to scatter `count` fruits uniformly inside a box, resolved
/// deterministically from the scene seed at generation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterSpec {
    pub count: usize,
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
    pub radius: (f64, f64),
    pub row: RowTag,
}

/// Scene description: explicit fruits, optional scatter requests, rail and
/// timing parameters, occluders.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub fruits: Vec<FruitSpec>,
    pub scatter: Vec<ScatterSpec>,
    pub rail_length: f64,
    /// Platform speed in m/s.
    pub speed: f64,
    /// Camera frame rate in Hz.
    pub frame_rate: f64,
    pub occluders: Vec<Occluder>,
}

impl SceneSpec {
    pub fn new(rail_length: f64) -> Self {
        SceneSpec {
            fruits: Vec::new(),
            scatter: Vec::new(),
            rail_length,
            speed: 0.2,
            frame_rate: 15.0,
            occluders: Vec::new(),
        }
    }

    /// Rail advance per frame, `speed / frame_rate`.
    pub fn step(&self) -> f64 {
        self.speed / self.frame_rate
    }

    /// Parses the line-oriented scene format: `key = value` headers
    /// (rail_length, speed, frame_rate, occluder, scatter) and one bare
    /// `x y z radius row_tag` line per fruit.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut spec = SceneSpec::new(0.0);
        let mut saw_rail = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| SimError::Parse(format!("line {}: {what}", lineno + 1));
            if let Some((key, value)) = line.split_once('=') {
                let key = key.trim();
                let value = value.trim();
                match key {
                    "rail_length" => {
                        spec.rail_length =
                            value.parse().map_err(|_| bad("bad rail_length"))?;
                        saw_rail = true;
                    }
                    "speed" => spec.speed = value.parse().map_err(|_| bad("bad speed"))?,
                    "frame_rate" => {
                        spec.frame_rate = value.parse().map_err(|_| bad("bad frame_rate"))?
                    }
                    "occluder" => {
                        let n = parse_floats(value)
                            .map_err(|_| bad("bad occluder numbers"))?;
                        if n.len() != 6 {
                            return Err(bad("occluder needs 6 numbers: x0 y0 z0 x1 y1 z1"));
                        }
                        spec.occluders.push(Occluder {
                            min: [n[0], n[1], n[2]],
                            max: [n[3], n[4], n[5]],
                        });
                    }
                    "scatter" => {
                        let mut tokens: Vec<&str> = value.split_whitespace().collect();
                        if tokens.len() != 10 {
                            return Err(bad(
                                "scatter needs: count x0 x1 y0 y1 z0 z1 r0 r1 row_tag",
                            ));
                        }
                        let row = RowTag::parse(tokens.pop().unwrap())?;
                        let count: usize =
                            tokens[0].parse().map_err(|_| bad("bad scatter count"))?;
                        let n: Vec<f64> = tokens[1..]
                            .iter()
                            .map(|t| t.parse())
                            .collect::<Result<_, _>>()
                            .map_err(|_| bad("bad scatter numbers"))?;
                        spec.scatter.push(ScatterSpec {
                            count,
                            x: (n[0], n[1]),
                            y: (n[2], n[3]),
                            z: (n[4], n[5]),
                            radius: (n[6], n[7]),
                            row,
                        });
                    }
                    other => return Err(bad(&format!("unknown key `{other}`"))),
                }
            } else {
                let mut tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.len() != 5 {
                    return Err(bad("fruit line needs: x y z radius row_tag"));
                }
                let row = RowTag::parse(tokens.pop().unwrap())?;
                let n: Vec<f64> = tokens
                    .iter()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad fruit numbers"))?;
                spec.fruits.push(FruitSpec {
                    center: Point3::new(n[0], n[1], n[2]),
                    radius: n[3],
                    row,
                });
            }
        }
        if !saw_rail {
            return Err(SimError::Parse("missing rail_length header".into()));
        }
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("rail_length = {}\n", self.rail_length));
        out.push_str(&format!("speed = {}\n", self.speed));
        out.push_str(&format!("frame_rate = {}\n", self.frame_rate));
        for o in &self.occluders {
            out.push_str(&format!(
                "occluder = {} {} {} {} {} {}\n",
                o.min[0], o.min[1], o.min[2], o.max[0], o.max[1], o.max[2]
            ));
        }
        for s in &self.scatter {
            out.push_str(&format!(
                "scatter = {} {} {} {} {} {} {} {} {} {}\n",
                s.count,
                s.x.0,
                s.x.1,
                s.y.0,
                s.y.1,
                s.z.0,
                s.z.1,
                s.radius.0,
                s.radius.1,
                s.row.as_str()
            ));
        }
        for f in &self.fruits {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                f.center.x,
                f.center.y,
                f.center.z,
                f.radius,
                f.row.as_str()
            ));
        }
        out
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>, std::num::ParseFloatError> {
    s.split_whitespace().map(|t| t.parse()).collect()
}

/// A fruit with its stable ground-truth identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fruit {
    pub id: u32,
    pub center: Point3,
    pub radius: f64,
    pub row: RowTag,
}

/// Validated scene ready for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub fruits: Vec<Fruit>,
    pub rail_length: f64,
    pub speed: f64,
    pub frame_rate: f64,
    pub occluders: Vec<Occluder>,
}

/// Depth window of the surveyed row; fruits tagged foreground must fall in
/// it and background fruits must lie beyond it.
pub const ROW_DEPTH_MIN: f64 = 0.2;
pub const ROW_DEPTH_MAX: f64 = 1.4;

/// Validates a scene spec and resolves scatter requests into concrete fruit
/// placements using `seed`. Explicitly listed fruits are taken verbatim.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SimError> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if !positive(spec.rail_length) {
        return Err(SimError::InvalidSpec(format!(
            "rail_length must be positive, got {}",
            spec.rail_length
        )));
    }
    if !positive(spec.speed) || !positive(spec.frame_rate) {
        return Err(SimError::InvalidSpec(
            "speed and frame_rate must be positive".into(),
        ));
    }
    for o in &spec.occluders {
        if o.min.iter().zip(&o.max).any(|(lo, hi)| lo >= hi) {
            return Err(SimError::InvalidSpec(
                "occluder min corner must be strictly below max corner".into(),
            ));
        }
    }

    let mut placements: Vec<FruitSpec> = spec.fruits.clone();
    let base = Rng::new(seed);
    for (si, scatter) in spec.scatter.iter().enumerate() {
        let mut rng = base.fork(0x5ca7_7e50 + si as u64);
        for _ in 0..scatter.count {
            let fruit = scatter_one(scatter, &placements, &mut rng)?;
            placements.push(fruit);
        }
    }

    let mut fruits = Vec::with_capacity(placements.len());
    for (i, f) in placements.iter().enumerate() {
        if !positive(f.radius) {
            return Err(SimError::InvalidSpec(format!(
                "fruit {i}: radius must be positive, got {}",
                f.radius
            )));
        }
        if !f.center.is_finite() {
            return Err(SimError::InvalidSpec(format!("fruit {i}: non-finite center")));
        }
        match f.row {
            RowTag::Foreground => {
                if f.center.z < ROW_DEPTH_MIN || f.center.z > ROW_DEPTH_MAX {
                    return Err(SimError::InvalidSpec(format!(
                        "fruit {i}: foreground depth {} outside [{ROW_DEPTH_MIN}, {ROW_DEPTH_MAX}]",
                        f.center.z
                    )));
                }
            }
            RowTag::Background => {
                if f.center.z <= ROW_DEPTH_MAX {
                    return Err(SimError::InvalidSpec(format!(
                        "fruit {i}: background depth {} must exceed {ROW_DEPTH_MAX}",
                        f.center.z
                    )));
                }
            }
        }
        fruits.push(Fruit {
            id: i as u32,
            center: f.center,
            radius: f.radius,
            row: f.row,
        });
    }

    Ok(Scene {
        fruits,
        rail_length: spec.rail_length,
        speed: spec.speed,
        frame_rate: spec.frame_rate,
        occluders: spec.occluders.clone(),
    })
}

/// Rejection-samples one placement that keeps silhouettes from permanently
/// overlapping: fruits at nearly the same depth hold a fixed image offset as
/// the camera moves, so those pairs must be separated in (x, y).
fn scatter_one(
    scatter: &ScatterSpec,
    existing: &[FruitSpec],
    rng: &mut Rng,
) -> Result<FruitSpec, SimError> {
    for _ in 0..10_000 {
        let candidate = FruitSpec {
            center: Point3::new(
                rng.uniform(scatter.x.0, scatter.x.1),
                rng.uniform(scatter.y.0, scatter.y.1),
                rng.uniform(scatter.z.0, scatter.z.1),
            ),
            radius: rng.uniform(scatter.radius.0, scatter.radius.1),
            row: scatter.row,
        };
        let clear = existing.iter().all(|other| {
            if (other.center.z - candidate.center.z).abs() >= 0.12 {
                return true;
            }
            let dx = other.center.x - candidate.center.x;
            let dy = other.center.y - candidate.center.y;
            let min_gap = other.radius + candidate.radius + 0.05;
            dx * dx + dy * dy >= min_gap * min_gap
        });
        if clear {
            return Ok(candidate);
        }
    }
    Err(SimError::InvalidSpec(
        "scatter box too crowded; could not place fruit without overlap".into(),
    ))
}

/// Everything the tracker consumes for one frame, plus the simulator's
/// ground truth. `gt_ids` is `None` for datasets loaded from disk; inside,
/// `None` marks injected false-positive detections.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Cumulative rail travel in meters.
    pub odometry_distance: f64,
    pub detections: FrameDetections,
    pub depth: DepthImage,
    pub gt_ids: Option<Vec<Option<u32>>>,
}

/// A fruit occluded more than this fraction emits no detection.
const MAX_OCCLUSION: f64 = 0.9;

/// Renders the scene from rail position `rail_position` (meters from the row
/// start). Each fruit appears as the projected disk of its sphere, z-buffered
/// against occluders and the other fruits; the depth image carries the
/// nearest surface per pixel and 0 where nothing is hit.
pub fn render_frame(
    scene: &Scene,
    frame_index: usize,
    rail_position: f64,
    k: &Intrinsics,
) -> FrameRecord {
    assert!(
        (-1e-9..=scene.rail_length + 1e-9).contains(&rail_position),
        "rail position {rail_position} outside [0, {}]",
        scene.rail_length
    );
    let w = k.width as usize;
    let h = k.height as usize;
    let mut zbuf = vec![f64::INFINITY; w * h];

    // Fruit surfaces.
    let footprints: Vec<Option<Footprint>> = scene
        .fruits
        .iter()
        .map(|f| fruit_footprint(f, rail_position, k))
        .collect();
    for fp in footprints.iter().flatten() {
        fp.for_each_pixel(|u, v, depth| {
            let i = v as usize * w + u as usize;
            if depth < zbuf[i] {
                zbuf[i] = depth;
            }
        });
    }

    // Occluder front faces (constant depth over their projected rectangle).
    for occ in &scene.occluders {
        let z = occ.min[2] - rail_position * 0.0; // camera z equals world z
        if z <= 1e-3 {
            continue;
        }
        let p0 = geom::project(
            Point3::new(occ.min[0] - rail_position, occ.min[1], z),
            k,
        )
        .expect("occluder depth positive");
        let p1 = geom::project(
            Point3::new(occ.max[0] - rail_position, occ.max[1], z),
            k,
        )
        .expect("occluder depth positive");
        let u0 = p0.u.round().max(0.0) as i64;
        let v0 = p0.v.round().max(0.0) as i64;
        let u1 = p1.u.round().min(k.width as f64 - 1.0) as i64;
        let v1 = p1.v.round().min(k.height as f64 - 1.0) as i64;
        for v in v0..=v1 {
            for u in u0..=u1 {
                if u >= 0 && v >= 0 {
                    let i = v as usize * w + u as usize;
                    if z < zbuf[i] {
                        zbuf[i] = z;
                    }
                }
            }
        }
    }

    // Visibility pass: a fruit's mask is the set of pixels where its own
    // surface is the nearest one (ties included, so equal-depth fruits keep
    // overlapping masks).
    let mut masks = Vec::new();
    let mut gt_ids = Vec::new();
    for (fruit, fp) in scene.fruits.iter().zip(&footprints) {
        let Some(fp) = fp else { continue };
        let mut mask = Mask::new(k.width, k.height);
        let mut in_image = 0usize;
        let mut visible = 0usize;
        fp.for_each_pixel(|u, v, depth| {
            in_image += 1;
            let i = v as usize * w + u as usize;
            if depth <= zbuf[i] + 1e-9 {
                visible += 1;
                mask.set(u, v);
            }
        });
        if in_image == 0 {
            continue;
        }
        let visible_fraction = visible as f64 / in_image as f64;
        if visible_fraction < 1.0 - MAX_OCCLUSION || visible == 0 {
            continue;
        }
        masks.push(mask);
        gt_ids.push(Some(fruit.id));
    }

    let mut depth = DepthImage::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            let z = zbuf[v as usize * w + u as usize];
            if z.is_finite() {
                depth.set_meters(u, v, z);
            }
        }
    }

    let confidences = vec![1.0f32; masks.len()];
    FrameRecord {
        frame_index,
        odometry_distance: rail_position,
        detections: FrameDetections::new(frame_index, masks, confidences),
        depth,
        gt_ids: Some(gt_ids),
    }
}

/// Projected silhouette of a sphere, precomputed for pixel iteration.
struct Footprint {
    u0: i64,
    u1: i64,
    v0: i64,
    v1: i64,
    cu: f64,
    cv: f64,
    a: f64,
    b: f64,
    center_depth: f64,
    radius: f64,
}

impl Footprint {
    /// Visits every in-image silhouette pixel with the sphere's front
    /// surface depth at that pixel.
    fn for_each_pixel(&self, mut visit: impl FnMut(u32, u32, f64)) {
        for v in self.v0..=self.v1 {
            for u in self.u0..=self.u1 {
                let du = (u as f64 - self.cu) / self.a;
                let dv = (v as f64 - self.cv) / self.b;
                let rho2 = du * du + dv * dv;
                if rho2 <= 1.0 {
                    let depth = self.center_depth - self.radius * (1.0 - rho2).sqrt();
                    visit(u as u32, v as u32, depth);
                }
            }
        }
    }
}

fn fruit_footprint(fruit: &Fruit, rail_position: f64, k: &Intrinsics) -> Option<Footprint> {
    let cam = Point3::new(
        fruit.center.x - rail_position,
        fruit.center.y,
        fruit.center.z,
    );
    if cam.z <= fruit.radius + 1e-3 {
        return None;
    }
    let center_px = geom::project(cam, k).expect("depth checked positive");
    let a = k.fx * fruit.radius / cam.z;
    let b = k.fy * fruit.radius / cam.z;
    let u0 = (center_px.u - a).floor() as i64;
    let u1 = (center_px.u + a).ceil() as i64;
    let v0 = (center_px.v - b).floor() as i64;
    let v1 = (center_px.v + b).ceil() as i64;
    let u0 = u0.max(0);
    let v0 = v0.max(0);
    let u1 = u1.min(k.width as i64 - 1);
    let v1 = v1.min(k.height as i64 - 1);
    if u0 > u1 || v0 > v1 {
        return None;
    }
    Some(Footprint {
        u0,
        u1,
        v0,
        v1,
        cu: center_px.u,
        cv: center_px.v,
        a,
        b,
        center_depth: cam.z,
        radius: fruit.radius,
    })
}

/// Detector and odometry noise model for stress runs. All draws are
/// deterministic in (`seed`, frame index), independent of call order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Additive Gaussian error on the cumulative odometry, meters per frame.
    pub odometry_sigma: f64,
    /// Probability of dropping each detection.
    pub dropout_prob: f64,
    /// Expected spurious detections per frame (Poisson).
    pub false_positive_rate: f64,
    /// Uniform boundary erosion/dilation amplitude in pixels.
    pub mask_jitter: u32,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        NoiseSpec {
            odometry_sigma: 0.0,
            dropout_prob: 0.0,
            false_positive_rate: 0.0,
            mask_jitter: 0,
            seed,
        }
    }

    /// Declared benchmark noise parameters (not claims about any real rig).
    pub fn benchmark_defaults(seed: u64) -> Self {
        NoiseSpec {
            odometry_sigma: 0.0,
            dropout_prob: 0.1,
            false_positive_rate: 0.2,
            mask_jitter: 2,
            seed,
        }
    }

    pub fn is_none(&self) -> bool {
        self.odometry_sigma == 0.0
            && self.dropout_prob == 0.0
            && self.false_positive_rate == 0.0
            && self.mask_jitter == 0
    }
}

/// Applies the noise model to one frame. Draw order is fixed: odometry,
/// per-detection dropout, per-survivor jitter, then false positives. A
/// false positive carries an in-range depth, stamped only into pixels with
/// no existing return; real surfaces keep their own depth.
pub fn perturb(frame: &FrameRecord, noise: &NoiseSpec) -> FrameRecord {
    if noise.is_none() {
        return frame.clone();
    }
    let mut rng = Rng::new(noise.seed).fork(frame.frame_index as u64);
    let mut out = frame.clone();

    if noise.odometry_sigma > 0.0 {
        out.odometry_distance += rng.gaussian() * noise.odometry_sigma;
    }

    let gt_in: Vec<Option<u32>> = match &frame.gt_ids {
        Some(ids) => ids.clone(),
        None => vec![None; frame.detections.len()],
    };
    let mut masks = Vec::new();
    let mut confidences = Vec::new();
    let mut gt_ids = Vec::new();
    for ((mask, &conf), gt) in frame
        .detections
        .masks
        .iter()
        .zip(&frame.detections.confidences)
        .zip(gt_in)
    {
        if noise.dropout_prob > 0.0 && rng.chance(noise.dropout_prob) {
            continue;
        }
        let mut jittered = mask.clone();
        if noise.mask_jitter > 0 {
            let amount = rng.uniform_i64(-(noise.mask_jitter as i64), noise.mask_jitter as i64);
            for _ in 0..amount.abs() {
                jittered = if amount < 0 {
                    jittered.erode3x3()
                } else {
                    jittered.dilate3x3()
                };
            }
            if jittered.is_empty() {
                continue; // eroded away entirely
            }
        }
        masks.push(jittered);
        confidences.push(conf);
        gt_ids.push(gt);
    }

    if noise.false_positive_rate > 0.0 {
        let count = rng.poisson(noise.false_positive_rate);
        let (w, h) = frame.depth.dims();
        for _ in 0..count {
            let cu = rng.uniform(0.0, w as f64);
            let cv = rng.uniform(0.0, h as f64);
            let radius = rng.uniform(0.008, 0.022) * w as f64;
            let depth_m = rng.uniform(ROW_DEPTH_MIN, ROW_DEPTH_MAX);
            let fp = Mask::filled_ellipse(w, h, cu, cv, radius, radius);
            if fp.is_empty() {
                continue;
            }
            for (u, v) in fp.pixels() {
                if out.depth.get(u, v) == 0.0 {
                    out.depth.set_meters(u, v, depth_m);
                }
            }
            masks.push(fp);
            confidences.push(1.0);
            gt_ids.push(None);
        }
    }

    out.detections = FrameDetections::new(frame.frame_index, masks, confidences);
    out.gt_ids = frame.gt_ids.as_ref().map(|_| gt_ids);
    out
}

impl Scene {
    /// Rail positions of every frame: multiples of `speed / frame_rate`
    /// from 0 to the rail end.
    pub fn frame_positions(&self) -> Vec<f64> {
        let step = self.speed / self.frame_rate;
        let count = (self.rail_length / step).floor() as usize + 1;
        (0..count).map(|i| i as f64 * step).collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.fruits
            .iter()
            .filter(|f| f.row == RowTag::Foreground)
            .count()
    }

    pub fn background_count(&self) -> usize {
        self.fruits.len() - self.foreground_count()
    }
}

/// Seeded synthetic row benchmark used by the validation suite and the
/// examples in the README.
///
/// Foreground fruit sit in two depth lanes whose image bands never overlap,
/// so every foreground fruit crosses the view unoccluded; a band of small,
/// deeper fruit above them stands in for the next crop row. Row geometry and
/// noise are fully determined by the row index.
pub mod bench {
    use super::*;

    pub const ROWS: usize = 10;
    /// Foreground fruit per row; varied so R² over the benchmark is
    /// well defined.
    pub const FOREGROUND_COUNTS: [usize; ROWS] = [16, 17, 18, 19, 20, 20, 21, 22, 23, 24];
    pub const BACKGROUND_COUNT: usize = 10;
    pub const RAIL_LENGTH: f64 = 4.0;

    /// Reduced-resolution camera with the recording rig's field of view.
    pub fn camera() -> Intrinsics {
        Intrinsics::scaled_camera(640, 360)
    }

    /// Evenly spaced fruits along one constant-depth lane, with seeded
    /// jitter on position and radius. Same-depth fruits keep a fixed image
    /// offset, so lane members never occlude each other.
    fn lane(
        rng: &mut Rng,
        count: usize,
        y: f64,
        z: f64,
        radius: (f64, f64),
        row_tag: RowTag,
    ) -> Vec<FruitSpec> {
        let x0 = 0.9;
        let x1 = RAIL_LENGTH - 0.9;
        (0..count)
            .map(|i| {
                let frac = (i as f64 + 0.5) / count as f64;
                let x = x0 + frac * (x1 - x0) + rng.uniform(-0.02, 0.02);
                FruitSpec {
                    center: Point3::new(x, y + rng.uniform(-0.005, 0.005), z),
                    radius: rng.uniform(radius.0, radius.1),
                    row: row_tag,
                }
            })
            .collect()
    }

    pub fn scene_spec(row: usize) -> SceneSpec {
        assert!(row < ROWS);
        let mut rng = Rng::new(0xbe9c_0000 + row as u64);
        let mut spec = SceneSpec::new(RAIL_LENGTH);
        let total = FOREGROUND_COUNTS[row];
        let lower = total / 2;
        spec.fruits
            .extend(lane(&mut rng, lower, -0.10, 0.6, (0.055, 0.065), RowTag::Foreground));
        spec.fruits.extend(lane(
            &mut rng,
            total - lower,
            0.09,
            0.8,
            (0.055, 0.065),
            RowTag::Foreground,
        ));
        spec.scatter.push(ScatterSpec {
            count: BACKGROUND_COUNT,
            x: (1.0, RAIL_LENGTH - 1.0),
            y: (0.35, 0.42),
            z: (1.45, 1.58),
            radius: (0.012, 0.015),
            row: RowTag::Background,
        });
        spec
    }

    pub fn scene(row: usize) -> Scene {
        generate_scene(&scene_spec(row), 0x5ee_d000 + row as u64).expect("benchmark spec is valid")
    }

    pub fn noise(row: usize) -> NoiseSpec {
        NoiseSpec::benchmark_defaults(0x0a11_ce00 + row as u64)
    }

    pub fn frames(row: usize) -> Vec<FrameRecord> {
        simulate_row(&scene(row), &camera(), &noise(row))
    }

    pub const CLEAN_ROWS: usize = 3;
    pub const CLEAN_COUNTS: [usize; CLEAN_ROWS] = [8, 11, 14];
    pub const CLEAN_RAIL_LENGTH: f64 = 2.8;

    /// Camera for the noise-free rows; same field of view, smaller frames.
    pub fn clean_camera() -> Intrinsics {
        Intrinsics::scaled_camera(480, 270)
    }

    /// Noise-free foreground-only rows for exactness checks.
    pub fn clean_scene(row: usize) -> Scene {
        assert!(row < CLEAN_ROWS);
        let mut rng = Rng::new(0xc1ea_4000 + row as u64);
        let mut spec = SceneSpec::new(CLEAN_RAIL_LENGTH);
        let total = CLEAN_COUNTS[row];
        let lower = total / 2;
        let mut lane_at = |count: usize, y: f64, z: f64| {
            let x0 = 0.9;
            let x1 = CLEAN_RAIL_LENGTH - 0.9;
            (0..count)
                .map(|i| {
                    let frac = (i as f64 + 0.5) / count as f64;
                    FruitSpec {
                        center: Point3::new(
                            x0 + frac * (x1 - x0) + rng.uniform(-0.01, 0.01),
                            y + rng.uniform(-0.005, 0.005),
                            z,
                        ),
                        radius: rng.uniform(0.04, 0.048),
                        row: RowTag::Foreground,
                    }
                })
                .collect::<Vec<_>>()
        };
        let mut fruits = lane_at(lower, -0.10, 0.6);
        fruits.extend(lane_at(total - lower, 0.09, 0.8));
        spec.fruits = fruits;
        generate_scene(&spec, 0).expect("clean spec is valid")
    }

    pub fn clean_frames(row: usize) -> Vec<FrameRecord> {
        simulate_row(&clean_scene(row), &clean_camera(), &NoiseSpec::none(0))
    }
}

/// Renders a whole row and applies the noise model to every frame.
pub fn simulate_row(scene: &Scene, k: &Intrinsics, noise: &NoiseSpec) -> Vec<FrameRecord> {
    scene
        .frame_positions()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let clean = render_frame(scene, i, s, k);
            if noise.is_none() {
                clean
            } else {
                perturb(&clean, noise)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_camera() -> Intrinsics {
        Intrinsics::scaled_camera(640, 360)
    }

    fn one_fruit_spec(x: f64, y: f64, z: f64, r: f64, row: RowTag) -> SceneSpec {
        let mut spec = SceneSpec::new(3.0);
        spec.fruits.push(FruitSpec {
            center: Point3::new(x, y, z),
            radius: r,
            row,
        });
        spec
    }

    #[test]
    fn empty_scene_renders_no_detections() {
        let scene = generate_scene(&SceneSpec::new(1.0), 0).unwrap();
        let k = small_camera();
        for frame in simulate_row(&scene, &k, &NoiseSpec::none(0)) {
            assert!(frame.detections.is_empty());
            assert!(frame.depth.mm_values().iter().all(|&mm| mm == 0));
        }
    }

    #[test]
    fn default_camera_gives_forty_frames_at_half_meter() {
        // A near-point fruit at 0.5 m depth must stay in view for ~40 frames
        // at 0.2 m/s and 15 Hz.
        let spec = one_fruit_spec(1.5, 0.0, 0.5, 0.005, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let k = Intrinsics::default_camera();
        let visible = simulate_row(&scene, &k, &NoiseSpec::none(0))
            .iter()
            .filter(|f| !f.detections.is_empty())
            .count();
        assert!(
            (38..=42).contains(&visible),
            "expected ~40 visible frames, got {visible}"
        );
    }

    #[test]
    fn visibility_window_scales_with_depth() {
        // At 0.7 m the in-view span is 0.7/0.5 times longer: ~56 frames.
        let spec = one_fruit_spec(1.5, 0.0, 0.7, 0.005, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let k = Intrinsics::default_camera();
        let frames = simulate_row(&scene, &k, &NoiseSpec::none(0));
        let visible: Vec<usize> = frames
            .iter()
            .filter(|f| !f.detections.is_empty())
            .map(|f| f.frame_index)
            .collect();
        assert!(
            (54..=59).contains(&visible.len()),
            "expected ~56 visible frames, got {}",
            visible.len()
        );
        // Contiguous interval.
        assert_eq!(visible.last().unwrap() - visible[0] + 1, visible.len());
    }

    #[test]
    fn disk_radius_matches_small_angle_oracle() {
        let k = small_camera();
        let (r, d) = (0.04, 0.8);
        let spec = one_fruit_spec(0.0, 0.0, d, r, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 0, 0.0, &k);
        assert_eq!(frame.detections.len(), 1);
        let mask = &frame.detections.masks[0];
        let expected_radius = k.fx * r / d;
        let expected_area = std::f64::consts::PI * expected_radius * expected_radius;
        let area = mask.pixel_count() as f64;
        assert!(
            (area - expected_area).abs() / expected_area < 0.02,
            "area {area} vs oracle {expected_area}"
        );
        let (cu, cv) = mask.centroid().unwrap();
        assert!((cu - k.cx).abs() < 1.0 && (cv - k.cy).abs() < 1.0);
    }

    #[test]
    fn mask_depths_stay_within_sphere_bounds() {
        let k = small_camera();
        let (r, z) = (0.05, 0.7);
        let spec = one_fruit_spec(1.0, 0.02, z, r, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        for frame in simulate_row(&scene, &k, &NoiseSpec::none(0)) {
            for mask in &frame.detections.masks {
                for (u, v) in mask.pixels() {
                    let d = frame.depth.get(u, v);
                    assert!(
                        d >= z - r - 1e-3 && d <= z + r + 1e-3,
                        "depth {d} outside sphere at ({u},{v})"
                    );
                }
            }
        }
    }

    #[test]
    fn fully_hidden_fruit_emits_no_detection_but_occluder_depth_remains() {
        let k = small_camera();
        let mut spec = one_fruit_spec(1.0, 0.0, 1.0, 0.04, RowTag::Foreground);
        // Wide slab right in front of the fruit.
        spec.occluders.push(Occluder {
            min: [0.0, -0.4, 0.5],
            max: [2.0, 0.4, 0.6],
        });
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 0, 1.0, &k);
        assert!(frame.detections.is_empty());
        assert_eq!(frame.depth.get(k.width / 2, k.height / 2), 0.5);
    }

    #[test]
    fn equal_depth_fruits_keep_overlapping_masks() {
        let k = small_camera();
        let mut spec = one_fruit_spec(1.0, 0.0, 0.5, 0.03, RowTag::Foreground);
        spec.fruits.push(FruitSpec {
            center: Point3::new(1.0, 0.05, 0.5),
            radius: 0.03,
            row: RowTag::Foreground,
        });
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 0, 1.0, &k);
        assert_eq!(frame.detections.len(), 2);
        let [a, b] = &frame.detections.masks[..] else {
            panic!()
        };
        assert!(a.intersection_count(b) > 0, "expected overlapping masks");
    }

    #[test]
    fn background_fruit_mask_depths_are_out_of_row_range() {
        let k = small_camera();
        let spec = one_fruit_spec(1.0, 0.0, 2.0, 0.05, RowTag::Background);
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 0, 1.0, &k);
        assert_eq!(frame.detections.len(), 1);
        for (u, v) in frame.detections.masks[0].pixels() {
            let d = frame.depth.get(u, v);
            assert!((1.9..=2.1).contains(&d));
        }
    }

    #[test]
    fn generate_scene_rejects_bad_specs() {
        let bad_depth = one_fruit_spec(1.0, 0.0, 1.6, 0.04, RowTag::Foreground);
        assert!(matches!(
            generate_scene(&bad_depth, 0),
            Err(SimError::InvalidSpec(_))
        ));
        let shallow_bg = one_fruit_spec(1.0, 0.0, 1.2, 0.04, RowTag::Background);
        assert!(generate_scene(&shallow_bg, 0).is_err());
        let bad_radius = one_fruit_spec(1.0, 0.0, 0.7, 0.0, RowTag::Foreground);
        assert!(generate_scene(&bad_radius, 0).is_err());
    }

    #[test]
    fn noise_free_odometry_steps_exactly() {
        let spec = one_fruit_spec(1.0, 0.0, 0.7, 0.04, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let frames = simulate_row(&scene, &small_camera(), &NoiseSpec::none(0));
        let step = scene.speed / scene.frame_rate;
        for pair in frames.windows(2) {
            let delta = pair[1].odometry_distance - pair[0].odometry_distance;
            assert_eq!(delta, pair[1].frame_index as f64 * step - pair[0].frame_index as f64 * step);
        }
    }

    #[test]
    fn distinct_gt_ids_equal_scene_fruit_count() {
        let mut spec = SceneSpec::new(3.0);
        spec.scatter.push(ScatterSpec {
            count: 8,
            x: (0.9, 2.1),
            y: (-0.06, 0.06),
            z: (0.5, 0.9),
            radius: (0.04, 0.05),
            row: RowTag::Foreground,
        });
        let scene = generate_scene(&spec, 11).unwrap();
        let frames = simulate_row(&scene, &small_camera(), &NoiseSpec::none(0));
        let mut seen = std::collections::BTreeSet::new();
        for frame in &frames {
            for id in frame.gt_ids.as_ref().unwrap().iter().flatten() {
                seen.insert(*id);
            }
        }
        assert_eq!(seen.len(), scene.fruits.len());
    }

    #[test]
    fn noise_free_rendering_is_deterministic() {
        let mut spec = SceneSpec::new(1.5);
        spec.scatter.push(ScatterSpec {
            count: 5,
            x: (0.6, 0.9),
            y: (-0.05, 0.05),
            z: (0.5, 0.9),
            radius: (0.03, 0.05),
            row: RowTag::Foreground,
        });
        let a = simulate_row(&generate_scene(&spec, 9).unwrap(), &small_camera(), &NoiseSpec::none(0));
        let b = simulate_row(&generate_scene(&spec, 9).unwrap(), &small_camera(), &NoiseSpec::none(0));
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_with_zero_noise_is_identity() {
        let spec = one_fruit_spec(1.0, 0.0, 0.7, 0.04, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 42, 1.0, &small_camera());
        assert_eq!(perturb(&frame, &NoiseSpec::none(9)), frame);
    }

    #[test]
    fn perturb_dropout_one_removes_all_detections() {
        let spec = one_fruit_spec(1.0, 0.0, 0.7, 0.04, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 0, 1.0, &small_camera());
        assert!(!frame.detections.is_empty());
        let noise = NoiseSpec {
            dropout_prob: 1.0,
            ..NoiseSpec::none(3)
        };
        let out = perturb(&frame, &noise);
        assert!(out.detections.is_empty());
        assert_eq!(out.depth, frame.depth);
    }

    #[test]
    fn perturb_is_deterministic_under_seed() {
        let spec = one_fruit_spec(1.0, 0.0, 0.7, 0.05, RowTag::Foreground);
        let scene = generate_scene(&spec, 0).unwrap();
        let frame = render_frame(&scene, 7, 1.0, &small_camera());
        let noise = NoiseSpec {
            odometry_sigma: 0.01,
            dropout_prob: 0.2,
            false_positive_rate: 1.0,
            mask_jitter: 2,
            seed: 1234,
        };
        assert_eq!(perturb(&frame, &noise), perturb(&frame, &noise));
    }

    #[test]
    fn scene_spec_roundtrips_through_config_text() {
        let mut spec = one_fruit_spec(1.25, -0.04, 0.65, 0.045, RowTag::Foreground);
        spec.fruits.push(FruitSpec {
            center: Point3::new(2.0, 0.1, 1.9),
            radius: 0.03,
            row: RowTag::Background,
        });
        spec.occluders.push(Occluder {
            min: [0.5, -0.2, 1.0],
            max: [0.8, 0.2, 1.1],
        });
        spec.scatter.push(ScatterSpec {
            count: 4,
            x: (0.9, 2.0),
            y: (-0.05, 0.05),
            z: (0.55, 0.8),
            radius: (0.04, 0.05),
            row: RowTag::Foreground,
        });
        let text = spec.to_config_string();
        let again = SceneSpec::parse(&text).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn scene_spec_parse_reports_errors() {
        assert!(SceneSpec::parse("speed = 0.2\n").is_err()); // no rail_length
        assert!(SceneSpec::parse("rail_length = 2\n1.0 0.0 0.5 foreground\n").is_err());
        assert!(SceneSpec::parse("rail_length = 2\n1.0 0.0 0.5 0.04 middleground\n").is_err());
    }
}
