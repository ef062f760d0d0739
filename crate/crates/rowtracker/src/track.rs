//! Tracking-via-segmentation fruit counter.
//!
//! Three variants share one pipeline:
//! - `bl` associates detections to each tracklet's last seen mask;
//! - `rp` first re-projects every active tracklet's mask into the current
//!   frame through the odometry-derived camera motion, so the comparison
//!   happens where the fruit actually is now;
//! - `df` is `rp` plus a depth gate that discards detections whose depth
//!   values do not sufficiently fall inside the surveyed row's range.
//!
//! Image-border zones: the platform travels toward +x, so fruits enter the
//! view at high u and leave at low u. The *start zone* is the entry band
//! (rightmost `start_zone` fraction of the width), the *stop zone* the exit
//! band (leftmost `stop_zone` fraction). Detections whose centroid lies in
//! either band do not spawn tracklets — a fruit is picked up once it has
//! fully entered and cannot be double counted from the slivers it leaves
//! behind on the way out. Tracklets whose centroid reaches the stop zone
//! retire immediately.
//!
//! A [`Tracker`] is single-owner and strictly sequential per row (frame
//! order matters); distinct rows may be tracked concurrently with no shared
//! state. The free helpers (`mask_iou`, `depth_retain`, `associate`) are
//! pure and thread-safe.

use std::fmt;
use std::str::FromStr;

use crate::geom::{self, Calibration, Transform};
use crate::mask::{DepthImage, FrameDetections, Mask};
use crate::sim::FrameRecord;

#[derive(Debug)]
pub enum TrackError {
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    /// A zero-pixel mask where a detection was required.
    EmptyMask,
    /// Frames must be consumed strictly in order, starting at index 0.
    OutOfOrderFrame { expected: usize, got: usize },
    InvalidConfig(String),
    Parse(String),
}

impl fmt::Display for TrackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackError::DimensionMismatch { expected, actual } => write!(
                f,
                "dimension mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            TrackError::EmptyMask => write!(f, "empty mask is not a valid detection"),
            TrackError::OutOfOrderFrame { expected, got } => {
                write!(f, "out-of-order frame: expected index {expected}, got {got}")
            }
            TrackError::InvalidConfig(msg) => write!(f, "invalid tracker config: {msg}"),
            TrackError::Parse(msg) => write!(f, "tracker config parse error: {msg}"),
        }
    }
}

impl std::error::Error for TrackError {}

/// Tracker variant, named after the three systems compared in evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Baseline IoU association against the last seen mask.
    Bl,
    /// Odometry re-projection before association.
    Rp,
    /// Re-projection plus depth filtering.
    Df,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Bl, Variant::Rp, Variant::Df];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bl => "bl",
            Variant::Rp => "rp",
            Variant::Df => "df",
        }
    }

    fn reprojects(self) -> bool {
        matches!(self, Variant::Rp | Variant::Df)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = TrackError;

    fn from_str(s: &str) -> Result<Self, TrackError> {
        match s {
            "bl" => Ok(Variant::Bl),
            "rp" => Ok(Variant::Rp),
            "df" => Ok(Variant::Df),
            other => Err(TrackError::Parse(format!(
                "unknown variant `{other}` (expected bl, rp, or df)"
            ))),
        }
    }
}

/// Depth gate parameters: a detection is kept when the fraction of its mask
/// pixels with depth inside [d_crop_min, d_crop_max] strictly exceeds
/// tau_dpt. Invalid (zero) depths count in the denominator only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub d_crop_min: f64,
    pub d_crop_max: f64,
    pub tau_dpt: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            d_crop_min: 0.2,
            d_crop_max: 1.4,
            tau_dpt: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.d_crop_min > 0.0 && self.d_crop_min < self.d_crop_max) {
            return Err(TrackError::InvalidConfig(format!(
                "need 0 < d_crop_min < d_crop_max, got [{}, {}]",
                self.d_crop_min, self.d_crop_max
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_dpt) {
            return Err(TrackError::InvalidConfig(format!(
                "tau_dpt must be in [0, 1], got {}",
                self.tau_dpt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub variant: Variant,
    pub iou_threshold: f64,
    /// Frames a tracklet may go unmatched before retiring.
    pub max_misses: u32,
    /// Associated detections required for a tracklet to count as a fruit.
    pub min_hits: u32,
    /// Entry band width as a fraction of image width.
    pub start_zone: f64,
    /// Exit band width as a fraction of image width.
    pub stop_zone: f64,
    /// Detections below this confidence are ignored.
    pub confidence_floor: f32,
    pub filter: FilterConfig,
}

impl TrackerConfig {
    pub fn new(variant: Variant) -> Self {
        TrackerConfig {
            variant,
            iou_threshold: 0.3,
            max_misses: 10,
            min_hits: 5,
            start_zone: 0.1,
            stop_zone: 0.1,
            confidence_floor: 0.0,
            filter: FilterConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(TrackError::InvalidConfig(format!(
                "iou_threshold must be in [0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.min_hits < 1 {
            return Err(TrackError::InvalidConfig("min_hits must be >= 1".into()));
        }
        for (name, zone) in [("start_zone", self.start_zone), ("stop_zone", self.stop_zone)] {
            if !(0.0..0.5).contains(&zone) {
                return Err(TrackError::InvalidConfig(format!(
                    "{name} must be in [0, 0.5), got {zone}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(TrackError::InvalidConfig(format!(
                "confidence_floor must be in [0, 1], got {}",
                self.confidence_floor
            )));
        }
        self.filter.validate()
    }

    /// Parses the `key = value` tracker config format.
    pub fn parse(text: &str) -> Result<Self, TrackError> {
        let mut cfg = TrackerConfig::new(Variant::Bl);
        let mut saw_variant = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrackError::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| TrackError::Parse(format!("line {}: bad {what}", lineno + 1));
            match key {
                "variant" => {
                    cfg.variant = value.parse()?;
                    saw_variant = true;
                }
                "iou_threshold" => {
                    cfg.iou_threshold = value.parse().map_err(|_| bad("iou_threshold"))?
                }
                "max_misses" => cfg.max_misses = value.parse().map_err(|_| bad("max_misses"))?,
                "min_hits" => cfg.min_hits = value.parse().map_err(|_| bad("min_hits"))?,
                "start_zone" => cfg.start_zone = value.parse().map_err(|_| bad("start_zone"))?,
                "stop_zone" => cfg.stop_zone = value.parse().map_err(|_| bad("stop_zone"))?,
                "confidence_floor" => {
                    cfg.confidence_floor = value.parse().map_err(|_| bad("confidence_floor"))?
                }
                "tau_dpt" => cfg.filter.tau_dpt = value.parse().map_err(|_| bad("tau_dpt"))?,
                "d_crop_min" => {
                    cfg.filter.d_crop_min = value.parse().map_err(|_| bad("d_crop_min"))?
                }
                "d_crop_max" => {
                    cfg.filter.d_crop_max = value.parse().map_err(|_| bad("d_crop_max"))?
                }
                other => {
                    return Err(TrackError::Parse(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        if !saw_variant {
            return Err(TrackError::Parse("missing key `variant`".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "variant = {}\niou_threshold = {}\nmax_misses = {}\nmin_hits = {}\n\
             start_zone = {}\nstop_zone = {}\nconfidence_floor = {}\n\
             tau_dpt = {}\nd_crop_min = {}\nd_crop_max = {}\n",
            self.variant,
            self.iou_threshold,
            self.max_misses,
            self.min_hits,
            self.start_zone,
            self.stop_zone,
            self.confidence_floor,
            self.filter.tau_dpt,
            self.filter.d_crop_min,
            self.filter.d_crop_max,
        )
    }
}

/// Intersection over union of two masks; 0 when both are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, TrackError> {
    if a.dims() != b.dims() {
        return Err(TrackError::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    let ca = a.pixel_count();
    let cb = b.pixel_count();
    if ca + cb == 0 {
        return Ok(0.0);
    }
    let inter = a.intersection_count(b);
    Ok(inter as f64 / (ca + cb - inter) as f64)
}

/// Depth gate: true when the in-range fraction of the mask's depth values
/// strictly exceeds tau_dpt.
pub fn depth_retain(
    mask: &Mask,
    depth: &DepthImage,
    cfg: &FilterConfig,
) -> Result<bool, TrackError> {
    if mask.dims() != depth.dims() {
        return Err(TrackError::DimensionMismatch {
            expected: mask.dims(),
            actual: depth.dims(),
        });
    }
    let total = mask.pixel_count();
    if total == 0 {
        return Err(TrackError::EmptyMask);
    }
    let in_range = mask
        .pixels()
        .filter(|&(u, v)| {
            let d = depth.get(u, v);
            d >= cfg.d_crop_min && d <= cfg.d_crop_max
        })
        .count();
    Ok(in_range as f64 / total as f64 > cfg.tau_dpt)
}

/// Greedy association: all (tracklet, detection) pairs with IoU at or above
/// the threshold, taken in descending IoU order, each side used at most
/// once. Ties break toward the lower tracklet index, then the lower
/// detection index; callers keep tracklet masks ordered by tracklet id.
pub fn associate(
    predicted: &[Mask],
    detections: &FrameDetections,
    iou_threshold: f64,
) -> Vec<(usize, usize)> {
    let tracklets: Vec<&Mask> = predicted.iter().collect();
    let dets: Vec<&Mask> = detections.masks.iter().collect();
    associate_refs(&tracklets, &dets, iou_threshold)
}

fn associate_refs(predicted: &[&Mask], detections: &[&Mask], iou_threshold: f64) -> Vec<(usize, usize)> {
    struct Summary {
        count: usize,
        bounds: Option<(u32, u32, u32, u32)>,
    }
    let summarize = |m: &Mask| Summary {
        count: m.pixel_count(),
        bounds: m.bounds(),
    };
    let track_info: Vec<Summary> = predicted.iter().map(|m| summarize(m)).collect();
    let det_info: Vec<Summary> = detections.iter().map(|m| summarize(m)).collect();

    let mut scored: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, tm) in predicted.iter().enumerate() {
        let Some(tb) = track_info[ti].bounds else {
            continue;
        };
        for (di, dm) in detections.iter().enumerate() {
            let Some(db) = det_info[di].bounds else {
                continue;
            };
            if tb.0 > db.2 || db.0 > tb.2 || tb.1 > db.3 || db.1 > tb.3 {
                continue; // disjoint bounding boxes: IoU is zero
            }
            let inter = tm.intersection_count_rows(dm, tb.1.max(db.1), tb.3.min(db.3));
            if inter == 0 {
                continue; // non-overlapping pairs are never candidates
            }
            let union = track_info[ti].count + det_info[di].count - inter;
            let iou = inter as f64 / union as f64;
            if iou >= iou_threshold {
                scored.push((iou, ti, di));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut tracklet_used = vec![false; predicted.len()];
    let mut detection_used = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for (_, ti, di) in scored {
        if !tracklet_used[ti] && !detection_used[di] {
            tracklet_used[ti] = true;
            detection_used[di] = true;
            pairs.push((ti, di));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// One live track hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    /// Mask aligned to the tracker's current frame (re-projected each step
    /// for the rp/df variants).
    pub last_mask: Mask,
    /// Frame index of the last associated detection.
    pub last_frame: usize,
    pub miss_count: u32,
    pub hit_count: u32,
    pub born_in_start_zone: bool,
    /// Mask pixels with valid depth, the re-projection support set.
    points: Vec<(u32, u32, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackerState {
    pub active: Vec<Tracklet>,
    pub retired: Vec<Tracklet>,
    pub next_id: u64,
    pub frame_cursor: Option<usize>,
    last_odometry: Option<f64>,
}

/// Sequential per-row tracker; see the module docs for the pipeline.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    calib: Calibration,
    state: TrackerState,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, calib: Calibration) -> Result<Self, TrackError> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            calib,
            state: TrackerState::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    fn in_start_zone(&self, centroid_u: f64) -> bool {
        let width = self.calib.intrinsics.width as f64;
        centroid_u >= width * (1.0 - self.cfg.start_zone)
    }

    fn in_stop_zone(&self, centroid_u: f64) -> bool {
        let width = self.calib.intrinsics.width as f64;
        centroid_u < width * self.cfg.stop_zone
    }

    /// Consumes one frame. Frames must arrive in order, starting at 0.
    pub fn step(&mut self, frame: &FrameRecord) -> Result<(), TrackError> {
        let expected = self.state.frame_cursor.map_or(0, |c| c + 1);
        if frame.frame_index != expected {
            return Err(TrackError::OutOfOrderFrame {
                expected,
                got: frame.frame_index,
            });
        }
        let k = self.calib.intrinsics;
        if frame.depth.dims() != k.dims() {
            return Err(TrackError::DimensionMismatch {
                expected: k.dims(),
                actual: frame.depth.dims(),
            });
        }
        for mask in &frame.detections.masks {
            if mask.dims() != k.dims() {
                return Err(TrackError::DimensionMismatch {
                    expected: k.dims(),
                    actual: mask.dims(),
                });
            }
        }

        // Surviving detections: confidence floor, degenerate empties, and
        // (df only) the depth gate.
        let mut survivors: Vec<usize> = Vec::with_capacity(frame.detections.len());
        for (di, (mask, &conf)) in frame
            .detections
            .masks
            .iter()
            .zip(&frame.detections.confidences)
            .enumerate()
        {
            if conf < self.cfg.confidence_floor || mask.is_empty() {
                continue;
            }
            if self.cfg.variant == Variant::Df
                && !depth_retain(mask, &frame.depth, &self.cfg.filter)?
            {
                continue;
            }
            survivors.push(di);
        }

        // Advance every active tracklet's mask to this frame.
        if self.cfg.variant.reprojects() {
            let motion = match self.state.last_odometry {
                Some(prev) => {
                    let advance = frame.odometry_distance - prev;
                    geom::camera_motion(
                        &Transform::from_translation([-advance, 0.0, 0.0]),
                        &self.calib.t_ec,
                    )
                }
                None => Transform::identity(),
            };
            for tracklet in &mut self.state.active {
                let landed = geom::warp_depth_pixels(&tracklet.points, &motion, &k);
                let mut mask = Mask::new(k.width, k.height);
                for &(u, v, _) in &landed {
                    mask.set(u, v);
                }
                tracklet.last_mask = mask.close3x3();
                tracklet.points = landed;
            }
        }

        let predicted: Vec<&Mask> = self.state.active.iter().map(|t| &t.last_mask).collect();
        let survivor_masks: Vec<&Mask> =
            survivors.iter().map(|&di| &frame.detections.masks[di]).collect();
        let pairs = associate_refs(&predicted, &survivor_masks, self.cfg.iou_threshold);

        let mut detection_matched = vec![false; survivor_masks.len()];
        let mut tracklet_matched = vec![false; self.state.active.len()];
        for &(ti, di) in &pairs {
            detection_matched[di] = true;
            tracklet_matched[ti] = true;
            let det_mask = survivor_masks[di];
            let tracklet = &mut self.state.active[ti];
            tracklet.points = mask_depth_points(det_mask, &frame.depth);
            tracklet.last_mask = det_mask.clone();
            tracklet.last_frame = frame.frame_index;
            tracklet.miss_count = 0;
            tracklet.hit_count += 1;
        }
        for (tracklet, matched) in self.state.active.iter_mut().zip(&tracklet_matched) {
            if !matched {
                tracklet.miss_count += 1;
            }
        }

        // Spawn from unmatched detections outside the border zones.
        for (di, &mask) in survivor_masks.iter().enumerate() {
            if detection_matched[di] {
                continue;
            }
            let (cu, _) = mask.centroid().expect("survivors are non-empty");
            if self.in_stop_zone(cu) || self.in_start_zone(cu) {
                continue;
            }
            let tracklet = Tracklet {
                id: self.state.next_id,
                last_mask: mask.clone(),
                last_frame: frame.frame_index,
                miss_count: 0,
                hit_count: 1,
                born_in_start_zone: self.in_start_zone(cu),
                points: mask_depth_points(mask, &frame.depth),
            };
            self.state.next_id += 1;
            self.state.active.push(tracklet);
        }

        // Retire: too many misses, or centroid entered the stop zone.
        let max_misses = self.cfg.max_misses;
        let mut i = 0;
        while i < self.state.active.len() {
            let tracklet = &self.state.active[i];
            let exited = tracklet
                .last_mask
                .centroid()
                .is_some_and(|(cu, _)| self.in_stop_zone(cu));
            if tracklet.miss_count > max_misses || exited {
                let t = self.state.active.remove(i);
                self.state.retired.push(t);
            } else {
                i += 1;
            }
        }

        self.state.frame_cursor = Some(frame.frame_index);
        self.state.last_odometry = Some(frame.odometry_distance);
        Ok(())
    }

    /// Final fruit count: tracklets with enough associated detections that
    /// were not born inside the start zone.
    pub fn finalize(&self) -> usize {
        self.state
            .active
            .iter()
            .chain(&self.state.retired)
            .filter(|t| t.hit_count >= self.cfg.min_hits && !t.born_in_start_zone)
            .count()
    }
}

fn mask_depth_points(mask: &Mask, depth: &DepthImage) -> Vec<(u32, u32, f64)> {
    mask.pixels()
        .map(|(u, v)| (u, v, depth.get(u, v)))
        .filter(|&(_, _, d)| d > 0.0)
        .collect()
}

/// Runs a tracker over a whole row and returns the predicted count.
pub fn count_row<'a, I>(frames: I, cfg: TrackerConfig, calib: Calibration) -> Result<usize, TrackError>
where
    I: IntoIterator<Item = &'a FrameRecord>,
{
    let mut tracker = Tracker::new(cfg, calib)?;
    for frame in frames {
        tracker.step(frame)?;
    }
    Ok(tracker.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Intrinsics, Point3};
    use crate::rng::Rng;
    use crate::sim::{
        generate_scene, simulate_row, FruitSpec, NoiseSpec, RowTag, SceneSpec, ScatterSpec,
    };

    fn small_calib() -> Calibration {
        Calibration::new(Intrinsics::scaled_camera(640, 360), Transform::identity())
    }

    fn square(w: u32, h: u32, u0: u32, v0: u32, side: u32) -> Mask {
        Mask::from_pixels(
            w,
            h,
            (v0..v0 + side).flat_map(move |v| (u0..u0 + side).map(move |u| (u, v))),
        )
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = square(64, 64, 10, 10, 8);
        let b = square(64, 64, 40, 40, 8);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(mask_iou(&Mask::new(8, 8), &Mask::new(8, 8)).unwrap(), 0.0);
    }

    #[test]
    fn iou_half_shifted_square_is_one_third() {
        // 10x10 squares shifted by 5 px: |inter| = 50, |union| = 150.
        let a = square(64, 64, 10, 10, 10);
        let b = square(64, 64, 15, 10, 10);
        let iou = mask_iou(&a, &b).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rejects_dimension_mismatch() {
        assert!(matches!(
            mask_iou(&Mask::new(8, 8), &Mask::new(9, 8)),
            Err(TrackError::DimensionMismatch { .. })
        ));
    }

    fn uniform_depth(w: u32, h: u32, meters: f64) -> DepthImage {
        let mut d = DepthImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                d.set_meters(u, v, meters);
            }
        }
        d
    }

    #[test]
    fn depth_retain_majority_in_range() {
        // 60% of pixels at 1.0 m, the rest at 2.5 m.
        let mask = square(100, 10, 0, 0, 10);
        let mut depth = uniform_depth(100, 10, 2.5);
        for v in 0..10 {
            for u in 0..6 {
                depth.set_meters(u, v, 1.0);
            }
        }
        let cfg = FilterConfig::default();
        assert!(depth_retain(&mask, &depth, &cfg).unwrap());
    }

    #[test]
    fn depth_retain_rejects_out_of_range_mask() {
        let mask = square(64, 64, 5, 5, 10);
        let depth = uniform_depth(64, 64, 2.5);
        assert!(!depth_retain(&mask, &depth, &FilterConfig::default()).unwrap());
    }

    #[test]
    fn depth_retain_uses_strict_inequality() {
        // Exactly half the pixels in range with tau = 0.5 must fail.
        let mask = square(64, 64, 0, 0, 10);
        let mut depth = uniform_depth(64, 64, 2.5);
        for v in 0..10 {
            for u in 0..10 {
                if (u + v) % 2 == 0 {
                    depth.set_meters(u, v, 1.0);
                }
            }
        }
        let cfg = FilterConfig::default();
        assert!(!depth_retain(&mask, &depth, &cfg).unwrap());
        let looser = FilterConfig {
            tau_dpt: 0.49,
            ..cfg
        };
        assert!(depth_retain(&mask, &depth, &looser).unwrap());
    }

    #[test]
    fn depth_retain_counts_invalid_depth_in_denominator_only() {
        // Half the mask has no depth return; the valid half is in range.
        let mask = square(64, 64, 0, 0, 10);
        let mut depth = DepthImage::new(64, 64);
        for v in 0..10 {
            for u in 0..5 {
                depth.set_meters(u, v, 1.0);
            }
        }
        let cfg = FilterConfig::default(); // tau 0.5: 50/100 not > 0.5
        assert!(!depth_retain(&mask, &depth, &cfg).unwrap());
        let looser = FilterConfig {
            tau_dpt: 0.4,
            ..cfg
        };
        assert!(depth_retain(&mask, &depth, &looser).unwrap());
    }

    #[test]
    fn depth_retain_rejects_empty_mask_and_bad_dims() {
        let depth = uniform_depth(64, 64, 1.0);
        assert!(matches!(
            depth_retain(&Mask::new(64, 64), &depth, &FilterConfig::default()),
            Err(TrackError::EmptyMask)
        ));
        assert!(matches!(
            depth_retain(&square(32, 32, 0, 0, 4), &depth, &FilterConfig::default()),
            Err(TrackError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn associate_threshold_behavior() {
        let t = square(64, 64, 10, 10, 10);
        let close = square(64, 64, 11, 10, 10); // IoU 9/11·... well above 0.3
        let far = square(64, 64, 17, 10, 10); // IoU 3/17 < 0.3
        let dets = FrameDetections::new(0, vec![close], vec![1.0]);
        assert_eq!(associate(std::slice::from_ref(&t), &dets, 0.3), vec![(0, 0)]);
        let dets = FrameDetections::new(0, vec![far], vec![1.0]);
        assert_eq!(associate(&[t], &dets, 0.3), vec![]);
    }

    #[test]
    fn associate_prefers_higher_iou() {
        // Two tracklets overlap one detection with IoU 0.6 vs 0.4-ish; the
        // greedy pass must give the detection to the stronger pair. Oracle:
        // with one detection every assignment contains one pair, so greedy
        // (max IoU) is optimal by enumeration.
        let det = square(64, 64, 10, 10, 10);
        let strong = square(64, 64, 12, 10, 10); // inter 80, union 120 -> 2/3
        let weak = square(64, 64, 15, 10, 10); // inter 50, union 150 -> 1/3
        let dets = FrameDetections::new(0, vec![det], vec![1.0]);
        let pairs = associate(&[weak, strong], &dets, 0.2);
        assert_eq!(pairs, vec![(1, 0)]);
    }

    #[test]
    fn associate_is_a_partial_bijection() {
        let mut rng = Rng::new(77);
        for _ in 0..30 {
            let masks: Vec<Mask> = (0..6)
                .map(|_| {
                    square(
                        64,
                        64,
                        rng.uniform_i64(0, 50) as u32,
                        rng.uniform_i64(0, 50) as u32,
                        rng.uniform_i64(4, 12) as u32,
                    )
                })
                .collect();
            let dets = FrameDetections::new(0, masks[3..].to_vec(), vec![1.0; 3]);
            let pairs = associate(&masks[..3], &dets, 0.1);
            let mut ts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut ds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            ts.dedup();
            ds.sort_unstable();
            ds.dedup();
            assert_eq!(ts.len(), pairs.len());
            assert_eq!(ds.len(), pairs.len());
        }
    }

    fn single_fruit_frames() -> (Vec<crate::sim::FrameRecord>, usize) {
        let mut spec = SceneSpec::new(2.4);
        spec.fruits.push(FruitSpec {
            center: Point3::new(1.2, 0.0, 0.6),
            radius: 0.05,
            row: RowTag::Foreground,
        });
        let scene = generate_scene(&spec, 0).unwrap();
        let k = Intrinsics::scaled_camera(640, 360);
        let frames = simulate_row(&scene, &k, &NoiseSpec::none(0));
        (frames, scene.fruits.len())
    }

    #[test]
    fn clean_crossing_yields_one_counted_tracklet() {
        let (frames, _) = single_fruit_frames();
        for variant in Variant::ALL {
            let mut tracker =
                Tracker::new(TrackerConfig::new(variant), small_calib()).unwrap();
            for frame in &frames {
                tracker.step(frame).unwrap();
            }
            assert_eq!(tracker.finalize(), 1, "variant {variant}");
            let state = tracker.state();
            assert_eq!(state.active.len() + state.retired.len(), 1, "variant {variant}");

            // Independent geometric oracle for the hit count: frames where
            // the projected center sits between the border zones.
            let k = Intrinsics::scaled_camera(640, 360);
            let legit = frames
                .iter()
                .filter(|f| {
                    let cam = Point3::new(1.2 - f.odometry_distance, 0.0, 0.6);
                    crate::geom::project(cam, &k).is_ok_and(|px| {
                        px.u >= 0.1 * 640.0 && px.u < 0.9 * 640.0
                    })
                })
                .count();
            let tracked = state.active.iter().chain(&state.retired).next().unwrap();
            assert!(
                (tracked.hit_count as i64 - legit as i64).abs() <= 2,
                "variant {variant}: hit_count {} vs oracle {legit}",
                tracked.hit_count
            );
        }
    }

    #[test]
    fn single_flash_detection_never_counts() {
        let k = Intrinsics::scaled_camera(640, 360);
        let calib = small_calib();
        let mask = square(k.width, k.height, 300, 170, 20);
        let depth = uniform_depth(k.width, k.height, 1.0);
        let mut tracker = Tracker::new(TrackerConfig::new(Variant::Bl), calib).unwrap();
        let max_misses = tracker.config().max_misses as usize;
        for i in 0..(max_misses + 3) {
            let detections = if i == 0 {
                FrameDetections::new(i, vec![mask.clone()], vec![1.0])
            } else {
                FrameDetections::empty(i)
            };
            let frame = crate::sim::FrameRecord {
                frame_index: i,
                odometry_distance: i as f64 * 0.0133,
                detections,
                depth: depth.clone(),
                gt_ids: None,
            };
            tracker.step(&frame).unwrap();
        }
        let state = tracker.state();
        assert!(state.active.is_empty());
        assert_eq!(state.retired.len(), 1);
        assert_eq!(state.retired[0].hit_count, 1);
        assert_eq!(tracker.finalize(), 0);
    }

    #[test]
    fn df_never_spawns_on_out_of_range_depths() {
        let k = Intrinsics::scaled_camera(640, 360);
        let mask = square(k.width, k.height, 300, 170, 20);
        let depth = uniform_depth(k.width, k.height, 2.0);
        let mut tracker = Tracker::new(TrackerConfig::new(Variant::Df), small_calib()).unwrap();
        for i in 0..20 {
            let frame = crate::sim::FrameRecord {
                frame_index: i,
                odometry_distance: i as f64 * 0.0133,
                detections: FrameDetections::new(i, vec![mask.clone()], vec![1.0]),
                depth: depth.clone(),
                gt_ids: None,
            };
            tracker.step(&frame).unwrap();
        }
        assert!(tracker.state().active.is_empty() && tracker.state().retired.is_empty());
        assert_eq!(tracker.finalize(), 0);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let (frames, _) = single_fruit_frames();
        let mut tracker = Tracker::new(TrackerConfig::new(Variant::Rp), small_calib()).unwrap();
        tracker.step(&frames[0]).unwrap();
        assert!(matches!(
            tracker.step(&frames[2]),
            Err(TrackError::OutOfOrderFrame { expected: 1, got: 2 })
        ));
        // First frame must be index 0.
        let mut fresh = Tracker::new(TrackerConfig::new(Variant::Rp), small_calib()).unwrap();
        assert!(matches!(
            fresh.step(&frames[1]),
            Err(TrackError::OutOfOrderFrame { expected: 0, got: 1 })
        ));
    }

    #[test]
    fn bl_equals_rp_under_zero_odometry() {
        // With the platform standing still the re-projection is the
        // identity, and both variants must evolve identically. Only the
        // odometry the tracker sees is zeroed; the rendered masks stay put.
        let (mut frames, _) = single_fruit_frames();
        for frame in &mut frames {
            frame.odometry_distance = 0.0;
        }
        let mut bl = Tracker::new(TrackerConfig::new(Variant::Bl), small_calib()).unwrap();
        let mut rp = Tracker::new(TrackerConfig::new(Variant::Rp), small_calib()).unwrap();
        for frame in &frames {
            bl.step(frame).unwrap();
            rp.step(frame).unwrap();
            assert_eq!(bl.state().active, rp.state().active);
            assert_eq!(bl.state().retired, rp.state().retired);
        }
    }

    #[test]
    fn reprojected_tracklet_overlaps_next_true_mask() {
        // Exact odometry and a static fruit: the re-projected mask must sit
        // nearly on top of the next frame's rendered mask.
        let (frames, _) = single_fruit_frames();
        let calib = small_calib();
        let mut tracker = Tracker::new(TrackerConfig::new(Variant::Rp), calib).unwrap();
        let mut checked = 0;
        for pair in frames.windows(2) {
            tracker.step(&pair[0]).unwrap();
            if pair[0].detections.is_empty() || pair[1].detections.is_empty() {
                continue;
            }
            if tracker.state().active.is_empty() {
                continue;
            }
            // Predict into the next frame exactly as step() will.
            let mut probe = tracker.clone();
            probe.step(&pair[1]).unwrap();
            let t = match probe.state().active.first() {
                Some(t) if t.last_frame == pair[1].frame_index => t,
                _ => continue,
            };
            let iou = mask_iou(&t.last_mask, &pair[1].detections.masks[0]).unwrap();
            assert!(iou >= 0.8, "re-projected IoU {iou} at frame {}", pair[1].frame_index);
            checked += 1;
        }
        assert!(checked > 20, "only {checked} frames checked");
    }

    #[test]
    fn df_count_never_exceeds_rp_count() {
        let mut spec = SceneSpec::new(3.0);
        spec.scatter.push(ScatterSpec {
            count: 6,
            x: (0.9, 2.1),
            y: (-0.06, 0.06),
            z: (0.5, 0.9),
            radius: (0.045, 0.055),
            row: RowTag::Foreground,
        });
        spec.scatter.push(ScatterSpec {
            count: 4,
            x: (1.0, 2.0),
            y: (-0.15, 0.15),
            z: (1.55, 1.75),
            radius: (0.04, 0.05),
            row: RowTag::Background,
        });
        let scene = generate_scene(&spec, 5).unwrap();
        let k = Intrinsics::scaled_camera(640, 360);
        for seed in 0..3 {
            let frames = simulate_row(&scene, &k, &NoiseSpec::benchmark_defaults(seed));
            for iou in [0.2, 0.3, 0.4] {
                let mut rp_cfg = TrackerConfig::new(Variant::Rp);
                rp_cfg.iou_threshold = iou;
                let mut df_cfg = TrackerConfig::new(Variant::Df);
                df_cfg.iou_threshold = iou;
                let rp = count_row(&frames, rp_cfg, small_calib()).unwrap();
                let df = count_row(&frames, df_cfg, small_calib()).unwrap();
                // The scene has background fruit, so rp strictly overcounts.
                assert!(df < rp, "df {df} >= rp {rp} at seed {seed}, iou {iou}");
            }
        }
    }

    #[test]
    fn removing_evidence_never_increases_rp_count() {
        // Monotonicity in evidence, checked for the re-projecting variant
        // where coasting is exact: dropping one detection from the stream
        // cannot raise the final count.
        let (frames, _) = single_fruit_frames();
        let calib = small_calib();
        let cfg = TrackerConfig::new(Variant::Rp);
        let full = count_row(&frames, cfg, calib).unwrap();
        let mut rng = Rng::new(101);
        for _ in 0..12 {
            let victim = rng.uniform_i64(0, frames.len() as i64 - 1) as usize;
            let thinned: Vec<crate::sim::FrameRecord> = frames
                .iter()
                .map(|f| {
                    let mut f = f.clone();
                    if f.frame_index == victim && !f.detections.is_empty() {
                        f.detections = FrameDetections::empty(f.frame_index);
                        f.gt_ids = Some(Vec::new());
                    }
                    f
                })
                .collect();
            let thinned_count = count_row(&thinned, cfg, calib).unwrap();
            assert!(
                thinned_count <= full,
                "dropping frame {victim} raised the count: {thinned_count} > {full}"
            );
        }
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let mut cfg = TrackerConfig::new(Variant::Df);
        cfg.iou_threshold = 0.25;
        cfg.filter.tau_dpt = 0.5;
        let text = cfg.to_config_string();
        assert_eq!(TrackerConfig::parse(&text).unwrap(), cfg);

        assert!(TrackerConfig::parse("iou_threshold = 0.3\n").is_err()); // no variant
        let mut bad = TrackerConfig::new(Variant::Bl);
        bad.iou_threshold = 1.5;
        assert!(bad.validate().is_err());
        bad = TrackerConfig::new(Variant::Bl);
        bad.start_zone = 0.5;
        assert!(bad.validate().is_err());
        bad = TrackerConfig::new(Variant::Bl);
        bad.min_hits = 0;
        assert!(bad.validate().is_err());
    }
}
