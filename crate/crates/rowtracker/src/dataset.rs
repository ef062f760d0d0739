//! On-disk row dataset format.
//!
//! Layout under the dataset root:
//!
//! ```text
//! row1/
//!   manifest.txt        frames = N, camera = <id>, calibration = <file>,
//!                       gt_count = <n> (optional)
//!   calibration.txt     intrinsics + t_ec (see geom)
//!   odometry.csv        frame_index,distance_m  (cumulative rail meters)
//!   frames/
//!     000000.masks      RLE mask records, one per detection
//!     000000.depth      16-bit little-endian millimeters, 8-byte header
//!     ...
//! ```
//!
//! Mask records are UTF-8: a `width height count` header line followed by
//! `count` run lengths alternating background/foreground, starting with
//! background (possibly 0). Detection confidences are not persisted; loaded
//! detections carry confidence 1.0.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::geom::Calibration;
use crate::mask::{DepthImage, FrameDetections, Mask};
use crate::sim::FrameRecord;

#[derive(Debug)]
pub enum DatasetError {
    MissingFile {
        frame: Option<usize>,
        path: PathBuf,
    },
    CorruptData {
        frame: Option<usize>,
        reason: String,
    },
    DimensionMismatch {
        frame: usize,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    Io(io::Error),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::MissingFile { frame, path } => match frame {
                Some(i) => write!(f, "frame {i}: missing file {}", path.display()),
                None => write!(f, "missing file {}", path.display()),
            },
            DatasetError::CorruptData { frame, reason } => match frame {
                Some(i) => write!(f, "frame {i}: {reason}"),
                None => write!(f, "{reason}"),
            },
            DatasetError::DimensionMismatch {
                frame,
                expected,
                actual,
            } => write!(
                f,
                "frame {frame}: dimension mismatch, expected {}x{} got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            DatasetError::Io(err) => write!(f, "dataset i/o error: {err}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<io::Error> for DatasetError {
    fn from(err: io::Error) -> Self {
        DatasetError::Io(err)
    }
}

fn corrupt(frame: Option<usize>, reason: impl Into<String>) -> DatasetError {
    DatasetError::CorruptData {
        frame,
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Mask RLE records

/// Encodes one mask as its canonical RLE record.
pub fn encode_mask_record(mask: &Mask) -> String {
    let mut runs: Vec<usize> = Vec::new();
    let mut current_fg = false;
    let mut run = 0usize;
    let total = mask.bit_len();
    let width = mask.width();
    for i in 0..total {
        let bit = mask.get((i % width as usize) as u32, (i / width as usize) as u32);
        if bit == current_fg {
            run += 1;
        } else {
            runs.push(run);
            current_fg = bit;
            run = 1;
        }
    }
    runs.push(run);
    let mut out = format!("{} {} {}\n", mask.width(), mask.height(), runs.len());
    let joined: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
    out.push_str(&joined.join(" "));
    out.push('\n');
    out
}

/// Decodes the RLE records of one frame's mask file.
pub fn decode_mask_records(text: &str, frame: usize) -> Result<Vec<Mask>, DatasetError> {
    let mut tokens = text.split_whitespace().peekable();
    let mut masks = Vec::new();
    while tokens.peek().is_some() {
        let mut next_usize = |what: &str| -> Result<usize, DatasetError> {
            tokens
                .next()
                .ok_or_else(|| corrupt(Some(frame), format!("truncated mask record ({what})")))?
                .parse::<usize>()
                .map_err(|_| corrupt(Some(frame), format!("bad {what} in mask record")))
        };
        let width = next_usize("width")? as u32;
        let height = next_usize("height")? as u32;
        let count = next_usize("run count")?;
        let mut runs = Vec::with_capacity(count);
        for _ in 0..count {
            runs.push(next_usize("run length")?);
        }
        let total: usize = runs.iter().sum();
        if total != width as usize * height as usize {
            return Err(corrupt(
                Some(frame),
                format!(
                    "mask runs sum to {total}, expected {}",
                    width as usize * height as usize
                ),
            ));
        }
        let mut mask = Mask::new(width, height);
        let mut cursor = 0usize;
        for (ri, &run) in runs.iter().enumerate() {
            if ri % 2 == 1 {
                for i in cursor..cursor + run {
                    mask.set((i % width as usize) as u32, (i / width as usize) as u32);
                }
            }
            cursor += run;
        }
        masks.push(mask);
    }
    Ok(masks)
}

// ---------------------------------------------------------------------------
// Depth binary grid

pub fn encode_depth(depth: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + depth.mm_values().len() * 2);
    out.extend_from_slice(&depth.width().to_le_bytes());
    out.extend_from_slice(&depth.height().to_le_bytes());
    for &mm in depth.mm_values() {
        out.extend_from_slice(&mm.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], frame: usize) -> Result<DepthImage, DatasetError> {
    if bytes.len() < 8 {
        return Err(corrupt(Some(frame), "depth file shorter than its header"));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let expected = 8 + width as usize * height as usize * 2;
    if bytes.len() != expected {
        return Err(corrupt(
            Some(frame),
            format!("depth file is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mm: Vec<u16> = bytes[8..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(DepthImage::from_mm(width, height, mm))
}

/// Reads only the dimensions from a depth file header.
fn read_depth_dims(path: &Path, frame: usize) -> Result<(u32, u32), DatasetError> {
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header)
        .map_err(|_| corrupt(Some(frame), "depth file shorter than its header"))?;
    Ok((
        u32::from_le_bytes(header[0..4].try_into().unwrap()),
        u32::from_le_bytes(header[4..8].try_into().unwrap()),
    ))
}

// ---------------------------------------------------------------------------
// Paths and atomic writes

fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.txt")
}

fn odometry_path(root: &Path) -> PathBuf {
    root.join("odometry.csv")
}

fn masks_path(root: &Path, frame: usize) -> PathBuf {
    root.join("frames").join(format!("{frame:06}.masks"))
}

fn depth_path(root: &Path, frame: usize) -> PathBuf {
    root.join("frames").join(format!("{frame:06}.depth"))
}

/// Write-then-rename so consumers never observe partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// RowDataset

/// A validated on-disk row recording with lazy per-frame loading.
#[derive(Debug, Clone)]
pub struct RowDataset {
    root: PathBuf,
    pub frame_count: usize,
    pub camera_id: String,
    pub calibration: Option<Calibration>,
    pub gt_count: Option<usize>,
    odometry: Vec<f64>,
}

impl RowDataset {
    /// Loads and validates a dataset: manifest, calibration, odometry
    /// monotonicity, presence of every frame file, and dimension consistency
    /// of every frame header against the calibration.
    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let manifest_file = manifest_path(root);
        let manifest = fs::read_to_string(&manifest_file).map_err(|_| DatasetError::MissingFile {
            frame: None,
            path: manifest_file.clone(),
        })?;

        let mut frame_count = None;
        let mut camera_id = None;
        let mut calibration_ref: Option<String> = None;
        let mut gt_count = None;
        for (lineno, raw) in manifest.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| corrupt(None, format!("manifest line {}: expected key = value", lineno + 1)))?;
            match key.trim() {
                "frames" => {
                    frame_count = Some(value.trim().parse::<usize>().map_err(|_| {
                        corrupt(None, format!("manifest line {}: bad frame count", lineno + 1))
                    })?)
                }
                "camera" => camera_id = Some(value.trim().to_string()),
                "calibration" => calibration_ref = Some(value.trim().to_string()),
                "gt_count" => {
                    gt_count = Some(value.trim().parse::<usize>().map_err(|_| {
                        corrupt(None, format!("manifest line {}: bad gt_count", lineno + 1))
                    })?)
                }
                other => {
                    return Err(corrupt(
                        None,
                        format!("manifest line {}: unknown key `{other}`", lineno + 1),
                    ))
                }
            }
        }
        let frame_count = frame_count.ok_or_else(|| corrupt(None, "manifest missing `frames`"))?;
        let camera_id = camera_id.ok_or_else(|| corrupt(None, "manifest missing `camera`"))?;

        let calibration = match calibration_ref {
            Some(rel) => {
                let calib_path = root.join(&rel);
                if !calib_path.exists() {
                    return Err(DatasetError::MissingFile {
                        frame: None,
                        path: calib_path,
                    });
                }
                Some(
                    Calibration::read(&calib_path)
                        .map_err(|e| corrupt(None, format!("calibration: {e}")))?,
                )
            }
            None => None,
        };

        let odo_file = odometry_path(root);
        let odo_text = fs::read_to_string(&odo_file).map_err(|_| DatasetError::MissingFile {
            frame: None,
            path: odo_file.clone(),
        })?;
        let odometry = parse_odometry(&odo_text, frame_count)?;

        let dataset = RowDataset {
            root: root.to_path_buf(),
            frame_count,
            camera_id,
            calibration,
            gt_count,
            odometry,
        };
        dataset.validate_frame_files()?;
        Ok(dataset)
    }

    fn validate_frame_files(&self) -> Result<(), DatasetError> {
        for frame in 0..self.frame_count {
            let masks = masks_path(&self.root, frame);
            if !masks.exists() {
                return Err(DatasetError::MissingFile {
                    frame: Some(frame),
                    path: masks,
                });
            }
            let depth = depth_path(&self.root, frame);
            if !depth.exists() {
                return Err(DatasetError::MissingFile {
                    frame: Some(frame),
                    path: depth,
                });
            }
            if let Some(calib) = &self.calibration {
                let dims = read_depth_dims(&depth, frame)?;
                let expected = calib.intrinsics.dims();
                if dims != expected {
                    return Err(DatasetError::DimensionMismatch {
                        frame,
                        expected,
                        actual: dims,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Row identifier: the dataset directory name.
    pub fn row_id(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.root.display().to_string())
    }

    pub fn odometry(&self) -> &[f64] {
        &self.odometry
    }

    /// Loads one frame from disk. Detections carry confidence 1.0 and no
    /// ground-truth identities.
    pub fn load_frame(&self, frame: usize) -> Result<FrameRecord, DatasetError> {
        if frame >= self.frame_count {
            return Err(corrupt(
                Some(frame),
                format!("frame index out of range (dataset has {})", self.frame_count),
            ));
        }
        let masks_file = masks_path(&self.root, frame);
        let text = fs::read_to_string(&masks_file).map_err(|_| DatasetError::MissingFile {
            frame: Some(frame),
            path: masks_file,
        })?;
        let masks = decode_mask_records(&text, frame)?;

        let depth_file = depth_path(&self.root, frame);
        let bytes = fs::read(&depth_file).map_err(|_| DatasetError::MissingFile {
            frame: Some(frame),
            path: depth_file,
        })?;
        let depth = decode_depth(&bytes, frame)?;

        let expected = match &self.calibration {
            Some(calib) => calib.intrinsics.dims(),
            None => depth.dims(),
        };
        if depth.dims() != expected {
            return Err(DatasetError::DimensionMismatch {
                frame,
                expected,
                actual: depth.dims(),
            });
        }
        for mask in &masks {
            if mask.dims() != expected {
                return Err(DatasetError::DimensionMismatch {
                    frame,
                    expected,
                    actual: mask.dims(),
                });
            }
        }

        let confidences = vec![1.0f32; masks.len()];
        Ok(FrameRecord {
            frame_index: frame,
            odometry_distance: self.odometry[frame],
            detections: FrameDetections::new(frame, masks, confidences),
            depth,
            gt_ids: None,
        })
    }

    pub fn load_all_frames(&self) -> Result<Vec<FrameRecord>, DatasetError> {
        (0..self.frame_count).map(|i| self.load_frame(i)).collect()
    }
}

fn parse_odometry(text: &str, frame_count: usize) -> Result<Vec<f64>, DatasetError> {
    let mut odometry = Vec::with_capacity(frame_count);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame_index")) {
            continue;
        }
        let (idx, dist) = line
            .split_once(',')
            .ok_or_else(|| corrupt(None, format!("odometry line {}: expected two fields", lineno + 1)))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| corrupt(None, format!("odometry line {}: bad frame index", lineno + 1)))?;
        if idx != odometry.len() {
            return Err(corrupt(
                Some(odometry.len()),
                format!("odometry entries out of order at line {}", lineno + 1),
            ));
        }
        let dist: f64 = dist
            .trim()
            .parse()
            .map_err(|_| corrupt(Some(idx), format!("odometry line {}: bad distance", lineno + 1)))?;
        if let Some(&prev) = odometry.last() {
            if dist < prev {
                return Err(corrupt(
                    Some(idx),
                    format!("odometry decreases at frame {idx}: {dist} < {prev}"),
                ));
            }
        }
        odometry.push(dist);
    }
    if odometry.len() != frame_count {
        return Err(corrupt(
            None,
            format!(
                "odometry has {} entries, manifest says {frame_count}",
                odometry.len()
            ),
        ));
    }
    Ok(odometry)
}

/// Writes a complete dataset. Existing files are replaced atomically; the
/// frame files carry exactly the in-memory masks, millimeter depths, and
/// odometry readings, so loading reproduces the records bit for bit.
pub fn save_dataset(
    root: &Path,
    frames: &[FrameRecord],
    calib: &Calibration,
    camera_id: &str,
    gt_count: Option<usize>,
) -> Result<(), DatasetError> {
    fs::create_dir_all(root.join("frames"))?;

    let mut manifest = format!(
        "frames = {}\ncamera = {}\ncalibration = calibration.txt\n",
        frames.len(),
        camera_id
    );
    if let Some(gt) = gt_count {
        manifest.push_str(&format!("gt_count = {gt}\n"));
    }
    write_atomic(&manifest_path(root), manifest.as_bytes())?;
    write_atomic(
        &root.join("calibration.txt"),
        calib.to_config_string().as_bytes(),
    )?;

    let mut odometry = String::from("frame_index,distance_m\n");
    for frame in frames {
        odometry.push_str(&format!("{},{}\n", frame.frame_index, frame.odometry_distance));
    }
    write_atomic(&odometry_path(root), odometry.as_bytes())?;

    for frame in frames {
        let mut records = String::new();
        for mask in &frame.detections.masks {
            records.push_str(&encode_mask_record(mask));
        }
        write_atomic(&masks_path(root, frame.frame_index), records.as_bytes())?;
        write_atomic(
            &depth_path(root, frame.frame_index),
            &encode_depth(&frame.depth),
        )?;
    }
    Ok(())
}
