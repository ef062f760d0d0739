//! Counting metrics and the per-variant, per-IoU experiment harness.
//!
//! Normalized error is |GT − pred| / GT per row; rows with GT = 0 are
//! excluded from NE aggregation (the ratio is undefined there) but kept in
//! the R² series and flagged in the report. The reported std is the
//! population standard deviation: the evaluated rows are the whole
//! experiment, not a sample.
//!
//! Sweep cells are independent and could run concurrently; the report is
//! assembled as a deterministic ordered reduction either way.

use std::fmt;

use crate::dataset::RowDataset;
use crate::geom::Calibration;
use crate::sim::FrameRecord;
use crate::track::{count_row, TrackerConfig, Variant};

#[derive(Debug)]
pub enum EvalError {
    /// NE is undefined for rows with zero ground truth.
    ZeroGroundTruth,
    EmptyInput,
    /// Constant ground-truth series makes R² undefined (SS_tot = 0).
    DegenerateInput,
    LengthMismatch { gts: usize, preds: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::ZeroGroundTruth => write!(f, "ground truth count is zero"),
            EvalError::EmptyInput => write!(f, "empty input"),
            EvalError::DegenerateInput => {
                write!(f, "ground-truth series is constant; R² undefined")
            }
            EvalError::LengthMismatch { gts, preds } => {
                write!(f, "series length mismatch: {gts} ground truths, {preds} predictions")
            }
        }
    }
}

impl std::error::Error for EvalError {}

/// Normalized error of a row count: |GT − pred| / GT.
pub fn normalized_error(gt: usize, pred: usize) -> Result<f64, EvalError> {
    if gt == 0 {
        return Err(EvalError::ZeroGroundTruth);
    }
    Ok((gt as f64 - pred as f64).abs() / gt as f64)
}

/// Arithmetic mean and population standard deviation (n divisor).
pub fn aggregate(errors: &[f64]) -> Result<(f64, f64), EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Coefficient of determination 1 − SS_res / SS_tot; may be negative.
pub fn r_squared(gts: &[f64], preds: &[f64]) -> Result<f64, EvalError> {
    if gts.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            gts: gts.len(),
            preds: preds.len(),
        });
    }
    if gts.len() < 2 {
        return Err(EvalError::EmptyInput);
    }
    let mean = gts.iter().sum::<f64>() / gts.len() as f64;
    let ss_tot: f64 = gts.iter().map(|g| (g - mean) * (g - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateInput);
    }
    let ss_res: f64 = gts
        .iter()
        .zip(preds)
        .map(|(g, p)| (g - p) * (g - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One sweep cell result: a (row, variant, IoU threshold) tracker run.
/// `pred`/`ne` are `None` for failed cells or (ne only) zero-GT rows, with
/// the reason in `note`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRecord {
    pub row_id: String,
    pub variant: Variant,
    pub iou: f64,
    pub gt: usize,
    pub pred: Option<usize>,
    pub ne: Option<f64>,
    pub note: Option<String>,
}

/// Aggregates over one (variant, IoU threshold) column of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub variant: Variant,
    pub iou: f64,
    pub mean_ne: Option<f64>,
    pub std_ne: Option<f64>,
    pub r_squared: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountReport {
    pub rows: Vec<RowRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl CountReport {
    pub fn aggregate_for(&self, variant: Variant, iou: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.variant == variant && a.iou == iou)
    }

    /// Recomputes the aggregate block from the per-row records; used both to
    /// assemble reports and to assert their self-consistency.
    pub fn aggregates_from_rows(rows: &[RowRecord]) -> Vec<Aggregate> {
        let mut keys: Vec<(Variant, f64)> = Vec::new();
        for r in rows {
            if !keys
                .iter()
                .any(|&(v, iou)| v == r.variant && iou == r.iou)
            {
                keys.push((r.variant, r.iou));
            }
        }
        keys.iter()
            .map(|&(variant, iou)| {
                let cell: Vec<&RowRecord> = rows
                    .iter()
                    .filter(|r| r.variant == variant && r.iou == iou)
                    .collect();
                let nes: Vec<f64> = cell.iter().filter_map(|r| r.ne).collect();
                let (mean_ne, std_ne) = match aggregate(&nes) {
                    Ok((m, s)) => (Some(m), Some(s)),
                    Err(_) => (None, None),
                };
                let gts: Vec<f64> = cell
                    .iter()
                    .filter(|r| r.pred.is_some())
                    .map(|r| r.gt as f64)
                    .collect();
                let preds: Vec<f64> = cell
                    .iter()
                    .filter_map(|r| r.pred)
                    .map(|p| p as f64)
                    .collect();
                Aggregate {
                    variant,
                    iou,
                    mean_ne,
                    std_ne,
                    r_squared: r_squared(&gts, &preds).ok(),
                }
            })
            .collect()
    }

    /// CSV serialization: `row_id,variant,iou,gt,pred,ne` rows followed by
    /// `#agg,variant,iou,mean_ne,std_ne,r2` comment rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_id,variant,iou,gt,pred,ne\n");
        let fmt_opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.row_id,
                r.variant,
                r.iou,
                r.gt,
                r.pred.map(|p| p.to_string()).unwrap_or_default(),
                fmt_opt_f(r.ne),
            ));
        }
        for a in &self.aggregates {
            out.push_str(&format!(
                "#agg,{},{},{},{},{}\n",
                a.variant,
                a.iou,
                fmt_opt_f(a.mean_ne),
                fmt_opt_f(a.std_ne),
                fmt_opt_f(a.r_squared),
            ));
        }
        out
    }
}

/// One benchmark row held in memory: identity, ground-truth count, frames.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub id: String,
    pub gt: usize,
    pub frames: Vec<FrameRecord>,
}

/// Runs the tracker once per (row, variant, threshold) cell over identical
/// inputs and assembles the full report grid. Tracker failures mark their
/// cell rather than aborting the sweep.
pub fn sweep(
    rows: &[SweepRow],
    variants: &[Variant],
    iou_thresholds: &[f64],
    base: &TrackerConfig,
    calib: &Calibration,
) -> Result<CountReport, EvalError> {
    if rows.is_empty() || variants.is_empty() || iou_thresholds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut records = Vec::with_capacity(rows.len() * variants.len() * iou_thresholds.len());
    for row in rows {
        for &variant in variants {
            for &iou in iou_thresholds {
                let cfg = TrackerConfig {
                    variant,
                    iou_threshold: iou,
                    ..*base
                };
                records.push(run_cell(row.id.clone(), row.gt, &row.frames, cfg, calib));
            }
        }
    }
    let aggregates = CountReport::aggregates_from_rows(&records);
    Ok(CountReport {
        rows: records,
        aggregates,
    })
}

/// [`sweep`] over on-disk datasets; each row's frames are loaded once and
/// reused for every (variant, threshold) cell. Rows without a ground-truth
/// count in their manifest are marked failed.
pub fn sweep_datasets(
    datasets: &[RowDataset],
    variants: &[Variant],
    iou_thresholds: &[f64],
    base: &TrackerConfig,
    calib: &Calibration,
) -> Result<CountReport, EvalError> {
    if datasets.is_empty() || variants.is_empty() || iou_thresholds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut records = Vec::new();
    for dataset in datasets {
        let id = dataset.row_id();
        let loaded = dataset.load_all_frames();
        for &variant in variants {
            for &iou in iou_thresholds {
                let cfg = TrackerConfig {
                    variant,
                    iou_threshold: iou,
                    ..*base
                };
                let record = match (&loaded, dataset.gt_count) {
                    (Ok(frames), Some(gt)) => run_cell(id.clone(), gt, frames, cfg, calib),
                    (Ok(_), None) => RowRecord {
                        row_id: id.clone(),
                        variant,
                        iou,
                        gt: 0,
                        pred: None,
                        ne: None,
                        note: Some("no ground-truth count in manifest".into()),
                    },
                    (Err(err), _) => RowRecord {
                        row_id: id.clone(),
                        variant,
                        iou,
                        gt: dataset.gt_count.unwrap_or(0),
                        pred: None,
                        ne: None,
                        note: Some(format!("load failed: {err}")),
                    },
                };
                records.push(record);
            }
        }
    }
    let aggregates = CountReport::aggregates_from_rows(&records);
    Ok(CountReport {
        rows: records,
        aggregates,
    })
}

fn run_cell(
    row_id: String,
    gt: usize,
    frames: &[FrameRecord],
    cfg: TrackerConfig,
    calib: &Calibration,
) -> RowRecord {
    match count_row(frames, cfg, *calib) {
        Ok(pred) => {
            let (ne, note) = match normalized_error(gt, pred) {
                Ok(ne) => (Some(ne), None),
                Err(_) => (None, Some("zero ground truth; excluded from NE".into())),
            };
            RowRecord {
                row_id,
                variant: cfg.variant,
                iou: cfg.iou_threshold,
                gt,
                pred: Some(pred),
                ne,
                note,
            }
        }
        Err(err) => RowRecord {
            row_id,
            variant: cfg.variant,
            iou: cfg.iou_threshold,
            gt,
            pred: None,
            ne: None,
            note: Some(format!("tracker failed: {err}")),
        },
    }
}
