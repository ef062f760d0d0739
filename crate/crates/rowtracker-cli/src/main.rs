//! Command-line frontend: dataset simulation, fruit counting, row mapping,
//! and the per-variant/per-IoU evaluation sweep.
//!
//! Exit codes: 0 success, 2 usage error, 1 any runtime failure. Diagnostic
//! output goes to stderr; `ROWTRACKER_LOG=info|debug` raises verbosity.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rowtracker::dataset::{save_dataset, RowDataset};
use rowtracker::eval::sweep_datasets;
use rowtracker::geom::Calibration;
use rowtracker::rowmap::{build_map, write_ply, write_ply_binary, MapConfig};
use rowtracker::sim::{generate_scene, simulate_row, NoiseSpec, SceneSpec};
use rowtracker::track::{Tracker, TrackerConfig, Variant};
use rowtracker::Intrinsics;

const USAGE: &str = "\
rowtracker — crop-row surveying toolkit

USAGE:
  rowtracker simulate --scene <file> --out <dir> [--seed <n>] [--calib <file>]
                      [--odometry-sigma <m>] [--dropout <p>] [--fp-rate <r>]
                      [--jitter <px>] [--camera-id <name>]
  rowtracker track    --data <dir> [--variant bl|rp|df] [--iou <t>] [--config <file>]
  rowtracker map      --data <dir> --out <file.ply> [--skip <n>] [--dmin <m>]
                      [--dmax <m>] [--binary]
  rowtracker sweep    --data <dir> [--data <dir> ...] --out <file.csv>
                      [--variants bl,rp,df] [--ious 0.1,0.2,...] [--config <file>]

Environment:
  ROWTRACKER_LOG=error|info|debug   diagnostic verbosity (default error)
";

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn runtime(err: impl std::fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Error = 0,
    Info = 1,
    Debug = 2,
}

struct Log {
    level: LogLevel,
}

impl Log {
    fn from_env() -> Self {
        let level = match std::env::var("ROWTRACKER_LOG").as_deref() {
            Ok("debug") => LogLevel::Debug,
            Ok("info") => LogLevel::Info,
            _ => LogLevel::Error,
        };
        Log { level }
    }

    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Info {
            eprintln!("[info] {}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Debug {
            eprintln!("[debug] {}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            eprintln!("{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &[String]) -> Result<(), CliError> {
    let log = Log::from_env();
    let Some(command) = args.first() else {
        return Err(CliError::usage("no subcommand given"));
    };
    match command.as_str() {
        "simulate" => cmd_simulate(&args[1..], &log),
        "track" => cmd_track(&args[1..], &log),
        "map" => cmd_map(&args[1..], &log),
        "sweep" => cmd_sweep(&args[1..], &log),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::usage(format!("unknown subcommand `{other}`"))),
    }
}

/// Parsed flags: every flag takes a value unless listed in `switches`;
/// repeated flags accumulate.
struct Flags {
    values: BTreeMap<String, Vec<String>>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str], switches: &[&str]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                return Err(CliError::usage(format!("unexpected argument `{arg}`")));
            };
            if !allowed.contains(&name) {
                return Err(CliError::usage(format!("unknown flag `--{name}`")));
            }
            if switches.contains(&name) {
                values.entry(name.to_string()).or_default().push(String::new());
                i += 1;
            } else {
                let Some(value) = args.get(i + 1) else {
                    return Err(CliError::usage(format!("flag `--{name}` needs a value")));
                };
                values.entry(name.to_string()).or_default().push(value.clone());
                i += 2;
            }
        }
        Ok(Flags { values })
    }

    fn one(&self, name: &str) -> Result<Option<&str>, CliError> {
        match self.values.get(name).map(|v| v.as_slice()) {
            None => Ok(None),
            Some([single]) => Ok(Some(single)),
            Some(_) => Err(CliError::usage(format!("flag `--{name}` given more than once"))),
        }
    }

    fn required(&self, name: &str) -> Result<&str, CliError> {
        self.one(name)?
            .ok_or_else(|| CliError::usage(format!("missing required flag `--{name}`")))
    }

    fn many(&self, name: &str) -> &[String] {
        self.values.get(name).map(|v| v.as_slice()).unwrap_or(&[])
    }

    fn switch(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    fn parse_value<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>, CliError> {
        match self.one(name)? {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::usage(format!("bad value for `--{name}`: {raw}"))),
        }
    }
}

fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(CliError::runtime)?;
    fs::rename(&tmp, path).map_err(CliError::runtime)?;
    Ok(())
}

fn cmd_simulate(args: &[String], log: &Log) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &[
            "scene",
            "out",
            "seed",
            "calib",
            "odometry-sigma",
            "dropout",
            "fp-rate",
            "jitter",
            "camera-id",
        ],
        &[],
    )?;
    let scene_path = PathBuf::from(flags.required("scene")?);
    let out_dir = PathBuf::from(flags.required("out")?);
    let seed: u64 = flags.parse_value("seed")?.unwrap_or(0);

    let text = fs::read_to_string(&scene_path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", scene_path.display())))?;
    let spec = SceneSpec::parse(&text).map_err(CliError::runtime)?;
    let scene = generate_scene(&spec, seed).map_err(CliError::runtime)?;

    let calib = match flags.one("calib")? {
        Some(path) => Calibration::read(Path::new(path)).map_err(CliError::runtime)?,
        None => Calibration::new(Intrinsics::default_camera(), rowtracker::Transform::identity()),
    };
    let noise = NoiseSpec {
        odometry_sigma: flags.parse_value("odometry-sigma")?.unwrap_or(0.0),
        dropout_prob: flags.parse_value("dropout")?.unwrap_or(0.0),
        false_positive_rate: flags.parse_value("fp-rate")?.unwrap_or(0.0),
        mask_jitter: flags.parse_value("jitter")?.unwrap_or(0),
        seed,
    };
    let camera_id = flags.one("camera-id")?.unwrap_or("cam0").to_string();

    log.info(format!(
        "rendering {} fruits over {} m of rail",
        scene.fruits.len(),
        scene.rail_length
    ));
    let frames = simulate_row(&scene, &calib.intrinsics, &noise);
    log.debug(format!("{} frames rendered", frames.len()));
    save_dataset(
        &out_dir,
        &frames,
        &calib,
        &camera_id,
        Some(scene.foreground_count()),
    )
    .map_err(CliError::runtime)?;
    log.info(format!(
        "wrote {} frames to {}",
        frames.len(),
        out_dir.display()
    ));
    Ok(())
}

fn tracker_config(flags: &Flags) -> Result<TrackerConfig, CliError> {
    let mut cfg = match flags.one("config")? {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("cannot read {path}: {e}")))?;
            TrackerConfig::parse(&text).map_err(CliError::runtime)?
        }
        None => TrackerConfig::new(Variant::Bl),
    };
    if let Some(variant) = flags.one("variant")? {
        cfg.variant = variant.parse().map_err(CliError::runtime)?;
    }
    if let Some(iou) = flags.parse_value::<f64>("iou")? {
        cfg.iou_threshold = iou;
    }
    cfg.validate().map_err(CliError::runtime)?;
    Ok(cfg)
}

fn cmd_track(args: &[String], log: &Log) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "variant", "iou", "config"], &[])?;
    let data_dir = PathBuf::from(flags.required("data")?);
    let cfg = tracker_config(&flags)?;

    let dataset = RowDataset::load(&data_dir).map_err(CliError::runtime)?;
    let calib = dataset
        .calibration
        .ok_or_else(|| CliError::Runtime("dataset has no calibration".into()))?;
    let mut tracker = Tracker::new(cfg, calib).map_err(CliError::runtime)?;
    for index in 0..dataset.frame_count {
        let frame = dataset.load_frame(index).map_err(CliError::runtime)?;
        tracker.step(&frame).map_err(CliError::runtime)?;
        log.debug(format!(
            "frame {index}: {} active tracklets",
            tracker.state().active.len()
        ));
    }
    let count = tracker.finalize();
    log.info(format!(
        "variant {} at IoU {}: counted {count} fruits",
        cfg.variant, cfg.iou_threshold
    ));
    println!("{count}");
    Ok(())
}

fn cmd_map(args: &[String], log: &Log) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &["data", "out", "skip", "dmin", "dmax", "binary"],
        &["binary"],
    )?;
    let data_dir = PathBuf::from(flags.required("data")?);
    let out_path = PathBuf::from(flags.required("out")?);
    let mut cfg = MapConfig::default();
    if let Some(skip) = flags.parse_value("skip")? {
        cfg.skip = skip;
    }
    if let Some(dmin) = flags.parse_value("dmin")? {
        cfg.d_min = dmin;
    }
    if let Some(dmax) = flags.parse_value("dmax")? {
        cfg.d_max = dmax;
    }
    cfg.validate().map_err(CliError::runtime)?;

    let dataset = RowDataset::load(&data_dir).map_err(CliError::runtime)?;
    let cloud = build_map(&dataset, &cfg).map_err(CliError::runtime)?;
    log.info(format!("map has {} points", cloud.len()));

    let mut bytes = Vec::new();
    if flags.switch("binary") {
        write_ply_binary(&cloud, &mut bytes).map_err(CliError::runtime)?;
    } else {
        write_ply(&cloud, &mut bytes).map_err(CliError::runtime)?;
    }
    write_file_atomic(&out_path, &bytes)?;
    log.info(format!("wrote {}", out_path.display()));
    Ok(())
}

fn cmd_sweep(args: &[String], log: &Log) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "out", "variants", "ious", "config"], &[])?;
    let out_path = PathBuf::from(flags.required("out")?);
    let data_dirs = flags.many("data");
    if data_dirs.is_empty() {
        return Err(CliError::usage("sweep needs at least one --data directory"));
    }
    let variants: Vec<Variant> = match flags.one("variants")? {
        Some(list) => list
            .split(',')
            .map(|v| v.trim().parse().map_err(CliError::runtime))
            .collect::<Result<_, _>>()?,
        None => Variant::ALL.to_vec(),
    };
    let ious: Vec<f64> = match flags.one("ious")? {
        Some(list) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::usage(format!("bad IoU value `{t}`")))
            })
            .collect::<Result<_, _>>()?,
        None => vec![0.1, 0.2, 0.3, 0.4, 0.5],
    };
    let base = tracker_config(&flags)?;

    let mut datasets = Vec::new();
    for dir in data_dirs {
        let dataset = RowDataset::load(Path::new(dir)).map_err(CliError::runtime)?;
        log.debug(format!(
            "loaded {} ({} frames)",
            dataset.row_id(),
            dataset.frame_count
        ));
        datasets.push(dataset);
    }
    let calib = datasets[0]
        .calibration
        .ok_or_else(|| CliError::Runtime("dataset has no calibration".into()))?;
    for d in &datasets[1..] {
        if d.calibration != Some(calib) {
            return Err(CliError::Runtime(format!(
                "dataset {} has a different calibration",
                d.row_id()
            )));
        }
    }

    let report =
        sweep_datasets(&datasets, &variants, &ious, &base, &calib).map_err(CliError::runtime)?;
    write_file_atomic(&out_path, report.to_csv().as_bytes())?;
    log.info(format!("wrote {}", out_path.display()));

    let mut stderr = std::io::stderr().lock();
    for agg in &report.aggregates {
        let _ = writeln!(
            stderr,
            "{} iou={}: mean_ne={} std_ne={} r2={}",
            agg.variant,
            agg.iou,
            agg.mean_ne.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            agg.std_ne.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            agg.r_squared.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    Ok(())
}
