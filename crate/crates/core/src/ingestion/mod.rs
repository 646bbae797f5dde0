//! Dataset ingestion: real scanning-radar layouts and synthetic scenes.
//!
//! Real datasets arrive as a directory of polar scan images with
//! timestamp-encoded filenames plus a delimited IMU file; parsing is
//! layout-driven (directory conventions and column maps live in the
//! configuration, with presets per known layout) since different sensors
//! ship different rates and column orders. Scans render to Cartesian at
//! ingestion and are downsampled to the working size.

mod synthetic;

pub use synthetic::{
    generate_synthetic, write_synthetic_dataset, MotionSegment, SyntheticDataset,
    SyntheticSceneSpec,
};

use crate::error::{Error, Result};
use crate::fusion::{ImuSample, MeasurementEvent};
use crate::imaging::{downsample, polar_to_cartesian_with, Image, PolarInterp, PolarScan};
use crate::registration::RadarVelocity;
use crate::trajectory::{Pose2, Trajectory};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

/// One radar scan as the pipeline consumes it.
#[derive(Debug, Clone)]
pub struct RadarFrame {
    /// Seconds.
    pub timestamp: f64,
    pub image: Image,
}

/// Supported dataset directory conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Polar PNG per scan, nanosecond filename stamps, no metadata columns.
    Mulran,
    /// Polar PNG per scan, microsecond filename stamps, 11 metadata columns
    /// prefixed to each azimuth row.
    Boreas,
    /// Cartesian PNG per scan written by the synthetic dataset writer,
    /// nanosecond filename stamps.
    Synthetic,
}

/// Time unit of integer timestamps embedded in filenames or columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
    Microseconds,
    Nanoseconds,
}

impl TimeUnit {
    pub fn to_seconds(&self, raw: f64) -> f64 {
        match self {
            TimeUnit::Seconds => raw,
            TimeUnit::Milliseconds => raw * 1e-3,
            TimeUnit::Microseconds => raw * 1e-6,
            TimeUnit::Nanoseconds => raw * 1e-9,
        }
    }
}

/// Column map for delimited IMU files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImuColumns {
    pub time_col: usize,
    pub accel_x_col: usize,
    pub accel_y_col: usize,
    pub gyro_z_col: usize,
    pub time_unit: TimeUnit,
    pub has_header: bool,
}

/// Ground-truth file flavor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "format")]
pub enum GtFormat {
    /// `timestamp,x,y,yaw` columns (configurable indices).
    CsvXyYaw {
        time_col: usize,
        x_col: usize,
        y_col: usize,
        yaw_col: usize,
        has_header: bool,
        time_unit: TimeUnit,
    },
    /// Timestamp followed by a row-major 3x4 pose matrix (12 values).
    TimedMatrix3x4 { time_unit: TimeUnit },
}

/// Everything needed to load one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub layout: Layout,
    pub radar_dir: Option<PathBuf>,
    pub imu_file: Option<PathBuf>,
    pub gt_file: Option<PathBuf>,
    /// Meters per polar range bin (polar layouts).
    pub range_resolution: f64,
    /// Meters per pixel of the working Cartesian image.
    pub meters_per_pixel: f64,
    /// Working Cartesian image size (pixels per side).
    pub cartesian_size: usize,
    /// Polar scans render at `cartesian_size * render_scale` and are then
    /// area-downsampled to the working size.
    pub render_scale: usize,
    /// Consume every `frame_stride`-th scan (slow driving benefits from
    /// more distinguishable offsets between registered scans).
    pub frame_stride: usize,
    /// Constant gyro bias of this dataset's IMU, rad/s.
    pub gyro_bias: f64,
    /// Drop IMU samples before the first and after the last radar scan.
    pub clip_imu_to_radar_span: bool,
    pub polar_interp: PolarInterp,
    /// Override the layout's filename timestamp unit.
    pub timestamp_unit: Option<TimeUnit>,
    /// Override the layout's IMU column map.
    pub imu_columns: Option<ImuColumns>,
    /// Override the layout's ground-truth format.
    pub gt_format: Option<GtFormat>,
    /// Override the layout's per-row metadata column count in polar PNGs.
    pub metadata_cols: Option<usize>,
    /// Inline synthetic scene; generated in memory instead of reading
    /// `radar_dir`/`imu_file`.
    pub scene: Option<SyntheticSceneSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            layout: Layout::Synthetic,
            radar_dir: None,
            imu_file: None,
            gt_file: None,
            range_resolution: 0.0596,
            meters_per_pixel: 0.4,
            cartesian_size: 640,
            render_scale: 2,
            frame_stride: 1,
            gyro_bias: 0.0,
            clip_imu_to_radar_span: true,
            polar_interp: PolarInterp::Bilinear,
            timestamp_unit: None,
            imu_columns: None,
            gt_format: None,
            metadata_cols: None,
            scene: None,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_stride < 1 {
            return Err(Error::config("dataset.frame_stride", "must be >= 1"));
        }
        if !(self.meters_per_pixel > 0.0) {
            return Err(Error::config("dataset.meters_per_pixel", "must be > 0"));
        }
        if self.layout != Layout::Synthetic && !(self.range_resolution > 0.0) {
            return Err(Error::config("dataset.range_resolution", "must be > 0"));
        }
        if self.cartesian_size == 0 || self.render_scale == 0 {
            return Err(Error::config("dataset.cartesian_size", "sizes must be > 0"));
        }
        if self.scene.is_none() && self.radar_dir.is_none() {
            return Err(Error::config(
                "dataset.radar_dir",
                "either a radar directory or an inline scene is required",
            ));
        }
        Ok(())
    }

    pub fn filename_time_unit(&self) -> TimeUnit {
        self.timestamp_unit.unwrap_or(match self.layout {
            Layout::Mulran => TimeUnit::Nanoseconds,
            Layout::Boreas => TimeUnit::Microseconds,
            Layout::Synthetic => TimeUnit::Nanoseconds,
        })
    }

    pub fn resolved_imu_columns(&self) -> ImuColumns {
        self.imu_columns.unwrap_or(match self.layout {
            // stamp, quaternion(4), euler(3), gyro xyz, accel xyz, magnet xyz
            Layout::Mulran => ImuColumns {
                time_col: 0,
                accel_x_col: 11,
                accel_y_col: 12,
                gyro_z_col: 10,
                time_unit: TimeUnit::Nanoseconds,
                has_header: false,
            },
            // GPSTime, angvel_z, angvel_y, angvel_x, accelz, accely, accelx
            Layout::Boreas => ImuColumns {
                time_col: 0,
                accel_x_col: 6,
                accel_y_col: 5,
                gyro_z_col: 1,
                time_unit: TimeUnit::Seconds,
                has_header: true,
            },
            Layout::Synthetic => ImuColumns {
                time_col: 0,
                accel_x_col: 1,
                accel_y_col: 2,
                gyro_z_col: 3,
                time_unit: TimeUnit::Seconds,
                has_header: true,
            },
        })
    }

    pub fn resolved_gt_format(&self) -> GtFormat {
        self.gt_format.unwrap_or(match self.layout {
            Layout::Mulran => GtFormat::TimedMatrix3x4 {
                time_unit: TimeUnit::Nanoseconds,
            },
            Layout::Boreas | Layout::Synthetic => GtFormat::CsvXyYaw {
                time_col: 0,
                x_col: 1,
                y_col: 2,
                yaw_col: 3,
                has_header: true,
                time_unit: TimeUnit::Seconds,
            },
        })
    }

    pub fn resolved_metadata_cols(&self) -> usize {
        self.metadata_cols.unwrap_or(match self.layout {
            Layout::Boreas => 11,
            _ => 0,
        })
    }
}

fn decode_gray(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::dataset(path, format!("decode failed: {e}")))?;
    let (w, h, pixels) = match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (w, h, buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect())
        }
        other => {
            let buf = other.to_luma8();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (w, h, buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
    };
    Ok((w, h, pixels))
}

fn polar_scan_from_png(cfg: &DatasetConfig, path: &Path, timestamp: f64) -> Result<PolarScan> {
    let (w, h, pixels) = decode_gray(path)?;
    let meta = cfg.resolved_metadata_cols();
    if w <= meta {
        return Err(Error::dataset(path, format!("scan width {w} <= metadata columns {meta}")));
    }
    let bins = w - meta;
    let mut intensities = Vec::with_capacity(bins * h);
    for row in 0..h {
        let start = row * w + meta;
        intensities.extend_from_slice(&pixels[start..start + bins]);
    }
    let azimuths = (0..h).map(|i| i as f64 * TAU / h as f64).collect();
    Ok(PolarScan {
        azimuths,
        ranges_per_beam: bins,
        intensities,
        range_resolution: cfg.range_resolution,
        timestamp,
    })
}

fn render_working_image(cfg: &DatasetConfig, scan: &PolarScan) -> Result<Image> {
    let render_size = cfg.cartesian_size * cfg.render_scale;
    let render_mpp = cfg.meters_per_pixel / cfg.render_scale as f64;
    let rendered = polar_to_cartesian_with(scan, render_size, render_mpp, cfg.polar_interp)?;
    if cfg.render_scale > 1 {
        downsample(&rendered, cfg.cartesian_size, cfg.cartesian_size)
    } else {
        Ok(rendered)
    }
}

/// Lists scan files, parses filename-encoded timestamps and applies the
/// frame stride. Decoding is lazy: each `next()` loads one scan.
pub struct RadarStream {
    cfg: DatasetConfig,
    files: Vec<(f64, PathBuf)>,
    next_idx: usize,
}

impl RadarStream {
    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// First and last scan timestamp.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        match (self.files.first(), self.files.last()) {
            (Some(a), Some(b)) => Some((a.0, b.0)),
            _ => None,
        }
    }
}

impl Iterator for RadarStream {
    type Item = Result<RadarFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let (timestamp, path) = self.files.get(self.next_idx)?.clone();
        self.next_idx += 1;
        let frame = (|| -> Result<RadarFrame> {
            let image = match self.cfg.layout {
                Layout::Synthetic => {
                    let (w, h, pixels) = decode_gray(&path)?;
                    Image::new(w, h, pixels, self.cfg.meters_per_pixel)
                        .map_err(|e| Error::dataset(&path, e.to_string()))?
                }
                Layout::Mulran | Layout::Boreas => {
                    let scan = polar_scan_from_png(&self.cfg, &path, timestamp)?;
                    render_working_image(&self.cfg, &scan)?
                }
            };
            Ok(RadarFrame { timestamp, image })
        })();
        Some(frame)
    }
}

/// Opens a radar scan directory: strictly increasing timestamps, honoring
/// `frame_stride` (indices 0, k, 2k, ... of the stride-1 sequence).
pub fn load_radar_sequence(cfg: &DatasetConfig) -> Result<RadarStream> {
    let dir = cfg
        .radar_dir
        .as_ref()
        .ok_or_else(|| Error::config("dataset.radar_dir", "missing radar directory"))?;
    let unit = cfg.filename_time_unit();
    let mut files: Vec<(f64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::dataset(dir, e.to_string()))? {
        let entry = entry.map_err(|e| Error::dataset(dir, e.to_string()))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        match stem.parse::<u128>() {
            Ok(raw) => files.push((unit.to_seconds(raw as f64), path)),
            Err(_) => log::warn!("skipping non-timestamp scan file {}", path.display()),
        }
    }
    if files.is_empty() {
        return Err(Error::dataset(dir, "no radar scans found"));
    }
    files.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let strided: Vec<(f64, PathBuf)> = files
        .into_iter()
        .step_by(cfg.frame_stride.max(1))
        .collect();
    Ok(RadarStream {
        cfg: cfg.clone(),
        files: strided,
        next_idx: 0,
    })
}

/// Parses the IMU file per the layout's column map: no filtering or
/// smoothing, rows sorted by timestamp. Malformed rows are skipped with a
/// warning; more than 5% malformed is a dataset error. When
/// `clip_imu_to_radar_span` is set and a radar span is supplied, samples
/// outside the span are dropped.
pub fn load_imu(cfg: &DatasetConfig, radar_span: Option<(f64, f64)>) -> Result<Vec<ImuSample>> {
    let path = cfg
        .imu_file
        .as_ref()
        .ok_or_else(|| Error::config("dataset.imu_file", "missing IMU file"))?;
    let cols = cfg.resolved_imu_columns();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(cols.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::dataset(path, e.to_string()))?;

    let mut samples = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                log::warn!("imu row unreadable: {e}");
                malformed += 1;
                total += 1;
                continue;
            }
        };
        total += 1;
        let field = |i: usize| -> Option<f64> { record.get(i)?.parse::<f64>().ok() };
        match (
            field(cols.time_col),
            field(cols.accel_x_col),
            field(cols.accel_y_col),
            field(cols.gyro_z_col),
        ) {
            (Some(t), Some(ax), Some(ay), Some(gz))
                if t.is_finite() && ax.is_finite() && ay.is_finite() && gz.is_finite() =>
            {
                samples.push(ImuSample {
                    timestamp: cols.time_unit.to_seconds(t),
                    accel_x: ax,
                    accel_y: ay,
                    gyro_z: gz,
                });
            }
            _ => {
                log::warn!("skipping malformed imu row {total}");
                malformed += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::dataset(path, "imu file has no rows"));
    }
    if malformed * 20 > total {
        return Err(Error::dataset(
            path,
            format!("{malformed}/{total} imu rows malformed (> 5%)"),
        ));
    }
    samples.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
    if cfg.clip_imu_to_radar_span {
        if let Some((first, last)) = radar_span {
            samples.retain(|s| s.timestamp >= first && s.timestamp <= last);
        }
    }
    Ok(samples)
}

/// Loads the ground-truth trajectory per the layout's format.
pub fn load_ground_truth(cfg: &DatasetConfig) -> Result<Trajectory> {
    let path = cfg
        .gt_file
        .as_ref()
        .ok_or_else(|| Error::config("dataset.gt_file", "missing ground-truth file"))?;
    let format = cfg.resolved_gt_format();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(match format {
            GtFormat::CsvXyYaw { has_header, .. } => has_header,
            GtFormat::TimedMatrix3x4 { .. } => false,
        })
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::dataset(path, e.to_string()))?;

    let mut poses: Vec<Pose2> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::dataset(path, e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::dataset(path, format!("bad ground-truth field {i}")))
        };
        let pose = match format {
            GtFormat::CsvXyYaw {
                time_col,
                x_col,
                y_col,
                yaw_col,
                time_unit,
                ..
            } => Pose2::new(
                field(x_col)?,
                field(y_col)?,
                field(yaw_col)?,
                time_unit.to_seconds(field(time_col)?),
            ),
            GtFormat::TimedMatrix3x4 { time_unit } => {
                let t = time_unit.to_seconds(field(0)?);
                let r00 = field(1)?;
                let x = field(4)?;
                let r10 = field(5)?;
                let y = field(8)?;
                Pose2::new(x, y, r10.atan2(r00), t)
            }
        };
        poses.push(pose);
    }
    poses.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
    poses.dedup_by(|a, b| a.timestamp == b.timestamp);
    Trajectory::from_poses(poses)
}

/// Merges a time-ordered radar frame stream and IMU samples into one
/// timestamp-ordered event stream. Consecutive radar frames are registered
/// pairwise via the supplied closure and emitted as velocity events at the
/// later scan's timestamp; registration failures drop that event and the
/// stream continues. Ties break IMU-first.
pub fn merge_events<R, F>(radar: R, imu: Vec<ImuSample>, register_pair: F) -> MergedEvents<R::IntoIter, F>
where
    R: IntoIterator<Item = Result<RadarFrame>>,
    F: FnMut(&RadarFrame, &RadarFrame) -> Result<RadarVelocity>,
{
    MergedEvents {
        radar: radar.into_iter(),
        imu: imu.into_iter().peekable(),
        register_pair,
        prev_frame: None,
        pending_radar: None,
        dropped_radar: 0,
    }
}

pub struct MergedEvents<R, F>
where
    R: Iterator<Item = Result<RadarFrame>>,
    F: FnMut(&RadarFrame, &RadarFrame) -> Result<RadarVelocity>,
{
    radar: R,
    imu: std::iter::Peekable<std::vec::IntoIter<ImuSample>>,
    register_pair: F,
    prev_frame: Option<RadarFrame>,
    pending_radar: Option<RadarVelocity>,
    dropped_radar: usize,
}

impl<R, F> MergedEvents<R, F>
where
    R: Iterator<Item = Result<RadarFrame>>,
    F: FnMut(&RadarFrame, &RadarFrame) -> Result<RadarVelocity>,
{
    /// Radar pairs dropped because of load or registration failures.
    pub fn dropped_radar(&self) -> usize {
        self.dropped_radar
    }

    fn fill_pending_radar(&mut self) {
        while self.pending_radar.is_none() {
            let frame = match self.radar.next() {
                Some(Ok(f)) => f,
                Some(Err(e)) => {
                    log::warn!("radar frame unusable, skipping: {e}");
                    self.dropped_radar += 1;
                    continue;
                }
                None => return,
            };
            if let Some(prev) = &self.prev_frame {
                match (self.register_pair)(prev, &frame) {
                    Ok(v) => self.pending_radar = Some(v),
                    Err(e) => {
                        log::warn!("registration failed at t={}: {e}", frame.timestamp);
                        self.dropped_radar += 1;
                    }
                }
            }
            self.prev_frame = Some(frame);
        }
    }
}

impl<R, F> Iterator for MergedEvents<R, F>
where
    R: Iterator<Item = Result<RadarFrame>>,
    F: FnMut(&RadarFrame, &RadarFrame) -> Result<RadarVelocity>,
{
    type Item = MeasurementEvent;

    fn next(&mut self) -> Option<Self::Item> {
        self.fill_pending_radar();
        match (self.imu.peek(), &self.pending_radar) {
            (Some(imu), Some(radar)) => {
                if imu.timestamp <= radar.timestamp {
                    Some(MeasurementEvent::Imu(self.imu.next().unwrap()))
                } else {
                    Some(MeasurementEvent::Radar(self.pending_radar.take().unwrap()))
                }
            }
            (Some(_), None) => Some(MeasurementEvent::Imu(self.imu.next().unwrap())),
            (None, Some(_)) => Some(MeasurementEvent::Radar(self.pending_radar.take().unwrap())),
            (None, None) => None,
        }
    }
}
