//! Batch runner wiring ingestion → registration → fusion → trajectory →
//! evaluation, plus the ablation matrix, per-stage runtime records and
//! static trajectory plots.

use crate::error::{Error, Result};
use crate::evaluation::{kitti_errors_with, OdomErrors, KITTI_LENGTHS};
use crate::fusion::{
    predict, step, update_radar, ImuSample, KalmanConfig, KalmanState, MeasurementEvent,
};
use crate::ingestion::{
    generate_synthetic, load_ground_truth, load_imu, load_radar_sequence, merge_events,
    DatasetConfig, RadarFrame,
};
use crate::registration::{
    register_with_timing, to_velocity, RadarVelocity, RegistrationConfig,
};
use crate::trajectory::{integrate, integrate_velocity, Pose2, Trajectory};
use nalgebra::{Matrix3, Matrix5, Vector3, Vector5};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

/// Which sensor path drives the pose estimate. Exactly one applies to a
/// run; `RadarKf` (velocity measurements through the filter without IMU)
/// exists for row #3 of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RadarOnly,
    ImuOnly,
    Fuse,
    RadarKf,
}

/// Serde-friendly filter noise settings (diagonal matrices).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanSettings {
    pub q_diag: [f64; 5],
    pub r_radar_diag: [f64; 3],
    pub r_imu_diag: [f64; 3],
    pub initial_p_diag: [f64; 5],
    pub joseph_form: bool,
}

impl Default for KalmanSettings {
    fn default() -> Self {
        let d = KalmanConfig::default();
        KalmanSettings {
            q_diag: [d.q[(0, 0)], d.q[(1, 1)], d.q[(2, 2)], d.q[(3, 3)], d.q[(4, 4)]],
            r_radar_diag: [d.r_radar[(0, 0)], d.r_radar[(1, 1)], d.r_radar[(2, 2)]],
            r_imu_diag: [d.r_imu[(0, 0)], d.r_imu[(1, 1)], d.r_imu[(2, 2)]],
            initial_p_diag: [
                d.initial_p[(0, 0)],
                d.initial_p[(1, 1)],
                d.initial_p[(2, 2)],
                d.initial_p[(3, 3)],
                d.initial_p[(4, 4)],
            ],
            joseph_form: d.joseph_form,
        }
    }
}

impl KalmanSettings {
    pub fn to_config(&self, gyro_bias: f64) -> Result<KalmanConfig> {
        for (name, diag) in [
            ("kalman.q_diag", &self.q_diag[..]),
            ("kalman.initial_p_diag", &self.initial_p_diag[..]),
        ] {
            if diag.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::config(name, "diagonal entries must be finite and >= 0"));
            }
        }
        for (name, diag) in [
            ("kalman.r_radar_diag", &self.r_radar_diag),
            ("kalman.r_imu_diag", &self.r_imu_diag),
        ] {
            if diag.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::config(name, "diagonal entries must be finite and >= 0"));
            }
        }
        Ok(KalmanConfig {
            q: Matrix5::from_diagonal(&Vector5::from_row_slice(&self.q_diag)),
            r_radar: Matrix3::from_diagonal(&Vector3::from_row_slice(&self.r_radar_diag)),
            r_imu: Matrix3::from_diagonal(&Vector3::from_row_slice(&self.r_imu_diag)),
            gyro_bias,
            initial_p: Matrix5::from_diagonal(&Vector5::from_row_slice(&self.initial_p_diag)),
            joseph_form: self.joseph_form,
            bias_control_gain: 0.0,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub lengths: Vec<f64>,
    /// Segment start index stride; 1 is the densest variant.
    pub stride: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            lengths: KITTI_LENGTHS.to_vec(),
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Directory for trajectory CSV, KITTI pose file, metrics, timing CSV
    /// and the trajectory plot; nothing is written when unset.
    pub dir: Option<PathBuf>,
}

/// One run's full configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub registration: RegistrationConfig,
    pub kalman: KalmanSettings,
    pub mode: Mode,
    /// Compensate the dataset's constant gyro bias in the filter.
    pub gyro_bias_on: bool,
    /// High-pass filter the registration inputs.
    pub hpf_on: bool,
    /// Record per-frame stage timings.
    pub timing: bool,
    /// Emulate a realtime run by dropping IMU samples that arrive while a
    /// radar frame is being processed. Off by default: offline runs queue
    /// events instead; the would-be-dropped count is still reported.
    pub realtime_drop: bool,
    pub eval: EvalSettings,
    pub outputs: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            registration: RegistrationConfig::default(),
            kalman: KalmanSettings::default(),
            mode: Mode::Fuse,
            gyro_bias_on: true,
            hpf_on: true,
            timing: false,
            realtime_drop: false,
            eval: EvalSettings::default(),
            outputs: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.eval.stride == 0 {
            return Err(Error::config("eval.stride", "must be >= 1"));
        }
        if self.eval.lengths.is_empty() || self.eval.lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::config("eval.lengths", "need positive segment lengths"));
        }
        if self.registration.upsample < 1 {
            return Err(Error::config("registration.upsample", "must be >= 1"));
        }
        if self.registration.angular_bins == 0 {
            return Err(Error::config("registration.angular_bins", "must be >= 1"));
        }
        if !(self.registration.epsilon > 0.0) {
            return Err(Error::config("registration.epsilon", "must be > 0"));
        }
        Ok(())
    }

    fn effective_registration(&self) -> RegistrationConfig {
        let mut reg = self.registration;
        if !self.hpf_on {
            reg.hpf = false;
        }
        reg
    }

    fn effective_kalman(&self) -> Result<KalmanConfig> {
        let bias = if self.gyro_bias_on {
            self.dataset.gyro_bias
        } else {
            0.0
        };
        self.kalman.to_config(bias)
    }
}

/// Wall-clock cost of one radar frame through the pipeline stages.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FrameTiming {
    pub timestamp: f64,
    pub load_ms: f64,
    pub rotation_ms: f64,
    pub translation_ms: f64,
    pub predict_ms: f64,
    pub update_ms: f64,
}

impl FrameTiming {
    pub fn pipeline_ms(&self) -> f64 {
        self.load_ms + self.rotation_ms + self.translation_ms + self.predict_ms + self.update_ms
    }
}

/// Per-frame stage records; pipeline stages only, never evaluation or
/// plotting time.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub frames: Vec<FrameTiming>,
}

impl StageTimings {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("frame,timestamp,load_ms,rotation_ms,translation_ms,predict_ms,update_ms\n");
        for (i, f) in self.frames.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                i, f.timestamp, f.load_ms, f.rotation_ms, f.translation_ms, f.predict_ms, f.update_ms
            ));
        }
        out
    }

    pub fn median(&self, select: impl Fn(&FrameTiming) -> f64) -> Option<f64> {
        let mut vals: Vec<f64> = self.frames.iter().map(select).filter(|v| *v > 0.0).collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(vals[vals.len() / 2])
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub errors: Option<OdomErrors>,
    pub timings: Option<StageTimings>,
    pub gt: Option<Trajectory>,
    /// IMU samples that a realtime run would lose while radar frames are
    /// processed; actually dropped only when `realtime_drop` is set.
    pub imu_would_drop: usize,
    pub imu_dropped: usize,
    /// Radar pairs dropped by load or registration failures.
    pub radar_dropped: usize,
}

type SharedTimings = Rc<RefCell<Vec<FrameTiming>>>;

/// Radar frame iterator wrapper measuring per-frame availability (decode)
/// time and opening each frame's timing record.
struct TimedFrames<I> {
    inner: I,
    collector: SharedTimings,
}

impl<I: Iterator<Item = Result<RadarFrame>>> Iterator for TimedFrames<I> {
    type Item = Result<RadarFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = Instant::now();
        let item = self.inner.next()?;
        let load_ms = start.elapsed().as_secs_f64() * 1e3;
        if let Ok(frame) = &item {
            self.collector.borrow_mut().push(FrameTiming {
                timestamp: frame.timestamp,
                load_ms,
                ..FrameTiming::default()
            });
        }
        Some(item)
    }
}

fn fill_timing(collector: &SharedTimings, timestamp: f64, fill: impl FnOnce(&mut FrameTiming)) {
    if let Some(entry) = collector
        .borrow_mut()
        .iter_mut()
        .rev()
        .find(|e| e.timestamp == timestamp)
    {
        fill(entry);
    }
}

struct EventRun {
    trajectory: Trajectory,
    imu_would_drop: usize,
    imu_dropped: usize,
}

/// Core event loop: filters (or directly integrates) a timestamp-ordered
/// event stream into a trajectory. The pose integrates at every event from
/// the post-step state.
fn run_events(
    events: impl Iterator<Item = MeasurementEvent>,
    mode: Mode,
    kcfg: &KalmanConfig,
    initial_pose: Pose2,
    realtime_drop: bool,
    collector: Option<&SharedTimings>,
) -> Result<EventRun> {
    let mut state = KalmanState::initial(initial_pose.timestamp, kcfg);
    let mut pose = initial_pose;
    let mut trajectory = Trajectory::new();
    trajectory.push(pose)?;
    let mut radar_deadline = f64::NEG_INFINITY;
    let mut imu_would_drop = 0usize;
    let mut imu_dropped = 0usize;

    for event in events {
        let event_t = event.timestamp();
        if event_t < pose.timestamp {
            log::warn!("skipping out-of-order event at t={event_t}");
            continue;
        }
        if let MeasurementEvent::Imu(_) = event {
            if event_t <= radar_deadline {
                imu_would_drop += 1;
                if realtime_drop {
                    imu_dropped += 1;
                    continue;
                }
            }
        }

        if mode == Mode::RadarOnly {
            if let MeasurementEvent::Radar(v) = event {
                let dt = v.timestamp - pose.timestamp;
                if dt > 0.0 {
                    pose = integrate_velocity(&pose, v.v_x, v.v_y, v.w_z, dt);
                    trajectory.push(pose)?;
                }
            }
            continue;
        }

        match event {
            MeasurementEvent::Radar(v) => {
                // Split predict/update for the per-stage report.
                let dt = (v.timestamp - state.t).max(0.0);
                let t0 = Instant::now();
                let mut predicted = predict(&state, dt, kcfg)?;
                predicted.t = v.timestamp;
                let predict_ms = t0.elapsed().as_secs_f64() * 1e3;
                let t1 = Instant::now();
                state = match update_radar(&predicted, &v, kcfg) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("radar update skipped at t={}: {e}", v.timestamp);
                        predicted
                    }
                };
                let update_ms = t1.elapsed().as_secs_f64() * 1e3;
                if let Some(c) = collector {
                    fill_timing(c, v.timestamp, |e| {
                        e.predict_ms = predict_ms;
                        e.update_ms = update_ms;
                    });
                    // Everything this frame cost defines the window in
                    // which a realtime run would lose IMU samples.
                    let mut processing_ms = predict_ms + update_ms;
                    fill_timing(c, v.timestamp, |e| {
                        processing_ms = e.pipeline_ms();
                    });
                    radar_deadline = v.timestamp + processing_ms * 1e-3;
                }
            }
            MeasurementEvent::Imu(z) => {
                state = match step(&state, &MeasurementEvent::Imu(z), kcfg) {
                    Ok(s) => s,
                    Err(Error::Degenerate(msg)) => {
                        log::warn!("imu update skipped at t={}: {msg}", z.timestamp);
                        let mut predicted =
                            predict(&state, (z.timestamp - state.t).max(0.0), kcfg)?;
                        predicted.t = z.timestamp;
                        predicted
                    }
                    Err(e) => return Err(e),
                };
            }
        }

        let dt_pose = state.t - pose.timestamp;
        if dt_pose > 0.0 {
            pose = integrate(&pose, &state, dt_pose);
            trajectory.push(pose)?;
        }
    }

    Ok(EventRun {
        trajectory,
        imu_would_drop,
        imu_dropped,
    })
}

fn initial_pose(gt: Option<&Trajectory>, t0: f64) -> Pose2 {
    match gt {
        Some(gt) if !gt.is_empty() => {
            let first = gt.first().unwrap().timestamp;
            let last = gt.last().unwrap().timestamp;
            let t = t0.clamp(first, last);
            gt.interpolate(t)
                .map(|p| p.with_timestamp(t0))
                .unwrap_or_else(|_| Pose2::identity(t0))
        }
        _ => Pose2::identity(t0),
    }
}

/// Executes one configured run: loads (or generates) the dataset, merges
/// sensor events, runs the selected estimation mode, evaluates against
/// ground truth when present, and writes the configured outputs.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let use_imu = matches!(config.mode, Mode::Fuse | Mode::ImuOnly);
    let use_radar = matches!(config.mode, Mode::Fuse | Mode::RadarOnly | Mode::RadarKf);
    let reg_cfg = config.effective_registration();
    let kcfg = config.effective_kalman()?;

    // Acquire data.
    let mut mem_frames: Vec<RadarFrame> = Vec::new();
    let mut disk_stream = None;
    let mut imu: Vec<ImuSample> = Vec::new();
    let gt: Option<Trajectory>;
    let radar_span: Option<(f64, f64)>;

    if let Some(scene) = &config.dataset.scene {
        let data = generate_synthetic(scene)?;
        radar_span = match (data.scans.first(), data.scans.last()) {
            (Some(a), Some(b)) => Some((a.timestamp, b.timestamp)),
            _ => None,
        };
        if use_imu {
            imu = data.imu;
            if config.dataset.clip_imu_to_radar_span {
                if let Some((a, b)) = radar_span {
                    imu.retain(|s| s.timestamp >= a && s.timestamp <= b);
                }
            }
        }
        mem_frames = data.scans;
        gt = Some(data.gt);
    } else {
        let stream = load_radar_sequence(&config.dataset)?;
        radar_span = stream.time_span();
        if use_radar {
            disk_stream = Some(stream);
        }
        if use_imu {
            imu = load_imu(&config.dataset, radar_span)?;
        }
        gt = match &config.dataset.gt_file {
            Some(_) => Some(load_ground_truth(&config.dataset)?),
            None => None,
        };
    }

    let first_scan_t = radar_span.map(|(a, _)| a);
    let first_imu_t = imu.first().map(|s| s.timestamp);
    let t0 = match (
        if use_radar { first_scan_t } else { None },
        if use_imu { first_imu_t } else { None },
    ) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(Error::invalid("run has no sensor data")),
    };
    let pose0 = initial_pose(gt.as_ref(), t0);

    // Stage-timed frame stream feeding pairwise registration.
    let collector: SharedTimings = Rc::new(RefCell::new(Vec::new()));
    let frames: Box<dyn Iterator<Item = Result<RadarFrame>>> = if !use_radar {
        Box::new(std::iter::empty())
    } else if let Some(stream) = disk_stream {
        Box::new(stream)
    } else {
        Box::new(mem_frames.into_iter().map(Ok))
    };
    let timed_frames = TimedFrames {
        inner: frames,
        collector: Rc::clone(&collector),
    };
    let reg_collector = Rc::clone(&collector);
    let register_pair = move |prev: &RadarFrame, curr: &RadarFrame| -> Result<RadarVelocity> {
        let (res, timing) = register_with_timing(
            &prev.image,
            prev.timestamp,
            &curr.image,
            curr.timestamp,
            &reg_cfg,
        )?;
        fill_timing(&reg_collector, curr.timestamp, |e| {
            e.rotation_ms = timing.rotation_ms;
            e.translation_ms = timing.translation_ms;
        });
        to_velocity(&res)
    };

    let mut merged = merge_events(timed_frames, imu, register_pair);
    let events = run_events(
        &mut merged,
        config.mode,
        &kcfg,
        pose0,
        config.realtime_drop,
        Some(&collector),
    )?;
    let radar_dropped = merged.dropped_radar();
    drop(merged);

    if events.imu_would_drop > 0 {
        log::info!(
            "{} IMU samples arrived during radar processing ({})",
            events.imu_would_drop,
            if config.realtime_drop { "dropped" } else { "queued" }
        );
    }

    let errors = match &gt {
        Some(gt) if events.trajectory.len() >= 2 => Some(kitti_errors_with(
            gt,
            &events.trajectory,
            &config.eval.lengths,
            config.eval.stride,
        )?),
        _ => None,
    };

    let timings = if config.timing {
        Some(StageTimings {
            frames: collector.borrow().clone(),
        })
    } else {
        None
    };

    let output = RunOutput {
        trajectory: events.trajectory,
        errors,
        timings,
        gt,
        imu_would_drop: events.imu_would_drop,
        imu_dropped: events.imu_dropped,
        radar_dropped,
    };
    write_outputs(config, &output)?;
    Ok(output)
}

fn write_outputs(config: &RunConfig, out: &RunOutput) -> Result<()> {
    let Some(dir) = &config.outputs.dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.csv"), out.trajectory.to_csv())?;
    std::fs::write(dir.join("trajectory_kitti.txt"), out.trajectory.to_kitti())?;
    if let Some(errors) = &out.errors {
        std::fs::write(dir.join("metrics.csv"), errors.to_csv())?;
        std::fs::write(dir.join("metrics.txt"), errors.to_table())?;
    }
    if let Some(timings) = &out.timings {
        std::fs::write(dir.join("timing.csv"), timings.to_csv())?;
    }
    emit_plot(out.gt.as_ref(), &out.trajectory, &dir.join("trajectory.svg"))?;
    Ok(())
}

/// Sorted event stream from already-registered velocities plus IMU
/// samples; ties break IMU-first.
fn merge_measurements(velocities: &[RadarVelocity], imu: &[ImuSample]) -> Vec<MeasurementEvent> {
    let mut events: Vec<MeasurementEvent> = Vec::with_capacity(velocities.len() + imu.len());
    events.extend(imu.iter().map(|s| MeasurementEvent::Imu(*s)));
    events.extend(velocities.iter().map(|v| MeasurementEvent::Radar(*v)));
    // Stable sort keeps IMU (inserted first) ahead of radar on ties.
    events.sort_by(|a, b| a.timestamp().partial_cmp(&b.timestamp()).unwrap());
    events
}

/// One row of the ablation table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub id: u32,
    pub label: &'static str,
    /// (t_err_pct, r_err_deg_per_100m) or the row's failure message.
    pub outcome: std::result::Result<(f64, f64), String>,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("test  configuration                     t_err_pct / r_err_deg_per_100m\n");
    for row in rows {
        match &row.outcome {
            Ok((t, r)) => out.push_str(&format!("#{:<4} {:<33} {:.2}/{:.2}\n", row.id, row.label, t, r)),
            Err(e) => out.push_str(&format!("#{:<4} {:<33} failed: {e}\n", row.id, row.label)),
        }
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("test,label,t_err_pct,r_err_deg_per_100m,error\n");
    for row in rows {
        match &row.outcome {
            Ok((t, r)) => out.push_str(&format!("{},{},{:.6},{:.6},\n", row.id, row.label, t, r)),
            Err(e) => out.push_str(&format!("{},{},,,\"{e}\"\n", row.id, row.label)),
        }
    }
    out
}

/// Runs the seven-row component ablation on one dataset. Registration
/// outputs are computed once per high-pass setting and shared across rows,
/// so row differences reflect configuration only. Requires ground truth.
pub fn ablation_suite(base: &RunConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;

    // Shared inputs.
    let (frames, imu_all, gt) = if let Some(scene) = &base.dataset.scene {
        let data = generate_synthetic(scene)?;
        (data.scans, data.imu, data.gt)
    } else {
        let stream = load_radar_sequence(&base.dataset)?;
        let span = stream.time_span();
        let frames: Vec<RadarFrame> = stream.collect::<Result<_>>()?;
        let imu = load_imu(&base.dataset, span)?;
        let gt = load_ground_truth(&base.dataset)?;
        (frames, imu, gt)
    };
    if frames.len() < 2 {
        return Err(Error::invalid("ablation needs at least two radar frames"));
    }
    let span = (frames[0].timestamp, frames.last().unwrap().timestamp);
    let imu: Vec<ImuSample> = if base.dataset.clip_imu_to_radar_span {
        imu_all
            .into_iter()
            .filter(|s| s.timestamp >= span.0 && s.timestamp <= span.1)
            .collect()
    } else {
        imu_all
    };

    let collect_velocities = |hpf: bool| -> Vec<RadarVelocity> {
        let mut reg = base.registration;
        reg.hpf = hpf;
        let mut out = Vec::with_capacity(frames.len().saturating_sub(1));
        for pair in frames.windows(2) {
            match register_with_timing(
                &pair[0].image,
                pair[0].timestamp,
                &pair[1].image,
                pair[1].timestamp,
                &reg,
            )
            .and_then(|(res, _)| to_velocity(&res))
            {
                Ok(v) => out.push(v),
                Err(e) => log::warn!("ablation registration failed at t={}: {e}", pair[1].timestamp),
            }
        }
        out
    };
    let vel_plain = collect_velocities(false);
    let vel_hpf = collect_velocities(true);

    let t0 = span.0.min(imu.first().map(|s| s.timestamp).unwrap_or(span.0));
    let pose0 = initial_pose(Some(&gt), t0);

    let rows: Vec<(u32, &'static str, Mode, bool, bool)> = vec![
        (1, "radar only", Mode::RadarOnly, false, false),
        (2, "imu + kf", Mode::ImuOnly, false, false),
        (3, "radar + kf", Mode::RadarKf, false, false),
        (4, "imu, radar, and kf", Mode::Fuse, false, false),
        (5, "#4 + gyro bias", Mode::Fuse, true, false),
        (6, "#4 + hpf", Mode::Fuse, false, true),
        (7, "#4 + hpf + gyro bias (full)", Mode::Fuse, true, true),
    ];

    let mut table = Vec::with_capacity(rows.len());
    for (id, label, mode, bias_on, hpf_on) in rows {
        let outcome = (|| -> Result<(f64, f64)> {
            let kcfg = base
                .kalman
                .to_config(if bias_on { base.dataset.gyro_bias } else { 0.0 })?;
            let velocities = if hpf_on { &vel_hpf } else { &vel_plain };
            let events: Vec<MeasurementEvent> = match mode {
                Mode::ImuOnly => merge_measurements(&[], &imu),
                Mode::RadarOnly | Mode::RadarKf => merge_measurements(velocities, &[]),
                Mode::Fuse => merge_measurements(velocities, &imu),
            };
            let run = run_events(events.into_iter(), mode, &kcfg, pose0, false, None)?;
            let errors = kitti_errors_with(&gt, &run.trajectory, &base.eval.lengths, base.eval.stride)?;
            Ok((errors.t_err_pct, errors.r_err_deg_per_100m))
        })();
        let outcome = outcome.map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("ablation row #{id} ({label}) failed: {e}");
        }
        table.push(AblationRow { id, label, outcome });
    }
    Ok(table)
}

/// Writes a static SVG of the xy paths: estimate solid, ground truth
/// dashed, axes in meters. Deterministic for identical inputs.
pub fn emit_plot(gt: Option<&Trajectory>, est: &Trajectory, path: &Path) -> Result<()> {
    if est.is_empty() {
        return Err(Error::invalid("cannot plot an empty trajectory"));
    }
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    let mut scan = |traj: &Trajectory| {
        for p in traj.poses() {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
    };
    scan(est);
    if let Some(gt) = gt {
        scan(gt);
    }
    let span = ((max_x - min_x).max(max_y - min_y)).max(1.0);
    let margin = 0.05 * span;
    let scale = 760.0 / (span + 2.0 * margin);
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;
    let project = |x: f64, y: f64| -> (f64, f64) {
        (400.0 + (x - cx) * scale, 400.0 - (y - cy) * scale)
    };
    let polyline = |traj: &Trajectory| -> String {
        traj.poses()
            .iter()
            .map(|p| {
                let (sx, sy) = project(p.x, p.y);
                format!("{sx:.2},{sy:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    svg.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n");
    svg.push_str("<rect x=\"0\" y=\"0\" width=\"800\" height=\"800\" fill=\"white\" stroke=\"#333\"/>\n");
    if let Some(gt) = gt {
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#888888\" stroke-width=\"2\" stroke-dasharray=\"7 5\"/>\n",
            polyline(gt)
        ));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        polyline(est)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\" fill=\"#1f77b4\">estimate</text>\n"
    ));
    if gt.is_some() {
        svg.push_str(
            "<text x=\"16\" y=\"50\" font-family=\"sans-serif\" font-size=\"16\" fill=\"#888888\">ground truth (dashed)</text>\n",
        );
    }
    svg.push_str(&format!(
        "<text x=\"16\" y=\"784\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#333\">x: [{min_x:.1}, {max_x:.1}] m, y: [{min_y:.1}, {max_y:.1}] m</text>\n"
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{MotionSegment, SyntheticSceneSpec};

    fn quick_scene(seed: u64) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            num_scatterers: 300,
            world_extent: 160.0,
            scan_size: 128,
            meters_per_pixel: 0.5,
            imu_rate: 50.0,
            radar_rate: 4.0,
            motion_profile: vec![
                MotionSegment { duration: 10.0, v_x: 6.0, v_y: 0.0, w_z: 0.0 },
                MotionSegment { duration: 8.0, v_x: 5.0, v_y: 0.0, w_z: 0.08 },
                MotionSegment { duration: 10.0, v_x: 6.0, v_y: 0.0, w_z: 0.0 },
            ],
            seed,
            ..SyntheticSceneSpec::default()
        }
    }

    fn quick_config(seed: u64) -> RunConfig {
        let mut config = RunConfig::default();
        config.dataset.scene = Some(quick_scene(seed));
        config.dataset.meters_per_pixel = 0.5;
        config.registration.radial_bins = Some(64);
        config.eval.lengths = vec![50.0, 100.0];
        config
    }

    #[test]
    fn validate_names_offending_field() {
        let mut config = quick_config(1);
        config.eval.stride = 0;
        match config.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eval.stride"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_fused_run_is_tight() {
        let out = run(&quick_config(3)).unwrap();
        let errors = out.errors.expect("synthetic run evaluates");
        assert!(errors.segments_evaluated > 0);
        assert!(errors.t_err_pct < 0.5, "t_err {}", errors.t_err_pct);
    }

    #[test]
    fn timing_records_cover_every_frame() {
        let mut config = quick_config(4);
        config.timing = true;
        if let Some(scene) = config.dataset.scene.as_mut() {
            scene.motion_profile.truncate(1);
            scene.motion_profile[0].duration = 3.0;
        }
        config.eval.lengths = vec![10.0];
        let out = run(&config).unwrap();
        let timings = out.timings.expect("timing requested");
        // One record per consumed radar frame; all but the first carry
        // registration and filter stage costs.
        assert_eq!(timings.frames.len(), 13);
        let registered = timings
            .frames
            .iter()
            .filter(|f| f.rotation_ms > 0.0 && f.translation_ms > 0.0)
            .count();
        assert_eq!(registered, 12);
        assert!(timings.median(|f| f.update_ms).unwrap() > 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let config = quick_config(5);
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(a.trajectory.to_csv(), b.trajectory.to_csv());
        let (ea, eb) = (a.errors.unwrap(), b.errors.unwrap());
        assert_eq!(ea.to_csv(), eb.to_csv());
    }

    #[test]
    fn plot_is_deterministic_and_nonempty() {
        let config = quick_config(6);
        let out = run(&config).unwrap();
        let dir = std::env::temp_dir().join(format!("rio_plot_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.svg");
        let p2 = dir.join("b.svg");
        emit_plot(out.gt.as_ref(), &out.trajectory, &p1).unwrap();
        emit_plot(out.gt.as_ref(), &out.trajectory, &p2).unwrap();
        let (a, b) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b);
        // est ≡ gt: the two polylines carry identical control points.
        let gt = out.gt.clone().unwrap();
        let p3 = dir.join("c.svg");
        emit_plot(Some(&gt), &gt, &p3).unwrap();
        let text = std::fs::read_to_string(&p3).unwrap();
        let points: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .collect();
        assert_eq!(points.len(), 2);
        let extract = |s: &str| s.split('"').nth(1).unwrap().to_string();
        assert_eq!(extract(points[0]), extract(points[1]));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn output_files_are_written() {
        let dir = std::env::temp_dir().join(format!("rio_out_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let mut config = quick_config(7);
        config.timing = true;
        config.outputs.dir = Some(dir.clone());
        run(&config).unwrap();
        for name in [
            "trajectory.csv",
            "trajectory_kitti.txt",
            "metrics.csv",
            "metrics.txt",
            "timing.csv",
            "trajectory.svg",
        ] {
            let p = dir.join(name);
            assert!(p.exists(), "{name} missing");
            assert!(std::fs::metadata(&p).unwrap().len() > 0, "{name} empty");
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn ablation_produces_seven_rows_sharing_streams() {
        let mut config = quick_config(8);
        if let Some(scene) = config.dataset.scene.as_mut() {
            scene.imu_noise_std = (0.05, 0.003);
            scene.gyro_bias = 0.01;
        }
        let rows = ablation_suite(&config).unwrap();
        assert_eq!(rows.len(), 7);
        for row in &rows {
            assert!(row.outcome.is_ok(), "row {} failed: {:?}", row.id, row.outcome);
        }
        // Bias compensation must not hurt when bias is injected.
        let err = |id: u32| rows[id as usize - 1].outcome.clone().unwrap();
        assert!(err(7).1 <= err(6).1 + 1e-9, "full {:?} vs hpf-only {:?}", err(7), err(6));
    }
}
