//! KITTI-style odometry error computation.
//!
//! Relative pose errors over fixed-arc-length sub-trajectories: for every
//! start pose and each segment length, the end pose is the first one at
//! that arc distance along the ground truth; the error transform between
//! the ground-truth and estimated relative motions yields a translational
//! error in percent and a rotational error in degrees per 100 m. The
//! estimate is resampled onto ground-truth timestamps first (positions
//! linear, yaw shortest-arc).

use crate::error::{Error, Result};
use crate::trajectory::{between, Pose2, Trajectory};
use serde::Serialize;

/// The standard evaluation segment lengths in meters.
pub const KITTI_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerLengthError {
    pub length: f64,
    pub t_err_pct: f64,
    pub r_err_deg_per_100m: f64,
    pub count: usize,
}

/// Averaged relative errors, plus the per-length breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct OdomErrors {
    /// Average translational error, percent of segment length.
    pub t_err_pct: f64,
    /// Average rotational error, degrees per 100 m.
    pub r_err_deg_per_100m: f64,
    pub per_length: Vec<PerLengthError>,
    /// Total segments that entered the averages; 0 flags an empty result
    /// (trajectory shorter than every requested length).
    pub segments_evaluated: usize,
}

impl OdomErrors {
    pub fn is_empty(&self) -> bool {
        self.segments_evaluated == 0
    }

    /// Text table in the `translational error [%] / rotational error
    /// [deg/100m]` convention.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("length_m  t_err_pct  r_err_deg_per_100m  segments\n");
        for row in &self.per_length {
            out.push_str(&format!(
                "{:>8.0}  {:>9.4}  {:>18.4}  {:>8}\n",
                row.length, row.t_err_pct, row.r_err_deg_per_100m, row.count
            ));
        }
        out.push_str(&format!(
            "overall: {:.4} % / {:.4} deg/100m over {} segments\n",
            self.t_err_pct, self.r_err_deg_per_100m, self.segments_evaluated
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("length_m,t_err_pct,r_err_deg_per_100m,count\n");
        for row in &self.per_length {
            out.push_str(&format!(
                "{:.1},{:.6},{:.6},{}\n",
                row.length, row.t_err_pct, row.r_err_deg_per_100m, row.count
            ));
        }
        out.push_str(&format!(
            "overall,{:.6},{:.6},{}\n",
            self.t_err_pct, self.r_err_deg_per_100m, self.segments_evaluated
        ));
        out
    }
}

/// Sum of consecutive Euclidean position deltas.
pub fn path_length(traj: &Trajectory) -> f64 {
    traj.poses()
        .windows(2)
        .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
        .sum()
}

/// [`kitti_errors_with`] at the densest start stride (every pose).
pub fn kitti_errors(gt: &Trajectory, est: &Trajectory, lengths: &[f64]) -> Result<OdomErrors> {
    kitti_errors_with(gt, est, lengths, 1)
}

pub fn kitti_errors_with(
    gt: &Trajectory,
    est: &Trajectory,
    lengths: &[f64],
    start_stride: usize,
) -> Result<OdomErrors> {
    if gt.is_empty() || est.is_empty() {
        return Err(Error::Evaluation("empty trajectory".into()));
    }
    if lengths.is_empty() || start_stride == 0 {
        return Err(Error::Evaluation("need segment lengths and a positive stride".into()));
    }
    let (est_first, est_last) = (
        est.first().unwrap().timestamp,
        est.last().unwrap().timestamp,
    );
    // Resample the estimate onto ground-truth timestamps over the overlap.
    let mut gt_sub: Vec<Pose2> = Vec::new();
    let mut est_sub: Vec<Pose2> = Vec::new();
    for p in gt.poses() {
        if p.timestamp >= est_first && p.timestamp <= est_last {
            gt_sub.push(*p);
            est_sub.push(est.interpolate(p.timestamp)?);
        }
    }
    if gt_sub.len() < 2 {
        return Err(Error::Evaluation(
            "ground-truth and estimate time spans are disjoint".into(),
        ));
    }

    // Cumulative ground-truth arc length.
    let mut dist = Vec::with_capacity(gt_sub.len());
    dist.push(0.0);
    for w in gt_sub.windows(2) {
        let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
        dist.push(dist.last().unwrap() + d);
    }

    let mut per_length: Vec<PerLengthError> = lengths
        .iter()
        .map(|&length| PerLengthError {
            length,
            t_err_pct: 0.0,
            r_err_deg_per_100m: 0.0,
            count: 0,
        })
        .collect();

    for start in (0..gt_sub.len()).step_by(start_stride) {
        for row in per_length.iter_mut() {
            let target = dist[start] + row.length;
            let end = dist.partition_point(|&d| d < target);
            if end >= dist.len() {
                continue;
            }
            let rel_gt = between(&gt_sub[start], &gt_sub[end]);
            let rel_est = between(&est_sub[start], &est_sub[end]);
            let err = rel_gt.inverse().then(&rel_est);
            let t_err = (err.dx * err.dx + err.dy * err.dy).sqrt() / row.length * 100.0;
            let r_err = err.dtheta.abs().to_degrees() / row.length * 100.0;
            row.t_err_pct += t_err;
            row.r_err_deg_per_100m += r_err;
            row.count += 1;
        }
    }

    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut n = 0usize;
    for row in per_length.iter_mut() {
        if row.count > 0 {
            t_sum += row.t_err_pct;
            r_sum += row.r_err_deg_per_100m;
            n += row.count;
            row.t_err_pct /= row.count as f64;
            row.r_err_deg_per_100m /= row.count as f64;
        }
    }
    Ok(OdomErrors {
        t_err_pct: if n > 0 { t_sum / n as f64 } else { 0.0 },
        r_err_deg_per_100m: if n > 0 { r_sum / n as f64 } else { 0.0 },
        per_length,
        segments_evaluated: n,
    })
}
