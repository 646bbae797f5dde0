//! SE(2) pose bookkeeping: transform concatenation, dead reckoning of
//! filtered body velocities, interpolation and trajectory export.

use crate::error::{Error, Result};
use crate::fusion::KalmanState;
use nalgebra::Matrix4;
use std::f64::consts::{PI, TAU};

/// Wraps an angle to (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Planar pose with yaw in (-π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Seconds.
    pub timestamp: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64, timestamp: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: normalize_angle(yaw),
            timestamp,
        }
    }

    pub fn identity(timestamp: f64) -> Self {
        Pose2::new(0.0, 0.0, 0.0, timestamp)
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// Rigid body motion expressed in the source frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2 {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Transform2 {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Transform2 {
            dx,
            dy,
            dtheta: normalize_angle(dtheta),
        }
    }

    pub fn identity() -> Self {
        Transform2::new(0.0, 0.0, 0.0)
    }

    pub fn inverse(&self) -> Transform2 {
        let (s, c) = (-self.dtheta).sin_cos();
        Transform2::new(
            -(c * self.dx - s * self.dy),
            -(s * self.dx + c * self.dy),
            -self.dtheta,
        )
    }

    /// Transform composition: applying `self` then `other`.
    pub fn then(&self, other: &Transform2) -> Transform2 {
        let (s, c) = self.dtheta.sin_cos();
        Transform2::new(
            self.dx + c * other.dx - s * other.dy,
            self.dy + s * other.dx + c * other.dy,
            self.dtheta + other.dtheta,
        )
    }
}

/// Concatenates a relative transform onto a pose: the transform's
/// translation is expressed in the pose frame.
pub fn compose(pose: &Pose2, t: &Transform2) -> Pose2 {
    let (s, c) = pose.yaw.sin_cos();
    Pose2::new(
        pose.x + c * t.dx - s * t.dy,
        pose.y + s * t.dx + c * t.dy,
        pose.yaw + t.dtheta,
        pose.timestamp,
    )
}

/// Relative transform taking pose `a` to pose `b`, expressed in `a`'s frame.
pub fn between(a: &Pose2, b: &Pose2) -> Transform2 {
    let (s, c) = (-a.yaw).sin_cos();
    let rx = b.x - a.x;
    let ry = b.y - a.y;
    Transform2::new(c * rx - s * ry, s * rx + c * ry, b.yaw - a.yaw)
}

/// Dead-reckons body-frame velocities over `dt` with a midpoint-yaw
/// scheme (second order in dt).
pub fn integrate_velocity(pose: &Pose2, v_x: f64, v_y: f64, w_z: f64, dt: f64) -> Pose2 {
    debug_assert!(dt >= 0.0, "integration interval must be non-negative");
    let yaw_mid = pose.yaw + w_z * dt / 2.0;
    let (s, c) = yaw_mid.sin_cos();
    Pose2::new(
        pose.x + (v_x * c - v_y * s) * dt,
        pose.y + (v_x * s + v_y * c) * dt,
        pose.yaw + w_z * dt,
        pose.timestamp + dt,
    )
}

/// [`integrate_velocity`] driven by a filter state's velocity estimates.
pub fn integrate(pose: &Pose2, state: &KalmanState, dt: f64) -> Pose2 {
    integrate_velocity(pose, state.vx(), state.vy(), state.wz(), dt)
}

/// Homogeneous 4x4 form: upper-left 3x3 is a z-axis rotation by yaw,
/// translation (x, y, 0).
pub fn to_homogeneous(pose: &Pose2) -> Matrix4<f64> {
    let (s, c) = pose.yaw.sin_cos();
    let mut m = Matrix4::identity();
    m[(0, 0)] = c;
    m[(0, 1)] = -s;
    m[(1, 0)] = s;
    m[(1, 1)] = c;
    m[(0, 3)] = pose.x;
    m[(1, 3)] = pose.y;
    m
}

pub fn from_homogeneous(m: &Matrix4<f64>, timestamp: f64) -> Pose2 {
    Pose2::new(m[(0, 3)], m[(1, 3)], m[(1, 0)].atan2(m[(0, 0)]), timestamp)
}

/// Timestamp-ordered pose list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose2>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { poses: Vec::new() }
    }

    pub fn from_poses(poses: Vec<Pose2>) -> Result<Self> {
        if !poses.windows(2).all(|w| w[0].timestamp < w[1].timestamp) {
            return Err(Error::invalid("trajectory timestamps must strictly increase"));
        }
        Ok(Trajectory { poses })
    }

    pub fn push(&mut self, pose: Pose2) -> Result<()> {
        if let Some(last) = self.poses.last() {
            if pose.timestamp <= last.timestamp {
                return Err(Error::invalid(format!(
                    "non-increasing timestamp {} after {}",
                    pose.timestamp, last.timestamp
                )));
            }
        }
        self.poses.push(pose);
        Ok(())
    }

    pub fn poses(&self) -> &[Pose2] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn first(&self) -> Option<&Pose2> {
        self.poses.first()
    }

    pub fn last(&self) -> Option<&Pose2> {
        self.poses.last()
    }

    /// Pose at `t_query` with linearly interpolated position and
    /// shortest-arc yaw interpolation (SLERP on the planar rotation).
    /// Never extrapolates.
    pub fn interpolate(&self, t_query: f64) -> Result<Pose2> {
        let first = self
            .poses
            .first()
            .ok_or_else(|| Error::invalid("cannot interpolate an empty trajectory"))?;
        let last = self.poses.last().unwrap();
        if t_query < first.timestamp || t_query > last.timestamp {
            return Err(Error::OutOfRange {
                query: t_query,
                first: first.timestamp,
                last: last.timestamp,
            });
        }
        let idx = self
            .poses
            .partition_point(|p| p.timestamp <= t_query);
        if idx == 0 {
            return Ok(*first);
        }
        let a = &self.poses[idx - 1];
        if a.timestamp == t_query || idx == self.poses.len() {
            return Ok(*a);
        }
        let b = &self.poses[idx];
        let u = (t_query - a.timestamp) / (b.timestamp - a.timestamp);
        let yaw = a.yaw + u * normalize_angle(b.yaw - a.yaw);
        Ok(Pose2::new(
            a.x + u * (b.x - a.x),
            a.y + u * (b.y - a.y),
            yaw,
            t_query,
        ))
    }

    /// CSV export: `timestamp,x,y,yaw`, one row per pose.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,x,y,yaw\n");
        for p in &self.poses {
            out.push_str(&format!("{:.9},{:.9},{:.9},{:.9}\n", p.timestamp, p.x, p.y, p.yaw));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(char::is_alphabetic) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::invalid(format!(
                    "trajectory CSV line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))
            };
            poses.push(Pose2::new(
                parse(fields[1])?,
                parse(fields[2])?,
                parse(fields[3])?,
                parse(fields[0])?,
            ));
        }
        Trajectory::from_poses(poses)
    }

    /// KITTI pose export: 12 space-separated reals per pose, the row-major
    /// upper 3x4 block of the homogeneous matrix.
    pub fn to_kitti(&self) -> String {
        let mut out = String::new();
        for p in &self.poses {
            let m = to_homogeneous(p);
            let mut fields = Vec::with_capacity(12);
            for r in 0..3 {
                for c in 0..4 {
                    fields.push(format!("{:.9e}", m[(r, c)]));
                }
            }
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }
}
