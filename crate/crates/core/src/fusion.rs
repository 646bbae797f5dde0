//! Asynchronous five-state Kalman filter.
//!
//! State vector: [v_x, v_y, w_z, α_x, α_y] under a constant-acceleration
//! process model. Radar velocity measurements observe (v_x, v_y, w_z); raw
//! IMU samples observe (w_z, α_x, α_y) with the gyro reading corrected for
//! a constant bias at the innovation. Updates happen at each sensor's
//! native timestamp: the state is predicted to the event time, then the
//! matching measurement update is applied.

use crate::error::{Error, Result};
use crate::registration::RadarVelocity;
use nalgebra::{Cholesky, Matrix3, Matrix5, SMatrix, Vector3, Vector5};

pub type StateVector = Vector5<f64>;
pub type Covariance = Matrix5<f64>;

const IDX_VX: usize = 0;
const IDX_VY: usize = 1;
const IDX_WZ: usize = 2;
const IDX_AX: usize = 3;
const IDX_AY: usize = 4;

/// Filter state: mean, covariance and time of validity.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: StateVector,
    pub p: Covariance,
    /// Seconds.
    pub t: f64,
}

impl KalmanState {
    /// Zero state at time `t` with the configured initial covariance.
    pub fn initial(t: f64, cfg: &KalmanConfig) -> Self {
        KalmanState {
            x: StateVector::zeros(),
            p: cfg.initial_p,
            t,
        }
    }

    pub fn vx(&self) -> f64 {
        self.x[IDX_VX]
    }

    pub fn vy(&self) -> f64 {
        self.x[IDX_VY]
    }

    pub fn wz(&self) -> f64 {
        self.x[IDX_WZ]
    }

    pub fn ax(&self) -> f64 {
        self.x[IDX_AX]
    }

    pub fn ay(&self) -> f64 {
        self.x[IDX_AY]
    }
}

/// Noise configuration and bias plumbing.
#[derive(Debug, Clone)]
pub struct KalmanConfig {
    /// Continuous-time process noise; scaled by the interval at predict.
    pub q: Covariance,
    /// Measurement noise of (v_x, v_y, w_z) radar velocities.
    pub r_radar: Matrix3<f64>,
    /// Measurement noise of (w_z, α_x, α_y) IMU samples.
    pub r_imu: Matrix3<f64>,
    /// Constant gyro bias in rad/s, subtracted from the gyro reading at
    /// the innovation. Zero disables compensation.
    pub gyro_bias: f64,
    pub initial_p: Covariance,
    /// Use the Joseph-form covariance update for extra numerical margin.
    pub joseph_form: bool,
    /// Gain of the control-input pathway that would feed the bias through
    /// B·u into w_z at predict time. Kept in the model for completeness;
    /// zero by default since compensation happens at the innovation.
    pub bias_control_gain: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            q: Covariance::from_diagonal(&Vector5::new(0.0, 0.0, 4e-4, 0.09, 0.09)),
            r_radar: Matrix3::from_diagonal(&Vector3::new(0.0625, 0.0625, 4e-4)),
            r_imu: Matrix3::from_diagonal(&Vector3::new(1e-4, 0.01, 0.01)),
            gyro_bias: 0.0,
            initial_p: Covariance::from_diagonal(&Vector5::new(4.0, 4.0, 0.25, 1.0, 1.0)),
            joseph_form: false,
            bias_control_gain: 0.0,
        }
    }
}

/// One raw inertial sample: planar accelerations and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Seconds.
    pub timestamp: f64,
    pub accel_x: f64,
    pub accel_y: f64,
    pub gyro_z: f64,
}

/// Timestamp-ordered tagged record driving the asynchronous update loop.
#[derive(Debug, Clone, Copy)]
pub enum MeasurementEvent {
    Imu(ImuSample),
    Radar(RadarVelocity),
}

impl MeasurementEvent {
    pub fn timestamp(&self) -> f64 {
        match self {
            MeasurementEvent::Imu(s) => s.timestamp,
            MeasurementEvent::Radar(v) => v.timestamp,
        }
    }
}

fn transition(dt: f64) -> Covariance {
    let mut f = Covariance::identity();
    f[(IDX_VX, IDX_AX)] = dt;
    f[(IDX_VY, IDX_AY)] = dt;
    f
}

fn symmetrize(p: &mut Covariance) {
    let pt = p.transpose();
    *p = (*p + pt) * 0.5;
}

/// Propagates the state by `dt` seconds under the constant-acceleration
/// model: v' = v + α·dt, w and α held. Covariance grows by F P Fᵀ + Q·dt.
pub fn predict(state: &KalmanState, dt: f64, cfg: &KalmanConfig) -> Result<KalmanState> {
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!("predict interval must be >= 0, got {dt}")));
    }
    let f = transition(dt);
    let mut x = f * state.x;
    // B·u control pathway (gyro bias into w_z); inert by default.
    x[IDX_WZ] += cfg.bias_control_gain * cfg.gyro_bias * dt;
    let mut p = f * state.p * f.transpose() + cfg.q * dt;
    symmetrize(&mut p);
    Ok(KalmanState {
        x,
        p,
        t: state.t + dt,
    })
}

fn apply_update(
    state: &KalmanState,
    h: &SMatrix<f64, 3, 5>,
    z: &Vector3<f64>,
    r: &Matrix3<f64>,
    cfg: &KalmanConfig,
) -> Result<KalmanState> {
    let s = h * state.p * h.transpose() + r;
    let chol = Cholesky::new(s)
        .ok_or_else(|| Error::Degenerate("innovation covariance is not positive definite".into()))?;
    let k = state.p * h.transpose() * chol.inverse();
    let innovation = z - h * state.x;
    let x = state.x + k * innovation;
    let ikh = Covariance::identity() - k * h;
    let mut p = if cfg.joseph_form {
        ikh * state.p * ikh.transpose() + k * r * k.transpose()
    } else {
        ikh * state.p
    };
    symmetrize(&mut p);
    Ok(KalmanState { x, p, t: state.t })
}

fn check_stamp(state: &KalmanState, z_t: f64) -> Result<()> {
    if (z_t - state.t).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "measurement at t={z_t} but state is at t={}; predict to the event time first",
            state.t
        )));
    }
    Ok(())
}

/// Measurement update from a radar velocity, observing (v_x, v_y, w_z).
pub fn update_radar(state: &KalmanState, z: &RadarVelocity, cfg: &KalmanConfig) -> Result<KalmanState> {
    check_stamp(state, z.timestamp)?;
    let mut h = SMatrix::<f64, 3, 5>::zeros();
    h[(0, IDX_VX)] = 1.0;
    h[(1, IDX_VY)] = 1.0;
    h[(2, IDX_WZ)] = 1.0;
    let zv = Vector3::new(z.v_x, z.v_y, z.w_z);
    apply_update(state, &h, &zv, &cfg.r_radar, cfg)
}

/// Measurement update from a raw IMU sample, observing (w_z, α_x, α_y);
/// the gyro reading is corrected by the configured constant bias.
pub fn update_imu(state: &KalmanState, z: &ImuSample, cfg: &KalmanConfig) -> Result<KalmanState> {
    check_stamp(state, z.timestamp)?;
    let mut h = SMatrix::<f64, 3, 5>::zeros();
    h[(0, IDX_WZ)] = 1.0;
    h[(1, IDX_AX)] = 1.0;
    h[(2, IDX_AY)] = 1.0;
    let zv = Vector3::new(z.gyro_z - cfg.gyro_bias, z.accel_x, z.accel_y);
    apply_update(state, &h, &zv, &cfg.r_imu, cfg)
}

/// Propagates the state to the event time and applies the matching update.
/// Events must be fed in non-decreasing timestamp order.
pub fn step(state: &KalmanState, event: &MeasurementEvent, cfg: &KalmanConfig) -> Result<KalmanState> {
    let event_t = event.timestamp();
    if event_t < state.t - 1e-12 {
        return Err(Error::OutOfOrder {
            event_t,
            state_t: state.t,
        });
    }
    let dt = (event_t - state.t).max(0.0);
    let mut predicted = predict(state, dt, cfg)?;
    predicted.t = event_t; // exact stamp, no accumulation drift
    match event {
        MeasurementEvent::Imu(z) => update_imu(&predicted, z, cfg),
        MeasurementEvent::Radar(z) => update_radar(&predicted, z, cfg),
    }
}
