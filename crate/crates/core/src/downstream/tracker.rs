//! Single-target constant-velocity Kalman tracker over
//! `(x, y, yaw, vx, vy, yaw_rate)`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::wrap_angle;
use crate::surrogate::DetectionBox;

pub type StateVec = SVector<f64, 6>;
pub type StateCov = SMatrix<f64, 6, 6>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Measurement noise std for position (m) and yaw (rad).
    pub meas_pos_std: f64,
    pub meas_yaw_std: f64,
    /// White-acceleration spectral densities.
    pub accel_var: f64,
    pub yaw_accel_var: f64,
    /// Prior std of the unobserved velocity components at initialization.
    pub init_vel_std: f64,
    pub init_yaw_rate_std: f64,
    /// Squared Mahalanobis gate; detections beyond it restart the track.
    pub gate: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            meas_pos_std: 0.05,
            meas_yaw_std: 0.02,
            accel_var: 0.5,
            yaw_accel_var: 0.1,
            init_vel_std: 10.0,
            init_yaw_rate_std: 1.0,
            gate: 1e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub covariance: StateCov,
    pub age: u32,
    pub hits: u32,
    pub dims: [f64; 3],
}

impl TrackState {
    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.mean[3], self.mean[4]]
    }

    pub fn init(det: &DetectionBox, params: &TrackerParams) -> Self {
        let mean = StateVec::from_column_slice(&[det.center[0], det.center[1], det.yaw, 0.0, 0.0, 0.0]);
        let p = params.meas_pos_std.powi(2);
        let y = params.meas_yaw_std.powi(2);
        let v = params.init_vel_std.powi(2);
        let w = params.init_yaw_rate_std.powi(2);
        let covariance = StateCov::from_diagonal(&SVector::from_column_slice(&[p, p, y, v, v, w]));
        Self { mean, covariance, age: 1, hits: 1, dims: det.dims }
    }

    fn predict(&mut self, dt: f64, params: &TrackerParams) {
        let mut f = StateCov::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let mut q = StateCov::zeros();
        for (i, var) in [(0, params.accel_var), (1, params.accel_var), (2, params.yaw_accel_var)] {
            q[(i, i)] = var * dt.powi(4) / 4.0;
            q[(i, i + 3)] = var * dt.powi(3) / 2.0;
            q[(i + 3, i)] = var * dt.powi(3) / 2.0;
            q[(i + 3, i + 3)] = var * dt * dt;
        }
        self.mean = f * self.mean;
        self.mean[2] = wrap_angle(self.mean[2]);
        self.covariance = f * self.covariance * f.transpose() + q;
        self.age += 1;
    }

    /// Squared Mahalanobis distance of a detection from the predicted state.
    fn innovation(&self, det: &DetectionBox, params: &TrackerParams) -> (SVector<f64, 3>, SMatrix<f64, 3, 3>) {
        let z = SVector::<f64, 3>::new(
            det.center[0] - self.mean[0],
            det.center[1] - self.mean[1],
            wrap_angle(det.yaw - self.mean[2]),
        );
        let h = measurement_matrix();
        let r = SMatrix::<f64, 3, 3>::from_diagonal(&SVector::<f64, 3>::new(
            params.meas_pos_std.powi(2),
            params.meas_pos_std.powi(2),
            params.meas_yaw_std.powi(2),
        ));
        (z, h * self.covariance * h.transpose() + r)
    }

    fn correct(&mut self, det: &DetectionBox, params: &TrackerParams) -> Result<()> {
        let (innov, s) = self.innovation(det, params);
        let h = measurement_matrix();
        let s_inv = s
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?
            .inverse();
        let k = self.covariance * h.transpose() * s_inv;
        self.mean += k * innov;
        self.mean[2] = wrap_angle(self.mean[2]);
        // Joseph form
        let ikh = StateCov::identity() - k * h;
        let r = SMatrix::<f64, 3, 3>::from_diagonal(&SVector::<f64, 3>::new(
            params.meas_pos_std.powi(2),
            params.meas_pos_std.powi(2),
            params.meas_yaw_std.powi(2),
        ));
        let p = ikh * self.covariance * ikh.transpose() + k * r * k.transpose();
        self.covariance = (p + p.transpose()) * 0.5;
        if self.covariance.cholesky().is_none() {
            return Err(Error::Numerical("track covariance lost positive definiteness".into()));
        }
        self.hits += 1;
        self.dims = det.dims;
        Ok(())
    }

    /// Predict-only step for frames without a detection.
    pub fn coast(&mut self, dt: f64, params: &TrackerParams) {
        self.predict(dt, params);
    }
}

fn measurement_matrix() -> SMatrix<f64, 3, 6> {
    let mut h = SMatrix::<f64, 3, 6>::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;
    h
}

/// Predict-then-update. Without a prior state the track is initialized from
/// the detection with zero velocity.
pub fn track_update(
    state: Option<TrackState>,
    detection: &DetectionBox,
    dt: f64,
    params: &TrackerParams,
) -> Result<TrackState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let Some(mut st) = state else {
        return Ok(TrackState::init(detection, params));
    };
    st.predict(dt, params);
    let (innov, s) = st.innovation(detection, params);
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
    let m2 = innov.dot(&chol.solve(&innov));
    if m2 > params.gate {
        return Ok(TrackState::init(detection, params));
    }
    st.correct(detection, params)?;
    Ok(st)
}

/// Runs the tracker over a detection sequence; `None` entries coast.
pub fn track_sequence(
    detections: &[Option<DetectionBox>],
    dt: f64,
    params: &TrackerParams,
) -> Result<Option<TrackState>> {
    let mut state: Option<TrackState> = None;
    for det in detections {
        state = match (state, det) {
            (s, Some(d)) => Some(track_update(s, d, dt, params)?),
            (Some(mut s), None) => {
                s.coast(dt, params);
                Some(s)
            }
            (None, None) => None,
        };
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64) -> DetectionBox {
        DetectionBox { center: [x, y, 0.9], dims: [4.6, 1.9, 1.8], yaw: 0.0, confidence: 1.0 }
    }

    #[test]
    fn init_from_detection() {
        let st = track_update(None, &det(10.0, 2.0), 0.5, &TrackerParams::default()).unwrap();
        assert_eq!(st.position(), [10.0, 2.0]);
        assert_eq!(st.velocity(), [0.0, 0.0]);
        assert!(st.age >= st.hits);
    }

    #[test]
    fn stationary_detections_give_zero_velocity() {
        let p = TrackerParams::default();
        let mut st = None;
        for _ in 0..10 {
            st = Some(track_update(st, &det(10.0, 2.0), 0.5, &p).unwrap());
        }
        let v = st.unwrap().velocity();
        assert!(v[0].abs() < 1e-6 && v[1].abs() < 1e-6);
    }

    #[test]
    fn constant_motion_converges_to_true_velocity() {
        let p = TrackerParams::default();
        let dt = 0.5;
        let mut st = None;
        for k in 0..10 {
            st = Some(track_update(st, &det(10.0 + k as f64, 2.0), dt, &p).unwrap());
        }
        let st = st.unwrap();
        let v = st.velocity();
        assert!((v[0] - 1.0 / dt).abs() / (1.0 / dt) < 0.02, "vx {}", v[0]);
        assert!(v[1].abs() < 0.02);
        assert!(st.covariance.cholesky().is_some());
        assert_eq!(st.hits, 10);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let st = track_update(None, &det(0.0, 0.0), 0.5, &TrackerParams::default()).unwrap();
        assert!(track_update(Some(st), &det(0.0, 0.0), 0.0, &TrackerParams::default()).is_err());
    }

    #[test]
    fn missing_detection_coasts() {
        let p = TrackerParams::default();
        let dets = [Some(det(0.0, 0.0)), Some(det(1.0, 0.0)), None];
        let st = track_sequence(&dets, 0.5, &p).unwrap().unwrap();
        assert_eq!(st.hits, 2);
        assert_eq!(st.age, 3);
        assert!(st.position()[0] > 1.5);
    }
}
