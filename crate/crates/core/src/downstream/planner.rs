//! Trajectories, constant-velocity prediction and the clearance-based
//! braking/overtaking planner.

use serde::{Deserialize, Serialize};

use crate::downstream::tracker::{track_sequence, TrackState, TrackerParams};
use crate::error::{Error, Result};
use crate::metrics;
use crate::scene::{FrameState, Maneuver};
use crate::surrogate::DetectionBox;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds relative to the planning instant.
    pub t: f64,
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>) -> Result<Self> {
        if points.len() >= 2 {
            let dt = points[1].t - points[0].t;
            for w in points.windows(2) {
                let step = w[1].t - w[0].t;
                if !(step > 0.0) || (step - dt).abs() > 1e-9 {
                    return Err(Error::InvalidInput("trajectory timestamps must be uniform and increasing".into()));
                }
            }
        }
        Ok(Self { points })
    }

    /// Straight constant-velocity rollout from `start`.
    pub fn constant_velocity(start: [f64; 2], velocity: [f64; 2], horizon: f64, dt: f64) -> Self {
        let n = (horizon / dt + 1e-9).floor() as usize;
        let points = (0..=n)
            .map(|j| {
                let t = j as f64 * dt;
                Waypoint { t, position: [start[0] + velocity[0] * t, start[1] + velocity[1] * t] }
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn dt(&self) -> Option<f64> {
        (self.points.len() >= 2).then(|| self.points[1].t - self.points[0].t)
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.points.iter().map(|w| w.position)
    }
}

/// Extrapolates the track mean with its estimated velocity.
pub fn predict_trajectory(state: &TrackState, horizon: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || horizon < dt {
        return Err(Error::InvalidInput(format!("need horizon >= dt > 0, got {horizon} / {dt}")));
    }
    Ok(Trajectory::constant_velocity(state.position(), state.velocity(), horizon, dt))
}

/// The ego's reference path: keep lane and speed.
pub fn ego_reference_path(ego: &FrameState, horizon: f64, dt: f64) -> Trajectory {
    Trajectory::constant_velocity(ego.ego.position(), ego.ego_velocity(), horizon, dt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    /// Required lateral clearance between footprints, meters.
    pub safety_margin: f64,
    pub horizon: f64,
    /// Speed the ego must reach before the conflict point.
    pub v_safe: f64,
    pub hard_brake_threshold: f64,
    /// Clearance an overtake needs to stay committed, meters.
    pub corridor_margin: f64,
    pub max_decel: f64,
    pub ego_width: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            safety_margin: 1.0,
            horizon: 3.0,
            v_safe: 0.0,
            hard_brake_threshold: 3.0,
            corridor_margin: 1.5,
            max_decel: 9.0,
            ego_width: 1.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub ego_path: Trajectory,
    pub speed_profile: Vec<f64>,
    pub decel_profile: Vec<f64>,
    pub hard_brake: bool,
    pub overtake_abandoned: bool,
    /// Minimum distance between the prediction and the ego path.
    pub mtd: f64,
    /// Minimum footprint clearance over the prediction points ahead of the ego.
    pub min_clearance: f64,
}

impl Plan {
    pub fn max_decel(&self) -> f64 {
        self.decel_profile.iter().copied().fold(0.0, f64::max)
    }
}

/// Closest point on a polyline: (distance, along-path arc length).
fn project_onto_path(path: &[[f64; 2]], p: [f64; 2]) -> (f64, f64) {
    if path.len() == 1 {
        let d = (p[0] - path[0][0]).hypot(p[1] - path[0][1]);
        return (d, 0.0);
    }
    let mut best = (f64::INFINITY, 0.0);
    let mut arc = 0.0;
    for seg in path.windows(2) {
        let [a, b] = [seg[0], seg[1]];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len2 = ex * ex + ey * ey;
        let len = len2.sqrt();
        let s = if len2 > 0.0 {
            (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [a[0] + s * ex, a[1] + s * ey];
        let d = (p[0] - q[0]).hypot(p[1] - q[1]);
        if d < best.0 {
            best = (d, arc + s * len);
        }
        arc += len;
    }
    // points in front of the path end or behind its start: extend along the end tangents
    let along_line = |a: [f64; 2], b: [f64; 2]| {
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        if len > 0.0 {
            ((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len
        } else {
            0.0
        }
    };
    let first = along_line(path[0], path[1]);
    if first < 0.0 && best.1 == 0.0 {
        best.1 = first;
    }
    best
}

/// Per-step clearance check of the predicted target against the ego path.
/// A step whose footprint clearance falls below the safety margin demands
/// `max(0, (v^2 - v_safe^2) / (2 d))` where `d` is the along-path distance
/// to the predicted target.
pub fn plan(
    ego: &FrameState,
    ego_path: &Trajectory,
    prediction: &Trajectory,
    target_width: f64,
    params: &PlannerParams,
    maneuver: Maneuver,
) -> Result<Plan> {
    if prediction.is_empty() || ego_path.is_empty() {
        return Err(Error::InvalidInput("empty prediction or ego path".into()));
    }
    if let (Some(a), Some(b)) = (ego_path.dt(), prediction.dt()) {
        if (a - b).abs() > 1e-9 {
            return Err(Error::InvalidInput("ego path and prediction use different dt".into()));
        }
    }
    let path: Vec<[f64; 2]> = ego_path.positions().collect();
    let v = ego.ego_speed;
    let half_widths = 0.5 * (target_width + params.ego_width);
    let mut decel_profile = Vec::with_capacity(prediction.len());
    let mut min_clearance = f64::INFINITY;
    for p in prediction.positions() {
        let (dist, along) = project_onto_path(&path, p);
        let clearance = dist - half_widths;
        let mut decel = 0.0;
        if along > 0.0 {
            min_clearance = min_clearance.min(clearance);
            if clearance < params.safety_margin {
                let need = (v * v - params.v_safe * params.v_safe) / (2.0 * along);
                decel = need.clamp(0.0, params.max_decel);
            }
        }
        decel_profile.push(decel);
    }
    let max_decel = decel_profile.iter().copied().fold(0.0, f64::max);
    let speed_profile = prediction
        .points
        .iter()
        .map(|w| (v - max_decel * w.t).max(0.0))
        .collect();
    let mtd = metrics::mtd(prediction, ego_path)?;
    Ok(Plan {
        ego_path: ego_path.clone(),
        speed_profile,
        decel_profile,
        hard_brake: max_decel >= params.hard_brake_threshold,
        overtake_abandoned: maneuver == Maneuver::Overtake && min_clearance < params.corridor_margin,
        mtd,
        min_clearance,
    })
}

/// Extra braking plus weighted clearance loss induced by the attacked plan.
pub fn planning_error(clean: &Plan, attacked: &Plan, w_mtd: f64) -> f64 {
    (attacked.max_decel() - clean.max_decel()) + w_mtd * (clean.mtd - attacked.mtd).max(0.0)
}

/// Shifts the clean detections by `k * s * u` (k = 1..K), tracks them and
/// extrapolates the result.
pub fn fake_prediction(
    clean: &[DetectionBox],
    u: [f64; 2],
    s: f64,
    horizon: f64,
    dt: f64,
    tracker: &TrackerParams,
) -> Result<Trajectory> {
    let shifted: Vec<Option<DetectionBox>> = clean
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let k = (i + 1) as f64;
            let mut d = *d;
            d.center[0] += k * s * u[0];
            d.center[1] += k * s * u[1];
            Some(d)
        })
        .collect();
    let track = track_sequence(&shifted, dt, tracker)?
        .ok_or_else(|| Error::InvalidInput("no detections to track".into()))?;
    predict_trajectory(&track, horizon, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Pose2;

    fn ego(speed: f64) -> FrameState {
        FrameState {
            t: 0.0,
            ego: Pose2::new(0.0, 0.0, 0.0),
            ego_speed: speed,
            target: Pose2::new(15.0, -3.5, 0.0),
            target_speed: 0.0,
            illumination: 1.0,
        }
    }

    fn line(x0: f64, y0: f64, vx: f64, vy: f64) -> Trajectory {
        Trajectory::constant_velocity([x0, y0], [vx, vy], 3.0, 0.5)
    }

    #[test]
    fn constant_velocity_rollout() {
        let t = line(1.0, 2.0, 0.0, 0.0);
        assert!(t.positions().all(|p| p == [1.0, 2.0]));
        let t = line(0.0, 0.0, 2.0, 0.0);
        assert_eq!(t.points.last().unwrap().position, [6.0, 0.0]);
        assert_eq!(t.len(), 7);
    }

    #[test]
    fn parallel_prediction_needs_no_braking() {
        let e = ego(10.0);
        let path = ego_reference_path(&e, 3.0, 0.5);
        let p = plan(&e, &path, &line(10.0, 5.0, 10.0, 0.0), 1.8, &PlannerParams::default(), Maneuver::PassBy)
            .unwrap();
        assert_eq!(p.max_decel(), 0.0);
        assert!(!p.hard_brake);
    }

    #[test]
    fn crossing_prediction_forces_hard_brake() {
        let e = ego(8.0);
        let path = ego_reference_path(&e, 3.0, 0.5);
        let crossing = Trajectory::constant_velocity([10.0, 5.0], [0.0, -10.0 / 3.0], 3.0, 0.5);
        let p = plan(&e, &path, &crossing, 1.8, &PlannerParams::default(), Maneuver::PassBy).unwrap();
        assert!((p.max_decel() - 3.2).abs() < 1e-12, "{}", p.max_decel());
        assert!(p.hard_brake);
    }

    #[test]
    fn empty_prediction_is_rejected() {
        let e = ego(8.0);
        let path = ego_reference_path(&e, 3.0, 0.5);
        let empty = Trajectory { points: vec![] };
        assert!(plan(&e, &path, &empty, 1.8, &PlannerParams::default(), Maneuver::PassBy).is_err());
    }

    #[test]
    fn planning_error_arithmetic() {
        let e = ego(8.0);
        let path = ego_reference_path(&e, 3.0, 0.5);
        let clean = plan(&e, &path, &line(10.0, 5.0, 8.0, 0.0), 1.8, &PlannerParams::default(), Maneuver::PassBy)
            .unwrap();
        assert_eq!(planning_error(&clean, &clean, 0.5), 0.0);
        let mut attacked = clean.clone();
        attacked.decel_profile[2] = 3.2;
        attacked.mtd = clean.mtd - 1.0;
        assert!((planning_error(&clean, &attacked, 0.5) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn overtake_abandoned_when_corridor_closes() {
        let e = ego(12.0);
        let path = ego_reference_path(&e, 3.0, 0.5);
        let params = PlannerParams::default();
        // 3.0 m lateral: clearance 1.15, above the 1.0 safety margin but below the 1.5 corridor
        let pred = line(12.0, -3.0, 8.0, 0.0);
        let p = plan(&e, &path, &pred, 1.8, &params, Maneuver::Overtake).unwrap();
        assert!(p.overtake_abandoned);
        assert!(!p.hard_brake);
        let p = plan(&e, &path, &pred, 1.8, &params, Maneuver::PassBy).unwrap();
        assert!(!p.overtake_abandoned);
    }

    fn dets(n: usize) -> Vec<DetectionBox> {
        (0..n)
            .map(|k| DetectionBox {
                center: [15.0 + 3.0 * k as f64, -3.5, 0.9],
                dims: [4.6, 1.9, 1.8],
                yaw: 0.0,
                confidence: 1.0,
            })
            .collect()
    }

    #[test]
    fn zero_step_fake_prediction_is_clean() {
        let tp = TrackerParams::default();
        let d = dets(3);
        let clean = predict_trajectory(
            &track_sequence(&d.iter().copied().map(Some).collect::<Vec<_>>(), 0.5, &tp).unwrap().unwrap(),
            3.0,
            0.5,
        )
        .unwrap();
        assert_eq!(fake_prediction(&d, [0.0, 1.0], 0.0, 3.0, 0.5, &tp).unwrap(), clean);
    }

    #[test]
    fn lateral_fake_step_induces_lateral_velocity() {
        let tp = TrackerParams::default();
        let d = dets(3);
        let s = 0.3;
        let clean = fake_prediction(&d, [0.0, 1.0], 0.0, 3.0, 0.5, &tp).unwrap();
        let fake = fake_prediction(&d, [0.0, 1.0], s, 3.0, 0.5, &tp).unwrap();
        // lateral drift rate between consecutive waypoints ~ s / dt
        let lat = |t: &Trajectory, j: usize| t.points[j].position[1];
        let rate = ((lat(&fake, 6) - lat(&clean, 6)) - (lat(&fake, 0) - lat(&clean, 0))) / 3.0;
        assert!((rate - s / 0.5).abs() / (s / 0.5) < 0.1, "rate {rate}");
    }

    #[test]
    fn negated_direction_mirrors_prediction() {
        let tp = TrackerParams::default();
        let d = dets(3);
        let clean = fake_prediction(&d, [0.0, 1.0], 0.0, 3.0, 0.5, &tp).unwrap();
        let u = [0.6, 0.8];
        let plus = fake_prediction(&d, u, 0.4, 3.0, 0.5, &tp).unwrap();
        let minus = fake_prediction(&d, [-u[0], -u[1]], 0.4, 3.0, 0.5, &tp).unwrap();
        for ((c, p), m) in clean.points.iter().zip(&plus.points).zip(&minus.points) {
            for i in 0..2 {
                let a = p.position[i] - c.position[i];
                let b = c.position[i] - m.position[i];
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn braking_grows_as_the_predicted_path_closes_in() {
        let e = ego(10.0);
        let path = ego_reference_path(&e, 3.0, 0.5);
        let mut last = 0.0;
        // target drifting toward the ego lane from ever closer offsets
        for i in 0..40 {
            let y0 = -4.0 + 0.1 * i as f64;
            let p = plan(&e, &path, &line(20.0, y0, 0.0, 0.6), 1.8, &PlannerParams::default(), Maneuver::PassBy)
                .unwrap();
            assert!(p.max_decel() >= last - 1e-12, "offset {y0}: {} < {last}", p.max_decel());
            last = p.max_decel();
        }
        assert!(last > 0.0);
    }
}
