//! Evaluation metrics: per-frame displacements, progressive displacement
//! rate, prediction error, trajectory distance, braking, success rate,
//! stability and box fidelity.

use serde::{Deserialize, Serialize};

use crate::attack::losses::{loss_fid, FidScales, FidelityVector};
use crate::downstream::{Plan, Trajectory};
use crate::error::{Error, Result};
use crate::surrogate::DetectionBox;

/// Spacing used when densifying the ego path for [`mtd`].
pub const MTD_RESOLUTION: f64 = 0.1;
pub const HARD_BRAKE_THRESHOLD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDisplacements {
    pub d: Vec<f64>,
}

impl FrameDisplacements {
    pub fn new(d: Vec<f64>) -> Self {
        Self { d }
    }

    pub fn k(&self) -> usize {
        self.d.len()
    }

    pub fn is_progressive(&self) -> bool {
        !self.d.is_empty() && self.d.windows(2).all(|w| w[0] < w[1])
    }

    pub fn last(&self) -> f64 {
        self.d.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub pdr: f64,
    pub ape: f64,
    pub mtd: f64,
    pub mbd: f64,
    pub asr: f64,
    pub cv: f64,
    pub bfs: f64,
}

/// Percentage of samples with strictly increasing displacements.
pub fn pdr(samples: &[FrameDisplacements]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("pdr of an empty sample list".into()));
    }
    let n = samples.iter().filter(|s| s.is_progressive()).count();
    Ok(100.0 * n as f64 / samples.len() as f64)
}

/// Mean Euclidean distance between aligned waypoints.
pub fn ape(clean: &Trajectory, attacked: &Trajectory) -> Result<f64> {
    if clean.len() != attacked.len() || clean.is_empty() {
        return Err(Error::InvalidInput(format!(
            "ape needs equal non-empty trajectories, got {} and {}",
            clean.len(),
            attacked.len()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in clean.points.iter().zip(&attacked.points) {
        if (a.t - b.t).abs() > 1e-9 {
            return Err(Error::InvalidInput("ape timestamps differ".into()));
        }
        sum += (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1]);
    }
    Ok(sum / clean.len() as f64)
}

/// Linearly interpolates a polyline so that no gap exceeds `resolution`.
pub fn densify(points: &[[f64; 2]], resolution: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let n = ((len / resolution).ceil() as usize).max(1);
        for i in 0..n {
            let s = i as f64 / n as f64;
            out.push([w[0][0] + s * (w[1][0] - w[0][0]), w[0][1] + s * (w[1][1] - w[0][1])]);
        }
    }
    if let Some(p) = points.last() {
        out.push(*p);
    }
    out
}

/// Minimum distance from any predicted waypoint to the densified ego path.
pub fn mtd(prediction: &Trajectory, ego_path: &Trajectory) -> Result<f64> {
    if prediction.is_empty() || ego_path.is_empty() {
        return Err(Error::InvalidInput("mtd needs non-empty trajectories".into()));
    }
    let path: Vec<[f64; 2]> = ego_path.positions().collect();
    let dense = densify(&path, MTD_RESOLUTION);
    let mut best = f64::INFINITY;
    for p in prediction.positions() {
        for q in &dense {
            best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    Ok(best)
}

/// Peak deceleration over a set of per-frame plans.
pub fn mbd(plans: &[Plan]) -> f64 {
    plans.iter().map(Plan::max_decel).fold(0.0, f64::max)
}

/// Peak of a raw decel profile.
pub fn mbd_profile(profile: &[f64]) -> f64 {
    profile.iter().copied().fold(0.0, f64::max)
}

/// Percentage of runs whose MBD reaches `threshold`.
pub fn asr(mbds: &[f64], threshold: f64) -> Result<f64> {
    if mbds.is_empty() {
        return Err(Error::InvalidInput("asr of an empty list".into()));
    }
    let n = mbds.iter().filter(|&&m| m >= threshold).count();
    Ok(100.0 * n as f64 / mbds.len() as f64)
}

/// Population standard deviation over mean.
pub fn cv(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("cv of an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::UndefinedMetric("cv with zero mean".into()));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Box fidelity score `exp(-fidelity distance)`.
pub fn bfs(clean: &DetectionBox, attacked: &DetectionBox) -> f64 {
    bfs_with(clean, attacked, &FidScales::default())
}

pub fn bfs_with(clean: &DetectionBox, attacked: &DetectionBox, scales: &FidScales) -> f64 {
    let r = FidelityVector::from_box(clean);
    let r_hat = FidelityVector::from_box(attacked);
    (-loss_fid(&r_hat, &r, scales)).exp()
}

pub fn mean_displacement(d: &FrameDisplacements) -> f64 {
    if d.d.is_empty() {
        return 0.0;
    }
    d.d.iter().sum::<f64>() / d.d.len() as f64
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
