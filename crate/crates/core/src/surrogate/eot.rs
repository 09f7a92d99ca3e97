//! Pose and projection perturbations for expectation over transformation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{CameraModel, FrameState, Pose2, VehicleSpec};

/// Half-widths of the symmetric sampling ranges around the identity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EotRanges {
    /// Yaw jitter, radians.
    pub yaw: f64,
    /// BEV translation per axis, meters.
    pub translation: f64,
    /// Depth ratio is drawn from `1 +/- depth_ratio`.
    pub depth_ratio: f64,
    /// Scale is drawn from `1 +/- scale`.
    pub scale: f64,
}

impl EotRanges {
    pub fn standard() -> Self {
        Self { yaw: 0.05, translation: 0.2, depth_ratio: 0.1, scale: 0.05 }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EotSample {
    pub yaw_jitter: f64,
    pub translation: [f64; 2],
    pub depth_ratio: f64,
    pub scale: f64,
}

impl EotSample {
    pub const IDENTITY: EotSample =
        EotSample { yaw_jitter: 0.0, translation: [0.0, 0.0], depth_ratio: 1.0, scale: 1.0 };
}

fn symmetric<R: Rng>(half: f64, rng: &mut R) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

pub fn sample_eot<R: Rng>(ranges: &EotRanges, rng: &mut R) -> EotSample {
    EotSample {
        yaw_jitter: symmetric(ranges.yaw, rng),
        translation: [symmetric(ranges.translation, rng), symmetric(ranges.translation, rng)],
        depth_ratio: 1.0 + symmetric(ranges.depth_ratio, rng),
        scale: 1.0 + symmetric(ranges.scale, rng),
    }
}

/// Jitters the target pose, rescales its distance along the camera ray and
/// scales the vehicle body.
pub fn apply_eot(
    frame: &FrameState,
    spec: &VehicleSpec,
    camera: &CameraModel,
    sample: &EotSample,
) -> (FrameState, VehicleSpec) {
    if *sample == EotSample::IDENTITY {
        return (*frame, *spec);
    }
    let cam = camera.world_pose(&frame.ego);
    let x = frame.target.x + sample.translation[0];
    let y = frame.target.y + sample.translation[1];
    let target = Pose2::new(
        cam.x + sample.depth_ratio * (x - cam.x),
        cam.y + sample.depth_ratio * (y - cam.y),
        frame.target.yaw + sample.yaw_jitter,
    );
    (FrameState { target, ..*frame }, spec.scaled(sample.scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{projected_area, Box3, VehicleType};
    use rand::SeedableRng;

    fn frame() -> FrameState {
        FrameState {
            t: 0.0,
            ego: Pose2::new(0.0, 0.0, 0.0),
            ego_speed: 10.0,
            target: Pose2::new(15.0, -3.0, 0.1),
            target_speed: 6.0,
            illumination: 0.9,
        }
    }

    #[test]
    fn zero_ranges_give_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_eot(&EotRanges::default(), &mut rng), EotSample::IDENTITY);
    }

    #[test]
    fn identity_sample_leaves_frame_unchanged() {
        let spec = VehicleSpec::catalogue(VehicleType::Suv);
        let (f, s) = apply_eot(&frame(), &spec, &CameraModel::default(), &EotSample::IDENTITY);
        assert_eq!(f, frame());
        assert_eq!(s, spec);
    }

    #[test]
    fn translation_shifts_target_exactly() {
        let spec = VehicleSpec::catalogue(VehicleType::Suv);
        let sample = EotSample { translation: [0.5, 0.0], ..EotSample::IDENTITY };
        let (f, _) = apply_eot(&frame(), &spec, &CameraModel::default(), &sample);
        assert_eq!(f.target.x, frame().target.x + 0.5);
        assert_eq!(f.target.y, frame().target.y);
    }

    #[test]
    fn doubling_depth_quarters_area() {
        let spec = VehicleSpec::catalogue(VehicleType::Sedan);
        let cam = CameraModel::default();
        let mut base = frame();
        base.target = Pose2::new(30.0, 0.0, 0.0);
        let sample = EotSample { depth_ratio: 2.0, ..EotSample::IDENTITY };
        let (far, _) = apply_eot(&base, &spec, &cam, &sample);
        let a0 = projected_area(&cam, &Box3::on_ground(&base.target, &spec), &base.ego).unwrap();
        let a1 = projected_area(&cam, &Box3::on_ground(&far.target, &spec), &far.ego).unwrap();
        // pinhole: (30 / 60)^2, up to the box's depth extent
        assert!((a0 / a1 - 4.0).abs() < 0.5, "ratio {}", a0 / a1);
    }

    #[test]
    fn yaw_draws_stay_in_range_and_center() {
        let ranges = EotRanges { yaw: 0.1, ..EotRanges::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_eot(&ranges, &mut rng).yaw_jitter).collect();
        assert!(draws.iter().all(|v| (-0.1..=0.1).contains(v)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        // uniform on [-a, a]: sigma = a / sqrt(3)
        let se = 0.1 / 3f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn depth_ratio_draws_positive() {
        let ranges = EotRanges { depth_ratio: 0.1, ..EotRanges::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let s = sample_eot(&ranges, &mut rng);
            assert!(s.depth_ratio > 0.0 && (0.9..=1.1).contains(&s.depth_ratio));
        }
    }
}
