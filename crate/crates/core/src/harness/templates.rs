//! Scenario templates and deterministic synthetic scenario generation.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    CameraModel, Category, Direction, FrameState, Maneuver, Pose2, ScenarioSequence, Side, VehicleSpec, VehicleType,
    DEFAULT_DT,
};

/// Closed sampling interval `[lo, hi]`; `lo == hi` pins the value.
pub type Range = [f64; 2];

/// Closest the target may get (longitudinally) by the last frame.
const MIN_FINAL_GAP: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub category: Category,
    pub maneuver: Maneuver,
    pub ego_speed: Range,
    pub target_speed: Range,
    /// Initial longitudinal gap ahead of the ego, meters.
    pub longitudinal: Range,
    /// Initial lateral offset magnitude; the sign follows the category side.
    pub lateral: Range,
    pub illumination: Range,
    pub frames: usize,
    pub camera: CameraModel,
}

impl ScenarioTemplate {
    /// Pass-by template with typical ranges for the category.
    pub fn standard(category: Category) -> Self {
        let (ego_speed, target_speed, longitudinal) = match category.direction {
            Direction::Same => ([10.0, 11.0], [4.5, 5.5], [19.0, 21.0]),
            Direction::Opposite => ([7.0, 8.0], [3.0, 4.0], [30.0, 32.0]),
        };
        Self {
            category,
            maneuver: Maneuver::PassBy,
            ego_speed,
            target_speed,
            longitudinal,
            lateral: [3.0, 3.8],
            illumination: [0.5, 1.0],
            frames: 5,
            camera: CameraModel::default(),
        }
    }

    /// A parked vehicle on the shoulder ahead of an approaching ego.
    pub fn parked(vehicle: VehicleType) -> Self {
        Self {
            category: Category::new(vehicle, Side::Right, Direction::Same),
            maneuver: Maneuver::ParkedTarget,
            ego_speed: [10.0, 11.0],
            target_speed: [0.0, 0.0],
            longitudinal: [28.0, 30.0],
            lateral: [3.0, 3.4],
            illumination: [0.6, 1.0],
            frames: 5,
            camera: CameraModel::default(),
        }
    }

    /// The ego overtakes a slower vehicle travelling in the adjacent lane.
    pub fn overtake(vehicle: VehicleType) -> Self {
        Self {
            category: Category::new(vehicle, Side::Right, Direction::Same),
            maneuver: Maneuver::Overtake,
            ego_speed: [12.0, 14.0],
            target_speed: [6.0, 8.0],
            longitudinal: [18.0, 24.0],
            lateral: [3.5, 3.8],
            illumination: [0.7, 1.0],
            frames: 4,
            camera: CameraModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("ego_speed", self.ego_speed),
            ("target_speed", self.target_speed),
            ("longitudinal", self.longitudinal),
            ("lateral", self.lateral),
            ("illumination", self.illumination),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidInput(format!("template range {name} = [{lo}, {hi}] is malformed")));
            }
        }
        if self.ego_speed[0] < 0.0 || self.target_speed[0] < 0.0 || self.lateral[0] < 0.0 {
            return Err(Error::InvalidInput("speeds and lateral offset must be non-negative".into()));
        }
        if !(self.illumination[0] > 0.0 && self.illumination[1] <= 1.0) {
            return Err(Error::InvalidInput("illumination must lie in (0, 1]".into()));
        }
        if self.maneuver == Maneuver::ParkedTarget && self.target_speed != [0.0, 0.0] {
            return Err(Error::InvalidInput("a parked target must have zero speed".into()));
        }
        if self.frames < 2 {
            return Err(Error::InvalidInput("templates need at least two frames".into()));
        }
        self.camera.validate()
    }

    /// Worst-case longitudinal gap at the last frame.
    pub fn min_final_gap(&self) -> f64 {
        let span = (self.frames - 1) as f64 * DEFAULT_DT;
        let closure = match self.category.direction {
            Direction::Same => (self.ego_speed[1] - self.target_speed[0]).max(0.0),
            Direction::Opposite => self.ego_speed[1] + self.target_speed[1],
        };
        self.longitudinal[0] - closure * span
    }
}

/// Always consumes one draw so that pinning a range leaves the other
/// draws unchanged.
pub fn draw<R: Rng>(r: Range, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    r[0] + u * (r[1] - r[0])
}

/// Builds one sequence with straight constant-speed motion for both vehicles.
pub fn build_sequence(
    id: String,
    template: &ScenarioTemplate,
    ego_speed: f64,
    target_speed: f64,
    longitudinal: f64,
    lateral: f64,
    illumination: f64,
) -> ScenarioSequence {
    let side = match template.category.side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    let yaw = match template.category.direction {
        Direction::Same => 0.0,
        Direction::Opposite => std::f64::consts::PI,
    };
    let heading = yaw.cos();
    let frames = (0..template.frames)
        .map(|j| {
            let t = j as f64 * DEFAULT_DT;
            FrameState {
                t,
                ego: Pose2::new(ego_speed * t, 0.0, 0.0),
                ego_speed,
                target: Pose2::new(longitudinal + heading * target_speed * t, side * lateral, yaw),
                target_speed,
                illumination,
            }
        })
        .collect();
    ScenarioSequence {
        id,
        category: template.category,
        maneuver: template.maneuver,
        window_start: 0,
        target_spec: VehicleSpec::catalogue(template.category.vehicle),
        camera: template.camera,
        frames,
    }
}

/// Deterministic draws from the template ranges. Templates that cannot keep
/// the target ahead of the ego yield an empty list and a warning.
pub fn generate_scenarios(template: &ScenarioTemplate, count: usize, seed: u64) -> Result<Vec<ScenarioSequence>> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be positive".into()));
    }
    template.validate()?;
    if template.min_final_gap() < MIN_FINAL_GAP {
        warn!(
            "template {} cannot keep the target {MIN_FINAL_GAP} m ahead (worst final gap {:.1} m); no scenarios generated",
            template.category,
            template.min_final_gap()
        );
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = template.category.to_string();
    (0..count)
        .map(|i| {
            let ego = draw(template.ego_speed, &mut rng);
            let tgt = draw(template.target_speed, &mut rng);
            let lon = draw(template.longitudinal, &mut rng);
            let lat = draw(template.lateral, &mut rng);
            let ill = draw(template.illumination, &mut rng);
            let seq = build_sequence(format!("{tag}-{seed}-{i:03}"), template, ego, tgt, lon, lat, ill);
            seq.validate()?;
            Ok(seq)
        })
        .collect()
}

/// Category counts of the 220-sequence bank.
pub const BANK_COUNTS: [(&str, usize); 12] = [
    ("SUV-R-S", 60),
    ("SEDAN-R-S", 60),
    ("SEDAN-L-O", 19),
    ("SEDAN-L-S", 13),
    ("SEDAN-R-O", 14),
    ("SUV-L-O", 8),
    ("SUV-L-S", 9),
    ("SUV-R-O", 6),
    ("VAN-L-O", 4),
    ("VAN-L-S", 13),
    ("VAN-R-O", 6),
    ("VAN-R-S", 8),
];

/// The synthetic scenario bank: standard templates in the fixed category mix.
pub fn scenario_bank(seed: u64) -> Result<Vec<ScenarioSequence>> {
    let mut out = Vec::new();
    for (i, (cat, n)) in BANK_COUNTS.iter().enumerate() {
        let category: Category = cat.parse()?;
        out.extend(generate_scenarios(&ScenarioTemplate::standard(category), *n, seed.wrapping_add(i as u64 * 7919))?);
    }
    Ok(out)
}
