//! Ground-plane kinematic world model.
//!
//! Poses live in a right-handed BEV frame (x forward along the initial ego
//! heading, y to the left). Heights are carried separately; every vehicle box
//! sits on the ground with its center at `z = h / 2`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::DetectionBox;

/// Inter-frame spacing of the synthetic sequences (keyframe rate).
pub const DEFAULT_DT: f64 = 0.5;
/// Number of attack frames.
pub const DEFAULT_K: usize = 3;

const MIN_SEPARATION: f64 = 1e-9;
const NEAR_PLANE: f64 = 0.1;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn heading(&self) -> [f64; 2] {
        [self.yaw.cos(), self.yaw.sin()]
    }

    /// Composes a pose expressed in this pose's local frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.yaw + local.yaw,
        )
    }

    /// Expresses a world point in this pose's local frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Rotates a local-frame vector into the world frame.
    pub fn rotate_to_world(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleType {
    #[serde(rename = "SUV")]
    Suv,
    #[serde(rename = "SEDAN")]
    Sedan,
    #[serde(rename = "VAN")]
    Van,
}

impl VehicleType {
    pub const ALL: [VehicleType; 3] = [VehicleType::Suv, VehicleType::Sedan, VehicleType::Van];
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VehicleType::Suv => "SUV",
            VehicleType::Sedan => "SEDAN",
            VehicleType::Van => "VAN",
        })
    }
}

impl FromStr for VehicleType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUV" => Ok(VehicleType::Suv),
            "SEDAN" => Ok(VehicleType::Sedan),
            "VAN" => Ok(VehicleType::Van),
            other => Err(Error::InvalidInput(format!("unknown vehicle type {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub type_tag: VehicleType,
}

impl VehicleSpec {
    /// Catalogue dimensions (length, width, height) in meters.
    pub fn catalogue(type_tag: VehicleType) -> Self {
        let (length, width, height) = match type_tag {
            VehicleType::Suv => (4.6, 1.9, 1.8),
            VehicleType::Sedan => (4.7, 1.8, 1.45),
            VehicleType::Van => (5.0, 2.0, 2.2),
        };
        Self { length, width, height, type_tag }
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    /// Uniformly scaled copy (used by pose/scale perturbations).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            length: self.length * factor,
            width: self.width * factor,
            height: self.height * factor,
            type_tag: self.type_tag,
        }
    }

    pub fn matches_catalogue(&self) -> bool {
        *self == Self::catalogue(self.type_tag)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidInput(format!("vehicle dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub center: [f64; 3],
    /// (length, width, height)
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Box3 {
    /// Box resting on the ground at `pose`.
    pub fn on_ground(pose: &Pose2, spec: &VehicleSpec) -> Self {
        Self {
            center: [pose.x, pose.y, spec.height / 2.0],
            dims: spec.dims(),
            yaw: pose.yaw,
        }
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (s, c) = self.yaw.sin_cos();
        let [l, w, h] = self.dims;
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    let lx = sx * l;
                    let ly = sy * w;
                    out[i] = [
                        self.center[0] + c * lx - s * ly,
                        self.center[1] + s * lx + c * ly,
                        self.center[2] + sz * h,
                    ];
                    i += 1;
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub focal: f64,
    pub principal_point: [f64; 2],
    /// (width, height) in pixels.
    pub image_size: [f64; 2],
    /// Mount pose relative to the ego body frame.
    pub mount: Pose2,
    /// Mount height above ground, meters.
    pub mount_height: f64,
}

impl Default for CameraModel {
    /// Front camera with nuScenes-like intrinsics.
    fn default() -> Self {
        Self {
            focal: 1266.0,
            principal_point: [800.0, 450.0],
            image_size: [1600.0, 900.0],
            mount: Pose2::new(0.0, 0.0, 0.0),
            mount_height: 1.5,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let [cx, cy] = self.principal_point;
        let [w, h] = self.image_size;
        if !(self.focal > 0.0) {
            return Err(Error::InvalidInput("camera focal must be positive".into()));
        }
        if !(cx >= 0.0 && cx <= w && cy >= 0.0 && cy <= h) {
            return Err(Error::InvalidInput("principal point outside the image".into()));
        }
        Ok(())
    }

    /// Camera pose in the world for a given ego pose.
    pub fn world_pose(&self, ego: &Pose2) -> Pose2 {
        ego.compose(&self.mount)
    }

    /// World point to camera coordinates `(depth, right, down)`.
    pub fn to_camera(&self, ego: &Pose2, p: [f64; 3]) -> [f64; 3] {
        let cam = self.world_pose(ego);
        let local = cam.to_local([p[0], p[1]]);
        [local[0], -local[1], self.mount_height - p[2]]
    }

    /// Pixel coordinates of a world point, `None` when it is behind the near plane.
    pub fn project(&self, ego: &Pose2, p: [f64; 3]) -> Option<[f64; 2]> {
        let [depth, right, down] = self.to_camera(ego, p);
        if depth <= NEAR_PLANE {
            return None;
        }
        Some([
            self.principal_point[0] + self.focal * right / depth,
            self.principal_point[1] + self.focal * down / depth,
        ])
    }

    pub fn in_image(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[0] <= self.image_size[0] && px[1] >= 0.0 && px[1] <= self.image_size[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub t: f64,
    pub ego: Pose2,
    pub ego_speed: f64,
    pub target: Pose2,
    pub target_speed: f64,
    pub illumination: f64,
}

impl FrameState {
    pub fn ego_velocity(&self) -> [f64; 2] {
        let h = self.ego.heading();
        [h[0] * self.ego_speed, h[1] * self.ego_speed]
    }

    pub fn target_velocity(&self) -> [f64; 2] {
        let h = self.target.heading();
        [h[0] * self.target_speed, h[1] * self.target_speed]
    }

    pub fn relative_speed(&self) -> f64 {
        let e = self.ego_velocity();
        let t = self.target_velocity();
        (t[0] - e[0]).hypot(t[1] - e[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "S")]
    Same,
    #[serde(rename = "O")]
    Opposite,
}

/// Scenario category in `TYPE-POS-DIR` form, e.g. `SUV-R-S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Category {
    pub vehicle: VehicleType,
    pub side: Side,
    pub direction: Direction,
}

impl Category {
    pub fn new(vehicle: VehicleType, side: Side, direction: Direction) -> Self {
        Self { vehicle, side, direction }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Left => "L",
            Side::Right => "R",
        };
        let dir = match self.direction {
            Direction::Same => "S",
            Direction::Opposite => "O",
        };
        write!(f, "{}-{side}-{dir}", self.vehicle)
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let [vehicle, side, dir] = parts.as_slice() else {
            return Err(Error::InvalidInput(format!("category {s:?} is not TYPE-POS-DIR")));
        };
        let side = match *side {
            "L" => Side::Left,
            "R" => Side::Right,
            other => return Err(Error::InvalidInput(format!("bad position {other:?}"))),
        };
        let direction = match *dir {
            "S" => Direction::Same,
            "O" => Direction::Opposite,
            other => return Err(Error::InvalidInput(format!("bad direction {other:?}"))),
        };
        Ok(Self { vehicle: vehicle.parse()?, side, direction })
    }
}

impl TryFrom<String> for Category {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    #[default]
    PassBy,
    Overtake,
    ParkedTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSequence {
    pub id: String,
    pub category: Category,
    #[serde(default)]
    pub maneuver: Maneuver,
    /// Index of the first frame within the sequence this one was cut from.
    #[serde(default)]
    pub window_start: usize,
    pub target_spec: VehicleSpec,
    pub camera: CameraModel,
    pub frames: Vec<FrameState>,
}

impl ScenarioSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dt(&self) -> f64 {
        if self.frames.len() < 2 {
            DEFAULT_DT
        } else {
            self.frames[1].t - self.frames[0].t
        }
    }

    pub fn last(&self) -> &FrameState {
        self.frames.last().expect("validated sequences are non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidInput(format!("{}: fewer than two frames", self.id)));
        }
        self.target_spec.validate()?;
        self.camera.validate()?;
        let dt = self.dt();
        for (i, w) in self.frames.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) {
                return Err(Error::InvalidInput(format!("{}: time not increasing at {i}", self.id)));
            }
            if (step - dt).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("{}: non-uniform dt at {i}", self.id)));
            }
        }
        for f in &self.frames {
            if f.ego_speed < 0.0 || f.target_speed < 0.0 {
                return Err(Error::InvalidInput(format!("{}: negative speed", self.id)));
            }
            if !(f.illumination > 0.0 && f.illumination <= 1.0) {
                return Err(Error::InvalidInput(format!("{}: illumination out of (0, 1]", self.id)));
            }
        }
        Ok(())
    }

    /// Contiguous `k`-frame window starting at `start`.
    pub fn window(&self, start: usize, k: usize) -> Result<ScenarioSequence> {
        if start + k > self.frames.len() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{} exceeds {} frames",
                start + k,
                self.frames.len()
            )));
        }
        Ok(ScenarioSequence {
            frames: self.frames[start..start + k].to_vec(),
            window_start: self.window_start + start,
            ..self.clone()
        })
    }

    pub fn camera_pose(&self, frame: &FrameState) -> Pose2 {
        self.camera.world_pose(&frame.ego)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let seq: ScenarioSequence = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        seq.validate()?;
        Ok(seq)
    }
}

/// Aspect angle of `target` seen from `observer`: the heading of the target
/// minus the bearing of the observer-to-target ray.
pub fn viewing_angle(observer: &Pose2, target: &Pose2) -> Result<f64> {
    let dx = target.x - observer.x;
    let dy = target.y - observer.y;
    if dx.hypot(dy) < MIN_SEPARATION {
        return Err(Error::DegenerateGeometry("observer and target coincide".into()));
    }
    Ok(wrap_angle(target.yaw - dy.atan2(dx)))
}

/// Absolute change in aspect angle between the first and last frame, in `[0, pi]`.
pub fn viewing_angle_variation(seq: &ScenarioSequence) -> Result<f64> {
    if seq.frames.len() < 2 {
        return Err(Error::InvalidInput("need at least two frames".into()));
    }
    let first = &seq.frames[0];
    let last = seq.last();
    let a0 = viewing_angle(&seq.camera_pose(first), &first.target)?;
    let a1 = viewing_angle(&seq.camera_pose(last), &last.target)?;
    Ok(wrap_angle(a1 - a0).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    Front = 0,
    Rear = 1,
    Left = 2,
    Right = 3,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::Front, Face::Rear, Face::Left, Face::Right];

    /// Outward normal angle in the vehicle frame.
    pub fn normal_angle(self) -> f64 {
        match self {
            Face::Front => 0.0,
            Face::Rear => PI,
            Face::Left => PI / 2.0,
            Face::Right => -PI / 2.0,
        }
    }
}

/// Per-face visibility weights indexed by [`Face`].
pub type FaceWeights = [f64; 4];

/// Back-face-culled cosine weights of the four side faces. The ray is taken
/// from the target center to the observer, so the weights depend only on the
/// aspect angle.
pub fn face_visibility(observer: &Pose2, target: &Pose2) -> Result<FaceWeights> {
    let dx = observer.x - target.x;
    let dy = observer.y - target.y;
    if dx.hypot(dy) < MIN_SEPARATION {
        return Err(Error::DegenerateGeometry("observer and target coincide".into()));
    }
    let to_camera = dy.atan2(dx) - target.yaw;
    Ok(Face::ALL.map(|f| (to_camera - f.normal_angle()).cos().max(0.0)))
}

/// Area of the convex hull of the eight projected box corners, in square pixels.
pub fn projected_area(camera: &CameraModel, bx: &Box3, ego: &Pose2) -> Result<f64> {
    let mut pts = Vec::with_capacity(8);
    for c in bx.corners() {
        match camera.project(ego, c) {
            Some(p) => pts.push(p),
            None => return Err(Error::NotVisible("box corner behind the camera".into())),
        }
    }
    Ok(convex_hull_area(&mut pts))
}

fn convex_hull_area(pts: &mut [[f64; 2]]) -> f64 {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    let n = hull.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Ground-truth passthrough box; the surrogate is exact on clean input.
pub fn clean_detection(frame: &FrameState, spec: &VehicleSpec) -> DetectionBox {
    DetectionBox {
        center: [frame.target.x, frame.target.y, spec.height / 2.0],
        dims: spec.dims(),
        yaw: wrap_angle(frame.target.yaw),
        confidence: 1.0,
    }
}
