//! View-dependent pooling of texture statistics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scene::{
    face_visibility, projected_area, viewing_angle, Box3, CameraModel, Face, FaceWeights,
    FrameState, VehicleSpec,
};
use crate::surrogate::{FaceAtlas, Texture};

pub const STATS_PER_FACE: usize = 6;
pub const FEATURE_DIM: usize = 4 * STATS_PER_FACE;

/// Per-face pooled statistics, laid out face-major:
/// `[mean r, mean g, mean b, gradient energy, horizontal moment, vertical moment]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self([0.0; FEATURE_DIM])
    }

    pub fn face(&self, face: Face) -> &[f64] {
        let i = face as usize * STATS_PER_FACE;
        &self.0[i..i + STATS_PER_FACE]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Everything about one observation that scales the camouflage's influence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewContext {
    pub visibility: FaceWeights,
    /// Aspect angle of the target, radians.
    pub view: f64,
    pub illumination: f64,
    /// Projected area over the reference area, clamped to `[0, 1]`.
    pub area_factor: f64,
    /// Motion-blur attenuation in `(0, 1]`.
    pub sharpness: f64,
}

impl ViewContext {
    pub fn frontal(visibility: FaceWeights, illumination: f64, area_factor: f64) -> Self {
        Self { visibility, view: 0.0, illumination, area_factor, sharpness: 1.0 }
    }

    fn gain(&self, face: Face) -> f64 {
        self.visibility[face as usize] * self.illumination * self.area_factor * self.sharpness
    }

    /// Horizontal foreshortening of a face seen at the current aspect angle.
    fn foreshortening(&self, face: Face) -> f64 {
        (PI - self.view - face.normal_angle()).cos().max(0.0)
    }
}

/// Converts scene geometry into a [`ViewContext`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    /// Projected area (px^2) at which the area factor saturates.
    pub reference_area: f64,
    /// Relative speed (m/s) at which sharpness halves.
    pub blur_speed: f64,
}

impl Default for ViewModel {
    fn default() -> Self {
        Self { reference_area: 60_000.0, blur_speed: 4.0 }
    }
}

impl ViewModel {
    pub fn context(&self, camera: &CameraModel, frame: &FrameState, spec: &VehicleSpec) -> Result<ViewContext> {
        let cam = camera.world_pose(&frame.ego);
        let visibility = face_visibility(&cam, &frame.target)?;
        let view = viewing_angle(&cam, &frame.target)?;
        let bx = Box3::on_ground(&frame.target, spec);
        let area_factor = match projected_area(camera, &bx, &frame.ego) {
            Ok(a) => (a / self.reference_area).clamp(0.0, 1.0),
            Err(_) => 0.0,
        };
        let sharpness = 1.0 / (1.0 + frame.relative_speed() / self.blur_speed);
        Ok(ViewContext { visibility, view, illumination: frame.illumination, area_factor, sharpness })
    }
}

fn face_stats(texture: &Texture, atlas: &FaceAtlas, face: Face) -> [f64; STATS_PER_FACE] {
    let reg = atlas.region(face);
    let data = texture.data();
    let n = reg.texels.len().max(1) as f64;
    let mut s = [0.0; STATS_PER_FACE];
    for t in &reg.texels {
        let p = &data[t.pixel * 3..t.pixel * 3 + 3];
        let intensity = (p[0] + p[1] + p[2]) / 3.0;
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        s[4] += intensity * t.du;
        s[5] += intensity * t.dv;
    }
    for v in [0, 1, 2, 4, 5] {
        s[v] /= n;
    }
    if !reg.pairs.is_empty() {
        let mut e = 0.0;
        for &(a, b) in &reg.pairs {
            for ch in 0..3 {
                let d = data[a * 3 + ch] - data[b * 3 + ch];
                e += d * d;
            }
        }
        s[3] = e / (3.0 * reg.pairs.len() as f64);
    }
    s
}

/// Pools per-face statistics and weights each face by its visibility,
/// illumination, area factor and sharpness.
pub fn pool_features(texture: &Texture, atlas: &FaceAtlas, ctx: &ViewContext) -> FeatureVector {
    let mut out = [0.0; FEATURE_DIM];
    for face in Face::ALL {
        let g = ctx.gain(face);
        if g == 0.0 {
            continue;
        }
        let s = face_stats(texture, atlas, face);
        let fs = ctx.foreshortening(face);
        let o = &mut out[face as usize * STATS_PER_FACE..(face as usize + 1) * STATS_PER_FACE];
        for i in 0..STATS_PER_FACE {
            o[i] = g * s[i];
        }
        o[4] *= fs;
    }
    FeatureVector(out)
}

/// Accumulates `d loss / d texture` into `grad` given `d loss / d features`.
pub fn pool_backward(
    texture: &Texture,
    atlas: &FaceAtlas,
    ctx: &ViewContext,
    dfeat: &[f64; FEATURE_DIM],
    grad: &mut [f64],
) {
    let data = texture.data();
    for face in Face::ALL {
        let g = ctx.gain(face);
        let base = face as usize * STATS_PER_FACE;
        let df = &dfeat[base..base + STATS_PER_FACE];
        if g == 0.0 || df.iter().all(|v| *v == 0.0) {
            continue;
        }
        let reg = atlas.region(face);
        let n = reg.texels.len().max(1) as f64;
        let fs = ctx.foreshortening(face);
        let k_mean = g / n;
        let k_h = g * fs * df[4] / (3.0 * n);
        let k_v = g * df[5] / (3.0 * n);
        for t in &reg.texels {
            let moment = k_h * t.du + k_v * t.dv;
            let gp = &mut grad[t.pixel * 3..t.pixel * 3 + 3];
            for ch in 0..3 {
                gp[ch] += k_mean * df[ch] + moment;
            }
        }
        if df[3] != 0.0 && !reg.pairs.is_empty() {
            let k_e = g * df[3] * 2.0 / (3.0 * reg.pairs.len() as f64);
            for &(a, b) in &reg.pairs {
                for ch in 0..3 {
                    let d = k_e * (data[a * 3 + ch] - data[b * 3 + ch]);
                    grad[a * 3 + ch] += d;
                    grad[b * 3 + ch] -= d;
                }
            }
        }
    }
}
