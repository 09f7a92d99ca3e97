//! Fixed-weight response network mapping pooled camouflage features to a
//! bounded perturbation of the clean box.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scene::wrap_angle;
use crate::surrogate::features::{pool_backward, pool_features, FeatureVector, ViewContext, FEATURE_DIM};
use crate::surrogate::{FaceAtlas, Texture};

pub const HIDDEN: usize = 16;
pub const OUTPUTS: usize = 7;

/// Output slots of the response network and of box gradients.
pub mod slot {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const YAW: usize = 2;
    pub const LENGTH: usize = 3;
    pub const WIDTH: usize = 4;
    pub const HEIGHT: usize = 5;
    pub const CONF: usize = 6;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub center: [f64; 3],
    /// (length, width, height)
    pub dims: [f64; 3],
    pub yaw: f64,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn bev_center(&self) -> [f64; 2] {
        [self.center[0], self.center[1]]
    }

    /// Values in [`slot`] order.
    pub fn outputs(&self) -> [f64; OUTPUTS] {
        [
            self.center[0],
            self.center[1],
            self.yaw,
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.confidence,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub seed: u64,
    /// Bound on the BEV center shift, meters.
    pub kappa: f64,
    pub input_gain: f64,
    pub output_gain: f64,
    /// Bound on the yaw perturbation, radians.
    pub yaw_scale: f64,
    /// Bound on the relative dimension change.
    pub dim_scale: f64,
    /// How strongly a center shift costs confidence.
    pub conf_coupling: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { seed: 42, kappa: 1.5, input_gain: 6.0, output_gain: 1.5, yaw_scale: 0.3, dim_scale: 0.2, conf_coupling: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateDetector {
    config: DetectorConfig,
    w1: Vec<[f64; FEATURE_DIM]>,
    w2: [[f64; HIDDEN]; OUTPUTS],
}

/// Intermediate values needed by the backward pass.
#[derive(Clone, Copy, Debug)]
struct Forward {
    hidden: [f64; HIDDEN],
    out: [f64; OUTPUTS],
}

impl SurrogateDetector {
    pub fn new(config: DetectorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // Half the hidden units see only the front and rear faces and drive the
        // longitudinal shift; the other half see only the sides and drive the
        // lateral shift. The remaining outputs read every unit.
        let half = FEATURE_DIM / 2;
        let s1 = config.input_gain / (half as f64).sqrt();
        let s2 = config.output_gain / (HIDDEN as f64).sqrt();
        let s2_shift = config.output_gain / ((HIDDEN / 2) as f64).sqrt();
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let w1 = (0..HIDDEN)
            .map(|j| {
                let lateral = is_lateral_unit(j);
                std::array::from_fn(|i| {
                    let w = normal() * s1;
                    if (i >= half) == lateral { w } else { 0.0 }
                })
            })
            .collect();
        let w2 = std::array::from_fn(|o| {
            std::array::from_fn(|j| {
                let w = normal();
                match o {
                    slot::X if is_lateral_unit(j) => 0.0,
                    slot::Y if !is_lateral_unit(j) => 0.0,
                    slot::X | slot::Y => w * s2_shift,
                    _ => w * s2,
                }
            })
        });
        Self { config, w1, w2 }
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(DetectorConfig { seed, ..DetectorConfig::default() })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn kappa(&self) -> f64 {
        self.config.kappa
    }

    fn forward(&self, f: &FeatureVector) -> Forward {
        let mut hidden = [0.0; HIDDEN];
        for (h, row) in hidden.iter_mut().zip(&self.w1) {
            let a: f64 = row.iter().zip(&f.0).map(|(w, x)| w * x).sum();
            *h = a.tanh();
        }
        let mut out = [0.0; OUTPUTS];
        for (o, row) in out.iter_mut().zip(&self.w2) {
            *o = row.iter().zip(&hidden).map(|(w, h)| w * h).sum();
        }
        Forward { hidden, out }
    }

    fn apply(&self, clean: &DetectionBox, fw: &Forward) -> DetectionBox {
        let o = &fw.out;
        let (shift, _) = radial_saturation(o[slot::X], o[slot::Y]);
        let k = self.config.kappa;
        let (s, c) = clean.yaw.sin_cos();
        let dx = k * shift[0];
        let dy = k * shift[1];
        let ds = self.config.dim_scale;
        DetectionBox {
            center: [
                clean.center[0] + c * dx - s * dy,
                clean.center[1] + s * dx + c * dy,
                clean.center[2],
            ],
            dims: [
                clean.dims[0] * (1.0 + ds * o[slot::LENGTH].tanh()),
                clean.dims[1] * (1.0 + ds * o[slot::WIDTH].tanh()),
                clean.dims[2] * (1.0 + ds * o[slot::HEIGHT].tanh()),
            ],
            yaw: wrap_angle(clean.yaw + self.config.yaw_scale * o[slot::YAW].tanh()),
            confidence: (clean.confidence - self.conf_drop(o).tanh()).clamp(0.0, 1.0),
        }
    }

    /// Confidence loss grows with the raw confidence output and with the
    /// size of the requested center shift.
    fn conf_drop(&self, o: &[f64; OUTPUTS]) -> f64 {
        o[slot::CONF].powi(2) + self.config.conf_coupling * (o[slot::X].powi(2) + o[slot::Y].powi(2))
    }

    /// Attacked box for the given pooled features.
    pub fn detect(&self, clean: &DetectionBox, features: &FeatureVector) -> DetectionBox {
        self.apply(clean, &self.forward(features))
    }

    /// Maps `d loss / d box outputs` to `d loss / d features`.
    fn backward(&self, clean: &DetectionBox, fw: &Forward, upstream: &[f64; OUTPUTS]) -> [f64; FEATURE_DIM] {
        let o = &fw.out;
        let cfg = &self.config;
        let mut dout = [0.0; OUTPUTS];

        let (s, c) = clean.yaw.sin_cos();
        // rotate the world-frame center gradient back into the body frame
        let gbx = c * upstream[slot::X] + s * upstream[slot::Y];
        let gby = -s * upstream[slot::X] + c * upstream[slot::Y];
        let (_, jac) = radial_saturation(o[slot::X], o[slot::Y]);
        dout[slot::X] = cfg.kappa * (jac[0][0] * gbx + jac[1][0] * gby);
        dout[slot::Y] = cfg.kappa * (jac[0][1] * gbx + jac[1][1] * gby);

        let sech2 = |v: f64| 1.0 - v.tanh().powi(2);
        dout[slot::YAW] = upstream[slot::YAW] * cfg.yaw_scale * sech2(o[slot::YAW]);
        for (i, d) in [slot::LENGTH, slot::WIDTH, slot::HEIGHT].into_iter().enumerate() {
            dout[d] = upstream[d] * clean.dims[i] * cfg.dim_scale * sech2(o[d]);
        }
        let t = self.conf_drop(o).tanh();
        if (0.0..=1.0).contains(&(clean.confidence - t)) {
            let g = -upstream[slot::CONF] * (1.0 - t * t) * 2.0;
            dout[slot::CONF] = g * o[slot::CONF];
            dout[slot::X] += g * cfg.conf_coupling * o[slot::X];
            dout[slot::Y] += g * cfg.conf_coupling * o[slot::Y];
        }

        let mut dpre = [0.0; HIDDEN];
        for (j, dp) in dpre.iter_mut().enumerate() {
            let dh: f64 = (0..OUTPUTS).map(|i| self.w2[i][j] * dout[i]).sum();
            *dp = dh * (1.0 - fw.hidden[j] * fw.hidden[j]);
        }
        let mut dfeat = [0.0; FEATURE_DIM];
        for (row, dp) in self.w1.iter().zip(&dpre) {
            if *dp == 0.0 {
                continue;
            }
            for (df, w) in dfeat.iter_mut().zip(row) {
                *df += w * dp;
            }
        }
        dfeat
    }

    /// Pools, detects, and accumulates the vector-Jacobian product of
    /// `upstream` (over box outputs in [`slot`] order) into `grad`.
    pub fn detect_vjp(
        &self,
        clean: &DetectionBox,
        texture: &Texture,
        atlas: &FaceAtlas,
        ctx: &ViewContext,
        upstream: &[f64; OUTPUTS],
        grad: &mut [f64],
    ) -> DetectionBox {
        let features = pool_features(texture, atlas, ctx);
        let fw = self.forward(&features);
        let dfeat = self.backward(clean, &fw, upstream);
        pool_backward(texture, atlas, ctx, &dfeat, grad);
        self.apply(clean, &fw)
    }

    pub fn detect_texture(
        &self,
        clean: &DetectionBox,
        texture: &Texture,
        atlas: &FaceAtlas,
        ctx: &ViewContext,
    ) -> DetectionBox {
        self.detect(clean, &pool_features(texture, atlas, ctx))
    }

    /// Attacked box plus the full Jacobian of its seven outputs with respect
    /// to every texture channel (one row per output, [`slot`] order).
    pub fn detect_with_gradient(
        &self,
        clean: &DetectionBox,
        texture: &Texture,
        atlas: &FaceAtlas,
        ctx: &ViewContext,
    ) -> (DetectionBox, Vec<Vec<f64>>) {
        let features = pool_features(texture, atlas, ctx);
        let fw = self.forward(&features);
        let rows = (0..OUTPUTS)
            .map(|i| {
                let mut e = [0.0; OUTPUTS];
                e[i] = 1.0;
                let dfeat = self.backward(clean, &fw, &e);
                let mut g = vec![0.0; texture.data().len()];
                pool_backward(texture, atlas, ctx, &dfeat, &mut g);
                g
            })
            .collect();
        (self.apply(clean, &fw), rows)
    }
}

fn is_lateral_unit(j: usize) -> bool {
    j >= HIDDEN / 2
}

/// `tanh(r) / r * (x, y)` with `r = |(x, y)|`, and its Jacobian.
fn radial_saturation(x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let r = x.hypot(y);
    let (g, dg_over_r) = if r < 1e-4 {
        // series: tanh(r)/r = 1 - r^2/3 + 2r^4/15
        (1.0 - r * r / 3.0, -2.0 / 3.0 + 8.0 * r * r / 15.0)
    } else {
        let t = r.tanh();
        let g = t / r;
        let dg = ((1.0 - t * t) * r - t) / (r * r);
        (g, dg / r)
    };
    let v = [g * x, g * y];
    let jac = [
        [g + dg_over_r * x * x, dg_over_r * x * y],
        [dg_over_r * y * x, g + dg_over_r * y * y],
    ];
    (v, jac)
}
