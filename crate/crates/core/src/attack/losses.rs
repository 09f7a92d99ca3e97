//! Displacement, progression, fidelity and style losses with their
//! gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::wrap_angle;
use crate::surrogate::{slot, DetectionBox, Texture, OUTPUTS};

/// Signed displacement of the attacked center along `u_bar`.
pub fn displacement(clean: [f64; 2], attacked: [f64; 2], u_bar: [f64; 2]) -> f64 {
    (attacked[0] - clean[0]) * u_bar[0] + (attacked[1] - clean[1]) * u_bar[1]
}

/// `-sum(d)`.
pub fn loss_move(d: &[f64]) -> f64 {
    -d.iter().sum::<f64>()
}

/// `sum_k (d[k+1] - d[k] - s_bar)^2`.
pub fn loss_prog(d: &[f64], s_bar: f64) -> f64 {
    d.windows(2).map(|w| (w[1] - w[0] - s_bar).powi(2)).sum()
}

/// Gradient of [`loss_prog`] with respect to each `d[k]`.
pub fn loss_prog_grad(d: &[f64], s_bar: f64) -> Vec<f64> {
    let mut g = vec![0.0; d.len()];
    for k in 0..d.len().saturating_sub(1) {
        let r = 2.0 * (d[k + 1] - d[k] - s_bar);
        g[k + 1] += r;
        g[k] -= r;
    }
    g
}

/// Attributes compared by the fidelity loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityVector {
    pub confidence: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl FidelityVector {
    pub fn from_box(b: &DetectionBox) -> Self {
        Self { confidence: b.confidence, length: b.dims[0], width: b.dims[1], height: b.dims[2], yaw: b.yaw }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidScales {
    pub confidence: f64,
    /// Shared by length, width and height, meters.
    pub dims: f64,
    pub yaw: f64,
}

impl Default for FidScales {
    fn default() -> Self {
        Self { confidence: 1.0, dims: 1.0, yaw: 0.5 }
    }
}

fn fid_residuals(r_hat: &FidelityVector, r: &FidelityVector, s: &FidScales) -> [f64; 5] {
    [
        (r_hat.confidence - r.confidence) / s.confidence,
        (r_hat.length - r.length) / s.dims,
        (r_hat.width - r.width) / s.dims,
        (r_hat.height - r.height) / s.dims,
        wrap_angle(r_hat.yaw - r.yaw) / s.yaw,
    ]
}

/// Scaled L2 distance between attacked and clean attributes.
pub fn loss_fid(r_hat: &FidelityVector, r: &FidelityVector, scales: &FidScales) -> f64 {
    fid_residuals(r_hat, r, scales).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// [`loss_fid`] of two boxes and its gradient over the attacked box outputs
/// (in [`slot`] order). The subgradient at zero distance is zero.
pub fn loss_fid_box(attacked: &DetectionBox, clean: &DetectionBox, scales: &FidScales) -> (f64, [f64; OUTPUTS]) {
    let res = fid_residuals(&FidelityVector::from_box(attacked), &FidelityVector::from_box(clean), scales);
    let l = res.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut g = [0.0; OUTPUTS];
    if l > 0.0 {
        g[slot::CONF] = res[0] / (l * scales.confidence);
        g[slot::LENGTH] = res[1] / (l * scales.dims);
        g[slot::WIDTH] = res[2] / (l * scales.dims);
        g[slot::HEIGHT] = res[3] / (l * scales.dims);
        g[slot::YAW] = res[4] / (l * scales.yaw);
    }
    (l, g)
}

/// Mean of squared horizontal and vertical neighbour differences.
pub fn loss_tv(texture: &Texture) -> f64 {
    loss_tv_grad(texture, None)
}

/// [`loss_tv`], optionally accumulating `weight * gradient` into `grad`.
pub fn loss_tv_grad(texture: &Texture, mut grad: Option<(&mut [f64], f64)>) -> f64 {
    let (h, w) = texture.resolution();
    let data = texture.data();
    let norm = (3 * h * w) as f64;
    let mut sum = 0.0;
    let mut pair = |a: usize, b: usize, grad: &mut Option<(&mut [f64], f64)>| {
        let d = data[a] - data[b];
        sum += d * d;
        if let Some((g, wt)) = grad {
            let v = *wt * 2.0 * d / norm;
            g[a] += v;
            g[b] -= v;
        }
    };
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let i = texture.index(r, c, ch);
                if c + 1 < w {
                    pair(i, texture.index(r, c + 1, ch), &mut grad);
                }
                if r + 1 < h {
                    pair(i, texture.index(r + 1, c, ch), &mut grad);
                }
            }
        }
    }
    sum / norm
}

/// Printable colors used by the non-printability score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[f64; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        let colors = vec![
            [0.80, 0.10, 0.10],
            [0.90, 0.45, 0.10],
            [0.95, 0.80, 0.15],
            [0.55, 0.75, 0.15],
            [0.10, 0.60, 0.20],
            [0.10, 0.65, 0.60],
            [0.10, 0.55, 0.85],
            [0.15, 0.25, 0.70],
            [0.45, 0.20, 0.65],
            [0.80, 0.25, 0.60],
            [0.55, 0.35, 0.20],
            [0.85, 0.70, 0.55],
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [0.5, 0.5, 0.5],
        ];
        Self { colors }
    }
}

impl Palette {
    pub fn new(colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::InvalidInput("palette must not be empty".into()));
        }
        Ok(Self { colors })
    }
}

/// Mean distance from each pixel to its nearest palette color.
pub fn loss_nps(texture: &Texture, palette: &Palette) -> f64 {
    loss_nps_grad(texture, palette, None)
}

pub fn loss_nps_grad(texture: &Texture, palette: &Palette, mut grad: Option<(&mut [f64], f64)>) -> f64 {
    let data = texture.data();
    let n = (data.len() / 3).max(1) as f64;
    let mut sum = 0.0;
    for (p, px) in data.chunks_exact(3).enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in palette.colors.iter().enumerate() {
            let d2 = (px[0] - c[0]).powi(2) + (px[1] - c[1]).powi(2) + (px[2] - c[2]).powi(2);
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        let dist = best.0.sqrt();
        sum += dist;
        if let Some((g, wt)) = grad.as_mut() {
            if dist > 0.0 {
                let c = palette.colors[best.1];
                for ch in 0..3 {
                    g[p * 3 + ch] += *wt * (px[ch] - c[ch]) / (dist * n);
                }
            }
        }
    }
    sum / n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_move: f64,
    pub w_prog: f64,
    pub w_fid: f64,
    pub w_tv: f64,
    pub w_nps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_move: 1.0, w_prog: 1.0, w_fid: 0.5, w_tv: 0.1, w_nps: 0.05 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { w_move: 0.0, w_prog: 0.0, w_fid: 0.0, w_tv: 0.0, w_nps: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_move, self.w_prog, self.w_fid, self.w_tv, self.w_nps];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub move_: f64,
    pub prog: f64,
    pub fid: f64,
    pub tv: f64,
    pub nps: f64,
}

impl LossComponents {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.w_move * self.move_ + w.w_prog * self.prog + w.w_fid * self.fid + w.w_tv * self.tv + w.w_nps * self.nps
    }
}
