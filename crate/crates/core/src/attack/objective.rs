//! The combined attack objective for one scenario and for a training group,
//! with gradients assembled through the surrogate.

use rayon::prelude::*;

use crate::attack::losses::{
    displacement, loss_fid_box, loss_move, loss_nps_grad, loss_prog, loss_prog_grad, loss_tv_grad, FidScales,
    LossComponents, LossWeights, Palette,
};
use crate::attack::AttackTarget;
use crate::error::Result;
use crate::scene::{clean_detection, ScenarioSequence};
use crate::surrogate::{
    apply_eot, slot, DetectionBox, EotSample, FaceAtlas, SurrogateDetector, Texture, ViewContext, ViewModel,
    OUTPUTS,
};

/// A K-frame attack window together with the face layout of its target.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackScenario {
    pub seq: ScenarioSequence,
    pub atlas: FaceAtlas,
}

impl AttackScenario {
    pub fn new(seq: ScenarioSequence, texture_height: usize, texture_width: usize) -> Result<Self> {
        let atlas = FaceAtlas::for_vehicle(&seq.target_spec, texture_height, texture_width)?;
        Ok(Self { seq, atlas })
    }
}

/// The surrogate perception model shared by optimization and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub detector: SurrogateDetector,
    pub view: ViewModel,
}

/// Clean and attacked boxes of one scenario under a single transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBoxes {
    pub clean: Vec<DetectionBox>,
    pub attacked: Vec<DetectionBox>,
}

impl FrameBoxes {
    pub fn displacements(&self, u_bar: [f64; 2]) -> Vec<f64> {
        self.clean
            .iter()
            .zip(&self.attacked)
            .map(|(c, a)| displacement(c.bev_center(), a.bev_center(), u_bar))
            .collect()
    }
}

/// Clean boxes and view contexts of every frame under one transformation.
pub fn frame_inputs(
    sc: &AttackScenario,
    model: &Surrogate,
    sample: &EotSample,
) -> Result<Vec<(DetectionBox, ViewContext)>> {
    sc.seq
        .frames
        .iter()
        .map(|frame| {
            let (fr, spec) = apply_eot(frame, &sc.seq.target_spec, &sc.seq.camera, sample);
            Ok((clean_detection(&fr, &spec), model.view.context(&sc.seq.camera, &fr, &spec)?))
        })
        .collect()
}

/// Forward pass only.
pub fn attack_frames(texture: &Texture, sc: &AttackScenario, model: &Surrogate, sample: &EotSample) -> Result<FrameBoxes> {
    let inputs = frame_inputs(sc, model, sample)?;
    let attacked = inputs.iter().map(|(c, ctx)| model.detector.detect_texture(c, texture, &sc.atlas, ctx)).collect();
    Ok(FrameBoxes { clean: inputs.into_iter().map(|(c, _)| c).collect(), attacked })
}

/// Per-scenario part of the objective (move, progression, fidelity) and its
/// weighted gradient accumulated into `grad`.
pub fn scenario_objective(
    texture: &Texture,
    sc: &AttackScenario,
    model: &Surrogate,
    sample: &EotSample,
    target: &AttackTarget,
    weights: &LossWeights,
    scales: &FidScales,
    grad: Option<&mut [f64]>,
) -> Result<(LossComponents, Vec<f64>)> {
    let inputs = frame_inputs(sc, model, sample)?;
    let boxes = FrameBoxes {
        clean: inputs.iter().map(|(c, _)| *c).collect(),
        attacked: inputs.iter().map(|(c, ctx)| model.detector.detect_texture(c, texture, &sc.atlas, ctx)).collect(),
    };
    let d = boxes.displacements(target.u);
    let k = d.len() as f64;
    let mut comps = LossComponents { move_: loss_move(&d), prog: loss_prog(&d, target.s), ..Default::default() };
    let fid: Vec<(f64, [f64; OUTPUTS])> =
        boxes.attacked.iter().zip(&boxes.clean).map(|(a, c)| loss_fid_box(a, c, scales)).collect();
    comps.fid = fid.iter().map(|(l, _)| l).sum::<f64>() / k;

    if let Some(grad) = grad {
        let dprog = loss_prog_grad(&d, target.s);
        for (i, (clean, ctx)) in inputs.iter().enumerate() {
            let dd = -weights.w_move + weights.w_prog * dprog[i];
            let mut up = [0.0; OUTPUTS];
            up[slot::X] = dd * target.u[0];
            up[slot::Y] = dd * target.u[1];
            if weights.w_fid != 0.0 {
                for (u, g) in up.iter_mut().zip(&fid[i].1) {
                    *u += weights.w_fid / k * g;
                }
            }
            if up.iter().all(|v| *v == 0.0) {
                continue;
            }
            model.detector.detect_vjp(clean, texture, &sc.atlas, ctx, &up, grad);
        }
    }
    Ok((comps, d))
}

/// Group objective: scenario terms averaged over the group plus texture
/// regularizers. Returns the weighted total, its components and optionally
/// the gradient with respect to every texture channel.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    texture: &Texture,
    scenarios: &[AttackScenario],
    samples: &[EotSample],
    model: &Surrogate,
    target: &AttackTarget,
    weights: &LossWeights,
    scales: &FidScales,
    palette: &Palette,
    with_grad: bool,
) -> Result<(f64, LossComponents, Option<Vec<f64>>)> {
    let n = texture.data().len();
    let parts: Vec<Result<(LossComponents, Option<Vec<f64>>)>> = scenarios
        .par_iter()
        .zip(samples.par_iter())
        .map(|(sc, sample)| {
            let mut g = with_grad.then(|| vec![0.0; n]);
            let (c, _) = scenario_objective(texture, sc, model, sample, target, weights, scales, g.as_deref_mut())?;
            Ok((c, g))
        })
        .collect();
    let m = scenarios.len().max(1) as f64;
    let mut comps = LossComponents::default();
    let mut grad = with_grad.then(|| vec![0.0; n]);
    for part in parts {
        let (c, g) = part?;
        comps.move_ += c.move_ / m;
        comps.prog += c.prog / m;
        comps.fid += c.fid / m;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v / m;
            }
        }
    }
    comps.tv = loss_tv_grad(texture, grad.as_deref_mut().map(|g| (g, weights.w_tv)));
    comps.nps = loss_nps_grad(texture, palette, grad.as_deref_mut().map(|g| (g, weights.w_nps)));
    Ok((comps.weighted(weights), comps, grad))
}
