//! Adam optimization of the shared texture under expectation over
//! transformation, plus the attack configuration file.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::losses::{FidScales, LossComponents, LossWeights, Palette};
use crate::attack::objective::{total_loss, AttackScenario, Surrogate};
use crate::attack::search::SearchGrid;
use crate::attack::AttackTarget;
use crate::error::{Error, Result};
use crate::surrogate::{sample_eot, EotRanges, EotSample, Texture};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureInit {
    Random,
    Gray,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub texture_height: usize,
    pub texture_width: usize,
    pub texture_init: TextureInit,
    pub weights: LossWeights,
    pub fid_scales: FidScales,
    pub eot: EotRanges,
    /// Averaged transformation draws per scenario per step.
    pub eot_samples: usize,
    pub grid: SearchGrid,
    /// Attack window length in frames.
    pub k: usize,
    pub theta_min: f64,
    /// When false the first window is used instead of the VAF argmax.
    pub use_vaf: bool,
    pub palette: Palette,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.01,
            seed: 7,
            texture_height: 64,
            texture_width: 64,
            texture_init: TextureInit::Random,
            weights: LossWeights::default(),
            fid_scales: FidScales::default(),
            eot: EotRanges::standard(),
            eot_samples: 1,
            grid: SearchGrid::default(),
            k: 3,
            theta_min: 0.15,
            use_vaf: true,
            palette: Palette::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.texture_height < 2 || self.texture_width < 2 {
            return Err(Error::InvalidInput("texture must be at least 2x2".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput("learning rate must be non-negative".into()));
        }
        if self.k < 2 || self.eot_samples == 0 {
            return Err(Error::InvalidInput("need k >= 2 and at least one EoT sample".into()));
        }
        Palette::new(self.palette.colors.clone())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn initial_texture(&self) -> Texture {
        let mut t = match self.texture_init {
            TextureInit::Gray => Texture::filled(self.texture_height, self.texture_width, 0.5),
            TextureInit::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Texture::random(self.texture_height, self.texture_width, &mut rng)
            }
        };
        t.project();
        t
    }
}

/// Texture plus Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub texture: Texture,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub seed: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(texture: Texture, learning_rate: f64, seed: u64) -> Self {
        let n = texture.data().len();
        Self { texture, m: vec![0.0; n], v: vec![0.0; n], step: 0, learning_rate, seed }
    }

    /// Bias-corrected Adam update followed by projection onto `[0, 1]`.
    pub fn apply(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.m.len() {
            return Err(Error::InvalidInput("gradient shape differs from texture".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.learning_rate;
        let data = self.texture.data_mut();
        for i in 0..grad.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            data[i] -= lr * mh / (vh.sqrt() + EPS);
        }
        self.texture.project();
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    #[serde(rename = "move")]
    pub move_: f64,
    pub prog: f64,
    pub fid: f64,
    pub tv: f64,
    pub nps: f64,
}

impl TraceRow {
    fn new(step: usize, total: f64, c: &LossComponents) -> Self {
        Self { step, total, move_: c.move_, prog: c.prog, fid: c.fid, tv: c.tv, nps: c.nps }
    }
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub texture: Texture,
    /// Loss before each update; the last row is the final texture.
    pub trace: Vec<TraceRow>,
}

/// One EoT draw per scenario for a given step. Each (step, scenario) pair
/// has its own stream, so draws do not depend on evaluation order.
pub fn step_samples(seed: u64, step: usize, count: usize, ranges: &EotRanges, per: usize) -> Vec<Vec<EotSample>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((step as u64) << 24) | i as u64);
            (0..per).map(|_| sample_eot(ranges, &mut rng)).collect()
        })
        .collect()
}

/// Optimizes one shared texture for the group toward `target`.
pub fn optimize(
    scenarios: &[AttackScenario],
    target: &AttackTarget,
    model: &Surrogate,
    config: &AttackConfig,
) -> Result<OptimizeResult> {
    optimize_from(config.initial_texture(), scenarios, target, model, config)
}

pub fn optimize_from(
    texture: Texture,
    scenarios: &[AttackScenario],
    target: &AttackTarget,
    model: &Surrogate,
    config: &AttackConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("empty training group".into()));
    }
    let mut state = OptimizerState::new(texture, config.learning_rate, config.seed);
    let mut trace = Vec::with_capacity(config.steps + 1);
    let n = state.texture.data().len();
    for step in 0..config.steps {
        let draws = step_samples(config.seed, step, scenarios.len(), &config.eot, config.eot_samples);
        let mut grad = vec![0.0; n];
        let mut total = 0.0;
        let mut comps = LossComponents::default();
        let per = config.eot_samples as f64;
        for j in 0..config.eot_samples {
            let samples: Vec<EotSample> = draws.iter().map(|d| d[j]).collect();
            let (t, c, g) = total_loss(
                &state.texture,
                scenarios,
                &samples,
                model,
                target,
                &config.weights,
                &config.fid_scales,
                &config.palette,
                true,
            )?;
            total += t / per;
            comps.move_ += c.move_ / per;
            comps.prog += c.prog / per;
            comps.fid += c.fid / per;
            comps.tv = c.tv;
            comps.nps = c.nps;
            for (a, v) in grad.iter_mut().zip(g.expect("gradient requested")) {
                *a += v / per;
            }
        }
        trace.push(TraceRow::new(step, total, &comps));
        state.apply(&grad)?;
    }
    let draws = step_samples(config.seed, config.steps, scenarios.len(), &config.eot, 1);
    let samples: Vec<EotSample> = draws.iter().map(|d| d[0]).collect();
    let (t, c, _) = total_loss(
        &state.texture,
        scenarios,
        &samples,
        model,
        target,
        &config.weights,
        &config.fid_scales,
        &config.palette,
        false,
    )?;
    trace.push(TraceRow::new(config.steps, t, &c));
    Ok(OptimizeResult { texture: state.texture, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_scenarios, ScenarioTemplate};
    use crate::surrogate::{DetectorConfig, SurrogateDetector, ViewModel};

    fn fixture() -> (AttackScenario, Surrogate, AttackTarget, AttackConfig) {
        let t = ScenarioTemplate::standard("SUV-R-S".parse().unwrap());
        let seq = generate_scenarios(&t, 1, 9).unwrap().remove(0).window(2, 3).unwrap();
        let cfg = AttackConfig { steps: 40, texture_height: 16, texture_width: 16, ..AttackConfig::default() };
        let sc = AttackScenario::new(seq, 16, 16).unwrap();
        let model = Surrogate { detector: SurrogateDetector::new(DetectorConfig::default()), view: ViewModel::default() };
        (sc, model, AttackTarget::new([-0.6, 0.8], 0.4).unwrap(), cfg)
    }

    #[test]
    fn zero_learning_rate_keeps_texture() {
        let (sc, model, target, cfg) = fixture();
        let cfg = AttackConfig { learning_rate: 0.0, ..cfg };
        let res = optimize(std::slice::from_ref(&sc), &target, &model, &cfg).unwrap();
        assert_eq!(res.texture, cfg.initial_texture());
        assert_eq!(res.trace.len(), cfg.steps + 1);
    }

    #[test]
    fn texture_stays_in_unit_box_and_loss_falls() {
        let (sc, model, target, cfg) = fixture();
        let res = optimize(std::slice::from_ref(&sc), &target, &model, &cfg).unwrap();
        assert!(res.texture.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(res.trace.last().unwrap().total < res.trace[0].total);
    }

    #[test]
    fn runs_are_deterministic() {
        let (sc, model, target, cfg) = fixture();
        let a = optimize(std::slice::from_ref(&sc), &target, &model, &cfg).unwrap();
        let b = optimize(std::slice::from_ref(&sc), &target, &model, &cfg).unwrap();
        assert_eq!(a, b);
        let c = optimize(std::slice::from_ref(&sc), &target, &model, &AttackConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.texture, c.texture);
    }

    #[test]
    fn eot_draws_are_per_step_and_scenario() {
        let r = EotRanges::standard();
        let a = step_samples(7, 3, 2, &r, 1);
        assert_eq!(a, step_samples(7, 3, 2, &r, 1));
        assert_ne!(a[0], a[1]);
        assert_ne!(a, step_samples(7, 4, 2, &r, 1));
        // a larger group leaves the first scenario's draw untouched
        assert_eq!(step_samples(7, 3, 5, &r, 1)[0], a[0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let tex = Texture::filled(2, 2, 0.5);
        let mut st = OptimizerState::new(tex, 0.01, 0);
        let g = vec![1.0, -2.0, 0.0, 3.0, 1e-3, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0];
        st.apply(&g).unwrap();
        let d = st.texture.data();
        assert!((d[0] - 0.49).abs() < 1e-6 && (d[1] - 0.51).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
        assert!(st.apply(&[0.0]).is_err());
    }

    #[test]
    fn trace_round_trips() {
        let (sc, model, target, cfg) = fixture();
        let cfg = AttackConfig { steps: 3, ..cfg };
        let res = optimize(std::slice::from_ref(&sc), &target, &model, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace(&p, &res.trace).unwrap();
        assert_eq!(read_trace(&p).unwrap(), res.trace);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("step,total,move,prog,fid,tv,nps\n"));
    }

    #[test]
    fn config_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("attack.toml");
        let cfg = AttackConfig::default();
        cfg.save(&p).unwrap();
        assert_eq!(AttackConfig::load(&p).unwrap(), cfg);
        assert!(AttackConfig { learning_rate: -0.1, ..cfg.clone() }.validate().is_err());
        assert!(AttackConfig { k: 1, ..cfg }.validate().is_err());
    }
}
