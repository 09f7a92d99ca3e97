//! Evaluation protocol and experiment runners: specific-scenario attacks,
//! cross-validation, factor sweeps, ablations, transfer and training-size
//! sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    aff_check, attack_frames, ego_future_path, group_target, optimize, search_target, vaf_filter, AffParams,
    AttackConfig, AttackScenario, AttackTarget, Surrogate,
};
use crate::attack::optimize::write_trace;
use crate::downstream::{run_pipeline, PipelineParams, PipelineVariant};
use crate::error::{Error, Result};
use crate::metrics::{self, FrameDisplacements, MetricReport, HARD_BRAKE_THRESHOLD};
use crate::scene::{viewing_angle_variation, ScenarioSequence, VehicleSpec, VehicleType};
use crate::surrogate::{sample_eot, DetectorConfig, EotRanges, EotSample, FaceAtlas, SurrogateDetector, Texture, ViewModel};

/// Perturbation conditions a texture is evaluated under: the nominal view
/// plus seeded pose/projection draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub conditions: usize,
    pub ranges: EotRanges,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { conditions: 8, ranges: EotRanges::standard(), seed: 2024 }
    }
}

impl EvalConfig {
    pub fn samples(&self) -> Vec<EotSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = vec![EotSample::IDENTITY];
        out.extend((1..self.conditions.max(1)).map(|_| sample_eot(&self.ranges, &mut rng)));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    CrossValidation,
    Specific,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub folds: usize,
    /// Attack seeds; each seed is one optimization run.
    pub seeds: Vec<u64>,
    /// One surrogate detector instance per seed.
    pub detector_seeds: Vec<u64>,
    pub pipelines: Vec<PipelineVariant>,
    pub attack: AttackConfig,
    pub detector: DetectorConfig,
    pub view: ViewModel,
    pub eval: EvalConfig,
    pub aff: AffParams,
    /// Seed of the generated scenario set.
    pub scenario_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Specific,
            folds: 5,
            seeds: vec![7],
            detector_seeds: vec![42],
            pipelines: vec![PipelineVariant::A, PipelineVariant::B],
            attack: AttackConfig::default(),
            detector: DetectorConfig::default(),
            view: ViewModel::default(),
            eval: EvalConfig::default(),
            aff: AffParams::default(),
            scenario_seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if self.seeds.is_empty() || self.detector_seeds.is_empty() || self.pipelines.is_empty() {
            return Err(Error::InvalidInput("seeds, detector seeds and pipelines must be non-empty".into()));
        }
        if self.setting == Setting::CrossValidation && self.folds < 2 {
            return Err(Error::InvalidInput("cross-validation needs at least two folds".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    pub fn surrogate(&self, detector_seed: u64) -> Surrogate {
        Surrogate {
            detector: SurrogateDetector::new(DetectorConfig { seed: detector_seed, ..self.detector }),
            view: self.view,
        }
    }

    fn attack_with_seed(&self, seed: u64) -> AttackConfig {
        AttackConfig { seed, ..self.attack.clone() }
    }
}

/// One evaluated (scenario, seed, detector, pipeline) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scenario_id: String,
    pub category: String,
    pub maneuver: String,
    pub group: String,
    pub fold: i64,
    pub seed: u64,
    pub detector_seed: u64,
    pub pipeline: String,
    pub window_start: usize,
    pub variation: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub s_bar: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d_mean: f64,
    pub pdr: f64,
    pub ape: f64,
    pub mtd: f64,
    pub mbd: f64,
    pub asr: f64,
    pub cv: f64,
    pub bfs: f64,
    pub hard_brake: bool,
    pub overtake_abandoned: bool,
    pub missed: usize,
    pub texture: String,
    pub trace: String,
}

impl ExperimentRecord {
    pub fn report(&self) -> MetricReport {
        MetricReport {
            d1: self.d1,
            d2: self.d2,
            d3: self.d3,
            pdr: self.pdr,
            ape: self.ape,
            mtd: self.mtd,
            mbd: self.mbd,
            asr: self.asr,
            cv: self.cv,
            bfs: self.bfs,
        }
    }

    pub fn displacements(&self) -> FrameDisplacements {
        FrameDisplacements::new(vec![self.d1, self.d2, self.d3])
    }
}

/// A scenario that did not reach optimization, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub scenario_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub records: Vec<ExperimentRecord>,
    pub rejections: Vec<Rejection>,
    /// Notes that end up in the JSON summary.
    pub notes: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn extend(&mut self, other: RunOutput) {
        self.records.extend(other.records);
        self.rejections.extend(other.rejections);
        self.notes.extend(other.notes);
    }
}

/// Metrics of one texture on one scenario under the evaluation conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Displacements averaged over conditions.
    pub d: Vec<f64>,
    pub per_condition: Vec<Vec<f64>>,
    pub report: MetricReport,
    pub hard_brake: bool,
    pub overtake_abandoned: bool,
    pub missed: usize,
}

/// Evaluates a texture: per condition, the attacked boxes are measured
/// against the clean ones along `u_bar` and propagated through the
/// pipeline. Dropped detections count as zero displacement. Pipeline flags
/// are taken from the nominal condition.
pub fn evaluate(
    texture: &Texture,
    sc: &AttackScenario,
    model: &Surrogate,
    u_bar: [f64; 2],
    params: &PipelineParams,
    eval: &EvalConfig,
) -> Result<Evaluation> {
    let samples = eval.samples();
    let k = sc.seq.len();
    let mut per_condition = Vec::with_capacity(samples.len());
    let (mut ape, mut mtd, mut mbd, mut bfs) = (0.0, 0.0, 0.0, 0.0);
    let mut mbds = Vec::with_capacity(samples.len());
    let mut nominal = None;
    for sample in &samples {
        let boxes = attack_frames(texture, sc, model, sample)?;
        let mut d = boxes.displacements(u_bar);
        for (dk, a) in d.iter_mut().zip(&boxes.attacked) {
            if a.confidence < params.detection_threshold {
                *dk = 0.0;
            }
        }
        let out = run_pipeline(&sc.seq, &boxes.clean, &boxes.attacked, params)?;
        ape += out.ape;
        mtd += out.mtd;
        mbd += out.mbd;
        mbds.push(out.mbd);
        bfs += boxes.clean.iter().zip(&boxes.attacked).map(|(c, a)| metrics::bfs(c, a)).sum::<f64>() / k as f64;
        per_condition.push(d);
        if nominal.is_none() {
            nominal = Some(out);
        }
    }
    let m = samples.len() as f64;
    let d: Vec<f64> = (0..k).map(|i| per_condition.iter().map(|c| c[i]).sum::<f64>() / m).collect();
    let samples_fd: Vec<FrameDisplacements> = per_condition.iter().cloned().map(FrameDisplacements::new).collect();
    let last: Vec<f64> = per_condition.iter().map(|c| c[k - 1]).collect();
    let nominal = nominal.expect("at least the nominal condition");
    let at = |i: usize| d.get(i).copied().unwrap_or(0.0);
    let report = MetricReport {
        d1: at(0),
        d2: at(1),
        d3: at(k - 1),
        pdr: metrics::pdr(&samples_fd)?,
        ape: ape / m,
        mtd: mtd / m,
        mbd: mbd / m,
        asr: metrics::asr(&mbds, HARD_BRAKE_THRESHOLD)?,
        cv: metrics::cv(&last).unwrap_or(f64::NAN),
        bfs: bfs / m,
    };
    Ok(Evaluation {
        d,
        per_condition,
        report,
        hard_brake: nominal.hard_brake,
        overtake_abandoned: nominal.overtake_abandoned,
        missed: nominal.missed_detections,
    })
}

/// Runs the feasibility filter and picks the attack window.
pub fn prepare(
    seq: &ScenarioSequence,
    attack: &AttackConfig,
    aff: &AffParams,
) -> Result<std::result::Result<AttackScenario, Rejection>> {
    let reject = |reason: String| Ok(Err(Rejection { scenario_id: seq.id.clone(), reason }));
    if let Some(v) = aff_check(seq, &ego_future_path(seq, aff.horizon), aff) {
        return reject(v.to_string());
    }
    let start = if attack.use_vaf {
        match vaf_filter(seq, attack.k, attack.theta_min)? {
            Some((start, _)) => start,
            None => {
                return reject(format!(
                    "VAF: viewing-angle variation below {} rad in every {}-frame window",
                    attack.theta_min, attack.k
                ))
            }
        }
    } else {
        0
    };
    Ok(Ok(AttackScenario::new(seq.window(start, attack.k)?, attack.texture_height, attack.texture_width)?))
}

/// Prepares a window without filtering: the argmax-variation window.
pub fn prepare_unfiltered(seq: &ScenarioSequence, attack: &AttackConfig) -> Result<AttackScenario> {
    let start = vaf_filter(seq, attack.k, f64::MIN_POSITIVE)?.map(|(s, _)| s).unwrap_or(0);
    AttackScenario::new(seq.window(start, attack.k)?, attack.texture_height, attack.texture_width)
}

/// Planning-guided target of a prepared scenario (Pipeline-A planner).
pub fn scenario_target(sc: &AttackScenario, attack: &AttackConfig) -> Result<AttackTarget> {
    let params = PipelineParams::variant(PipelineVariant::A);
    Ok(search_target(&sc.seq, &attack.grid.direction_set(), &attack.grid.steps, &params)?.0)
}

#[derive(Clone, Debug)]
struct Artifacts {
    texture: String,
    trace: String,
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn save_artifacts(
    out: Option<&Path>,
    run_id: &str,
    texture: &Texture,
    trace: &[crate::attack::TraceRow],
) -> Result<Artifacts> {
    let Some(dir) = out else {
        return Ok(Artifacts { texture: String::new(), trace: String::new() });
    };
    std::fs::create_dir_all(dir)?;
    let id = sanitize(run_id);
    let tex = format!("texture_{id}.ppm");
    let trc = format!("loss_trace_{id}.csv");
    texture.write_ppm(&dir.join(&tex))?;
    texture.write_sidecar(&dir.join(format!("texture_{id}.f32")))?;
    write_trace(&dir.join(&trc), trace)?;
    Ok(Artifacts { texture: tex, trace: trc })
}

#[allow(clippy::too_many_arguments)]
fn record(
    sc: &AttackScenario,
    group: &str,
    fold: i64,
    seed: u64,
    detector_seed: u64,
    pipeline: PipelineVariant,
    target: &AttackTarget,
    ev: &Evaluation,
    art: &Artifacts,
) -> Result<ExperimentRecord> {
    let r = ev.report;
    Ok(ExperimentRecord {
        scenario_id: sc.seq.id.clone(),
        category: sc.seq.category.to_string(),
        maneuver: serde_json::to_value(sc.seq.maneuver)?.as_str().unwrap_or_default().to_string(),
        group: group.to_string(),
        fold,
        seed,
        detector_seed,
        pipeline: pipeline.to_string(),
        window_start: sc.seq.window_start,
        variation: viewing_angle_variation(&sc.seq)?,
        u_x: target.u[0],
        u_y: target.u[1],
        s_bar: target.s,
        d1: r.d1,
        d2: r.d2,
        d3: r.d3,
        d_mean: metrics::mean(&ev.d),
        pdr: r.pdr,
        ape: r.ape,
        mtd: r.mtd,
        mbd: r.mbd,
        asr: r.asr,
        cv: r.cv,
        bfs: r.bfs,
        hard_brake: ev.hard_brake,
        overtake_abandoned: ev.overtake_abandoned,
        missed: ev.missed,
        texture: art.texture.clone(),
        trace: art.trace.clone(),
    })
}

/// Optimizes on one prepared scenario and evaluates on it.
#[allow(clippy::too_many_arguments)]
pub fn attack_prepared(
    sc: &AttackScenario,
    target: &AttackTarget,
    cfg: &ExperimentConfig,
    group: &str,
    seed: u64,
    detector_seed: u64,
    out: Option<&Path>,
) -> Result<(Texture, Vec<ExperimentRecord>)> {
    let model = cfg.surrogate(detector_seed);
    let attack = cfg.attack_with_seed(seed);
    let res = optimize(std::slice::from_ref(sc), target, &model, &attack)?;
    let art = save_artifacts(out, &format!("{group}_{}_s{seed}_d{detector_seed}", sc.seq.id), &res.texture, &res.trace)?;
    let mut records = Vec::new();
    for &p in &cfg.pipelines {
        let ev = evaluate(&res.texture, sc, &model, target.u, &PipelineParams::variant(p), &cfg.eval)?;
        records.push(record(sc, group, -1, seed, detector_seed, p, target, &ev, &art)?);
    }
    Ok((res.texture, records))
}

/// Scenario-specific attack: filter, search, optimize and evaluate on the
/// same scenario for every (seed, detector seed) pair.
pub fn run_specific(seq: &ScenarioSequence, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    run_specific_group(seq, cfg, "specific", out)
}

pub fn run_specific_group(
    seq: &ScenarioSequence,
    cfg: &ExperimentConfig,
    group: &str,
    out: Option<&Path>,
) -> Result<RunOutput> {
    let mut output = RunOutput::default();
    let sc = match prepare(seq, &cfg.attack, &cfg.aff)? {
        Ok(sc) => sc,
        Err(rej) => {
            warn!("{}: {}", rej.scenario_id, rej.reason);
            output.rejections.push(rej);
            return Ok(output);
        }
    };
    let target = scenario_target(&sc, &cfg.attack)?;
    for &seed in &cfg.seeds {
        for &det in &cfg.detector_seeds {
            output.records.extend(attack_prepared(&sc, &target, cfg, group, seed, det, out)?.1);
        }
    }
    Ok(output)
}

/// Specific-scenario runs over a list of scenarios, in parallel.
pub fn run_specific_all(
    scenarios: &[ScenarioSequence],
    cfg: &ExperimentConfig,
    group: &str,
    out: Option<&Path>,
) -> Result<RunOutput> {
    let parts: Vec<Result<RunOutput>> =
        scenarios.par_iter().map(|s| run_specific_group(s, cfg, group, out)).collect();
    let mut output = RunOutput::default();
    for p in parts {
        output.extend(p?);
    }
    Ok(output)
}

/// Seeded partition of `n` items into `folds` disjoint, covering test splits.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(Error::InvalidInput(format!("cannot split {n} scenarios into {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, v) in idx.into_iter().enumerate() {
        out[i % folds].push(v);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// One fold's group target alongside the records it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub target: Option<AttackTarget>,
    pub skipped: Option<String>,
}

/// K-fold cross-validation: each fold optimizes one shared texture on the
/// training split toward the split's group target and evaluates it on the
/// held-out split with that same direction.
pub fn run_cross_validation(
    scenarios: &[ScenarioSequence],
    folds: usize,
    cfg: &ExperimentConfig,
    group: &str,
    out: Option<&Path>,
) -> Result<(RunOutput, Vec<FoldSummary>)> {
    let mut output = RunOutput::default();
    let parts = fold_partition(scenarios.len(), folds, cfg.scenario_seed)?;
    let prepared: Vec<Result<std::result::Result<(AttackScenario, AttackTarget), Rejection>>> = scenarios
        .par_iter()
        .map(|s| match prepare(s, &cfg.attack, &cfg.aff)? {
            Ok(sc) => {
                let t = scenario_target(&sc, &cfg.attack)?;
                Ok(Ok((sc, t)))
            }
            Err(r) => Ok(Err(r)),
        })
        .collect();
    let mut ready: Vec<Option<(AttackScenario, AttackTarget)>> = Vec::with_capacity(scenarios.len());
    for p in prepared {
        match p? {
            Ok(v) => ready.push(Some(v)),
            Err(r) => {
                output.rejections.push(r);
                ready.push(None);
            }
        }
    }
    let mut summaries = Vec::new();
    for (f, test_idx) in parts.iter().enumerate() {
        let train_idx: Vec<usize> = (0..scenarios.len()).filter(|i| !test_idx.contains(i)).collect();
        let train: Vec<&(AttackScenario, AttackTarget)> = train_idx.iter().filter_map(|&i| ready[i].as_ref()).collect();
        let test: Vec<&(AttackScenario, AttackTarget)> = test_idx.iter().filter_map(|&i| ready[i].as_ref()).collect();
        let mut summary = FoldSummary {
            fold: f,
            train: train.iter().map(|(s, _)| s.seq.id.clone()).collect(),
            test: test.iter().map(|(s, _)| s.seq.id.clone()).collect(),
            target: None,
            skipped: None,
        };
        if train.is_empty() || test.is_empty() {
            let why = format!("fold {f}: no filtered scenarios in the training or test split");
            warn!("{why}");
            summary.skipped = Some(why);
            summaries.push(summary);
            continue;
        }
        let targets: Vec<AttackTarget> = train.iter().map(|(_, t)| *t).collect();
        let target = group_target(&targets)?;
        summary.target = Some(target);
        let group_scs: Vec<AttackScenario> = train.iter().map(|(s, _)| s.clone()).collect();
        for &seed in &cfg.seeds {
            for &det in &cfg.detector_seeds {
                let model = cfg.surrogate(det);
                let res = optimize(&group_scs, &target, &model, &cfg.attack_with_seed(seed))?;
                let art = save_artifacts(out, &format!("{group}_fold{f}_s{seed}_d{det}"), &res.texture, &res.trace)?;
                let recs: Vec<Result<Vec<ExperimentRecord>>> = test
                    .par_iter()
                    .map(|(sc, _)| {
                        cfg.pipelines
                            .iter()
                            .map(|&p| {
                                let ev = evaluate(&res.texture, sc, &model, target.u, &PipelineParams::variant(p), &cfg.eval)?;
                                record(sc, group, f as i64, seed, det, p, &target, &ev, &art)
                            })
                            .collect()
                    })
                    .collect();
                for r in recs {
                    output.records.extend(r?);
                }
            }
        }
        info!("{group} fold {f}: {} train / {} test", summary.train.len(), summary.test.len());
        summaries.push(summary);
    }
    output.notes.insert(
        "group_target_granularity".into(),
        "one group target per training split, computed within each category".into(),
    );
    Ok((output, summaries))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    RelativeSpeed,
    ProjectionArea,
    Distance,
    Illumination,
    ViewingAngle,
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Factor::RelativeSpeed => "relative-speed",
            Factor::ProjectionArea => "projection-area",
            Factor::Distance => "distance",
            Factor::Illumination => "illumination",
            Factor::ViewingAngle => "viewing-angle",
        })
    }
}

impl std::str::FromStr for Factor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "relative-speed" => Factor::RelativeSpeed,
            "projection-area" => Factor::ProjectionArea,
            "distance" => Factor::Distance,
            "illumination" => Factor::Illumination,
            "viewing-angle" => Factor::ViewingAngle,
            other => return Err(Error::InvalidInput(format!("unknown factor {other:?}"))),
        })
    }
}

impl Factor {
    pub const ALL: [Factor; 5] =
        [Factor::RelativeSpeed, Factor::ProjectionArea, Factor::Distance, Factor::Illumination, Factor::ViewingAngle];

    /// Two levels (low, high) of the controlled sweep.
    pub fn default_levels(self) -> [f64; 2] {
        match self {
            Factor::RelativeSpeed => [1.5, 9.0],
            Factor::ProjectionArea => [900.0, 1600.0],
            Factor::Distance => [14.0, 28.0],
            Factor::Illumination => [0.4, 0.9],
            Factor::ViewingAngle => [2.9, 6.0],
        }
    }

    /// What a level value means.
    pub fn unit(self) -> &'static str {
        match self {
            Factor::RelativeSpeed => "closing speed, m/s",
            Factor::ProjectionArea => "camera focal length, px",
            Factor::Distance => "mid-window gap, m",
            Factor::Illumination => "illumination",
            Factor::ViewingAngle => "lateral offset at fixed range, m",
        }
    }
}

/// Base draws shared by every level of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepBase {
    pub vehicle: VehicleType,
    pub ego_speed: [f64; 2],
    pub closing_speed: [f64; 2],
    /// Longitudinal gap at the middle of the window.
    pub gap: [f64; 2],
    pub lateral: [f64; 2],
    pub illumination: [f64; 2],
    pub frames: usize,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            vehicle: VehicleType::Suv,
            ego_speed: [10.0, 12.0],
            closing_speed: [3.0, 5.0],
            gap: [16.0, 20.0],
            lateral: [3.2, 3.6],
            illumination: [0.8, 1.0],
            frames: 3,
        }
    }
}

/// Scenarios of one sweep level. The same seed gives the same base draws at
/// every level; only the swept quantity is replaced.
pub fn sweep_scenarios(base: &SweepBase, factor: Factor, level: f64, count: usize, seed: u64) -> Vec<ScenarioSequence> {
    use crate::harness::templates::{build_sequence, draw, ScenarioTemplate};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut template = ScenarioTemplate::standard(crate::scene::Category::new(
        base.vehicle,
        crate::scene::Side::Right,
        crate::scene::Direction::Same,
    ));
    template.frames = base.frames;
    let span = (base.frames - 1) as f64 * crate::scene::DEFAULT_DT;
    (0..count)
        .map(|i| {
            let ego = draw(base.ego_speed, &mut rng);
            let mut closing = draw(base.closing_speed, &mut rng);
            let mut gap = draw(base.gap, &mut rng);
            let mut lateral = draw(base.lateral, &mut rng);
            let mut ill = draw(base.illumination, &mut rng);
            let mut t = template.clone();
            match factor {
                Factor::RelativeSpeed => closing = level,
                Factor::ProjectionArea => t.camera.focal = level,
                Factor::Distance => gap = level,
                Factor::Illumination => ill = level,
                Factor::ViewingAngle => {
                    // keep the mid-window range so only the aspect changes
                    let range2 = gap * gap + lateral * lateral;
                    gap = (range2 - level * level).max(1.0).sqrt();
                    lateral = level;
                }
            }
            let id = format!("sweep-{factor}-{level}-{i:03}");
            build_sequence(id, &t, ego, (ego - closing).max(0.0), gap + closing * span / 2.0, lateral, ill)
        })
        .collect()
}

/// Per-level specific attacks on controlled scenarios. Filters are
/// bypassed so every level keeps the same base draws.
pub fn run_factor_sweep(
    factor: Factor,
    levels: &[f64],
    base: &SweepBase,
    count: usize,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<RunOutput> {
    if levels.len() < 2 {
        return Err(Error::InvalidInput("a sweep needs at least two levels".into()));
    }
    let mut output = RunOutput::default();
    for &level in levels {
        let scs = sweep_scenarios(base, factor, level, count, cfg.scenario_seed);
        let group = format!("{factor}={level}");
        let parts: Vec<Result<Vec<ExperimentRecord>>> = scs
            .par_iter()
            .map(|seq| {
                let sc = prepare_unfiltered(seq, &cfg.attack)?;
                let target = scenario_target(&sc, &cfg.attack)?;
                let mut recs = Vec::new();
                for &seed in &cfg.seeds {
                    for &det in &cfg.detector_seeds {
                        recs.extend(attack_prepared(&sc, &target, cfg, &group, seed, det, out)?.1);
                    }
                }
                Ok(recs)
            })
            .collect();
        for p in parts {
            output.records.extend(p?);
        }
    }
    output.notes.insert(format!("sweep_{factor}_unit"), factor.unit().to_string());
    Ok(output)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoVaf,
    NoEot,
    NoMove,
    NoProg,
    NoFid,
    NoStyle,
}

impl Ablation {
    pub const ALL: [Ablation; 7] =
        [Ablation::Full, Ablation::NoVaf, Ablation::NoEot, Ablation::NoMove, Ablation::NoProg, Ablation::NoFid, Ablation::NoStyle];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoVaf => "w/o VAF",
            Ablation::NoEot => "w/o EoT",
            Ablation::NoMove => "w/o L_move",
            Ablation::NoProg => "w/o L_prog",
            Ablation::NoFid => "w/o L_fid",
            Ablation::NoStyle => "w/o L_style",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        let w = &mut c.attack.weights;
        match self {
            Ablation::Full => {}
            Ablation::NoVaf => c.attack.use_vaf = false,
            Ablation::NoEot => c.attack.eot = EotRanges::default(),
            Ablation::NoMove => w.w_move = 0.0,
            Ablation::NoProg => w.w_prog = 0.0,
            Ablation::NoFid => w.w_fid = 0.0,
            Ablation::NoStyle => {
                w.w_tv = 0.0;
                w.w_nps = 0.0;
            }
        }
        c
    }
}

/// One row of the ablation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub runs: usize,
    pub d3: f64,
    pub cv: f64,
    pub pdr: f64,
    pub bfs: f64,
    pub asr: f64,
}

/// Aggregates records of one configuration (Pipeline A rows only).
pub fn ablation_row(label: &str, records: &[ExperimentRecord]) -> AblationRow {
    let rows: Vec<&ExperimentRecord> = records.iter().filter(|r| r.group == label && r.pipeline == "A").collect();
    let col = |f: fn(&ExperimentRecord) -> f64| -> f64 {
        let v: Vec<f64> = rows.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
        metrics::mean(&v)
    };
    AblationRow {
        config: label.to_string(),
        runs: rows.len(),
        d3: col(|r| r.d3),
        cv: col(|r| r.cv),
        pdr: col(|r| r.pdr),
        bfs: col(|r| r.bfs),
        asr: col(|r| r.asr),
    }
}

/// Runs the full configuration and each single-toggle ablation on the same
/// scenario suite.
pub fn run_ablation(
    suite: &[ScenarioSequence],
    toggles: &[Ablation],
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(RunOutput, Vec<AblationRow>)> {
    let mut output = RunOutput::default();
    let mut rows = Vec::new();
    let mut all = vec![Ablation::Full];
    all.extend(toggles.iter().copied().filter(|t| *t != Ablation::Full));
    for ab in all {
        let c = ab.apply(cfg);
        let part = run_specific_all(suite, &c, ab.label(), out)?;
        rows.push(ablation_row(ab.label(), &part.records));
        output.extend(part);
    }
    Ok((output, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferSpec {
    Detector(u64),
    Vehicle(VehicleType),
}

impl std::fmt::Display for TransferSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferSpec::Detector(s) => write!(f, "detector-{s}"),
            TransferSpec::Vehicle(v) => write!(f, "vehicle-{v}"),
        }
    }
}

fn with_vehicle(seq: &ScenarioSequence, v: VehicleType) -> ScenarioSequence {
    let mut s = seq.clone();
    s.target_spec = VehicleSpec::catalogue(v);
    s.category.vehicle = v;
    s
}

/// Optimizes on the source configuration and evaluates on the target one.
/// Vehicle-type transfer re-maps the texture through the target layout.
pub fn run_transfer(
    suite: &[ScenarioSequence],
    source: TransferSpec,
    target: TransferSpec,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<RunOutput> {
    let (src_det, dst_det, src_veh, dst_veh) = match (source, target) {
        (TransferSpec::Detector(a), TransferSpec::Detector(b)) => (a, b, None, None),
        (TransferSpec::Vehicle(a), TransferSpec::Vehicle(b)) => (cfg.detector_seeds[0], cfg.detector_seeds[0], Some(a), Some(b)),
        _ => return Err(Error::InvalidInput("source and target must be of the same kind".into())),
    };
    let group = format!("{source}->{target}");
    let parts: Vec<Result<RunOutput>> = suite
        .par_iter()
        .map(|seq| {
            let mut output = RunOutput::default();
            let src_seq = src_veh.map_or_else(|| seq.clone(), |v| with_vehicle(seq, v));
            let sc = match prepare(&src_seq, &cfg.attack, &cfg.aff)? {
                Ok(sc) => sc,
                Err(rej) => {
                    output.rejections.push(rej);
                    return Ok(output);
                }
            };
            let tgt = scenario_target(&sc, &cfg.attack)?;
            let dst_sc = match dst_veh {
                Some(v) => AttackScenario::new(with_vehicle(&sc.seq, v), cfg.attack.texture_height, cfg.attack.texture_width)?,
                None => sc.clone(),
            };
            let dst_model = cfg.surrogate(dst_det);
            for &seed in &cfg.seeds {
                let (texture, _) = attack_prepared(&sc, &tgt, &ExperimentConfig { pipelines: vec![], ..cfg.clone() }, &group, seed, src_det, out)?;
                let texture = match dst_veh {
                    Some(_) => sc.atlas.remap(&texture, &dst_sc.atlas)?,
                    None => texture,
                };
                let art = save_artifacts(out, &format!("{group}_{}_s{seed}_eval", sc.seq.id), &texture, &[])?;
                for &p in &cfg.pipelines {
                    let ev = evaluate(&texture, &dst_sc, &dst_model, tgt.u, &PipelineParams::variant(p), &cfg.eval)?;
                    output.records.push(record(&dst_sc, &group, -1, seed, dst_det, p, &tgt, &ev, &art)?);
                }
            }
            Ok(output)
        })
        .collect();
    let mut output = RunOutput::default();
    for p in parts {
        output.extend(p?);
    }
    Ok(output)
}

/// Re-maps a texture between the layouts of two vehicle types.
pub fn remap_between(texture: &Texture, from: VehicleType, to: VehicleType) -> Result<Texture> {
    let (h, w) = texture.resolution();
    let a = FaceAtlas::for_vehicle(&VehicleSpec::catalogue(from), h, w)?;
    let b = FaceAtlas::for_vehicle(&VehicleSpec::catalogue(to), h, w)?;
    a.remap(texture, &b)
}

/// One point of the training-size curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub seed: u64,
    pub d3: f64,
    pub pdr: f64,
    pub test_hash: String,
}

fn ids_hash(ids: &[String]) -> String {
    // FNV-1a over the joined ids
    let mut h: u64 = 0xcbf29ce484222325;
    for b in ids.join("\n").bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Fixes a test split and optimizes on growing training subsets, once per
/// attack seed. The pool is used in its given order after the test split.
pub fn run_training_size_sweep(
    pool: &[ScenarioSequence],
    test_size: usize,
    sizes: &[usize],
    cfg: &ExperimentConfig,
) -> Result<Vec<SizeRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("training sizes must be ascending".into()));
    }
    let prepared: Vec<Result<Option<(AttackScenario, AttackTarget)>>> = pool
        .par_iter()
        .map(|s| match prepare(s, &cfg.attack, &cfg.aff)? {
            Ok(sc) => {
                let t = scenario_target(&sc, &cfg.attack)?;
                Ok(Some((sc, t)))
            }
            Err(_) => Ok(None),
        })
        .collect();
    let mut ready = Vec::new();
    for p in prepared {
        if let Some(v) = p? {
            ready.push(v);
        }
    }
    let need = test_size + sizes.last().copied().unwrap_or(0);
    if ready.len() < need {
        return Err(Error::InvalidInput(format!("pool has {} usable scenarios, need {need}", ready.len())));
    }
    let (test, train) = ready.split_at(test_size);
    let test_ids: Vec<String> = test.iter().map(|(s, _)| s.seq.id.clone()).collect();
    let hash = ids_hash(&test_ids);
    let model = cfg.surrogate(cfg.detector_seeds[0]);
    let params = PipelineParams::variant(PipelineVariant::A);
    let jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    jobs.par_iter()
        .map(|&(n, seed)| {
            // each seed draws its own training subset
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let subset: Vec<&(AttackScenario, AttackTarget)> = idx[..n].iter().map(|&i| &train[i]).collect();
            let targets: Vec<AttackTarget> = subset.iter().map(|(_, t)| *t).collect();
            let target = group_target(&targets)?;
            let scs: Vec<AttackScenario> = subset.iter().map(|(s, _)| s.clone()).collect();
            let res = optimize(&scs, &target, &model, &cfg.attack_with_seed(seed))?;
            let mut d3 = Vec::new();
            let mut disp = Vec::new();
            for (sc, _) in test {
                let ev = evaluate(&res.texture, sc, &model, target.u, &params, &cfg.eval)?;
                d3.push(ev.report.d3);
                disp.push(FrameDisplacements::new(ev.d.clone()));
            }
            Ok(SizeRow { size: n, seed, d3: metrics::mean(&d3), pdr: metrics::pdr(&disp)?, test_hash: hash.clone() })
        })
        .collect()
}

/// Output directory: the `VIEWDRIFT_OUT` override wins over `fallback`.
pub fn output_dir(fallback: Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os("VIEWDRIFT_OUT").map(PathBuf::from).or(fallback)
}
