//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line;
//! run with `--nocapture` to see them all.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viewdrift::attack::losses::{FidScales, LossWeights, Palette};
use viewdrift::attack::{
    aff_check, ego_future_path, search_target, total_loss, vaf_filter, AffParams, AffViolation, AttackConfig,
    AttackTarget,
};
use viewdrift::downstream::{
    ego_reference_path, plan, planning_error, predict_trajectory, track_sequence, PipelineParams, PipelineVariant,
};
use viewdrift::harness::experiment::{
    prepare_unfiltered, run_ablation, run_factor_sweep, run_specific_all, Ablation, ExperimentConfig, ExperimentRecord,
    Factor, RunOutput, SweepBase,
};
use viewdrift::harness::{attack_suite, overtake_suite, read_records, scenario_bank, write_records};
use viewdrift::metrics::{self, FrameDisplacements, HARD_BRAKE_THRESHOLD};
use viewdrift::scene::{
    clean_detection, viewing_angle, CameraModel, Category, Direction, FrameState, Maneuver, Pose2, ScenarioSequence,
    Side, VehicleSpec, VehicleType,
};
use viewdrift::surrogate::{sample_eot, DetectionBox, EotRanges, Texture};

fn report(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn pipeline_a(records: &[ExperimentRecord]) -> Vec<&ExperimentRecord> {
    records.iter().filter(|r| r.pipeline == "A").collect()
}

#[test]
fn criterion_1_gradient_matches_finite_differences() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let attack = AttackConfig { texture_height: 32, texture_width: 32, ..AttackConfig::default() };
    let bank = scenario_bank(cfg.scenario_seed).unwrap();
    let model = cfg.surrogate(cfg.detector_seeds[0]);
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for _ in 0..100 {
        let seq = &bank[rng.random_range(0..bank.len())];
        let sc = prepare_unfiltered(seq, &attack).unwrap();
        let tex = Texture::random(32, 32, &mut rng);
        let sample = sample_eot(&EotRanges::standard(), &mut rng);
        let target = AttackTarget::new([-0.6, 0.8], 0.3).unwrap();
        let eval = |t: &Texture, grad: bool| {
            total_loss(
                t,
                std::slice::from_ref(&sc),
                std::slice::from_ref(&sample),
                &model,
                &target,
                &weights,
                &FidScales::default(),
                &Palette::default(),
                grad,
            )
            .unwrap()
        };
        let g = eval(&tex, true).2.unwrap();
        for _ in 0..10 {
            let i = rng.random_range(0..tex.data().len());
            let h = 1e-5;
            let mut p = tex.clone();
            p.data_mut()[i] += h;
            let mut m = tex.clone();
            m.data_mut()[i] -= h;
            let fd = (eval(&p, false).0 - eval(&m, false).0) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-7);
            worst = worst.max((g[i] - fd).abs() / scale);
            checked += 1;
        }
    }
    let took = start.elapsed();
    report(
        1,
        worst < 1e-3 && took < Duration::from_secs(60),
        &format!("{checked} pixels over 100 states, worst relative error {worst:.2e}, {took:.1?}"),
    );
}

/// Planning error of every grid candidate by shifting the clean boxes
/// directly, then the best one under (error desc, step asc, direction asc).
fn enumerate_targets(seq: &ScenarioSequence, dirs: &[[f64; 2]], steps: &[f64], params: &PipelineParams) -> (usize, f64) {
    let dt = seq.dt();
    let horizon = params.planner.horizon;
    let ego = seq.last();
    let path = ego_reference_path(ego, horizon, dt);
    let clean: Vec<DetectionBox> = seq.frames.iter().map(|f| clean_detection(f, &seq.target_spec)).collect();
    let run = |dets: Vec<Option<DetectionBox>>| {
        let track = track_sequence(&dets, dt, &params.tracker).unwrap().unwrap();
        let pred = predict_trajectory(&track, horizon, dt).unwrap();
        plan(ego, &path, &pred, seq.target_spec.width, &params.planner, seq.maneuver).unwrap()
    };
    let base = run(clean.iter().copied().map(Some).collect());
    let mut all = Vec::new();
    for (i, u) in dirs.iter().enumerate() {
        for &s in steps {
            let dets = clean
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let mut d = *d;
                    let m = (k + 1) as f64 * s;
                    d.center[0] += m * u[0];
                    d.center[1] += m * u[1];
                    Some(d)
                })
                .collect();
            all.push((i, s, planning_error(&base, &run(dets), params.w_mtd)));
        }
    }
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.total_cmp(&b.1)).then(a.0.cmp(&b.0)));
    (all[0].0, all[0].1)
}

#[test]
fn criterion_2_target_search_matches_enumeration() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let grid = &cfg.attack.grid;
    let dirs = grid.direction_set();
    assert_eq!((dirs.len(), grid.steps.len()), (16, 5));
    let bank = scenario_bank(cfg.scenario_seed).unwrap();
    let params = PipelineParams::variant(PipelineVariant::A);
    let mut mismatches = Vec::new();
    for seq in &bank {
        let (t, _) = search_target(seq, &dirs, &grid.steps, &params).unwrap();
        let (i, s) = enumerate_targets(seq, &dirs, &grid.steps, &params);
        if t.u != dirs[i] || t.s != s {
            mismatches.push(seq.id.clone());
        }
    }
    let took = start.elapsed();
    report(
        2,
        bank.len() == 220 && mismatches.is_empty() && took < Duration::from_secs(300),
        &format!("{} scenarios, mismatches {:?}, {took:.1?}", bank.len(), mismatches),
    );
}

#[test]
fn criterion_3_metric_anchors() {
    let d = FrameDisplacements::new(vec![0.18, 0.37, 0.70]);
    let pdr = metrics::pdr(std::slice::from_ref(&d)).unwrap();
    let asr = metrics::asr(&[3.61], HARD_BRAKE_THRESHOLD).unwrap();
    let below = metrics::asr(&[2.99], HARD_BRAKE_THRESHOLD).unwrap();
    let dbar = metrics::mean_displacement(&d);
    let cv = metrics::cv(&[1.0, 3.0]).unwrap();
    let b = DetectionBox { center: [10.0, -3.0, 0.8], dims: [4.5, 1.9, 1.6], yaw: 0.1, confidence: 0.9 };
    let bfs_same = metrics::bfs(&b, &b);
    let clean = viewdrift::downstream::Trajectory::constant_velocity([0.0, 0.0], [5.0, 0.0], 2.0, 0.5);
    let shifted = viewdrift::downstream::Trajectory::constant_velocity([0.0, 0.4], [5.0, 0.0], 2.0, 0.5);
    let ape = metrics::ape(&clean, &shifted).unwrap();
    let lateral = viewdrift::downstream::Trajectory::constant_velocity([0.0, 2.0], [5.0, 0.0], 2.0, 0.5);
    let mtd = metrics::mtd(&lateral, &clean).unwrap();
    let checks = [
        ("pdr", (pdr - 100.0).abs() < 1e-9),
        ("asr", (asr - 100.0).abs() < 1e-9 && below == 0.0),
        ("mean displacement", (dbar - 1.25 / 3.0).abs() < 1e-9 && (dbar - 0.4167).abs() < 5e-5),
        ("cv", (cv - 0.5).abs() < 1e-9),
        ("bfs", (bfs_same - 1.0).abs() < 1e-9),
        ("ape", (ape - 0.4).abs() < 1e-9),
        ("mtd", (mtd - 2.0).abs() <= 0.1),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(3, failed.is_empty(), &format!("pdr {pdr}, asr {asr}, d_mean {dbar:.6}, failed {failed:?}"));
}

struct SuiteRun {
    suite: RunOutput,
    overtake: RunOutput,
    took: Duration,
}

fn suite_run() -> &'static SuiteRun {
    static RUN: OnceLock<SuiteRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let cfg = ExperimentConfig::default();
        let suite = run_specific_all(&attack_suite(cfg.scenario_seed).unwrap(), &cfg, "suite", None).unwrap();
        let overtake = run_specific_all(&overtake_suite(cfg.scenario_seed).unwrap(), &cfg, "overtake", None).unwrap();
        SuiteRun { suite, overtake, took: start.elapsed() }
    })
}

#[test]
fn criterion_4_progressive_displacement_on_the_suite() {
    let run = suite_run();
    let recs = pipeline_a(&run.suite.records);
    let progressive = recs.iter().filter(|r| r.displacements().is_progressive()).count();
    let share = progressive as f64 / recs.len() as f64;
    let mean_d3 = metrics::mean(&recs.iter().map(|r| r.d3).collect::<Vec<_>>());
    let steps = ExperimentConfig::default().attack.steps;
    report(
        4,
        recs.len() == 20 && steps == 500 && share >= 0.7 && mean_d3 >= 0.3 && run.took < Duration::from_secs(900),
        &format!("{progressive}/{} progressive, mean d3 {mean_d3:.3} m, {:.1?}", recs.len(), run.took),
    );
}

#[test]
fn criterion_5_propagation_to_planning() {
    let run = suite_run();
    let strong: Vec<_> = pipeline_a(&run.suite.records).into_iter().filter(|r| r.d3 >= 0.4).collect();
    let braking = strong.iter().filter(|r| r.mbd >= HARD_BRAKE_THRESHOLD && r.hard_brake).count();
    let abandoned = run.overtake.records.iter().filter(|r| r.overtake_abandoned).count();
    report(
        5,
        !strong.is_empty() && 2 * braking >= strong.len() && abandoned >= 1,
        &format!(
            "hard brake in {braking}/{} runs with d3 >= 0.4 m, abandoned overtakes {abandoned}/{}",
            strong.len(),
            run.overtake.records.len()
        ),
    );
}

#[test]
fn criterion_6_ablation_orderings() {
    let cfg = ExperimentConfig::default();
    let suite = attack_suite(cfg.scenario_seed).unwrap();
    let toggles = [Ablation::NoVaf, Ablation::NoEot, Ablation::NoMove, Ablation::NoProg, Ablation::NoFid];
    let (_, rows) = run_ablation(&suite, &toggles, &cfg, None).unwrap();
    for r in &rows {
        println!("  {:<12} d3 {:.6} cv {:.6} bfs {:.6}", r.config, r.d3, r.cv, r.bfs);
    }
    let full = &rows[0];
    let row = |label: &str| rows.iter().find(|r| r.config == label).unwrap();
    let mut broken = Vec::new();
    for r in &rows[1..] {
        if r.d3 > full.d3 {
            broken.push(format!("{} d3 above full", r.config));
        }
    }
    let min_d3 = rows.iter().min_by(|a, b| a.d3.total_cmp(&b.d3)).unwrap();
    if min_d3.config != Ablation::NoMove.label() {
        broken.push(format!("minimum d3 row is {}", min_d3.config));
    }
    let min_bfs = rows.iter().min_by(|a, b| a.bfs.total_cmp(&b.bfs)).unwrap();
    if min_bfs.config != Ablation::NoFid.label() {
        broken.push(format!("minimum bfs row is {}", min_bfs.config));
    }
    if !(row(Ablation::NoEot.label()).cv > full.cv) {
        broken.push("w/o EoT cv not above full".into());
    }
    report(6, broken.is_empty(), &format!("violations {broken:?}"));
}

#[test]
fn criterion_7_factor_directionality() {
    let cfg = ExperimentConfig::default();
    let base = SweepBase::default();
    let mut broken = Vec::new();
    let mut lines = Vec::new();
    for factor in Factor::ALL {
        let levels = factor.default_levels();
        let out = run_factor_sweep(factor, &levels, &base, 20, &cfg, None).unwrap();
        let level_mean = |level: f64| {
            let group = format!("{factor}={level}");
            let v: Vec<f64> = pipeline_a(&out.records).iter().filter(|r| r.group == group).map(|r| r.d_mean).collect();
            assert_eq!(v.len(), 20);
            metrics::mean(&v)
        };
        let (lo, hi) = (level_mean(levels[0]), level_mean(levels[1]));
        let increasing = matches!(factor, Factor::ViewingAngle | Factor::ProjectionArea | Factor::Illumination);
        let ok = if increasing { hi > lo } else { hi < lo };
        lines.push(format!("{factor} {lo:.4}->{hi:.4}"));
        if !ok {
            broken.push(factor.to_string());
        }
    }
    report(7, broken.is_empty(), &format!("{}; wrong direction {broken:?}", lines.join(", ")));
}

#[test]
fn criterion_8_determinism_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.attack.steps = 40;
    let scenarios: Vec<_> = attack_suite(cfg.scenario_seed).unwrap().into_iter().step_by(5).collect();
    let mut files = Vec::new();
    for i in 0..2 {
        let out = run_specific_all(&scenarios, &cfg, "det", None).unwrap();
        let path = dir.path().join(format!("records{i}.csv"));
        write_records(&path, &out.records).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    let identical = files[0] == files[1] && !files[0].is_empty();
    let records_back = read_records(&dir.path().join("records0.csv")).unwrap().len() == 2 * scenarios.len();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tex = Texture::random(24, 40, &mut rng);
    // the sidecar stores float32, so values at that precision come back bit for bit
    let single = Texture::from_data(24, 40, tex.data().iter().map(|v| (*v as f32) as f64).collect()).unwrap();
    let side = dir.path().join("t.f32");
    single.write_sidecar(&side).unwrap();
    let back = Texture::read_sidecar(&side).unwrap();
    let again = dir.path().join("t2.f32");
    back.write_sidecar(&again).unwrap();
    let sidecar_ok = back == single && std::fs::read(&side).unwrap() == std::fs::read(&again).unwrap();
    let quantized =
        Texture::from_data(24, 40, tex.data().iter().map(|v| (v * 255.0).round() / 255.0).collect()).unwrap();
    let ppm = dir.path().join("t.ppm");
    quantized.write_ppm(&ppm).unwrap();
    let ppm_ok = Texture::read_ppm(&ppm).unwrap() == quantized;
    let scn_ok = scenarios.iter().all(|s| {
        let p = dir.path().join(format!("{}.scn", s.id));
        s.save(&p).unwrap();
        ScenarioSequence::load(&p).unwrap() == *s
    });
    report(
        8,
        identical && records_back && sidecar_ok && ppm_ok && scn_ok,
        &format!(
            "records.csv identical {identical} ({} bytes), texture sidecar {sidecar_ok}, ppm {ppm_ok}, scenarios {scn_ok}",
            files[0].len()
        ),
    );
}

fn straight(lon: f64, lat: f64, vt: f64, n: usize) -> ScenarioSequence {
    let frames = (0..n)
        .map(|j| {
            let t = j as f64 * 0.5;
            FrameState {
                t,
                ego: Pose2::new(10.0 * t, 0.0, 0.0),
                ego_speed: 10.0,
                target: Pose2::new(lon + vt * t, lat, 0.0),
                target_speed: vt,
                illumination: 1.0,
            }
        })
        .collect();
    ScenarioSequence {
        id: "probe".into(),
        category: Category::new(VehicleType::Sedan, Side::Right, Direction::Same),
        maneuver: Maneuver::PassBy,
        window_start: 0,
        target_spec: VehicleSpec::catalogue(VehicleType::Sedan),
        camera: CameraModel::default(),
        frames,
    }
}

fn window_enumeration(seq: &ScenarioSequence, k: usize, theta: f64) -> Option<(usize, f64)> {
    use std::f64::consts::{PI, TAU};
    let angles: Vec<f64> =
        seq.frames.iter().map(|f| viewing_angle(&seq.camera.world_pose(&f.ego), &f.target).unwrap()).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for s in 0..=angles.len() - k {
        let d = (angles[s + k - 1] - angles[s] + PI).rem_euclid(TAU) - PI;
        if d.abs() > best.1 {
            best = (s, d.abs());
        }
    }
    (best.1 >= theta).then_some(best)
}

#[test]
fn criterion_9_filter_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut vaf_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(3..9);
        let mut seq = straight(20.0, -3.0, 0.0, n);
        let ego_yaw = rng.random_range(-3.1..3.1);
        for f in &mut seq.frames {
            let mut x: f64 = rng.random_range(-40.0..40.0);
            if x.abs() < 1.0 {
                x += 5.0;
            }
            f.ego = Pose2::new(0.0, 0.0, ego_yaw);
            f.target = Pose2::new(x, rng.random_range(-15.0..15.0), rng.random_range(-3.1..3.1));
        }
        let k = rng.random_range(2..=3.min(n));
        let theta = rng.random_range(0.01..1.5);
        let got = vaf_filter(&seq, k, theta).unwrap();
        let want = window_enumeration(&seq, k, theta);
        let same = match (got, want) {
            (None, None) => true,
            (Some((a, va)), Some((b, vb))) => a == b && (va - vb).abs() < 1e-12,
            _ => false,
        };
        if !same {
            vaf_mismatch += 1;
        }
    }
    let p = AffParams::default();
    let check = |seq: ScenarioSequence| aff_check(&seq, &ego_future_path(&seq, p.horizon), &p);
    let aff = [
        (check(straight(30.0, -3.4, 0.0, 3)), None),
        (check(straight(9.0, -3.4, 0.0, 3)), Some(AffViolation::NotAhead)),
        (check(straight(4.0, -3.5, 10.0, 3)), Some(AffViolation::OutOfFrustum)),
        (check(straight(60.0, -12.0, 10.0, 3)), Some(AffViolation::OutsideBand)),
        (check(straight(30.0, 0.0, 5.0, 3)), Some(AffViolation::Intruding)),
    ];
    let aff_ok = aff.iter().all(|(got, want)| got == want);
    report(
        9,
        vaf_mismatch == 0 && aff_ok,
        &format!("vaf mismatches {vaf_mismatch}/1000, aff classes {:?}", aff.iter().map(|(g, _)| *g).collect::<Vec<_>>()),
    );
}
