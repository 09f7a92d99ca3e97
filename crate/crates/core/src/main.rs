//! Command-line front end: `viewdrift <verb> --config <path> --out <dir>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};

use viewdrift::attack::AttackScenario;
use viewdrift::downstream::PipelineParams;
use viewdrift::harness::experiment::{output_dir, prepare_unfiltered};
use viewdrift::harness::{
    evaluate, report, run_ablation, run_cross_validation, run_factor_sweep, run_specific_all, run_transfer, save_dir,
    scenario_bank, RunConfig, RunOutput,
};
use viewdrift::surrogate::Texture;

#[derive(Parser, Debug)]
#[command(name = "viewdrift", version, about = "View-induced trajectory manipulation simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; `VIEWDRIFT_OUT` overrides it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the attack seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Write the configured scenarios (or the bank) as `.scn` files.
    Generate,
    /// Scenario-specific attacks on every configured scenario.
    Attack,
    /// Evaluate an existing texture on the configured scenarios.
    Eval,
    /// Cross-validation within each category.
    Cv,
    /// Controlled two-level factor sweeps.
    Sweep,
    /// Full configuration against single-toggle ablations.
    Ablate,
    /// Detector-seed or vehicle-type transfer.
    Transfer,
    /// Rebuild `summary.json` from an existing `records.csv`.
    Report,
    /// Print the default run configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seeds = vec![seed];
    }
    let out = output_dir(cli.out.clone()).unwrap_or_else(|| PathBuf::from("viewdrift-out"));
    let exp = &cfg.experiment;
    let output = match cli.verb {
        Verb::DefaultConfig => {
            print!("{}", toml::to_string(&RunConfig::default())?);
            return Ok(());
        }
        Verb::Generate => {
            let scenarios = match cfg.config_source_is_default() {
                true => scenario_bank(exp.scenario_seed)?,
                false => cfg.scenarios()?,
            };
            save_dir(&out.join("scenarios"), &scenarios)?;
            info!("wrote {} scenarios", scenarios.len());
            return Ok(());
        }
        Verb::Report => {
            let records = viewdrift::harness::read_records(&out.join("records.csv"))?;
            let output = RunOutput { records, ..Default::default() };
            report(&out, &output)?;
            return Ok(());
        }
        Verb::Attack => run_specific_all(&cfg.scenarios()?, exp, "specific", Some(&out))?,
        Verb::Eval => eval(&cfg, &out)?,
        Verb::Cv => {
            let scenarios = cfg.scenarios()?;
            let mut by_cat: std::collections::BTreeMap<String, Vec<_>> = Default::default();
            for s in scenarios {
                by_cat.entry(s.category.to_string()).or_default().push(s);
            }
            let mut output = RunOutput::default();
            let mut folds = Vec::new();
            for (cat, group) in by_cat {
                if group.len() < exp.folds {
                    warn!("{cat}: {} scenarios, fewer than {} folds; skipped", group.len(), exp.folds);
                    continue;
                }
                let (o, f) = run_cross_validation(&group, exp.folds, exp, &format!("cv:{cat}"), Some(&out))?;
                output.extend(o);
                folds.push((cat, f));
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("folds.json"), serde_json::to_string_pretty(&folds)? + "\n")?;
            output
        }
        Verb::Sweep => {
            let mut output = RunOutput::default();
            for &f in &cfg.sweep.factors {
                let levels = cfg.sweep.levels.clone().unwrap_or_else(|| f.default_levels().to_vec());
                output.extend(run_factor_sweep(f, &levels, &cfg.sweep.base, cfg.sweep.count, exp, Some(&out))?);
            }
            output
        }
        Verb::Ablate => {
            let (output, rows) = run_ablation(&cfg.scenarios()?, &cfg.ablation.toggles, exp, Some(&out))?;
            std::fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
            output
        }
        Verb::Transfer => run_transfer(&cfg.scenarios()?, cfg.transfer.source, cfg.transfer.target, exp, Some(&out))?,
    };
    report(&out, &output)?;
    println!("{} records, {} rejections -> {}", output.records.len(), output.rejections.len(), out.display());
    Ok(())
}

impl ConfigExt for RunConfig {
    fn config_source_is_default(&self) -> bool {
        self.scenarios == viewdrift::harness::ScenarioSource::default()
    }
}

trait ConfigExt {
    fn config_source_is_default(&self) -> bool;
}

fn load_texture(path: &Path) -> anyhow::Result<Texture> {
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => Texture::read_ppm(path)?,
        _ => Texture::read_sidecar(path)?,
    })
}

fn eval(cfg: &RunConfig, out: &Path) -> anyhow::Result<RunOutput> {
    let Some(path) = &cfg.eval.texture else {
        bail!("eval needs `eval.texture` in the configuration");
    };
    let texture = load_texture(path)?;
    let exp = &cfg.experiment;
    let u = cfg.eval.u;
    let norm = u[0].hypot(u[1]);
    if (norm - 1.0).abs() > 1e-9 {
        bail!("eval.u must be a unit vector, got {u:?}");
    }
    let mut attack = exp.attack.clone();
    (attack.texture_height, attack.texture_width) = texture.resolution();
    let mut output = RunOutput::default();
    for seq in cfg.scenarios()? {
        let sc: AttackScenario = prepare_unfiltered(&seq, &attack)?;
        for &det in &exp.detector_seeds {
            let model = exp.surrogate(det);
            for &p in &exp.pipelines {
                let ev = evaluate(&texture, &sc, &model, u, &PipelineParams::variant(p), &exp.eval)?;
                let r = ev.report;
                output.records.push(viewdrift::harness::ExperimentRecord {
                    scenario_id: sc.seq.id.clone(),
                    category: sc.seq.category.to_string(),
                    maneuver: serde_json::to_value(sc.seq.maneuver)?.as_str().unwrap_or_default().into(),
                    group: "eval".into(),
                    fold: -1,
                    seed: 0,
                    detector_seed: det,
                    pipeline: p.to_string(),
                    window_start: sc.seq.window_start,
                    variation: viewdrift::scene::viewing_angle_variation(&sc.seq)?,
                    u_x: u[0],
                    u_y: u[1],
                    s_bar: 0.0,
                    d1: r.d1,
                    d2: r.d2,
                    d3: r.d3,
                    d_mean: viewdrift::metrics::mean(&ev.d),
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
                    texture: path.display().to_string(),
                    trace: String::new(),
                });
            }
        }
    }
    let _ = out;
    Ok(output)
}
