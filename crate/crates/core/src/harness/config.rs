//! Run configuration file for the command-line tool and the canned suites.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::attack::{AffParams, AttackConfig};
use crate::harness::experiment::{prepare, Ablation, ExperimentConfig, Factor, SweepBase, TransferSpec};
use crate::harness::templates::{generate_scenarios, scenario_bank, ScenarioTemplate};
use crate::scene::{ScenarioSequence, VehicleType};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "path")]
pub enum ScenarioSource {
    /// The 220-sequence bank.
    Bank,
    /// The 20-scenario attack suite.
    #[default]
    Suite,
    /// Canned abandoned-overtaking scenarios.
    Overtake,
    /// Every `.scn` file in a directory, in file-name order.
    Dir(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub factors: Vec<Factor>,
    /// Overrides the default (low, high) levels for every factor when set.
    pub levels: Option<Vec<f64>>,
    pub count: usize,
    pub base: SweepBase,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { factors: Factor::ALL.to_vec(), levels: None, count: 20, base: SweepBase::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub toggles: Vec<Ablation>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { toggles: Ablation::ALL[1..].to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub source: TransferSpec,
    pub target: TransferSpec,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { source: TransferSpec::Detector(42), target: TransferSpec::Detector(43) }
    }
}

/// Texture and direction for the `eval` verb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalTarget {
    /// Float sidecar (`.f32`) or PPM texture.
    pub texture: Option<PathBuf>,
    pub u: [f64; 2],
}

impl Default for EvalTarget {
    fn default() -> Self {
        Self { texture: None, u: [0.0, 1.0] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub scenarios: ScenarioSource,
    pub sweep: SweepConfig,
    pub ablation: AblationConfig,
    pub transfer: TransferConfig,
    pub eval: EvalTarget,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    pub fn scenarios(&self) -> Result<Vec<ScenarioSequence>> {
        let seed = self.experiment.scenario_seed;
        match &self.scenarios {
            ScenarioSource::Bank => scenario_bank(seed),
            ScenarioSource::Suite => attack_suite(seed),
            ScenarioSource::Overtake => overtake_suite(seed),
            ScenarioSource::Dir(dir) => load_dir(dir),
        }
    }
}

/// Loads every `.scn` file of a directory in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<ScenarioSequence>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ScenarioSequence::load(p)).collect()
}

pub fn save_dir(dir: &Path, scenarios: &[ScenarioSequence]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in scenarios {
        s.save(&dir.join(format!("{}.scn", s.id)))?;
    }
    Ok(())
}

/// First `count` draws from `template` that pass both filters under default
/// attack settings, scanning at most `32 * count` candidates.
pub fn eligible_scenarios(template: &ScenarioTemplate, count: usize, seed: u64) -> Result<Vec<ScenarioSequence>> {
    let attack = AttackConfig::default();
    let aff = AffParams::default();
    let mut out = Vec::with_capacity(count);
    for seq in generate_scenarios(template, 32 * count, seed)? {
        if out.len() == count {
            break;
        }
        if prepare(&seq, &attack, &aff)?.is_ok() {
            out.push(seq);
        }
    }
    if out.len() < count {
        return Err(Error::InvalidInput(format!(
            "template {} yielded {} of {count} eligible scenarios",
            template.category,
            out.len()
        )));
    }
    Ok(out)
}

/// Twenty attack scenarios: ten parked sedans on the shoulder and ten
/// slower SUVs in the adjacent right lane.
pub fn attack_suite(seed: u64) -> Result<Vec<ScenarioSequence>> {
    let mut out = eligible_scenarios(&ScenarioTemplate::parked(VehicleType::Sedan), 10, seed)?;
    out.extend(eligible_scenarios(&ScenarioTemplate::standard("SUV-R-S".parse()?), 10, seed.wrapping_add(1))?);
    Ok(out)
}

pub fn overtake_suite(seed: u64) -> Result<Vec<ScenarioSequence>> {
    eligible_scenarios(&ScenarioTemplate::overtake(VehicleType::Suv), 5, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Maneuver;

    #[test]
    fn default_run_config_round_trips_through_toml() {
        let cfg = RunConfig {
            scenarios: ScenarioSource::Dir(PathBuf::from("scn")),
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig = toml::from_str("[experiment]\nseeds = [3]\n").unwrap();
        assert_eq!(partial.experiment.seeds, vec![3]);
        assert_eq!(partial.scenarios, ScenarioSource::Suite);
    }

    #[test]
    fn load_reports_the_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "experiment = 3").unwrap();
        match RunConfig::load(&path) {
            Err(Error::Format { path: p, .. }) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "[experiment]\nseeds = []\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn scenario_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scs = generate_scenarios(&ScenarioTemplate::parked(VehicleType::Sedan), 4, 2).unwrap();
        save_dir(dir.path(), &scs).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mut want = scs.clone();
        want.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(load_dir(dir.path()).unwrap(), want);
    }

    #[test]
    fn suites_contain_only_eligible_scenarios() {
        let suite = attack_suite(1).unwrap();
        assert_eq!(suite.len(), 20);
        assert_eq!(suite.iter().filter(|s| s.category.vehicle == VehicleType::Sedan).count(), 10);
        for s in &suite {
            assert!(prepare(s, &AttackConfig::default(), &AffParams::default()).unwrap().is_ok(), "{}", s.id);
        }
        assert_eq!(suite, attack_suite(1).unwrap());
        let ovt = overtake_suite(1).unwrap();
        assert_eq!(ovt.len(), 5);
        assert!(ovt.iter().all(|s| s.maneuver == Maneuver::Overtake));
    }

    #[test]
    fn ineligible_template_is_an_error() {
        let mut t = ScenarioTemplate::parked(VehicleType::Sedan);
        // a target pinned far to the side never passes the lateral band
        t.lateral = [30.0, 31.0];
        assert!(eligible_scenarios(&t, 2, 0).is_err());
    }
}
