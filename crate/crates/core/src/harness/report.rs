//! CSV and JSON reporting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::experiment::{ExperimentRecord, RunOutput};
use crate::metrics;

/// Column order of `records.csv`.
pub const RECORD_COLUMNS: [&str; 29] = [
    "scenario_id",
    "category",
    "maneuver",
    "group",
    "fold",
    "seed",
    "detector_seed",
    "pipeline",
    "window_start",
    "variation",
    "u_x",
    "u_y",
    "s_bar",
    "d1",
    "d2",
    "d3",
    "d_mean",
    "pdr",
    "ape",
    "mtd",
    "mbd",
    "asr",
    "cv",
    "bfs",
    "hard_brake",
    "overtake_abandoned",
    "missed",
    "texture",
    "trace",
];

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Means of the metric columns over a set of records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
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
    /// Share of records whose mean displacements are strictly increasing.
    pub progressive: f64,
    pub hard_brake: f64,
}

pub fn aggregate(records: &[&ExperimentRecord]) -> Aggregate {
    let col = |f: &dyn Fn(&ExperimentRecord) -> f64| {
        let v: Vec<f64> = records.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
        metrics::mean(&v)
    };
    Aggregate {
        n: records.len(),
        d1: col(&|r| r.d1),
        d2: col(&|r| r.d2),
        d3: col(&|r| r.d3),
        d_mean: col(&|r| r.d_mean),
        pdr: col(&|r| r.pdr),
        ape: col(&|r| r.ape),
        mtd: col(&|r| r.mtd),
        mbd: col(&|r| r.mbd),
        asr: col(&|r| r.asr),
        cv: col(&|r| r.cv),
        bfs: col(&|r| r.bfs),
        progressive: 100.0 * col(&|r| r.displacements().is_progressive() as u8 as f64),
        hard_brake: 100.0 * col(&|r| r.hard_brake as u8 as f64),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// group -> pipeline -> category (plus "ALL") -> means
    pub aggregates: BTreeMap<String, BTreeMap<String, BTreeMap<String, Aggregate>>>,
    pub rejections: Vec<crate::harness::experiment::Rejection>,
    pub notes: BTreeMap<String, String>,
}

pub fn summarize(output: &RunOutput) -> Summary {
    let mut keyed: BTreeMap<(String, String, String), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in &output.records {
        keyed.entry((r.group.clone(), r.pipeline.clone(), r.category.clone())).or_default().push(r);
        keyed.entry((r.group.clone(), r.pipeline.clone(), "ALL".into())).or_default().push(r);
    }
    let mut aggregates: BTreeMap<String, BTreeMap<String, BTreeMap<String, Aggregate>>> = BTreeMap::new();
    for ((g, p, c), rs) in keyed {
        aggregates.entry(g).or_default().entry(p).or_default().insert(c, aggregate(&rs));
    }
    Summary { aggregates, rejections: output.rejections.clone(), notes: output.notes.clone() }
}

/// Writes `records.csv` and `summary.json` into `dir`.
pub fn report(dir: &Path, output: &RunOutput) -> Result<Summary> {
    std::fs::create_dir_all(dir)?;
    write_records(&dir.join("records.csv"), &output.records)?;
    let summary = summarize(output);
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, cat: &str, d: [f64; 3]) -> ExperimentRecord {
        ExperimentRecord {
            scenario_id: id.into(),
            category: cat.into(),
            maneuver: "pass-by".into(),
            group: "specific".into(),
            fold: -1,
            seed: 7,
            detector_seed: 42,
            pipeline: "A".into(),
            window_start: 0,
            variation: 0.2,
            u_x: 0.0,
            u_y: 1.0,
            s_bar: 0.2,
            d1: d[0],
            d2: d[1],
            d3: d[2],
            d_mean: (d[0] + d[1] + d[2]) / 3.0,
            pdr: 100.0,
            ape: 0.5,
            mtd: 1.0,
            mbd: 3.5,
            asr: 100.0,
            cv: 0.1,
            bfs: 0.9,
            hard_brake: true,
            overtake_abandoned: false,
            missed: 0,
            texture: String::new(),
            trace: String::new(),
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let s = report(dir.path(), &RunOutput::default()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.trim_end(), RECORD_COLUMNS.join(","));
        assert!(s.aggregates.is_empty());
    }

    #[test]
    fn aggregates_match_hand_means_and_round_trip() {
        let out = RunOutput {
            records: vec![rec("a", "SUV-R-S", [0.1, 0.2, 0.3]), rec("b", "SUV-R-S", [0.3, 0.2, 0.7]), rec("c", "VAN-L-O", [0.0, 0.1, 0.2])],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let s = report(dir.path(), &out).unwrap();
        let suv = &s.aggregates["specific"]["A"]["SUV-R-S"];
        assert_eq!(suv.n, 2);
        assert!((suv.d3 - 0.5).abs() < 1e-12);
        assert!((suv.progressive - 50.0).abs() < 1e-12);
        let all = &s.aggregates["specific"]["A"]["ALL"];
        assert!((all.d1 - (0.1 + 0.3 + 0.0) / 3.0).abs() < 1e-12);
        assert_eq!(read_records(&dir.path().join("records.csv")).unwrap(), out.records);

        let first = std::fs::read(dir.path().join("summary.json")).unwrap();
        report(dir.path(), &out).unwrap();
        assert_eq!(std::fs::read(dir.path().join("summary.json")).unwrap(), first);
    }
}
