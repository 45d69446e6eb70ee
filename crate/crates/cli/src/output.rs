//! Result records (CSV) and run manifests (JSON).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

/// Bumped whenever a column or manifest field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub experiment: String,
    /// Parameter tuple of the sweep point, e.g. `n_sites=100;coupling=0.1`.
    pub point: String,
    pub observable: String,
    /// Independent variable (time, `g^2 t`, site, ...), empty when scalar.
    pub x: Option<f64>,
    /// Secondary index (site, sector, weight), empty when unused.
    pub index: Option<i64>,
    pub value: f64,
    pub error: Option<f64>,
    pub units: String,
}

/// Builder for records of one sweep point.
#[derive(Debug, Clone)]
pub struct PointRecords {
    experiment: String,
    point: String,
    pub records: Vec<ResultRecord>,
}

impl PointRecords {
    pub fn new(experiment: &str, point: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            point: point.to_string(),
            records: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        observable: &str,
        x: Option<f64>,
        index: Option<i64>,
        value: f64,
        error: Option<f64>,
        units: &str,
    ) {
        self.records.push(ResultRecord {
            schema_version: SCHEMA_VERSION,
            experiment: self.experiment.clone(),
            point: self.point.clone(),
            observable: observable.to_string(),
            x,
            index,
            value,
            error,
            units: units.to_string(),
        });
    }

    pub fn scalar(&mut self, observable: &str, value: f64, units: &str) {
        self.push(observable, None, None, value, None, units);
    }

    pub fn series(&mut self, observable: &str, xs: &[f64], values: &[f64], units: &str) {
        for (&x, &v) in xs.iter().zip(values) {
            self.push(observable, Some(x), None, v, None, units);
        }
    }
}

/// Status of one sweep point in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointStatus {
    pub point: String,
    pub ok: bool,
    pub n_records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub artifact: &'static str,
    pub artifact_version: &'static str,
    pub config: &'a ExperimentConfig,
    pub points: Vec<PointStatus>,
    /// Extra files written next to the manifest, relative to it.
    pub files: Vec<String>,
}

/// Creates `root/subdir` and returns it.
pub fn prepare_dir(root: &Path, subdir: &Path) -> io::Result<PathBuf> {
    let dir = root.join(subdir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn write_records(path: &Path, records: &[ResultRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn write_manifest(path: &Path, manifest: &Manifest<'_>) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)
}

/// Writes a matrix-shaped checkpoint: header row then one row per entry.
pub fn write_checkpoint(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_csv() {
        let dir = std::env::temp_dir().join(format!("scramble-out-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut p = PointRecords::new("e", "n=3");
        p.scalar("a", 1.5, "1");
        p.push("b", Some(0.25), Some(2), -3.0, Some(0.1), "steps");
        let path = dir.join("r.csv");
        write_records(&path, &p.records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "schema_version,experiment,point,observable,x,index,value,error,units"
        );
        assert_eq!(lines[1], "1,e,n=3,a,,,1.5,,1");
        assert_eq!(lines[2], "1,e,n=3,b,0.25,2,-3.0,0.1,steps");
        fs::remove_dir_all(&dir).unwrap();
    }
}
