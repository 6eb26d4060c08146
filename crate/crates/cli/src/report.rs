//! Per-run reports: one CSV row per image plus a JSON sidecar holding the
//! resolved configuration and aggregate means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct Record {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub ok: bool,
    pub error: Option<String>,
    pub iterations: Option<usize>,
    pub stationarity_residual: Option<f64>,
    pub gamma: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub ms_ssim: Option<f64>,
    /// PSNR of the unprocessed input against the reference.
    pub input_psnr: Option<f64>,
    pub seconds: f64,
}

impl Record {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Record {
            input: input.into(),
            ok: true,
            ..Record::default()
        }
    }

    pub fn failed(input: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        let input = input.into();
        Record {
            error: Some(format!("{}: {err}", input.display())),
            input,
            ok: false,
            ..Record::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub records: Vec<Record>,
    /// Means over the records that carry each quantity.
    pub aggregates: BTreeMap<String, f64>,
    pub config: serde_json::Value,
    pub wall_clock_s: f64,
}

type Field = (&'static str, fn(&Record) -> Option<f64>);

const FIELDS: [Field; 6] = [
    ("iterations", |r| r.iterations.map(|v| v as f64)),
    ("stationarity_residual", |r| r.stationarity_residual),
    ("psnr", |r| r.psnr),
    ("ssim", |r| r.ssim),
    ("ms_ssim", |r| r.ms_ssim),
    ("input_psnr", |r| r.input_psnr),
];

impl RunReport {
    pub fn new(command: &str, records: Vec<Record>, config: serde_json::Value, wall_clock_s: f64) -> Self {
        let mut report = RunReport {
            command: command.to_string(),
            records,
            aggregates: BTreeMap::new(),
            config,
            wall_clock_s,
        };
        report.aggregates = report.compute_aggregates();
        report
    }

    pub fn compute_aggregates(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, get) in FIELDS {
            let vals: Vec<f64> = self.records.iter().filter_map(get).collect();
            if !vals.is_empty() {
                out.insert(format!("mean_{name}"), vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        out.insert("records".into(), self.records.len() as f64);
        out.insert("failed".into(), self.failures().count() as f64);
        out
    }

    pub fn failures(&self) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(|r| !r.ok)
    }

    pub fn all_ok(&self) -> bool {
        self.records.iter().all(|r| r.ok)
    }

    pub fn mean(&self, field: &str) -> Option<f64> {
        self.aggregates.get(&format!("mean_{field}")).copied()
    }

    /// Base path of the report files inside `dir`.
    pub fn stem(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_report", self.command))
    }

    /// Writes `<command>_report.csv` and `.json`; when any record failed a
    /// `.partial` file lists the failures next to them.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        let stem = self.stem(dir);
        let mut w = csv::Writer::from_path(stem.with_extension("csv"))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "aggregates": self.aggregates,
            "wall_clock_s": self.wall_clock_s,
            "partial": !self.all_ok(),
        });
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
        let marker = stem.with_extension("partial");
        if self.all_ok() {
            if marker.exists() {
                fs::remove_file(marker)?;
            }
        } else {
            let lines: Vec<String> = self.failures().filter_map(|r| r.error.clone()).collect();
            fs::write(marker, lines.join("\n") + "\n")?;
        }
        Ok(())
    }

    /// Plain-text table for the terminal.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        let mut s = format!(
            "{:<32} {:>6} {:>6} {:>9} {:>8} {:>8}\n",
            "image", "status", "iters", "psnr", "ssim", "ms-ssim"
        );
        for r in &self.records {
            let name = r.input.file_name().map_or_else(|| r.input.display().to_string(), |n| n.to_string_lossy().into_owned());
            let _ = writeln!(
                s,
                "{:<32} {:>6} {:>6} {:>9} {:>8} {:>8}",
                name,
                if r.ok { "ok" } else { "FAIL" },
                r.iterations.map_or("-".to_string(), |v| v.to_string()),
                fmt(r.psnr, 3),
                fmt(r.ssim, 4),
                fmt(r.ms_ssim, 4)
            );
        }
        let _ = writeln!(
            s,
            "{:<32} {:>6} {:>6} {:>9} {:>8} {:>8}",
            "mean",
            format!("{}/{}", self.records.len() - self.failures().count(), self.records.len()),
            fmt(self.mean("iterations"), 1),
            fmt(self.mean("psnr"), 3),
            fmt(self.mean("ssim"), 4),
            fmt(self.mean("ms_ssim"), 4)
        );
        s
    }
}
