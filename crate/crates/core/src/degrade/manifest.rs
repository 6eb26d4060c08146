use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    Good,
    Usable,
    Reject,
    SyntheticLow,
}

impl std::str::FromStr for Quality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "good" => Ok(Quality::Good),
            "usable" => Ok(Quality::Usable),
            "reject" => Ok(Quality::Reject),
            "synthetic-low" => Ok(Quality::SyntheticLow),
            other => Err(format!("unknown quality label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<Quality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u32>,
    /// Clean counterpart of a synthetically degraded image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ManifestEntry {
            path: path.into(),
            quality: None,
            grade: None,
            clean: None,
        }
    }
}

/// Ordered image list shared by the CLI and the trainer, stored as one
/// JSON object per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Non-fatal issues found while building.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut f, e).map_err(std::io::Error::from)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line).map_err(|err| {
                Error::CorruptData(format!("{}:{}: {err}", path.display(), i + 1))
            })?;
            if !seen.insert(e.path.clone()) {
                return Err(Error::CorruptData(format!(
                    "{}:{}: duplicate path {}",
                    path.display(),
                    i + 1,
                    e.path.display()
                )));
            }
            entries.push(e);
        }
        Ok(DatasetManifest {
            entries,
            warnings: Vec::new(),
        })
    }
}

fn is_supported_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

struct Label {
    grade: u32,
    quality: Option<Quality>,
}

/// Parses `filename,grade[,quality]` with a header row.
fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::MalformedLabels {
            line: 1,
            reason: e.to_string(),
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedLabels {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("filename") || headers.get(1) != Some("grade") {
        return Err(Error::MalformedLabels {
            line: 1,
            reason: "header must start with filename,grade".into(),
        });
    }
    let has_quality = headers.get(2) == Some("quality");
    let mut labels = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedLabels {
            line,
            reason: e.to_string(),
        })?;
        let bad = |reason: String| Error::MalformedLabels { line, reason };
        let name = row.get(0).filter(|s| !s.is_empty()).ok_or_else(|| bad("missing filename".into()))?;
        let grade = row
            .get(1)
            .ok_or_else(|| bad("missing grade".into()))?
            .parse::<u32>()
            .map_err(|e| bad(format!("grade: {e}")))?;
        let quality = match (has_quality, row.get(2)) {
            (true, Some(q)) if !q.is_empty() => Some(q.parse::<Quality>().map_err(bad)?),
            _ => None,
        };
        if labels.insert(name.to_string(), Label { grade, quality }).is_some() {
            return Err(bad(format!("duplicate filename {name}")));
        }
    }
    Ok(labels)
}

/// Lists the PNG / JPEG files directly under `root`, sorted by path, joined
/// with an optional labels CSV by file name.
pub fn build_manifest(root: impl AsRef<Path>, labels: Option<&Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingDir(root.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_supported_image(p))
        .collect();
    paths.sort();

    let mut labels = match labels {
        Some(p) => read_labels(p)?,
        None => BTreeMap::new(),
    };
    let have_labels = !labels.is_empty();
    let mut manifest = DatasetManifest::default();
    let mut unlabeled = 0;
    for path in paths {
        let mut entry = ManifestEntry::new(&path);
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match labels.remove(name) {
            Some(l) => {
                entry.grade = Some(l.grade);
                entry.quality = l.quality;
            }
            None => unlabeled += 1,
        }
        manifest.entries.push(entry);
    }
    if have_labels && unlabeled > 0 {
        manifest
            .warnings
            .push(format!("{unlabeled} image(s) have no label row"));
    }
    for name in labels.keys() {
        manifest
            .warnings
            .push(format!("label row for {name} matches no image"));
    }
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    Ok(manifest)
}
