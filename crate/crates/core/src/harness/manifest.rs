//! JSON-lines sample manifests.
//!
//! The first line may be a header `{"benchmark": "..."}`; every other
//! non-blank line is one entry. Image paths are relative to the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::types::{BenchmarkKind, ImageRef, Sample};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("sample {id}: image not found at {path}")]
    MissingImage { id: String, path: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { id: String, line: usize },
    #[error("manifest has no benchmark header and none was configured")]
    MissingBenchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub question: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_image_path: Option<String>,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub benchmark: BenchmarkKind,
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    benchmark: BenchmarkKind,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// Entries as pipeline samples, with image paths resolved.
    pub fn samples(&self) -> Vec<Sample> {
        self.entries
            .iter()
            .map(|e| Sample {
                id: e.id.clone(),
                question: e.question.clone(),
                image: ImageRef::from(e.image_path.as_str()).resolved(&self.base_dir),
                aux_image: e
                    .aux_image_path
                    .as_deref()
                    .map(|p| ImageRef::from(p).resolved(&self.base_dir)),
                gold_answers: e.gold_answers.clone(),
                benchmark: self.benchmark,
                question_type: e.question_type.clone(),
            })
            .collect()
    }

    /// Serialize back to JSONL with a benchmark header.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::json!({ "benchmark": self.benchmark }).to_string();
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

fn check_image(base: &Path, id: &str, path: &str) -> Result<(), ManifestError> {
    let image = ImageRef::from(path).resolved(base);
    match image.path() {
        Some(p) if !p.is_file() => Err(ManifestError::MissingImage {
            id: id.to_owned(),
            path: p.display().to_string(),
        }),
        _ => Ok(()),
    }
}

/// Parse manifest text; `base_dir` anchors relative image paths.
pub fn parse_manifest(
    text: &str,
    base_dir: &Path,
    default_benchmark: Option<BenchmarkKind>,
) -> Result<Manifest, ManifestError> {
    let mut benchmark = None;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let parse_err = |reason: String| ManifestError::ParseError { line, reason };
        let value: Value = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;

        if entries.is_empty() && benchmark.is_none() && value.get("id").is_none() {
            let header: Header = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            benchmark = Some(header.benchmark);
            continue;
        }

        let entry: ManifestEntry = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if entry.id.trim().is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if entry.gold_answers.is_empty() {
            return Err(parse_err(format!("sample {} has no gold answers", entry.id)));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(ManifestError::DuplicateId { id: entry.id, line });
        }
        check_image(base_dir, &entry.id, &entry.image_path)?;
        if let Some(aux) = &entry.aux_image_path {
            check_image(base_dir, &entry.id, aux)?;
        }
        entries.push(entry);
    }

    Ok(Manifest {
        benchmark: benchmark.or(default_benchmark).ok_or(ManifestError::MissingBenchmark)?,
        base_dir: base_dir.to_path_buf(),
        entries,
    })
}

/// Load and validate a manifest file.
pub fn ingest_manifest(path: &Path, default_benchmark: Option<BenchmarkKind>) -> Result<Manifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, default_benchmark)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_with_images(names: &[&str]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for n in names {
            std::fs::write(dir.path().join(n), b"img").unwrap();
        }
        dir
    }

    #[test]
    fn three_valid_lines() {
        let dir = dir_with_images(&["a.png", "b.png"]);
        let text = r#"{"benchmark":"infographic_vqa"}
{"id":"1","question":"q1","image_path":"a.png","gold_answers":["x"]}
{"id":"2","question":"q2","image_path":"b.png","aux_image_path":"a.png","gold_answers":["y"]}

{"id":"3","question":"q3","image_path":"https://example.com/c.png","gold_answers":["z","zz"]}
"#;
        let m = parse_manifest(text, dir.path(), None).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.benchmark, BenchmarkKind::InfographicVqa);
        let samples = m.samples();
        assert!(samples[0].aux_image.is_none());
        assert!(samples[1].aux_image.is_some());
        assert_eq!(samples[0].image.path().unwrap(), dir.path().join("a.png"));
    }

    #[test]
    fn duplicate_id_reports_line() {
        let dir = dir_with_images(&["a.png"]);
        let text = "{\"id\":\"1\",\"question\":\"q\",\"image_path\":\"a.png\",\"gold_answers\":[\"x\"]}\n\
                    {\"id\":\"1\",\"question\":\"q\",\"image_path\":\"a.png\",\"gold_answers\":[\"x\"]}\n";
        let err = parse_manifest(text, dir.path(), Some(BenchmarkKind::HrBench)).unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateId { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_image_and_bad_lines() {
        let dir = dir_with_images(&[]);
        let text = "{\"id\":\"1\",\"question\":\"q\",\"image_path\":\"nope.png\",\"gold_answers\":[\"x\"]}\n";
        assert!(matches!(
            parse_manifest(text, dir.path(), Some(BenchmarkKind::HrBench)),
            Err(ManifestError::MissingImage { .. })
        ));
        let text = "{\"benchmark\":\"hr_bench\"}\nnot json\n";
        assert!(matches!(
            parse_manifest(text, dir.path(), None),
            Err(ManifestError::ParseError { line: 2, .. })
        ));
        let text = "{\"id\":\"1\",\"question\":\"q\",\"image_path\":\"https://x\",\"gold_answers\":[]}\n";
        assert!(matches!(
            parse_manifest(text, dir.path(), Some(BenchmarkKind::HrBench)),
            Err(ManifestError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_manifest("", dir.path(), None),
            Err(ManifestError::MissingBenchmark)
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = dir_with_images(&["a.png"]);
        let text = "{\"benchmark\":\"chart_museum\"}\n{\"id\":\"1\",\"question\":\"q\",\"image_path\":\"a.png\",\"gold_answers\":[\"x\"],\"question_type\":\"Factoid\"}\n";
        let m = parse_manifest(text, dir.path(), None).unwrap();
        assert_eq!(m.to_jsonl(), text);
    }
}
