//! File formats: JSON, JSON Lines, transcript records and catalog TSV.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use screenbot_core::catalog::QuestionCatalog;
use screenbot_core::cohort::{Label, Transcript, Turn};

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    serde_json::from_reader(r).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// One transcript as stored on disk. `label` is absent for unlabelled
/// interviews.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub user_id: usize,
    pub conversation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub turns: Vec<Turn>,
}

impl TranscriptRecord {
    pub fn new(t: &Transcript, label: Option<Label>) -> Self {
        Self {
            user_id: t.user_id,
            conversation: t.conversation,
            label,
            turns: t.turns.clone(),
        }
    }

    pub fn into_transcript(self) -> Transcript {
        Transcript {
            user_id: self.user_id,
            conversation: self.conversation,
            turns: self.turns,
        }
    }
}

pub fn read_catalog(path: &Path) -> Result<QuestionCatalog> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    QuestionCatalog::parse(&text).with_context(|| format!("parsing catalog {}", path.display()))
}

pub fn write_catalog(path: &Path, catalog: &QuestionCatalog) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, catalog.to_tsv()).with_context(|| format!("writing {}", path.display()))
}

/// A model file with a format tag and version, so stale files fail loudly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format: String,
    pub version: u32,
    pub model: T,
}

pub const MODEL_VERSION: u32 = 1;

pub fn write_model<T: Serialize>(path: &Path, format: &str, model: &T) -> Result<()> {
    write_json(
        path,
        &Versioned {
            format: format.to_string(),
            version: MODEL_VERSION,
            model,
        },
    )
}

pub fn read_model<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let v: Versioned<T> = read_json(path)?;
    anyhow::ensure!(
        v.format == format && v.version == MODEL_VERSION,
        "{}: expected {format} v{MODEL_VERSION}, found {} v{}",
        path.display(),
        v.format,
        v.version
    );
    Ok(v.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_skips_blank_lines_and_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\n\n2\n").unwrap();
        assert_eq!(read_jsonl::<u32>(&p).unwrap(), vec![1, 2]);
        fs::write(&p, "1\nnope\n").unwrap();
        let err = format!("{:#}", read_jsonl::<u32>(&p).unwrap_err());
        assert!(err.contains(":2"), "{err}");
    }

    #[test]
    fn model_format_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_model(&p, "thing", &vec![1.0, 2.0]).unwrap();
        assert_eq!(read_model::<Vec<f64>>(&p, "thing").unwrap(), vec![1.0, 2.0]);
        assert!(read_model::<Vec<f64>>(&p, "other").is_err());
    }
}
