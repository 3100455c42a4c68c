use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explanation::ExplanationSet;
use crate::types::{ClassProbabilities, EmphasisPattern};

/// One day of one episode. Field order is the on-disk JSONL order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Day of the episode, 0-based.
    pub day: usize,
    /// Index of the bar in the underlying series.
    pub series_day: usize,
    pub p: ClassProbabilities,
    pub explanations: ExplanationSet,
    pub pattern: EmphasisPattern,
    /// Position held before the order.
    pub d_prev: u32,
    pub d_u: u32,
    pub d_ai: f64,
    /// Percent change of total assets versus the previous day's close.
    pub delta: f64,
    pub close: f64,
    /// Total assets at this day's close.
    pub total_assets: f64,
    pub strategy_id: String,
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn to_jsonl_string(records: &[TrajectoryRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn save_jsonl(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file))
}

/// Loads every `*.jsonl` file under `path` (or `path` itself if it is a file),
/// one episode per file, in sorted path order.
pub fn load_episodes(path: &Path) -> Result<Vec<Vec<TrajectoryRecord>>> {
    if path.is_file() {
        return Ok(vec![load_jsonl(path)?]);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
    }
    files.sort();
    files.iter().map(|f| load_jsonl(f)).collect()
}
