//! Per-frame JSONL records shared by ground truth and tracker output, and
//! the run-length mask encoding they use.
//!
//! RLE counts are row-major, alternate background and foreground runs, and
//! always start with a (possibly empty) background run.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::Mask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lost: Option<bool>,
}

impl TargetRecord {
    pub fn new(id: usize) -> Self {
        Self { id, kind: None, point: None, points: None, bbox: None, rle: None, conf: None, lost: None }
    }

    pub fn mask(&self, width: usize, height: usize) -> Result<Option<Mask>> {
        self.rle.as_deref().map(|r| rle_decode(r, width, height)).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: usize,
    pub targets: Vec<TargetRecord>,
}

impl FrameRecord {
    pub fn target(&self, id: usize) -> Option<&TargetRecord> {
        self.targets.iter().find(|t| t.id == id)
    }
}

pub fn rle_encode(mask: &Mask) -> String {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for &b in mask.bits() {
        if b == current {
            run += 1;
        } else {
            counts.push(run);
            current = b;
            run = 1;
        }
    }
    counts.push(run);
    counts.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn rle_decode(rle: &str, width: usize, height: usize) -> Result<Mask> {
    let mut bits = Vec::with_capacity(width * height);
    let mut value = false;
    for tok in rle.split_whitespace() {
        let n: usize = tok.parse().map_err(|_| Error::Format(format!("bad RLE count {tok:?}")))?;
        bits.extend(std::iter::repeat(value).take(n));
        value = !value;
    }
    if bits.len() != width * height {
        return Err(Error::Format(format!("RLE covers {} pixels, expected {}x{}", bits.len(), width, height)));
    }
    Mask::new(width, height, bits)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[FrameRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[FrameRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}
