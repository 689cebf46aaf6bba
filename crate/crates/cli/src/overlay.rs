//! Draws predicted points, boxes and mask contours onto frames.

use std::path::Path;

use anyhow::{bail, Context};

use dintr_core::annotations::{load_jsonl, rle_decode, FrameRecord, TargetRecord};
use dintr_core::codec::Frame;
use dintr_core::metrics::boundary;
use dintr_core::synthvid::{frame_name, read_frames};

/// Per-id colours, cycled.
pub const PALETTE: [[f64; 3]; 6] =
    [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.5, 0.0], [1.0, 1.0, 1.0]];

pub fn colour(id: usize) -> [f64; 3] {
    PALETTE[id % PALETTE.len()]
}

fn put(f: &mut Frame, x: i64, y: i64, c: [f64; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < f.width() && (y as usize) < f.height() {
        f.set(x as usize, y as usize, c);
    }
}

/// Plus sign of arm length 2 centred on the rounded point.
pub fn draw_point(f: &mut Frame, p: [f64; 2], c: [f64; 3]) {
    let (x, y) = (p[0].round() as i64, p[1].round() as i64);
    for d in -2..=2 {
        put(f, x + d, y, c);
        put(f, x, y + d, c);
    }
}

/// One-pixel outline of the half-open box `[x_min, x_max) x [y_min, y_max)`.
pub fn draw_box(f: &mut Frame, b: [f64; 4], c: [f64; 3]) {
    let (x0, y0) = (b[0].round() as i64, b[1].round() as i64);
    let (x1, y1) = (b[2].round() as i64 - 1, b[3].round() as i64 - 1);
    if x1 < x0 || y1 < y0 {
        return;
    }
    for x in x0..=x1 {
        put(f, x, y0, c);
        put(f, x, y1, c);
    }
    for y in y0..=y1 {
        put(f, x0, y, c);
        put(f, x1, y, c);
    }
}

fn draw_target(f: &mut Frame, t: &TargetRecord) -> anyhow::Result<()> {
    let c = colour(t.id);
    if let Some(rle) = &t.rle {
        let m = rle_decode(rle, f.width(), f.height())?;
        let edge = boundary(&m);
        for y in 0..f.height() {
            for x in 0..f.width() {
                if edge.get(x, y) {
                    f.set(x, y, c);
                }
            }
        }
    }
    if let Some(b) = t.bbox {
        draw_box(f, b, c);
    }
    if let Some(p) = t.point {
        draw_point(f, p, c);
    }
    for p in t.points.iter().flatten() {
        draw_point(f, *p, c);
    }
    Ok(())
}

/// Annotated copies of `frames`; frames without a record are unchanged.
pub fn overlay(frames: &[Frame], records: &[FrameRecord]) -> anyhow::Result<Vec<Frame>> {
    let mut out = frames.to_vec();
    for r in records {
        let Some(f) = out.get_mut(r.frame) else {
            bail!("prediction for frame {} but the sequence has {} frames", r.frame, frames.len());
        };
        for t in &r.targets {
            if t.lost == Some(true) {
                continue;
            }
            draw_target(f, t)?;
        }
    }
    Ok(out)
}

pub fn overlay_dir(seq: &Path, pred: &Path, out: &Path) -> anyhow::Result<()> {
    let frames = read_frames(seq).with_context(|| format!("reading frames from {}", seq.display()))?;
    let records = load_jsonl(pred).with_context(|| format!("reading {}", pred.display()))?;
    let drawn = overlay(&frames, &records)?;
    std::fs::create_dir_all(out)?;
    for (t, f) in drawn.iter().enumerate() {
        f.save(out.join(frame_name(t)))?;
    }
    Ok(())
}
