use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use dintr_core::annotations::{load_jsonl, rle_decode, write_jsonl, FrameRecord};
use dintr_core::conditioning::{read_indicators, BoxRegion, Indicator, Point, VocabTable};
use dintr_core::metrics::{evaluate, EvalOptions, EvalReport, MetricKind};
use dintr_core::synthvid::{read_frames, read_manifest, render, write_clip, SceneSpec};
use dintr_core::tracker::track_sequence;

use crate::config::{load_config, CliError, CliResult};
use crate::{InitKind, Scene};

pub fn synth(config: Option<&Path>, scene: Scene, frames: Option<usize>, out: &Path) -> CliResult<i32> {
    let mut spec = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, SceneSpec>(de)
                .map_err(|e| CliError::Config(format!("at `{}`: {}", e.path(), e.inner())))?
        }
        None => match scene {
            Scene::Disc => SceneSpec::default_disc(),
            Scene::TwoDiscs => SceneSpec::two_discs(),
        },
    };
    if let Some(n) = frames {
        spec.frames = n;
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let clip = render(&spec)?;
    write_clip(&spec, &clip, out)?;
    eprintln!("wrote {} frames to {}", spec.frames, out.display());
    Ok(0)
}

pub struct TrackArgs {
    pub config: Option<PathBuf>,
    pub seq: PathBuf,
    pub indicator: Option<PathBuf>,
    pub init_from_gt: Option<InitKind>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub telemetry: Option<PathBuf>,
    pub seed: Option<u64>,
    pub warm_start: bool,
    pub print_config: bool,
}

/// Frame-0 indicators of one kind taken from a ground-truth file.
pub fn indicators_from_gt(gt: &[FrameRecord], kind: InitKind, size: (usize, usize)) -> anyhow::Result<Vec<Indicator>> {
    let first = gt.first().ok_or_else(|| anyhow!("ground truth has no frames"))?;
    first
        .targets
        .iter()
        .map(|t| {
            Ok(match kind {
                InitKind::Point => {
                    let [x, y] = t.point.ok_or_else(|| anyhow!("target {} has no point", t.id))?;
                    Indicator::Point(Point { x, y })
                }
                InitKind::Box => {
                    Indicator::Box(BoxRegion::from_array(t.bbox.ok_or_else(|| anyhow!("target {} has no box", t.id))?))
                }
                InitKind::Segment => {
                    let rle = t.rle.as_ref().ok_or_else(|| anyhow!("target {} has no mask", t.id))?;
                    Indicator::Segment(rle_decode(rle, size.0, size.1)?)
                }
            })
        })
        .collect()
}

pub fn track(a: &TrackArgs) -> CliResult<i32> {
    let mut cfg = load_config(a.config.as_deref(), a.seed)?;
    if a.warm_start {
        cfg.tracker.warm_start = true;
    }
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).map_err(anyhow::Error::from)?);
        return Ok(0);
    }
    let frames = read_frames(&a.seq).with_context(|| format!("reading frames from {}", a.seq.display()))?;
    let first = frames.first().ok_or_else(|| anyhow!("no frames in {}", a.seq.display()))?;
    let size = (first.width(), first.height());
    let initial = match (&a.indicator, a.init_from_gt) {
        (Some(p), _) => read_indicators(p).with_context(|| format!("reading indicators from {}", p.display()))?,
        (None, Some(kind)) => indicators_from_gt(&load_jsonl(a.seq.join("gt.jsonl"))?, kind, size)?,
        (None, None) => return Err(CliError::Config("track needs --indicator or --init-from-gt".into())),
    };
    let vocab = a.vocab.as_ref().map(VocabTable::load).transpose()?;
    let run = track_sequence(&frames, &initial, &cfg, vocab.as_ref())?;
    let records = run.records();
    match &a.out {
        Some(p) => {
            let file = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_jsonl(std::io::BufWriter::new(file), &records)?;
        }
        None => write_jsonl(std::io::stdout().lock(), &records)?,
    }
    if let Some(p) = &a.telemetry {
        std::fs::write(p, serde_json::to_string_pretty(&run.telemetry).map_err(anyhow::Error::from)?)?;
    }
    let t = &run.telemetry;
    eprintln!(
        "tracked {} targets over {} frames: {} network evals, {} finetune steps, {:.2} s",
        run.tracklets.len(),
        run.frames(),
        t.network_evals,
        t.finetune_steps,
        t.total_seconds()
    );
    Ok(0)
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Config(format!("--size expects WxH, got {s:?}"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn size_for(gt: &Path, size: Option<&str>) -> CliResult<(usize, usize)> {
    if let Some(s) = size {
        return parse_size(s);
    }
    let dir = gt.parent().unwrap_or_else(|| Path::new("."));
    let m = read_manifest(dir).map_err(|e| {
        CliError::Config(format!("no --size and no readable manifest.json beside {}: {e}", gt.display()))
    })?;
    Ok((m.width, m.height))
}

#[derive(Debug, Serialize)]
pub struct SequenceReport {
    pub gt: String,
    pub pred: String,
    pub report: EvalReport,
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    gt: &[PathBuf],
    pred: &[PathBuf],
    metrics: &[String],
    thresholds: Option<Vec<f64>>,
    size: Option<&str>,
    include_first: bool,
    out: Option<&Path>,
) -> CliResult<i32> {
    if gt.len() != pred.len() {
        return Err(CliError::Config(format!("{} --gt files but {} --pred files", gt.len(), pred.len())));
    }
    let kinds = metrics
        .iter()
        .map(|m| m.parse::<MetricKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut jobs = Vec::with_capacity(gt.len());
    for (g, p) in gt.iter().zip(pred) {
        let mut opts = EvalOptions::new(kinds.clone(), size_for(g, size)?);
        if let Some(t) = &thresholds {
            opts.thresholds = t.clone();
        }
        opts.skip_first = !include_first;
        jobs.push((g, p, opts));
    }
    let reports: Vec<SequenceReport> = jobs
        .par_iter()
        .map(|(g, p, opts)| {
            let truth = load_jsonl(g).with_context(|| format!("reading {}", g.display()))?;
            let preds = load_jsonl(p).with_context(|| format!("reading {}", p.display()))?;
            let report = evaluate(&truth, &preds, opts)?;
            Ok(SequenceReport { gt: g.display().to_string(), pred: p.display().to_string(), report })
        })
        .collect::<anyhow::Result<_>>()?;
    let text = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0].report)
    } else {
        serde_json::to_string_pretty(&reports)
    }
    .map_err(anyhow::Error::from)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(0)
}
