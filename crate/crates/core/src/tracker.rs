//! Online auto-regressive tracking: for every consecutive frame pair,
//! build the condition from the current indicators, finetune the denoiser
//! on the pair, run the temporal process with attention capture, and read
//! the next indicators out of the fused attention.

use std::time::Instant;

use crate::annotations::{rle_encode, FrameRecord, TargetRecord};
use crate::codec::{Codec, Frame, Latent, Mask};
use crate::conditioning::{
    pack_targets, split_attention, BoxRegion, ConditionTokens, Conditioner, Indicator, LatentGrid, Point, VocabTable,
};
use crate::config::{RunConfig, TauSource};
use crate::denoiser::Denoiser;
use crate::engine::{finetune, run_process, FinetuneConfig, NoiseContext};
use crate::error::{Error, Result};
use crate::extraction::{accumulate, argmax_point, fuse, map_to_indicator, segment_of, FusedSaliency, OutputKind};
use crate::schedule::NoiseSchedule;

/// Indicator and per-channel confidence / lost flags at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub indicator: Indicator,
    pub conf: Vec<f64>,
    pub lost: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: usize,
    pub kind: &'static str,
    pub entries: Vec<TrackEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct Telemetry {
    pub pairs: usize,
    pub network_evals: usize,
    pub finetune_steps: usize,
    pub pair_seconds: Vec<f64>,
}

impl Telemetry {
    pub fn total_seconds(&self) -> f64 {
        self.pair_seconds.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub config: RunConfig,
    pub tracklets: Vec<Tracklet>,
    pub telemetry: Telemetry,
}

impl TrackRun {
    pub fn frames(&self) -> usize {
        self.tracklets.first().map_or(0, |t| t.entries.len())
    }

    /// One record per frame in the tracker output schema.
    pub fn records(&self) -> Vec<FrameRecord> {
        (0..self.frames())
            .map(|f| FrameRecord {
                frame: f,
                targets: self.tracklets.iter().map(|tr| target_record(tr, &tr.entries[f])).collect(),
            })
            .collect()
    }
}

fn target_record(tr: &Tracklet, e: &TrackEntry) -> TargetRecord {
    let mut r = TargetRecord::new(tr.id);
    r.kind = Some(tr.kind.to_string());
    match &e.indicator {
        Indicator::Point(p) => r.point = Some([p.x, p.y]),
        Indicator::Pose(ps) => r.points = Some(ps.iter().map(|p| [p.x, p.y]).collect()),
        Indicator::Box(b) => r.bbox = Some(b.as_array()),
        Indicator::Segment(m) => r.rle = Some(rle_encode(m)),
        Indicator::Text(_) => {}
    }
    r.conf = Some(e.conf.iter().cloned().fold(f64::INFINITY, f64::min));
    r.lost = Some(e.lost.iter().any(|&l| l));
    r
}

/// SplitMix64 of `seed`, `t` and `salt`.
pub fn derive_seed(seed: u64, t: usize, salt: u64) -> u64 {
    let mut z = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A 4-connected region of a thresholded saliency map.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub bbox: [usize; 4],
    pub mass: f64,
    pub area: usize,
}

/// 4-connected components of `mask`, heaviest (by saliency mass) first;
/// ties keep scan order.
pub fn components(mask: &Mask, weights: &[f64]) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut c = Component { bbox: [w, h, 0, 0], mass: 0.0, area: 0 };
        label[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            c.bbox = [c.bbox[0].min(x), c.bbox[1].min(y), c.bbox[2].max(x + 1), c.bbox[3].max(y + 1)];
            c.mass += weights[p];
            c.area += 1;
            let mut visit = |q: usize| {
                if mask.bits()[q] && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        out.push(c);
    }
    out.sort_by(|a, b| b.mass.partial_cmp(&a.mass).unwrap_or(std::cmp::Ordering::Equal));
    out
}

fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn indicator_center(ind: &Indicator) -> Option<Point> {
    match ind {
        Indicator::Box(b) => Some(Point { x: (b.x_min + b.x_max - 1.0) / 2.0, y: (b.y_min + b.y_max - 1.0) / 2.0 }),
        Indicator::Segment(m) => {
            m.bounding_box().map(|b| Point { x: (b[0] + b[2] - 1) as f64 / 2.0, y: (b[1] + b[3] - 1) as f64 / 2.0 })
        }
        _ => None,
    }
}

/// Output channels of one indicator: a pose has one per keypoint.
fn channel_kinds(ind: &Indicator) -> Vec<OutputKind> {
    match ind {
        Indicator::Point(_) => vec![OutputKind::Point],
        Indicator::Pose(ps) => vec![OutputKind::Point; ps.len()],
        Indicator::Box(_) | Indicator::Text(_) => vec![OutputKind::Box],
        Indicator::Segment(_) => vec![OutputKind::Segment],
    }
}

/// Condition tokens for spatial indicators, one range per channel plus an
/// optional trailing background range. A region too small to cover any
/// cell centre falls back to a Gaussian at its centre.
pub fn build_tau(
    cond: &Conditioner,
    indicators: &[Indicator],
    features: &Latent,
    background: bool,
) -> Result<ConditionTokens> {
    let mut parts = Vec::new();
    let mut fg = vec![0.0f64; cond.grid.cells()];
    for ind in indicators {
        let weights = match cond.target_weights(ind) {
            Err(Error::Degenerate(_)) => match indicator_center(ind) {
                Some(c) => vec![cond.grid.gaussian_heatmap(c, cond.sigma)?],
                None => return Err(Error::Degenerate(format!("{} indicator is empty", ind.kind()))),
            },
            other => other?,
        };
        for w in weights {
            for (f, v) in fg.iter_mut().zip(&w) {
                *f = f.max(*v);
            }
            parts.push(cond.project(&crate::conditioning::pool(features, &w)?)?);
        }
    }
    if background {
        let mut bg: Vec<f64> = fg.iter().map(|f| 1.0 - f).collect();
        if bg.iter().sum::<f64>() <= 1e-12 {
            bg = vec![1.0; cond.grid.cells()];
        }
        parts.push(cond.project(&crate::conditioning::pool(features, &bg)?)?);
    }
    pack_targets(&parts)
}

/// Shared per-sequence state: schedule, geometry, initial model, encoder.
struct Pipeline<'a> {
    cfg: &'a RunConfig,
    schedule: NoiseSchedule,
    codec: Codec,
    grid: LatentGrid,
    base: Denoiser,
    cond: Conditioner,
}

impl<'a> Pipeline<'a> {
    fn new(cfg: &'a RunConfig, first: &Frame) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let codec = Codec::new(cfg.model.patch)?;
        let z = codec.encode(first)?;
        let grid = LatentGrid { height: z.height(), width: z.width(), patch: cfg.model.patch };
        let base = Denoiser::init(cfg.denoiser_config())?;
        let cond = Conditioner::new(grid, base.input_projection().clone(), cfg.conditioning.sigma)?;
        Ok(Self { cfg, schedule, codec, grid, base, cond })
    }

    fn encode_all(&self, frames: &[Frame]) -> Result<Vec<Latent>> {
        frames.iter().map(|f| self.codec.encode(f)).collect()
    }

    /// Fused saliency of every condition range for the pair `t -> t + 1`.
    fn pair_saliency(
        &self,
        model: &mut Denoiser,
        t: usize,
        z0: &Latent,
        z1: &Latent,
        tau: &ConditionTokens,
        adapt: bool,
        telemetry: &mut Telemetry,
    ) -> Result<Vec<FusedSaliency>> {
        let e = &self.cfg.engine;
        let noise = NoiseContext { seed: derive_seed(self.cfg.seed, t, 1) };
        if adapt && e.finetune_steps > 0 {
            let ft = FinetuneConfig {
                process: e.process,
                operator: e.operator,
                steps: e.finetune_steps,
                lr: e.lr,
                seed: derive_seed(self.cfg.seed, t, 2),
            };
            finetune(model, z0.tokens(), z1.tokens(), &tau.tokens, &self.schedule, &noise, &ft)?;
            telemetry.finetune_steps += e.finetune_steps;
        }
        let trace = run_process(
            e.process,
            z0.tokens(),
            z1.tokens(),
            &tau.tokens,
            &self.schedule,
            e.operator,
            model,
            true,
            &noise,
            e.inversion,
        )?;
        telemetry.network_evals += trace.evals;
        let x = &self.cfg.extraction;
        let (s, cross) = accumulate(&trace.records, self.cfg.model.layers, self.schedule.steps(), x.window_fraction)?;
        split_attention(&cross, &tau.ranges)?.iter().map(|v| fuse(&s, v, &self.grid, x.mode, x.beta)).collect()
    }

    fn text_tau(&self, ids: &[usize], vocab: &VocabTable) -> Result<ConditionTokens> {
        if vocab.dim() != self.cfg.model.embed_dim {
            return Err(Error::Shape(format!(
                "vocabulary width {} vs embed_dim {}",
                vocab.dim(),
                self.cfg.model.embed_dim
            )));
        }
        pack_targets(&[vocab.lookup(ids)?, vocab.lookup(&[0])?])
    }

    fn text_boxes(&self, s: &FusedSaliency, keep: usize) -> Result<Vec<BoxRegion>> {
        let (mn, mx) = s.raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        // Propagation compresses contrast to ~1e-10 relative at init; rounding
        // in the propagated sums stays near 1e-14.
        if !(mx > 0.0) || mx - mn <= 1e-12 * mx {
            return Err(Error::BootstrapFailed("text saliency is flat".into()));
        }
        let mask = segment_of(s, self.cfg.extraction.seg_threshold)?;
        let comps = components(&mask, &s.values);
        if comps.is_empty() {
            return Err(Error::BootstrapFailed("no component above threshold".into()));
        }
        Ok(comps.iter().take(keep).map(|c| BoxRegion::from_array(c.bbox.map(|v| v as f64))).collect())
    }
}

/// Box proposals for a text prompt from one extraction pass on the first
/// pair, heaviest component first, at most `tracker.text_targets` of them.
pub fn bootstrap_from_text(
    first: &Frame,
    second: &Frame,
    ids: &[usize],
    vocab: &VocabTable,
    cfg: &RunConfig,
) -> Result<Vec<BoxRegion>> {
    let p = Pipeline::new(cfg, first)?;
    let z = p.encode_all(&[first.clone(), second.clone()])?;
    let tau = p.text_tau(ids, vocab)?;
    let mut model = p.base.clone();
    let sal = p.pair_saliency(&mut model, 0, &z[0], &z[1], &tau, false, &mut Telemetry::default())?;
    p.text_boxes(&sal[0], cfg.tracker.text_targets)
}

fn center_of(b: &BoxRegion) -> (f64, f64) {
    ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

/// Greedy nearest-centre assignment of proposals to previous boxes.
fn assign_boxes(prev: &[BoxRegion], proposals: &[BoxRegion]) -> Vec<Option<BoxRegion>> {
    let mut pairs = Vec::new();
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in proposals.iter().enumerate() {
            let (ax, ay) = center_of(a);
            let (bx, by) = center_of(b);
            let overlap = box_iou(&a.as_array(), &b.as_array());
            pairs.push((-overlap, (ax - bx).hypot(ay - by), i, j));
        }
    }
    pairs.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![None; prev.len()];
    let mut used = vec![false; proposals.len()];
    for (_, _, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(proposals[j]);
            used[j] = true;
        }
    }
    out
}

/// Tracks `initial` indicators through `frames`. Text indicators need a
/// vocabulary and are bootstrapped into box targets.
pub fn track_sequence(
    frames: &[Frame],
    initial: &[Indicator],
    cfg: &RunConfig,
    vocab: Option<&VocabTable>,
) -> Result<TrackRun> {
    if frames.len() < 2 {
        return Err(Error::Contract(format!("tracking needs at least 2 frames, got {}", frames.len())));
    }
    if initial.is_empty() {
        return Err(Error::Contract("tracking needs at least one initial indicator".into()));
    }
    let p = Pipeline::new(cfg, &frames[0])?;
    let (fw, fh) = (frames[0].width(), frames[0].height());
    for f in frames {
        if (f.width(), f.height()) != (fw, fh) {
            return Err(Error::Shape("frames differ in size".into()));
        }
    }
    for ind in initial {
        ind.validate(fw, fh)?;
    }
    let latents = p.encode_all(frames)?;
    if let Some(Indicator::Text(ids)) = initial.iter().find(|i| matches!(i, Indicator::Text(_))) {
        if initial.len() != 1 {
            return Err(Error::Contract("a text prompt must be the only indicator".into()));
        }
        let vocab = vocab.ok_or_else(|| Error::Contract("text indicator needs a vocabulary table".into()))?;
        return track_text(&p, &latents, ids, vocab);
    }
    track_spatial(&p, &latents, initial)
}

fn track_spatial(p: &Pipeline, latents: &[Latent], initial: &[Indicator]) -> Result<TrackRun> {
    let cfg = p.cfg;
    let kinds: Vec<Vec<OutputKind>> = initial.iter().map(channel_kinds).collect();
    let mut tracklets: Vec<Tracklet> = initial
        .iter()
        .enumerate()
        .map(|(id, ind)| Tracklet {
            id,
            kind: ind.kind(),
            entries: vec![TrackEntry {
                indicator: ind.clone(),
                conf: vec![1.0; channel_kinds(ind).len()],
                lost: vec![false; channel_kinds(ind).len()],
            }],
        })
        .collect();
    let mut current: Vec<Indicator> = initial.to_vec();
    let background = cfg.conditioning.background_token;
    let tau0 = build_tau(&p.cond, &current, &latents[0], background)?;
    let mut telemetry = Telemetry::default();
    let mut model = p.base.clone();
    for t in 0..latents.len() - 1 {
        let started = Instant::now();
        let tau = match cfg.tracker.tau_source {
            TauSource::Current => build_tau(&p.cond, &current, &latents[t], background)?,
            TauSource::Initial => tau0.clone(),
        };
        if !cfg.tracker.warm_start {
            model = p.base.clone();
        }
        let sal = p.pair_saliency(&mut model, t, &latents[t], &latents[t + 1], &tau, true, &mut telemetry)?;
        let mut channel = 0;
        for (i, ind) in current.iter_mut().enumerate() {
            let mut conf = Vec::with_capacity(kinds[i].len());
            let mut lost = Vec::with_capacity(kinds[i].len());
            match ind {
                Indicator::Pose(points) => {
                    for pt in points.iter_mut() {
                        let s = &sal[channel];
                        channel += 1;
                        conf.push(s.confidence);
                        match argmax_point(s) {
                            Ok(q) => {
                                *pt = q;
                                lost.push(false);
                            }
                            Err(Error::LostTarget) => lost.push(true),
                            Err(e) => return Err(e),
                        }
                    }
                }
                _ => {
                    let s = &sal[channel];
                    channel += 1;
                    conf.push(s.confidence);
                    match map_to_indicator(s, kinds[i][0], cfg.extraction.seg_threshold) {
                        Ok(next) => {
                            *ind = next;
                            lost.push(false);
                        }
                        Err(Error::LostTarget) => lost.push(true),
                        Err(e) => return Err(e),
                    }
                }
            }
            tracklets[i].entries.push(TrackEntry { indicator: ind.clone(), conf, lost });
        }
        telemetry.pairs += 1;
        telemetry.pair_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrackRun { config: cfg.clone(), tracklets, telemetry })
}

fn track_text(p: &Pipeline, latents: &[Latent], ids: &[usize], vocab: &VocabTable) -> Result<TrackRun> {
    let cfg = p.cfg;
    let tau = p.text_tau(ids, vocab)?;
    let mut telemetry = Telemetry::default();
    let mut probe = p.base.clone();
    let first = p.pair_saliency(&mut probe, 0, &latents[0], &latents[1], &tau, false, &mut Telemetry::default())?;
    let mut current = p.text_boxes(&first[0], cfg.tracker.text_targets)?;
    let mut tracklets: Vec<Tracklet> = current
        .iter()
        .enumerate()
        .map(|(id, b)| Tracklet {
            id,
            kind: "box",
            entries: vec![TrackEntry {
                indicator: Indicator::Box(*b),
                conf: vec![first[0].confidence],
                lost: vec![false],
            }],
        })
        .collect();
    let mut model = p.base.clone();
    for t in 0..latents.len() - 1 {
        let started = Instant::now();
        if !cfg.tracker.warm_start {
            model = p.base.clone();
        }
        let sal = p.pair_saliency(&mut model, t, &latents[t], &latents[t + 1], &tau, true, &mut telemetry)?;
        let proposals = match p.text_boxes(&sal[0], current.len()) {
            Ok(b) => b,
            Err(Error::BootstrapFailed(_)) | Err(Error::LostTarget) => Vec::new(),
            Err(e) => return Err(e),
        };
        let assigned = assign_boxes(&current, &proposals);
        for (i, a) in assigned.into_iter().enumerate() {
            let lost = a.is_none();
            if let Some(b) = a {
                current[i] = b;
            }
            tracklets[i].entries.push(TrackEntry {
                indicator: Indicator::Box(current[i]),
                conf: vec![sal[0].confidence],
                lost: vec![lost],
            });
        }
        telemetry.pairs += 1;
        telemetry.pair_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrackRun { config: cfg.clone(), tracklets, telemetry })
}
