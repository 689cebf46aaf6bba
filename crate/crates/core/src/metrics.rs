//! Tracking metrics: point accuracy under pixel thresholds, box IoU, mask
//! Jaccard, boundary F-measure, and identity consistency.

use serde::{Deserialize, Serialize};

use crate::annotations::{FrameRecord, TargetRecord};
use crate::codec::Mask;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAccuracy {
    pub thresholds: Vec<f64>,
    /// Fraction of frames with error strictly below each threshold.
    pub rates: Vec<f64>,
    pub average: f64,
    pub mean_error: f64,
}

pub fn point_accuracy(pred: &[[f64; 2]], gt: &[[f64; 2]], thresholds: &[f64]) -> Result<PointAccuracy> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("{} predictions for {} ground-truth points", pred.len(), gt.len())));
    }
    if pred.is_empty() || thresholds.is_empty() {
        return Err(Error::UndefinedMetric("point accuracy over no frames or thresholds".into()));
    }
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])).collect();
    let n = errors.len() as f64;
    let rates: Vec<f64> = thresholds.iter().map(|&d| errors.iter().filter(|&&e| e < d).count() as f64 / n).collect();
    Ok(PointAccuracy {
        thresholds: thresholds.to_vec(),
        average: rates.iter().sum::<f64>() / rates.len() as f64,
        rates,
        mean_error: errors.iter().sum::<f64>() / n,
    })
}

/// IoU of `[x_min, y_min, x_max, y_max]` boxes; 0 when disjoint.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
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

pub fn box_iou_mean(pred: &[[f64; 4]], gt: &[[f64; 4]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("{} predicted boxes for {} ground-truth boxes", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("box IoU over no frames".into()));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| box_iou(p, g)).sum::<f64>() / pred.len() as f64)
}

fn same_size(a: &Mask, b: &Mask) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Contract(format!(
            "masks {}x{} and {}x{} differ in size",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mask_jaccard(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_size(pred, gt)?;
    if gt.count() == 0 {
        return Err(Error::UndefinedMetric("empty ground-truth mask".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(inter as f64 / union as f64)
}

/// Mask pixels with at least one 4-neighbour outside the mask (or the frame).
pub fn boundary(m: &Mask) -> Mask {
    let (w, h) = (m.width(), m.height());
    Mask::from_fn(w, h, |x, y| {
        m.get(x, y)
            && !(x > 0
                && x + 1 < w
                && y > 0
                && y + 1 < h
                && m.get(x - 1, y)
                && m.get(x + 1, y)
                && m.get(x, y - 1)
                && m.get(x, y + 1))
    })
}

fn near(b: &Mask, x: usize, y: usize, tol: usize) -> bool {
    let (x0, x1) = (x.saturating_sub(tol), (x + tol).min(b.width() - 1));
    let (y0, y1) = (y.saturating_sub(tol), (y + tol).min(b.height() - 1));
    (y0..=y1).any(|yy| (x0..=x1).any(|xx| b.get(xx, yy)))
}

fn matched_fraction(from: &Mask, to: &Mask, tol: usize) -> f64 {
    let total = from.count();
    if total == 0 {
        return 0.0;
    }
    let mut hit = 0;
    for y in 0..from.height() {
        for x in 0..from.width() {
            if from.get(x, y) && near(to, x, y, tol) {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

/// F-measure of boundary pixels matched within Chebyshev distance `tol`.
pub fn boundary_f(pred: &Mask, gt: &Mask, tol: usize) -> Result<f64> {
    same_size(pred, gt)?;
    if gt.count() == 0 {
        return Err(Error::UndefinedMetric("empty ground-truth mask".into()));
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let precision = matched_fraction(&bp, &bg, tol);
    let recall = matched_fraction(&bg, &bp, tol);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn jf(pred: &Mask, gt: &Mask, tol: usize) -> Result<f64> {
    Ok((mask_jaccard(pred, gt)? + boundary_f(pred, gt, tol)?) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdConsistency {
    pub switches: usize,
    /// Switches per matched prediction-frame.
    pub rate: f64,
    pub matched: usize,
}

/// Similarity of a prediction to a ground-truth target, `None` below the gate.
fn similarity(
    p: &TargetRecord,
    g: &TargetRecord,
    size: (usize, usize),
    iou_gate: f64,
    point_gate: f64,
) -> Result<Option<f64>> {
    if let (Some(pr), Some(gr)) = (&p.rle, &g.rle) {
        let (pm, gm) =
            (crate::annotations::rle_decode(pr, size.0, size.1)?, crate::annotations::rle_decode(gr, size.0, size.1)?);
        let j = if gm.count() == 0 { 0.0 } else { mask_jaccard(&pm, &gm)? };
        return Ok((j >= iou_gate).then_some(j));
    }
    if let (Some(pb), Some(gb)) = (&p.bbox, &g.bbox) {
        let v = box_iou(pb, gb);
        return Ok((v >= iou_gate).then_some(v));
    }
    if let (Some(pp), Some(gp)) = (&p.point, &g.point) {
        let d = (pp[0] - gp[0]).hypot(pp[1] - gp[1]);
        return Ok((d <= point_gate).then_some(1.0 / (1.0 + d)));
    }
    Ok(None)
}

/// Greedy per-frame matching; counts frames where a predicted id's matched
/// ground-truth id differs from its previous match.
pub fn id_consistency(
    pred: &[FrameRecord],
    gt: &[FrameRecord],
    size: (usize, usize),
    iou_gate: f64,
    point_gate: f64,
) -> Result<IdConsistency> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("{} predicted frames for {} ground-truth frames", pred.len(), gt.len())));
    }
    let mut last: std::collections::BTreeMap<usize, usize> = Default::default();
    let (mut switches, mut matched) = (0, 0);
    for (pf, gf) in pred.iter().zip(gt) {
        let mut cand = Vec::new();
        for p in &pf.targets {
            for g in &gf.targets {
                if let Some(s) = similarity(p, g, size, iou_gate, point_gate)? {
                    cand.push((s, p.id, g.id));
                }
            }
        }
        cand.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        let mut used_p = std::collections::BTreeSet::new();
        let mut used_g = std::collections::BTreeSet::new();
        for (_, pid, gid) in cand {
            if used_p.contains(&pid) || used_g.contains(&gid) {
                continue;
            }
            used_p.insert(pid);
            used_g.insert(gid);
            matched += 1;
            if let Some(prev) = last.insert(pid, gid) {
                if prev != gid {
                    switches += 1;
                }
            }
        }
    }
    let rate = if matched == 0 { 0.0 } else { switches as f64 / matched as f64 };
    Ok(IdConsistency { switches, rate, matched })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Point,
    Box,
    Mask,
    Jf,
    Id,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "point" => MetricKind::Point,
            "box" => MetricKind::Box,
            "mask" => MetricKind::Mask,
            "jf" => MetricKind::Jf,
            "id" => MetricKind::Id,
            _ => return Err(Error::Config(format!("unknown metric {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub metrics: Vec<MetricKind>,
    pub thresholds: Vec<f64>,
    pub boundary_tol: usize,
    pub iou_gate: f64,
    pub point_gate: f64,
    /// Leave out frame 0, where the tracker is given the ground truth.
    pub skip_first: bool,
    pub size: (usize, usize),
}

impl EvalOptions {
    pub fn new(metrics: Vec<MetricKind>, size: (usize, usize)) -> Self {
        Self {
            metrics,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            boundary_tol: 1,
            iou_gate: 0.5,
            point_gate: 8.0,
            skip_first: true,
            size,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub frame: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<PointAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<IdConsistency>,
    pub per_frame: Vec<FrameScores>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores `pred` against `gt`, pairing targets by id and frames by index.
pub fn evaluate(gt: &[FrameRecord], pred: &[FrameRecord], opts: &EvalOptions) -> Result<EvalReport> {
    if gt.len() != pred.len() {
        return Err(Error::Contract(format!("{} predicted frames for {} ground-truth frames", pred.len(), gt.len())));
    }
    let want = |m| opts.metrics.contains(&m);
    let start = usize::from(opts.skip_first && gt.len() > 1);
    let (mut pp, mut gp) = (Vec::new(), Vec::new());
    let (mut pb, mut gb) = (Vec::new(), Vec::new());
    let (mut js, mut fs) = (Vec::new(), Vec::new());
    let mut per_frame = Vec::new();
    for (g, p) in gt.iter().zip(pred).skip(start) {
        if g.frame != p.frame {
            return Err(Error::Contract(format!("frame {} paired with frame {}", g.frame, p.frame)));
        }
        let mut scores = FrameScores { frame: g.frame, ..Default::default() };
        let (mut fe, mut fb, mut fj, mut ff) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for gt_t in &g.targets {
            let Some(pr) = p.target(gt_t.id) else { continue };
            if let (Some(a), Some(b)) = (pr.point, gt_t.point) {
                pp.push(a);
                gp.push(b);
                fe.push((a[0] - b[0]).hypot(a[1] - b[1]));
            }
            if let (Some(a), Some(b)) = (pr.bbox, gt_t.bbox) {
                pb.push(a);
                gb.push(b);
                fb.push(box_iou(&a, &b));
            }
            if want(MetricKind::Mask) || want(MetricKind::Jf) {
                let (w, h) = opts.size;
                if let (Some(a), Some(b)) = (pr.mask(w, h)?, gt_t.mask(w, h)?) {
                    if b.count() > 0 {
                        let j = mask_jaccard(&a, &b)?;
                        let f = boundary_f(&a, &b, opts.boundary_tol)?;
                        js.push(j);
                        fs.push(f);
                        fj.push(j);
                        ff.push(f);
                    }
                }
            }
        }
        scores.point_error = mean(&fe);
        scores.box_iou = mean(&fb);
        scores.j = mean(&fj);
        scores.f = mean(&ff);
        per_frame.push(scores);
    }
    let mut report = EvalReport { frames: per_frame.len(), per_frame, ..Default::default() };
    if want(MetricKind::Point) {
        report.point = Some(point_accuracy(&pp, &gp, &opts.thresholds)?);
    }
    if want(MetricKind::Box) {
        report.box_iou = Some(box_iou_mean(&pb, &gb)?);
    }
    if want(MetricKind::Mask) || want(MetricKind::Jf) {
        let (j, f) = match (mean(&js), mean(&fs)) {
            (Some(j), Some(f)) => (j, f),
            _ => return Err(Error::UndefinedMetric("no frames with both predicted and ground-truth masks".into())),
        };
        report.mask_j = Some(j);
        report.boundary_f = Some(f);
        if want(MetricKind::Jf) {
            report.jf = Some((j + f) / 2.0);
        }
    }
    if want(MetricKind::Id) {
        report.id = Some(id_consistency(&pred[start..], &gt[start..], opts.size, opts.iou_gate, opts.point_gate)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_threshold_arithmetic() {
        let gt = vec![[10.0, 10.0]; 4];
        let pred = vec![[13.0, 10.0]; 4];
        let a = point_accuracy(&pred, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(a.rates, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((a.average - 0.6).abs() < 1e-15);
        let same = point_accuracy(&gt, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(same.average, 1.0);
        assert!(point_accuracy(&gt[..1], &gt, &DEFAULT_THRESHOLDS).is_err());
    }

    #[test]
    fn box_iou_cases() {
        let a = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&a, &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert!((box_iou(&a, &[0.5, 0.0, 1.5, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mask_metrics() {
        let sq =
            |lo: usize, hi: usize| Mask::from_fn(12, 12, move |x, y| (lo..hi).contains(&x) && (lo..hi).contains(&y));
        let gt = sq(3, 8);
        assert_eq!(mask_jaccard(&gt, &gt).unwrap(), 1.0);
        assert_eq!(boundary_f(&gt, &gt, 1).unwrap(), 1.0);
        let far = sq(9, 11);
        assert_eq!(mask_jaccard(&far, &gt).unwrap(), 0.0);
        assert_eq!(boundary_f(&far, &gt, 1).unwrap(), 0.0);
        assert!(matches!(mask_jaccard(&gt, &Mask::empty(12, 12)), Err(Error::UndefinedMetric(_))));
        let j = jf(&gt, &gt, 1).unwrap();
        assert_eq!(j, 1.0);
    }

    #[test]
    fn dilated_mask_keeps_full_boundary_f() {
        let gt = Mask::from_fn(20, 20, |x, y| ((x as f64 - 9.5).powi(2) + (y as f64 - 9.5).powi(2)) <= 25.0);
        let dil = Mask::from_fn(20, 20, |x, y| {
            gt.get(x, y)
                || (x > 0 && gt.get(x - 1, y))
                || (x + 1 < 20 && gt.get(x + 1, y))
                || (y > 0 && gt.get(x, y - 1))
                || (y + 1 < 20 && gt.get(x, y + 1))
        });
        assert!(mask_jaccard(&dil, &gt).unwrap() < 1.0);
        assert_eq!(boundary_f(&dil, &gt, 1).unwrap(), 1.0);
    }

    fn frame(f: usize, boxes: &[(usize, [f64; 4])]) -> FrameRecord {
        FrameRecord {
            frame: f,
            targets: boxes
                .iter()
                .map(|(id, b)| {
                    let mut t = TargetRecord::new(*id);
                    t.bbox = Some(*b);
                    t
                })
                .collect(),
        }
    }

    #[test]
    fn id_switches() {
        let a = [0.0, 0.0, 4.0, 4.0];
        let b = [10.0, 10.0, 14.0, 14.0];
        let gt: Vec<_> = (0..6).map(|f| frame(f, &[(0, a), (1, b)])).collect();
        let perfect = id_consistency(&gt, &gt, (16, 16), 0.5, 8.0).unwrap();
        assert_eq!(perfect.switches, 0);
        let swapped: Vec<_> =
            (0..6).map(|f| if f < 3 { frame(f, &[(0, a), (1, b)]) } else { frame(f, &[(0, b), (1, a)]) }).collect();
        assert!(id_consistency(&swapped, &gt, (16, 16), 0.5, 8.0).unwrap().switches >= 2);
    }
}
