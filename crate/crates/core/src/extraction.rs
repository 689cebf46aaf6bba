//! Correspondence extraction from captured attention maps and mapping of
//! the fused saliency to point, box and segment outputs.

use serde::{Deserialize, Serialize};

use crate::codec::Mask;
use crate::conditioning::{BoxRegion, Indicator, LatentGrid, Point};
use crate::denoiser::AttentionRecord;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// `(A_S)^beta` applied to the per-target cross-attention vector.
    Propagate,
    /// Column means of `A_S`, raised to `beta`, times the cross vector.
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    pub mode: FuseMode,
    pub beta: u32,
    pub window_fraction: f64,
    pub seg_threshold: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { mode: FuseMode::Propagate, beta: 4, window_fraction: 0.8, seg_threshold: 0.5 }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta == 0 {
            return Err(Error::Config("extraction beta must be >= 1".into()));
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return Err(Error::Config(format!("window_fraction {} outside (0, 1]", self.window_fraction)));
        }
        if !(0.0..=1.0).contains(&self.seg_threshold) {
            return Err(Error::Config(format!("seg_threshold {} outside [0, 1]", self.seg_threshold)));
        }
        Ok(())
    }
}

/// Number of steps in the averaging window, `ceil(fraction * T)`.
pub fn window_len(t: usize, fraction: f64) -> usize {
    ((fraction * t as f64 - 1e-9).ceil().max(1.0) as usize).min(t)
}

/// Means of the self and cross maps of all layers over steps `1..=window`.
pub fn accumulate(records: &[AttentionRecord], layers: usize, t: usize, fraction: f64) -> Result<(Tensor, Tensor)> {
    let window = window_len(t, fraction);
    let used: Vec<&AttentionRecord> = records.iter().filter(|r| r.step >= 1 && r.step <= window).collect();
    if used.is_empty() {
        return Err(Error::Contract("no attention records inside the step window".into()));
    }
    if used.len() != layers * window {
        return Err(Error::Contract(format!(
            "window of {window} steps x {layers} layers needs {} records, got {}",
            layers * window,
            used.len()
        )));
    }
    let mut s = Tensor::zeros(used[0].self_map.shape());
    let mut x = Tensor::zeros(used[0].cross_map.shape());
    for r in &used {
        s = s.add(&r.self_map)?;
        x = x.add(&r.cross_map)?;
    }
    let inv = 1.0 / used.len() as f64;
    Ok((s.scale(inv), x.scale(inv)))
}

/// Per-target saliency over the frame, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSaliency {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Maximum of the fused latent-grid map before normalization.
    pub confidence: f64,
    /// Fused latent-grid map before normalization.
    pub raw: Vec<f64>,
}

impl FusedSaliency {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!("{} values for {width}x{height}", values.len())));
        }
        let confidence = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self { width, height, raw: values.clone(), values, confidence })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Min-max normalization; a constant nonzero map becomes all ones.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let (mn, mx) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = mx - mn;
    if range <= 1e-15 * mx.abs().max(1e-300) {
        let fill = if mx > 0.0 { 1.0 } else { 0.0 };
        return vec![fill; v.len()];
    }
    v.iter().map(|x| (x - mn) / range).collect()
}

/// Bilinear upsampling of a cell map to pixels, cell centres at `i p + (p - 1) / 2`.
pub fn upsample(v: &[f64], grid: &LatentGrid) -> Vec<f64> {
    let (fw, fh) = grid.frame_size();
    let p = grid.patch as f64;
    let off = (p - 1.0) / 2.0;
    let axis = |pix: usize, cells: usize| {
        let c = ((pix as f64 - off) / p).clamp(0.0, (cells - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(cells - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = Vec::with_capacity(fw * fh);
    for y in 0..fh {
        let (r0, r1, fy) = axis(y, grid.height);
        for x in 0..fw {
            let (c0, c1, fx) = axis(x, grid.width);
            let at = |r: usize, c: usize| v[r * grid.width + c];
            let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
            let bot = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Fuses the averaged self map with one target's cross-attention vector.
pub fn fuse(self_map: &Tensor, cross: &[f64], grid: &LatentGrid, mode: FuseMode, beta: u32) -> Result<FusedSaliency> {
    let (n, n2) = self_map.dims2()?;
    if n != n2 || n != cross.len() || n != grid.cells() {
        return Err(Error::Contract(format!(
            "self map {n}x{n2}, cross vector {}, grid {} cells",
            cross.len(),
            grid.cells()
        )));
    }
    if beta == 0 {
        return Err(Error::Contract("beta must be >= 1".into()));
    }
    let raw = match mode {
        FuseMode::Propagate => {
            let mut v = Tensor::new(vec![n, 1], cross.to_vec())?;
            for _ in 0..beta {
                v = self_map.matmul(&v)?;
            }
            v.into_data()
        }
        FuseMode::Elementwise => (0..n)
            .map(|j| {
                let col = (0..n).map(|i| self_map.at2(i, j)).sum::<f64>() / n as f64;
                col.powi(beta as i32) * cross[j]
            })
            .collect(),
    };
    let confidence = raw.iter().cloned().fold(0.0, f64::max);
    let (fw, fh) = grid.frame_size();
    Ok(FusedSaliency { width: fw, height: fh, values: upsample(&normalize(&raw), grid), confidence, raw })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Point,
    Box,
    Segment,
}

/// Pixels strictly above `threshold * max`.
pub fn segment_of(s: &FusedSaliency, threshold: f64) -> Result<Mask> {
    let mx = s.values.iter().cloned().fold(0.0, f64::max);
    if !(mx > 0.0) {
        return Err(Error::LostTarget);
    }
    let cut = threshold * mx;
    Mask::new(s.width, s.height, s.values.iter().map(|&v| v > cut).collect())
}

/// Argmax pixel, ties to the smallest row-major index.
pub fn argmax_point(s: &FusedSaliency) -> Result<Point> {
    let mut best = 0;
    for (i, &v) in s.values.iter().enumerate() {
        if v > s.values[best] {
            best = i;
        }
    }
    if !(s.values.get(best).copied().unwrap_or(0.0) > 0.0) {
        return Err(Error::LostTarget);
    }
    Ok(Point { x: (best % s.width) as f64, y: (best / s.width) as f64 })
}

pub fn map_to_indicator(s: &FusedSaliency, kind: OutputKind, seg_threshold: f64) -> Result<Indicator> {
    match kind {
        OutputKind::Point => Ok(Indicator::Point(argmax_point(s)?)),
        OutputKind::Segment => Ok(Indicator::Segment(segment_of(s, seg_threshold)?)),
        OutputKind::Box => {
            let b = segment_of(s, seg_threshold)?.bounding_box().ok_or(Error::LostTarget)?;
            Ok(Indicator::Box(BoxRegion::from_array(b.map(|v| v as f64))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const G2: LatentGrid = LatentGrid { height: 2, width: 2, patch: 1 };

    fn rec(layer: usize, step: usize, s: &Tensor, x: &Tensor) -> AttentionRecord {
        AttentionRecord { layer, step, self_map: s.clone(), cross_map: x.clone() }
    }

    #[test]
    fn window_lengths() {
        assert_eq!(window_len(50, 0.8), 40);
        assert_eq!(window_len(1, 0.8), 1);
        assert_eq!(window_len(7, 0.8), 6);
        assert_eq!(window_len(250, 0.8), 200);
        assert_eq!(window_len(10, 1.0), 10);
    }

    #[test]
    fn accumulate_means_layers_and_checks_coverage() {
        let a = Tensor::eye(2);
        let b = Tensor::full(&[2, 2], 0.5);
        let x = Tensor::ones(&[2, 1]);
        let recs = vec![rec(0, 1, &a, &x), rec(1, 1, &b, &x), rec(0, 2, &b, &x), rec(1, 2, &b, &x)];
        let (s, _) = accumulate(&recs, 2, 1, 1.0).unwrap();
        assert_eq!(s, a.add(&b).unwrap().scale(0.5));
        assert!(matches!(accumulate(&recs[..1], 2, 1, 1.0), Err(Error::Contract(_))));
        assert!(matches!(accumulate(&[], 2, 1, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_self_map_returns_normalized_cross() {
        let x = [0.1, 0.4, 0.2, 0.3];
        let f = fuse(&Tensor::eye(4), &x, &G2, FuseMode::Propagate, 3).unwrap();
        let want = normalize(&x);
        assert_eq!(f.values, want);
        assert_eq!(f.confidence, 0.4);
    }

    #[test]
    fn uniform_self_map_flattens() {
        let s = Tensor::full(&[4, 4], 0.25);
        let f = fuse(&s, &[0.9, 0.0, 0.05, 0.05], &G2, FuseMode::Propagate, 1).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matrix_power_matches_loop() {
        let s = Tensor::from_rows(&[
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.2, 0.5, 0.2, 0.1],
            vec![0.0, 0.3, 0.6, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
        ])
        .unwrap();
        let x = [0.6, 0.1, 0.2, 0.1];
        let f = fuse(&s, &x, &G2, FuseMode::Propagate, 2).unwrap();
        let mut s2 = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for l in 0..4 {
                    s2[i][j] += s.at2(i, l) * s.at2(l, j);
                }
            }
        }
        let raw: Vec<f64> = (0..4).map(|i| (0..4).map(|j| s2[i][j] * x[j]).sum()).collect();
        for (a, b) in f.raw.iter().zip(&raw) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn elementwise_mode() {
        let s = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let g = LatentGrid { height: 1, width: 2, patch: 1 };
        let f = fuse(&s, &[0.5, 0.5], &g, FuseMode::Elementwise, 2).unwrap();
        assert_eq!(f.raw, vec![0.5, 0.0]);
    }

    #[test]
    fn one_hot_mappings() {
        let mut v = vec![0.0; 12];
        v[7] = 1.0;
        let s = FusedSaliency::from_values(4, 3, v).unwrap();
        assert_eq!(map_to_indicator(&s, OutputKind::Point, 0.5).unwrap(), Indicator::Point(Point { x: 3.0, y: 1.0 }));
        let Indicator::Box(b) = map_to_indicator(&s, OutputKind::Box, 0.5).unwrap() else { panic!() };
        assert_eq!(b.as_array(), [3.0, 1.0, 4.0, 2.0]);
        let Indicator::Segment(m) = map_to_indicator(&s, OutputKind::Segment, 0.0).unwrap() else { panic!() };
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn uniform_saliency_selects_everything() {
        let s = FusedSaliency::from_values(3, 2, vec![0.7; 6]).unwrap();
        let Indicator::Box(b) = map_to_indicator(&s, OutputKind::Box, 0.5).unwrap() else { panic!() };
        assert_eq!(b.as_array(), [0.0, 0.0, 3.0, 2.0]);
        assert_eq!(argmax_point(&s).unwrap(), Point { x: 0.0, y: 0.0 });
    }

    #[test]
    fn zero_saliency_is_lost() {
        let s = FusedSaliency::from_values(2, 2, vec![0.0; 4]).unwrap();
        for k in [OutputKind::Point, OutputKind::Box, OutputKind::Segment] {
            assert!(matches!(map_to_indicator(&s, k, 0.5), Err(Error::LostTarget)));
        }
    }

    #[test]
    fn upsample_hits_cell_centres() {
        let g = LatentGrid { height: 2, width: 2, patch: 4 };
        let up = upsample(&[0.0, 1.0, 2.0, 3.0], &g);
        let at = |x: usize, y: usize| up[y * 8 + x];
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(7, 7), 3.0);
        assert!((at(1, 1) - 0.0).abs() < 1e-15);
        assert!((at(6, 1) - 1.0).abs() < 1e-15);
        assert!((at(4, 1) - (2.5 / 4.0)).abs() < 1e-15);
    }
}
