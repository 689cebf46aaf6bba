//! Indicator types, condition-token encoders, and multi-target packing.
//!
//! Coordinates are in pixels with pixel `i` centred at coordinate `i`.
//! Boxes are `[x_min, y_min, x_max, y_max]` with exclusive max, so the box
//! covers pixels `x_min ..x_max` and the continuous extent
//! `[x_min - 0.5, x_max - 0.5]`. Latent cell `(i, j)` is centred at
//! `(j p + (p - 1) / 2, i p + (p - 1) / 2)`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::{Latent, Mask};
use crate::error::{Error, Result};
use crate::numerics::{io, Tensor};

pub const DEFAULT_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoxRegion {
    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn from_array(b: [f64; 4]) -> Self {
        Self { x_min: b[0], y_min: b[1], x_max: b[2], y_max: b[3] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Indicator {
    Point(Point),
    Pose(Vec<Point>),
    Box(BoxRegion),
    Segment(Mask),
    Text(Vec<usize>),
}

impl Indicator {
    pub fn kind(&self) -> &'static str {
        match self {
            Indicator::Point(_) => "point",
            Indicator::Pose(_) => "pose",
            Indicator::Box(_) => "box",
            Indicator::Segment(_) => "segment",
            Indicator::Text(_) => "text",
        }
    }

    /// Checks the indicator against a `width x height` frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let (w, h) = (width as f64, height as f64);
        let point_ok = |p: &Point| p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0;
        match self {
            Indicator::Point(p) if !point_ok(p) => {
                Err(Error::Bounds(format!("point ({}, {}) outside {width}x{height}", p.x, p.y)))
            }
            Indicator::Pose(ps) if ps.is_empty() => Err(Error::Contract("pose has no points".into())),
            Indicator::Pose(ps) => match ps.iter().find(|p| !point_ok(p)) {
                Some(p) => Err(Error::Bounds(format!("keypoint ({}, {}) outside {width}x{height}", p.x, p.y))),
                None => Ok(()),
            },
            Indicator::Box(b) => {
                if !(b.x_min < b.x_max && b.y_min < b.y_max) {
                    Err(Error::Degenerate(format!("box {:?} has min >= max", b.as_array())))
                } else if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
                    Err(Error::Bounds(format!("box {:?} outside {width}x{height}", b.as_array())))
                } else {
                    Ok(())
                }
            }
            Indicator::Segment(m) if m.width() != width || m.height() != height => {
                Err(Error::Shape(format!("mask {}x{} vs frame {width}x{height}", m.width(), m.height())))
            }
            Indicator::Text(ids) if ids.is_empty() => Err(Error::Contract("text indicator has no ids".into())),
            _ => Ok(()),
        }
    }
}

/// JSON form of an indicator; segment masks are referenced by PGM path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum IndicatorSpec {
    Point { x: f64, y: f64 },
    Pose { points: Vec<[f64; 2]> },
    Box { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    Segment { path: String },
    Text { ids: Vec<usize> },
}

impl IndicatorSpec {
    /// Resolves mask paths relative to `base`.
    pub fn resolve(&self, base: &Path) -> Result<Indicator> {
        Ok(match self {
            IndicatorSpec::Point { x, y } => Indicator::Point(Point { x: *x, y: *y }),
            IndicatorSpec::Pose { points } => {
                Indicator::Pose(points.iter().map(|p| Point { x: p[0], y: p[1] }).collect())
            }
            IndicatorSpec::Box { x_min, y_min, x_max, y_max } => {
                Indicator::Box(BoxRegion { x_min: *x_min, y_min: *y_min, x_max: *x_max, y_max: *y_max })
            }
            IndicatorSpec::Segment { path } => Indicator::Segment(Mask::load(base.join(path))?),
            IndicatorSpec::Text { ids } => Indicator::Text(ids.clone()),
        })
    }
}

/// Reads one indicator object or an array of them.
pub fn read_indicators(path: &Path) -> Result<Vec<Indicator>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let specs: Vec<IndicatorSpec> =
        if value.is_array() { serde_json::from_value(value)? } else { vec![serde_json::from_value(value)?] };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    specs.iter().map(|s| s.resolve(base)).collect()
}

/// Latent grid geometry: `height x width` cells of `patch x patch` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl LatentGrid {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.width * self.patch, self.height * self.patch)
    }

    /// Pixel coordinate of cell `(row, col)`'s centre.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let off = (self.patch as f64 - 1.0) / 2.0;
        ((col * self.patch) as f64 + off, (row * self.patch) as f64 + off)
    }

    /// `exp(-|u - p|^2 / 2 sigma^2)` per cell, distances in cell units.
    pub fn gaussian_heatmap(&self, p: Point, sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0) {
            return Err(Error::Contract(format!("sigma must be > 0, got {sigma}")));
        }
        let (fw, fh) = self.frame_size();
        Indicator::Point(p).validate(fw, fh)?;
        let s = self.patch as f64;
        Ok(self.map_cells(|cx, cy| {
            let (u, v) = ((cx - p.x) / s, (cy - p.y) / s);
            (-(u * u + v * v) / (2.0 * sigma * sigma)).exp()
        }))
    }

    /// 1 for cells whose centre lies inside the box's continuous extent.
    pub fn box_cells(&self, b: &BoxRegion) -> Vec<f64> {
        self.map_cells(|cx, cy| {
            let inside = cx >= b.x_min - 0.5 && cx <= b.x_max - 0.5 && cy >= b.y_min - 0.5 && cy <= b.y_max - 0.5;
            if inside {
                1.0
            } else {
                0.0
            }
        })
    }

    /// 1 for cells at least half covered by the mask.
    pub fn mask_cells(&self, m: &Mask) -> Result<Vec<f64>> {
        let (fw, fh) = self.frame_size();
        if m.width() != fw || m.height() != fh {
            return Err(Error::Shape(format!("mask {}x{} vs frame {fw}x{fh}", m.width(), m.height())));
        }
        let p = self.patch;
        let mut out = Vec::with_capacity(self.cells());
        for i in 0..self.height {
            for j in 0..self.width {
                let mut on = 0;
                for y in i * p..(i + 1) * p {
                    for x in j * p..(j + 1) * p {
                        on += m.get(x, y) as usize;
                    }
                }
                out.push(if 2 * on >= p * p { 1.0 } else { 0.0 });
            }
        }
        Ok(out)
    }

    fn map_cells(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cells());
        for i in 0..self.height {
            for j in 0..self.width {
                let (cx, cy) = self.cell_center(i, j);
                out.push(f(cx, cy));
            }
        }
        out
    }
}

/// Weighted mean of latent tokens, `sum_i w_i z_i / sum_i w_i`, as `[1, C]`.
pub fn pool(features: &Latent, weights: &[f64]) -> Result<Tensor> {
    if weights.len() != features.cells() {
        return Err(Error::Shape(format!("{} weights for {} cells", weights.len(), features.cells())));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("region covers no latent cells".into()));
    }
    let c = features.channels();
    let mut acc = vec![0.0; c];
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            for (a, &v) in acc.iter_mut().zip(features.tokens().row(i)) {
                *a += w * v;
            }
        }
    }
    Tensor::new(vec![1, c], acc.into_iter().map(|a| a / total).collect())
}

/// Turns indicators into condition tokens through a fixed `C x d` projection.
#[derive(Debug, Clone)]
pub struct Conditioner {
    pub grid: LatentGrid,
    pub projection: Tensor,
    pub sigma: f64,
}

impl Conditioner {
    pub fn new(grid: LatentGrid, projection: Tensor, sigma: f64) -> Result<Self> {
        projection.dims2()?;
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self { grid, projection, sigma })
    }

    /// Per-cell weights of every sub-target (one per keypoint for poses).
    pub fn target_weights(&self, ind: &Indicator) -> Result<Vec<Vec<f64>>> {
        let (fw, fh) = self.grid.frame_size();
        ind.validate(fw, fh)?;
        let ws = match ind {
            Indicator::Point(p) => vec![self.grid.gaussian_heatmap(*p, self.sigma)?],
            Indicator::Pose(ps) => {
                ps.iter().map(|p| self.grid.gaussian_heatmap(*p, self.sigma)).collect::<Result<_>>()?
            }
            Indicator::Box(b) => vec![self.grid.box_cells(b)],
            Indicator::Segment(m) => vec![self.grid.mask_cells(m)?],
            Indicator::Text(_) => return Err(Error::Contract("text indicators use the vocabulary table".into())),
        };
        if ws.iter().any(|w| w.iter().all(|&v| v == 0.0)) {
            return Err(Error::Degenerate(format!("{} rasterizes to zero cells", ind.kind())));
        }
        Ok(ws)
    }

    pub fn project(&self, pooled: &Tensor) -> Result<Tensor> {
        pooled.matmul(&self.projection)
    }

    pub fn point_tokens(&self, p: Point, features: &Latent) -> Result<Tensor> {
        self.project(&pool(features, &self.grid.gaussian_heatmap(p, self.sigma)?)?)
    }

    pub fn region_tokens(&self, ind: &Indicator, features: &Latent) -> Result<Tensor> {
        let w = match ind {
            Indicator::Box(_) | Indicator::Segment(_) => self.target_weights(ind)?.remove(0),
            _ => return Err(Error::Contract(format!("region_tokens takes box or segment, got {}", ind.kind()))),
        };
        self.project(&pool(features, &w)?)
    }

    /// Packs one token per sub-target and, when `background` is set, a final
    /// token pooled over `1 - max_i w_i` (the whole grid if that is empty).
    pub fn encode(&self, indicators: &[Indicator], features: &Latent, background: bool) -> Result<ConditionTokens> {
        let mut parts = Vec::new();
        let mut fg = vec![0.0f64; self.grid.cells()];
        for ind in indicators {
            for w in self.target_weights(ind)? {
                for (f, v) in fg.iter_mut().zip(&w) {
                    *f = f.max(*v);
                }
                parts.push(self.project(&pool(features, &w)?)?);
            }
        }
        if background {
            let mut bg: Vec<f64> = fg.iter().map(|f| 1.0 - f).collect();
            if bg.iter().sum::<f64>() <= 1e-12 {
                bg = vec![1.0; self.grid.cells()];
            }
            parts.push(self.project(&pool(features, &bg)?)?);
        }
        pack_targets(&parts)
    }
}

/// Seeded embedding table standing in for a text encoder; id 0 is the
/// null (background) token.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabTable {
    table: Tensor,
}

impl VocabTable {
    pub fn new(size: usize, d: usize, seed: u64) -> Result<Self> {
        if size == 0 || d == 0 {
            return Err(Error::Config("vocabulary needs positive size and width".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let s = 1.0 / (d as f64).sqrt();
        let table = Tensor::from_fn(&[size, d], |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            s * v
        });
        Ok(Self { table })
    }

    pub fn from_table(table: Tensor) -> Result<Self> {
        table.dims2()?;
        Ok(Self { table })
    }

    pub fn size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Tensor> {
        let rows = ids
            .iter()
            .map(|&id| {
                if id >= self.size() {
                    Err(Error::Vocab { id, size: self.size() })
                } else {
                    Ok(self.table.row(id).to_vec())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::Contract("empty token id list".into()));
        }
        Tensor::from_rows(&rows)
    }

    /// Overwrites the embedding of `id`.
    pub fn bind(&mut self, id: usize, row: &[f64]) -> Result<()> {
        if id >= self.size() {
            return Err(Error::Vocab { id, size: self.size() });
        }
        if row.len() != self.dim() {
            return Err(Error::Shape(format!("row of {} for width {}", row.len(), self.dim())));
        }
        let d = self.dim();
        self.table.data_mut()[id * d..(id + 1) * d].copy_from_slice(row);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save(path, &self.table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_table(io::load(path)?)
    }
}

pub fn text_tokens(ids: &[usize], vocab: &VocabTable) -> Result<Tensor> {
    vocab.lookup(ids)
}

/// Concatenated condition tokens with the token range of each target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTokens {
    pub tokens: Tensor,
    pub ranges: Vec<(usize, usize)>,
}

impl ConditionTokens {
    pub fn targets(&self) -> usize {
        self.ranges.len()
    }

    pub fn split(&self) -> Result<Vec<Tensor>> {
        self.ranges.iter().map(|&(s, l)| self.tokens.slice(0, s, l)).collect()
    }
}

pub fn pack_targets(parts: &[Tensor]) -> Result<ConditionTokens> {
    if parts.is_empty() {
        return Err(Error::Contract("pack_targets needs at least one target".into()));
    }
    let mut ranges = Vec::with_capacity(parts.len());
    let mut start = 0;
    for p in parts {
        let (m, _) = p.dims2()?;
        if m == 0 {
            return Err(Error::Contract("target with zero tokens".into()));
        }
        ranges.push((start, m));
        start += m;
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(ConditionTokens { tokens: Tensor::concat(&refs, 0)?, ranges })
}

/// Averages each target's columns of a `(h w) x m` cross map.
pub fn split_attention(cross: &Tensor, ranges: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    let (n, m) = cross.dims2()?;
    let mut next = 0;
    for &(s, l) in ranges {
        if s != next || l == 0 {
            return Err(Error::Contract(format!("ranges {ranges:?} do not tile the token axis")));
        }
        next = s + l;
    }
    if next != m {
        return Err(Error::Contract(format!("ranges cover {next} of {m} condition tokens")));
    }
    Ok(ranges
        .iter()
        .map(|&(s, l)| (0..n).map(|i| cross.row(i)[s..s + l].iter().sum::<f64>() / l as f64).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: LatentGrid = LatentGrid { height: 4, width: 4, patch: 4 };

    fn features() -> Latent {
        Latent::from_tokens(4, 4, Tensor::from_fn(&[16, 3], |i| (i / 3) as f64 + 0.1 * (i % 3) as f64)).unwrap()
    }

    fn conditioner() -> Conditioner {
        Conditioner::new(GRID, Tensor::eye(3), DEFAULT_SIGMA).unwrap()
    }

    #[test]
    fn heatmap_peak_and_unit_offset() {
        let (cx, cy) = GRID.cell_center(1, 2);
        let h = GRID.gaussian_heatmap(Point { x: cx, y: cy }, 1.0).unwrap();
        assert_eq!(h[6], 1.0);
        assert!((h[7] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((h[2] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn heatmap_wide_sigma_is_flat() {
        let h = GRID.gaussian_heatmap(Point { x: 3.0, y: 9.0 }, 1e4).unwrap();
        let (mx, mn) = h.iter().fold((0.0f64, 1.0f64), |(a, b), &v| (a.max(v), b.min(v)));
        assert!(mx / mn < 1.0 + 1e-6);
    }

    #[test]
    fn point_outside_frame_is_bounds_error() {
        let c = conditioner();
        assert!(matches!(c.point_tokens(Point { x: 16.0, y: 0.0 }, &features()), Err(Error::Bounds(_))));
    }

    #[test]
    fn full_box_pools_global_mean() {
        let c = conditioner();
        let full = Indicator::Box(BoxRegion { x_min: 0.0, y_min: 0.0, x_max: 16.0, y_max: 16.0 });
        let t = c.region_tokens(&full, &features()).unwrap();
        let z = features();
        for ch in 0..3 {
            let mean: f64 = (0..16).map(|i| z.tokens().row(i)[ch]).sum::<f64>() / 16.0;
            assert!((t.data()[ch] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cell_and_two_cell_regions() {
        let c = conditioner();
        let z = features();
        let one = Indicator::Box(BoxRegion { x_min: 4.0, y_min: 0.0, x_max: 8.0, y_max: 4.0 });
        assert_eq!(c.region_tokens(&one, &z).unwrap().data(), z.tokens().row(1));
        let mask = Mask::from_fn(16, 16, |x, y| (y < 4 && x < 4) || (y >= 12 && x >= 12));
        let t = c.region_tokens(&Indicator::Segment(mask), &z).unwrap();
        for ch in 0..3 {
            let want = (z.tokens().row(0)[ch] + z.tokens().row(15)[ch]) / 2.0;
            assert!((t.data()[ch] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_box_between_centres_is_degenerate() {
        let c = conditioner();
        let b = Indicator::Box(BoxRegion { x_min: 0.0, y_min: 0.0, x_max: 1.0, y_max: 1.0 });
        assert!(matches!(c.region_tokens(&b, &features()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn vocab_lookup_and_errors() {
        let v = VocabTable::new(5, 4, 3).unwrap();
        let t = text_tokens(&[2, 2, 0, 1], &v).unwrap();
        assert_eq!(t.row(0), t.row(1));
        assert_ne!(t.row(2), t.row(3));
        assert!(matches!(v.lookup(&[5]), Err(Error::Vocab { id: 5, size: 5 })));
    }

    #[test]
    fn pack_ranges_and_round_trip() {
        let a = Tensor::from_fn(&[1, 2], |i| i as f64);
        let b = Tensor::from_fn(&[1, 2], |i| 10.0 + i as f64);
        let single = pack_targets(&[a.clone()]).unwrap();
        assert_eq!(single.ranges, vec![(0, 1)]);
        assert_eq!(single.tokens, a);
        let ct = pack_targets(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ct.ranges, vec![(0, 1), (1, 1)]);
        assert_eq!(ct.split().unwrap(), vec![a, b]);
        assert!(matches!(pack_targets(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn split_attention_cases() {
        let col = Tensor::from_fn(&[3, 1], |_| 1.0);
        assert_eq!(split_attention(&col, &[(0, 1)]).unwrap(), vec![vec![1.0; 3]]);
        let twin = Tensor::from_rows(&[vec![0.25, 0.25, 0.5], vec![0.1, 0.1, 0.8]]).unwrap();
        let s = split_attention(&twin, &[(0, 2), (2, 1)]).unwrap();
        assert_eq!(s[0], vec![0.25, 0.1]);
        assert_eq!(s[1], vec![0.5, 0.8]);
        assert!(matches!(split_attention(&twin, &[(0, 2)]), Err(Error::Contract(_))));
    }

    #[test]
    fn encode_appends_background() {
        let c = conditioner();
        let inds = [Indicator::Pose(vec![Point { x: 1.5, y: 1.5 }, Point { x: 13.5, y: 13.5 }])];
        let ct = c.encode(&inds, &features(), true).unwrap();
        assert_eq!(ct.ranges, vec![(0, 1), (1, 1), (2, 1)]);
    }
}
