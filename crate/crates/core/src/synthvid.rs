//! Deterministic synthetic videos of moving discs and squares with exact
//! ground truth.
//!
//! Pixel `(x, y)` is centred at coordinate `(x, y)`. Edges are anti-aliased
//! by 4x4 supersampling at offsets `(s + 0.5) / 4 - 0.5`; a pixel belongs to
//! an object's mask when at least half of its samples are covered.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{rle_encode, save_jsonl, FrameRecord, TargetRecord};
use crate::codec::{Frame, Mask};
use crate::error::{Error, Result};

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disc,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: [f64; 2],
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Radius for discs, side length for squares.
    pub size: f64,
    pub color: [f64; 3],
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    #[serde(default)]
    pub sinusoid: Option<Sinusoid>,
}

impl ObjectSpec {
    pub fn center(&self, t: usize) -> (f64, f64) {
        let tf = t as f64;
        let (mut x, mut y) = (self.start[0] + self.velocity[0] * tf, self.start[1] + self.velocity[1] * tf);
        if let Some(s) = &self.sinusoid {
            let phase = (2.0 * std::f64::consts::PI * tf / s.period).sin();
            x += s.amplitude[0] * phase;
            y += s.amplitude[1] * phase;
        }
        (x, y)
    }

    fn half_extent(&self) -> f64 {
        match self.shape {
            Shape::Disc => self.size,
            Shape::Square => self.size / 2.0,
        }
    }

    fn covers(&self, cx: f64, cy: f64, px: f64, py: f64) -> bool {
        match self.shape {
            Shape::Disc => (px - cx).powi(2) + (py - cy).powi(2) <= self.size * self.size,
            Shape::Square => (px - cx).abs() <= self.size / 2.0 && (py - cy).abs() <= self.size / 2.0,
        }
    }
}

/// Axis-aligned bar drawn over every object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occluder {
    /// `[x_min, y_min, x_max, y_max]` in pixels, exclusive max.
    pub rect: [usize; 4],
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    Constant {
        color: [f64; 3],
    },
    /// Horizontal ramp from `left` to `right`.
    Gradient {
        left: [f64; 3],
        right: [f64; 3],
    },
    /// Static uniform noise of the given amplitude around `color`.
    Noise {
        color: [f64; 3],
        amplitude: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background: Background,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
}

impl SceneSpec {
    /// 64x64, 32 frames, one radius-6 disc moving (1, 0.5) px/frame.
    pub fn default_disc() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 32,
            background: Background::Constant { color: [0.0; 3] },
            objects: vec![ObjectSpec {
                shape: Shape::Disc,
                size: 6.0,
                color: [0.9, 0.3, 0.2],
                start: [20.0, 20.0],
                velocity: [1.0, 0.5],
                sinusoid: None,
            }],
            occluders: Vec::new(),
        }
    }

    /// Two well-separated discs on the default canvas.
    pub fn two_discs() -> Self {
        let mut s = Self::default_disc();
        s.objects = vec![
            ObjectSpec {
                shape: Shape::Disc,
                size: 5.0,
                color: [0.9, 0.3, 0.2],
                start: [14.0, 12.0],
                velocity: [1.0, 0.5],
                sinusoid: None,
            },
            ObjectSpec {
                shape: Shape::Disc,
                size: 5.0,
                color: [0.2, 0.5, 0.9],
                start: [12.0, 50.0],
                velocity: [1.0, 0.0],
                sinusoid: None,
            },
        ];
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::Spec("scene needs positive size and frame count".into()));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.size > 0.0) {
                return Err(Error::Spec(format!("object {i} has non-positive size")));
            }
            if let Some(s) = &o.sinusoid {
                if !(s.period > 0.0) {
                    return Err(Error::Spec(format!("object {i} has non-positive sinusoid period")));
                }
            }
            let e = o.half_extent();
            for t in 0..self.frames {
                let (x, y) = o.center(t);
                if x - e < 0.5 || y - e < 0.5 || x + e > w - 1.5 || y + e > h - 1.5 {
                    return Err(Error::Spec(format!(
                        "object {i} leaves the frame interior at frame {t} (centre ({x}, {y}))"
                    )));
                }
            }
        }
        for (i, oc) in self.occluders.iter().enumerate() {
            let [x0, y0, x1, y1] = oc.rect;
            if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
                return Err(Error::Spec(format!("occluder {i} rect {:?} invalid", oc.rect)));
            }
        }
        Ok(())
    }

    fn background_frame(&self) -> Frame {
        let mut f = Frame::filled(self.width, self.height, [0.0; 3]);
        match &self.background {
            Background::Constant { color } => f = Frame::filled(self.width, self.height, *color),
            Background::Gradient { left, right } => {
                let denom = (self.width.max(2) - 1) as f64;
                for y in 0..self.height {
                    for x in 0..self.width {
                        let a = x as f64 / denom;
                        f.set(x, y, std::array::from_fn(|c| left[c] * (1.0 - a) + right[c] * a));
                    }
                }
            }
            Background::Noise { color, amplitude, seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let rgb = std::array::from_fn(|c| {
                            (color[c] + amplitude * (rng.gen::<f64>() * 2.0 - 1.0)).clamp(0.0, 1.0)
                        });
                        f.set(x, y, rgb);
                    }
                }
            }
        }
        f
    }
}

/// Rendered clip with per-frame ground truth.
#[derive(Debug, Clone)]
pub struct Clip {
    pub frames: Vec<Frame>,
    /// `masks[t][i]`: visible mask of object `i` in frame `t`.
    pub masks: Vec<Vec<Mask>>,
    pub truth: Vec<FrameRecord>,
}

fn coverage(o: &ObjectSpec, cx: f64, cy: f64, x: usize, y: usize) -> f64 {
    let s = SUPERSAMPLE as f64;
    let mut hits = 0;
    for a in 0..SUPERSAMPLE {
        for b in 0..SUPERSAMPLE {
            let px = x as f64 + (b as f64 + 0.5) / s - 0.5;
            let py = y as f64 + (a as f64 + 0.5) / s - 0.5;
            hits += o.covers(cx, cy, px, py) as usize;
        }
    }
    hits as f64 / (s * s)
}

pub fn render(spec: &SceneSpec) -> Result<Clip> {
    spec.validate()?;
    let bg = spec.background_frame();
    let (w, h) = (spec.width, spec.height);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut truth = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut f = bg.clone();
        let mut covs: Vec<Vec<f64>> = Vec::with_capacity(spec.objects.len());
        for o in &spec.objects {
            let (cx, cy) = o.center(t);
            let e = o.half_extent() + 1.0;
            let mut cov = vec![0.0; w * h];
            let (x0, x1) = ((cx - e).floor().max(0.0) as usize, ((cx + e).ceil() as usize).min(w - 1));
            let (y0, y1) = ((cy - e).floor().max(0.0) as usize, ((cy + e).ceil() as usize).min(h - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let c = coverage(o, cx, cy, x, y);
                    if c > 0.0 {
                        cov[y * w + x] = c;
                        let old = f.get(x, y);
                        f.set(x, y, std::array::from_fn(|ch| old[ch] * (1.0 - c) + o.color[ch] * c));
                    }
                }
            }
            covs.push(cov);
        }
        let mut occluded = vec![false; w * h];
        for oc in &spec.occluders {
            let [x0, y0, x1, y1] = oc.rect;
            for y in y0..y1 {
                for x in x0..x1 {
                    f.set(x, y, oc.color);
                    occluded[y * w + x] = true;
                }
            }
        }
        let mut frame_masks = Vec::with_capacity(spec.objects.len());
        let mut targets = Vec::with_capacity(spec.objects.len());
        for (i, o) in spec.objects.iter().enumerate() {
            let above = |p: usize| covs[i + 1..].iter().any(|c| c[p] >= 0.5);
            let mask = Mask::from_fn(w, h, |x, y| {
                let p = y * w + x;
                covs[i][p] >= 0.5 && !occluded[p] && !above(p)
            });
            let (cx, cy) = o.center(t);
            let mut rec = TargetRecord::new(i);
            rec.point = Some([cx, cy]);
            rec.bbox = mask.bounding_box().map(|b| b.map(|v| v as f64));
            rec.rle = Some(rle_encode(&mask));
            targets.push(rec);
            frame_masks.push(mask);
        }
        frames.push(f);
        masks.push(frame_masks);
        truth.push(FrameRecord { frame: t, targets });
    }
    Ok(Clip { frames, masks, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub objects: usize,
    pub scene: SceneSpec,
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.ppm")
}

/// Writes `frame_%05d.ppm`, `gt.jsonl` and `manifest.json` into `dir`.
pub fn write_clip(spec: &SceneSpec, clip: &Clip, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, f) in clip.frames.iter().enumerate() {
        f.save(dir.join(frame_name(t)))?;
    }
    save_jsonl(dir.join("gt.jsonl"), &clip.truth)?;
    let manifest = ClipManifest {
        width: spec.width,
        height: spec.height,
        frames: spec.frames,
        objects: spec.objects.len(),
        scene: spec.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<ClipManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
}

/// Loads `frame_%05d.ppm` files in order until the first gap.
pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_name(frames.len()));
        if !p.exists() {
            break;
        }
        frames.push(Frame::load(p)?);
    }
    if frames.is_empty() {
        return Err(Error::Format(format!("no frame_00000.ppm in {}", dir.display())));
    }
    Ok(frames)
}
