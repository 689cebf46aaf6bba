//! Single-head attention denoiser over latent tokens.
//!
//! Tokens enter through `W_in`, receive a sinusoidal step embedding, pass
//! `N` blocks of self-attention, cross-attention against condition tokens
//! and a tanh MLP (all residual), and leave through `W_out`, which is added
//! back onto the input latent. `W_out` starts at zero so a fresh model is
//! the identity map.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{io, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub embed_dim: usize,
    pub layers: usize,
    /// Latent channels per token.
    pub channels: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { embed_dim: 32, layers: 2, channels: 48, seed: 0 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.layers == 0 || self.channels == 0 {
            return Err(Error::Config(format!("denoiser needs positive embed_dim, layers and channels, got {self:?}")));
        }
        if self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!("embed_dim must be even, got {}", self.embed_dim)));
        }
        Ok(())
    }

    /// `C d + d^2 + N 16 d^2 + d C`.
    pub fn param_count(&self) -> usize {
        let (c, d, n) = (self.channels, self.embed_dim, self.layers);
        c * d + d * d + n * 16 * d * d + d * c
    }
}

/// Attention maps of one block at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub step: usize,
    /// `(h w) x (h w)`, row-stochastic.
    pub self_map: Tensor,
    /// `(h w) x m`, row-stochastic.
    pub cross_map: Tensor,
}

/// One network application inside a temporal process.
pub trait StepNetwork {
    /// Maps latent tokens `[n, C]` at step `k` under condition `tau` `[m, d]`.
    fn step(&self, z: &Tensor, k: usize, tau: &Tensor, capture: bool) -> Result<(Tensor, Vec<AttentionRecord>)>;
}

/// Returns its input unchanged and records nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityNetwork;

impl StepNetwork for IdentityNetwork {
    fn step(&self, z: &Tensor, _k: usize, _tau: &Tensor, _capture: bool) -> Result<(Tensor, Vec<AttentionRecord>)> {
        Ok((z.clone(), Vec::new()))
    }
}

const BLOCK_PARAMS: [&str; 10] =
    ["self.q", "self.k", "self.v", "self.o", "cross.q", "cross.k", "cross.v", "cross.o", "mlp.w1", "mlp.w2"];

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Denoiser {
    /// Uniform `+-1/sqrt(fan_in)` weights, key projections tied to their
    /// query projections, zero output projection.
    pub fn init(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let (c, d) = (config.channels, config.embed_dim);
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut uniform = |fan_in: usize, fan_out: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-b, b);
            Tensor::from_fn(&[fan_in, fan_out], |_| dist.sample(&mut rng))
        };
        let mut names = vec!["w_in".to_string(), "w_t".to_string()];
        let mut params = vec![uniform(c, d), uniform(d, d)];
        for l in 0..config.layers {
            let sq = uniform(d, d);
            let sv = uniform(d, d);
            let so = uniform(d, d);
            let cq = uniform(d, d);
            let cv = uniform(d, d);
            let co = uniform(d, d);
            let w1 = uniform(d, 4 * d);
            let w2 = uniform(4 * d, d);
            let block = [sq.clone(), sq, sv, so, cq.clone(), cq, cv, co, w1, w2];
            for (name, t) in BLOCK_PARAMS.iter().zip(block) {
                names.push(format!("layer{l}.{name}"));
                params.push(t);
            }
        }
        names.push("w_out".to_string());
        params.push(Tensor::zeros(&[d, c]));
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    /// Replaces every parameter; shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, old), new) in self.names.iter().zip(&self.params).zip(&params) {
            if old.shape() != new.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name}: expected {:?}, got {:?}",
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))?;
        if self.params[i].shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                self.params[i].shape(),
                value.shape()
            )));
        }
        self.params[i] = value;
        Ok(())
    }

    /// Token-to-embedding projection shared with the conditioning encoders.
    pub fn input_projection(&self) -> &Tensor {
        &self.params[0]
    }

    /// Forward pass on a tape. `params` are the tape variables for
    /// [`Denoiser::params`], in order. Returns the output latent tokens and,
    /// per layer, the self and cross attention variables.
    pub fn forward_var<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        z: Var<'t>,
        k: usize,
        tau: Var<'t>,
    ) -> Result<(Var<'t>, Vec<(Var<'t>, Var<'t>)>)> {
        let d = self.config.embed_dim;
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != self.config.channels {
            return Err(Error::Shape(format!("latent tokens must be [n, {}], got {zs:?}", self.config.channels)));
        }
        let ts = tau.shape();
        if ts.len() != 2 || ts[1] != d || ts[0] == 0 {
            return Err(Error::Shape(format!("condition tokens must be [m>0, {d}], got {ts:?}")));
        }
        let n = zs[0];
        let scale = 1.0 / (d as f64).sqrt();
        let ones = tape.constant(Tensor::ones(&[n, 1]));
        let temb = tape.constant(step_embedding(k, d));
        let step_row = temb.matmul(&params[1])?;
        let mut x = z.matmul(&params[0])?.add(&ones.matmul(&step_row)?)?;
        let mut maps = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let p = &params[2 + l * BLOCK_PARAMS.len()..2 + (l + 1) * BLOCK_PARAMS.len()];
            let q = x.matmul(&p[0])?;
            let kk = x.matmul(&p[1])?;
            let v = x.matmul(&p[2])?;
            let s = q.matmul(&kk.transpose()?)?.softmax_rows(scale)?;
            x = x.add(&s.matmul(&v)?.matmul(&p[3])?)?;
            let q = x.matmul(&p[4])?;
            let kk = tau.matmul(&p[5])?;
            let v = tau.matmul(&p[6])?;
            let c = q.matmul(&kk.transpose()?)?.softmax_rows(scale)?;
            x = x.add(&c.matmul(&v)?.matmul(&p[7])?)?;
            x = x.add(&x.matmul(&p[8])?.tanh().matmul(&p[9])?)?;
            maps.push((s, c));
        }
        let out = z.add(&x.matmul(&params[params.len() - 1])?)?;
        Ok((out, maps))
    }

    pub fn forward(&self, z: &Tensor, k: usize, tau: &Tensor, capture: bool) -> Result<(Tensor, Vec<AttentionRecord>)> {
        let tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let zv = tape.constant(z.clone());
        let tv = tape.constant(tau.clone());
        let (out, maps) = self.forward_var(&tape, &params, zv, k, tv)?;
        let records = if capture {
            maps.iter()
                .enumerate()
                .map(|(layer, (s, c))| AttentionRecord {
                    layer,
                    step: k,
                    self_map: (*s.value()).clone(),
                    cross_map: (*c.value()).clone(),
                })
                .collect()
        } else {
            Vec::new()
        };
        let out = (*out.value()).clone();
        Ok((out, records))
    }
}

impl StepNetwork for Denoiser {
    fn step(&self, z: &Tensor, k: usize, tau: &Tensor, capture: bool) -> Result<(Tensor, Vec<AttentionRecord>)> {
        self.forward(z, k, tau, capture)
    }
}

/// Sinusoidal embedding `[sin(k f_i), cos(k f_i)]`, `f_i = 10000^(-i / (d/2))`.
pub fn step_embedding(k: usize, d: usize) -> Tensor {
    let half = d / 2;
    Tensor::from_fn(&[1, d], |j| {
        let i = j % half;
        let a = k as f64 * (-(10000f64.ln()) * i as f64 / half as f64).exp();
        if j < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: DenoiserConfig,
    params: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

impl Denoiser {
    /// Writes `manifest.json` and one DTNR file per parameter into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, t) in self.names.iter().zip(&self.params) {
            let file = format!("{name}.dtnr");
            io::save(dir.join(&file), t)?;
            entries.push(ManifestEntry { name: name.clone(), shape: t.shape().to_vec(), file });
        }
        let manifest = Manifest { config: self.config, params: entries };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut model = Self::init(manifest.config)?;
        if manifest.params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "manifest lists {} parameters, model has {}",
                manifest.params.len(),
                model.params.len()
            )));
        }
        for entry in &manifest.params {
            let t = io::load(dir.join(&entry.file))?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!("{}: file shape disagrees with manifest", entry.name)));
            }
            model.set_param(&entry.name, t)?;
        }
        Ok(model)
    }
}
