//! Named parameter sets, initialization, the Adam optimizer, and a
//! lossless text checkpoint format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::Gradients;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Network dimensions shared by the encoder and the decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
}

impl ModelConfig {
    pub fn new(layers: usize, dim: usize, heads: usize) -> Result<Self> {
        if layers == 0 || dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "bad model dims: layers={layers} dim={dim} heads={heads}"
            )));
        }
        Ok(ModelConfig { layers, dim, heads })
    }

    /// Small dimensions suitable for CPU experiments.
    pub fn desk() -> Self {
        ModelConfig { layers: 2, dim: 32, heads: 4 }
    }
}

/// A named collection of weight matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    fn matrix(&mut self, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize) {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::from_vec(rows, cols, data));
    }

    fn norm_pair(&mut self, prefix: &str, dim: usize) {
        self.insert(format!("{prefix}.gain"), Tensor::from_vec(1, dim, vec![1.0; dim]));
        self.insert(format!("{prefix}.bias"), Tensor::zeros(1, dim));
    }

    fn encoder(rng: &mut ChaCha8Rng, cfg: &ModelConfig, set: &mut ParamSet) {
        let d = cfg.dim;
        set.matrix(rng, "enc.in_proj", 3, d);
        for l in 0..cfg.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                set.matrix(rng, &format!("enc.l{l}.{w}"), d, d);
            }
            set.norm_pair(&format!("enc.l{l}.norm1"), d);
            set.matrix(rng, &format!("enc.l{l}.ff.w1"), d, 4 * d);
            set.matrix(rng, &format!("enc.l{l}.ff.w2"), 4 * d, d);
            set.norm_pair(&format!("enc.l{l}.norm2"), d);
        }
    }

    /// Weights of the partitioning policy: encoder, tour-selection
    /// attention, and node-selection head.
    pub fn init_partitioner(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamSet {
        let d = cfg.dim;
        let tour_state = 2 * d + 1; // depot and last-node embeddings plus capacity
        let mut set = ParamSet::default();
        Self::encoder(rng, cfg, &mut set);
        set.matrix(rng, "tslcgl.wq1", d, d);
        set.matrix(rng, "tslcgl.wk1", tour_state, d);
        set.matrix(rng, "tslcgl.wv1", tour_state, d);
        set.matrix(rng, "tslcgl.wq2", d, d);
        set.matrix(rng, "tslcgl.wk2", tour_state, d);
        set.matrix(rng, "nsl.wq3", 3 * d + 1, d);
        set.matrix(rng, "nsl.wk3", d, d);
        set.matrix(rng, "nsl.wv2", d, d);
        set.matrix(rng, "nsl.wfinal", d, d);
        set
    }

    /// Weights of the tour-ordering policy: encoder plus a pointer head.
    pub fn init_router(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamSet {
        let d = cfg.dim;
        let mut set = ParamSet::default();
        Self::encoder(rng, cfg, &mut set);
        set.matrix(rng, "dec.wq", 3 * d, d);
        set.matrix(rng, "dec.wk", d, d);
        set
    }
}

/// Adam with bias correction; moments keyed like the parameters.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step. Parameters without a gradient entry stay
    /// untouched and their moments are not advanced.
    pub fn update(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, g) in grads {
            let p = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (m, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
            }
            let q = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (v, &gi) in q.data_mut().iter_mut().zip(g.data()) {
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let m = &self.m[name];
            let v = &self.v[name];
            let target = params.tensors.get_mut(name).unwrap_or_else(|| {
                panic!("gradient for unknown parameter {name}")
            });
            assert_eq!(target.shape(), g.shape(), "gradient shape mismatch for {name}");
            for ((x, &mi), &vi) in target.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// One named model inside a checkpoint file.
#[derive(Debug, Clone)]
pub struct CheckpointSection {
    pub role: String,
    pub config: ModelConfig,
    pub params: ParamSet,
}

const MAGIC: &str = "MDVRP-CHECKPOINT v1";

/// Serializes model sections to the versioned text format. Values are
/// hex-encoded f64 bit patterns, so round-trips are bit-exact and the
/// output is byte-stable for identical inputs.
pub fn write_checkpoint(sections: &[CheckpointSection]) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for s in sections {
        writeln!(
            out,
            "model {} layers={} dim={} heads={}",
            s.role, s.config.layers, s.config.dim, s.config.heads
        )
        .unwrap();
        for (name, t) in s.params.iter() {
            writeln!(out, "param {} {} {}", name, t.rows(), t.cols()).unwrap();
            let mut line = String::with_capacity(t.len() * 17);
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                write!(line, "{:016x}", v.to_bits()).unwrap();
            }
            out.push_str(&line);
            out.push('\n');
        }
        writeln!(out, "end {}", s.role).unwrap();
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<Vec<CheckpointSection>> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
    if first.trim() != MAGIC {
        return Err(Error::Checkpoint(format!("bad header: {first:?}")));
    }
    let mut sections = Vec::new();
    let mut current: Option<CheckpointSection> = None;
    let mut pending_param: Option<(String, usize, usize)> = None;

    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((name, rows, cols)) = pending_param.take() {
            let mut data = Vec::with_capacity(rows * cols);
            for tok in line.split_ascii_whitespace() {
                let bits = u64::from_str_radix(tok, 16).map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad value token {tok:?}"),
                })?;
                data.push(f64::from_bits(bits));
            }
            if data.len() != rows * cols {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {} values, got {}", rows * cols, data.len()),
                });
            }
            let section = current.as_mut().ok_or(Error::Parse {
                line: lineno + 1,
                msg: "values outside a model section".into(),
            })?;
            section.params.insert(name, Tensor::from_vec(rows, cols, data));
            continue;
        }
        let mut toks = line.split_ascii_whitespace();
        match toks.next() {
            Some("model") => {
                if current.is_some() {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "nested model section".into(),
                    });
                }
                let role = toks
                    .next()
                    .ok_or(Error::Parse { line: lineno + 1, msg: "missing role".into() })?
                    .to_string();
                let mut layers = None;
                let mut dim = None;
                let mut heads = None;
                for kv in toks {
                    let (k, v) = kv.split_once('=').ok_or(Error::Parse {
                        line: lineno + 1,
                        msg: format!("bad key=value {kv:?}"),
                    })?;
                    let v: usize = v.parse().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        msg: format!("bad number {v:?}"),
                    })?;
                    match k {
                        "layers" => layers = Some(v),
                        "dim" => dim = Some(v),
                        "heads" => heads = Some(v),
                        _ => {}
                    }
                }
                let (Some(layers), Some(dim), Some(heads)) = (layers, dim, heads) else {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "model line missing layers/dim/heads".into(),
                    });
                };
                current = Some(CheckpointSection {
                    role,
                    config: ModelConfig::new(layers, dim, heads)?,
                    params: ParamSet::default(),
                });
            }
            Some("param") => {
                let name = toks
                    .next()
                    .ok_or(Error::Parse { line: lineno + 1, msg: "missing param name".into() })?
                    .to_string();
                let rows: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or(Error::Parse { line: lineno + 1, msg: "missing rows".into() })?;
                let cols: usize = toks
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or(Error::Parse { line: lineno + 1, msg: "missing cols".into() })?;
                pending_param = Some((name, rows, cols));
            }
            Some("end") => {
                let section = current.take().ok_or(Error::Parse {
                    line: lineno + 1,
                    msg: "end without model".into(),
                })?;
                sections.push(section);
            }
            Some(other) => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("unexpected token {other:?}"),
                });
            }
            None => {}
        }
    }
    if current.is_some() {
        return Err(Error::Checkpoint("unterminated model section".into()));
    }
    Ok(sections)
}

pub fn save_checkpoint(path: &std::path::Path, sections: &[CheckpointSection]) -> Result<()> {
    std::fs::write(path, write_checkpoint(sections))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Vec<CheckpointSection>> {
    let text = std::fs::read_to_string(path)?;
    read_checkpoint(&text)
}

/// Pulls one role out of a checkpoint.
pub fn section<'a>(
    sections: &'a [CheckpointSection],
    role: &str,
) -> Result<&'a CheckpointSection> {
    sections
        .iter()
        .find(|s| s.role == role)
        .ok_or_else(|| Error::Checkpoint(format!("no `{role}` section in checkpoint")))
}
