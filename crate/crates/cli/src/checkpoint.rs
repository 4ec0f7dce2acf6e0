//! Little-endian binary checkpoints.
//!
//! Layout: magic `XMMR`, version `u32`, stage tag (`u32` length + UTF-8),
//! seed `u64`, config snapshot (`u64` length + UTF-8), matrix count `u32`,
//! then per matrix: name (`u32` length + UTF-8), rows `u64`, cols `u64` and
//! `rows * cols` `f64` values in row-major order. Vectors are stored as
//! `1 × n` matrices.

use std::path::Path;

use xmmr_core::base_net::{BaseNet, BimodalAeParams, DbnStack, RbmKind, RbmParams};
use xmmr_core::metric_net::{Activation, InferenceBranch, InputNorm, ModelState, NetConfig, PathwayParams};
use xmmr_core::{AffineLayer, Matrix};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"XMMR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    BaseNet,
    MetricNet,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::BaseNet => "base_net",
            Stage::MetricNet => "metric_net",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "base_net" => Some(Stage::BaseNet),
            "metric_net" => Some(Stage::MetricNet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub seed: u64,
    pub config: String,
    pub matrices: Vec<(String, Matrix)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CliError::data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, v: u64) -> Result<usize> {
        usize::try_from(v).map_err(|_| CliError::data("checkpoint length overflows usize"))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::data("checkpoint string is not UTF-8"))
    }
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(stage: Stage, seed: u64, config: String) -> Self {
        Self { stage, seed, config, matrices: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.matrices.push((name.into(), m));
    }

    pub fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, Matrix::from_rows(&[v]).unwrap_or_else(|_| Matrix::empty(v.len())));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| CliError::data(format!("checkpoint lacks matrix `{name}`")))
    }

    pub fn get_vec(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.get(name)?;
        if m.rows() != 1 {
            return Err(CliError::data(format!("checkpoint entry `{name}` is not a vector")));
        }
        Ok(m.as_slice().to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.matrices.iter().map(|(n, m)| n.len() + 20 + 8 * m.as_slice().len()).sum();
        let mut out = Vec::with_capacity(64 + self.config.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str32(&mut out, self.stage.tag());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.matrices.len() as u32).to_le_bytes());
        for (name, m) in &self.matrices {
            put_str32(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CliError::data("not an XMMR checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::data(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let tag = r.string(n)?;
        let stage = Stage::from_tag(&tag).ok_or_else(|| CliError::data(format!("unknown checkpoint stage `{tag}`")))?;
        let seed = r.u64()?;
        let n = r.u64()?;
        let n = r.len(n)?;
        let config = r.string(n)?;
        let count = r.u32()?;
        let mut matrices = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let (rows, cols) = (r.u64()?, r.u64()?);
            let (rows, cols) = (r.len(rows)?, r.len(cols)?);
            let len = rows
                .checked_mul(cols)
                .and_then(|l| l.checked_mul(8))
                .ok_or_else(|| CliError::data("checkpoint matrix too large"))?;
            let data = r
                .take(len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_vec(rows, cols, data)
                .map_err(|e| CliError::data(format!("checkpoint matrix `{name}`: {e}")))?;
            matrices.push((name, m));
        }
        if r.pos != buf.len() {
            return Err(CliError::data("trailing bytes after checkpoint"));
        }
        Ok(Self { stage, seed, config, matrices })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(CliError::data(format!(
                "expected a {} checkpoint, found {}",
                stage.tag(),
                self.stage.tag()
            )));
        }
        Ok(())
    }
}

fn push_layer(ck: &mut Checkpoint, prefix: &str, l: &AffineLayer) {
    ck.push(format!("{prefix}.weight"), l.weight().clone());
    ck.push_vec(format!("{prefix}.bias"), l.bias());
    ck.push(format!("{prefix}.vweight"), l.velocity_weight().clone());
    ck.push_vec(format!("{prefix}.vbias"), l.velocity_bias());
}

fn read_layer(ck: &Checkpoint, prefix: &str) -> Result<AffineLayer> {
    let layer = AffineLayer::new(ck.get(&format!("{prefix}.weight"))?.clone(), ck.get_vec(&format!("{prefix}.bias"))?)?;
    Ok(layer.with_velocity(ck.get(&format!("{prefix}.vweight"))?.clone(), ck.get_vec(&format!("{prefix}.vbias"))?)?)
}

fn push_rbm(ck: &mut Checkpoint, prefix: &str, r: &RbmParams) {
    ck.push(format!("{prefix}.weight"), r.weight.clone());
    ck.push_vec(format!("{prefix}.visible_bias"), &r.visible_bias);
    ck.push_vec(format!("{prefix}.hidden_bias"), &r.hidden_bias);
}

fn read_rbm(ck: &Checkpoint, prefix: &str, kind: RbmKind) -> Result<RbmParams> {
    let weight = ck.get(&format!("{prefix}.weight"))?.clone();
    let visible_bias = ck.get_vec(&format!("{prefix}.visible_bias"))?;
    let hidden_bias = ck.get_vec(&format!("{prefix}.hidden_bias"))?;
    if visible_bias.len() != weight.rows() || hidden_bias.len() != weight.cols() {
        return Err(CliError::data(format!("checkpoint RBM `{prefix}` has inconsistent shapes")));
    }
    Ok(RbmParams { weight, visible_bias, hidden_bias, kind })
}

pub fn base_net_checkpoint(net: &BaseNet, seed: u64, config: String) -> Checkpoint {
    let mut ck = Checkpoint::new(Stage::BaseNet, seed, config);
    push_rbm(&mut ck, "image_dbn.layer1", &net.image_dbn.layer1);
    push_rbm(&mut ck, "image_dbn.layer2", &net.image_dbn.layer2);
    push_rbm(&mut ck, "text_dbn.layer1", &net.text_dbn.layer1);
    push_rbm(&mut ck, "text_dbn.layer2", &net.text_dbn.layer2);
    for (name, layer) in net.ae.layers() {
        push_layer(&mut ck, &format!("ae.{name}"), layer);
    }
    ck
}

pub fn base_net_from_checkpoint(ck: &Checkpoint) -> Result<BaseNet> {
    ck.expect_stage(Stage::BaseNet)?;
    let image_dbn = DbnStack::new(
        read_rbm(ck, "image_dbn.layer1", RbmKind::Gaussian)?,
        read_rbm(ck, "image_dbn.layer2", RbmKind::Binary)?,
    )?;
    let text_dbn = DbnStack::new(
        read_rbm(ck, "text_dbn.layer1", RbmKind::ReplicatedSoftmax)?,
        read_rbm(ck, "text_dbn.layer2", RbmKind::Binary)?,
    )?;
    let names = BimodalAeParams::zeros(1, 1, (1, 1)).layers().map(|(n, _)| n);
    let mut layers = Vec::with_capacity(7);
    for n in names {
        layers.push(read_layer(ck, &format!("ae.{n}"))?);
    }
    let layers: [AffineLayer; 7] = layers.try_into().expect("seven layers");
    Ok(BaseNet { image_dbn, text_dbn, ae: BimodalAeParams::from_layers(layers)? })
}

fn inference_code(b: InferenceBranch) -> f64 {
    match b {
        InferenceBranch::Semi => 0.0,
        InferenceBranch::Quad => 1.0,
        InferenceBranch::Trunk => 2.0,
    }
}

pub fn model_checkpoint(state: &ModelState, seed: u64, config: String) -> Checkpoint {
    let mut ck = Checkpoint::new(Stage::MetricNet, seed, config);
    let c = &state.config;
    let act = match c.trunk_activation {
        Activation::Sigmoid => 0.0,
        Activation::Identity => 1.0,
    };
    ck.push_vec("meta.step", &[state.step as f64]);
    ck.push_vec("meta.net", &[act, c.shared_head as u8 as f64, inference_code(c.inference)]);
    for (name, p) in [("image", &state.image), ("text", &state.text)] {
        for (i, l) in p.trunk().iter().enumerate() {
            push_layer(&mut ck, &format!("{name}.trunk{i}"), l);
        }
        for (i, l) in p.heads().iter().enumerate() {
            push_layer(&mut ck, &format!("{name}.head{i}"), l);
        }
        if let Some(n) = p.input_norm() {
            ck.push_vec(format!("{name}.input_mean"), &n.mean);
            ck.push_vec(format!("{name}.input_std"), &n.std);
        }
    }
    ck
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<ModelState> {
    ck.expect_stage(Stage::MetricNet)?;
    let step = ck.get_vec("meta.step")?;
    let net = ck.get_vec("meta.net")?;
    let (&[step], &[act, shared, inf]) = (&step[..], &net[..]) else {
        return Err(CliError::data("checkpoint metadata has the wrong length"));
    };
    let activation = if act == 0.0 { Activation::Sigmoid } else { Activation::Identity };
    let shared_head = shared != 0.0;
    let inference = match inf as u8 {
        0 => InferenceBranch::Semi,
        1 => InferenceBranch::Quad,
        _ => InferenceBranch::Trunk,
    };
    let n_heads = if shared_head { 1 } else { 2 };
    let pathway = |name: &str| -> Result<PathwayParams> {
        let trunk = [
            read_layer(ck, &format!("{name}.trunk0"))?,
            read_layer(ck, &format!("{name}.trunk1"))?,
            read_layer(ck, &format!("{name}.trunk2"))?,
        ];
        let heads = (0..n_heads)
            .map(|i| read_layer(ck, &format!("{name}.head{i}")))
            .collect::<Result<Vec<_>>>()?;
        let mut p = PathwayParams::from_layers(trunk, heads, activation)?;
        if ck.get(&format!("{name}.input_mean")).is_ok() {
            let norm = InputNorm {
                mean: ck.get_vec(&format!("{name}.input_mean"))?,
                std: ck.get_vec(&format!("{name}.input_std"))?,
            };
            p.set_input_norm(Some(norm))?;
        }
        Ok(p)
    };
    let image = pathway("image")?;
    let text = pathway("text")?;
    if image.input_dim() != text.input_dim()
        || image.output_dim() != text.output_dim()
        || image.input_norm().is_some() != text.input_norm().is_some()
    {
        return Err(CliError::data("image and text pathways disagree in shape"));
    }
    let config = NetConfig {
        input_dim: image.input_dim(),
        trunk_dim: image.trunk_dim(),
        head_dim: image.output_dim(),
        trunk_activation: activation,
        shared_head,
        inference,
        normalize_input: image.input_norm().is_some(),
    };
    Ok(ModelState { config, image, text, step: step as usize })
}
