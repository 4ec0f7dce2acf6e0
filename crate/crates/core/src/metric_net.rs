//! Two-pathway metric network. Each modality has a trunk of three
//! fully-connected layers followed by one sigmoid head per loss branch.

use alloc::vec::Vec;

use crate::nd::{sigmoid_backward, sigmoid_scalar, AffineGrads, AffineLayer, InitScheme, Matrix, OptimizerConfig};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, x: Matrix) -> Matrix {
        match self {
            Activation::Sigmoid => x.map(sigmoid_scalar),
            Activation::Identity => x,
        }
    }

    fn backward(self, y: &Matrix, grad: &Matrix) -> Result<Matrix> {
        match self {
            Activation::Sigmoid => sigmoid_backward(y, grad),
            Activation::Identity => Ok(grad.clone()),
        }
    }
}

/// Loss branch a head serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Semi,
    Quad,
}

/// Output used by [`ModelState::embed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferenceBranch {
    #[default]
    Semi,
    Quad,
    Trunk,
}

impl InferenceBranch {
    pub fn tag(self) -> &'static str {
        match self {
            InferenceBranch::Semi => "semi",
            InferenceBranch::Quad => "quad",
            InferenceBranch::Trunk => "trunk",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "semi" => Some(InferenceBranch::Semi),
            "quad" => Some(InferenceBranch::Quad),
            "trunk" => Some(InferenceBranch::Trunk),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub trunk_dim: usize,
    pub head_dim: usize,
    pub trunk_activation: Activation,
    /// One head serves both branches.
    pub shared_head: bool,
    pub inference: InferenceBranch,
    /// Standardize inputs with statistics of the training rows.
    pub normalize_input: bool,
}

impl NetConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            trunk_dim: 256,
            head_dim: 256,
            trunk_activation: Activation::Sigmoid,
            shared_head: false,
            inference: InferenceBranch::Semi,
            normalize_input: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.trunk_dim == 0 || self.head_dim == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        Ok(())
    }
}

/// Fixed per-feature standardization in front of the first trunk layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Column statistics over `rows` of `s`; constant columns keep a scale of 1.
    pub fn fit(s: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("InputNorm::fit"));
        }
        let x = s.select_rows(rows)?;
        let n = rows.len() as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|v| v / n).collect();
        let mut var = alloc::vec![0.0; s.cols()];
        for r in x.iter_rows() {
            for ((a, v), mu) in var.iter_mut().zip(r).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let sd = libm::sqrt(v / n);
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, s: &Matrix) -> Result<Matrix> {
        if s.cols() != self.dim() {
            return Err(Error::shape("InputNorm::apply", (s.rows(), self.dim()), s.shape()));
        }
        let mut out = s.clone();
        for r in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }
}

/// Parameters of one modality's pathway.
#[derive(Debug, Clone)]
pub struct PathwayParams {
    trunk: [AffineLayer; 3],
    heads: Vec<AffineLayer>,
    activation: Activation,
    input_norm: Option<InputNorm>,
    /// Bumped on every parameter update; caches remember it.
    version: u64,
}

impl PartialEq for PathwayParams {
    fn eq(&self, other: &Self) -> bool {
        self.trunk == other.trunk
            && self.heads == other.heads
            && self.activation == other.activation
            && self.input_norm == other.input_norm
    }
}

/// Activations of the trunk for one input batch.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    version: u64,
    input: Matrix,
    acts: [Matrix; 3],
}

impl TrunkCache {
    pub fn output(&self) -> &Matrix {
        &self.acts[2]
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub trunk: TrunkCache,
    pub branch: Branch,
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwayGrads {
    pub trunk: [AffineGrads; 3],
    pub heads: Vec<AffineGrads>,
}

impl PathwayGrads {
    pub fn zeros_like(p: &PathwayParams) -> Self {
        Self {
            trunk: [
                AffineGrads::zeros_like(&p.trunk[0]),
                AffineGrads::zeros_like(&p.trunk[1]),
                AffineGrads::zeros_like(&p.trunk[2]),
            ],
            heads: p.heads.iter().map(AffineGrads::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &PathwayGrads) -> Result<()> {
        for (a, b) in self.trunk.iter_mut().zip(&other.trunk) {
            a.add_assign(b)?;
        }
        if self.heads.len() != other.heads.len() {
            return Err(Error::shape("PathwayGrads::add_assign", (self.heads.len(), 0), (other.heads.len(), 0)));
        }
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.trunk
            .iter()
            .chain(&self.heads)
            .fold(0.0, |m, g| m.max(g.max_abs()))
    }
}

impl PathwayParams {
    pub fn init(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let t = cfg.trunk_dim;
        let init = InitScheme::Glorot(match cfg.trunk_activation {
            Activation::Sigmoid => 4.0,
            Activation::Identity => 1.0,
        });
        let trunk = [
            AffineLayer::init(cfg.input_dim, t, init, rng),
            AffineLayer::init(t, t, init, rng),
            AffineLayer::init(t, t, init, rng),
        ];
        let n_heads = if cfg.shared_head { 1 } else { 2 };
        let heads = (0..n_heads)
            .map(|_| AffineLayer::init(t, cfg.head_dim, InitScheme::Glorot(4.0), rng))
            .collect();
        Self { trunk, heads, activation: cfg.trunk_activation, input_norm: None, version: 0 }
    }

    pub fn zeros(cfg: &NetConfig) -> Self {
        let t = cfg.trunk_dim;
        let n_heads = if cfg.shared_head { 1 } else { 2 };
        Self {
            trunk: [AffineLayer::zeros(cfg.input_dim, t), AffineLayer::zeros(t, t), AffineLayer::zeros(t, t)],
            heads: (0..n_heads).map(|_| AffineLayer::zeros(t, cfg.head_dim)).collect(),
            activation: cfg.trunk_activation,
            input_norm: None,
            version: 0,
        }
    }

    /// Assembles a pathway from stored layers, checking that they chain.
    pub fn from_layers(trunk: [AffineLayer; 3], heads: Vec<AffineLayer>, activation: Activation) -> Result<Self> {
        if heads.is_empty() || heads.len() > 2 {
            return Err(Error::invalid("a pathway needs one or two heads"));
        }
        for w in trunk.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::shape("PathwayParams trunk", (w[0].out_dim(), 0), (w[1].in_dim(), 0)));
            }
        }
        let out = trunk[2].out_dim();
        let hd = heads[0].out_dim();
        for h in &heads {
            if h.in_dim() != out || h.out_dim() != hd {
                return Err(Error::shape("PathwayParams head", (hd, out), (h.out_dim(), h.in_dim())));
            }
        }
        Ok(Self { trunk, heads, activation, input_norm: None, version: 0 })
    }

    pub fn trunk(&self) -> &[AffineLayer; 3] {
        &self.trunk
    }

    pub fn heads(&self) -> &[AffineLayer] {
        &self.heads
    }

    pub fn trunk_mut(&mut self) -> &mut [AffineLayer; 3] {
        self.version += 1;
        &mut self.trunk
    }

    pub fn heads_mut(&mut self) -> &mut [AffineLayer] {
        self.version += 1;
        &mut self.heads
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_norm(&self) -> Option<&InputNorm> {
        self.input_norm.as_ref()
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) -> Result<()> {
        if let Some(n) = &norm {
            if n.dim() != self.input_dim() || n.std.len() != n.dim() {
                return Err(Error::shape("PathwayParams::set_input_norm", (self.input_dim(), 0), (n.dim(), 0)));
            }
        }
        self.input_norm = norm;
        self.version += 1;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.heads[0].out_dim()
    }

    pub fn trunk_dim(&self) -> usize {
        self.trunk[2].out_dim()
    }

    pub fn head_index(&self, branch: Branch) -> usize {
        match (self.heads.len(), branch) {
            (1, _) | (_, Branch::Semi) => 0,
            (_, Branch::Quad) => 1,
        }
    }

    pub fn forward_trunk(&self, s: &Matrix) -> Result<TrunkCache> {
        if s.cols() != self.input_dim() {
            return Err(Error::shape("metric forward", (s.rows(), self.input_dim()), s.shape()));
        }
        let input = match &self.input_norm {
            Some(n) => n.apply(s)?,
            None => s.clone(),
        };
        let a0 = self.activation.apply(self.trunk[0].forward(&input)?);
        let a1 = self.activation.apply(self.trunk[1].forward(&a0)?);
        let a2 = self.activation.apply(self.trunk[2].forward(&a1)?);
        Ok(TrunkCache { version: self.version, input, acts: [a0, a1, a2] })
    }

    pub fn forward_head(&self, trunk: &TrunkCache, branch: Branch) -> Result<Matrix> {
        self.check(trunk)?;
        Ok(self.heads[self.head_index(branch)].forward(trunk.output())?.map(sigmoid_scalar))
    }

    /// Embedding of one branch with its cache.
    pub fn forward(&self, s: &Matrix, branch: Branch) -> Result<(Matrix, ForwardCache)> {
        let trunk = self.forward_trunk(s)?;
        let output = self.forward_head(&trunk, branch)?;
        Ok((output.clone(), ForwardCache { trunk, branch, output }))
    }

    fn check(&self, trunk: &TrunkCache) -> Result<()> {
        if trunk.version != self.version {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, grad: &Matrix) -> Result<PathwayGrads> {
        self.backward_multi(&cache.trunk, &[(cache.branch, &cache.output, grad)])
    }

    /// Gradients for several branches sharing one trunk pass. Each entry is
    /// `(branch, head output, ∂loss/∂head output)`; the trunk receives the sum.
    pub fn backward_multi(&self, trunk: &TrunkCache, branches: &[(Branch, &Matrix, &Matrix)]) -> Result<PathwayGrads> {
        self.check(trunk)?;
        let mut grads = PathwayGrads::zeros_like(self);
        let top = trunk.output();
        let mut g_top = Matrix::zeros(top.rows(), top.cols());
        for &(branch, out, g) in branches {
            if g.shape() != out.shape() || out.rows() != top.rows() || out.cols() != self.output_dim() {
                return Err(Error::shape("metric backward", out.shape(), g.shape()));
            }
            let h = self.head_index(branch);
            let d = sigmoid_backward(out, g)?;
            grads.heads[h].add_assign(&self.heads[h].param_grads(top, &d)?)?;
            g_top.add_scaled(1.0, &self.heads[h].input_grad(&d)?)?;
        }
        let mut g = g_top;
        for l in (0..3).rev() {
            let d = self.activation.backward(&trunk.acts[l], &g)?;
            let x = if l == 0 { &trunk.input } else { &trunk.acts[l - 1] };
            grads.trunk[l] = self.trunk[l].param_grads(x, &d)?;
            if l > 0 {
                g = self.trunk[l].input_grad(&d)?;
            }
        }
        Ok(grads)
    }

    /// One momentum step on every layer. Invalidates earlier caches.
    pub fn apply(&mut self, grads: &PathwayGrads, opt: &OptimizerConfig) -> Result<()> {
        if grads.heads.len() != self.heads.len() {
            return Err(Error::shape("PathwayParams::apply", (self.heads.len(), 0), (grads.heads.len(), 0)));
        }
        for (layer, g) in self.trunk.iter_mut().zip(&grads.trunk) {
            layer.sgd_momentum_step(g, opt)?;
        }
        for (layer, g) in self.heads.iter_mut().zip(&grads.heads) {
            layer.sgd_momentum_step(g, opt)?;
        }
        self.version += 1;
        Ok(())
    }

    /// Inference output for `branch`.
    pub fn infer(&self, s: &Matrix, branch: InferenceBranch) -> Result<Matrix> {
        let trunk = self.forward_trunk(s)?;
        match branch {
            InferenceBranch::Semi => self.forward_head(&trunk, Branch::Semi),
            InferenceBranch::Quad => self.forward_head(&trunk, Branch::Quad),
            InferenceBranch::Trunk => Ok(trunk.acts[2].clone()),
        }
    }
}

/// Both pathways, their momentum buffers and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: NetConfig,
    pub image: PathwayParams,
    pub text: PathwayParams,
    pub step: usize,
}

impl ModelState {
    pub fn init(cfg: &NetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let image = PathwayParams::init(cfg, rng);
        let text = PathwayParams::init(cfg, rng);
        Ok(Self { config: *cfg, image, text, step: 0 })
    }

    pub fn zeros(cfg: &NetConfig) -> Self {
        Self { config: *cfg, image: PathwayParams::zeros(cfg), text: PathwayParams::zeros(cfg), step: 0 }
    }

    /// Fits both pathways' input normalization on `rows`.
    pub fn fit_input_norm(&mut self, s_img: &Matrix, s_txt: &Matrix, rows: &[usize]) -> Result<()> {
        self.image.set_input_norm(Some(InputNorm::fit(s_img, rows)?))?;
        self.text.set_input_norm(Some(InputNorm::fit(s_txt, rows)?))
    }

    /// Final representations `(Q_img, Q_txt)` from the configured inference output.
    pub fn embed(&self, s_img: &Matrix, s_txt: &Matrix) -> Result<(Matrix, Matrix)> {
        let b = self.config.inference;
        Ok((self.image.infer(s_img, b)?, self.text.infer(s_txt, b)?))
    }
}
