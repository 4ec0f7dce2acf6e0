//! Restricted Boltzmann machines trained with one step of contrastive
//! divergence (CD-1), and the two-layer DBN stacks built from them.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::nd::{axpy, init_with_rng, momentum_update, sigmoid_scalar, InitScheme, Matrix};
use crate::{Error, Result, Rng};

/// Visible-unit model of an RBM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbmKind {
    /// Real-valued unit-variance visible units; data must be standardized.
    Gaussian,
    /// Word-count visible units sharing one softmax, hidden bias scaled by
    /// document length.
    ReplicatedSoftmax,
    /// Bernoulli visible units.
    Binary,
}

impl RbmKind {
    pub fn tag(self) -> &'static str {
        match self {
            RbmKind::Gaussian => "gaussian",
            RbmKind::ReplicatedSoftmax => "replicated_softmax",
            RbmKind::Binary => "binary",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "gaussian" => Some(RbmKind::Gaussian),
            "replicated_softmax" => Some(RbmKind::ReplicatedSoftmax),
            "binary" => Some(RbmKind::Binary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// `visible × hidden`.
    pub weight: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub kind: RbmKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl RbmConfig {
    /// Defaults for a given visible-unit model.
    pub fn for_kind(kind: RbmKind) -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: match kind {
                RbmKind::ReplicatedSoftmax => 0.001,
                _ => 0.01,
            },
            momentum: 0.5,
            weight_decay: 0.0,
            init_scale: 0.01,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("rbm batch_size must be > 0"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("rbm learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("rbm momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean reconstruction error before training and after each epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RbmReport {
    pub initial_error: f64,
    pub epoch_errors: Vec<f64>,
}

fn row_sums(v: &Matrix) -> Vec<f64> {
    v.iter_rows().map(|r| r.iter().sum()).collect()
}

impl RbmParams {
    pub fn init(visible: usize, hidden: usize, kind: RbmKind, scale: f64, rng: &mut Rng) -> Self {
        Self {
            weight: init_with_rng(visible, hidden, InitScheme::Uniform(scale), rng),
            visible_bias: vec![0.0; visible],
            hidden_bias: vec![0.0; hidden],
            kind,
        }
    }

    pub fn zeros(visible: usize, hidden: usize, kind: RbmKind) -> Self {
        Self {
            weight: Matrix::zeros(visible, hidden),
            visible_bias: vec![0.0; visible],
            hidden_bias: vec![0.0; hidden],
            kind,
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Multiplier of the hidden bias for each row: the document length for
    /// replicated softmax, 1 otherwise.
    pub fn bias_scales(&self, v: &Matrix) -> Vec<f64> {
        match self.kind {
            RbmKind::ReplicatedSoftmax => row_sums(v),
            _ => vec![1.0; v.rows()],
        }
    }

    /// `v · W + scale_p · b_hidden`.
    pub fn hidden_preactivation(&self, v: &Matrix) -> Result<Matrix> {
        if v.cols() != self.visible_dim() {
            return Err(Error::shape("rbm hidden", (v.rows(), self.visible_dim()), v.shape()));
        }
        let mut pre = v.matmul(&self.weight)?;
        for (r, s) in self.bias_scales(v).into_iter().enumerate() {
            axpy(s, &self.hidden_bias, pre.row_mut(r));
        }
        Ok(pre)
    }

    /// `P(h = 1 | v)`.
    pub fn hidden_probs(&self, v: &Matrix) -> Result<Matrix> {
        Ok(self.hidden_preactivation(v)?.map(sigmoid_scalar))
    }

    fn visible_preactivation(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.hidden_dim() {
            return Err(Error::shape("rbm visible", (h.rows(), self.hidden_dim()), h.shape()));
        }
        let mut pre = h.matmul_nt(&self.weight)?;
        for r in 0..pre.rows() {
            axpy(1.0, &self.visible_bias, pre.row_mut(r));
        }
        Ok(pre)
    }

    /// Per-row softmax over visible units. Only meaningful for replicated
    /// softmax, where each row is a word distribution summing to 1.
    pub fn visible_distribution(&self, h: &Matrix) -> Result<Matrix> {
        let mut pre = self.visible_preactivation(h)?;
        for r in 0..pre.rows() {
            softmax_in_place(pre.row_mut(r));
        }
        Ok(pre)
    }

    /// Mean-field reconstruction of the visible layer. `doc_lengths` is only
    /// consulted for replicated softmax.
    pub fn visible_mean(&self, h: &Matrix, doc_lengths: &[f64]) -> Result<Matrix> {
        match self.kind {
            RbmKind::Gaussian => self.visible_preactivation(h),
            RbmKind::Binary => Ok(self.visible_preactivation(h)?.map(sigmoid_scalar)),
            RbmKind::ReplicatedSoftmax => {
                if doc_lengths.len() != h.rows() {
                    return Err(Error::shape("rbm visible_mean", (h.rows(), 1), (doc_lengths.len(), 1)));
                }
                let mut dist = self.visible_distribution(h)?;
                for (r, &d) in doc_lengths.iter().enumerate() {
                    dist.row_mut(r).iter_mut().for_each(|x| *x *= d);
                }
                Ok(dist)
            }
        }
    }

    /// Deterministic `v -> P(h|v) -> E[v|h]` pass.
    pub fn reconstruct(&self, v: &Matrix) -> Result<Matrix> {
        let h = self.hidden_probs(v)?;
        self.visible_mean(&h, &self.bias_scales(v))
    }

    /// Mean squared reconstruction error per visible unit.
    pub fn reconstruction_error(&self, v: &Matrix) -> Result<f64> {
        if v.is_empty() {
            return Ok(0.0);
        }
        let rec = self.reconstruct(v)?;
        Ok(rec.sub(v)?.sum_squares() / (v.rows() * v.cols()) as f64)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

fn validate_data(data: &Matrix, hidden_dim: usize, kind: RbmKind) -> Result<()> {
    if hidden_dim == 0 {
        return Err(Error::invalid("hidden_dim must be > 0"));
    }
    if data.is_empty() || data.cols() == 0 {
        return Err(Error::Empty("rbm training data"));
    }
    data.ensure_finite("rbm training data")?;
    if kind == RbmKind::ReplicatedSoftmax {
        if data.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("replicated softmax needs nonnegative counts"));
        }
        if let Some(r) = data.iter_rows().position(|r| r.iter().sum::<f64>() <= 0.0) {
            return Err(Error::invalid(alloc::format!(
                "replicated softmax row {r} has zero word count"
            )));
        }
    }
    Ok(())
}

struct Velocity {
    weight: Matrix,
    visible: Vec<f64>,
    hidden: Vec<f64>,
}

/// One CD-1 update on a mini-batch; returns the batch reconstruction error.
fn cd1_step(
    params: &mut RbmParams,
    vel: &mut Velocity,
    v0: &Matrix,
    cfg: &RbmConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let scales = params.bias_scales(v0);
    let h0 = params.hidden_probs(v0)?;
    let h0_sample = h0.map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    let v1 = params.visible_mean(&h0_sample, &scales)?;
    let h1 = params.hidden_probs(&v1)?;

    let b = v0.rows() as f64;
    let mut grad_w = v0.matmul_tn(&h0)?;
    grad_w.add_scaled(-1.0, &v1.matmul_tn(&h1)?)?;
    grad_w.scale(1.0 / b);

    let diff_v = v0.sub(&v1)?;
    let mut grad_a = diff_v.column_sums();
    grad_a.iter_mut().for_each(|g| *g /= b);

    let mut grad_b = vec![0.0; params.hidden_dim()];
    for (r, &s) in scales.iter().enumerate() {
        for ((g, x0), x1) in grad_b.iter_mut().zip(h0.row(r)).zip(h1.row(r)) {
            *g += s * (x0 - x1) / b;
        }
    }

    // CD ascends the log-likelihood; momentum_update descends, so negate.
    let neg = |g: &mut [f64]| g.iter_mut().for_each(|x| *x = -*x);
    neg(grad_w.as_mut_slice());
    neg(&mut grad_a);
    neg(&mut grad_b);
    let (lr, mom, wd) = (cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    momentum_update(params.weight.as_mut_slice(), vel.weight.as_mut_slice(), grad_w.as_slice(), lr, mom, wd);
    momentum_update(&mut params.visible_bias, &mut vel.visible, &grad_a, lr, mom, 0.0);
    momentum_update(&mut params.hidden_bias, &mut vel.hidden, &grad_b, lr, mom, 0.0);

    Ok(diff_v.sum_squares() / (v0.rows() * v0.cols()) as f64)
}

/// Trains an RBM of the given kind with CD-1 and mean-field reconstruction.
pub fn train_rbm(
    data: &Matrix,
    hidden_dim: usize,
    kind: RbmKind,
    cfg: &RbmConfig,
) -> Result<(RbmParams, RbmReport)> {
    validate_data(data, hidden_dim, kind)?;
    cfg.validate()?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut params = RbmParams::init(data.cols(), hidden_dim, kind, cfg.init_scale, &mut rng);
    let mut vel = Velocity {
        weight: Matrix::zeros(data.cols(), hidden_dim),
        visible: vec![0.0; data.cols()],
        hidden: vec![0.0; hidden_dim],
    };
    let mut report = RbmReport {
        initial_error: params.reconstruction_error(data)?,
        epoch_errors: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..data.rows()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select_rows(chunk)?;
            cd1_step(&mut params, &mut vel, &batch, cfg, &mut rng)?;
        }
        if !params.weight.is_finite() {
            return Err(Error::NonFinite("rbm weights diverged"));
        }
        report.epoch_errors.push(params.reconstruction_error(data)?);
    }
    Ok((params, report))
}

pub fn train_gaussian_rbm(data: &Matrix, hidden_dim: usize, cfg: &RbmConfig) -> Result<(RbmParams, RbmReport)> {
    train_rbm(data, hidden_dim, RbmKind::Gaussian, cfg)
}

pub fn train_replicated_softmax(
    data: &Matrix,
    hidden_dim: usize,
    cfg: &RbmConfig,
) -> Result<(RbmParams, RbmReport)> {
    train_rbm(data, hidden_dim, RbmKind::ReplicatedSoftmax, cfg)
}

pub fn train_binary_rbm(data: &Matrix, hidden_dim: usize, cfg: &RbmConfig) -> Result<(RbmParams, RbmReport)> {
    train_rbm(data, hidden_dim, RbmKind::Binary, cfg)
}

/// Two stacked RBMs; the second models the hidden means of the first.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnStack {
    pub layer1: RbmParams,
    pub layer2: RbmParams,
}

impl DbnStack {
    pub fn new(layer1: RbmParams, layer2: RbmParams) -> Result<Self> {
        if layer1.hidden_dim() != layer2.visible_dim() {
            return Err(Error::shape(
                "DbnStack::new",
                (layer1.hidden_dim(), 0),
                (layer2.visible_dim(), 0),
            ));
        }
        Ok(Self { layer1, layer2 })
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.visible_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layer2.hidden_dim()
    }
}

/// Deterministic mean-field pass through both layers.
pub fn dbn_forward(stack: &DbnStack, x: &Matrix) -> Result<Matrix> {
    let h1 = stack.layer1.hidden_probs(x)?;
    stack.layer2.hidden_probs(&h1)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DbnReport {
    pub layer1: RbmReport,
    pub layer2: RbmReport,
}

/// Greedy layer-wise training: `kind` for the first layer, binary for the second.
pub fn train_dbn(
    data: &Matrix,
    kind: RbmKind,
    hidden: (usize, usize),
    cfg1: &RbmConfig,
    cfg2: &RbmConfig,
) -> Result<(DbnStack, DbnReport)> {
    let (layer1, r1) = train_rbm(data, hidden.0, kind, cfg1)?;
    let h1 = layer1.hidden_probs(data)?;
    let (layer2, r2) = train_rbm(&h1, hidden.1, RbmKind::Binary, cfg2)?;
    Ok((DbnStack::new(layer1, layer2)?, DbnReport { layer1: r1, layer2: r2 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::sigmoid_scalar;

    fn two_clusters(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::rng_from_seed(seed);
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            for c in 0..cols {
                let center = if c % 2 == 0 { sign } else { -sign };
                m.set(r, c, center + 0.3 * (rng.random::<f64>() - 0.5));
            }
        }
        m
    }

    fn counts(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::rng_from_seed(seed);
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let topic = r % 2;
            for _ in 0..20 {
                let w = if rng.random::<f64>() < 0.8 {
                    topic * cols / 2 + rng.random_range(0..cols / 2)
                } else {
                    rng.random_range(0..cols)
                };
                m.set(r, w, m.get(r, w) + 1.0);
            }
        }
        m
    }

    #[test]
    fn zero_data_hidden_is_sigmoid_of_bias() {
        let data = Matrix::zeros(16, 5);
        let cfg = RbmConfig { epochs: 5, batch_size: 8, ..RbmConfig::for_kind(RbmKind::Gaussian) };
        let (p, _) = train_gaussian_rbm(&data, 3, &cfg).unwrap();
        let h = p.hidden_probs(&data).unwrap();
        for r in 0..16 {
            for j in 0..3 {
                assert_eq!(h.get(r, j), sigmoid_scalar(p.hidden_bias[j]));
            }
        }
        let rec = p.reconstruct(&data).unwrap();
        let wmax = p.weight.max_abs();
        for r in 0..16 {
            for (i, a) in p.visible_bias.iter().enumerate() {
                // |W h| <= hidden_dim * max|W| with h in (0, 1)
                assert!((rec.get(r, i) - a).abs() <= 3.0 * wmax + 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_rbm_reduces_reconstruction_error() {
        let data = two_clusters(256, 8, 1);
        let cfg = RbmConfig { epochs: 30, seed: 4, ..RbmConfig::for_kind(RbmKind::Gaussian) };
        let (_, report) = train_gaussian_rbm(&data, 64, &cfg).unwrap();
        let last = *report.epoch_errors.last().unwrap();
        assert!(last < report.initial_error, "{} !< {}", last, report.initial_error);
    }

    #[test]
    fn rbm_training_is_deterministic() {
        let data = two_clusters(64, 6, 2);
        let cfg = RbmConfig { epochs: 3, seed: 9, ..RbmConfig::for_kind(RbmKind::Gaussian) };
        let a = train_gaussian_rbm(&data, 4, &cfg).unwrap();
        let b = train_gaussian_rbm(&data, 4, &cfg).unwrap();
        assert_eq!(a, b);
        let c = counts(32, 10, 3);
        let rs = RbmConfig { epochs: 3, seed: 9, ..RbmConfig::for_kind(RbmKind::ReplicatedSoftmax) };
        assert_eq!(
            train_replicated_softmax(&c, 4, &rs).unwrap(),
            train_replicated_softmax(&c, 4, &rs).unwrap()
        );
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let data = two_clusters(32, 4, 5);
        let cfg = RbmConfig { epochs: 2, learning_rate: 0.0, seed: 11, ..RbmConfig::for_kind(RbmKind::Gaussian) };
        let (p, _) = train_gaussian_rbm(&data, 3, &cfg).unwrap();
        let init = RbmParams::init(4, 3, RbmKind::Gaussian, cfg.init_scale, &mut crate::rng_from_seed(11));
        assert_eq!(p, init);
    }

    #[test]
    fn replicated_softmax_single_word_documents() {
        let mut data = Matrix::zeros(6, 6);
        for r in 0..6 {
            data.set(r, r, 1.0);
        }
        let cfg = RbmConfig { epochs: 20, batch_size: 3, ..RbmConfig::for_kind(RbmKind::ReplicatedSoftmax) };
        let (p, report) = train_replicated_softmax(&data, 2, &cfg).unwrap();
        assert!(report.epoch_errors.iter().all(|e| e.is_finite()));
        let dist = p.visible_distribution(&p.hidden_probs(&data).unwrap()).unwrap();
        for r in dist.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn replicated_softmax_bias_scales_with_length() {
        let mut rng = crate::rng_from_seed(1);
        let mut p = RbmParams::init(5, 3, RbmKind::ReplicatedSoftmax, 0.5, &mut rng);
        p.hidden_bias = vec![0.3, -0.7, 1.1];
        let v = Matrix::from_rows(&[[1.0, 0.0, 2.0, 0.0, 1.0]]).unwrap();
        let v2 = v.scaled(2.0);
        let zero_w = RbmParams { weight: Matrix::zeros(5, 3), ..p.clone() };
        let b1 = zero_w.hidden_preactivation(&v).unwrap();
        let b2 = zero_w.hidden_preactivation(&v2).unwrap();
        for j in 0..3 {
            assert!((b1.get(0, j) - 4.0 * p.hidden_bias[j]).abs() < 1e-12);
            assert!((b2.get(0, j) - 2.0 * b1.get(0, j)).abs() < 1e-12);
        }
        let full1 = p.hidden_preactivation(&v).unwrap();
        let full2 = p.hidden_preactivation(&v2).unwrap();
        for j in 0..3 {
            assert!((full2.get(0, j) - 2.0 * full1.get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn replicated_softmax_rejects_bad_counts() {
        let cfg = RbmConfig::for_kind(RbmKind::ReplicatedSoftmax);
        let neg = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        assert!(train_replicated_softmax(&neg, 2, &cfg).is_err());
        let zero_row = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(train_replicated_softmax(&zero_row, 2, &cfg).is_err());
        let ok = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(train_replicated_softmax(&ok, 0, &cfg).is_err());
    }

    #[test]
    fn dbn_zero_params_give_half() {
        let stack = DbnStack::new(
            RbmParams::zeros(4, 3, RbmKind::Gaussian),
            RbmParams::zeros(3, 2, RbmKind::Binary),
        )
        .unwrap();
        let out = dbn_forward(&stack, &Matrix::filled(5, 4, 1.7)).unwrap();
        assert_eq!(out.shape(), (5, 2));
        assert!(out.as_slice().iter().all(|&v| v == 0.5));
        assert!(dbn_forward(&stack, &Matrix::zeros(1, 3)).is_err());
        assert!(DbnStack::new(RbmParams::zeros(4, 3, RbmKind::Gaussian), RbmParams::zeros(2, 2, RbmKind::Binary)).is_err());
    }

    #[test]
    fn dbn_single_unit_is_monotone() {
        let mut l1 = RbmParams::zeros(1, 1, RbmKind::Gaussian);
        l1.weight.set(0, 0, 1.5);
        let mut l2 = RbmParams::zeros(1, 1, RbmKind::Binary);
        l2.weight.set(0, 0, 2.0);
        l2.hidden_bias[0] = -1.0;
        let stack = DbnStack::new(l1, l2).unwrap();
        let xs: Vec<[f64; 1]> = (0..41).map(|i| [-4.0 + 0.2 * i as f64]).collect();
        let out = dbn_forward(&stack, &Matrix::from_rows(&xs).unwrap()).unwrap();
        for w in out.as_slice().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn rbm_rejects_non_finite_data() {
        let mut data = Matrix::zeros(2, 2);
        data.as_mut_slice()[1] = f64::INFINITY;
        let cfg = RbmConfig::for_kind(RbmKind::Gaussian);
        assert!(matches!(train_gaussian_rbm(&data, 2, &cfg), Err(Error::NonFinite(_))));
    }
}
