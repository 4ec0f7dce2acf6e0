//! Optional supervised fine-tuning: a softmax classifier attached to the DBN
//! top layer or to the autoencoder middle layer, trained with cross-entropy
//! on labeled rows and backpropagated into the layers below it.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::autoencoder::{internals, BimodalAeParams};
use super::rbm::DbnStack;
use crate::nd::{momentum_update, sigmoid_backward, sigmoid_scalar, AffineLayer, InitScheme, Matrix, OptimizerConfig};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl HeadConfig {
    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: 0.0,
            max_steps: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub layer: AffineLayer,
    /// Sorted distinct labels; output unit `k` stands for `classes[k]`.
    pub classes: Vec<Label>,
}

impl SoftmaxHead {
    pub fn predict(&self, features: &Matrix) -> Result<Vec<Label>> {
        let logits = self.layer.forward(features)?;
        Ok(logits
            .iter_rows()
            .map(|r| {
                let k = r
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > r[best] { i } else { best });
                self.classes[k]
            })
            .collect())
    }
}

fn class_targets(labels: &[Label]) -> Result<(Vec<Label>, Vec<usize>)> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate("softmax head needs at least two classes".into()));
    }
    let targets = labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap_or(0))
        .collect();
    Ok((classes, targets))
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != targets.len() {
        return Err(Error::shape("cross_entropy", (targets.len(), logits.cols()), logits.shape()));
    }
    let n = logits.rows().max(1) as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(Error::IndexOutOfRange { index: t, len: logits.cols() });
        }
        let row = grad.row_mut(r);
        super::rbm::softmax_in_place(row);
        loss -= libm::log(row[t].max(1e-300));
        row[t] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss / n, grad))
}

fn check_labels(rows: usize, labels: &[Label]) -> Result<()> {
    if rows != labels.len() {
        return Err(Error::shape("softmax labels", (rows, 1), (labels.len(), 1)));
    }
    Ok(())
}

/// Fine-tunes the autoencoder encoders and shared layer through a softmax
/// head on the middle code. All three input views (joint, image-only,
/// text-only) are classified. Returns the head and per-epoch mean losses.
pub fn finetune_ae(
    ae: &mut BimodalAeParams,
    y_img: &Matrix,
    y_txt: &Matrix,
    labels: &[Label],
    cfg: &HeadConfig,
) -> Result<(SoftmaxHead, Vec<f64>)> {
    check_labels(y_img.rows(), labels)?;
    let (classes, targets) = class_targets(labels)?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut head = SoftmaxHead {
        layer: AffineLayer::init(ae.middle_dim(), classes.len(), InitScheme::FanInUniform, &mut rng),
        classes,
    };
    let opt = cfg.optimizer();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (xi, xt) = internals::views(&y_img.select_rows(chunk)?, &y_txt.select_rows(chunk)?)?;
            let t: Vec<usize> = (0..3).flat_map(|_| chunk.iter().map(|&i| targets[i])).collect();
            let (middle, cache) = internals::encode_cached(ae, xi, xt)?;
            let (loss, g_logits) = cross_entropy(&head.layer.forward(&middle)?, &t)?;
            let g_middle = head.layer.input_grad(&g_logits)?;
            let g_head = head.layer.param_grads(&middle, &g_logits)?;
            head.layer.sgd_momentum_step(&g_head, &opt)?;
            internals::step_encoders(ae, &cache, &g_middle, &opt)?;
            total += loss;
            batches += 1.0;
        }
        losses.push(total / batches);
    }
    Ok((head, losses))
}

/// Fine-tunes both DBN layers (weights and hidden biases) through a softmax
/// head on the top hidden layer.
pub fn finetune_dbn(
    stack: &mut DbnStack,
    x: &Matrix,
    labels: &[Label],
    cfg: &HeadConfig,
) -> Result<(SoftmaxHead, Vec<f64>)> {
    check_labels(x.rows(), labels)?;
    let (classes, targets) = class_targets(labels)?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut head = SoftmaxHead {
        layer: AffineLayer::init(stack.output_dim(), classes.len(), InitScheme::FanInUniform, &mut rng),
        classes,
    };
    let opt = cfg.optimizer();
    let mut vel_w1 = vec![0.0; stack.layer1.weight.as_slice().len()];
    let mut vel_b1 = vec![0.0; stack.layer1.hidden_dim()];
    let mut vel_w2 = vec![0.0; stack.layer2.weight.as_slice().len()];
    let mut vel_b2 = vec![0.0; stack.layer2.hidden_dim()];
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select_rows(chunk)?;
            let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let scales = stack.layer1.bias_scales(&xb);
            let h1 = stack.layer1.hidden_preactivation(&xb)?.map(sigmoid_scalar);
            let h2 = stack.layer2.hidden_probs(&h1)?;
            let (loss, g_logits) = cross_entropy(&head.layer.forward(&h2)?, &t)?;
            let g_head = head.layer.param_grads(&h2, &g_logits)?;
            let d2 = sigmoid_backward(&h2, &head.layer.input_grad(&g_logits)?)?;
            let g_w2 = h1.matmul_tn(&d2)?;
            let g_b2 = d2.column_sums();
            let d1 = sigmoid_backward(&h1, &d2.matmul_nt(&stack.layer2.weight)?)?;
            let g_w1 = xb.matmul_tn(&d1)?;
            let mut g_b1 = vec![0.0; d1.cols()];
            for (r, s) in scales.iter().enumerate() {
                crate::nd::axpy(*s, d1.row(r), &mut g_b1);
            }
            head.layer.sgd_momentum_step(&g_head, &opt)?;
            let (lr, m) = (opt.learning_rate, opt.momentum);
            momentum_update(stack.layer2.weight.as_mut_slice(), &mut vel_w2, g_w2.as_slice(), lr, m, 0.0);
            momentum_update(&mut stack.layer2.hidden_bias, &mut vel_b2, &g_b2, lr, m, 0.0);
            momentum_update(stack.layer1.weight.as_mut_slice(), &mut vel_w1, g_w1.as_slice(), lr, m, 0.0);
            momentum_update(&mut stack.layer1.hidden_bias, &mut vel_b1, &g_b1, lr, m, 0.0);
            total += loss;
            batches += 1.0;
        }
        losses.push(total / batches);
    }
    Ok((head, losses))
}
