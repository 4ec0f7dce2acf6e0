//! Pretraining of the shallow shared representations.
//!
//! Each modality gets a two-layer DBN (Gaussian RBM under the image features,
//! replicated softmax under the word counts, binary RBM on top). A bimodal
//! autoencoder over both DBN outputs then provides the shared code; each
//! modality's code is read from the middle layer with the other input zeroed.
//!
//! Callers that already have shared representations can skip this module
//! entirely and hand them to the trainer.

pub mod autoencoder;
pub mod rbm;
pub mod softmax;

use alloc::vec::Vec;

pub use autoencoder::{shared_rep, train_bimodal_ae, AeConfig, AeReport, BimodalAeParams};
pub use rbm::{
    dbn_forward, train_binary_rbm, train_dbn, train_gaussian_rbm, train_replicated_softmax, train_rbm,
    DbnReport, DbnStack, RbmConfig, RbmKind, RbmParams, RbmReport,
};
pub use softmax::{finetune_ae, finetune_dbn, HeadConfig, SoftmaxHead};

use crate::nd::Matrix;
use crate::{derive_seed, Error, Label, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub image_hidden: (usize, usize),
    pub text_hidden: (usize, usize),
    pub image_rbm: RbmConfig,
    pub text_rbm: RbmConfig,
    /// Second (binary) layer of both DBNs.
    pub top_rbm: RbmConfig,
    pub ae: AeConfig,
    /// Supervised softmax fine-tuning of the DBNs and the autoencoder.
    pub softmax_head: bool,
    pub head: HeadConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            image_hidden: (64, 32),
            text_hidden: (64, 32),
            image_rbm: RbmConfig::for_kind(RbmKind::Gaussian),
            text_rbm: RbmConfig::for_kind(RbmKind::ReplicatedSoftmax),
            top_rbm: RbmConfig::for_kind(RbmKind::Binary),
            ae: AeConfig::default(),
            softmax_head: false,
            head: HeadConfig::default(),
            seed: 0,
        }
    }
}

/// Trained base network.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNet {
    pub image_dbn: DbnStack,
    pub text_dbn: DbnStack,
    pub ae: BimodalAeParams,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainReport {
    pub image: DbnReport,
    pub text: DbnReport,
    pub ae: AeReport,
    /// Per-epoch cross-entropy of the optional heads: image DBN, text DBN, autoencoder.
    pub head_losses: Vec<Vec<f64>>,
}

/// Labeled subset used by the optional softmax heads: row indices into the
/// pretraining matrices and their labels.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRows<'a> {
    pub rows: &'a [usize],
    pub labels: &'a [Label],
}

impl BaseNet {
    pub fn image_dim(&self) -> usize {
        self.image_dbn.input_dim()
    }

    pub fn text_dim(&self) -> usize {
        self.text_dbn.input_dim()
    }

    pub fn shared_dim(&self) -> usize {
        self.ae.middle_dim()
    }

    /// DBN outputs `(Y_img, Y_txt)`.
    pub fn dbn_outputs(&self, img: &Matrix, txt: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok((dbn_forward(&self.image_dbn, img)?, dbn_forward(&self.text_dbn, txt)?))
    }

    /// Shallow shared representations `(S_img, S_txt)`.
    pub fn shared_rep(&self, img: &Matrix, txt: &Matrix) -> Result<(Matrix, Matrix)> {
        let (y_img, y_txt) = self.dbn_outputs(img, txt)?;
        shared_rep(&self.ae, &y_img, &y_txt)
    }
}

/// Full base-network pretraining on paired features. `img` should be
/// standardized; `txt` holds nonnegative word counts.
pub fn pretrain(
    img: &Matrix,
    txt: &Matrix,
    labeled: Option<LabeledRows<'_>>,
    cfg: &PretrainConfig,
) -> Result<(BaseNet, PretrainReport)> {
    if img.rows() != txt.rows() {
        return Err(Error::shape("pretrain pairing", (img.rows(), 0), (txt.rows(), 0)));
    }
    let seeded = |c: &RbmConfig, stream| RbmConfig { seed: derive_seed(cfg.seed, stream), ..*c };
    let (mut image_dbn, image_report) = train_dbn(
        img,
        RbmKind::Gaussian,
        cfg.image_hidden,
        &seeded(&cfg.image_rbm, 1),
        &seeded(&cfg.top_rbm, 2),
    )?;
    let (mut text_dbn, text_report) = train_dbn(
        txt,
        RbmKind::ReplicatedSoftmax,
        cfg.text_hidden,
        &seeded(&cfg.text_rbm, 3),
        &seeded(&cfg.top_rbm, 4),
    )?;

    let mut head_losses = Vec::new();
    let head_cfg = |stream| HeadConfig { seed: derive_seed(cfg.seed, stream), ..cfg.head };
    let labeled = if cfg.softmax_head { labeled } else { None };
    if let Some(l) = labeled {
        let (_, li) = finetune_dbn(&mut image_dbn, &img.select_rows(l.rows)?, l.labels, &head_cfg(6))?;
        let (_, lt) = finetune_dbn(&mut text_dbn, &txt.select_rows(l.rows)?, l.labels, &head_cfg(7))?;
        head_losses.push(li);
        head_losses.push(lt);
    }

    let y_img = dbn_forward(&image_dbn, img)?;
    let y_txt = dbn_forward(&text_dbn, txt)?;
    let ae_cfg = AeConfig { seed: derive_seed(cfg.seed, 5), ..cfg.ae };
    let (mut ae, ae_report) = train_bimodal_ae(&y_img, &y_txt, &ae_cfg)?;
    if let Some(l) = labeled {
        let (_, la) = finetune_ae(
            &mut ae,
            &y_img.select_rows(l.rows)?,
            &y_txt.select_rows(l.rows)?,
            l.labels,
            &head_cfg(8),
        )?;
        head_losses.push(la);
    }

    Ok((
        BaseNet { image_dbn, text_dbn, ae },
        PretrainReport {
            image: image_report,
            text: text_report,
            ae: ae_report,
            head_losses,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn toy(n: usize) -> (Matrix, Matrix, Vec<Label>) {
        let mut rng = crate::rng_from_seed(3);
        let mut img = Matrix::zeros(n, 6);
        let mut txt = Matrix::zeros(n, 8);
        let mut labels = Vec::new();
        for r in 0..n {
            let c = r % 2;
            labels.push(c as Label);
            for j in 0..6 {
                let mu = if (j + c) % 2 == 0 { 1.0 } else { -1.0 };
                img.set(r, j, mu + 0.3 * (rng.random::<f64>() - 0.5));
            }
            for _ in 0..10 {
                let w = c * 4 + rng.random_range(0..4);
                txt.set(r, w, txt.get(r, w) + 1.0);
            }
        }
        (img, txt, labels)
    }

    fn small_cfg() -> PretrainConfig {
        let mut cfg = PretrainConfig {
            image_hidden: (8, 6),
            text_hidden: (8, 4),
            ..PretrainConfig::default()
        };
        cfg.image_rbm.epochs = 5;
        cfg.text_rbm.epochs = 5;
        cfg.top_rbm.epochs = 5;
        cfg.ae.epochs = 5;
        cfg.head.epochs = 3;
        cfg
    }

    #[test]
    fn pretrain_shapes_and_determinism() {
        let (img, txt, _) = toy(40);
        let cfg = small_cfg();
        let (net, report) = pretrain(&img, &txt, None, &cfg).unwrap();
        assert_eq!(net.shared_dim(), 5);
        let (si, st) = net.shared_rep(&img, &txt).unwrap();
        assert_eq!(si.shape(), (40, 5));
        assert_eq!(st.shape(), (40, 5));
        assert_eq!(report.ae.epoch_losses.len(), 5);
        assert!(report.head_losses.is_empty());
        let (again, _) = pretrain(&img, &txt, None, &cfg).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn softmax_heads_run_when_enabled() {
        let (img, txt, labels) = toy(40);
        let rows: Vec<usize> = (0..20).collect();
        let cfg = PretrainConfig { softmax_head: true, ..small_cfg() };
        let l = LabeledRows { rows: &rows, labels: &labels[..20] };
        let (_, report) = pretrain(&img, &txt, Some(l), &cfg).unwrap();
        assert_eq!(report.head_losses.len(), 3);
        assert!(report.head_losses.iter().all(|h| h.iter().all(|v| v.is_finite())));
    }
}
