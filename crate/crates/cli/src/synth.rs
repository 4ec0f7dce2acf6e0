//! Synthetic paired image/text benchmark with class structure.
//!
//! Every class owns a latent center `z_c`. Image features are
//! `z_c · P_img + N(0, σ_img²)`. Text rows are bags of words: `doc_length`
//! draws from `softmax(z_c · P_txt + N(0, σ_txt²))`.

use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand_distr::Normal;
use xmmr_core::{Label, Matrix};

use crate::error::{CliError, Result};
use crate::formats::{format_labels, format_matrix, format_split, write_text, Part, SplitEntry};
use crate::ingest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub latent_dim: usize,
    pub image_noise: f64,
    pub text_noise: f64,
    pub doc_length: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Share of train rows whose labels are hidden.
    pub unlabeled_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 200,
            image_dim: 32,
            text_dim: 24,
            latent_dim: 8,
            image_noise: 1.0,
            text_noise: 1.0,
            doc_length: 50,
            train_frac: 0.7,
            val_frac: 0.1,
            unlabeled_frac: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if self.classes < 2 || self.per_class == 0 || self.image_dim == 0 || self.text_dim == 0 || self.latent_dim == 0 {
            return Err(CliError::usage("synth needs >= 2 classes and positive sizes"));
        }
        if self.doc_length == 0 {
            return Err(CliError::usage("synth.doc_length must be positive"));
        }
        if !(self.image_noise >= 0.0 && self.text_noise >= 0.0) {
            return Err(CliError::usage("synth noise levels must be >= 0"));
        }
        if !(frac(self.train_frac) && frac(self.val_frac) && frac(self.unlabeled_frac))
            || self.train_frac + self.val_frac > 1.0
        {
            return Err(CliError::usage("synth split fractions must lie in [0, 1] and sum to at most 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub image: Matrix,
    pub text: Matrix,
    pub labels: Vec<Label>,
    pub split: Vec<SplitEntry>,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut xmmr_core::Rng) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite samples")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = xmmr_core::rng_from_seed(cfg.seed);
    let proj_std = 1.0 / (cfg.latent_dim as f64).sqrt();
    let centers = gaussian_matrix(cfg.classes, cfg.latent_dim, 1.0, &mut rng);
    let p_img = gaussian_matrix(cfg.latent_dim, cfg.image_dim, proj_std, &mut rng);
    let p_txt = gaussian_matrix(cfg.latent_dim, cfg.text_dim, proj_std, &mut rng);
    let mean_img = centers.matmul(&p_img)?;
    let mean_txt = centers.matmul(&p_txt)?;
    let img_noise = Normal::new(0.0, cfg.image_noise).expect("finite noise");
    let txt_noise = Normal::new(0.0, cfg.text_noise).expect("finite noise");

    let n = cfg.classes * cfg.per_class;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut image = Matrix::zeros(n, cfg.image_dim);
    let mut text = Matrix::zeros(n, cfg.text_dim);
    let mut labels = Vec::with_capacity(n);
    let mut logits = vec![0.0; cfg.text_dim];
    for (row, &slot) in order.iter().enumerate() {
        let c = slot / cfg.per_class;
        labels.push(c as Label);
        for (v, mu) in image.row_mut(row).iter_mut().zip(mean_img.row(c)) {
            *v = mu + img_noise.sample(&mut rng);
        }
        for (l, mu) in logits.iter_mut().zip(mean_txt.row(c)) {
            *l = mu + txt_noise.sample(&mut rng);
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let words = WeightedIndex::new(logits.iter().map(|l| (l - top).exp())).expect("positive weights");
        let counts = text.row_mut(row);
        for _ in 0..cfg.doc_length {
            counts[words.sample(&mut rng)] += 1.0;
        }
    }

    let n_train = (cfg.train_frac * n as f64).round() as usize;
    let n_val = ((cfg.val_frac * n as f64).round() as usize).min(n - n_train);
    let n_unlabeled = (cfg.unlabeled_frac * n_train as f64).round() as usize;
    let split = (0..n)
        .map(|i| {
            if i < n_train {
                SplitEntry { part: Part::Train, unlabeled: i < n_unlabeled }
            } else if i < n_train + n_val {
                SplitEntry { part: Part::Val, unlabeled: false }
            } else {
                SplitEntry { part: Part::Test, unlabeled: false }
            }
        })
        .collect();
    Ok(SynthData { image, text, labels, split })
}

/// Writes `image.txt`, `text.txt`, `labels.txt`, `split.txt` and
/// `manifest.txt` into `dir`; returns the manifest path.
pub fn write(data: &SynthData, dir: &Path) -> Result<PathBuf> {
    write_text(&dir.join("image.txt"), &format_matrix(&data.image))?;
    write_text(&dir.join("text.txt"), &format_matrix(&data.text))?;
    write_text(&dir.join("labels.txt"), &format_labels(&data.labels))?;
    write_text(&dir.join("split.txt"), &format_split(&data.split))?;
    let manifest = dir.join("manifest.txt");
    let dims = (data.image.cols(), data.text.cols());
    write_text(&manifest, &Manifest::render("image.txt", "text.txt", "labels.txt", "split.txt", dims))?;
    Ok(manifest)
}
