//! Bimodal autoencoder: per-modality encoders feed one shared middle layer,
//! from which both modalities are reconstructed.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::nd::{sigmoid, sigmoid_backward, AffineGrads, AffineLayer, InitScheme, Matrix, OptimizerConfig};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct BimodalAeParams {
    pub image_encoder: AffineLayer,
    pub text_encoder: AffineLayer,
    pub shared_layer: AffineLayer,
    /// `(middle -> image hidden, image hidden -> image input)`.
    pub image_decoder: (AffineLayer, AffineLayer),
    pub text_decoder: (AffineLayer, AffineLayer),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeConfig {
    /// Encoder widths; `None` keeps each modality's input width.
    pub encoder_dims: Option<(usize, usize)>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Also train on image-only and text-only inputs (absent modality zeroed)
    /// so each modality alone maps close to the joint code.
    pub single_modality_views: bool,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            encoder_dims: None,
            epochs: 100,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            single_modality_views: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AeReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Middle width for a pair of input widths: half the concatenated input.
pub fn middle_dim(image_dim: usize, text_dim: usize) -> usize {
    (image_dim + text_dim) / 2
}

struct Cache {
    x_img: Matrix,
    x_txt: Matrix,
    e_img: Matrix,
    e_txt: Matrix,
    middle: Matrix,
    h_img: Matrix,
    r_img: Matrix,
    h_txt: Matrix,
    r_txt: Matrix,
}

impl BimodalAeParams {
    pub fn new(
        image_encoder: AffineLayer,
        text_encoder: AffineLayer,
        shared_layer: AffineLayer,
        image_decoder: (AffineLayer, AffineLayer),
        text_decoder: (AffineLayer, AffineLayer),
    ) -> Result<Self> {
        let p = Self {
            image_encoder,
            text_encoder,
            shared_layer,
            image_decoder,
            text_decoder,
        };
        p.check_structure()?;
        Ok(p)
    }

    fn check_structure(&self) -> Result<()> {
        let (ei, et) = (&self.image_encoder, &self.text_encoder);
        let mid = middle_dim(ei.in_dim(), et.in_dim());
        let bad = |what: &str| Err(Error::invalid(alloc::format!("bimodal autoencoder: {what}")));
        if self.shared_layer.in_dim() != ei.out_dim() + et.out_dim() {
            return bad("shared layer input must concatenate both encoders");
        }
        if self.shared_layer.out_dim() != mid {
            return bad("middle layer must be half the concatenated input");
        }
        for (enc, dec) in [(ei, &self.image_decoder), (et, &self.text_decoder)] {
            if dec.0.in_dim() != mid || dec.0.out_dim() != enc.out_dim() {
                return bad("decoder hidden layer must mirror its encoder");
            }
            if dec.1.in_dim() != enc.out_dim() || dec.1.out_dim() != enc.in_dim() {
                return bad("reconstruction layer must match the input width");
            }
        }
        Ok(())
    }

    pub fn init(image_dim: usize, text_dim: usize, encoder_dims: (usize, usize), rng: &mut Rng) -> Self {
        let (hi, ht) = encoder_dims;
        let mid = middle_dim(image_dim, text_dim);
        let s = InitScheme::FanInUniform;
        Self {
            image_encoder: AffineLayer::init(image_dim, hi, s, rng),
            text_encoder: AffineLayer::init(text_dim, ht, s, rng),
            shared_layer: AffineLayer::init(hi + ht, mid, s, rng),
            image_decoder: (AffineLayer::init(mid, hi, s, rng), AffineLayer::init(hi, image_dim, s, rng)),
            text_decoder: (AffineLayer::init(mid, ht, s, rng), AffineLayer::init(ht, text_dim, s, rng)),
        }
    }

    pub fn zeros(image_dim: usize, text_dim: usize, encoder_dims: (usize, usize)) -> Self {
        let (hi, ht) = encoder_dims;
        let mid = middle_dim(image_dim, text_dim);
        Self {
            image_encoder: AffineLayer::zeros(image_dim, hi),
            text_encoder: AffineLayer::zeros(text_dim, ht),
            shared_layer: AffineLayer::zeros(hi + ht, mid),
            image_decoder: (AffineLayer::zeros(mid, hi), AffineLayer::zeros(hi, image_dim)),
            text_decoder: (AffineLayer::zeros(mid, ht), AffineLayer::zeros(ht, text_dim)),
        }
    }

    pub fn image_dim(&self) -> usize {
        self.image_encoder.in_dim()
    }

    pub fn text_dim(&self) -> usize {
        self.text_encoder.in_dim()
    }

    pub fn middle_dim(&self) -> usize {
        self.shared_layer.out_dim()
    }

    /// Layers in a fixed order, used for updates and serialization.
    pub fn layers(&self) -> [(&'static str, &AffineLayer); 7] {
        [
            ("image_encoder", &self.image_encoder),
            ("text_encoder", &self.text_encoder),
            ("shared", &self.shared_layer),
            ("image_decoder_hidden", &self.image_decoder.0),
            ("image_decoder_out", &self.image_decoder.1),
            ("text_decoder_hidden", &self.text_decoder.0),
            ("text_decoder_out", &self.text_decoder.1),
        ]
    }

    fn layers_mut(&mut self) -> [&mut AffineLayer; 7] {
        [
            &mut self.image_encoder,
            &mut self.text_encoder,
            &mut self.shared_layer,
            &mut self.image_decoder.0,
            &mut self.image_decoder.1,
            &mut self.text_decoder.0,
            &mut self.text_decoder.1,
        ]
    }

    /// Rebuilds parameters from the seven layers in [`Self::layers`] order.
    pub fn from_layers(layers: [AffineLayer; 7]) -> Result<Self> {
        let [ei, et, sh, dih, dio, dth, dto] = layers;
        Self::new(ei, et, sh, (dih, dio), (dth, dto))
    }

    fn check_inputs(&self, img: &Matrix, txt: &Matrix) -> Result<()> {
        if img.cols() != self.image_dim() {
            return Err(Error::shape("bimodal ae image", (img.rows(), self.image_dim()), img.shape()));
        }
        if txt.cols() != self.text_dim() {
            return Err(Error::shape("bimodal ae text", (txt.rows(), self.text_dim()), txt.shape()));
        }
        if img.rows() != txt.rows() {
            return Err(Error::shape("bimodal ae pairing", (img.rows(), 0), (txt.rows(), 0)));
        }
        Ok(())
    }

    /// Middle-layer code for a pair of (possibly zeroed) inputs.
    pub fn encode(&self, img: &Matrix, txt: &Matrix) -> Result<Matrix> {
        self.check_inputs(img, txt)?;
        let e_img = sigmoid(&self.image_encoder.forward(img)?);
        let e_txt = sigmoid(&self.text_encoder.forward(txt)?);
        Ok(sigmoid(&self.shared_layer.forward(&e_img.hstack(&e_txt)?)?))
    }

    fn forward(&self, x_img: Matrix, x_txt: Matrix) -> Result<Cache> {
        self.check_inputs(&x_img, &x_txt)?;
        let e_img = sigmoid(&self.image_encoder.forward(&x_img)?);
        let e_txt = sigmoid(&self.text_encoder.forward(&x_txt)?);
        let middle = sigmoid(&self.shared_layer.forward(&e_img.hstack(&e_txt)?)?);
        let h_img = sigmoid(&self.image_decoder.0.forward(&middle)?);
        let r_img = sigmoid(&self.image_decoder.1.forward(&h_img)?);
        let h_txt = sigmoid(&self.text_decoder.0.forward(&middle)?);
        let r_txt = sigmoid(&self.text_decoder.1.forward(&h_txt)?);
        Ok(Cache { x_img, x_txt, e_img, e_txt, middle, h_img, r_img, h_txt, r_txt })
    }

    /// Reconstructions of both modalities from a joint input.
    pub fn reconstruct(&self, img: &Matrix, txt: &Matrix) -> Result<(Matrix, Matrix)> {
        let c = self.forward(img.clone(), txt.clone())?;
        Ok((c.r_img, c.r_txt))
    }

    /// Returns `(summed squared error / rows, layer gradients)`.
    fn loss_and_grads(&self, c: &Cache, t_img: &Matrix, t_txt: &Matrix) -> Result<(f64, [AffineGrads; 7])> {
        let rows = c.x_img.rows().max(1) as f64;
        let d_img = c.r_img.sub(t_img)?;
        let d_txt = c.r_txt.sub(t_txt)?;
        let loss = (d_img.sum_squares() + d_txt.sum_squares()) / rows;

        let g_rimg = sigmoid_backward(&c.r_img, &d_img.scaled(2.0 / rows))?;
        let g_rtxt = sigmoid_backward(&c.r_txt, &d_txt.scaled(2.0 / rows))?;
        let dio = self.image_decoder.1.param_grads(&c.h_img, &g_rimg)?;
        let dto = self.text_decoder.1.param_grads(&c.h_txt, &g_rtxt)?;
        let g_himg = sigmoid_backward(&c.h_img, &self.image_decoder.1.input_grad(&g_rimg)?)?;
        let g_htxt = sigmoid_backward(&c.h_txt, &self.text_decoder.1.input_grad(&g_rtxt)?)?;
        let dih = self.image_decoder.0.param_grads(&c.middle, &g_himg)?;
        let dth = self.text_decoder.0.param_grads(&c.middle, &g_htxt)?;
        let mut g_mid = self.image_decoder.0.input_grad(&g_himg)?;
        g_mid.add_scaled(1.0, &self.text_decoder.0.input_grad(&g_htxt)?)?;
        let (ei, et, sh) = self.encoder_grads(c, &sigmoid_backward(&c.middle, &g_mid)?)?;
        Ok((loss, [ei, et, sh, dih, dio, dth, dto]))
    }

    /// Backpropagates a gradient w.r.t. the middle pre-activation into the
    /// encoders and shared layer.
    fn encoder_grads(&self, c: &Cache, g_mid_pre: &Matrix) -> Result<(AffineGrads, AffineGrads, AffineGrads)> {
        let concat = c.e_img.hstack(&c.e_txt)?;
        let sh = self.shared_layer.param_grads(&concat, g_mid_pre)?;
        let (g_eimg, g_etxt) = self.shared_layer.input_grad(g_mid_pre)?.hsplit(c.e_img.cols());
        let g_eimg = sigmoid_backward(&c.e_img, &g_eimg)?;
        let g_etxt = sigmoid_backward(&c.e_txt, &g_etxt)?;
        let ei = self.image_encoder.param_grads(&c.x_img, &g_eimg)?;
        let et = self.text_encoder.param_grads(&c.x_txt, &g_etxt)?;
        Ok((ei, et, sh))
    }

    /// Summed squared reconstruction error per row over the training views.
    pub fn reconstruction_loss(&self, y_img: &Matrix, y_txt: &Matrix, views: bool) -> Result<f64> {
        let (xi, xt, ti, tt) = training_views(y_img, y_txt, views)?;
        let c = self.forward(xi, xt)?;
        let rows = c.x_img.rows().max(1) as f64;
        Ok((c.r_img.sub(&ti)?.sum_squares() + c.r_txt.sub(&tt)?.sum_squares()) / rows)
    }
}

fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::shape("vstack", (p.rows(), cols), p.shape()));
        }
        data.extend_from_slice(p.as_slice());
        rows += p.rows();
    }
    Matrix::from_vec(rows, cols, data)
}

/// Inputs and targets: the joint view, plus image-only and text-only views
/// with the absent modality zeroed when `views` is set.
fn training_views(img: &Matrix, txt: &Matrix, views: bool) -> Result<(Matrix, Matrix, Matrix, Matrix)> {
    if !views {
        return Ok((img.clone(), txt.clone(), img.clone(), txt.clone()));
    }
    let zi = Matrix::zeros(img.rows(), img.cols());
    let zt = Matrix::zeros(txt.rows(), txt.cols());
    Ok((
        vstack(&[img, img, &zi])?,
        vstack(&[txt, &zt, txt])?,
        vstack(&[img, img, img])?,
        vstack(&[txt, txt, txt])?,
    ))
}

/// Trains the bimodal autoencoder on paired DBN outputs.
pub fn train_bimodal_ae(y_img: &Matrix, y_txt: &Matrix, cfg: &AeConfig) -> Result<(BimodalAeParams, AeReport)> {
    if y_img.rows() != y_txt.rows() {
        return Err(Error::shape("train_bimodal_ae", (y_img.rows(), 0), (y_txt.rows(), 0)));
    }
    if y_img.is_empty() {
        return Err(Error::Empty("bimodal autoencoder training data"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("ae batch_size must be > 0"));
    }
    y_img.ensure_finite("bimodal ae image input")?;
    y_txt.ensure_finite("bimodal ae text input")?;
    let opt = OptimizerConfig {
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        max_steps: usize::MAX,
    };
    opt.validate()?;

    let mut rng = crate::rng_from_seed(cfg.seed);
    let enc = cfg.encoder_dims.unwrap_or((y_img.cols(), y_txt.cols()));
    let mut params = BimodalAeParams::init(y_img.cols(), y_txt.cols(), enc, &mut rng);
    let mut report = AeReport {
        initial_loss: params.reconstruction_loss(y_img, y_txt, cfg.single_modality_views)?,
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..y_img.rows()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (xi, xt, ti, tt) = training_views(
                &y_img.select_rows(chunk)?,
                &y_txt.select_rows(chunk)?,
                cfg.single_modality_views,
            )?;
            let cache = params.forward(xi, xt)?;
            let (_, grads) = params.loss_and_grads(&cache, &ti, &tt)?;
            for (layer, g) in params.layers_mut().into_iter().zip(&grads) {
                layer.sgd_momentum_step(g, &opt)?;
            }
        }
        let loss = params.reconstruction_loss(y_img, y_txt, cfg.single_modality_views)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("bimodal autoencoder loss"));
        }
        report.epoch_losses.push(loss);
    }
    Ok((params, report))
}

/// Per-modality middle-layer codes: each modality is encoded alone with the
/// other zeroed, so the two outputs share one space and width.
pub fn shared_rep(params: &BimodalAeParams, y_img: &Matrix, y_txt: &Matrix) -> Result<(Matrix, Matrix)> {
    if y_img.cols() != params.image_dim() {
        return Err(Error::shape("shared_rep image", (y_img.rows(), params.image_dim()), y_img.shape()));
    }
    if y_txt.cols() != params.text_dim() {
        return Err(Error::shape("shared_rep text", (y_txt.rows(), params.text_dim()), y_txt.shape()));
    }
    let s_img = params.encode(y_img, &Matrix::zeros(y_img.rows(), params.text_dim()))?;
    let s_txt = params.encode(&Matrix::zeros(y_txt.rows(), params.image_dim()), y_txt)?;
    Ok((s_img, s_txt))
}

pub(crate) mod internals {
    //! Hooks for the softmax fine-tuning head, which backpropagates into the
    //! encoders through the same cache.
    use super::*;

    pub(crate) struct EncodeCache(Cache);

    pub(crate) fn encode_cached(p: &BimodalAeParams, img: Matrix, txt: Matrix) -> Result<(Matrix, EncodeCache)> {
        let c = p.forward(img, txt)?;
        Ok((c.middle.clone(), EncodeCache(c)))
    }

    /// Applies a gradient w.r.t. the middle activations to encoders and the
    /// shared layer.
    pub(crate) fn step_encoders(
        p: &mut BimodalAeParams,
        cache: &EncodeCache,
        g_middle: &Matrix,
        opt: &OptimizerConfig,
    ) -> Result<()> {
        let g_pre = sigmoid_backward(&cache.0.middle, g_middle)?;
        let (ei, et, sh) = p.encoder_grads(&cache.0, &g_pre)?;
        p.image_encoder.sgd_momentum_step(&ei, opt)?;
        p.text_encoder.sgd_momentum_step(&et, opt)?;
        p.shared_layer.sgd_momentum_step(&sh, opt)
    }

    pub(crate) fn views(img: &Matrix, txt: &Matrix) -> Result<(Matrix, Matrix)> {
        let (xi, xt, _, _) = training_views(img, txt, true)?;
        Ok((xi, xt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::init_with_rng;
    use rand::Rng as _;

    #[test]
    fn structure_is_checked() {
        let p = BimodalAeParams::zeros(6, 4, (3, 2));
        assert_eq!(p.middle_dim(), 5);
        let mut layers = p.layers().map(|(_, l)| l.clone());
        layers[2] = AffineLayer::zeros(5, 4);
        assert!(BimodalAeParams::from_layers(layers).is_err());
    }

    #[test]
    fn shared_rep_shapes_and_zero_point() {
        let p = BimodalAeParams::zeros(6, 4, (6, 4));
        let (si, st) = shared_rep(&p, &Matrix::zeros(3, 6), &Matrix::zeros(3, 4)).unwrap();
        assert_eq!(si.cols(), st.cols());
        assert_eq!(si.shape(), (3, 5));
        assert!(si.as_slice().iter().chain(st.as_slice()).all(|&v| v == 0.5));

        let q = BimodalAeParams::init(6, 4, (5, 3), &mut crate::rng_from_seed(1));
        let (si, st) = shared_rep(&q, &Matrix::filled(2, 6, 0.3), &Matrix::filled(2, 4, 0.7)).unwrap();
        assert_eq!(si.cols(), st.cols());
        assert!(shared_rep(&q, &Matrix::zeros(2, 5), &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn constant_targets_are_learned() {
        let img = Matrix::filled(32, 4, 0.3);
        let txt = Matrix::filled(32, 4, 0.8);
        let cfg = AeConfig { epochs: 300, batch_size: 16, ..AeConfig::default() };
        let (_, rep) = train_bimodal_ae(&img, &txt, &cfg).unwrap();
        let last = *rep.epoch_losses.last().unwrap();
        assert!(last < 1e-3, "final loss {last}");
        assert!(last < rep.initial_loss);
    }

    #[test]
    fn random_inputs_loss_decreases() {
        let mut rng = crate::rng_from_seed(2);
        let img = init_with_rng(64, 32, InitScheme::Uniform(0.5), &mut rng).map(|v| v + 0.5);
        let txt = init_with_rng(64, 32, InitScheme::Uniform(0.5), &mut rng).map(|v| v + 0.5);
        let cfg = AeConfig { epochs: 100, ..AeConfig::default() };
        let (_, rep) = train_bimodal_ae(&img, &txt, &cfg).unwrap();
        assert!(*rep.epoch_losses.last().unwrap() < rep.initial_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let img = Matrix::filled(8, 3, 0.2);
        let txt = Matrix::filled(8, 5, 0.6);
        let cfg = AeConfig { epochs: 3, seed: 5, ..AeConfig::default() };
        assert_eq!(train_bimodal_ae(&img, &txt, &cfg).unwrap(), train_bimodal_ae(&img, &txt, &cfg).unwrap());
    }

    #[test]
    fn row_mismatch_is_rejected() {
        let cfg = AeConfig::default();
        assert!(train_bimodal_ae(&Matrix::zeros(3, 2), &Matrix::zeros(4, 2), &cfg).is_err());
    }

    #[test]
    fn paired_codes_are_closer_than_unpaired() {
        // two modalities driven by a shared latent bit pattern
        let mut rng = crate::rng_from_seed(7);
        let n = 120;
        let mut img = Matrix::zeros(n, 8);
        let mut txt = Matrix::zeros(n, 6);
        for r in 0..n {
            let z: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            for c in 0..8 {
                let v = 0.2 + 0.6 * z[c % 3] + 0.05 * (rng.random::<f64>() - 0.5);
                img.set(r, c, v);
            }
            for c in 0..6 {
                let v = 0.8 - 0.6 * z[(c + 1) % 3] + 0.05 * (rng.random::<f64>() - 0.5);
                txt.set(r, c, v);
            }
        }
        let cfg = AeConfig { epochs: 200, batch_size: 16, seed: 3, learning_rate: 1.0, ..AeConfig::default() };
        let (p, _) = train_bimodal_ae(&img, &txt, &cfg).unwrap();
        let (si, st) = shared_rep(&p, &img, &txt).unwrap();
        let dist = |a: &[f64], b: &[f64]| libm::sqrt(crate::nd::squared_distance(a, b));
        let paired: f64 = (0..n).map(|r| dist(si.row(r), st.row(r))).sum::<f64>() / n as f64;
        let mut unpaired = 0.0;
        let mut count = 0.0;
        for r in 0..n {
            for q in 0..n {
                if q != r {
                    unpaired += dist(si.row(r), st.row(q));
                    count += 1.0;
                }
            }
        }
        unpaired /= count;
        assert!(paired < unpaired, "paired {paired} unpaired {unpaired}");
    }
}
