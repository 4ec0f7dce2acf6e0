//! Semi-supervised contrastive loss and quadruplet ranking loss, with their
//! exact gradients w.r.t. the image embeddings `f(·)` and text embeddings `g(·)`.
//!
//! Both losses are plain sums over pairs/quadruplets; any normalization is
//! the caller's business.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::SimilarityMatrix;
use crate::nd::{axpy, squared_distance, Matrix};
use crate::sampler::{PairSelection, Quadruplet};
use crate::{Error, Result};

/// Functional form of the dissimilar-pair term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContrastiveVariant {
    /// `max(0, α - ‖D‖²)`.
    #[default]
    Squared,
    /// `max(0, α - ‖D‖)²`: the margin acts on the distance itself, giving a
    /// gradient `-2(α - ‖D‖) D/‖D‖` inside the margin. Experimental.
    HingedNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub variant: ContrastiveVariant,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            variant: ContrastiveVariant::Squared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupletConfig {
    pub margin: f64,
}

impl Default for QuadrupletConfig {
    fn default() -> Self {
        Self { margin: 1.0 }
    }
}

/// Loss value with gradients w.r.t. every row of the image (`grad_f`) and
/// text (`grad_g`) embedding batches.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub grad_f: Matrix,
    pub grad_g: Matrix,
    pub loss: f64,
}

impl LossGradients {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            grad_f: Matrix::zeros(rows, dim),
            grad_g: Matrix::zeros(rows, dim),
            loss: 0.0,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grad_f.scale(s);
        self.grad_g.scale(s);
        self.loss *= s;
    }
}

fn check_dims(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, (1, a.len()), (1, b.len())));
    }
    Ok(())
}

/// Contrastive loss of one image/text pair.
pub fn contrastive_pair_loss(f: &[f64], g: &[f64], similar: bool, cfg: &ContrastiveConfig) -> Result<f64> {
    check_dims(f, g, "contrastive_pair_loss")?;
    let d2 = squared_distance(f, g);
    Ok(if similar {
        d2
    } else {
        match cfg.variant {
            ContrastiveVariant::Squared => (cfg.margin - d2).max(0.0),
            ContrastiveVariant::HingedNorm => {
                let h = (cfg.margin - libm::sqrt(d2)).max(0.0);
                h * h
            }
        }
    })
}

/// Loss and `∂loss/∂f` of one pair; `∂loss/∂g` is its negation.
pub fn contrastive_pair_grad(
    f: &[f64],
    g: &[f64],
    similar: bool,
    cfg: &ContrastiveConfig,
) -> Result<(f64, Vec<f64>)> {
    check_dims(f, g, "contrastive_pair_grad")?;
    let diff: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
    let d2: f64 = diff.iter().map(|d| d * d).sum();
    if similar {
        return Ok((d2, diff.iter().map(|d| 2.0 * d).collect()));
    }
    match cfg.variant {
        ContrastiveVariant::Squared => {
            let arg = cfg.margin - d2;
            if arg > 0.0 {
                Ok((arg, diff.iter().map(|d| -2.0 * d).collect()))
            } else {
                Ok((0.0, vec![0.0; f.len()]))
            }
        }
        ContrastiveVariant::HingedNorm => {
            let norm = libm::sqrt(d2);
            let arg = cfg.margin - norm;
            if arg > 0.0 && norm > 0.0 {
                let s = -2.0 * arg / norm;
                Ok((arg * arg, diff.iter().map(|d| s * d).collect()))
            } else {
                // at D = 0 the direction is undefined; take the zero subgradient
                Ok((arg.max(0.0) * arg.max(0.0), vec![0.0; f.len()]))
            }
        }
    }
}

/// Sum of contrastive losses over the selected pairs. Labeled pairs read
/// their similarity from `c` (rows `0..m`), unlabeled pairs from `a`
/// (rows `m..`, offset by `m = c.rows()`). A sample appearing in several
/// pairs accumulates all of their gradients.
pub fn semi_supervised_loss(
    f_emb: &Matrix,
    g_emb: &Matrix,
    c: &SimilarityMatrix,
    a: &SimilarityMatrix,
    pairs: &PairSelection,
    cfg: &ContrastiveConfig,
) -> Result<LossGradients> {
    if f_emb.shape() != g_emb.shape() {
        return Err(Error::shape("semi_supervised_loss", f_emb.shape(), g_emb.shape()));
    }
    let m = c.rows();
    let mut out = LossGradients::zeros(f_emb.rows(), f_emb.cols());
    for pair in &pairs.pairs {
        let (p, q) = (pair.image, pair.text);
        if p >= f_emb.rows() {
            return Err(Error::IndexOutOfRange { index: p, len: f_emb.rows() });
        }
        if q >= g_emb.rows() {
            return Err(Error::IndexOutOfRange { index: q, len: g_emb.rows() });
        }
        let similar = if pair.labeled {
            c.try_get(p, q)?
        } else {
            if p < m || q < m {
                return Err(Error::invalid("unlabeled pair indexes the labeled slice"));
            }
            a.try_get(p - m, q - m)?
        };
        if similar != pair.similar {
            return Err(Error::invalid("pair flag contradicts its similarity matrix"));
        }
        let (loss, gf) = contrastive_pair_grad(f_emb.row(p), g_emb.row(q), similar, cfg)?;
        out.loss += loss;
        axpy(1.0, &gf, out.grad_f.row_mut(p));
        axpy(-1.0, &gf, out.grad_g.row_mut(q));
    }
    Ok(out)
}

/// Hinge argument `2‖i⁺-t⁺‖² - ‖i⁺-t⁻‖² - ‖i⁻-t⁺‖² + β`.
pub fn quadruplet_argument(i_plus: &[f64], t_plus: &[f64], i_minus: &[f64], t_minus: &[f64], beta: f64) -> f64 {
    2.0 * squared_distance(i_plus, t_plus) - squared_distance(i_plus, t_minus) - squared_distance(i_minus, t_plus)
        + beta
}

fn check_quad(v: [&[f64]; 4], op: &'static str) -> Result<()> {
    for x in &v[1..] {
        check_dims(v[0], x, op)?;
    }
    Ok(())
}

pub fn quadruplet_loss(
    i_plus: &[f64],
    t_plus: &[f64],
    i_minus: &[f64],
    t_minus: &[f64],
    cfg: &QuadrupletConfig,
) -> Result<f64> {
    check_quad([i_plus, t_plus, i_minus, t_minus], "quadruplet_loss")?;
    Ok(quadruplet_argument(i_plus, t_plus, i_minus, t_minus, cfg.margin).max(0.0))
}

/// Loss and gradients of one quadruplet w.r.t. its four embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupletGrads {
    pub loss: f64,
    pub i_plus: Vec<f64>,
    pub t_plus: Vec<f64>,
    pub i_minus: Vec<f64>,
    pub t_minus: Vec<f64>,
}

/// Gradients are `2i⁺-4t⁺+2t⁻`, `2t⁺-4i⁺+2i⁻`, `2t⁺-2i⁻`, `2i⁺-2t⁻` while
/// the hinge is active (argument > 0) and zero otherwise.
pub fn quadruplet_grad(
    i_plus: &[f64],
    t_plus: &[f64],
    i_minus: &[f64],
    t_minus: &[f64],
    cfg: &QuadrupletConfig,
) -> Result<QuadrupletGrads> {
    check_quad([i_plus, t_plus, i_minus, t_minus], "quadruplet_grad")?;
    let arg = quadruplet_argument(i_plus, t_plus, i_minus, t_minus, cfg.margin);
    let d = i_plus.len();
    if arg <= 0.0 {
        return Ok(QuadrupletGrads {
            loss: 0.0,
            i_plus: vec![0.0; d],
            t_plus: vec![0.0; d],
            i_minus: vec![0.0; d],
            t_minus: vec![0.0; d],
        });
    }
    let mut g = QuadrupletGrads {
        loss: arg,
        i_plus: Vec::with_capacity(d),
        t_plus: Vec::with_capacity(d),
        i_minus: Vec::with_capacity(d),
        t_minus: Vec::with_capacity(d),
    };
    for k in 0..d {
        let (ip, tp, im, tm) = (i_plus[k], t_plus[k], i_minus[k], t_minus[k]);
        g.i_plus.push(2.0 * ip - 4.0 * tp + 2.0 * tm);
        g.t_plus.push(2.0 * tp - 4.0 * ip + 2.0 * im);
        g.i_minus.push(2.0 * tp - 2.0 * im);
        g.t_minus.push(2.0 * ip - 2.0 * tm);
    }
    Ok(g)
}

/// Sum of quadruplet losses over a batch, gradients scattered to rows.
pub fn quadruplet_batch_loss(
    f_emb: &Matrix,
    g_emb: &Matrix,
    quads: &[Quadruplet],
    cfg: &QuadrupletConfig,
) -> Result<LossGradients> {
    if f_emb.shape() != g_emb.shape() {
        return Err(Error::shape("quadruplet_batch_loss", f_emb.shape(), g_emb.shape()));
    }
    let n = f_emb.rows();
    let mut out = LossGradients::zeros(n, f_emb.cols());
    for q in quads {
        for idx in [q.i_plus, q.t_plus, q.i_minus, q.t_minus] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        let g = quadruplet_grad(
            f_emb.row(q.i_plus),
            g_emb.row(q.t_plus),
            f_emb.row(q.i_minus),
            g_emb.row(q.t_minus),
            cfg,
        )?;
        if g.loss > 0.0 {
            out.loss += g.loss;
            axpy(1.0, &g.i_plus, out.grad_f.row_mut(q.i_plus));
            axpy(1.0, &g.t_plus, out.grad_g.row_mut(q.t_plus));
            axpy(1.0, &g.i_minus, out.grad_f.row_mut(q.i_minus));
            axpy(1.0, &g.t_minus, out.grad_g.row_mut(q.t_minus));
        }
    }
    Ok(out)
}

/// Sums the gradients and loss values of the two branches.
pub fn multitask_combine(semi: &LossGradients, quad: &LossGradients) -> Result<LossGradients> {
    Ok(LossGradients {
        grad_f: semi.grad_f.add(&quad.grad_f)?,
        grad_g: semi.grad_g.add(&quad.grad_g)?,
        loss: semi.loss + quad.loss,
    })
}
