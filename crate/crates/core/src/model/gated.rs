//! Gated fusion model.
//!
//! ```text
//! h_I     = Dropout(ReLU(W2 Dropout(ReLU(W1 v_I + b1)) + b2))      (same for text)
//! g       = sigmoid(W_g ReLU(W_c [h_I; h_T] + b_c) + b_g)           (one scalar per example)
//! h_fused = g h_I + (1 - g) h_T
//! logits  = W_cls Dropout(ReLU(W_h h_fused + b_h)) + b_cls
//! ```
//!
//! The projection outputs kept in the cache are the post-dropout tensors, the
//! same ones the gate, the fusion and the alignment loss consume.

use super::{
    ModelConfig, CLS_FC_H, CLS_FC_OUT, GATE_FC_C, GATE_FC_G, IMG_FC1, IMG_FC2, TXT_FC1, TXT_FC2,
};
use crate::error::{Error, Result};
use crate::nn_core::{
    dropout_backward, dropout_forward, linear_forward, linear_input_grad, linear_param_grads, relu,
    relu_backward, sigmoid, DropoutMask, MatRef, Matrix, Mode, ParameterSet, Real,
};
use crate::rng::{derive_key, Purpose};

/// Borrowed weight matrix and bias of one dense layer.
#[derive(Debug, Clone, Copy)]
pub struct Dense<'a, F> {
    pub w: MatRef<'a, F>,
    pub b: &'a [F],
}

impl<'a, F: Real> Dense<'a, F> {
    /// Layer whose weight tensor sits at `index` and bias at `index + 1`.
    pub fn at(params: &'a ParameterSet<F>, index: usize) -> Self {
        Self {
            w: params.tensor(index).matrix(),
            b: &params.tensor(index + 1).values,
        }
    }

    fn forward(&self, x: MatRef<'_, F>) -> Result<Matrix<F>> {
        linear_forward(x, self.w, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionHead<'a, F> {
    pub fc1: Dense<'a, F>,
    pub fc2: Dense<'a, F>,
}

#[derive(Debug, Clone, Copy)]
pub struct GateParams<'a, F> {
    pub fc_c: Dense<'a, F>,
    pub fc_g: Dense<'a, F>,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierParams<'a, F> {
    pub fc_h: Dense<'a, F>,
    pub fc_cls: Dense<'a, F>,
}

type LayerGrad<F> = (Matrix<F>, Vec<F>);

#[derive(Debug, Clone)]
pub struct ProjectionCache<F> {
    pub input: Matrix<F>,
    pub pre1: Matrix<F>,
    pub mask1: DropoutMask,
    /// Post-dropout hidden activations (input of fc2).
    pub hidden: Matrix<F>,
    pub pre2: Matrix<F>,
    pub mask2: DropoutMask,
    /// Projection output `h`.
    pub out: Matrix<F>,
}

pub fn project<F: Real>(
    v: MatRef<'_, F>,
    head: &ProjectionHead<'_, F>,
    rate: f64,
    mode: Mode,
    rng_key: u64,
) -> Result<ProjectionCache<F>> {
    let pre1 = head.fc1.forward(v)?;
    let (hidden, mask1) = dropout_forward(
        &relu(&pre1),
        rate,
        mode,
        derive_key(rng_key, Purpose::Dropout, 0, 0),
    )?;
    let pre2 = head.fc2.forward(hidden.view())?;
    let (out, mask2) = dropout_forward(
        &relu(&pre2),
        rate,
        mode,
        derive_key(rng_key, Purpose::Dropout, 1, 0),
    )?;
    Ok(ProjectionCache {
        input: v.to_owned(),
        pre1,
        mask1,
        hidden,
        pre2,
        mask2,
        out,
    })
}

/// Gradients of `(fc1, fc2)` given the gradient on the projection output.
pub fn project_backward<F: Real>(
    cache: &ProjectionCache<F>,
    grad_out: &Matrix<F>,
    head: &ProjectionHead<'_, F>,
) -> Result<(LayerGrad<F>, LayerGrad<F>)> {
    let g = dropout_backward(grad_out, &cache.mask2)?;
    let g_pre2 = relu_backward(&g, &cache.pre2)?;
    let fc2 = linear_param_grads(g_pre2.view(), cache.hidden.view())?;
    let g_hidden = linear_input_grad(g_pre2.view(), head.fc2.w)?;
    let g = dropout_backward(&g_hidden, &cache.mask1)?;
    let g_pre1 = relu_backward(&g, &cache.pre1)?;
    let fc1 = linear_param_grads(g_pre1.view(), cache.input.view())?;
    Ok((fc1, fc2))
}

#[derive(Debug, Clone)]
pub struct GateCache<F> {
    /// `[h_I; h_T]` row-wise.
    pub concat: Matrix<F>,
    pub pre_c: Matrix<F>,
    pub hidden: Matrix<F>,
    /// One gate value per example, in `[0, 1]`.
    pub g: Vec<F>,
}

/// Per-example gate on the concatenation image-then-text.
pub fn gate<F: Real>(
    h_image: &Matrix<F>,
    h_text: &Matrix<F>,
    gp: &GateParams<'_, F>,
) -> Result<GateCache<F>> {
    if h_image.rows() != h_text.rows() {
        return Err(Error::shape(
            "gate",
            format!(
                "{} image rows vs {} text rows",
                h_image.rows(),
                h_text.rows()
            ),
        ));
    }
    let n = h_image.rows();
    let width = h_image.cols() + h_text.cols();
    let mut concat = Matrix::zeros(n, width);
    for r in 0..n {
        let row = concat.row_mut(r);
        row[..h_image.cols()].copy_from_slice(h_image.row(r));
        row[h_image.cols()..].copy_from_slice(h_text.row(r));
    }
    let pre_c = gp.fc_c.forward(concat.view())?;
    let hidden = relu(&pre_c);
    let z = gp.fc_g.forward(hidden.view())?;
    if z.cols() != 1 {
        return Err(Error::shape(
            "gate",
            format!("gate output has {} columns", z.cols()),
        ));
    }
    let g = z.data().iter().map(|&v| sigmoid(v)).collect();
    Ok(GateCache {
        concat,
        pre_c,
        hidden,
        g,
    })
}

#[derive(Debug, Clone)]
pub struct GateGrads<F> {
    pub fc_c: LayerGrad<F>,
    pub fc_g: LayerGrad<F>,
    pub grad_h_image: Matrix<F>,
    pub grad_h_text: Matrix<F>,
}

pub fn gate_backward<F: Real>(
    cache: &GateCache<F>,
    grad_g: &[F],
    gp: &GateParams<'_, F>,
    image_width: usize,
) -> Result<GateGrads<F>> {
    if grad_g.len() != cache.g.len() {
        return Err(Error::shape(
            "gate_backward",
            format!("{} gate grads for {} examples", grad_g.len(), cache.g.len()),
        ));
    }
    // d sigmoid = g (1 - g)
    let grad_z: Vec<F> = grad_g
        .iter()
        .zip(&cache.g)
        .map(|(&dg, &g)| dg * g * (F::one() - g))
        .collect();
    let grad_z = Matrix::from_vec(grad_z.len(), 1, grad_z)?;
    let fc_g = linear_param_grads(grad_z.view(), cache.hidden.view())?;
    let g_hidden = linear_input_grad(grad_z.view(), gp.fc_g.w)?;
    let g_pre = relu_backward(&g_hidden, &cache.pre_c)?;
    let fc_c = linear_param_grads(g_pre.view(), cache.concat.view())?;
    let g_concat = linear_input_grad(g_pre.view(), gp.fc_c.w)?;

    let n = g_concat.rows();
    let text_width = g_concat.cols() - image_width;
    let mut grad_h_image = Matrix::zeros(n, image_width);
    let mut grad_h_text = Matrix::zeros(n, text_width);
    for r in 0..n {
        let row = g_concat.row(r);
        grad_h_image.row_mut(r).copy_from_slice(&row[..image_width]);
        grad_h_text.row_mut(r).copy_from_slice(&row[image_width..]);
    }
    Ok(GateGrads {
        fc_c,
        fc_g,
        grad_h_image,
        grad_h_text,
    })
}

/// `g h_I + (1 - g) h_T`, with `g[n]` broadcast across row `n`.
pub fn fuse<F: Real>(h_image: &Matrix<F>, h_text: &Matrix<F>, g: &[F]) -> Result<Matrix<F>> {
    if !h_image.same_shape(h_text) || g.len() != h_image.rows() {
        return Err(Error::shape(
            "fuse",
            format!(
                "h_I {:?}, h_T {:?}, g {}",
                h_image.shape(),
                h_text.shape(),
                g.len()
            ),
        ));
    }
    let mut out = Matrix::zeros(h_image.rows(), h_image.cols());
    for (r, &gr) in g.iter().enumerate() {
        let (a, b) = (h_image.row(r), h_text.row(r));
        for (o, (&x, &y)) in out.row_mut(r).iter_mut().zip(a.iter().zip(b)) {
            *o = gr * x + (F::one() - gr) * y;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FuseGrads<F> {
    pub grad_h_image: Matrix<F>,
    pub grad_h_text: Matrix<F>,
    /// `sum_k grad_fused[n, k] * (h_I - h_T)[n, k]`.
    pub grad_g: Vec<F>,
}

pub fn fuse_backward<F: Real>(
    grad_fused: &Matrix<F>,
    h_image: &Matrix<F>,
    h_text: &Matrix<F>,
    g: &[F],
) -> Result<FuseGrads<F>> {
    if !grad_fused.same_shape(h_image) || !h_image.same_shape(h_text) || g.len() != h_image.rows() {
        return Err(Error::shape(
            "fuse_backward",
            format!(
                "grad {:?}, h_I {:?}, h_T {:?}, g {}",
                grad_fused.shape(),
                h_image.shape(),
                h_text.shape(),
                g.len()
            ),
        ));
    }
    let (n, d) = h_image.shape();
    let mut grad_h_image = Matrix::zeros(n, d);
    let mut grad_h_text = Matrix::zeros(n, d);
    let mut grad_g = vec![F::zero(); n];
    for r in 0..n {
        let gr = g[r];
        let up = grad_fused.row(r);
        let mut acc = F::zero();
        for k in 0..d {
            acc = acc + up[k] * (h_image.get(r, k) - h_text.get(r, k));
        }
        grad_g[r] = acc;
        for (o, &u) in grad_h_image.row_mut(r).iter_mut().zip(up) {
            *o = gr * u;
        }
        for (o, &u) in grad_h_text.row_mut(r).iter_mut().zip(up) {
            *o = (F::one() - gr) * u;
        }
    }
    Ok(FuseGrads {
        grad_h_image,
        grad_h_text,
        grad_g,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifierCache<F> {
    pub input: Matrix<F>,
    pub pre_h: Matrix<F>,
    pub mask: DropoutMask,
    pub hidden: Matrix<F>,
    pub logits: Matrix<F>,
}

pub fn classify<F: Real>(
    h: &Matrix<F>,
    cp: &ClassifierParams<'_, F>,
    rate: f64,
    mode: Mode,
    rng_key: u64,
) -> Result<ClassifierCache<F>> {
    let pre_h = cp.fc_h.forward(h.view())?;
    let (hidden, mask) = dropout_forward(&relu(&pre_h), rate, mode, rng_key)?;
    let logits = cp.fc_cls.forward(hidden.view())?;
    Ok(ClassifierCache {
        input: h.clone(),
        pre_h,
        mask,
        hidden,
        logits,
    })
}

/// Returns `(fc_h grads, fc_cls grads, gradient on the classifier input)`.
pub fn classify_backward<F: Real>(
    cache: &ClassifierCache<F>,
    grad_logits: &Matrix<F>,
    cp: &ClassifierParams<'_, F>,
) -> Result<(LayerGrad<F>, LayerGrad<F>, Matrix<F>)> {
    if !grad_logits.same_shape(&cache.logits) {
        return Err(Error::shape(
            "classify_backward",
            format!(
                "grad_logits {:?} vs logits {:?}",
                grad_logits.shape(),
                cache.logits.shape()
            ),
        ));
    }
    let fc_cls = linear_param_grads(grad_logits.view(), cache.hidden.view())?;
    let g_hidden = linear_input_grad(grad_logits.view(), cp.fc_cls.w)?;
    let g = dropout_backward(&g_hidden, &cache.mask)?;
    let g_pre = relu_backward(&g, &cache.pre_h)?;
    let fc_h = linear_param_grads(g_pre.view(), cache.input.view())?;
    let grad_input = linear_input_grad(g_pre.view(), cp.fc_h.w)?;
    Ok((fc_h, fc_cls, grad_input))
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    pub image: ProjectionCache<F>,
    pub text: ProjectionCache<F>,
    pub gate: GateCache<F>,
    pub fused: Matrix<F>,
    pub classifier: ClassifierCache<F>,
    pub logits: Matrix<F>,
}

impl<F: Real> ForwardCache<F> {
    pub fn h_image(&self) -> &Matrix<F> {
        &self.image.out
    }

    pub fn h_text(&self) -> &Matrix<F> {
        &self.text.out
    }

    pub fn gate_values(&self) -> &[F] {
        &self.gate.g
    }

    pub fn h_fused(&self) -> &Matrix<F> {
        &self.fused
    }
}

fn heads<F: Real>(
    params: &ParameterSet<F>,
) -> (
    ProjectionHead<'_, F>,
    ProjectionHead<'_, F>,
    GateParams<'_, F>,
    ClassifierParams<'_, F>,
) {
    (
        ProjectionHead {
            fc1: Dense::at(params, IMG_FC1),
            fc2: Dense::at(params, IMG_FC2),
        },
        ProjectionHead {
            fc1: Dense::at(params, TXT_FC1),
            fc2: Dense::at(params, TXT_FC2),
        },
        GateParams {
            fc_c: Dense::at(params, GATE_FC_C),
            fc_g: Dense::at(params, GATE_FC_G),
        },
        ClassifierParams {
            fc_h: Dense::at(params, CLS_FC_H),
            fc_cls: Dense::at(params, CLS_FC_OUT),
        },
    )
}

fn check_layout<F: Real>(params: &ParameterSet<F>, config: &ModelConfig) -> Result<()> {
    super::Architecture {
        kind: super::ModelKind::GatedClip,
        config: config.clone(),
    }
    .check_params(params)
}

/// Full forward pass. Dropout streams are derived from `rng_key`, one per
/// dropout site.
pub fn gatedclip_forward<F: Real>(
    image: MatRef<'_, F>,
    text: MatRef<'_, F>,
    params: &ParameterSet<F>,
    config: &ModelConfig,
    mode: Mode,
    rng_key: u64,
) -> Result<ForwardCache<F>> {
    check_layout(params, config)?;
    if image.rows != text.rows {
        return Err(Error::shape(
            "gatedclip_forward",
            format!("{} image rows vs {} text rows", image.rows, text.rows),
        ));
    }
    let (img_head, txt_head, gp, cp) = heads(params);
    let key = |slot| derive_key(rng_key, Purpose::Dropout, slot, 1);
    let image = project(image, &img_head, config.dropout_proj, mode, key(0))?;
    let text = project(text, &txt_head, config.dropout_proj, mode, key(1))?;
    let gate = gate(&image.out, &text.out, &gp)?;
    let fused = fuse(&image.out, &text.out, &gate.g)?;
    let classifier = classify(&fused, &cp, config.dropout_cls, mode, key(2))?;
    let logits = classifier.logits.clone();
    Ok(ForwardCache {
        image,
        text,
        gate,
        fused,
        classifier,
        logits,
    })
}

fn add_into<F: Real>(
    acc: &mut Matrix<F>,
    extra: Option<&Matrix<F>>,
    what: &'static str,
) -> Result<()> {
    let Some(extra) = extra else { return Ok(()) };
    if !acc.same_shape(extra) {
        return Err(Error::shape(
            what,
            format!("extra gradient {:?} vs {:?}", extra.shape(), acc.shape()),
        ));
    }
    for (a, &e) in acc.data_mut().iter_mut().zip(extra.data()) {
        *a = *a + e;
    }
    Ok(())
}

/// Reverse pass. Overwrites the gradient buffers of all 16 tensors.
/// `grad_h_image_extra` / `grad_h_text_extra` are added to the projection
/// output gradients (the alignment loss enters here).
pub fn gatedclip_backward<F: Real>(
    cache: &ForwardCache<F>,
    grad_logits: &Matrix<F>,
    grad_h_image_extra: Option<&Matrix<F>>,
    grad_h_text_extra: Option<&Matrix<F>>,
    params: &mut ParameterSet<F>,
) -> Result<()> {
    let grads = {
        let (img_head, txt_head, gp, cp) = heads(params);
        let (fc_h, fc_cls, grad_fused) = classify_backward(&cache.classifier, grad_logits, &cp)?;
        let fuse = fuse_backward(&grad_fused, cache.h_image(), cache.h_text(), &cache.gate.g)?;
        let gate = gate_backward(&cache.gate, &fuse.grad_g, &gp, cache.h_image().cols())?;

        let mut grad_img = fuse.grad_h_image;
        add_into(
            &mut grad_img,
            Some(&gate.grad_h_image),
            "gatedclip_backward",
        )?;
        add_into(&mut grad_img, grad_h_image_extra, "gatedclip_backward")?;
        let mut grad_txt = fuse.grad_h_text;
        add_into(&mut grad_txt, Some(&gate.grad_h_text), "gatedclip_backward")?;
        add_into(&mut grad_txt, grad_h_text_extra, "gatedclip_backward")?;

        let (img1, img2) = project_backward(&cache.image, &grad_img, &img_head)?;
        let (txt1, txt2) = project_backward(&cache.text, &grad_txt, &txt_head)?;
        [
            (IMG_FC1, img1),
            (IMG_FC2, img2),
            (TXT_FC1, txt1),
            (TXT_FC2, txt2),
            (GATE_FC_C, gate.fc_c),
            (GATE_FC_G, gate.fc_g),
            (CLS_FC_H, fc_h),
            (CLS_FC_OUT, fc_cls),
        ]
    };
    for (index, (gw, gb)) in grads {
        params.tensor_mut(index).grad = gw.into_vec();
        params.tensor_mut(index + 1).grad = gb;
    }
    Ok(())
}
