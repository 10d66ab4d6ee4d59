//! Averaging baseline: `logits = W_cls (v_I + v_T) / 2 + b`.

use crate::error::{Error, Result};
use crate::nn_core::{linear_forward, linear_param_grads, MatRef, Matrix, ParameterSet, Real};

#[derive(Debug, Clone)]
pub struct BaselineCache<F> {
    /// Averaged embedding.
    pub h: Matrix<F>,
    pub logits: Matrix<F>,
}

fn check_layout<F: Real>(params: &ParameterSet<F>) -> Result<()> {
    let ok = params.len() == 2
        && params.tensor(0).name == "classifier.fc_cls.weight"
        && params.tensor(1).name == "classifier.fc_cls.bias";
    if ok {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(
            "baseline expects exactly classifier.fc_cls.{weight,bias}".into(),
        ))
    }
}

pub fn baseline_forward<F: Real>(
    image: MatRef<'_, F>,
    text: MatRef<'_, F>,
    params: &ParameterSet<F>,
) -> Result<BaselineCache<F>> {
    check_layout(params)?;
    if (image.rows, image.cols) != (text.rows, text.cols) {
        return Err(Error::shape(
            "baseline_forward",
            format!(
                "image {}x{} vs text {}x{}",
                image.rows, image.cols, text.rows, text.cols
            ),
        ));
    }
    let half = F::from_f64_lossy(0.5);
    let data = image
        .data
        .iter()
        .zip(text.data)
        .map(|(&a, &b)| (a + b) * half)
        .collect();
    let h = Matrix::from_vec(image.rows, image.cols, data)?;
    let logits = linear_forward(
        h.view(),
        params.tensor(0).matrix(),
        &params.tensor(1).values,
    )?;
    Ok(BaselineCache { h, logits })
}

/// Overwrites the classifier gradients.
pub fn baseline_backward<F: Real>(
    cache: &BaselineCache<F>,
    grad_logits: &Matrix<F>,
    params: &mut ParameterSet<F>,
) -> Result<()> {
    check_layout(params)?;
    if !grad_logits.same_shape(&cache.logits) {
        return Err(Error::shape(
            "baseline_backward",
            format!(
                "grad_logits {:?} vs logits {:?}",
                grad_logits.shape(),
                cache.logits.shape()
            ),
        ));
    }
    let (gw, gb) = linear_param_grads(grad_logits.view(), cache.h.view())?;
    params.tensor_mut(0).grad = gw.into_vec();
    params.tensor_mut(1).grad = gb;
    Ok(())
}
