//! Training objective: softmax cross-entropy, cosine alignment between the
//! paired projections, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::embedding_store::Label;
use crate::error::{Error, Result};
use crate::nn_core::{Matrix, Real};

/// Rows with a smaller L2 norm have no defined cosine similarity.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Mean softmax cross-entropy over the batch.
///
/// Returns the loss and `(softmax - onehot) / N`.
pub fn cross_entropy<F: Real>(logits: &Matrix<F>, labels: &[Label]) -> Result<(F, Matrix<F>)> {
    let (n, classes) = logits.shape();
    if labels.len() != n || n == 0 {
        return Err(Error::shape(
            "cross_entropy",
            format!("{n} logit rows, {} labels", labels.len()),
        ));
    }
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut grad = Matrix::zeros(n, classes);
    let mut total = F::zero();
    for (i, label) in labels.iter().enumerate() {
        let target = match label.class() {
            Some(c) if c < classes => c,
            Some(c) => {
                return Err(Error::InvalidArgument(format!(
                    "label class {c} with only {classes} logits"
                )))
            }
            None => return Err(Error::Unlabeled { index: i }),
        };
        let row = logits.row(i);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        // log-sum-exp = max + ln(1 + sum over non-max terms)
        let mut rest = F::zero();
        let mut seen_max = false;
        for &v in row {
            if v == max && !seen_max {
                seen_max = true;
            } else {
                rest = rest + (v - max).exp();
            }
        }
        let lse = max + rest.ln_1p();
        total = total + (lse - row[target]);
        for (c, (g, &v)) in grad.row_mut(i).iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            let onehot = if c == target { F::one() } else { F::zero() };
            *g = (p - onehot) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

fn row_norm<F: Real>(row: &[F]) -> F {
    row.iter().fold(F::zero(), |acc, &v| acc + v * v).sqrt()
}

/// `(1/N) sum_i (1 - cos(h_I[i], h_T[i]))` and its gradients.
pub fn contrastive_alignment<F: Real>(
    h_image: &Matrix<F>,
    h_text: &Matrix<F>,
) -> Result<(F, Matrix<F>, Matrix<F>)> {
    if !h_image.same_shape(h_text) || h_image.rows() == 0 {
        return Err(Error::shape(
            "contrastive_alignment",
            format!("h_I {:?} vs h_T {:?}", h_image.shape(), h_text.shape()),
        ));
    }
    let (n, d) = h_image.shape();
    let degenerate = F::from_f64_lossy(DEGENERATE_NORM);
    let clamp = F::from_f64_lossy(1e-12);
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut grad_image = Matrix::zeros(n, d);
    let mut grad_text = Matrix::zeros(n, d);
    let mut total = F::zero();
    for r in 0..n {
        let (a, b) = (h_image.row(r), h_text.row(r));
        let (na, nb) = (row_norm(a), row_norm(b));
        if !(na >= degenerate) {
            return Err(Error::DegenerateVector {
                which: "h_I",
                row: r,
            });
        }
        if !(nb >= degenerate) {
            return Err(Error::DegenerateVector {
                which: "h_T",
                row: r,
            });
        }
        let (na, nb) = (na.max(clamp), nb.max(clamp));
        let dot = a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        let cos = dot / (na * nb);
        // rounding can push |cos| slightly past 1 for (anti)parallel rows
        total = total + (F::one() - cos.max(-F::one()).min(F::one()));
        // d cos / d a = b / (|a||b|) - cos a / |a|^2, negated and averaged
        let inv_ab = F::one() / (na * nb);
        let (ca, cb) = (cos / (na * na), cos / (nb * nb));
        for k in 0..d {
            grad_image.set(r, k, -(b[k] * inv_ab - ca * a[k]) * inv_n);
            grad_text.set(r, k, -(a[k] * inv_ab - cb * b[k]) * inv_n);
        }
    }
    Ok((total * inv_n, grad_image, grad_text))
}

/// How the combined objective treats rows whose alignment cosine is
/// undefined (projection norm below [`DEGENERATE_NORM`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateRows {
    /// Fail with [`Error::DegenerateVector`].
    Error,
    /// Leave such rows out of the alignment term; it is averaged over the
    /// remaining rows, and is 0 when none remain. A ReLU + dropout projection
    /// can emit an all-zero row, so training uses this.
    Skip,
}

/// [`contrastive_alignment`] restricted to rows where both norms are at least
/// [`DEGENERATE_NORM`]. Skipped rows get zero gradient. Also returns how many
/// rows were skipped.
pub fn contrastive_alignment_masked<F: Real>(
    h_image: &Matrix<F>,
    h_text: &Matrix<F>,
) -> Result<(F, Matrix<F>, Matrix<F>, usize)> {
    if !h_image.same_shape(h_text) || h_image.rows() == 0 {
        return Err(Error::shape(
            "contrastive_alignment",
            format!("h_I {:?} vs h_T {:?}", h_image.shape(), h_text.shape()),
        ));
    }
    let (n, d) = h_image.shape();
    let degenerate = F::from_f64_lossy(DEGENERATE_NORM);
    let keep: Vec<usize> = (0..n)
        .filter(|&r| {
            row_norm(h_image.row(r)) >= degenerate && row_norm(h_text.row(r)) >= degenerate
        })
        .collect();
    if keep.len() == n {
        let (loss, gi, gt) = contrastive_alignment(h_image, h_text)?;
        return Ok((loss, gi, gt, 0));
    }
    let mut grad_image = Matrix::zeros(n, d);
    let mut grad_text = Matrix::zeros(n, d);
    if keep.is_empty() {
        return Ok((F::zero(), grad_image, grad_text, n));
    }
    let gather = |m: &Matrix<F>| {
        let data = keep
            .iter()
            .flat_map(|&r| m.row(r).iter().copied())
            .collect();
        Matrix::from_vec(keep.len(), d, data)
    };
    let (loss, gi, gt) = contrastive_alignment(&gather(h_image)?, &gather(h_text)?)?;
    for (k, &r) in keep.iter().enumerate() {
        grad_image.row_mut(r).copy_from_slice(gi.row(k));
        grad_text.row_mut(r).copy_from_slice(gt.row(k));
    }
    Ok((loss, grad_image, grad_text, n - keep.len()))
}

/// Components of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub contrastive: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(cls: f64, contrastive: f64, lambda: f64) -> Self {
        Self {
            total: cls + lambda * contrastive,
            cls,
            contrastive,
            lambda,
        }
    }
}

/// Gradients of the combined objective.
#[derive(Debug, Clone)]
pub struct ObjectiveGrads<F> {
    pub logits: Matrix<F>,
    pub h_image: Matrix<F>,
    pub h_text: Matrix<F>,
}

/// `cls + lambda * contrastive`. The logit gradient comes from the
/// classification term only; the projection gradients are the
/// `lambda`-scaled alignment gradients.
pub fn total_loss<F: Real>(
    logits: &Matrix<F>,
    labels: &[Label],
    h_image: &Matrix<F>,
    h_text: &Matrix<F>,
    lambda: f64,
) -> Result<(LossBreakdown, ObjectiveGrads<F>)> {
    total_loss_with(
        logits,
        labels,
        h_image,
        h_text,
        lambda,
        DegenerateRows::Error,
    )
}

/// [`total_loss`] with an explicit policy for degenerate projection rows.
pub fn total_loss_with<F: Real>(
    logits: &Matrix<F>,
    labels: &[Label],
    h_image: &Matrix<F>,
    h_text: &Matrix<F>,
    lambda: f64,
    degenerate: DegenerateRows,
) -> Result<(LossBreakdown, ObjectiveGrads<F>)> {
    let (cls, grad_logits) = cross_entropy(logits, labels)?;
    let (contr, mut gi, mut gt) = match degenerate {
        DegenerateRows::Error => contrastive_alignment(h_image, h_text)?,
        DegenerateRows::Skip => {
            let (c, gi, gt, _) = contrastive_alignment_masked(h_image, h_text)?;
            (c, gi, gt)
        }
    };
    let lam = F::from_f64_lossy(lambda);
    for v in gi.data_mut().iter_mut().chain(gt.data_mut().iter_mut()) {
        *v = *v * lam;
    }
    let breakdown = LossBreakdown::new(cls.to_f64_lossy(), contr.to_f64_lossy(), lambda);
    Ok((
        breakdown,
        ObjectiveGrads {
            logits: grad_logits,
            h_image: gi,
            h_text: gt,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const B: Label = Label::Benign;
    const H: Label = Label::Hateful;

    #[test]
    fn parallel_rows_never_go_negative() {
        let mut r = crate::rng::stream(5);
        for _ in 0..500 {
            let a = Matrix::from_vec(3, 7, (0..21).map(|_| r.random_range(-3.0..3.0)).collect())
                .unwrap();
            let (same, _, _) = contrastive_alignment(&a, &a.map(|v| v * 2.5)).unwrap();
            let (opp, _, _) = contrastive_alignment(&a, &a.map(|v| -v * 0.3)).unwrap();
            assert!(same >= 0.0 && opp <= 2.0, "{same} {opp}");
        }
    }

    #[test]
    fn masked_alignment_skips_zero_rows() {
        let hi = Matrix::from_rows(&[[1.0f64, 0.0], [0.0, 0.0], [0.0, 2.0]]);
        let ht = Matrix::from_rows(&[[0.0f64, 3.0], [1.0, 1.0], [0.0, 1.0]]);
        let (loss, gi, gt, skipped) = contrastive_alignment_masked(&hi, &ht).unwrap();
        assert_eq!(skipped, 1);
        // rows 0 and 2: cos 0 and 1
        assert!((loss - 0.5).abs() < 1e-15);
        assert!(gi.row(1).iter().chain(gt.row(1)).all(|&v| v == 0.0));

        let kept = [0usize, 2];
        let sub = |m: &Matrix<f64>| Matrix::from_rows(&kept.map(|r| [m.get(r, 0), m.get(r, 1)]));
        let (strict, si, _) = contrastive_alignment(&sub(&hi), &sub(&ht)).unwrap();
        assert_eq!(strict, loss);
        assert_eq!(si.row(0), gi.row(0));

        let zero = Matrix::<f64>::zeros(2, 2);
        let (l, _, _, skipped) = contrastive_alignment_masked(&zero, &zero).unwrap();
        assert_eq!((l, skipped), (0.0, 2));

        let logits = Matrix::from_rows(&[[0.0f64, 0.0]; 3]);
        assert!(total_loss(&logits, &[B, H, B], &hi, &ht, 0.01).is_err());
        let (b, _) =
            total_loss_with(&logits, &[B, H, B], &hi, &ht, 0.01, DegenerateRows::Skip).unwrap();
        assert_eq!(b.contrastive, 0.5);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Matrix::from_rows(&[[0.0f64, 0.0], [0.0, 0.0]]);
        let (loss, _) = cross_entropy(&logits, &[B, H]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_loss() {
        // softmax(1, -1)[1] = e^-1 / (e + e^-1) = 1 / (1 + e^2)
        let logits = Matrix::from_rows(&[[1.0f64, -1.0]]);
        let (loss, _) = cross_entropy(&logits, &[H]).unwrap();
        let expected = -(1.0 / (1.0 + 2.0f64.exp())).ln();
        assert!((expected - 2.126_928_011_042_972_5).abs() < 1e-12);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits() {
        let logits = Matrix::from_rows(&[[100.0f64, -100.0]]);
        let (loss, _) = cross_entropy(&logits, &[B]).unwrap();
        assert!(loss < 1e-20);
        let (loss32, _) = cross_entropy(&logits.cast::<f32>(), &[B]).unwrap();
        assert!(loss32 < 1e-20);
    }

    #[test]
    fn unlabeled_is_an_error() {
        let logits = Matrix::from_rows(&[[0.0f64, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            cross_entropy(&logits, &[B, Label::Unlabeled]),
            Err(Error::Unlabeled { index: 1 })
        ));
    }

    #[test]
    fn alignment_special_cases() {
        let a = Matrix::from_rows(&[[1.0f64, 2.0, -0.5]]);
        let (loss, gi, gt) = contrastive_alignment(&a, &a).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(gi.data().iter().chain(gt.data()).all(|v| v.abs() < 1e-15));

        let neg = a.map(|v| -v);
        let (loss, _, _) = contrastive_alignment(&a, &neg).unwrap();
        assert!((loss - 2.0).abs() < 1e-15);

        let x = Matrix::from_rows(&[[1.0f64, 0.0], [0.0, 3.0]]);
        let y = Matrix::from_rows(&[[0.0f64, 2.0], [-1.0, 0.0]]);
        let (loss, _, _) = contrastive_alignment(&x, &y).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rows_rejected() {
        let a = Matrix::from_rows(&[[1.0f64, 0.0], [0.0, 0.0]]);
        let b = Matrix::from_rows(&[[1.0f64, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            contrastive_alignment(&a, &b),
            Err(Error::DegenerateVector {
                which: "h_I",
                row: 1
            })
        ));
        assert!(matches!(
            contrastive_alignment(&b, &a),
            Err(Error::DegenerateVector {
                which: "h_T",
                row: 1
            })
        ));
    }

    #[test]
    fn total_loss_degenerate_weights() {
        let logits = Matrix::from_rows(&[[0.3f64, -0.2], [1.0, 0.5]]);
        let hi = Matrix::from_rows(&[[1.0f64, 0.2], [0.1, 0.7]]);
        let ht = Matrix::from_rows(&[[0.4f64, -0.2], [0.9, 0.1]]);
        let (cls, _) = cross_entropy(&logits, &[B, H]).unwrap();

        let (lb, g) = total_loss(&logits, &[B, H], &hi, &ht, 0.0).unwrap();
        assert_eq!(lb.total, cls);
        assert!(g.h_image.data().iter().all(|&v| v == 0.0));

        let (lb, _) = total_loss(&logits, &[B, H], &hi, &hi, 0.01).unwrap();
        assert!((lb.total - cls).abs() < 1e-15);
    }

    #[test]
    fn breakdown_arithmetic() {
        let lb = LossBreakdown::new(0.7, 0.4, 0.01);
        assert!((lb.total - 0.704).abs() < 1e-15);
    }

    #[test]
    fn losses_match_finite_differences() {
        let logits = Matrix::from_rows(&[[0.3f64, -1.2], [2.0, 0.5], [-0.7, 0.1]]);
        let labels = [B, H, H];
        let hi = Matrix::from_rows(&[[1.0f64, 0.2, -0.3], [0.1, 0.7, 0.4], [-0.5, 0.5, 1.5]]);
        let ht = Matrix::from_rows(&[[0.4f64, -0.2, 0.8], [0.9, 0.1, -0.6], [0.3, 0.3, 0.2]]);
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);

        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        for i in 0..logits.data().len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[i] += eps;
            m.data_mut()[i] -= eps;
            let num = (cross_entropy(&p, &labels).unwrap().0
                - cross_entropy(&m, &labels).unwrap().0)
                / (2.0 * eps);
            assert!(rel(g.data()[i], num) < 1e-5, "ce {i}");
        }

        let (_, gi, gt) = contrastive_alignment(&hi, &ht).unwrap();
        for (which, grad) in [(0, &gi), (1, &gt)] {
            for i in 0..hi.data().len() {
                let probe = |delta: f64| {
                    let (mut a, mut b) = (hi.clone(), ht.clone());
                    if which == 0 {
                        a.data_mut()[i] += delta;
                    } else {
                        b.data_mut()[i] += delta;
                    }
                    contrastive_alignment(&a, &b).unwrap().0
                };
                let num = (probe(eps) - probe(-eps)) / (2.0 * eps);
                assert!(rel(grad.data()[i], num) < 1e-5, "contrastive {which} {i}");
            }
        }
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
        proptest::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_filter("non-degenerate rows", move |v| {
                v.chunks(cols)
                    .all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6)
            })
            .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
    }

    proptest! {
        #[test]
        fn contrastive_in_range_and_scale_invariant(
            (hi, ht) in (1usize..6, 1usize..8).prop_flat_map(|(n, d)| (matrix_strategy(n, d), matrix_strategy(n, d))),
            scales in proptest::collection::vec(0.01f64..100.0, 6),
        ) {
            let (loss, _, _) = contrastive_alignment(&hi, &ht).unwrap();
            prop_assert!((0.0..=2.0).contains(&loss));
            let mut scaled = hi.clone();
            for r in 0..scaled.rows() {
                let s = scales[r];
                scaled.row_mut(r).iter_mut().for_each(|v| *v *= s);
            }
            let (loss2, _, _) = contrastive_alignment(&scaled, &ht).unwrap();
            prop_assert!((loss - loss2).abs() < 1e-6);
        }

        #[test]
        fn ce_grad_rows_sum_to_zero(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..40).prop_filter("even", |v| v.len() % 2 == 0),
        ) {
            let n = logits.len() / 2;
            let m = Matrix::from_vec(n, 2, logits).unwrap();
            let labels: Vec<Label> = (0..n).map(|i| Label::from_bit(i % 3 == 0)).collect();
            let (loss, g) = cross_entropy(&m, &labels).unwrap();
            prop_assert!(loss >= 0.0);
            for r in 0..n {
                prop_assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }
}
