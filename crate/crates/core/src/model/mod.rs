//! The averaging baseline and the gated fusion model.
//!
//! Parameter layout (names and order are stable; checkpoints depend on it):
//!
//! | # | gatedclip tensor            | shape                      |
//! |---|-----------------------------|----------------------------|
//! | 0 | `proj_image.fc1.weight`     | proj_hidden x dim_in       |
//! | 1 | `proj_image.fc1.bias`       | proj_hidden                |
//! | 2 | `proj_image.fc2.weight`     | proj_out x proj_hidden     |
//! | 3 | `proj_image.fc2.bias`       | proj_out                   |
//! | 4-7 | `proj_text.*`             | as above                   |
//! | 8 | `gate.fc_c.weight`          | gate_hidden x 2*proj_out   |
//! | 9 | `gate.fc_c.bias`            | gate_hidden                |
//! |10 | `gate.fc_g.weight`          | 1 x gate_hidden            |
//! |11 | `gate.fc_g.bias`            | 1                          |
//! |12 | `classifier.fc_h.weight`    | cls_hidden x proj_out      |
//! |13 | `classifier.fc_h.bias`      | cls_hidden                 |
//! |14 | `classifier.fc_cls.weight`  | num_classes x cls_hidden   |
//! |15 | `classifier.fc_cls.bias`    | num_classes                |
//!
//! The baseline has only `classifier.fc_cls.{weight,bias}` over `dim_in`.

mod baseline;
mod gated;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding_store::Label;
use crate::error::{Error, Result};
use crate::nn_core::{
    init_params, InitScheme, LayerSpec, MatRef, Matrix, Mode, ParameterSet, Real, Shape,
};
use crate::objective::{cross_entropy, total_loss_with, DegenerateRows, LossBreakdown};

pub use baseline::{baseline_backward, baseline_forward, BaselineCache};
pub use gated::{
    classify, classify_backward, fuse, fuse_backward, gate, gate_backward, gatedclip_backward,
    gatedclip_forward, project, project_backward, ClassifierCache, ClassifierParams, Dense,
    ForwardCache, FuseGrads, GateCache, GateGrads, GateParams, ProjectionCache, ProjectionHead,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Baseline,
    #[serde(rename = "gatedclip")]
    GatedClip,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::GatedClip => "gatedclip",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "gatedclip" => Ok(ModelKind::GatedClip),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim_in: usize,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub gate_hidden: usize,
    pub cls_hidden: usize,
    pub num_classes: usize,
    pub dropout_proj: f64,
    pub dropout_cls: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim_in: 512,
            proj_hidden: 256,
            proj_out: 128,
            gate_hidden: 64,
            cls_hidden: 64,
            num_classes: 2,
            dropout_proj: 0.2,
            dropout_cls: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("dim_in", self.dim_in),
            ("proj_hidden", self.proj_hidden),
            ("proj_out", self.proj_out),
            ("gate_hidden", self.gate_hidden),
            ("cls_hidden", self.cls_hidden),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        for (name, rate) in [
            ("dropout_proj", self.dropout_proj),
            ("dropout_cls", self.dropout_cls),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {rate}"
                )));
            }
        }
        Ok(())
    }
}

// tensor indices in the gatedclip layout
pub(crate) const IMG_FC1: usize = 0;
pub(crate) const IMG_FC2: usize = 2;
pub(crate) const TXT_FC1: usize = 4;
pub(crate) const TXT_FC2: usize = 6;
pub(crate) const GATE_FC_C: usize = 8;
pub(crate) const GATE_FC_G: usize = 10;
pub(crate) const CLS_FC_H: usize = 12;
pub(crate) const CLS_FC_OUT: usize = 14;

/// Model kind plus dimensions: everything needed to build, run and check a
/// parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub config: ModelConfig,
}

impl Architecture {
    pub fn new(kind: ModelKind, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kind, config })
    }

    /// Layer descriptors in parameter order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        match self.kind {
            ModelKind::Baseline => vec![LayerSpec::new(
                "classifier.fc_cls",
                c.dim_in,
                c.num_classes,
                InitScheme::Xavier,
            )],
            ModelKind::GatedClip => vec![
                LayerSpec::new("proj_image.fc1", c.dim_in, c.proj_hidden, InitScheme::He),
                LayerSpec::new("proj_image.fc2", c.proj_hidden, c.proj_out, InitScheme::He),
                LayerSpec::new("proj_text.fc1", c.dim_in, c.proj_hidden, InitScheme::He),
                LayerSpec::new("proj_text.fc2", c.proj_hidden, c.proj_out, InitScheme::He),
                LayerSpec::new("gate.fc_c", 2 * c.proj_out, c.gate_hidden, InitScheme::He),
                LayerSpec::new("gate.fc_g", c.gate_hidden, 1, InitScheme::Xavier),
                LayerSpec::new("classifier.fc_h", c.proj_out, c.cls_hidden, InitScheme::He),
                LayerSpec::new(
                    "classifier.fc_cls",
                    c.cls_hidden,
                    c.num_classes,
                    InitScheme::Xavier,
                ),
            ],
        }
    }

    pub fn init_params<F: Real>(&self, seed: u64) -> Result<ParameterSet<F>> {
        init_params(&self.layers(), seed)
    }

    /// Trainable scalars, biases included.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out)
            .sum()
    }

    /// `(name, shape)` of every tensor, in parameter order.
    pub fn layout(&self) -> Vec<(String, Shape)> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                [
                    (
                        format!("{}.weight", l.name),
                        Shape::Matrix(l.fan_out, l.fan_in),
                    ),
                    (format!("{}.bias", l.name), Shape::Vector(l.fan_out)),
                ]
            })
            .collect()
    }

    /// Errors unless `params` has exactly this architecture's names and shapes.
    pub fn check_params<F: Real>(&self, params: &ParameterSet<F>) -> Result<()> {
        let expected = self.layout();
        let matches = expected.len() == params.len()
            && expected
                .iter()
                .zip(params.iter())
                .all(|((name, shape), t)| *name == t.name && *shape == t.shape);
        if matches {
            return Ok(());
        }
        let want = expected
            .iter()
            .map(|(n, s)| format!("{n}{:?}", s.dims()))
            .collect::<Vec<_>>()
            .join(", ");
        let got = params
            .iter()
            .map(|t| format!("{}{:?}", t.name, t.shape.dims()))
            .collect::<Vec<_>>()
            .join(", ");
        Err(Error::ConfigMismatch(format!(
            "{} expects [{want}], got [{got}]",
            self.kind
        )))
    }

    pub fn forward<F: Real>(
        &self,
        image: MatRef<'_, F>,
        text: MatRef<'_, F>,
        params: &ParameterSet<F>,
        mode: Mode,
        rng_key: u64,
    ) -> Result<ForwardPass<F>> {
        match self.kind {
            ModelKind::Baseline => baseline_forward(image, text, params).map(ForwardPass::Baseline),
            ModelKind::GatedClip => {
                gatedclip_forward(image, text, params, &self.config, mode, rng_key)
                    .map(ForwardPass::Gated)
            }
        }
    }

    /// Writes parameter gradients into `params`' grad buffers (overwriting).
    /// `projection_grads` carries extra gradients on `(h_I, h_T)`; it is
    /// ignored by the baseline.
    pub fn backward<F: Real>(
        &self,
        pass: &ForwardPass<F>,
        grad_logits: &Matrix<F>,
        projection_grads: Option<(&Matrix<F>, &Matrix<F>)>,
        params: &mut ParameterSet<F>,
    ) -> Result<()> {
        match pass {
            ForwardPass::Baseline(cache) => baseline_backward(cache, grad_logits, params),
            ForwardPass::Gated(cache) => {
                let (gi, gt) = match projection_grads {
                    Some((gi, gt)) => (Some(gi), Some(gt)),
                    None => (None, None),
                };
                gatedclip_backward(cache, grad_logits, gi, gt, params)
            }
        }
    }
}

impl Architecture {
    /// Objective value only (forward pass, no gradients).
    #[allow(clippy::too_many_arguments)]
    pub fn loss<F: Real>(
        &self,
        image: MatRef<'_, F>,
        text: MatRef<'_, F>,
        labels: &[Label],
        params: &ParameterSet<F>,
        lambda: f64,
        mode: Mode,
        rng_key: u64,
    ) -> Result<LossBreakdown> {
        let pass = self.forward(image, text, params, mode, rng_key)?;
        match pass.projections() {
            Some((hi, ht)) => {
                let skip = DegenerateRows::Skip;
                Ok(total_loss_with(pass.logits(), labels, hi, ht, lambda, skip)?.0)
            }
            None => {
                let (cls, _) = cross_entropy(pass.logits(), labels)?;
                Ok(LossBreakdown::new(cls.to_f64_lossy(), 0.0, lambda))
            }
        }
    }

    /// Forward pass, combined objective and backward pass. Gradients are
    /// written into `params`. The baseline has no projections, so its
    /// alignment term is reported as 0. Projection rows that are exactly zero
    /// are left out of the alignment term ([`DegenerateRows::Skip`]).
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad<F: Real>(
        &self,
        image: MatRef<'_, F>,
        text: MatRef<'_, F>,
        labels: &[Label],
        params: &mut ParameterSet<F>,
        lambda: f64,
        mode: Mode,
        rng_key: u64,
    ) -> Result<(LossBreakdown, ForwardPass<F>)> {
        let pass = self.forward(image, text, params, mode, rng_key)?;
        let breakdown = match pass.projections() {
            Some((hi, ht)) => {
                let (breakdown, grads) =
                    total_loss_with(pass.logits(), labels, hi, ht, lambda, DegenerateRows::Skip)?;
                self.backward(
                    &pass,
                    &grads.logits,
                    Some((&grads.h_image, &grads.h_text)),
                    params,
                )?;
                breakdown
            }
            None => {
                let (cls, grad_logits) = cross_entropy(pass.logits(), labels)?;
                self.backward(&pass, &grad_logits, None, params)?;
                LossBreakdown::new(cls.to_f64_lossy(), 0.0, lambda)
            }
        };
        Ok((breakdown, pass))
    }
}

/// `param_count` for a kind and config.
pub fn param_count(kind: ModelKind, config: &ModelConfig) -> usize {
    Architecture {
        kind,
        config: config.clone(),
    }
    .param_count()
}

/// Result of a forward pass of either model kind.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ForwardPass<F> {
    Baseline(BaselineCache<F>),
    Gated(ForwardCache<F>),
}

impl<F: Real> ForwardPass<F> {
    pub fn logits(&self) -> &Matrix<F> {
        match self {
            ForwardPass::Baseline(c) => &c.logits,
            ForwardPass::Gated(c) => &c.logits,
        }
    }

    /// `(h_I, h_T)` as fed to the gate, when the model has projections.
    pub fn projections(&self) -> Option<(&Matrix<F>, &Matrix<F>)> {
        match self {
            ForwardPass::Baseline(_) => None,
            ForwardPass::Gated(c) => Some((c.h_image(), c.h_text())),
        }
    }

    pub fn gate_values(&self) -> Option<&[F]> {
        match self {
            ForwardPass::Baseline(_) => None,
            ForwardPass::Gated(c) => Some(c.gate_values()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_config() -> ModelConfig {
        ModelConfig {
            dim_in: 1,
            proj_hidden: 1,
            proj_out: 1,
            gate_hidden: 1,
            cls_hidden: 1,
            num_classes: 1,
            dropout_proj: 0.2,
            dropout_cls: 0.3,
        }
    }

    #[test]
    fn default_config_counts() {
        let c = ModelConfig::default();
        let expected = 2 * (512 * 256 + 256 + 256 * 128 + 128)
            + (256 * 64 + 64 + 64 + 1)
            + (128 * 64 + 64 + 64 * 2 + 2);
        assert_eq!(expected, 353_347);
        assert_eq!(param_count(ModelKind::GatedClip, &c), 353_347);
        assert_eq!(param_count(ModelKind::Baseline, &c), 2 * 512 + 2);
    }

    #[test]
    fn unit_dims_count() {
        // the gate input is the concatenation [h_I; h_T], 2 * proj_out = 2
        // wide, so gate.fc_c holds 2 weights even when every dim is 1
        let c = unit_config();
        let count = param_count(ModelKind::GatedClip, &c);
        assert_eq!(
            count,
            2 * (1 + 1 + 1 + 1) + (2 + 1 + 1 + 1) + (1 + 1 + 1 + 1)
        );
        assert_eq!(count, 17);
    }

    #[test]
    fn sixteen_tensors_in_documented_order() {
        let arch = Architecture::new(ModelKind::GatedClip, ModelConfig::default()).unwrap();
        let p: ParameterSet<f32> = arch.init_params(1).unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p.num_scalars(), 353_347);
        assert_eq!(p.tensor(GATE_FC_C).name, "gate.fc_c.weight");
        assert_eq!(p.tensor(CLS_FC_OUT + 1).name, "classifier.fc_cls.bias");
        arch.check_params(&p).unwrap();
        let base = Architecture::new(ModelKind::Baseline, ModelConfig::default()).unwrap();
        assert!(matches!(
            base.check_params(&p),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn invalid_config() {
        let c = ModelConfig {
            dropout_cls: 1.0,
            ..ModelConfig::default()
        };
        assert!(Architecture::new(ModelKind::GatedClip, c).is_err());
        let c = ModelConfig {
            proj_out: 0,
            ..ModelConfig::default()
        };
        assert!(Architecture::new(ModelKind::GatedClip, c).is_err());
    }

    #[test]
    fn kind_names() {
        assert_eq!(
            "gatedclip".parse::<ModelKind>().unwrap(),
            ModelKind::GatedClip
        );
        assert_eq!(ModelKind::Baseline.to_string(), "baseline");
        assert_eq!(
            serde_json::to_string(&ModelKind::GatedClip).unwrap(),
            "\"gatedclip\""
        );
    }
}
