use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::Real;
use super::params::{ParamTensor, ParameterSet, Shape};
use crate::error::Result;
use crate::rng::{self, Purpose};

/// Weight initialization scheme, chosen by what consumes the layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Feeds a ReLU: N(0, 2 / fan_in).
    He,
    /// Feeds a sigmoid or is a linear output: N(0, 1 / fan_in).
    Xavier,
}

impl InitScheme {
    pub fn std(self, fan_in: usize) -> f64 {
        let gain = match self {
            InitScheme::He => 2.0,
            InitScheme::Xavier => 1.0,
        };
        (gain / fan_in as f64).sqrt()
    }
}

/// One dense layer of an architecture descriptor. Produces the tensors
/// `{name}.weight` (`fan_out x fan_in`) and `{name}.bias` (`fan_out`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub scheme: InitScheme,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize, scheme: InitScheme) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
            scheme,
        }
    }
}

/// Draws weights from the layer's scheme with zero biases. Layer `i` uses its
/// own keyed stream, so adding a layer never perturbs the others.
pub fn init_params<F: Real>(layers: &[LayerSpec], seed: u64) -> Result<ParameterSet<F>> {
    let mut params = ParameterSet::new();
    for (i, layer) in layers.iter().enumerate() {
        let std = layer.scheme.std(layer.fan_in);
        let mut rng = rng::keyed(seed, Purpose::Init, i as u64, 0);
        let values = (0..layer.fan_in * layer.fan_out)
            .map(|_| F::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        params.push(ParamTensor::with_values(
            format!("{}.weight", layer.name),
            Shape::Matrix(layer.fan_out, layer.fan_in),
            values,
        )?)?;
        params.push(ParamTensor::zeros(
            format!("{}.bias", layer.name),
            Shape::Vector(layer.fan_out),
        ))?;
    }
    Ok(params)
}

impl<F: Real> ParameterSet<F> {
    /// Zero-valued parameters with the names and shapes of `layers`.
    pub fn from_layout(layers: &[LayerSpec]) -> Self {
        let mut p = ParameterSet::new();
        for l in layers {
            p.push(ParamTensor::zeros(
                format!("{}.weight", l.name),
                Shape::Matrix(l.fan_out, l.fan_in),
            ))
            .expect("layer names are unique");
            p.push(ParamTensor::zeros(
                format!("{}.bias", l.name),
                Shape::Vector(l.fan_out),
            ))
            .expect("layer names are unique");
        }
        p
    }
}
