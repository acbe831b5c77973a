//! Network layout with an explicit split between accuracy-player and
//! fairness-player parameters.
//!
//! Hidden layers are numbered from 0. A contiguous `fairness_span` of them
//! belongs to the fairness player; every other hidden layer, plus the
//! single-unit sigmoid output layer, belongs to the accuracy player.

use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{self, Activation, Dense, GradTape, LayerGrad, Matrix, ParamGrads};

/// Stream id used for weight initialisation (minibatch shuffles use others).
pub(crate) const INIT_STREAM: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Accuracy,
    Fairness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    /// Widths of the hidden layers; the output unit is implicit.
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub fairness_span: Range<usize>,
}

/// The layer-count / width knobs as they appear in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layers_before: usize,
    pub fairness_layers: usize,
    pub layers_after: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl Architecture {
    /// 2 accuracy layers, 1 fairness layer, 1 accuracy layer.
    pub fn adult() -> Self {
        Self {
            layers_before: 2,
            fairness_layers: 1,
            layers_after: 1,
            hidden_width: 64,
            activation: Activation::Relu,
        }
    }

    /// 2 accuracy layers, 3 fairness layers, 1 accuracy layer.
    pub fn health() -> Self {
        Self {
            fairness_layers: 3,
            ..Self::adult()
        }
    }

    pub fn into_spec(&self, input_width: usize) -> Result<NetworkSpec> {
        let hidden = self.layers_before + self.fairness_layers + self.layers_after;
        let spec = NetworkSpec {
            input_width,
            layer_widths: vec![self.hidden_width; hidden],
            activations: vec![self.activation; hidden],
            fairness_span: self.layers_before..self.layers_before + self.fairness_layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::adult()
    }
}

pub fn adult_default_spec(input_width: usize) -> NetworkSpec {
    Architecture::adult()
        .into_spec(input_width)
        .expect("adult preset is valid for positive input width")
}

pub fn health_default_spec(input_width: usize) -> NetworkSpec {
    Architecture::health()
        .into_spec(input_width)
        .expect("health preset is valid for positive input width")
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.activations.len() != self.layer_widths.len() {
            return Err(Error::Config(format!(
                "{} hidden layers but {} activations",
                self.layer_widths.len(),
                self.activations.len()
            )));
        }
        for a in &self.activations {
            a.validate()?;
        }
        let span = &self.fairness_span;
        if span.is_empty() || span.end > self.layer_widths.len() {
            return Err(Error::Config(format!(
                "fairness span {span:?} must be non-empty and within {} hidden layers",
                self.layer_widths.len()
            )));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_widths.len()
    }

    /// Hidden layers plus the output layer.
    pub fn total_layers(&self) -> usize {
        self.layer_widths.len() + 1
    }

    /// Partition tag of every layer, output layer last.
    pub fn partition(&self) -> Vec<Partition> {
        (0..self.total_layers())
            .map(|l| {
                if self.fairness_span.contains(&l) {
                    Partition::Fairness
                } else {
                    Partition::Accuracy
                }
            })
            .collect()
    }

    /// `(fan_in, fan_out, activation)` for every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, Activation)> {
        let mut out = Vec::with_capacity(self.total_layers());
        let mut fan_in = self.input_width;
        for (&w, &a) in self.layer_widths.iter().zip(&self.activations) {
            out.push((fan_in, w, a));
            fan_in = w;
        }
        out.push((fan_in, 1, Activation::Sigmoid));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o, _)| i * o + o).sum()
    }

    pub fn partition_param_count(&self, part: Partition) -> usize {
        self.layer_shapes()
            .iter()
            .zip(self.partition())
            .filter(|(_, p)| *p == part)
            .map(|((i, o, _), _)| i * o + o)
            .sum()
    }
}

/// Per-layer parameters, each layer tagged with the player that owns it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedParams {
    layers: Vec<Dense>,
    tags: Vec<Partition>,
}

/// Glorot-uniform weights and zero biases from a seeded ChaCha stream;
/// the same `(spec, seed)` always gives bit-identical parameters.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<PartitionedParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let layers = spec
        .layer_shapes()
        .into_iter()
        .map(|(fan_in, fan_out, act)| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            Dense::new(Matrix::new(fan_in, fan_out, w)?, vec![0.0; fan_out], act)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionedParams {
        layers,
        tags: spec.partition(),
    })
}

impl PartitionedParams {
    pub fn new(layers: Vec<Dense>, tags: Vec<Partition>) -> Result<Self> {
        if layers.len() != tags.len() {
            return Err(Error::Contract(format!(
                "{} layers but {} partition tags",
                layers.len(),
                tags.len()
            )));
        }
        Ok(Self { layers, tags })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn tags(&self) -> &[Partition] {
        &self.tags
    }

    pub fn layer_indices(&self, part: Partition) -> Vec<usize> {
        (0..self.tags.len()).filter(|&l| self.tags[l] == part).collect()
    }

    pub fn mask(&self, part: Partition) -> Vec<bool> {
        self.tags.iter().map(|&t| t == part).collect()
    }

    pub fn param_count(&self, part: Partition) -> usize {
        self.layers
            .iter()
            .zip(&self.tags)
            .filter(|(_, &t)| t == part)
            .map(|(l, _)| l.param_count())
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Checks that layer shapes and tags agree with `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.layer_shapes();
        if shapes.len() != self.layers.len() || self.tags != spec.partition() {
            return Err(Error::Contract("parameters do not match network spec".into()));
        }
        for (l, ((i, o, a), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.weights.shape() != (*i, *o) || layer.activation != *a {
                return Err(Error::Contract(format!(
                    "layer {l} is {:?}/{}, spec wants {:?}/{a}",
                    layer.weights.shape(),
                    layer.activation,
                    (i, o)
                )));
            }
        }
        Ok(())
    }

    /// Order-sensitive hash of one partition's parameter bits.
    pub fn checksum(&self, part: Partition) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (l, layer) in self.layers.iter().enumerate() {
            if self.tags[l] != part {
                continue;
            }
            h = (h ^ l as u64).wrapping_mul(0x0000_0100_0000_01b3);
            for v in layer.weights.data().iter().chain(&layer.bias) {
                h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// All parameters as one vector, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        ndcore::flatten_params(&self.layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.flatten()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// Forward pass producing the `(n x 1)` prediction column and its tape.
pub fn network_forward(
    spec: &NetworkSpec,
    params: &PartitionedParams,
    x: &Matrix,
) -> Result<(Matrix, GradTape)> {
    if x.cols() != spec.input_width {
        return Err(Error::Dimension {
            op: "network_forward",
            left: x.shape(),
            right: (spec.input_width, spec.layer_widths.first().copied().unwrap_or(1)),
        });
    }
    ndcore::forward(params.layers(), x)
}

/// Gradients owned by one player, keyed by layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionGrads {
    pub part: Partition,
    pub entries: Vec<(usize, LayerGrad)>,
}

impl PartitionGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, g) in &self.entries {
            out.extend_from_slice(g.weights.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

/// Splits a full gradient into the accuracy and fairness halves.
pub fn split_gradients(
    grads: &ParamGrads,
    tags: &[Partition],
) -> Result<(PartitionGrads, PartitionGrads)> {
    if grads.layers.len() != tags.len() {
        return Err(Error::Contract(format!(
            "gradient has {} layers, partition has {}",
            grads.layers.len(),
            tags.len()
        )));
    }
    let mut acc = PartitionGrads {
        part: Partition::Accuracy,
        entries: Vec::new(),
    };
    let mut fair = PartitionGrads {
        part: Partition::Fairness,
        entries: Vec::new(),
    };
    for (l, (g, &t)) in grads.layers.iter().zip(tags).enumerate() {
        let Some(g) = g else { continue };
        let target = match t {
            Partition::Accuracy => &mut acc,
            Partition::Fairness => &mut fair,
        };
        target.entries.push((l, g.clone()));
    }
    Ok((acc, fair))
}

/// Inverse of [`split_gradients`].
pub fn merge_gradients(a: &PartitionGrads, f: &PartitionGrads, layers: usize) -> Result<ParamGrads> {
    let mut out: Vec<Option<LayerGrad>> = vec![None; layers];
    for (l, g) in a.entries.iter().chain(&f.entries) {
        let slot = out
            .get_mut(*l)
            .ok_or_else(|| Error::Contract(format!("layer {l} out of range")))?;
        if slot.is_some() {
            return Err(Error::Contract(format!("layer {l} present in both halves")));
        }
        *slot = Some(g.clone());
    }
    Ok(ParamGrads {
        layers: out,
        input: None,
    })
}
