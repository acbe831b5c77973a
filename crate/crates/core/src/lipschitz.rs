//! Lipschitz bookkeeping for dense networks with respect to their
//! parameters.
//!
//! Two closed forms share one shape,
//!
//! ```text
//! L* = sqrt( sum_i (prod_{j>i} K_j)^2 * L_i^2 * c_i^2 )
//! ```
//!
//! [`param_bound`] is the structural form over activation constants alone
//! (`K_j = L_j`, `c_i` the output bound of layer `i`). It is not a
//! certificate: it ignores the weights. [`network_param_bound`] is the
//! certified form for inputs in the unit ball, with `K_j = L_j ‖W_j‖₂` and
//! `c_i = sqrt(ρ_{i-1}^2 + 1)`, where `ρ` bounds the norm of the layer's
//! input (1 for the network input, `c·sqrt(width)` after a bounded layer)
//! and the `+1` accounts for the bias.
//!
//! Both exist only when every layer has a bounded activation. The
//! empirical sampler measures `|f(x; θ+δ) - f(x; θ)| / |δ|` directly and
//! is the only estimate available for unbounded (e.g. relu) networks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkSpec, Partition, PartitionedParams};
use crate::ndcore::{self, Activation, Dense, Matrix};

/// Perturbation radius used by the empirical checks.
pub const DEFAULT_RADIUS: f64 = 0.1;

pub fn activation_constant(a: Activation) -> f64 {
    match a {
        Activation::Sigmoid => 0.25,
        Activation::Identity
        | Activation::Tanh
        | Activation::Relu
        | Activation::Softplus
        | Activation::Relu6 => 1.0,
        Activation::LeakyRelu { alpha } | Activation::Elu { alpha } => alpha.max(1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputBound {
    Bounded(f64),
    Unbounded,
}

impl OutputBound {
    pub fn value(self) -> Option<f64> {
        match self {
            OutputBound::Bounded(c) => Some(c),
            OutputBound::Unbounded => None,
        }
    }
}

pub fn layer_output_bound(a: Activation) -> OutputBound {
    match a {
        Activation::Sigmoid | Activation::Tanh => OutputBound::Bounded(1.0),
        Activation::Relu6 => OutputBound::Bounded(6.0),
        Activation::Identity
        | Activation::Relu
        | Activation::LeakyRelu { .. }
        | Activation::Elu { .. }
        | Activation::Softplus => OutputBound::Unbounded,
    }
}

/// The closed-form bound for a stack of activations, or `Unbounded` if any
/// layer lacks an output bound.
pub fn param_bound(activations: &[Activation]) -> OutputBound {
    let mut sum = 0.0;
    for (i, &a) in activations.iter().enumerate() {
        let Some(c) = layer_output_bound(a).value() else {
            return OutputBound::Unbounded;
        };
        let downstream: f64 = activations[i + 1..]
            .iter()
            .map(|&b| activation_constant(b))
            .product();
        let li = activation_constant(a);
        sum += (downstream * li * c).powi(2);
    }
    OutputBound::Bounded(sum.sqrt())
}

/// Structural bound for a spec, from its activations alone.
pub fn structural_bound(spec: &NetworkSpec) -> OutputBound {
    let acts: Vec<Activation> = spec.layer_shapes().iter().map(|s| s.2).collect();
    param_bound(&acts)
}

/// Certified parameter-Lipschitz bound of the network output over inputs
/// with `‖x‖ ≤ 1`.
pub fn network_param_bound(spec: &NetworkSpec, params: &PartitionedParams) -> Result<OutputBound> {
    params.check_against(spec)?;
    Ok(layer_param_bound(params.layers(), 1.0))
}

/// Certified bound for raw layers over inputs with `‖x‖ ≤ input_radius`.
pub fn layer_param_bound(layers: &[Dense], input_radius: f64) -> OutputBound {
    let mut input_norm = input_radius;
    let mut terms = Vec::with_capacity(layers.len());
    for layer in layers {
        let Some(c) = layer_output_bound(layer.activation).value() else {
            return OutputBound::Unbounded;
        };
        let li = activation_constant(layer.activation);
        terms.push(li * (input_norm * input_norm + 1.0).sqrt());
        input_norm = c * (layer.out_width() as f64).sqrt();
    }
    let mut sum = 0.0;
    let mut downstream = 1.0;
    for (i, t) in terms.iter().enumerate().rev() {
        sum += (downstream * t).powi(2);
        downstream *= activation_constant(layers[i].activation) * layers[i].weights.spectral_norm_bound();
    }
    OutputBound::Bounded(sum.sqrt())
}

/// Lipschitz constant of the DP (or EO) loss for a predictor with
/// constant `l_f`.
pub fn dp_loss_bound(l_f: f64) -> f64 {
    2.0 * l_f
}

/// Where the empirical sampler draws inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDomain {
    /// Euclidean unit ball.
    UnitBall,
    /// `[0, 1]^d`, the range of min-max encoded features.
    UnitCube,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEstimate {
    pub samples: usize,
    pub radius: f64,
    pub domain: InputDomain,
    pub max_ratio: f64,
    /// Always false: sampling gives a lower estimate, never a certificate.
    pub certified: bool,
}

fn sample_input<R: Rng + ?Sized>(d: usize, domain: InputDomain, rng: &mut R) -> Vec<f64> {
    match domain {
        InputDomain::UnitCube => (0..d).map(|_| rng.gen::<f64>()).collect(),
        InputDomain::UnitBall => {
            let dir = gaussian_unit(d, rng);
            let r = rng.gen::<f64>().powf(1.0 / d as f64);
            dir.into_iter().map(|v| v * r).collect()
        }
    }
}

fn gaussian_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn scalar_output(layers: &[Dense], x: &[f64]) -> Result<f64> {
    let m = Matrix::new(1, x.len(), x.to_vec())?;
    Ok(ndcore::predict(layers, &m)?.get(0, 0))
}

/// Largest observed `|Δf| / |Δθ|` over random inputs and random
/// perturbations (radius in `(0, radius]`) of a random non-empty subset of
/// layers. Works for any network; nothing is certified.
pub fn empirical_lipschitz_estimate<R: Rng + ?Sized>(
    params: &PartitionedParams,
    samples: usize,
    radius: f64,
    domain: InputDomain,
    rng: &mut R,
) -> Result<EmpiricalEstimate> {
    let layers = params.layers();
    let n_layers = layers.len();
    let d = layers[0].in_width();
    let mut scratch = layers.to_vec();
    let mut max_ratio: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_input(d, domain, rng);
        let base = scalar_output(layers, &x)?;

        // random non-empty layer subset
        let mut order: Vec<usize> = (0..n_layers).collect();
        order.shuffle(rng);
        let take = rng.gen_range(1..=n_layers);
        let chosen = &order[..take];
        let count: usize = chosen.iter().map(|&l| layers[l].param_count()).sum();
        let dir = gaussian_unit(count, rng);
        let r = radius * (1.0 - rng.gen::<f64>()); // (0, radius]
        if r == 0.0 {
            continue;
        }
        let mut k = 0;
        for &l in chosen {
            let layer = &mut scratch[l];
            for w in layer.weights.data_mut().iter_mut().chain(layer.bias.iter_mut()) {
                *w += r * dir[k];
                k += 1;
            }
        }
        let moved = scalar_output(&scratch, &x)?;
        for &l in chosen {
            scratch[l] = layers[l].clone();
        }
        max_ratio = max_ratio.max((moved - base).abs() / r);
    }
    Ok(EmpiricalEstimate {
        samples,
        radius,
        domain,
        max_ratio,
        certified: false,
    })
}

/// Empirical check against the analytic bound; the network must have
/// bounded activations everywhere. Inputs come from the unit ball.
pub fn empirical_lipschitz_check<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &PartitionedParams,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if network_param_bound(spec, params)? == OutputBound::Unbounded {
        return Err(Error::Precondition(
            "empirical check needs bounded activations in every layer".into(),
        ));
    }
    Ok(empirical_lipschitz_estimate(params, samples, DEFAULT_RADIUS, InputDomain::UnitBall, rng)?
        .max_ratio)
}

/// `(|dp(f1) - dp(f2)|, 2 * max_i |f1_i - f2_i|)` over one evaluation set.
/// The first never exceeds the second.
pub fn dp_sup_norm_pair(
    yhat1: &[f64],
    yhat2: &[f64],
    groups: &[usize],
    k: usize,
) -> Result<(f64, f64)> {
    use crate::losses::{dp_loss, GroupedPredictions};
    let d1 = dp_loss(&GroupedPredictions::new(yhat1, groups, k)?)?.value;
    let d2 = dp_loss(&GroupedPredictions::new(yhat2, groups, k)?)?.value;
    let sup = yhat1
        .iter()
        .zip(yhat2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(((d1 - d2).abs(), 2.0 * sup))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLipschitz {
    pub index: usize,
    pub activation: String,
    pub partition: Partition,
    pub lipschitz_constant: f64,
    /// `None` when the activation is unbounded.
    pub output_bound: Option<f64>,
    pub weight_norm_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipReport {
    pub layers: Vec<LayerLipschitz>,
    /// Activation-only closed form; `None` when any layer is unbounded.
    pub structural_bound: Option<f64>,
    /// Certified bound over the unit ball; `None` when any layer is unbounded.
    pub network_bound: Option<f64>,
    pub dp_bound: Option<f64>,
    pub eo_bound: Option<f64>,
    pub unbounded: bool,
    pub unbounded_layers: Vec<usize>,
    pub empirical: Option<EmpiricalEstimate>,
    /// `2 ×` the empirical estimate; not a certificate.
    pub empirical_dp_estimate: Option<f64>,
}

/// Builds the full report; the empirical estimate is attached when
/// `samples > 0`.
pub fn lip_report<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &PartitionedParams,
    samples: usize,
    rng: &mut R,
) -> Result<LipReport> {
    params.check_against(spec)?;
    let shapes = spec.layer_shapes();
    let tags = spec.partition();
    let layers: Vec<LayerLipschitz> = shapes
        .iter()
        .zip(&tags)
        .zip(params.layers())
        .enumerate()
        .map(|(index, (((_, _, a), &partition), dense))| LayerLipschitz {
            index,
            activation: a.to_string(),
            partition,
            lipschitz_constant: activation_constant(*a),
            output_bound: layer_output_bound(*a).value(),
            weight_norm_bound: dense.weights.spectral_norm_bound(),
        })
        .collect();
    let unbounded_layers: Vec<usize> = layers
        .iter()
        .filter(|l| l.output_bound.is_none())
        .map(|l| l.index)
        .collect();
    let network_bound = network_param_bound(spec, params)?.value();
    let empirical = if samples > 0 {
        let domain = if network_bound.is_some() {
            InputDomain::UnitBall
        } else {
            InputDomain::UnitCube
        };
        Some(empirical_lipschitz_estimate(params, samples, DEFAULT_RADIUS, domain, rng)?)
    } else {
        None
    };
    Ok(LipReport {
        structural_bound: structural_bound(spec).value(),
        network_bound,
        dp_bound: network_bound.map(dp_loss_bound),
        eo_bound: network_bound.map(dp_loss_bound),
        unbounded: !unbounded_layers.is_empty(),
        unbounded_layers,
        empirical_dp_estimate: empirical.as_ref().map(|e| dp_loss_bound(e.max_ratio)),
        empirical,
        layers,
    })
}
