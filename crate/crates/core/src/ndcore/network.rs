use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::matrix::gemm;
use crate::ndcore::{Activation, Matrix};

/// An affine map followed by an elementwise activation.
///
/// Weights are stored `in x out` so a batch `x` (rows = samples) maps to
/// `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Dimension {
                op: "dense bias",
                left: weights.shape(),
                right: (1, bias.len()),
            });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("dense bias".into()));
        }
        activation.validate()?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// `x W + b` with `b` broadcast over rows.
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::Dimension {
            op: "affine_forward",
            left: x.shape(),
            right: w.shape(),
        });
    }
    if b.len() != w.cols() {
        return Err(Error::Dimension {
            op: "affine_forward bias",
            left: w.shape(),
            right: (1, b.len()),
        });
    }
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for r in 0..x.rows() {
        out.data_mut()[r * w.cols()..(r + 1) * w.cols()].copy_from_slice(b);
    }
    gemm(x, false, w, false, &mut out, 1.0);
    Ok(out)
}

/// Cached intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct GradTape {
    /// `activations[0]` is the network input, `activations[l + 1]` the
    /// output of layer `l`.
    activations: Vec<Matrix>,
    pre: Vec<Matrix>,
    fingerprint: u64,
}

impl GradTape {
    /// Number of recorded layers.
    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape holds the input at least")
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }

    /// Output of layer `l`.
    pub fn layer_output(&self, l: usize) -> &Matrix {
        &self.activations[l + 1]
    }

    pub fn pre_activation(&self, l: usize) -> &Matrix {
        &self.pre[l]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Matrix::zeros(layer.in_width(), layer.out_width()),
            bias: vec![0.0; layer.out_width()],
        }
    }
}

/// Gradients for each layer (`None` where not requested) and, optionally,
/// for the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Option<LayerGrad>>,
    pub input: Option<Matrix>,
}

impl ParamGrads {
    pub fn layer(&self, l: usize) -> Option<&LayerGrad> {
        self.layers.get(l).and_then(Option::as_ref)
    }

    /// Flattened gradient in the same order as [`flatten_params`], with
    /// zeros for layers that were not computed.
    pub fn flatten(&self, layers: &[Dense]) -> Vec<f64> {
        let mut out = Vec::new();
        for (g, layer) in self.layers.iter().zip(layers) {
            match g {
                Some(g) => {
                    out.extend_from_slice(g.weights.data());
                    out.extend_from_slice(&g.bias);
                }
                None => out.extend(std::iter::repeat_n(0.0, layer.param_count())),
            }
        }
        out
    }
}

fn fingerprint(layers: &[Dense]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(PRIME);
    };
    mix(layers.len() as u64);
    for layer in layers {
        mix(layer.in_width() as u64);
        mix(layer.out_width() as u64);
        for w in layer.weights.data().iter().chain(&layer.bias) {
            mix(w.to_bits());
        }
    }
    h
}

/// Runs `x` through every layer, recording what backward needs.
pub fn forward(layers: &[Dense], x: &Matrix) -> Result<(Matrix, GradTape)> {
    if layers.is_empty() {
        return Err(Error::Contract("network has no layers".into()));
    }
    if x.cols() != layers[0].in_width() {
        return Err(Error::Dimension {
            op: "network_forward",
            left: x.shape(),
            right: layers[0].weights.shape(),
        });
    }
    let mut activations = Vec::with_capacity(layers.len() + 1);
    let mut pre = Vec::with_capacity(layers.len());
    activations.push(x.clone());
    for layer in layers {
        let z = affine_forward(activations.last().unwrap(), &layer.weights, &layer.bias)?;
        let mut y = z.clone();
        layer.activation.apply_in_place(y.data_mut());
        pre.push(z);
        activations.push(y);
    }
    let out = activations.last().unwrap().clone();
    if !out.is_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok((
        out,
        GradTape {
            activations,
            pre,
            fingerprint: fingerprint(layers),
        },
    ))
}

/// Forward pass without a tape, in row chunks to bound memory.
pub fn predict(layers: &[Dense], x: &Matrix) -> Result<Matrix> {
    const CHUNK: usize = 4096;
    if layers.is_empty() {
        return Err(Error::Contract("network has no layers".into()));
    }
    if x.cols() != layers[0].in_width() {
        return Err(Error::Dimension {
            op: "predict",
            left: x.shape(),
            right: layers[0].weights.shape(),
        });
    }
    let out_w = layers.last().unwrap().out_width();
    let mut out = Vec::with_capacity(x.rows() * out_w);
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let mut h = x.slice_rows(start, end);
        for layer in layers {
            h = affine_forward(&h, &layer.weights, &layer.bias)?;
            layer.activation.apply_in_place(h.data_mut());
        }
        out.extend_from_slice(h.data());
        start = end;
    }
    Matrix::new(x.rows(), out_w, out)
}

/// Full reverse pass: gradients for every layer and for the input.
pub fn backward(layers: &[Dense], tape: &GradTape, d_out: &Matrix) -> Result<ParamGrads> {
    backward_masked(layers, tape, d_out, &vec![true; layers.len()], true)
}

/// Reverse pass restricted to the layers flagged in `wanted`.
///
/// Propagation stops at the lowest layer that still needs a gradient, so
/// asking only for upper layers is cheaper than a full pass.
pub fn backward_masked(
    layers: &[Dense],
    tape: &GradTape,
    d_out: &Matrix,
    wanted: &[bool],
    want_input: bool,
) -> Result<ParamGrads> {
    if tape.len() != layers.len() || wanted.len() != layers.len() {
        return Err(Error::Contract(format!(
            "tape records {} layers, network has {}, mask has {}",
            tape.len(),
            layers.len(),
            wanted.len()
        )));
    }
    if tape.fingerprint != fingerprint(layers) {
        return Err(Error::Contract(
            "tape was recorded with different parameters (stale tape)".into(),
        ));
    }
    if d_out.shape() != tape.output().shape() {
        return Err(Error::Dimension {
            op: "network_backward",
            left: tape.output().shape(),
            right: d_out.shape(),
        });
    }

    let mut grads: Vec<Option<LayerGrad>> = vec![None; layers.len()];
    let lowest = if want_input {
        Some(0)
    } else {
        wanted.iter().position(|&w| w)
    };
    let Some(lowest) = lowest else {
        return Ok(ParamGrads {
            layers: grads,
            input: None,
        });
    };

    let mut delta = d_out.clone();
    for l in (lowest..layers.len()).rev() {
        let layer = &layers[l];
        let z = &tape.pre[l];
        let y = &tape.activations[l + 1];
        // dz = delta * act'(z)
        if layer.activation != Activation::Identity {
            for ((d, &zv), &yv) in delta.data_mut().iter_mut().zip(z.data()).zip(y.data()) {
                *d *= layer.activation.derivative(zv, yv);
            }
        }
        let dz = delta;
        if wanted[l] {
            let input = &tape.activations[l];
            let mut dw = Matrix::zeros(layer.in_width(), layer.out_width());
            gemm(input, true, &dz, false, &mut dw, 0.0);
            let mut db = vec![0.0; layer.out_width()];
            for r in 0..dz.rows() {
                for (acc, v) in db.iter_mut().zip(dz.row(r)) {
                    *acc += v;
                }
            }
            grads[l] = Some(LayerGrad {
                weights: dw,
                bias: db,
            });
        }
        if l == lowest && !(l == 0 && want_input) {
            break;
        }
        let mut next = Matrix::zeros(dz.rows(), layer.in_width());
        gemm(&dz, false, &layer.weights, true, &mut next, 0.0);
        delta = next;
        if l == 0 {
            return Ok(ParamGrads {
                layers: grads,
                input: Some(delta),
            });
        }
    }
    Ok(ParamGrads {
        layers: grads,
        input: None,
    })
}

/// Concatenation of every layer's weights (row-major) then bias.
pub fn flatten_params(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::param_count).sum());
    for layer in layers {
        out.extend_from_slice(layer.weights.data());
        out.extend_from_slice(&layer.bias);
    }
    out
}

/// Inverse of [`flatten_params`]: writes `flat` back into `layers`.
pub fn unflatten_params(layers: &mut [Dense], flat: &[f64]) -> Result<()> {
    let total: usize = layers.iter().map(Dense::param_count).sum();
    if flat.len() != total {
        return Err(Error::Contract(format!(
            "expected {total} parameters, got {}",
            flat.len()
        )));
    }
    let mut off = 0;
    for layer in layers {
        let nw = layer.weights.data().len();
        layer.weights.data_mut().copy_from_slice(&flat[off..off + nw]);
        off += nw;
        let nb = layer.bias.len();
        layer.bias.copy_from_slice(&flat[off..off + nb]);
        off += nb;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let x = m(1, 2, &[1., 2.]);
        assert_eq!(
            affine_forward(&x, &Matrix::identity(2), &[0., 0.]).unwrap().data(),
            &[1., 2.]
        );
        let zero = m(1, 2, &[0., 0.]);
        let w = m(2, 2, &[0.3, -1.2, 4.0, 0.5]);
        assert_eq!(affine_forward(&zero, &w, &[3., -1.]).unwrap().data(), &[3., -1.]);
        let ones = m(1, 2, &[1., 1.]);
        let w2 = m(2, 2, &[2., 0., 0., 2.]);
        assert_eq!(affine_forward(&ones, &w2, &[1., 1.]).unwrap().data(), &[3., 3.]);
    }

    #[test]
    fn affine_shape_error_names_shapes() {
        let err = affine_forward(&Matrix::zeros(1, 3), &Matrix::zeros(2, 2), &[0., 0.])
            .unwrap_err()
            .to_string();
        assert!(err.contains("(1, 3)") && err.contains("(2, 2)"), "{err}");
    }

    #[test]
    fn single_identity_layer_then_sigmoid() {
        let layers = vec![Dense::new(Matrix::identity(1), vec![0.0], Activation::Sigmoid).unwrap()];
        let (y, tape) = forward(&layers, &m(1, 1, &[0.0])).unwrap();
        assert_eq!(y.data(), &[0.5]);
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn two_layer_hand_computed() {
        // h = relu([1,1] W1 + b1) with W1 = [[1,-1],[2,0.5]], b1 = [0, -1]
        //   z1 = [3, -1.5] -> h = [3, 0]
        // out = sigmoid(h . [0.5, 2] - 1) = sigmoid(0.5)
        let layers = vec![
            Dense::new(m(2, 2, &[1., -1., 2., 0.5]), vec![0., -1.], Activation::Relu).unwrap(),
            Dense::new(m(2, 1, &[0.5, 2.0]), vec![-1.0], Activation::Sigmoid).unwrap(),
        ];
        let (y, _) = forward(&layers, &m(1, 2, &[1., 1.])).unwrap();
        let expect = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((y.get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let layers = vec![
            Dense::new(m(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]), vec![0.1; 3], Activation::Tanh)
                .unwrap(),
            Dense::new(m(3, 1, &[1., -1., 0.5]), vec![0.0], Activation::Sigmoid).unwrap(),
        ];
        let x = m(2, 2, &[1., 2., -1., 0.5]);
        let (y, tape) = forward(&layers, &x).unwrap();
        let g = backward(&layers, &tape, &Matrix::zeros(y.rows(), 1)).unwrap();
        assert!(g.flatten(&layers).iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_input() {
        let layers = vec![Dense::new(m(2, 1, &[0.7, -0.2]), vec![0.3], Activation::Identity).unwrap()];
        let x = m(1, 2, &[1.5, -2.0]);
        let (_, tape) = forward(&layers, &x).unwrap();
        let g = backward(&layers, &tape, &m(1, 1, &[1.0])).unwrap();
        let lg = g.layer(0).unwrap();
        assert_eq!(lg.weights.data(), &[1.5, -2.0]);
        assert_eq!(lg.bias, vec![1.0]);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut layers =
            vec![Dense::new(m(1, 1, &[1.0]), vec![0.0], Activation::Sigmoid).unwrap()];
        let (y, tape) = forward(&layers, &m(1, 1, &[0.3])).unwrap();
        layers[0].weights.set(0, 0, 2.0);
        let err = backward(&layers, &tape, &y).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn masked_backward_matches_full_on_requested_layers() {
        let layers = vec![
            Dense::new(m(2, 2, &[0.3, -0.1, 0.2, 0.4]), vec![0.0, 0.1], Activation::Tanh).unwrap(),
            Dense::new(m(2, 2, &[0.5, 0.2, -0.3, 0.1]), vec![0.2, 0.0], Activation::Sigmoid)
                .unwrap(),
            Dense::new(m(2, 1, &[1.0, -2.0]), vec![0.1], Activation::Sigmoid).unwrap(),
        ];
        let x = m(3, 2, &[1., 0., 0.5, -1., 2., 1.]);
        let (y, tape) = forward(&layers, &x).unwrap();
        let full = backward(&layers, &tape, &y).unwrap();
        let part = backward_masked(&layers, &tape, &y, &[false, true, false], false).unwrap();
        assert!(part.layer(0).is_none() && part.layer(2).is_none());
        assert_eq!(part.layer(1), full.layer(1));
        assert!(part.input.is_none());
    }

    #[test]
    fn predict_matches_forward() {
        let layers = vec![
            Dense::new(m(2, 2, &[0.3, -0.1, 0.2, 0.4]), vec![0.0, 0.1], Activation::Relu).unwrap(),
            Dense::new(m(2, 1, &[1.0, -2.0]), vec![0.1], Activation::Sigmoid).unwrap(),
        ];
        let x = m(3, 2, &[1., 0., 0.5, -1., 2., 1.]);
        assert_eq!(predict(&layers, &x).unwrap(), forward(&layers, &x).unwrap().0);
    }

    #[test]
    fn flatten_round_trip() {
        let mut layers = vec![
            Dense::new(m(2, 2, &[1., 2., 3., 4.]), vec![5., 6.], Activation::Relu).unwrap(),
            Dense::new(m(2, 1, &[7., 8.]), vec![9.], Activation::Sigmoid).unwrap(),
        ];
        let flat = flatten_params(&layers);
        assert_eq!(flat, (1..=9).map(f64::from).collect::<Vec<_>>());
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        unflatten_params(&mut layers, &doubled).unwrap();
        assert_eq!(flatten_params(&layers), doubled);
    }
}
