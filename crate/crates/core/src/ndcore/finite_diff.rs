//! Central-difference gradient oracles used to cross-check backprop.

use crate::error::{Error, Result};
use crate::ndcore::network::{flatten_params, unflatten_params, Dense, LayerGrad, ParamGrads};
use crate::ndcore::Matrix;

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate of `theta`.
pub fn central_difference<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!("step h must be positive, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = eval(&mut f, &probe, i)?;
        probe[i] = orig - h;
        let down = eval(&mut f, &probe, i)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

fn eval<F>(f: &mut F, theta: &[f64], i: usize) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let v = f(theta)?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss evaluated to {v} while perturbing coordinate {i}"
        )));
    }
    Ok(v)
}

/// Finite-difference gradient of `loss` with respect to every weight and
/// bias of `layers`, shaped like the output of
/// [`backward`](crate::ndcore::backward).
pub fn finite_diff_grad<F>(mut loss: F, layers: &[Dense], h: f64) -> Result<ParamGrads>
where
    F: FnMut(&[Dense]) -> Result<f64>,
{
    let theta = flatten_params(layers);
    let mut scratch = layers.to_vec();
    let flat = central_difference(
        |t| {
            unflatten_params(&mut scratch, t)?;
            loss(&scratch)
        },
        &theta,
        h,
    )?;

    let mut off = 0;
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        let nw = layer.weights.data().len();
        let weights = Matrix::new(
            layer.in_width(),
            layer.out_width(),
            flat[off..off + nw].to_vec(),
        )?;
        off += nw;
        let nb = layer.bias.len();
        let bias = flat[off..off + nb].to_vec();
        off += nb;
        out.push(Some(LayerGrad { weights, bias }));
    }
    Ok(ParamGrads {
        layers: out,
        input: None,
    })
}
