//! SGD and Adam, one instance per player.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Partition, PartitionGrads, PartitionedParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "sgd: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Update state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, len: usize) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        let buf = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => len,
        };
        Ok(Self {
            kind,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: vec![0.0; buf],
            v: vec![0.0; buf],
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_segments(&mut [(params, grads)])
    }

    /// One update over several disjoint slices that together form the
    /// owned parameter vector (in a fixed order).
    pub fn step_segments(&mut self, segments: &mut [(&mut [f64], &[f64])]) -> Result<()> {
        for (p, g) in segments.iter() {
            if p.len() != g.len() {
                return Err(Error::Contract(format!(
                    "optimizer segment: {} params vs {} grads",
                    p.len(),
                    g.len()
                )));
            }
        }
        let total: usize = segments.iter().map(|(p, _)| p.len()).sum();
        if self.kind == OptimizerKind::Adam && total != self.m.len() {
            return Err(Error::Contract(format!(
                "adam state sized for {} params, got {total}",
                self.m.len()
            )));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in segments.iter_mut() {
                    sgd_step(p, g, self.learning_rate)?;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                let mut off = 0;
                for (p, g) in segments.iter_mut() {
                    let m = &mut self.m[off..off + p.len()];
                    let v = &mut self.v[off..off + p.len()];
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = flush(self.beta1 * m[i] + (1.0 - self.beta1) * gi);
                        v[i] = flush(self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi);
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
                    }
                    off += p.len();
                }
            }
        }
        Ok(())
    }
}

/// Subnormal moments carry no usable signal and make arithmetic on them
/// very slow; they become zero.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Single-slice Adam update (`state.kind` must be Adam).
pub fn adam_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if state.kind != OptimizerKind::Adam {
        return Err(Error::Contract("adam_step on a non-Adam state".into()));
    }
    state.step(params, grads)
}

/// Optimizer bound to a fixed set of layers.
#[derive(Clone, Debug)]
pub struct LayerOptimizer {
    owned: Vec<usize>,
    state: OptimizerState,
}

impl LayerOptimizer {
    /// Owns every layer tagged `part`.
    pub fn for_partition(
        kind: OptimizerKind,
        lr: f64,
        params: &PartitionedParams,
        part: Partition,
    ) -> Result<Self> {
        Self::for_layers(kind, lr, params, params.layer_indices(part))
    }

    /// Owns every layer.
    pub fn for_all(kind: OptimizerKind, lr: f64, params: &PartitionedParams) -> Result<Self> {
        Self::for_layers(kind, lr, params, (0..params.layers().len()).collect())
    }

    pub fn for_layers(
        kind: OptimizerKind,
        lr: f64,
        params: &PartitionedParams,
        owned: Vec<usize>,
    ) -> Result<Self> {
        let len = owned
            .iter()
            .map(|&l| params.layers()[l].param_count())
            .sum();
        Ok(Self {
            owned,
            state: OptimizerState::new(kind, lr, len)?,
        })
    }

    pub fn owned_layers(&self) -> &[usize] {
        &self.owned
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Applies `grads`, which must cover exactly the owned layers in order.
    pub fn step(&mut self, params: &mut PartitionedParams, grads: &[(usize, crate::ndcore::LayerGrad)]) -> Result<()> {
        let idx: Vec<usize> = grads.iter().map(|(l, _)| *l).collect();
        if idx != self.owned {
            return Err(Error::Contract(format!(
                "optimizer owns layers {:?}, got gradients for {:?}",
                self.owned, idx
            )));
        }
        let mut segments: Vec<(&mut [f64], &[f64])> = Vec::with_capacity(2 * grads.len());
        let mut g_iter = grads.iter().peekable();
        for (l, layer) in params.layers_mut().iter_mut().enumerate() {
            match g_iter.peek() {
                Some((gl, g)) if *gl == l => {
                    segments.push((layer.weights.data_mut(), g.weights.data()));
                    segments.push((layer.bias.as_mut_slice(), g.bias.as_slice()));
                    g_iter.next();
                }
                _ => {}
            }
        }
        self.state.step_segments(&mut segments)
    }

    pub fn step_partition(&mut self, params: &mut PartitionedParams, grads: &PartitionGrads) -> Result<()> {
        self.step(params, &grads.entries)
    }
}
