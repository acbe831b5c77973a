use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Matrix;

/// Elementwise activation. Every variant is globally Lipschitz; softmax,
/// binary step, hard tanh and hard sigmoid are deliberately absent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { alpha: f64 },
    Elu { alpha: f64 },
    Softplus,
    Relu6,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { alpha } | Activation::Elu { alpha }
                if !(alpha.is_finite() && alpha > 0.0) =>
            {
                Err(Error::Config(format!(
                    "activation {self} needs a finite positive alpha"
                )))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { alpha } => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z
                }
            }
            Activation::Elu { alpha } => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z.exp_m1()
                }
            }
            // log(1 + e^z) without overflow
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Relu6 => z.clamp(0.0, 6.0),
        }
    }

    /// Derivative at pre-activation `z`, given the cached output `y = eval(z)`.
    ///
    /// Kinks use the left-hand slope: relu and relu6 have slope 0 at 0
    /// (and 0 at 6), leaky relu has slope `alpha` at 0.
    #[inline]
    pub fn derivative(&self, z: f64, y: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if z > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Elu { alpha } => {
                if z > 0.0 {
                    1.0
                } else {
                    y + alpha
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Relu6 => {
                if z > 0.0 && z < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Applies the activation to every entry of `z`.
    pub fn apply(&self, z: &Matrix) -> Matrix {
        let data = z.data().iter().map(|&v| self.eval(v)).collect();
        Matrix::from_raw(z.rows(), z.cols(), data)
    }

    pub(crate) fn apply_in_place(&self, z: &mut [f64]) {
        if *self == Activation::Identity {
            return;
        }
        for v in z {
            *v = self.eval(*v);
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu { alpha } => write!(f, "leaky_relu({alpha})"),
            Activation::Elu { alpha } => write!(f, "elu({alpha})"),
            Activation::Softplus => write!(f, "softplus"),
            Activation::Relu6 => write!(f, "relu6"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Parses `relu`, `tanh`, `leaky_relu(0.01)`, `elu`, ... Parametrized
    /// kinds default to alpha 0.01 (leaky) and 1.0 (elu).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| {
                    Error::Config(format!("malformed activation `{s}`"))
                })?;
                let alpha: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad alpha in `{s}`")))?;
                (name.trim().to_string(), Some(alpha))
            }
            None => (s.clone(), None),
        };
        let act = match name.as_str() {
            "identity" | "linear" => Activation::Identity,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu {
                alpha: arg.unwrap_or(0.01),
            },
            "elu" => Activation::Elu {
                alpha: arg.unwrap_or(1.0),
            },
            "softplus" => Activation::Softplus,
            "relu6" => Activation::Relu6,
            "softmax" | "binary_step" | "hard_tanh" | "hard_sigmoid" => {
                return Err(Error::Config(format!(
                    "activation `{name}` is not Lipschitz continuous and is not supported"
                )))
            }
            other => return Err(Error::Config(format!("unknown activation `{other}`"))),
        };
        act.validate()?;
        Ok(act)
    }
}
