//! Pointwise arithmetic, activations and reductions to a scalar.

use std::rc::Rc;

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Silu,
    Relu,
    Sigmoid,
    Softplus,
    Exp,
    Abs,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Silu => "silu",
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Exp => "exp",
            Unary::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Unary::Silu => v * sigmoid_scalar(v),
            Unary::Relu => v.max(0.0),
            Unary::Sigmoid => sigmoid_scalar(v),
            Unary::Softplus => softplus_scalar(v),
            Unary::Exp => v.exp(),
            Unary::Abs => v.abs(),
        }
    }

    fn derivative(self, v: f64) -> f64 {
        match self {
            Unary::Silu => {
                let s = sigmoid_scalar(v);
                s * (1.0 + v * (1.0 - s))
            }
            Unary::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => {
                let s = sigmoid_scalar(v);
                s * (1.0 - s)
            }
            Unary::Softplus => sigmoid_scalar(v),
            Unary::Exp => v.exp(),
            Unary::Abs => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

struct UnaryBackward {
    kind: Unary,
    x: Rc<Tensor>,
}

impl Backward for UnaryBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let kind = self.kind;
        Ok(vec![Some(
            grad.zip_map(&self.x, |g, v| g * kind.derivative(v))?,
        )])
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryBackward {
    kind: Binary,
    a: Rc<Tensor>,
    b: Rc<Tensor>,
}

impl Backward for BinaryBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(match self.kind {
            Binary::Add => vec![Some(grad.clone()), Some(grad.clone())],
            Binary::Sub => vec![Some(grad.clone()), Some(grad.map(|g| -g))],
            Binary::Mul => vec![
                needs[0]
                    .then(|| grad.zip_map(&self.b, |g, b| g * b))
                    .transpose()?,
                needs[1]
                    .then(|| grad.zip_map(&self.a, |g, a| g * a))
                    .transpose()?,
            ],
        })
    }
}

struct AffineBackward {
    scale: f64,
}

impl Backward for AffineBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let s = self.scale;
        Ok(vec![Some(grad.map(|g| g * s))])
    }
}

struct ScalarMulBackward {
    x: Rc<Tensor>,
    s: f64,
}

impl Backward for ScalarMulBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let gx = needs[0].then(|| grad.map(|g| g * self.s));
        let gs = needs[1].then(|| {
            let dot: f64 = grad
                .data()
                .iter()
                .zip(self.x.data())
                .map(|(g, x)| g * x)
                .sum();
            Tensor::scalar(dot)
        });
        Ok(vec![gx, gs])
    }
}

struct ChannelGateBackward {
    x: Rc<Tensor>,
    gate: Rc<Tensor>,
}

impl Backward for ChannelGateBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (n, c, h, w) = self.x.dims4()?;
        let hw = h * w;
        let gate = self.gate.data();
        let gx = needs[0].then(|| {
            let mut out = grad.clone();
            for (plane, &s) in out.data_mut().chunks_mut(hw).zip(gate) {
                plane.iter_mut().for_each(|v| *v *= s);
            }
            out
        });
        let gg = needs[1].then(|| {
            let mut out = Tensor::zeros(&[n, c, 1, 1]);
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                let gp = &grad.data()[i * hw..(i + 1) * hw];
                let xp = &self.x.data()[i * hw..(i + 1) * hw];
                *o = gp.iter().zip(xp).map(|(a, b)| a * b).sum();
            }
            out
        });
        Ok(vec![gx, gg])
    }
}

struct ReduceBackward {
    shape: Vec<usize>,
    factor: f64,
}

impl Backward for ReduceBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(
            &self.shape,
            grad.data()[0] * self.factor,
        ))])
    }
}

impl Graph {
    fn unary(&self, kind: Unary, x: &Var) -> Result<Var> {
        let out = x.value().map(|v| kind.apply(v));
        self.record(kind.name(), &[x], out, || UnaryBackward {
            kind,
            x: x.shared(),
        })
    }

    pub fn silu(&self, x: &Var) -> Result<Var> {
        self.unary(Unary::Silu, x)
    }

    pub fn relu(&self, x: &Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn sigmoid(&self, x: &Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn softplus(&self, x: &Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    pub fn exp(&self, x: &Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn abs(&self, x: &Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    fn binary(&self, kind: Binary, a: &Var, b: &Var) -> Result<Var> {
        let out = match kind {
            Binary::Add => a.value().zip_map(b.value(), |x, y| x + y)?,
            Binary::Sub => a.value().zip_map(b.value(), |x, y| x - y)?,
            Binary::Mul => a.value().zip_map(b.value(), |x, y| x * y)?,
        };
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        self.record(name, &[a, b], out, || BinaryBackward {
            kind,
            a: a.shared(),
            b: b.shared(),
        })
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `scale·x + shift`.
    pub fn affine(&self, x: &Var, scale: f64, shift: f64) -> Result<Var> {
        let out = x.value().map(|v| scale * v + shift);
        self.record("affine", &[x], out, || AffineBackward { scale })
    }

    pub fn scale(&self, x: &Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&self, x: &Var, s: &Var) -> Result<Var> {
        if s.value().len() != 1 {
            return Err(Error::dim(format!(
                "scalar factor must hold one value, got shape {:?}",
                s.shape()
            )));
        }
        let sv = s.value().data()[0];
        let out = x.value().map(|v| v * sv);
        self.record("mul_scalar", &[x, s], out, || ScalarMulBackward {
            x: x.shared(),
            s: sv,
        })
    }

    /// `x[n,c,:,:] * gate[n,c,0,0]`.
    pub fn mul_channel(&self, x: &Var, gate: &Var) -> Result<Var> {
        let (n, c, h, w) = x.value().dims4()?;
        if gate.shape() != [n, c, 1, 1] {
            return Err(Error::dim(format!(
                "channel gate shape {:?} does not match {:?}",
                gate.shape(),
                x.shape()
            )));
        }
        let hw = h * w;
        let mut out = x.value().clone();
        for (plane, &s) in out.data_mut().chunks_mut(hw).zip(gate.value().data()) {
            plane.iter_mut().for_each(|v| *v *= s);
        }
        self.record("mul_channel", &[x, gate], out, || ChannelGateBackward {
            x: x.shared(),
            gate: gate.shared(),
        })
    }

    pub fn sum(&self, x: &Var) -> Result<Var> {
        let out = Tensor::scalar(x.value().sum());
        self.record("sum", &[x], out, || ReduceBackward {
            shape: x.shape().to_vec(),
            factor: 1.0,
        })
    }

    pub fn mean(&self, x: &Var) -> Result<Var> {
        let n = x.value().len() as f64;
        let out = Tensor::scalar(x.value().sum() / n);
        self.record("mean", &[x], out, || ReduceBackward {
            shape: x.shape().to_vec(),
            factor: 1.0 / n,
        })
    }
}
