use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<'t, T: Element>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

/// Fully-connected layer `y = x Wᵀ + b` with `W[out×in]`, `b[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AffineLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::contract(format!(
                "layer widths must be >= 1, got {fan_in}->{fan_out}"
            )));
        }
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)).collect();
        Ok(Self {
            weight: Tensor::new(&[fan_out, fan_in], data)?,
            bias: Tensor::zeros(&[fan_out]),
        })
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::dim("AffineLayer", weight.shape(), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind<'t, T: Element>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundAffine<'t, T> {
        BoundAffine {
            weight: tape.leaf(self.weight.cast(), trainable),
            bias: tape.leaf(self.bias.cast(), trainable),
        }
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAffine<'t, T: Element = f32> {
    pub weight: Var<'t, T>,
    pub bias: Var<'t, T>,
}

impl<'t, T: Element> BoundAffine<'t, T> {
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul_transposed(self.weight)?.add_bias(self.bias)
    }

    pub fn vars(&self) -> [Var<'t, T>; 2] {
        [self.weight, self.bias]
    }
}

/// Stack of affine layers with one activation between layers and another
/// after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<AffineLayer>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first:
    /// `[in, h1, ..., out]`.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, rng: &mut RngState) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::contract("an MLP needs at least input and output widths"));
        }
        let layers = widths
            .windows(2)
            .map(|w| AffineLayer::new(w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, hidden, output })
    }

    pub fn from_layers(layers: Vec<AffineLayer>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::dim("Mlp", pair[0].weight.shape(), pair[1].weight.shape()));
            }
        }
        Ok(Self { layers, hidden, output })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_width())
            .chain(self.layers.iter().map(AffineLayer::out_width))
            .collect()
    }

    pub fn bind<'t, T: Element>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundMlp<'t, T> {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
            hidden: self.hidden,
            output: self.output,
        }
    }

    /// Binds already-registered variables, two per layer in
    /// [`Mlp::params`] order.
    pub fn bind_vars<'t, T: Element>(&self, vars: &[Var<'t, T>]) -> Result<BoundMlp<'t, T>> {
        if vars.len() != 2 * self.layers.len() {
            return Err(Error::contract(format!(
                "expected {} variables, got {}",
                2 * self.layers.len(),
                vars.len()
            )));
        }
        Ok(BoundMlp {
            layers: vars
                .chunks(2)
                .map(|p| BoundAffine {
                    weight: p[0],
                    bias: p[1],
                })
                .collect(),
            hidden: self.hidden,
            output: self.output,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(AffineLayer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(AffineLayer::params_mut).collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }

    /// Inference on a plain batch `x[B×in]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::<f32>::new();
        let bound = self.bind(&tape, false);
        let out = bound.forward(tape.constant(x.clone()))?;
        Ok(out.value().as_ref().clone())
    }
}

pub struct BoundMlp<'t, T: Element = f32> {
    pub layers: Vec<BoundAffine<'t, T>>,
    hidden: Activation,
    output: Activation,
}

impl<'t, T: Element> BoundMlp<'t, T> {
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h)?;
            h = if i == last {
                self.output.apply(h)
            } else {
                self.hidden.apply(h)
            };
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var<'t, T>> {
        self.layers.iter().flat_map(BoundAffine::vars).collect()
    }
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f32::NEG_INFINITY),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bound_and_zero_bias() {
        let mut rng = RngState::new(0);
        for _ in 0..50 {
            let l = AffineLayer::new(1, 1, &mut rng).unwrap();
            assert!(l.weight.item().abs() <= 3f32.sqrt());
            assert_eq!(l.bias.item(), 0.0);
        }
        let l = AffineLayer::new(20, 30, &mut rng).unwrap();
        let a = (6.0f32 / 50.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= a));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::new(
            &[4, 8, 2],
            Activation::Relu,
            Activation::Identity,
            &mut RngState::new(9),
        )
        .unwrap();
        let b = Mlp::new(
            &[4, 8, 2],
            Activation::Relu,
            Activation::Identity,
            &mut RngState::new(9),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(AffineLayer::new(0, 3, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn mlp_shapes_chain() {
        let mlp = Mlp::new(
            &[5, 7, 3],
            Activation::Tanh,
            Activation::Identity,
            &mut RngState::new(1),
        )
        .unwrap();
        assert_eq!(mlp.widths(), vec![5, 7, 3]);
        let out = mlp.predict(&Tensor::zeros(&[4, 5])).unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        assert_eq!(mlp.param_names("enc").len(), 4);
        assert_eq!(mlp.param_names("enc")[2], "enc.1.weight");
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::new(&[2, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }
}
