use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::param::{Init, ParamAlloc, Parameter, Parameterized};

/// Fully connected layer `x·W + b`, with `W` stored `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Dense {
    pub fn new(alloc: &mut ParamAlloc, in_dim: usize, out_dim: usize, init: Init) -> Self {
        let weight = alloc.matrix(in_dim, out_dim, init);
        let bias = alloc.matrix(1, out_dim, Init::Zeros);
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.in_dim() {
            return Err(dim_err!(
                "dense layer expects width {}, got {:?}",
                self.in_dim(),
                g.value(x).shape()
            ));
        }
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Dense layers with ReLU between them; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(alloc: &mut ParamAlloc, in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(Dense::new(alloc, prev, h, Init::HeUniform));
            prev = h;
        }
        layers.push(Dense::new(alloc, prev, out_dim, Init::XavierUniform));
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
