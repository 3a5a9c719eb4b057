//! Parameterised layers that register their weights in a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Bound, ConvSpec, ParamId, ParamStore, Shape, Tensor, Var};

/// Fan-in scaled normal: `std = sqrt(2 / fan_in)`.
pub fn he_normal<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor {
    let fan_in = shape.c * shape.h * shape.w;
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// A `k x k` convolution with size-preserving padding and a zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), he_normal(Shape::new(c_out, c_in, k, k), rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(c_out, 1, 1, 1)));
        Conv2d {
            weight,
            bias: Some(bias),
            spec: ConvSpec::same(k, dilation),
        }
    }

    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        x.conv2d(p.get(self.weight), self.bias.map(|b| p.get(b)), self.spec)
    }
}

/// Fully connected layer without bias.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), he_normal(Shape::new(c_out, c_in, 1, 1), rng));
        Linear { weight }
    }

    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        x.linear(p.get(self.weight), None)
    }
}
