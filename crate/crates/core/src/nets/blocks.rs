use alloc::format;

use rand::Rng;

use super::config::LayerSpec;
use super::store::{ModelState, ParamId};
use super::{Bound, BN_EPS, BN_MOMENTUM, PRELU_INIT};
use crate::error::Result;
use crate::tensor::{init, Graph, Mode, Pool2d, Real, Tensor, Var};

/// Batch-norm affine parameters plus the index of its running statistics.
#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

impl Norm {
    fn new<T: Real>(st: &mut ModelState<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: st.params.add(&format!("{name}.bn.gamma"), Tensor::full([c], T::one())),
            beta: st.params.add(&format!("{name}.bn.beta"), Tensor::zeros([c])),
            stats: st.add_stats(&format!("{name}.bn"), c),
        }
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, b: &Bound, st: &mut ModelState<T>, x: Var, mode: Mode) -> Result<Var> {
        g.batch_norm(
            x,
            b.get(self.gamma),
            b.get(self.beta),
            &mut st.stats[self.stats].1,
            mode,
            T::from_f64(BN_MOMENTUM),
            T::from_f64(BN_EPS),
        )
    }
}

fn prelu_param<T: Real>(st: &mut ModelState<T>, name: &str, c: usize) -> ParamId {
    st.params.add(&format!("{name}.prelu"), Tensor::full([c], T::from_f64(PRELU_INIT)))
}

/// conv → batch norm → PReLU → optional max pool.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub spec: LayerSpec,
    pub in_channels: usize,
    weight: ParamId,
    bias: ParamId,
    norm: Norm,
    slope: ParamId,
}

impl ConvBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        st: &mut ModelState<T>,
        name: &str,
        in_channels: usize,
        spec: LayerSpec,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let fan_in = in_channels * kh * kw;
        let weight = st.params.add(
            &format!("{name}.weight"),
            init::kaiming_uniform(&[spec.channels, in_channels, kh, kw], fan_in, PRELU_INIT, rng),
        );
        let bias = st.params.add(&format!("{name}.bias"), Tensor::zeros([spec.channels]));
        let norm = Norm::new(st, name, spec.channels);
        let slope = prelu_param(st, name, spec.channels);
        Self { spec, in_channels, weight, bias, norm, slope }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        st: &mut ModelState<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let y = g.conv2d(x, b.get(self.weight), Some(b.get(self.bias)), self.spec.stride, self.spec.padding)?;
        let y = self.norm.apply(g, b, st, y, mode)?;
        let y = g.prelu(y, b.get(self.slope))?;
        match self.spec.pool {
            Some(p) => g.max_pool2d(y, p),
            None => Ok(y),
        }
    }
}

/// Mirror of a [`ConvBlock`]: optional replication unpool → transposed conv
/// back to the block's input channels → batch norm → PReLU. The output
/// block (`linear_out`) stops after the transposed conv.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub unpool: Option<Pool2d>,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub out_channels: usize,
    weight: ParamId,
    bias: ParamId,
    act: Option<(Norm, ParamId)>,
}

impl DecoderBlock {
    pub fn mirror<T: Real, R: Rng + ?Sized>(
        st: &mut ModelState<T>,
        name: &str,
        spec: &LayerSpec,
        out_channels: usize,
        linear_out: bool,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        // fan-in of a transposed conv counts the output-side taps
        let fan_in = out_channels * kh * kw;
        let weight = st.params.add(
            &format!("{name}.weight"),
            init::kaiming_uniform(&[spec.channels, out_channels, kh, kw], fan_in, PRELU_INIT, rng),
        );
        let bias = st.params.add(&format!("{name}.bias"), Tensor::zeros([out_channels]));
        let act = (!linear_out).then(|| (Norm::new(st, name, out_channels), prelu_param(st, name, out_channels)));
        Self { unpool: spec.pool, kernel: spec.kernel, padding: spec.padding, out_channels, weight, bias, act }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        st: &mut ModelState<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let x = match self.unpool {
            Some(p) => g.upsample(x, p.kh, p.kw)?,
            None => x,
        };
        let y = g.conv_transpose2d(x, b.get(self.weight), Some(b.get(self.bias)), (1, 1), self.padding)?;
        match &self.act {
            Some((norm, slope)) => {
                let y = norm.apply(g, b, st, y, mode)?;
                g.prelu(y, b.get(*slope))
            }
            None => Ok(y),
        }
    }
}

/// Fully-connected layer `x·W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(st: &mut ModelState<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = st
            .params
            .add(&format!("{name}.weight"), init::kaiming_uniform(&[in_dim, out_dim], in_dim, PRELU_INIT, rng));
        let bias = st.params.add(&format!("{name}.bias"), Tensor::zeros([out_dim]));
        Self { in_dim, out_dim, weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.linear(x, b.get(self.weight), Some(b.get(self.bias)))
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// A learnable per-feature PReLU slope vector.
#[derive(Debug, Clone)]
pub struct Slope(ParamId);

impl Slope {
    pub fn new<T: Real>(st: &mut ModelState<T>, name: &str, c: usize) -> Self {
        Self(prelu_param(st, name, c))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.prelu(x, b.get(self.0))
    }
}
