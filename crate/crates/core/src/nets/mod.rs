//! The four model families built on the tensor graph: the raw-series MLP
//! baseline, the CNN classifier, the convolutional auto-encoder (used for
//! both the RMSE and the contrastive objective) and the small classifier
//! applied to latent attributes.

mod blocks;
mod cae;
mod cnn;
mod config;
mod mlp;
mod store;

pub use blocks::{ConvBlock, Dense, DecoderBlock};
pub use cae::Cae;
pub use cnn::Cnn;
pub use config::{ArchConfig, CaeConfig, CnnConfig, Family, LayerSpec, MlpConfig, LAYER_TABLE};
pub use mlp::{AttrClassifier, Mlp};
pub use store::{ModelState, ParamId, ParamStore};

use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::{Graph, Real, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Initial PReLU slope, also the negative slope used by the initialiser.
pub const PRELU_INIT: f64 = 0.25;

/// Leaf variables for every parameter of a [`ModelState`], in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of all bound parameters after a backward pass.
    pub fn grads<T: Real>(&self, g: &Graph<T>) -> Vec<Option<Vec<T>>> {
        self.vars.iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect()
    }
}

/// Common surface of every trainable network.
pub trait Network<T: Real> {
    fn state(&self) -> &ModelState<T>;
    fn state_mut(&mut self) -> &mut ModelState<T>;

    /// Puts all parameters on `g` as leaves.
    fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.state().params.tensors().iter().map(|t| g.param(t.clone())).collect() }
    }
}

/// Runs a closure with a freshly bound inference graph.
pub fn infer<T: Real, N: Network<T>, R>(
    net: &mut N,
    f: impl FnOnce(&mut N, &mut Graph<T>, &Bound) -> Result<R>,
) -> Result<R> {
    let mut g = Graph::inference();
    let b = net.bind(&mut g);
    f(net, &mut g, &b)
}
