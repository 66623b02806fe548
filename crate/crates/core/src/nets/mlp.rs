use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{Dense, Slope};
use super::config::MlpConfig;
use super::store::ModelState;
use super::{Bound, Network};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Stack of fully-connected layers with PReLU between them, ending in two
/// logits.
#[derive(Debug, Clone)]
struct DenseStack {
    layers: Vec<(Dense, Option<Slope>)>,
}

impl DenseStack {
    fn new<T: Real>(st: &mut ModelState<T>, prefix: &str, dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let name = format!("{prefix}{}", i + 1);
                let fc = Dense::new(st, &name, w[0], w[1], &mut rng);
                let act = (i < last).then(|| Slope::new(st, &name, w[1]));
                (fc, act)
            })
            .collect();
        Self { layers }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (fc, act) in &self.layers {
            h = fc.forward(g, b, h)?;
            if let Some(a) = act {
                h = a.forward(g, b, h)?;
            }
        }
        Ok(h)
    }

    fn widths(&self) -> Vec<usize> {
        let mut v = alloc::vec![self.layers[0].0.in_dim];
        v.extend(self.layers.iter().map(|(fc, _)| fc.out_dim));
        v
    }
}

/// Baseline MLP on the raw 4032-value series.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub config: MlpConfig,
    state: ModelState<T>,
    stack: DenseStack,
}

impl<T: Real> Mlp<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::InvalidConfig("zero-width MLP layer".into()));
        }
        let mut dims = alloc::vec![config.input_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(2);
        let mut state = ModelState::new();
        let stack = DenseStack::new(&mut state, "fc", &dims, seed);
        Ok(Self { config, state, stack })
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        match *g.value(x).shape() {
            [_, d] if d == self.config.input_dim => {}
            ref s => return Err(shape_err("mlp_forward", format!("expected [N,{}], got {:?}", self.config.input_dim, s))),
        }
        self.stack.forward(g, b, x)
    }

    /// Layer widths from input to logits.
    pub fn widths(&self) -> Vec<usize> {
        self.stack.widths()
    }
}

impl<T: Real> Network<T> for Mlp<T> {
    fn state(&self) -> &ModelState<T> {
        &self.state
    }
    fn state_mut(&mut self) -> &mut ModelState<T> {
        &mut self.state
    }
}

/// Two-layer classifier on latent attributes: fc(D→hidden) → PReLU →
/// fc(hidden→2).
#[derive(Debug, Clone)]
pub struct AttrClassifier<T> {
    pub input_dim: usize,
    pub hidden: usize,
    state: ModelState<T>,
    stack: DenseStack,
}

impl<T: Real> AttrClassifier<T> {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("zero-width classifier".into()));
        }
        let mut state = ModelState::new();
        let stack = DenseStack::new(&mut state, "attr", &[input_dim, hidden, 2], seed);
        Ok(Self { input_dim, hidden, state, stack })
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        match *g.value(x).shape() {
            [_, d] if d == self.input_dim => {}
            ref s => {
                return Err(shape_err("attr_classifier_forward", format!("expected [N,{}], got {:?}", self.input_dim, s)))
            }
        }
        self.stack.forward(g, b, x)
    }
}

impl<T: Real> Network<T> for AttrClassifier<T> {
    fn state(&self) -> &ModelState<T> {
        &self.state
    }
    fn state_mut(&mut self) -> &mut ModelState<T> {
        &mut self.state
    }
}
