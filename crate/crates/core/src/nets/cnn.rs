use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{ConvBlock, Dense, Slope};
use super::config::{layer_stack, CnnConfig};
use super::store::ModelState;
use super::{Bound, Network};
use crate::error::{shape_err, Result};
use crate::segment::{MAP_COLS, MAP_ROWS};
use crate::tensor::{Graph, Mode, Real, Var};

/// Convolutional classifier: conv blocks → global average pool → fc →
/// PReLU → fc(2).
#[derive(Debug, Clone)]
pub struct Cnn<T> {
    pub config: CnnConfig,
    state: ModelState<T>,
    blocks: Vec<ConvBlock>,
    fc1: Dense,
    act: Slope,
    fc2: Dense,
}

pub(crate) fn check_map_batch<T: Real>(g: &Graph<T>, x: Var, op: &'static str) -> Result<usize> {
    match *g.value(x).shape() {
        [n, 1, MAP_ROWS, MAP_COLS] if n > 0 => Ok(n),
        ref s => Err(shape_err(op, format!("expected [N,1,{MAP_ROWS},{MAP_COLS}], got {s:?}"))),
    }
}

impl<T: Real> Cnn<T> {
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        let specs = layer_stack(config.num_layers, config.width_divisor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = ModelState::new();
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, spec) in specs.iter().enumerate() {
            blocks.push(ConvBlock::new(&mut state, &format!("conv{}", i + 1), c_in, *spec, &mut rng));
            c_in = spec.channels;
        }
        let fc1 = Dense::new(&mut state, "fc1", c_in, config.fc_hidden, &mut rng);
        let act = Slope::new(&mut state, "fc1", config.fc_hidden);
        let fc2 = Dense::new(&mut state, "fc2", config.fc_hidden, 2, &mut rng);
        Ok(Self { config, state, blocks, fc1, act, fc2 })
    }

    /// Logits `[N, 2]` for a batch of feature maps `[N, 1, 24, 168]`.
    pub fn forward(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, mode: Mode) -> Result<Var> {
        check_map_batch(g, x, "cnn_forward")?;
        let mut h = x;
        for blk in &self.blocks {
            h = blk.forward(g, b, &mut self.state, h, mode)?;
        }
        let h = g.global_avg_pool(h)?;
        let h = self.fc1.forward(g, b, h)?;
        let h = self.act.forward(g, b, h)?;
        self.fc2.forward(g, b, h)
    }

    /// Spatial size after each block, starting with the input.
    pub fn spatial_trace(&self) -> Vec<(usize, usize)> {
        let mut hw = (MAP_ROWS, MAP_COLS);
        let mut out = alloc::vec![hw];
        for blk in &self.blocks {
            if let Some(p) = blk.spec.pool {
                hw = (p.out_h(hw.0), p.out_w(hw.1));
            }
            out.push(hw);
        }
        out
    }
}

impl<T: Real> Network<T> for Cnn<T> {
    fn state(&self) -> &ModelState<T> {
        &self.state
    }
    fn state_mut(&mut self) -> &mut ModelState<T> {
        &mut self.state
    }
}
