use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{ArchConfig, Bound, Cae, Cnn, Family, Mlp, ModelState, Network};
use crate::segment::{normalize_bpm, MAP_COLS, MAP_ROWS, SEGMENT_LEN};
use crate::tensor::{Graph, Mode, Real, Tensor, Var};

/// A network of any family behind one handle.
#[derive(Debug, Clone)]
pub enum Model<T> {
    Cnn(Cnn<T>),
    Cae(Cae<T>),
    Mlp(Mlp<T>),
}

/// How a batch of segments is laid out for a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `[N, 1, 24, 168]` feature maps.
    Map,
    /// `[N, 4032]` time-ordered series.
    Series,
}

impl<T: Real> Model<T> {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(match arch.family {
            Family::Cnn => Model::Cnn(Cnn::new(arch.cnn(), seed)?),
            Family::Cae | Family::ContrastiveCae => Model::Cae(Cae::new(arch.cae(), seed)?),
            Family::Mlp => Model::Mlp(Mlp::new(arch.mlp(), seed)?),
        })
    }

    pub fn state(&self) -> &ModelState<T> {
        match self {
            Model::Cnn(m) => m.state(),
            Model::Cae(m) => m.state(),
            Model::Mlp(m) => m.state(),
        }
    }

    pub fn state_mut(&mut self) -> &mut ModelState<T> {
        match self {
            Model::Cnn(m) => m.state_mut(),
            Model::Cae(m) => m.state_mut(),
            Model::Mlp(m) => m.state_mut(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        match self {
            Model::Cnn(m) => m.bind(g),
            Model::Cae(m) => m.bind(g),
            Model::Mlp(m) => m.bind(g),
        }
    }

    pub fn layout(&self) -> Layout {
        match self {
            Model::Mlp(_) => Layout::Series,
            _ => Layout::Map,
        }
    }

    /// Replaces parameters and running statistics, checking that names and
    /// shapes line up.
    pub fn load_state(&mut self, state: ModelState<T>) -> Result<()> {
        let cur = self.state();
        let same = cur.params.names() == state.params.names()
            && cur.params.tensors().iter().zip(state.params.tensors()).all(|(a, b)| a.shape() == b.shape())
            && cur.stats.len() == state.stats.len()
            && cur.stats.iter().zip(&state.stats).all(|(a, b)| a.0 == b.0 && a.1.mean.len() == b.1.mean.len());
        if !same {
            return Err(Error::InvalidConfig("checkpoint state does not match the architecture".into()));
        }
        *self.state_mut() = state;
        Ok(())
    }

    /// Two-class logits of a classifier network.
    pub fn logits(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, mode: Mode) -> Result<Var> {
        match self {
            Model::Cnn(m) => m.forward(g, b, x, mode),
            Model::Mlp(m) => m.forward(g, b, x),
            Model::Cae(_) => Err(Error::ModeMismatch("an auto-encoder has no logits".into())),
        }
    }

    pub fn as_cae(&mut self) -> Result<&mut Cae<T>> {
        match self {
            Model::Cae(m) => Ok(m),
            _ => Err(Error::ModeMismatch("auto-encoder required".into())),
        }
    }

    /// Per-segment RMSE between input and reconstruction (eval mode).
    pub fn recon_errors(&mut self, inputs: &[&[f32]]) -> Result<Vec<f64>> {
        let cae = self.as_cae()?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(EVAL_BATCH) {
            let mut g = Graph::inference();
            let b = cae.bind(&mut g);
            let x = g.input(batch(chunk, Layout::Map)?);
            let (_, r) = cae.forward(&mut g, &b, x, Mode::Eval)?;
            let e = g.mse_rows(x, r)?;
            out.extend(g.value(e).data().iter().map(|v| v.as_f64().sqrt()));
        }
        Ok(out)
    }

    /// Latent attribute vectors (eval mode), one row per input.
    pub fn latents(&mut self, inputs: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let cae = self.as_cae()?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(EVAL_BATCH) {
            let mut g = Graph::inference();
            let b = cae.bind(&mut g);
            let x = g.input(batch(chunk, Layout::Map)?);
            let z = cae.encode(&mut g, &b, x, Mode::Eval)?;
            let d = cae.latent_len();
            out.extend(g.value(z).data().chunks(d).map(|r| r.iter().map(|v| v.as_f64() as f32).collect()));
        }
        Ok(out)
    }

    /// Symptomatic-class logit margin `z₁ − z₀` (eval mode).
    pub fn logit_margins(&mut self, inputs: &[&[f32]]) -> Result<Vec<f64>> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(EVAL_BATCH) {
            let mut g = Graph::inference();
            let b = self.bind(&mut g);
            let x = g.input(batch(chunk, layout)?);
            let z = self.logits(&mut g, &b, x, Mode::Eval)?;
            out.extend(g.value(z).data().chunks(2).map(|r| r[1].as_f64() - r[0].as_f64()));
        }
        Ok(out)
    }
}

const EVAL_BATCH: usize = 64;

/// Normalised network input for one segment's values, in time order.
pub fn prepare(values: &[f32]) -> Vec<f32> {
    values.iter().map(|&v| normalize_bpm(v)).collect()
}

/// Stacks prepared segments into a batch tensor.
pub fn batch<T: Real>(items: &[&[f32]], layout: Layout) -> Result<Tensor<T>> {
    let n = items.len();
    let mut data = Vec::with_capacity(n * SEGMENT_LEN);
    for it in items {
        if it.len() != SEGMENT_LEN {
            return Err(crate::error::shape_err("batch", format!("segment of {} values", it.len())));
        }
        match layout {
            Layout::Series => data.extend(it.iter().map(|&v| T::from_f64(v as f64))),
            Layout::Map => {
                for r in 0..MAP_ROWS {
                    data.extend((0..MAP_COLS).map(|c| T::from_f64(it[c * MAP_ROWS + r] as f64)));
                }
            }
        }
    }
    match layout {
        Layout::Series => Tensor::new(alloc::vec![n, SEGMENT_LEN], data),
        Layout::Map => Tensor::new(alloc::vec![n, 1, MAP_ROWS, MAP_COLS], data),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub steps: usize,
}

/// Trained weights plus everything needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub seed: u64,
    pub state: ModelState<f32>,
    pub trace: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn capture(arch: &ArchConfig, seed: u64, model: &Model<f32>, trace: Vec<EpochLog>) -> Self {
        Self { arch: arch.clone(), seed, state: model.state().clone(), trace }
    }

    pub fn restore(&self) -> Result<Model<f32>> {
        let mut m = Model::new(&self.arch, self.seed)?;
        m.load_state(self.state.clone())?;
        Ok(m)
    }
}
