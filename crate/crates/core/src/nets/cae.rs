use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{ConvBlock, DecoderBlock, Dense};
use super::cnn::check_map_batch;
use super::config::{layer_stack, CaeConfig};
use super::store::ModelState;
use super::{Bound, Network};
use crate::error::{shape_err, Result};
use crate::segment::{MAP_COLS, MAP_ROWS};
use crate::tensor::{Graph, Mode, Real, Var};

/// Convolutional auto-encoder. The encoder is the CNN conv stack followed by
/// a flatten and one fully-connected projection onto the latent attributes;
/// the decoder maps the latent back to the encoder output shape and undoes
/// the stack block by block.
#[derive(Debug, Clone)]
pub struct Cae<T> {
    pub config: CaeConfig,
    state: ModelState<T>,
    encoder: Vec<ConvBlock>,
    to_latent: Option<Dense>,
    from_latent: Option<Dense>,
    decoder: Vec<DecoderBlock>,
    /// `(channels, height, width)` of the last encoder block's output.
    enc_shape: (usize, usize, usize),
}

impl<T: Real> Cae<T> {
    pub fn new(config: CaeConfig, seed: u64) -> Result<Self> {
        let specs = layer_stack(config.num_layers, config.width_divisor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = ModelState::new();
        let mut encoder = Vec::new();
        let mut c_in = 1;
        let (mut h, mut w) = (MAP_ROWS, MAP_COLS);
        for (i, spec) in specs.iter().enumerate() {
            encoder.push(ConvBlock::new(&mut state, &format!("enc{}", i + 1), c_in, *spec, &mut rng));
            c_in = spec.channels;
            if let Some(p) = spec.pool {
                h = p.out_h(h);
                w = p.out_w(w);
            }
        }
        let enc_shape = (c_in, h, w);
        let flat = c_in * h * w;
        let (to_latent, from_latent) = match config.latent_dim {
            Some(d) => (
                Some(Dense::new(&mut state, "latent", flat, d, &mut rng)),
                Some(Dense::new(&mut state, "unlatent", d, flat, &mut rng)),
            ),
            None => (None, None),
        };
        let mut decoder = Vec::new();
        for (i, spec) in specs.iter().enumerate().rev() {
            let out_c = if i == 0 { 1 } else { specs[i - 1].channels };
            decoder.push(DecoderBlock::mirror(&mut state, &format!("dec{}", i + 1), spec, out_c, i == 0, &mut rng));
        }
        Ok(Self { config, state, encoder, to_latent, from_latent, decoder, enc_shape })
    }

    /// Length of the flattened encoder output.
    pub fn flatten_len(&self) -> usize {
        self.enc_shape.0 * self.enc_shape.1 * self.enc_shape.2
    }

    pub fn latent_len(&self) -> usize {
        self.config.latent_dim.unwrap_or_else(|| self.flatten_len())
    }

    pub fn encode(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, mode: Mode) -> Result<Var> {
        let n = check_map_batch(g, x, "cae_encode")?;
        let mut h = x;
        for blk in &self.encoder {
            h = blk.forward(g, b, &mut self.state, h, mode)?;
        }
        let h = g.reshape(h, &[n, self.flatten_len()])?;
        match &self.to_latent {
            Some(fc) => fc.forward(g, b, h),
            None => Ok(h),
        }
    }

    pub fn decode(&mut self, g: &mut Graph<T>, b: &Bound, latent: Var, mode: Mode) -> Result<Var> {
        let n = match *g.value(latent).shape() {
            [n, d] if d == self.latent_len() => n,
            ref s => {
                return Err(shape_err("cae_decode", format!("latent {:?}, expected [N,{}]", s, self.latent_len())))
            }
        };
        let h = match &self.from_latent {
            Some(fc) => fc.forward(g, b, latent)?,
            None => latent,
        };
        let (c, hh, ww) = self.enc_shape;
        let mut h = g.reshape(h, &[n, c, hh, ww])?;
        for blk in &self.decoder {
            h = blk.forward(g, b, &mut self.state, h, mode)?;
        }
        Ok(h)
    }

    /// `(latent, reconstruction)`.
    pub fn forward(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let z = self.encode(g, b, x, mode)?;
        let r = self.decode(g, b, z, mode)?;
        Ok((z, r))
    }

    pub fn encoder_blocks(&self) -> &[ConvBlock] {
        &self.encoder
    }

    pub fn decoder_blocks(&self) -> &[DecoderBlock] {
        &self.decoder
    }
}

impl<T: Real> Network<T> for Cae<T> {
    fn state(&self) -> &ModelState<T> {
        &self.state
    }
    fn state_mut(&mut self) -> &mut ModelState<T> {
        &mut self.state
    }
}
