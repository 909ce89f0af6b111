//! Flat parameter store with named blocks.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feat_dim: usize,
    /// Width of the linear feature down-projection feeding the encoder.
    pub proj_dim: usize,
    /// Hidden size of each encoder direction.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub vocab_size: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.feat_dim,
            self.proj_dim,
            self.enc_hidden,
            self.dec_hidden,
            self.embed_dim,
            self.attn_dim,
            self.vocab_size,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocabulary needs at least the 3 reserved ids".into()));
        }
        Ok(())
    }

    /// Width of one encoder state (both directions).
    pub fn enc_state(&self) -> usize {
        2 * self.enc_hidden
    }

    /// Decoder cell input before the recurrent state: `[embedding; context]`.
    pub fn dec_input(&self) -> usize {
        self.embed_dim + self.enc_state()
    }
}

/// Parameter blocks in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    FeatProjW,
    FeatProjB,
    EncFwdW,
    EncFwdB,
    EncBwdW,
    EncBwdB,
    AttnKey,
    AttnQuery,
    AttnBias,
    AttnScore,
    Embedding,
    DecW,
    DecB,
    OutW,
    BaselineW,
    BaselineB,
}

impl Block {
    pub const ALL: [Block; 16] = [
        Block::FeatProjW,
        Block::FeatProjB,
        Block::EncFwdW,
        Block::EncFwdB,
        Block::EncBwdW,
        Block::EncBwdB,
        Block::AttnKey,
        Block::AttnQuery,
        Block::AttnBias,
        Block::AttnScore,
        Block::Embedding,
        Block::DecW,
        Block::DecB,
        Block::OutW,
        Block::BaselineW,
        Block::BaselineB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::FeatProjW => "feat_proj.w",
            Block::FeatProjB => "feat_proj.b",
            Block::EncFwdW => "enc_fwd.w",
            Block::EncFwdB => "enc_fwd.b",
            Block::EncBwdW => "enc_bwd.w",
            Block::EncBwdB => "enc_bwd.b",
            Block::AttnKey => "attn.w_a",
            Block::AttnQuery => "attn.u_a",
            Block::AttnBias => "attn.b_a",
            Block::AttnScore => "attn.w",
            Block::Embedding => "embedding",
            Block::DecW => "dec.w",
            Block::DecB => "dec.b",
            Block::OutW => "out.w",
            Block::BaselineW => "baseline.w",
            Block::BaselineB => "baseline.b",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Block::BaselineW | Block::BaselineB)
    }

    /// `(rows, cols)`; vectors have one column.
    pub fn shape(self, d: &ModelDims) -> (usize, usize) {
        let he = d.enc_hidden;
        let hd = d.dec_hidden;
        match self {
            Block::FeatProjW => (d.proj_dim, d.feat_dim),
            Block::FeatProjB => (d.proj_dim, 1),
            Block::EncFwdW | Block::EncBwdW => (4 * he, d.proj_dim + he),
            Block::EncFwdB | Block::EncBwdB => (4 * he, 1),
            Block::AttnKey => (d.attn_dim, d.enc_state()),
            Block::AttnQuery => (d.attn_dim, hd),
            Block::AttnBias | Block::AttnScore => (d.attn_dim, 1),
            Block::Embedding => (d.vocab_size, d.embed_dim),
            Block::DecW => (4 * hd, d.dec_input() + hd),
            Block::DecB => (4 * hd, 1),
            Block::OutW => (d.vocab_size, hd),
            Block::BaselineW => (hd, 1),
            Block::BaselineB => (1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ranges: Vec<Range<usize>>,
    total: usize,
}

impl Layout {
    pub fn new(dims: &ModelDims) -> Self {
        let mut ranges = Vec::with_capacity(Block::ALL.len());
        let mut offset = 0;
        for b in Block::ALL {
            let (r, c) = b.shape(dims);
            ranges.push(offset..offset + r * c);
            offset += r * c;
        }
        Layout { ranges, total: offset }
    }

    pub fn range(&self, b: Block) -> Range<usize> {
        self.ranges[b as usize].clone()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Everything except the baseline regressor.
    pub fn policy_range(&self) -> Range<usize> {
        0..self.range(Block::BaselineW).start
    }

    pub fn baseline_range(&self) -> Range<usize> {
        self.range(Block::BaselineW).start..self.total
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// All trainable tensors in one flat vector.
///
/// Every mutable access bumps a generation counter; traces remember the
/// `(id, generation)` they were recorded under so stale traces are caught.
#[derive(Debug)]
pub struct ModelParams {
    dims: ModelDims,
    layout: Layout,
    data: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for ModelParams {
    fn clone(&self) -> Self {
        ModelParams {
            dims: self.dims,
            layout: self.layout.clone(),
            data: self.data.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.data == other.data
    }
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(&dims);
        Ok(ModelParams {
            dims,
            data: vec![0.0; layout.total()],
            layout,
            id: fresh_id(),
            generation: 0,
        })
    }

    /// Uniform in `[-range, range]`; LSTM forget-gate biases start at 1.
    pub fn init_uniform(dims: ModelDims, range: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.data.iter_mut() {
            *v = rng.random_range(-range..=range);
        }
        for (block, hidden) in [
            (Block::EncFwdB, dims.enc_hidden),
            (Block::EncBwdB, dims.enc_hidden),
            (Block::DecB, dims.dec_hidden),
        ] {
            let b = p.block_mut(block);
            b[hidden..2 * hidden].fill(1.0);
        }
        p.block_mut(Block::BaselineW).fill(0.0);
        p.block_mut(Block::BaselineB).fill(0.0);
        Ok(p)
    }

    pub fn from_vec(dims: ModelDims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(&dims);
        if data.len() != layout.total() {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, layout needs {}",
                data.len(),
                layout.total()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(ModelParams {
            dims,
            layout,
            data,
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.data
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.data[self.layout.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        self.generation += 1;
        let r = self.layout.range(b);
        &mut self.data[r]
    }

    /// Identity of the current parameter values, for trace staleness checks.
    pub fn stamp(&self) -> (u64, u64) {
        (self.id, self.generation)
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
