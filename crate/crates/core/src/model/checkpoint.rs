//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes   "CRLCKPT\0"
//! version   u32 LE    1
//! meta_len  u64 LE
//! meta      JSON      dims, vocabulary, block table, cell conventions, info
//! count     u64 LE    number of parameters
//! values    f64 LE    flat parameter vector
//! ```
//!
//! Metadata keys are emitted in a fixed order, so identical parameters and
//! info always produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Block, ModelDims, ModelParams};
use super::vocab::Vocab;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CRLCKPT\0";
const VERSION: u32 = 1;
const DECODER_INPUT_ORDER: &str = "embedding,context,hidden";
const GATE_ORDER: &str = "input,forget,output,candidate";

#[derive(Serialize, Deserialize)]
struct DimsMeta {
    feat_dim: usize,
    proj_dim: usize,
    enc_hidden: usize,
    dec_hidden: usize,
    embed_dim: usize,
    attn_dim: usize,
    vocab_size: usize,
}

#[derive(Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dims: DimsMeta,
    decoder_input_order: String,
    gate_order: String,
    blocks: Vec<BlockMeta>,
    vocab: Vec<String>,
    info: BTreeMap<String, String>,
}

/// Parameters plus everything needed to decode with them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    /// Free-form provenance (seed, phase, reward, resolved lambda, ...).
    pub info: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: Vocab) -> Result<Self> {
        if params.dims().vocab_size != vocab.len() {
            return Err(Error::Shape(format!(
                "model vocabulary {} != word list {}",
                params.dims().vocab_size,
                vocab.len()
            )));
        }
        Ok(Checkpoint {
            params,
            vocab,
            info: BTreeMap::new(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.params.dims();
        let layout = self.params.layout();
        let meta = Meta {
            dims: DimsMeta {
                feat_dim: d.feat_dim,
                proj_dim: d.proj_dim,
                enc_hidden: d.enc_hidden,
                dec_hidden: d.dec_hidden,
                embed_dim: d.embed_dim,
                attn_dim: d.attn_dim,
                vocab_size: d.vocab_size,
            },
            decoder_input_order: DECODER_INPUT_ORDER.into(),
            gate_order: GATE_ORDER.into(),
            blocks: Block::ALL
                .iter()
                .map(|&b| {
                    let (rows, cols) = b.shape(d);
                    BlockMeta {
                        name: b.name().into(),
                        rows,
                        cols,
                        offset: layout.range(b).start,
                    }
                })
                .collect(),
            vocab: self.vocab.words().to_vec(),
            info: self.info.clone(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        let values = self.params.as_slice();
        let mut out = Vec::with_capacity(8 + 4 + 8 + meta.len() + 8 + values.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated file"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(bad("not a captionrl checkpoint"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let meta: Meta = serde_json::from_slice(take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.decoder_input_order != DECODER_INPUT_ORDER || meta.gate_order != GATE_ORDER {
            return Err(bad("checkpoint uses a different cell convention"));
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(count.checked_mul(8).ok_or_else(|| bad("parameter count overflow"))?)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let m = meta.dims;
        let dims = ModelDims {
            feat_dim: m.feat_dim,
            proj_dim: m.proj_dim,
            enc_hidden: m.enc_hidden,
            dec_hidden: m.dec_hidden,
            embed_dim: m.embed_dim,
            attn_dim: m.attn_dim,
            vocab_size: m.vocab_size,
        };
        let params = ModelParams::from_vec(dims, values)?;
        for (b, bm) in Block::ALL.iter().zip(&meta.blocks) {
            if bm.name != b.name() || bm.offset != params.layout().range(*b).start {
                return Err(Error::Checkpoint(format!("block table mismatch at `{}`", bm.name)));
            }
        }
        let vocab = Vocab::from_words(meta.vocab)?;
        let mut ck = Checkpoint::new(params, vocab)?;
        ck.info = meta.info;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
