//! Embeddings, stacked blocks and the tied-weight scoring head.
//!
//! Each block is `time-aware SSM → Add & Norm → selective SSM → Add & Norm`,
//! with layers removed according to the ablation mode. The output at a
//! position is scored against every item embedding; the forward-looking
//! interval at that position is what carries the query time.

mod checkpoint;
mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablation, ModelConfig};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::kernels::nn::{layer_norm_backward, layer_norm_into, softmax_cross_entropy, LayerNormStats};
use crate::params::{join, LayerNormParams, ParamSet};
use crate::selective::{SelectiveCache, SelectiveParams};
use crate::time_aware::{TimeAwareCache, TimeAwareParams};

/// Standard deviation of the embedding initialization.
const EMBED_INIT_STD: f64 = 0.02;

/// Rows processed together before their gradients are merged. Fixed so the
/// summation order never depends on the thread count.
const GRAD_CHUNK_ROWS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub time: Option<TimeAwareParams>,
    pub norm1: Option<LayerNormParams>,
    pub selective: Option<SelectiveParams>,
    pub norm2: Option<LayerNormParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(n_items + 1) × embed_dim`; row 0 is the padding row and stays zero.
    pub embedding: Vec<f64>,
    pub blocks: Vec<BlockParams>,
}

impl ParamSet for BlockParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        if let Some(t) = &self.time {
            t.visit(&join(prefix, "time"), f);
        }
        if let Some(n) = &self.norm1 {
            n.visit(&join(prefix, "norm1"), f);
        }
        if let Some(s) = &self.selective {
            s.visit(&join(prefix, "selective"), f);
        }
        if let Some(n) = &self.norm2 {
            n.visit(&join(prefix, "norm2"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        if let Some(t) = &mut self.time {
            t.visit_mut(&join(prefix, "time"), f);
        }
        if let Some(n) = &mut self.norm1 {
            n.visit_mut(&join(prefix, "norm1"), f);
        }
        if let Some(s) = &mut self.selective {
            s.visit_mut(&join(prefix, "selective"), f);
        }
        if let Some(n) = &mut self.norm2 {
            n.visit_mut(&join(prefix, "norm2"), f);
        }
    }
}

impl ParamSet for ModelParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "embedding"), &self.embedding);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "embedding"), &mut self.embedding);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}

/// Dropout on or off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from a stream derived from `seed` and the row.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

struct LayerPass<C> {
    input: Vec<f64>,
    cache: C,
    drop: Option<Vec<f64>>,
    pre_norm: Vec<f64>,
    stats: Vec<LayerNormStats>,
}

#[derive(Default)]
struct BlockPass {
    time: Option<LayerPass<TimeAwareCache>>,
    selective: Option<LayerPass<SelectiveCache>>,
}

/// Everything the backward pass needs for one unpadded row.
struct RowPass {
    items: Vec<u32>,
    embed_drop: Option<Vec<f64>>,
    blocks: Vec<BlockPass>,
    output: Vec<f64>,
}

fn dropout_mask(rate: f64, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..n).map(|_| if rng.random_bool(rate) { 0.0 } else { keep }).collect())
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (row as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl Model {
    /// Initializes every layer from a seeded stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let mut embedding: Vec<f64> = (0..(config.n_items + 1) * d).map(|_| normal.sample(&mut rng)).collect();
        embedding[..d].fill(0.0);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for _ in 0..config.n_blocks {
            let (time, norm1) = if config.ablation.has_time_layer() {
                (
                    Some(TimeAwareParams::init(config.state_dim, d, &mut rng)?),
                    Some(LayerNormParams::new(d)),
                )
            } else {
                (None, None)
            };
            let (selective, norm2) = if config.ablation.has_selective_layer() {
                (
                    Some(SelectiveParams::init(config.state_dim, d, &mut rng)?),
                    Some(LayerNormParams::new(d)),
                )
            } else {
                (None, None)
            };
            blocks.push(BlockParams {
                time,
                norm1,
                selective,
                norm2,
            });
        }
        Ok(Self {
            config,
            params: ModelParams { embedding, blocks },
        })
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Embedding row of `item` (`0` is padding).
    pub fn item_embedding(&self, item: u32) -> &[f64] {
        let d = self.dim();
        &self.params.embedding[item as usize * d..(item as usize + 1) * d]
    }

    /// Gathers embeddings for a grid of ids. Dropout is not applied here.
    pub fn embed(&self, item_ids: &[u32]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(item_ids.len() * self.dim());
        for &id in item_ids {
            if id as usize > self.n_items() {
                return Err(Error::Index {
                    index: id as usize,
                    bound: self.n_items() + 1,
                });
            }
            out.extend_from_slice(self.item_embedding(id));
        }
        Ok(out)
    }

    /// Inner product of `o` with every real item embedding; index `i` is
    /// item `i + 1`.
    pub fn score(&self, o: &[f64]) -> Vec<f64> {
        let d = self.dim();
        self.params.embedding[d..]
            .chunks_exact(d)
            .map(|e| e.iter().zip(o).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn effective_intervals(&self, intervals: &[f64]) -> Vec<f64> {
        match self.config.ablation {
            Ablation::IgnoreTime => vec![1.0; intervals.len()],
            _ => intervals.to_vec(),
        }
    }

    fn add_norm<C>(
        &self,
        input: Vec<f64>,
        y: Vec<f64>,
        cache: C,
        norm: &LayerNormParams,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, LayerPass<C>) {
        let d = self.dim();
        let drop = rng.and_then(|r| dropout_mask(self.config.dropout, y.len(), r));
        let pre_norm: Vec<f64> = match &drop {
            Some(m) => input.iter().zip(&y).zip(m).map(|((x, y), k)| x + y * k).collect(),
            None => input.iter().zip(&y).map(|(x, y)| x + y).collect(),
        };
        let mut out = vec![0.0; pre_norm.len()];
        let stats = pre_norm
            .chunks_exact(d)
            .zip(out.chunks_exact_mut(d))
            .map(|(z, o)| layer_norm_into(z, &norm.gamma, &norm.beta, self.config.layer_norm_eps, o))
            .collect();
        (
            out,
            LayerPass {
                input,
                cache,
                drop,
                pre_norm,
                stats,
            },
        )
    }

    /// Forward pass over one unpadded row.
    fn forward_row(&self, items: &[u32], intervals: &[f64], mode: Mode, row: usize) -> Result<RowPass> {
        let n = items.len();
        let mask = vec![true; n];
        let mut rng = match mode {
            Mode::Train { seed } => Some(row_rng(seed, row)),
            Mode::Eval => None,
        };
        let mut x = self.embed(items)?;
        let embed_drop = rng
            .as_mut()
            .and_then(|r| dropout_mask(self.config.dropout, x.len(), r));
        if let Some(m) = &embed_drop {
            x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let delta_t = self.effective_intervals(intervals);
        let scan = self.config.scan;
        let mut blocks = Vec::with_capacity(self.params.blocks.len());
        for block in &self.params.blocks {
            let mut pass = BlockPass::default();
            if let (Some(t), Some(norm)) = (&block.time, &block.norm1) {
                let (y, cache) = t.forward_seq(&x, &delta_t, &mask, scan)?;
                let (next, lp) = self.add_norm(x, y, cache, norm, rng.as_mut());
                x = next;
                pass.time = Some(lp);
            }
            if let (Some(s), Some(norm)) = (&block.selective, &block.norm2) {
                let (y, cache) = s.forward_seq(&x, &mask, scan)?;
                let (next, lp) = self.add_norm(x, y, cache, norm, rng.as_mut());
                x = next;
                pass.selective = Some(lp);
            }
            blocks.push(pass);
        }
        Ok(RowPass {
            items: items.to_vec(),
            embed_drop,
            blocks,
            output: x,
        })
    }

    /// Backpropagates `g_out` (gradient w.r.t. the row's final output).
    fn backward_row(&self, pass: &RowPass, mut g: Vec<f64>, grads: &mut ModelParams) {
        let d = self.dim();
        let n = pass.items.len();
        for (block, (bp, bg)) in self
            .params
            .blocks
            .iter()
            .zip(pass.blocks.iter().zip(grads.blocks.iter_mut()))
            .rev()
        {
            if let (Some(lp), Some(s), Some(norm)) = (&bp.selective, &block.selective, &block.norm2) {
                g = self.add_norm_backward(lp, norm, bg.norm2.as_mut().unwrap(), &g, |g_y, g_x| {
                    s.backward_seq(&lp.input, &lp.cache, g_y, bg.selective.as_mut().unwrap(), g_x)
                });
            }
            if let (Some(lp), Some(t), Some(norm)) = (&bp.time, &block.time, &block.norm1) {
                g = self.add_norm_backward(lp, norm, bg.norm1.as_mut().unwrap(), &g, |g_y, g_x| {
                    t.backward_seq(&lp.input, &lp.cache, g_y, bg.time.as_mut().unwrap(), g_x)
                });
            }
        }
        if let Some(m) = &pass.embed_drop {
            g.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        for l in 0..n {
            let row = pass.items[l] as usize * d;
            for (e, gv) in grads.embedding[row..row + d].iter_mut().zip(&g[l * d..(l + 1) * d]) {
                *e += gv;
            }
        }
    }

    fn add_norm_backward<C>(
        &self,
        lp: &LayerPass<C>,
        norm: &LayerNormParams,
        g_norm: &mut LayerNormParams,
        g_out: &[f64],
        layer_backward: impl FnOnce(&[f64], &mut [f64]),
    ) -> Vec<f64> {
        let d = self.dim();
        let mut g_pre = vec![0.0; g_out.len()];
        for (l, stats) in lp.stats.iter().enumerate() {
            let r = l * d..(l + 1) * d;
            layer_norm_backward(
                &lp.pre_norm[r.clone()],
                &norm.gamma,
                *stats,
                &g_out[r.clone()],
                &mut g_pre[r],
                &mut g_norm.gamma,
                &mut g_norm.beta,
            );
        }
        // residual path
        let mut g_x = g_pre.clone();
        let g_y: Vec<f64> = match &lp.drop {
            Some(m) => g_pre.iter().zip(m).map(|(g, k)| g * k).collect(),
            None => g_pre,
        };
        layer_backward(&g_y, &mut g_x);
        g_x
    }

    /// Final-block outputs, `rows × len × dim`, zero at padding.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<f64>> {
        let d = self.dim();
        let rows: Vec<Result<Vec<f64>>> = (0..batch.rows)
            .into_par_iter()
            .map(|b| {
                let r = batch.valid_range(b);
                let off = b * batch.len;
                let mut out = vec![0.0; batch.len * d];
                if !r.is_empty() {
                    let pass = self.forward_row(
                        &batch.item_ids[off + r.start..off + r.end],
                        &batch.intervals[off + r.start..off + r.end],
                        Mode::Eval,
                        b,
                    )?;
                    out[r.start * d..].copy_from_slice(&pass.output);
                }
                Ok(out)
            })
            .collect();
        let mut out = Vec::with_capacity(batch.rows * batch.len * d);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Output at the last position of an unpadded history.
    pub fn represent(&self, items: &[u32], intervals: &[f64]) -> Result<Vec<f64>> {
        if items.is_empty() || items.len() != intervals.len() {
            return Err(Error::Shape(format!(
                "history of {} items with {} intervals",
                items.len(),
                intervals.len()
            )));
        }
        let start = items.len().saturating_sub(self.config.max_len);
        let pass = self.forward_row(&items[start..], &intervals[start..], Mode::Eval, 0)?;
        let d = self.dim();
        Ok(pass.output[pass.output.len() - d..].to_vec())
    }

    /// Mean cross-entropy over the batch's targets.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        Ok(self.loss_and_grad_inner(batch, Mode::Eval, false)?.0)
    }

    /// Mean cross-entropy and its gradient w.r.t. every parameter.
    pub fn loss_and_grad(&self, batch: &Batch, mode: Mode) -> Result<(f64, ModelParams)> {
        let (loss, grads) = self.loss_and_grad_inner(batch, mode, true)?;
        Ok((loss, grads.expect("gradients requested")))
    }

    fn loss_and_grad_inner(&self, batch: &Batch, mode: Mode, with_grad: bool) -> Result<(f64, Option<ModelParams>)> {
        let count = batch.n_targets();
        if count == 0 {
            return Err(Error::NoTargets);
        }
        let weight = 1.0 / count as f64;
        let rows: Vec<usize> = (0..batch.rows).collect();
        let partials: Vec<Result<(f64, Option<ModelParams>)>> = rows
            .par_chunks(GRAD_CHUNK_ROWS)
            .map(|chunk| {
                let mut grads = with_grad.then(|| self.params.zeros_like());
                let mut loss = 0.0;
                for &b in chunk {
                    loss += self.row_loss(batch, b, mode, weight, grads.as_mut())?;
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = 0.0;
        let mut acc: Option<ModelParams> = None;
        for p in partials {
            let (l, g) = p?;
            total += l;
            if let Some(g) = g {
                match acc.as_mut() {
                    Some(a) => a.axpy(1.0, &g),
                    None => acc = Some(g),
                }
            }
        }
        Ok((total * weight, acc))
    }

    /// Summed (unweighted) loss of row `b`; gradients are scaled by `weight`.
    fn row_loss(
        &self,
        batch: &Batch,
        b: usize,
        mode: Mode,
        weight: f64,
        grads: Option<&mut ModelParams>,
    ) -> Result<f64> {
        let r = batch.valid_range(b);
        let off = b * batch.len;
        let targets = &batch.targets[off + r.start..off + r.end];
        if targets.iter().all(|&t| t == 0) {
            return Ok(0.0);
        }
        let pass = self.forward_row(
            &batch.item_ids[off + r.start..off + r.end],
            &batch.intervals[off + r.start..off + r.end],
            mode,
            b,
        )?;
        let d = self.dim();
        let mut loss = 0.0;
        let mut g_out = grads.as_ref().map(|_| vec![0.0; pass.output.len()]);
        let mut g_embed_head: Vec<(usize, Vec<f64>)> = Vec::new();
        for (l, &t) in targets.iter().enumerate().filter(|(_, t)| **t != 0) {
            if t as usize > self.n_items() {
                return Err(Error::Index {
                    index: t as usize,
                    bound: self.n_items() + 1,
                });
            }
            let o = &pass.output[l * d..(l + 1) * d];
            let logits = self.score(o);
            let (ce, g_logits) = softmax_cross_entropy(&logits, t as usize - 1)?;
            loss += ce;
            if let Some(g_out) = g_out.as_mut() {
                let go = &mut g_out[l * d..(l + 1) * d];
                for (i, gl) in g_logits.iter().enumerate() {
                    let gl = gl * weight;
                    let e = self.item_embedding(i as u32 + 1);
                    for k in 0..d {
                        go[k] += gl * e[k];
                    }
                }
                g_embed_head.push((l, g_logits));
            }
        }
        if let (Some(grads), Some(g_out)) = (grads, g_out) {
            for (l, g_logits) in g_embed_head {
                let o = &pass.output[l * d..(l + 1) * d];
                for (i, gl) in g_logits.iter().enumerate() {
                    let gl = gl * weight;
                    let row = &mut grads.embedding[(i + 1) * d..(i + 2) * d];
                    for k in 0..d {
                        row[k] += gl * o[k];
                    }
                }
            }
            self.backward_row(&pass, g_out, grads);
        }
        Ok(loss)
    }
}
