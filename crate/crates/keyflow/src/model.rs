//! The learnable velocity field: a small transformer over K residual
//! tokens whose blocks are modulated by a shared conditioning embedding
//! of `[start state, command, flow time]` through shift-scale-gate hooks.
//!
//! Forward and backward passes are written out by hand in f64. The
//! backward is exact for the forward as written; the acceptance suite
//! holds every parameter gradient against central finite differences.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::nn::{
    layer_norm, layer_norm_backward, silu_arr, silu_backward, softmax, softmax_backward, Linear,
};
use crate::state::StateLayout;

pub const TIME_EMBED_DIM: usize = 64;
pub const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowArch {
    pub blocks: usize,
    pub heads: usize,
    pub model_dim: usize,
}

impl FlowArch {
    /// The full-scale configuration.
    pub fn full() -> Self {
        FlowArch {
            blocks: 6,
            heads: 4,
            model_dim: 512,
        }
    }

    /// Desk-scale default: small enough to train in seconds.
    pub fn desk() -> Self {
        FlowArch {
            blocks: 2,
            heads: 4,
            model_dim: 64,
        }
    }

    /// Micro configuration for gradient checks.
    pub fn tiny() -> Self {
        FlowArch {
            blocks: 2,
            heads: 2,
            model_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.heads == 0 || self.model_dim == 0 {
            return Err(Error::Config("arch dims must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub qkv: Linear,
    pub proj: Linear,
    pub mlp1: Linear,
    pub mlp2: Linear,
    /// Conditioning to (shift, scale, gate) x (attention, feedforward).
    pub modulation: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub embed: Linear,
    pub pos: Array2<f64>,
    pub cond1: Linear,
    pub cond2: Linear,
    pub blocks: Vec<BlockParams>,
    pub final_mod: Linear,
    pub unembed: Linear,
}

impl FlowParams {
    /// Standard initialization: modulation projections and the output
    /// layer start at zero so every block begins as the identity and the
    /// initial velocity field is exactly zero.
    pub fn init(arch: FlowArch, state_dim: usize, keyframes: usize, rng: &mut impl Rng) -> Self {
        let dm = arch.model_dim;
        let cond_in = 2 * state_dim + TIME_EMBED_DIM;
        let blocks = (0..arch.blocks)
            .map(|_| BlockParams {
                qkv: Linear::xavier(dm, 3 * dm, rng),
                proj: Linear::xavier(dm, dm, rng),
                mlp1: Linear::xavier(dm, MLP_RATIO * dm, rng),
                mlp2: Linear::xavier(MLP_RATIO * dm, dm, rng),
                modulation: Linear::zeros(dm, 6 * dm),
            })
            .collect();
        FlowParams {
            embed: Linear::xavier(state_dim, dm, rng),
            pos: Array2::from_shape_fn((keyframes, dm), |_| {
                let v: f64 = StandardNormal.sample(rng);
                v * 0.02
            }),
            cond1: Linear::xavier(cond_in, dm, rng),
            cond2: Linear::xavier(dm, dm, rng),
            blocks,
            final_mod: Linear::zeros(dm, 2 * dm),
            unembed: Linear::zeros(dm, state_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FlowParams {
            embed: self.embed.zeros_like(),
            pos: Array2::zeros(self.pos.raw_dim()),
            cond1: self.cond1.zeros_like(),
            cond2: self.cond2.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    qkv: b.qkv.zeros_like(),
                    proj: b.proj.zeros_like(),
                    mlp1: b.mlp1.zeros_like(),
                    mlp2: b.mlp2.zeros_like(),
                    modulation: b.modulation.zeros_like(),
                })
                .collect(),
            final_mod: self.final_mod.zeros_like(),
            unembed: self.unembed.zeros_like(),
        }
    }

    /// Fill every tensor (including the zero-initialized ones) with small
    /// random values; used by gradient checks so no path is dormant.
    pub fn randomize_all(&mut self, rng: &mut impl Rng) {
        for t in self.tensors_mut() {
            for v in t {
                let n: f64 = StandardNormal.sample(rng);
                *v = n * 0.15;
            }
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.embed.w.as_slice().unwrap(),
            self.embed.b.as_slice().unwrap(),
            self.pos.as_slice().unwrap(),
            self.cond1.w.as_slice().unwrap(),
            self.cond1.b.as_slice().unwrap(),
            self.cond2.w.as_slice().unwrap(),
            self.cond2.b.as_slice().unwrap(),
        ];
        for b in &self.blocks {
            out.push(b.qkv.w.as_slice().unwrap());
            out.push(b.qkv.b.as_slice().unwrap());
            out.push(b.proj.w.as_slice().unwrap());
            out.push(b.proj.b.as_slice().unwrap());
            out.push(b.mlp1.w.as_slice().unwrap());
            out.push(b.mlp1.b.as_slice().unwrap());
            out.push(b.mlp2.w.as_slice().unwrap());
            out.push(b.mlp2.b.as_slice().unwrap());
            out.push(b.modulation.w.as_slice().unwrap());
            out.push(b.modulation.b.as_slice().unwrap());
        }
        out.push(self.final_mod.w.as_slice().unwrap());
        out.push(self.final_mod.b.as_slice().unwrap());
        out.push(self.unembed.w.as_slice().unwrap());
        out.push(self.unembed.b.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.embed.w.as_slice_mut().unwrap(),
            self.embed.b.as_slice_mut().unwrap(),
            self.pos.as_slice_mut().unwrap(),
            self.cond1.w.as_slice_mut().unwrap(),
            self.cond1.b.as_slice_mut().unwrap(),
            self.cond2.w.as_slice_mut().unwrap(),
            self.cond2.b.as_slice_mut().unwrap(),
        ];
        for b in &mut self.blocks {
            out.push(b.qkv.w.as_slice_mut().unwrap());
            out.push(b.qkv.b.as_slice_mut().unwrap());
            out.push(b.proj.w.as_slice_mut().unwrap());
            out.push(b.proj.b.as_slice_mut().unwrap());
            out.push(b.mlp1.w.as_slice_mut().unwrap());
            out.push(b.mlp1.b.as_slice_mut().unwrap());
            out.push(b.mlp2.w.as_slice_mut().unwrap());
            out.push(b.mlp2.b.as_slice_mut().unwrap());
            out.push(b.modulation.w.as_slice_mut().unwrap());
            out.push(b.modulation.b.as_slice_mut().unwrap());
        }
        out.push(self.final_mod.w.as_slice_mut().unwrap());
        out.push(self.final_mod.b.as_slice_mut().unwrap());
        out.push(self.unembed.w.as_slice_mut().unwrap());
        out.push(self.unembed.b.as_slice_mut().unwrap());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_scaled(&mut self, other: &FlowParams, scale: f64) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        for (a, b) in mine.iter_mut().zip(theirs.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += scale * y;
            }
        }
    }
}

/// The trained velocity-field model plus everything needed to use it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub arch: FlowArch,
    pub layout: StateLayout,
    pub keyframes: usize,
    pub horizon_s: f64,
    pub norm: NormStats,
    pub params: FlowParams,
}

impl FlowModel {
    pub fn state_dim(&self) -> usize {
        self.layout.total_dim()
    }

    /// Fresh model; the zero-initialized output layer makes the initial
    /// velocity field identically zero.
    pub fn init(
        arch: FlowArch,
        layout: StateLayout,
        keyframes: usize,
        horizon_s: f64,
        norm: NormStats,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = FlowParams::init(arch, layout.total_dim(), keyframes, &mut rng);
        Ok(FlowModel {
            arch,
            layout,
            keyframes,
            horizon_s,
            norm,
            params,
        })
    }
}

/// Sinusoidal features of the flow time, geometric frequencies 1..1000.
pub fn time_embedding(t: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for j in 0..half {
        let omega = 1000f64.powf(j as f64 / (half.max(2) - 1) as f64);
        out[j] = (omega * t).sin();
        out[half + j] = (omega * t).cos();
    }
    out
}

/// Linear probability path, `x_t = (1-t) x0 + t x1`.
pub fn flow_interpolate(x0: &Array2<f64>, x1: &Array2<f64>, t: f64) -> Array2<f64> {
    x0 * (1.0 - t) + x1 * t
}

struct BlockCache {
    ln1_y: Array2<f64>,
    ln1_inv: Array1<f64>,
    u1_mod: Array2<f64>,
    qkv_out: Array2<f64>,
    attn_weights: Vec<Array2<f64>>, // per head, K x K
    attn_concat: Array2<f64>,
    attn_proj: Array2<f64>,
    ln2_y: Array2<f64>,
    ln2_inv: Array1<f64>,
    u2_mod: Array2<f64>,
    mlp_pre: Array2<f64>,
    mlp_act: Array2<f64>,
    mlp_out: Array2<f64>,
    mods: Array2<f64>, // 1 x 6dm
}

struct ForwardCache {
    c_raw: Array2<f64>,
    c1_pre: Array2<f64>,
    c1_act: Array2<f64>,
    c2: Array2<f64>,
    c_act: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_mods: Array2<f64>,
    lnf_y: Array2<f64>,
    lnf_inv: Array1<f64>,
    uf_mod: Array2<f64>,
}

fn mod_slice(mods: &Array2<f64>, idx: usize, dm: usize) -> Array1<f64> {
    mods.slice(s![0, idx * dm..(idx + 1) * dm]).to_owned()
}

/// `y = u * (1 + scale) + shift`, row vectors broadcast over tokens.
fn modulate(u: &Array2<f64>, shift: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut y = u.clone();
    for mut row in y.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * (1.0 + scale[j]) + shift[j];
        }
    }
    y
}

fn attention_forward(
    block: &BlockParams,
    u: &Array2<f64>,
    heads: usize,
) -> (Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
    let dm = u.ncols();
    let hd = dm / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let qkv = block.qkv.forward(u);
    let mut concat = Array2::zeros((u.nrows(), dm));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
        let k = qkv.slice(s![.., dm + h * hd..dm + (h + 1) * hd]);
        let v = qkv.slice(s![.., 2 * dm + h * hd..2 * dm + (h + 1) * hd]);
        let scores = q.dot(&k.t()) * scale;
        let a = softmax(&scores);
        let o = a.dot(&v);
        concat.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&o);
        weights.push(a);
    }
    let out = block.proj.forward(&concat);
    (out, concat, weights, qkv)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    block: &BlockParams,
    cache_u: &Array2<f64>,
    qkv_out: &Array2<f64>,
    concat: &Array2<f64>,
    weights: &[Array2<f64>],
    d_out: &Array2<f64>,
    heads: usize,
    grad: &mut BlockParams,
) -> Array2<f64> {
    let dm = cache_u.ncols();
    let hd = dm / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let d_concat = block.proj.backward(concat, d_out, &mut grad.proj);
    let mut d_qkv = Array2::zeros(qkv_out.raw_dim());
    for h in 0..heads {
        let q = qkv_out.slice(s![.., h * hd..(h + 1) * hd]).to_owned();
        let k = qkv_out
            .slice(s![.., dm + h * hd..dm + (h + 1) * hd])
            .to_owned();
        let v = qkv_out
            .slice(s![.., 2 * dm + h * hd..2 * dm + (h + 1) * hd])
            .to_owned();
        let a = &weights[h];
        let d_o = d_concat.slice(s![.., h * hd..(h + 1) * hd]).to_owned();
        let d_v = a.t().dot(&d_o);
        let d_a = d_o.dot(&v.t());
        let d_s = softmax_backward(a, &d_a);
        let d_q = d_s.dot(&k) * scale;
        let d_k = d_s.t().dot(&q) * scale;
        d_qkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&d_q);
        d_qkv
            .slice_mut(s![.., dm + h * hd..dm + (h + 1) * hd])
            .assign(&d_k);
        d_qkv
            .slice_mut(s![.., 2 * dm + h * hd..2 * dm + (h + 1) * hd])
            .assign(&d_v);
    }
    block.qkv.backward(cache_u, &d_qkv, &mut grad.qkv)
}

fn forward_with_cache(
    params: &FlowParams,
    arch: FlowArch,
    x_t: &Array2<f64>,
    t: f64,
    cond: &[f64],
) -> (Array2<f64>, ForwardCache) {
    let dm = arch.model_dim;
    let t_emb = time_embedding(t, TIME_EMBED_DIM);
    let mut c_raw = Array2::zeros((1, cond.len() + TIME_EMBED_DIM));
    for (j, v) in cond.iter().enumerate() {
        c_raw[[0, j]] = *v;
    }
    for j in 0..TIME_EMBED_DIM {
        c_raw[[0, cond.len() + j]] = t_emb[j];
    }
    let c1_pre = params.cond1.forward(&c_raw);
    let c1_act = silu_arr(&c1_pre);
    let c2 = params.cond2.forward(&c1_act);
    let c_act = silu_arr(&c2);

    let mut h = params.embed.forward(x_t);
    h += &params.pos;

    let mut blocks = Vec::with_capacity(arch.blocks);
    for block in &params.blocks {
        let mods = block.modulation.forward(&c_act);
        let (ln1_y, ln1_inv) = layer_norm(&h);
        let u1_mod = modulate(&ln1_y, &mod_slice(&mods, 0, dm), &mod_slice(&mods, 1, dm));
        let (attn_proj, attn_concat, attn_weights, qkv_out) =
            attention_forward(block, &u1_mod, arch.heads);
        let gate1 = mod_slice(&mods, 2, dm);
        for (i, mut row) in h.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += gate1[j] * attn_proj[[i, j]];
            }
        }
        let (ln2_y, ln2_inv) = layer_norm(&h);
        let u2_mod = modulate(&ln2_y, &mod_slice(&mods, 3, dm), &mod_slice(&mods, 4, dm));
        let mlp_pre = block.mlp1.forward(&u2_mod);
        let mlp_act = silu_arr(&mlp_pre);
        let mlp_out = block.mlp2.forward(&mlp_act);
        let gate2 = mod_slice(&mods, 5, dm);
        for (i, mut row) in h.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += gate2[j] * mlp_out[[i, j]];
            }
        }
        blocks.push(BlockCache {
            ln1_y,
            ln1_inv,
            u1_mod,
            qkv_out,
            attn_weights,
            attn_concat,
            attn_proj,
            ln2_y,
            ln2_inv,
            u2_mod,
            mlp_pre,
            mlp_act,
            mlp_out,
            mods,
        });
    }

    let final_mods = params.final_mod.forward(&c_act);
    let (lnf_y, lnf_inv) = layer_norm(&h);
    let uf_mod = modulate(
        &lnf_y,
        &mod_slice(&final_mods, 0, dm),
        &mod_slice(&final_mods, 1, dm),
    );
    let v = params.unembed.forward(&uf_mod);

    let cache = ForwardCache {
        c_raw,
        c1_pre,
        c1_act,
        c2,
        c_act,
        blocks,
        final_mods,
        lnf_y,
        lnf_inv,
        uf_mod,
    };
    (v, cache)
}

/// Deterministic forward pass of the velocity field for one sample.
pub fn velocity_forward(
    params: &FlowParams,
    arch: FlowArch,
    x_t: &Array2<f64>,
    t: f64,
    cond: &[f64],
) -> Array2<f64> {
    forward_with_cache(params, arch, x_t, t, cond).0
}

/// Backward pass for one sample; accumulates parameter gradients.
fn backward_from_cache(
    params: &FlowParams,
    arch: FlowArch,
    x_t: &Array2<f64>,
    cache: &ForwardCache,
    d_v: &Array2<f64>,
    grad: &mut FlowParams,
) {
    let dm = arch.model_dim;
    let k_tokens = d_v.nrows();

    let d_uf = params
        .unembed
        .backward(&cache.uf_mod, d_v, &mut grad.unembed);
    let mut d_lnf = Array2::zeros(cache.lnf_y.raw_dim());
    let mut d_final_mods = Array2::zeros(cache.final_mods.raw_dim());
    for i in 0..k_tokens {
        for j in 0..dm {
            let scale = cache.final_mods[[0, dm + j]];
            d_lnf[[i, j]] = d_uf[[i, j]] * (1.0 + scale);
            d_final_mods[[0, j]] += d_uf[[i, j]];
            d_final_mods[[0, dm + j]] += d_uf[[i, j]] * cache.lnf_y[[i, j]];
        }
    }
    let mut d_c_act = params
        .final_mod
        .backward(&cache.c_act, &d_final_mods, &mut grad.final_mod);
    let mut d_h = layer_norm_backward(&cache.lnf_y, &cache.lnf_inv, &d_lnf);

    for idx in (0..params.blocks.len()).rev() {
        let block = &params.blocks[idx];
        let bc = &cache.blocks[idx];
        let gb = &mut grad.blocks[idx];
        let mods = &bc.mods;
        let mut d_mods = Array2::zeros(mods.raw_dim());

        // Feedforward residual: h_out = h_mid + gate2 * mlp_out.
        let mut d_mlp_out = Array2::zeros(bc.mlp_out.raw_dim());
        for i in 0..k_tokens {
            for j in 0..dm {
                let gate2 = mods[[0, 5 * dm + j]];
                d_mlp_out[[i, j]] = d_h[[i, j]] * gate2;
                d_mods[[0, 5 * dm + j]] += d_h[[i, j]] * bc.mlp_out[[i, j]];
            }
        }
        let d_mlp_act = block.mlp2.backward(&bc.mlp_act, &d_mlp_out, &mut gb.mlp2);
        let d_mlp_pre = silu_backward(&bc.mlp_pre, &d_mlp_act);
        let d_u2 = block.mlp1.backward(&bc.u2_mod, &d_mlp_pre, &mut gb.mlp1);
        let mut d_ln2 = Array2::zeros(bc.ln2_y.raw_dim());
        for i in 0..k_tokens {
            for j in 0..dm {
                let scale = mods[[0, 4 * dm + j]];
                d_ln2[[i, j]] = d_u2[[i, j]] * (1.0 + scale);
                d_mods[[0, 3 * dm + j]] += d_u2[[i, j]];
                d_mods[[0, 4 * dm + j]] += d_u2[[i, j]] * bc.ln2_y[[i, j]];
            }
        }
        // d_h flows through the residual connection plus the LN branch.
        let mut d_h_mid = d_h.clone();
        d_h_mid += &layer_norm_backward(&bc.ln2_y, &bc.ln2_inv, &d_ln2);

        // Attention residual: h_mid = h_in + gate1 * attn_proj.
        let mut d_attn = Array2::zeros(bc.attn_proj.raw_dim());
        for i in 0..k_tokens {
            for j in 0..dm {
                let gate1 = mods[[0, 2 * dm + j]];
                d_attn[[i, j]] = d_h_mid[[i, j]] * gate1;
                d_mods[[0, 2 * dm + j]] += d_h_mid[[i, j]] * bc.attn_proj[[i, j]];
            }
        }
        let d_u1 = attention_backward(
            block,
            &bc.u1_mod,
            &bc.qkv_out,
            &bc.attn_concat,
            &bc.attn_weights,
            &d_attn,
            arch.heads,
            gb,
        );
        let mut d_ln1 = Array2::zeros(bc.ln1_y.raw_dim());
        for i in 0..k_tokens {
            for j in 0..dm {
                let scale = mods[[0, dm + j]];
                d_ln1[[i, j]] = d_u1[[i, j]] * (1.0 + scale);
                d_mods[[0, j]] += d_u1[[i, j]];
                d_mods[[0, dm + j]] += d_u1[[i, j]] * bc.ln1_y[[i, j]];
            }
        }
        d_h = d_h_mid;
        d_h += &layer_norm_backward(&bc.ln1_y, &bc.ln1_inv, &d_ln1);

        d_c_act += &block
            .modulation
            .backward(&cache.c_act, &d_mods, &mut gb.modulation);
    }

    // Token embedding: h0 = embed(x_t) + pos.
    grad.pos += &d_h;
    let _ = params.embed.backward(x_t, &d_h, &mut grad.embed);

    // Conditioning MLP.
    let d_c2 = silu_backward(&cache.c2, &d_c_act);
    let d_c1_act = params.cond2.backward(&cache.c1_act, &d_c2, &mut grad.cond2);
    let d_c1_pre = silu_backward(&cache.c1_pre, &d_c1_act);
    let _ = params
        .cond1
        .backward(&cache.c_raw, &d_c1_pre, &mut grad.cond1);
}

/// A training batch in normalized residual space.
#[derive(Debug, Clone)]
pub struct FlowBatch {
    pub x0: Vec<Array2<f64>>,
    pub cond: Vec<Vec<f64>>,
    pub weights: Vec<Array2<f64>>,
    pub t: Vec<f64>,
    pub x1: Vec<Array2<f64>>,
}

impl FlowBatch {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        if self.cond.len() != n
            || self.weights.len() != n
            || self.t.len() != n
            || self.x1.len() != n
        {
            return Err(Error::Layout("batch component lengths differ".into()));
        }
        if self.t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("flow times must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

const GRAD_CHUNK: usize = 8;

/// Weighted velocity-matching loss and parameter gradients.
///
/// Per-sample gradients are computed (possibly in parallel) in chunks of
/// a fixed size and reduced in sample order, so the thread count never
/// changes the numeric result.
pub fn weighted_velocity_loss(
    params: &FlowParams,
    arch: FlowArch,
    batch: &FlowBatch,
) -> Result<(f64, FlowParams)> {
    batch.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let total = (n * batch.x0[0].len()) as f64;

    use rayon::prelude::*;
    let mut grad = params.zeros_like();
    let mut loss_sum = 0.0;
    for chunk_start in (0..n).step_by(GRAD_CHUNK) {
        let chunk_end = (chunk_start + GRAD_CHUNK).min(n);
        let results: Vec<(f64, FlowParams)> = (chunk_start..chunk_end)
            .into_par_iter()
            .map(|i| sample_loss_and_grad(params, arch, batch, i, total))
            .collect();
        for (l, g) in results {
            loss_sum += l;
            grad.add_scaled(&g, 1.0);
        }
    }
    let loss = loss_sum / total;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss is {loss}")));
    }
    Ok((loss, grad))
}

fn sample_loss_and_grad(
    params: &FlowParams,
    arch: FlowArch,
    batch: &FlowBatch,
    i: usize,
    total: f64,
) -> (f64, FlowParams) {
    let x_t = flow_interpolate(&batch.x0[i], &batch.x1[i], batch.t[i]);
    let (v, cache) = forward_with_cache(params, arch, &x_t, batch.t[i], &batch.cond[i]);
    let target = &batch.x1[i] - &batch.x0[i];
    let mut err = v;
    err -= &target;
    let w = &batch.weights[i];
    let loss: f64 = err
        .iter()
        .zip(w.iter())
        .map(|(e, wv)| wv * e * e)
        .sum::<f64>();
    let mut d_v = err;
    for (dv, wv) in d_v.iter_mut().zip(w.iter()) {
        *dv *= 2.0 * wv / total;
    }
    let mut grad = params.zeros_like();
    backward_from_cache(params, arch, &x_t, &cache, &d_v, &mut grad);
    (loss, grad)
}

/// Loss only, no gradients (used by finite-difference oracles).
pub fn weighted_velocity_loss_value(
    params: &FlowParams,
    arch: FlowArch,
    batch: &FlowBatch,
) -> f64 {
    let n = batch.len();
    let total = (n * batch.x0[0].len()) as f64;
    let mut loss_sum = 0.0;
    for i in 0..n {
        let x_t = flow_interpolate(&batch.x0[i], &batch.x1[i], batch.t[i]);
        let v = velocity_forward(params, arch, &x_t, batch.t[i], &batch.cond[i]);
        let target = &batch.x1[i] - &batch.x0[i];
        loss_sum += v
            .iter()
            .zip(target.iter())
            .zip(batch.weights[i].iter())
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum::<f64>();
    }
    loss_sum / total
}
