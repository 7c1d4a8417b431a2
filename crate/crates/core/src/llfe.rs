//! Learnable local feature enhancement.
//!
//! A small set of learnable patches `L` (`N×C`) and the pixel feature matrix
//! `X` (`HW×C`) update each other through stacked units of cross-attention.
//! Within a unit the encoder lets `L` query `X`, then the decoder lets `X`
//! query the updated `L`. Both blocks are post-norm residual:
//!
//! ```text
//! u   = LayerNorm(q + CrossAttention(q, kv))
//! out = LayerNorm(u + W2·GELU(W1·u + b1) + b2)
//! ```
//!
//! There is no positional encoding, so the whole module is equivariant to
//! permutations of the pixel rows.

use crate::dropout::{draw_drop, Mode};
use crate::error::{MafError, Result};
use crate::ops::linear;
use crate::params::param_tree;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-head projections, each `C×d` with `d = C / heads`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadProj<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
}
param_tree!(HeadProj { leaves: [w_q, w_k, w_v], nested: [] });

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHeadParams<T> {
    pub heads: Vec<HeadProj<T>>,
    /// `(heads·d)×C`
    pub w_o: T,
}
param_tree!(AttentionHeadParams { leaves: [w_o], nested: [heads] });

/// One encoder or decoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct CoderParams<T> {
    pub attn: AttentionHeadParams<T>,
    pub norm1_gamma: T,
    pub norm1_beta: T,
    pub norm2_gamma: T,
    pub norm2_beta: T,
    /// `C×4C`
    pub ffn_w1: T,
    pub ffn_b1: T,
    /// `4C×C`
    pub ffn_w2: T,
    pub ffn_b2: T,
}
param_tree!(CoderParams {
    leaves: [norm1_gamma, norm1_beta, norm2_gamma, norm2_beta, ffn_w1, ffn_b1, ffn_w2, ffn_b2],
    nested: [attn],
});

#[derive(Clone, Debug, PartialEq)]
pub struct UnitParams<T> {
    pub encoder: CoderParams<T>,
    pub decoder: CoderParams<T>,
}
param_tree!(UnitParams { leaves: [], nested: [encoder, decoder] });

/// Result of one cross-attention call.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `M_q×C`
    pub output: Var,
    /// Softmax weights per head before any drop, `M_q×M_kv`.
    pub weights: Vec<Var>,
    pub dropped_head: Option<usize>,
}

/// Multi-head cross-attention with whole-head dropout.
///
/// Per head `h`: `A_h = softmax(q·W_q (kv·W_k)ᵀ / √d)` and
/// `O_h = Drop(A_h)·(kv·W_v)`. Heads are concatenated and projected by `W_o`.
pub fn cross_attention(
    tape: &mut Tape,
    q_src: Var,
    kv_src: Var,
    params: &AttentionHeadParams<Var>,
    p_head: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<AttentionOutput> {
    let (m_q, c) = tape.value(q_src).dims2("cross_attention")?;
    let (_, c_kv) = tape.value(kv_src).dims2("cross_attention")?;
    if c != c_kv {
        return Err(MafError::dim("cross_attention", tape.shape(q_src), tape.shape(kv_src)));
    }
    let heads = params.heads.len();
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(MafError::Config(format!("{heads} heads do not divide {c} channels")));
    }
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let dropped_head = draw_drop(heads, p_head, rng, mode)?;

    let mut weights = Vec::with_capacity(heads);
    let mut outs = Vec::with_capacity(heads);
    for (h, proj) in params.heads.iter().enumerate() {
        let q = tape.matmul(q_src, proj.w_q)?;
        let k = tape.matmul(kv_src, proj.w_k)?;
        let v = tape.matmul(kv_src, proj.w_v)?;
        let scores = tape.matmul_bt(q, k)?;
        let scores = tape.scale(scores, scale);
        let a = tape.softmax_rows(scores)?;
        weights.push(a);
        let a = if dropped_head == Some(h) {
            let zeros = Tensor::zeros(tape.shape(a));
            tape.mul_const(a, zeros)?
        } else {
            a
        };
        outs.push(tape.matmul(a, v)?);
    }
    let cat = tape.concat_cols(&outs)?;
    let output = tape.matmul(cat, params.w_o)?;
    debug_assert_eq!(tape.shape(output), &[m_q, c]);
    Ok(AttentionOutput {
        output,
        weights,
        dropped_head,
    })
}

/// `W2·GELU(W1·u + b1) + b2`, row-wise.
pub fn feed_forward(tape: &mut Tape, u: Var, p: &CoderParams<Var>) -> Result<Var> {
    let hidden = linear(tape, u, p.ffn_w1, p.ffn_b1)?;
    let hidden = tape.gelu(hidden);
    linear(tape, hidden, p.ffn_w2, p.ffn_b2)
}

/// Shared encoder/decoder block: `queries` attend to `keys_values`.
pub fn coder_block(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    p: &CoderParams<Var>,
    p_head: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Var> {
    let attn = cross_attention(tape, queries, keys_values, &p.attn, p_head, rng, mode)?;
    let res = tape.add(queries, attn.output)?;
    let u = tape.layer_norm(res, p.norm1_gamma, p.norm1_beta, LAYER_NORM_EPS)?;
    let f = feed_forward(tape, u, p)?;
    let res = tape.add(u, f)?;
    tape.layer_norm(res, p.norm2_gamma, p.norm2_beta, LAYER_NORM_EPS)
}

/// Patches query the pixel features; returns the updated patches `N×C`.
pub fn encoder_step(
    tape: &mut Tape,
    patches: Var,
    features: Var,
    p: &CoderParams<Var>,
    p_head: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Var> {
    coder_block(tape, patches, features, p, p_head, rng, mode)
}

/// Pixel features query the updated patches; returns new features `HW×C`.
pub fn decoder_step(
    tape: &mut Tape,
    features: Var,
    patches: Var,
    p: &CoderParams<Var>,
    p_head: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Var> {
    coder_block(tape, features, patches, p, p_head, rng, mode)
}

/// Alternates encoder and decoder steps over `units`, returning `X_I`.
pub fn llfe_forward(
    tape: &mut Tape,
    features: Var,
    patches: Var,
    units: &[UnitParams<Var>],
    p_head: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Var> {
    if units.is_empty() {
        return Err(MafError::Config("feature enhancement needs at least one unit".into()));
    }
    let mut x = features;
    let mut l = patches;
    for unit in units {
        l = encoder_step(tape, l, x, &unit.encoder, p_head, rng, mode)?;
        x = decoder_step(tape, x, l, &unit.decoder, p_head, rng, mode)?;
    }
    Ok(x)
}
