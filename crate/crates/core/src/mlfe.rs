//! Multi-local feature extraction.
//!
//! `N` parallel LANets each turn the backbone feature map `C×H×W` into a
//! single-channel sigmoid attention map. The maps are stacked, one may be
//! zeroed during training, and a channel-wise max fuses them into one map
//! that gates every channel of the input features.

use crate::dropout::{draw_drop, Mode};
use crate::error::{MafError, Result};
use crate::ops::{chw, conv1x1};
use crate::params::param_tree;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Two 1×1 convolutions: `C → C/r → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaNetParams<T> {
    /// `(C/r)×C`
    pub w1: T,
    pub b1: T,
    /// `1×(C/r)`
    pub w2: T,
    pub b2: T,
}
param_tree!(LaNetParams { leaves: [w1, b1, w2, b2], nested: [] });

#[derive(Clone, Debug, PartialEq)]
pub struct MlfeParams<T> {
    pub lanets: Vec<LaNetParams<T>>,
}
param_tree!(MlfeParams { leaves: [], nested: [lanets] });

/// Attention maps after the drop step, kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStack {
    /// `N×H×W`
    pub maps: Tensor,
    pub dropped: Option<usize>,
}

impl AttentionStack {
    pub fn len(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map(&self, n: usize) -> &[f64] {
        let size = self.maps.numel() / self.len();
        &self.maps.data()[n * size..(n + 1) * size]
    }
}

/// Output of [`mlfe_forward`].
#[derive(Clone, Copy, Debug)]
pub struct MlfeOutput {
    /// Gated features, `C×H×W`.
    pub gated: Var,
    /// Post-drop stack, `N×H×W`.
    pub maps: Var,
    /// Channel-max of the stack, `1×H×W`.
    pub fused: Var,
    pub dropped: Option<usize>,
}

pub fn lanet_forward(tape: &mut Tape, x: Var, p: &LaNetParams<Var>) -> Result<Var> {
    let h = conv1x1(tape, x, p.w1, p.b1)?;
    let h = tape.relu(h);
    let a = conv1x1(tape, h, p.w2, p.b2)?;
    Ok(tape.sigmoid(a))
}

/// Value-level map drop: zeroes at most one map according to [`draw_drop`].
pub fn attention_drop(stack: AttentionStack, p_map: f64, rng: &mut Rng, mode: Mode) -> Result<AttentionStack> {
    let n = stack.maps.shape().first().copied().unwrap_or(0);
    let Some(idx) = draw_drop(n, p_map, rng, mode)? else {
        return Ok(stack);
    };
    let mut maps = stack.maps;
    let size = maps.numel() / n;
    maps.data_mut()[idx * size..(idx + 1) * size].fill(0.0);
    Ok(AttentionStack {
        maps,
        dropped: Some(idx),
    })
}

/// `fused = max_n maps[n]`; `out[c] = x[c] ⊙ fused`.
///
/// Returns `(gated, fused)`.
pub fn fuse_and_gate(tape: &mut Tape, x: Var, maps: Var) -> Result<(Var, Var)> {
    let (c, h, w) = chw(tape, x, "fuse_and_gate")?;
    let (n, mh, mw) = chw(tape, maps, "fuse_and_gate")?;
    if (mh, mw) != (h, w) {
        return Err(MafError::dim("fuse_and_gate", tape.shape(x), tape.shape(maps)));
    }
    let stacked = tape.reshape(maps, &[n, h * w])?;
    let fused = tape.max_rows(stacked)?;
    let flat = tape.reshape(x, &[c, h * w])?;
    let gated = tape.mul_row_broadcast(flat, fused)?;
    let gated = tape.reshape(gated, &[c, h, w])?;
    let fused = tape.reshape(fused, &[1, h, w])?;
    Ok((gated, fused))
}

pub fn mlfe_forward(
    tape: &mut Tape,
    x: Var,
    params: &MlfeParams<Var>,
    p_map: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<MlfeOutput> {
    let (_, h, w) = chw(tape, x, "mlfe_forward")?;
    let n = params.lanets.len();
    let mut rows = Vec::with_capacity(n);
    for lanet in &params.lanets {
        let a = lanet_forward(tape, x, lanet)?;
        rows.push(tape.reshape(a, &[1, h * w])?);
    }
    let stacked = tape.concat_rows(&rows)?;
    let dropped = draw_drop(n, p_map, rng, mode)?;
    let stacked = match dropped {
        Some(idx) => {
            let mut mask = Tensor::ones(&[n, h * w]);
            mask.data_mut()[idx * h * w..(idx + 1) * h * w].fill(0.0);
            tape.mul_const(stacked, mask)?
        }
        None => stacked,
    };
    let maps = tape.reshape(stacked, &[n, h, w])?;
    let (gated, fused) = fuse_and_gate(tape, x, maps)?;
    Ok(MlfeOutput {
        gated,
        maps,
        fused,
        dropped,
    })
}
