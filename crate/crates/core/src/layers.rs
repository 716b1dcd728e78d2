//! Post-norm transformer blocks shared by both architectures.

use autodiff::{Mask, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, Bound, ParamId, ParamSet};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Which keys a query may attend to.
#[derive(Debug, Clone, Copy)]
pub enum Keys<'a> {
    /// Keys restricted by a `(L, L)` mask.
    Masked(&'a Mask),
    /// Only the first `n` positions act as keys and values.
    Prefix(usize),
}

/// Parameter handles of one attention + MLP block.
#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

impl BlockIds {
    pub fn init<T: Scalar, R: Rng + ?Sized>(ps: &mut ParamSet<T>, rng: &mut R, prefix: &str, d: usize, hidden: usize) -> Self {
        let mut lin = |ps: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize| {
            (
                ps.push(format!("{prefix}.{name}.w"), fan_in_uniform(rng, fan_in, vec![fan_in, fan_out])),
                ps.push(format!("{prefix}.{name}.b"), Tensor::zeros(vec![fan_out])),
            )
        };
        let (wq, bq) = lin(ps, "q", d, d);
        let (wk, bk) = lin(ps, "k", d, d);
        let (wv, bv) = lin(ps, "v", d, d);
        let (wo, bo) = lin(ps, "o", d, d);
        let ln1_g = ps.push(format!("{prefix}.ln1.g"), Tensor::full(vec![d], T::one()));
        let ln1_b = ps.push(format!("{prefix}.ln1.b"), Tensor::zeros(vec![d]));
        let (w1, b1) = lin(ps, "mlp1", d, hidden);
        let (w2, b2) = lin(ps, "mlp2", hidden, d);
        let ln2_g = ps.push(format!("{prefix}.ln2.g"), Tensor::full(vec![d], T::one()));
        let ln2_b = ps.push(format!("{prefix}.ln2.b"), Tensor::zeros(vec![d]));
        BlockIds { wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b }
    }
}

pub(crate) fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    Ok(tape.add(h, b)?)
}

/// Multi-head attention over the middle axis of `x: (G, L, d)`.
///
/// Returns the head-merged, output-projected values before any residual.
pub fn attention<T: Scalar>(tape: &mut Tape<T>, p: &Bound, ids: &BlockIds, x: Var, keys: Keys, heads: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [g, l, d] = shape[..] else {
        return Err(autodiff::TensorError::Rank { op: "attention", expected: "rank 3", shape }.into());
    };
    let dh = d / heads;
    let kv_src = match keys {
        Keys::Prefix(0) => return Err(Error::EmptyContext),
        Keys::Prefix(n) if n < l => tape.slice(x, 1, 0, n)?,
        _ => x,
    };
    let lk = tape.shape(kv_src)[1];
    let split = |tape: &mut Tape<T>, v: Var, len: usize| -> Result<Var> {
        let r = tape.reshape(v, &[g, len, heads, dh])?;
        Ok(tape.permute(r, &[0, 2, 1, 3])?)
    };
    let q = linear(tape, x, p.var(ids.wq), p.var(ids.bq))?;
    let k = linear(tape, kv_src, p.var(ids.wk), p.var(ids.bk))?;
    let v = linear(tape, kv_src, p.var(ids.wv), p.var(ids.bv))?;
    let (q, k, v) = (split(tape, q, l)?, split(tape, k, lk)?, split(tape, v, lk)?);
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = match keys {
        Keys::Masked(m) => tape.softmax_masked(scores, Some(m))?,
        Keys::Prefix(_) => tape.softmax(scores)?,
    };
    let ctx = tape.matmul(weights, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[g, l, d])?;
    linear(tape, ctx, p.var(ids.wo), p.var(ids.bo))
}

/// `LN(x + attn(x))` followed by `LN(h + MLP(h))`.
pub fn block<T: Scalar>(tape: &mut Tape<T>, p: &Bound, ids: &BlockIds, x: Var, keys: Keys, heads: usize) -> Result<Var> {
    let a = attention(tape, p, ids, x, keys, heads)?;
    let r = tape.add(x, a)?;
    let h = tape.layer_norm(r, p.var(ids.ln1_g), p.var(ids.ln1_b), LN_EPS)?;
    let m = linear(tape, h, p.var(ids.w1), p.var(ids.b1))?;
    let m = tape.gelu(m);
    let m = linear(tape, m, p.var(ids.w2), p.var(ids.b2))?;
    let r = tape.add(h, m)?;
    Ok(tape.layer_norm(r, p.var(ids.ln2_g), p.var(ids.ln2_b), LN_EPS)?)
}
