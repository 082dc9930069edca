//! Decoder-only transformer over token sequences: linear token embedding
//! plus learned positional embeddings, pre-norm blocks of causal multi-head
//! self-attention and a relu MLP with hidden width 4*N_M, a final layer
//! norm, and a linear head. Scores are scaled by 1/sqrt(N_K).

use std::collections::BTreeMap;

use super::{affine_layer_norm, linear, trunc_param, zero_param, ModelConfig};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    let mut store = ParamStore::new();
    let mut s = Stream::new(seed, "init/transformer", 0);
    let (nm, hk) = (cfg.model_size, cfg.heads * cfg.key_size);
    trunc_param(&mut store, "embed.w", &[cfg.input_dim, nm], &mut s)?;
    zero_param(&mut store, "embed.b", &[nm])?;
    trunc_param(&mut store, "pos.e", &[cfg.max_seq, nm], &mut s)?;
    for i in 0..cfg.layers {
        store.insert(&format!("block{i}.ln1.g"), Tensor::full(&[nm], E::ONE))?;
        zero_param(&mut store, &format!("block{i}.ln1.b"), &[nm])?;
        for proj in ["q", "k", "v"] {
            trunc_param(&mut store, &format!("block{i}.attn.{proj}.w"), &[nm, hk], &mut s)?;
            zero_param(&mut store, &format!("block{i}.attn.{proj}.b"), &[hk])?;
        }
        trunc_param(&mut store, &format!("block{i}.attn.o.w"), &[hk, nm], &mut s)?;
        zero_param(&mut store, &format!("block{i}.attn.o.b"), &[nm])?;
        store.insert(&format!("block{i}.ln2.g"), Tensor::full(&[nm], E::ONE))?;
        zero_param(&mut store, &format!("block{i}.ln2.b"), &[nm])?;
        trunc_param(&mut store, &format!("block{i}.mlp.w1"), &[nm, 4 * nm], &mut s)?;
        zero_param(&mut store, &format!("block{i}.mlp.b1"), &[4 * nm])?;
        trunc_param(&mut store, &format!("block{i}.mlp.w2"), &[4 * nm, nm], &mut s)?;
        zero_param(&mut store, &format!("block{i}.mlp.b2"), &[nm])?;
    }
    store.insert("ln_f.g", Tensor::full(&[nm], E::ONE))?;
    zero_param(&mut store, "ln_f.b", &[nm])?;
    trunc_param(&mut store, "head.w", &[nm, cfg.output_dim], &mut s)?;
    zero_param(&mut store, "head.b", &[cfg.output_dim])?;
    Ok(store)
}

pub fn forward<E: Scalar>(
    cfg: &ModelConfig,
    g: &mut Graph<E>,
    ids: &BTreeMap<String, NodeId>,
    tokens: NodeId,
) -> Result<NodeId> {
    let sh = g.value(tokens).shape().to_vec();
    let (b, t) = (sh[0], sh[1]);
    let (h, nk) = (cfg.heads, cfg.key_size);
    let scale = E::from_f64(1.0 / (nk as f64).sqrt());

    let mut x = linear(g, ids, tokens, "embed.w", "embed.b")?;
    let pos = g.slice(ids["pos.e"], 0, 0, t)?;
    x = g.add(x, pos)?;

    for i in 0..cfg.layers {
        let name = |s: &str| format!("block{i}.{s}");
        let ln1 = affine_layer_norm(g, ids, x, &name("ln1.g"), &name("ln1.b"))?;
        let split = |g: &mut Graph<E>, v: NodeId| -> Result<NodeId> {
            let r = g.reshape(v, &[b, t, h, nk])?;
            g.transpose(r, &[0, 2, 1, 3])
        };
        let q = linear(g, ids, ln1, &name("attn.q.w"), &name("attn.q.b"))?;
        let k = linear(g, ids, ln1, &name("attn.k.w"), &name("attn.k.b"))?;
        let v = linear(g, ids, ln1, &name("attn.v.w"), &name("attn.v.b"))?;
        let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);
        let kt = g.transpose(k, &[0, 1, 3, 2])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale)?;
        let masked = g.causal_masked_fill(scores)?;
        let attn = g.softmax(masked)?;
        let ctx = g.matmul(attn, v)?;
        let merged = g.transpose(ctx, &[0, 2, 1, 3])?;
        let merged = g.reshape(merged, &[b, t, h * nk])?;
        let proj = linear(g, ids, merged, &name("attn.o.w"), &name("attn.o.b"))?;
        x = g.add(x, proj)?;

        let ln2 = affine_layer_norm(g, ids, x, &name("ln2.g"), &name("ln2.b"))?;
        let mid = linear(g, ids, ln2, &name("mlp.w1"), &name("mlp.b1"))?;
        let mid = g.relu(mid)?;
        let out = linear(g, ids, mid, &name("mlp.w2"), &name("mlp.b2"))?;
        x = g.add(x, out)?;
    }

    let lnf = affine_layer_norm(g, ids, x, "ln_f.g", "ln_f.b")?;
    linear(g, ids, lnf, "head.w", "head.b")
}
