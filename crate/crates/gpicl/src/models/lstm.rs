//! Stacked LSTM unrolled over the sequence axis. Gate blocks are packed
//! [input, forget, cell, output] along the last axis of one fused linear
//! map per layer; forget-gate biases start at 1 so early gradients pass
//! through the cell state.

use std::collections::BTreeMap;

use super::{linear, trunc_param, ModelConfig};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    let mut store = ParamStore::new();
    let mut s = Stream::new(seed, "init/lstm", 0);
    let nh = cfg.hidden_size;
    for l in 0..cfg.layers {
        let d_in = if l == 0 { cfg.input_dim } else { nh };
        trunc_param(&mut store, &format!("lstm{l}.wx"), &[d_in, 4 * nh], &mut s)?;
        trunc_param(&mut store, &format!("lstm{l}.wh"), &[nh, 4 * nh], &mut s)?;
        let mut b = Tensor::zeros(&[4 * nh]);
        for v in b.data_mut()[nh..2 * nh].iter_mut() {
            *v = E::ONE;
        }
        store.insert(&format!("lstm{l}.b"), b)?;
    }
    trunc_param(&mut store, "head.w", &[nh, cfg.output_dim], &mut s)?;
    super::zero_param(&mut store, "head.b", &[cfg.output_dim])?;
    Ok(store)
}

pub fn forward<E: Scalar>(
    cfg: &ModelConfig,
    g: &mut Graph<E>,
    ids: &BTreeMap<String, NodeId>,
    tokens: NodeId,
) -> Result<NodeId> {
    let sh = g.value(tokens).shape().to_vec();
    let (b, t, d) = (sh[0], sh[1], sh[2]);
    let nh = cfg.hidden_size;

    let zero = g.constant(Tensor::<E>::zeros(&[b, nh]));
    let mut h = vec![zero; cfg.layers];
    let mut c = vec![zero; cfg.layers];
    let mut step_logits = Vec::with_capacity(t);

    for ti in 0..t {
        let x_t = g.slice(tokens, 1, ti, 1)?;
        let mut layer_in = g.reshape(x_t, &[b, d])?;
        for l in 0..cfg.layers {
            let zx = g.matmul(layer_in, ids[&format!("lstm{l}.wx")])?;
            let zh = g.matmul(h[l], ids[&format!("lstm{l}.wh")])?;
            let z = g.add(zx, zh)?;
            let z = g.add(z, ids[&format!("lstm{l}.b")])?;
            let gi = g.slice(z, 1, 0, nh)?;
            let gf = g.slice(z, 1, nh, nh)?;
            let gg = g.slice(z, 1, 2 * nh, nh)?;
            let go = g.slice(z, 1, 3 * nh, nh)?;
            let (gi, gf, go) = (g.sigmoid(gi)?, g.sigmoid(gf)?, g.sigmoid(go)?);
            let gg = g.tanh(gg)?;
            let keep = g.mul(gf, c[l])?;
            let write = g.mul(gi, gg)?;
            c[l] = g.add(keep, write)?;
            let ct = g.tanh(c[l])?;
            h[l] = g.mul(go, ct)?;
            layer_in = h[l];
        }
        let logits_t = linear(g, ids, layer_in, "head.w", "head.b")?;
        step_logits.push(g.reshape(logits_t, &[b, 1, cfg.output_dim])?);
    }
    g.concat(&step_logits, 1)
}
