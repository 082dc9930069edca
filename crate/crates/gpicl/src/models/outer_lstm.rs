//! Recurrent cell whose state is a stack of outer-product matrices, one
//! batch of [size, size] slabs per head, giving a quadratic state budget
//! at a linear parameter cost. One fused linear map produces two key
//! groups, a query, and an output gate per head; keys are passed through
//! tanh (the first group rescaled by softplus of a learned scalar) and
//! combined into three outer products that drive input, write, and forget
//! paths. The forget pre-activation is shifted by +1 before the sigmoid.

use std::collections::BTreeMap;

use super::{linear, trunc_param, zero_param, ModelConfig};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    let mut store = ParamStore::new();
    let mut s = Stream::new(seed, "init/outer_lstm", 0);
    let (h, sz) = (cfg.outer_heads, cfg.outer_size);
    let d_in = cfg.input_dim + h * sz;
    trunc_param(&mut store, "outer.w", &[d_in, 8 * sz * h], &mut s)?;
    zero_param(&mut store, "outer.b", &[8 * sz * h])?;
    zero_param(&mut store, "outer.key_scale", &[1])?;
    trunc_param(&mut store, "head.w", &[h * sz, cfg.output_dim], &mut s)?;
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
    let (b, t, d) = (sh[0], sh[1], sh[2]);
    let (nh, sz) = (cfg.outer_heads, cfg.outer_size);

    let scale = g.softplus(ids["outer.key_scale"])?;
    let mut hidden = g.constant(Tensor::<E>::zeros(&[b, nh * sz]));
    let mut cell = g.constant(Tensor::<E>::zeros(&[b, nh, sz, sz]));
    let mut step_logits = Vec::with_capacity(t);

    for ti in 0..t {
        let x_t = g.slice(tokens, 1, ti, 1)?;
        let x_t = g.reshape(x_t, &[b, d])?;
        let xa = g.concat(&[x_t, hidden], 1)?;
        let gated = linear(g, ids, xa, "outer.w", "outer.b")?;
        let gated = g.reshape(gated, &[b, nh, 8 * sz])?;

        let k1 = g.slice(gated, 2, 0, 3 * sz)?;
        let k2 = g.slice(gated, 2, 3 * sz, 3 * sz)?;
        let q = g.slice(gated, 2, 6 * sz, sz)?;
        let o = g.slice(gated, 2, 7 * sz, sz)?;

        let k1 = g.reshape(k1, &[b, nh, 3, sz])?;
        let k1 = g.tanh(k1)?;
        let k1 = g.mul(k1, scale)?;
        let k2 = g.reshape(k2, &[b, nh, 3, sz])?;
        let k2 = g.tanh(k2)?;

        // outer products: rows of k1 against rows of k2, one per gate
        let mut outer = Vec::with_capacity(3);
        for p in 0..3 {
            let a = g.slice(k1, 2, p, 1)?;
            let a = g.transpose(a, &[0, 1, 3, 2])?;
            let bb = g.slice(k2, 2, p, 1)?;
            outer.push(g.matmul(a, bb)?);
        }
        let (i_pre, write, f_pre) = (outer[0], outer[1], outer[2]);
        let f_gate = g.shift(f_pre, E::ONE)?;
        let f_gate = g.sigmoid(f_gate)?;
        let i_gate = g.sigmoid(i_pre)?;
        let keep = g.mul(f_gate, cell)?;
        let add_in = g.mul(i_gate, write)?;
        cell = g.add(keep, add_in)?;

        let q_row = g.reshape(q, &[b, nh, 1, sz])?;
        let read = g.matmul(q_row, cell)?;
        let read = g.reshape(read, &[b, nh, sz])?;
        let read = g.tanh(read)?;
        let o_gate = g.sigmoid(o)?;
        let gated_read = g.mul(o_gate, read)?;
        hidden = g.reshape(gated_read, &[b, nh * sz])?;

        let logits_t = linear(g, ids, hidden, "head.w", "head.b")?;
        step_logits.push(g.reshape(logits_t, &[b, 1, cfg.output_dim])?);
    }
    g.concat(&step_logits, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{forward as model_forward, Family};

    fn cfg(heads: usize, size: usize, d_in: usize, t: usize) -> ModelConfig {
        let mut cfg = ModelConfig::desk(d_in, 10, t);
        cfg.family = Family::OuterLstm;
        cfg.outer_heads = heads;
        cfg.outer_size = size;
        cfg
    }

    /// One head of size two, two steps, explicit weights, straight scalar
    /// transcription of the cell equations.
    #[test]
    fn cell_matches_scalar_transcription() {
        let c = cfg(1, 2, 2, 2);
        let sz = 2usize;
        let d_cat = 2 + 2; // input dim + heads*size
        let cols = 8 * sz; // 16
        let mut w = vec![0f64; d_cat * cols];
        let mut s = Stream::new(77, "w", 0);
        for v in w.iter_mut() {
            *v = s.next_f64() - 0.5;
        }
        let bias: Vec<f64> = (0..cols).map(|j| 0.05 * j as f64 - 0.3).collect();
        let key_scale = 0.4f64;
        let mut head_w = vec![0f64; 2 * 10];
        for v in head_w.iter_mut() {
            *v = s.next_f64() - 0.5;
        }

        let mut store = ParamStore::<f64>::new();
        store.insert("outer.w", Tensor::new(vec![d_cat, cols], w.clone()).unwrap()).unwrap();
        store.insert("outer.b", Tensor::new(vec![cols], bias.clone()).unwrap()).unwrap();
        store.insert("outer.key_scale", Tensor::new(vec![1], vec![key_scale]).unwrap()).unwrap();
        store.insert("head.w", Tensor::new(vec![2, 10], head_w.clone()).unwrap()).unwrap();
        store.insert("head.b", Tensor::<f64>::zeros(&[10])).unwrap();

        let xs = [[0.9, -0.2], [-0.4, 0.7]];
        let mut g = Graph::new();
        let ids = g.load_store(&store).unwrap();
        let tok = g.constant(Tensor::new(vec![1, 2, 2], xs.concat()).unwrap());
        let logits = model_forward(&c, &mut g, &ids, tok).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let scale = (key_scale.exp() + 1.0f64).ln(); // softplus
        let mut hidden = [0f64; 2];
        let mut cell = [[0f64; 2]; 2];
        let mut expected = Vec::new();
        for x in xs {
            let xa = [x[0], x[1], hidden[0], hidden[1]];
            let mut gated = [0f64; 16];
            for (j, gv) in gated.iter_mut().enumerate() {
                *gv = bias[j] + xa.iter().enumerate().map(|(m, &v)| v * w[m * 16 + j]).sum::<f64>();
            }
            let k1: Vec<f64> = gated[..6].iter().map(|&v| v.tanh() * scale).collect();
            let k2: Vec<f64> = gated[6..12].iter().map(|&v| v.tanh()).collect();
            let q = [gated[12], gated[13]];
            let o = [gated[14], gated[15]];
            for i in 0..2 {
                for j in 0..2 {
                    let ip = k1[i] * k2[j];
                    let wr = k1[2 + i] * k2[2 + j];
                    let fp = k1[4 + i] * k2[4 + j];
                    cell[i][j] = sig(fp + 1.0) * cell[i][j] + sig(ip) * wr;
                }
            }
            let read = [
                q[0] * cell[0][0] + q[1] * cell[1][0],
                q[0] * cell[0][1] + q[1] * cell[1][1],
            ];
            hidden = [sig(o[0]) * read[0].tanh(), sig(o[1]) * read[1].tanh()];
            for y in 0..10 {
                expected.push(hidden[0] * head_w[y] + hidden[1] * head_w[10 + y]);
            }
        }
        let got = g.value(logits).data();
        for (a, e) in got.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "got {a}, expected {e}");
        }
    }

    #[test]
    fn forward_shape_and_determinism() {
        let c = cfg(2, 8, 6, 5);
        let store = init_params::<f32>(&c, 4).unwrap();
        let mut s = Stream::new(3, "tok", 0);
        let tokens = Tensor::gaussian(&[3, 5, 6], &mut s, 0.0, 1.0);
        let run = || {
            let mut g = Graph::new();
            let ids = g.load_store(&store).unwrap();
            let tok = g.constant(tokens.clone());
            let out = model_forward(&c, &mut g, &ids, tok).unwrap();
            g.value(out).clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.shape(), &[3, 5, 10]);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn future_tokens_cannot_affect_past_logits() {
        let c = cfg(2, 6, 5, 6);
        let store = init_params::<f32>(&c, 9).unwrap();
        let mut s = Stream::new(2, "tok", 0);
        let base = Tensor::gaussian(&[1, 6, 5], &mut s, 0.0, 1.0);
        let mut bumped = base.clone();
        for v in bumped.data_mut()[3 * 5..].iter_mut() {
            *v -= 1.5;
        }
        let run = |t: Tensor<f32>| {
            let mut g = Graph::new();
            let ids = g.load_store(&store).unwrap();
            let tok = g.constant(t);
            let out = model_forward(&c, &mut g, &ids, tok).unwrap();
            g.value(out).data().to_vec()
        };
        let (a, b) = (run(base), run(bumped));
        assert_eq!(&a[..3 * 10], &b[..3 * 10]);
        assert_ne!(&a[3 * 10..], &b[3 * 10..]);
    }

    #[test]
    fn key_scale_at_zero_gives_softplus_ln2() {
        let c = cfg(1, 4, 3, 2);
        let store = init_params::<f64>(&c, 0).unwrap();
        assert_eq!(store.get("outer.key_scale").unwrap().data()[0], 0.0);
        let mut g = Graph::<f64>::new();
        let ids = g.load_store(&store).unwrap();
        let sp = g.softplus(ids["outer.key_scale"]).unwrap();
        assert!((g.value(sp).data()[0] - 2f64.ln()).abs() < 1e-15);
    }
}
