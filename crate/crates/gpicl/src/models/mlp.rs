//! Memoryless per-example classifier: one hidden relu layer (or a bare
//! affine map when `mlp_hidden` is zero) applied to a single token.
//! Sequences longer than one position are rejected since the family has
//! no state to carry across them.

use std::collections::BTreeMap;

use super::{linear, trunc_param, zero_param, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tensor::Scalar;

pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    let mut store = ParamStore::new();
    let mut s = Stream::new(seed, "init/mlp", 0);
    let head_in = if cfg.mlp_hidden > 0 {
        trunc_param(&mut store, "mlp.w1", &[cfg.input_dim, cfg.mlp_hidden], &mut s)?;
        zero_param(&mut store, "mlp.b1", &[cfg.mlp_hidden])?;
        cfg.mlp_hidden
    } else {
        cfg.input_dim
    };
    trunc_param(&mut store, "head.w", &[head_in, cfg.output_dim], &mut s)?;
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
    if t != 1 {
        return Err(Error::Config(format!(
            "mlp family scores one position at a time, got sequence length {t}"
        )));
    }
    let mut x = g.reshape(tokens, &[b, d])?;
    if cfg.mlp_hidden > 0 {
        x = linear(g, ids, x, "mlp.w1", "mlp.b1")?;
        x = g.relu(x)?;
    }
    let out = linear(g, ids, x, "head.w", "head.b")?;
    g.reshape(out, &[b, 1, cfg.output_dim])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{forward as model_forward, Family};
    use crate::tensor::Tensor;

    fn cfg(hidden: usize) -> ModelConfig {
        let mut c = ModelConfig::desk(6, 10, 1);
        c.family = Family::Mlp;
        c.mlp_hidden = hidden;
        c
    }

    #[test]
    fn hidden_layer_forward_matches_hand_relu() {
        let c = cfg(3);
        let mut store = ParamStore::<f64>::new();
        let w1 = vec![
            1.0, -1.0, 0.5, //
            0.0, 2.0, -0.5, //
            1.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, //
            -1.0, 0.0, 2.0, //
            0.5, 0.5, 0.5,
        ];
        store.insert("mlp.w1", Tensor::new(vec![6, 3], w1).unwrap()).unwrap();
        store.insert("mlp.b1", Tensor::new(vec![3], vec![0.1, -2.0, 0.0]).unwrap()).unwrap();
        let mut hw = vec![0.0; 30];
        hw[0] = 1.0; // head picks hidden unit 0 into class 0
        hw[10 * 1 + 1] = 2.0; // unit 1 into class 1
        store.insert("head.w", Tensor::new(vec![3, 10], hw).unwrap()).unwrap();
        store.insert("head.b", Tensor::<f64>::zeros(&[10])).unwrap();

        let x = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        // pre-relu hidden: [1.1, 1.0 - 2.0, 0.0] -> relu [1.1, 0, 0]
        let mut g = Graph::new();
        let ids = g.load_store(&store).unwrap();
        let tok = g.constant(Tensor::new(vec![1, 1, 6], x.to_vec()).unwrap());
        let out = model_forward(&c, &mut g, &ids, tok).unwrap();
        let got = g.value(out).data();
        assert!((got[0] - 1.1).abs() < 1e-12);
        assert!(got[1].abs() < 1e-12);
    }

    #[test]
    fn zero_hidden_is_affine_only() {
        let c = cfg(0);
        let store = init_params::<f32>(&c, 1).unwrap();
        assert!(store.get("mlp.w1").is_err());
        assert_eq!(store.get("head.w").unwrap().shape(), &[6, 10]);
    }

    #[test]
    fn multi_position_sequence_rejected() {
        let c = cfg(4);
        let store = init_params::<f32>(&c, 0).unwrap();
        let mut g = Graph::new();
        let ids = g.load_store(&store).unwrap();
        let tok = g.constant(Tensor::zeros(&[2, 3, 6]));
        assert!(matches!(
            forward(&c, &mut g, &ids, tok),
            Err(Error::Config(_))
        ));
    }
}
