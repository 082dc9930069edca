//! Sequence models that consume tokenized batches and emit per-position
//! class logits, plus the gradient-based baselines. All families share the
//! graph engine, a parameter naming scheme (documented in the README), and
//! truncated-normal(0.02) weight init with zero biases.

pub mod lstm;
pub mod maml;
pub mod mlp;
pub mod outer_lstm;
pub mod sgd_online;
pub mod transformer;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::Stream;
use crate::store::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Transformer,
    Lstm,
    OuterLstm,
    Mlp,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Family::Transformer),
            "lstm" => Ok(Family::Lstm),
            "outer_lstm" => Ok(Family::OuterLstm),
            "mlp" => Ok(Family::Mlp),
            other => Err(Error::Config(format!(
                "unknown model family {other:?} (transformer, lstm, outer_lstm, mlp)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Transformer => "transformer",
            Family::Lstm => "lstm",
            Family::OuterLstm => "outer_lstm",
            Family::Mlp => "mlp",
        }
    }
}

/// Architecture hyperparameters for every family. Unused fields are
/// ignored by families that do not need them.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub family: Family,
    /// N_M: token embedding width (transformer).
    pub model_size: usize,
    /// N_L: transformer blocks, or stacked LSTM layers.
    pub layers: usize,
    /// H: attention heads.
    pub heads: usize,
    /// N_K: per-head key/value/query width.
    pub key_size: usize,
    /// N_H: LSTM hidden units.
    pub hidden_size: usize,
    pub outer_heads: usize,
    pub outer_size: usize,
    /// Width of the two hidden layers in the MLP baseline; 0 = affine.
    pub mlp_hidden: usize,
    /// N_x + N_y.
    pub input_dim: usize,
    /// N_y.
    pub output_dim: usize,
    /// N_T: positional table length and longest supported sequence.
    pub max_seq: usize,
}

impl ModelConfig {
    /// Full-scale transformer defaults: key/value/query size 32, 8 heads,
    /// 4 layers, model size 256.
    pub fn full_scale(input_dim: usize, output_dim: usize, max_seq: usize) -> Self {
        ModelConfig {
            family: Family::Transformer,
            model_size: 256,
            layers: 4,
            heads: 8,
            key_size: 32,
            hidden_size: 256,
            outer_heads: 4,
            outer_size: 16,
            mlp_hidden: 256,
            input_dim,
            output_dim,
            max_seq,
        }
    }

    /// Desk-scale transformer that trains in minutes on one core.
    pub fn desk(input_dim: usize, output_dim: usize, max_seq: usize) -> Self {
        ModelConfig {
            family: Family::Transformer,
            model_size: 64,
            layers: 2,
            heads: 4,
            key_size: 16,
            hidden_size: 64,
            outer_heads: 2,
            outer_size: 8,
            mlp_hidden: 64,
            input_dim,
            output_dim,
            max_seq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim < 2 || self.max_seq == 0 {
            return Err(Error::Config(format!(
                "degenerate model dims: input {}, output {}, max_seq {}",
                self.input_dim, self.output_dim, self.max_seq
            )));
        }
        match self.family {
            Family::Transformer => {
                if self.model_size == 0 || self.layers == 0 || self.heads == 0 || self.key_size == 0 {
                    return Err(Error::Config("transformer needs model_size, layers, heads, key_size > 0".into()));
                }
            }
            Family::Lstm => {
                if self.hidden_size == 0 || self.layers == 0 {
                    return Err(Error::Config("lstm needs hidden_size, layers > 0".into()));
                }
            }
            Family::OuterLstm => {
                if self.outer_heads == 0 || self.outer_size == 0 {
                    return Err(Error::Config("outer_lstm needs outer_heads, outer_size > 0".into()));
                }
            }
            Family::Mlp => {}
        }
        Ok(())
    }
}

/// Per-sequence memory versus parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateReport {
    /// N_S: scalars of cross-example memory a sequence flows through.
    pub state_size: usize,
    pub param_count: usize,
}

/// N_S by family: cached keys and values for the transformer, hidden plus
/// cell for LSTMs, the outer-product cell plus its hidden vector for the
/// outer LSTM, and nothing for the stateless MLP.
pub fn state_report(cfg: &ModelConfig) -> Result<StateReport> {
    cfg.validate()?;
    let state_size = match cfg.family {
        Family::Transformer => 2 * cfg.heads * cfg.key_size * cfg.layers * cfg.max_seq,
        Family::Lstm => 2 * cfg.hidden_size * cfg.layers,
        Family::OuterLstm => {
            cfg.outer_heads * cfg.outer_size * cfg.outer_size + cfg.outer_heads * cfg.outer_size
        }
        Family::Mlp => 0,
    };
    let param_count = init_params::<f32>(cfg, 0)?.param_count();
    Ok(StateReport { state_size, param_count })
}

pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    cfg.validate()?;
    match cfg.family {
        Family::Transformer => transformer::init_params(cfg, seed),
        Family::Lstm => lstm::init_params(cfg, seed),
        Family::OuterLstm => outer_lstm::init_params(cfg, seed),
        Family::Mlp => mlp::init_params(cfg, seed),
    }
}

/// Logits [b, t, n_y] for a token tensor already on the graph.
pub fn forward<E: Scalar>(
    cfg: &ModelConfig,
    g: &mut Graph<E>,
    ids: &BTreeMap<String, NodeId>,
    tokens: NodeId,
) -> Result<NodeId> {
    let sh = g.value(tokens).shape().to_vec();
    if sh.len() != 3 || sh[2] != cfg.input_dim {
        return Err(Error::Shape(format!(
            "tokens must be [b, t, {}], got {sh:?}",
            cfg.input_dim
        )));
    }
    if sh[1] > cfg.max_seq {
        return Err(Error::Config(format!(
            "sequence length {} exceeds the model's positional table ({})",
            sh[1], cfg.max_seq
        )));
    }
    match cfg.family {
        Family::Transformer => transformer::forward(cfg, g, ids, tokens),
        Family::Lstm => lstm::forward(cfg, g, ids, tokens),
        Family::OuterLstm => outer_lstm::forward(cfg, g, ids, tokens),
        Family::Mlp => mlp::forward(cfg, g, ids, tokens),
    }
}

// ---- shared building blocks ----------------------------------------------

pub(crate) fn trunc_param<E: Scalar>(
    store: &mut ParamStore<E>,
    name: &str,
    shape: &[usize],
    stream: &mut Stream,
) -> Result<()> {
    store.insert(name, Tensor::trunc_normal(shape, stream, INIT_STD))
}

pub(crate) fn zero_param<E: Scalar>(
    store: &mut ParamStore<E>,
    name: &str,
    shape: &[usize],
) -> Result<()> {
    store.insert(name, Tensor::zeros(shape))
}

/// x @ w + b where x is [.., d_in] and w is [d_in, d_out].
pub(crate) fn linear<E: Scalar>(
    g: &mut Graph<E>,
    ids: &BTreeMap<String, NodeId>,
    x: NodeId,
    w: &str,
    b: &str,
) -> Result<NodeId> {
    let wid = *ids
        .get(w)
        .ok_or_else(|| Error::Config(format!("missing parameter {w:?}")))?;
    let bid = *ids
        .get(b)
        .ok_or_else(|| Error::Config(format!("missing parameter {b:?}")))?;
    let h = g.matmul(x, wid)?;
    g.add(h, bid)
}

/// Layer norm with learned gain and shift applied over the last axis.
pub(crate) fn affine_layer_norm<E: Scalar>(
    g: &mut Graph<E>,
    ids: &BTreeMap<String, NodeId>,
    x: NodeId,
    gain: &str,
    shift: &str,
) -> Result<NodeId> {
    let gid = *ids
        .get(gain)
        .ok_or_else(|| Error::Config(format!("missing parameter {gain:?}")))?;
    let sid = *ids
        .get(shift)
        .ok_or_else(|| Error::Config(format!("missing parameter {shift:?}")))?;
    let n = g.layer_norm(x)?;
    let scaled = g.mul(n, gid)?;
    g.add(scaled, sid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transformer_state_size_formula() {
        let mut cfg = ModelConfig::full_scale(794, 10, 100);
        cfg.max_seq = 100;
        let report = state_report(&cfg).unwrap();
        assert_eq!(report.state_size, 2 * 8 * 32 * 4 * 100);
        assert_eq!(report.state_size, 204_800);
    }

    #[test]
    fn lstm_state_size_is_hidden_plus_cell() {
        let mut cfg = ModelConfig::full_scale(74, 10, 25);
        cfg.family = Family::Lstm;
        cfg.hidden_size = 256;
        cfg.layers = 1;
        assert_eq!(state_report(&cfg).unwrap().state_size, 512);
    }

    #[test]
    fn outer_lstm_state_counts_cell_matrix_plus_hidden() {
        let mut cfg = ModelConfig::desk(74, 10, 25);
        cfg.family = Family::OuterLstm;
        cfg.outer_heads = 2;
        cfg.outer_size = 8;
        assert_eq!(state_report(&cfg).unwrap().state_size, 2 * 64 + 16);
    }

    #[test]
    fn mlp_is_stateless() {
        let mut cfg = ModelConfig::desk(74, 10, 1);
        cfg.family = Family::Mlp;
        assert_eq!(state_report(&cfg).unwrap().state_size, 0);
    }

    #[test]
    fn param_count_matches_store_exactly() {
        for family in [Family::Transformer, Family::Lstm, Family::OuterLstm, Family::Mlp] {
            let mut cfg = ModelConfig::desk(74, 10, 8);
            cfg.family = family;
            let report = state_report(&cfg).unwrap();
            let store = init_params::<f32>(&cfg, 3).unwrap();
            assert_eq!(report.param_count, store.param_count(), "{family:?}");
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::desk(74, 10, 8);
        let a = init_params::<f32>(&cfg, 5).unwrap();
        let b = init_params::<f32>(&cfg, 5).unwrap();
        for (name, t) in a.iter() {
            assert_eq!(t.data(), b.get(name).unwrap().data(), "{name}");
        }
        let c = init_params::<f32>(&cfg, 6).unwrap();
        assert_ne!(
            a.get("embed.w").unwrap().data(),
            c.get("embed.w").unwrap().data()
        );
    }

    #[test]
    fn family_parse_round_trip() {
        for f in [Family::Transformer, Family::Lstm, Family::OuterLstm, Family::Mlp] {
            assert_eq!(Family::parse(f.as_str()).unwrap(), f);
        }
        assert!(Family::parse("vsml").is_err());
    }
}
