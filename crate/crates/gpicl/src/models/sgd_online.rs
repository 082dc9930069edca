//! Within-sequence baseline: a linear softmax classifier trained online
//! by plain SGD or Adam, one gradient step per revealed label. At every
//! position the learner predicts first, then updates, so its accuracy
//! curve is directly comparable to an in-context learner fed the same
//! sequence. Runs in f64 outside the graph; nothing here is meta-trained.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum OnlineRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OnlineRule {
    pub fn adam_default() -> Self {
        OnlineRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    /// argmax prediction made before seeing each label, ties to the lowest class
    pub predictions: Vec<usize>,
    /// cross-entropy of the pre-update prediction at each position
    pub losses: Vec<f64>,
}

impl OnlineOutcome {
    pub fn correct(&self, labels: &[usize]) -> Vec<bool> {
        self.predictions.iter().zip(labels).map(|(&p, &y)| p == y).collect()
    }
}

/// Starting point for the linear learner, laid out class-major to match
/// the update loops: `w[c * d + j]` scores input coordinate j for class c.
#[derive(Debug, Clone)]
pub struct LinearInit {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearInit {
    pub fn zeros(num_classes: usize, d: usize) -> Self {
        LinearInit { w: vec![0.0; num_classes * d], b: vec![0.0; num_classes] }
    }
}

pub fn run_online_learner<E: Scalar>(
    inputs: &Tensor<E>,
    labels: &[usize],
    num_classes: usize,
    lr: f64,
    rule: &OnlineRule,
) -> Result<OnlineOutcome> {
    let d = if inputs.shape().len() == 2 { inputs.shape()[1] } else { 0 };
    let init = LinearInit::zeros(num_classes, d);
    run_online_learner_from(inputs, labels, num_classes, lr, rule, &init)
}

pub fn run_online_learner_from<E: Scalar>(
    inputs: &Tensor<E>,
    labels: &[usize],
    num_classes: usize,
    lr: f64,
    rule: &OnlineRule,
    init: &LinearInit,
) -> Result<OnlineOutcome> {
    if inputs.shape().len() != 2 || inputs.shape()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "online learner wants [n, d] inputs matching {} labels, got {:?}",
            labels.len(),
            inputs.shape()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyBatch("online learner got an empty sequence".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Config(format!("label {bad} out of range for {num_classes} classes")));
    }
    let d = inputs.shape()[1];
    if init.w.len() != num_classes * d || init.b.len() != num_classes {
        return Err(Error::Shape(format!(
            "init sized for {} weights and {} biases, wanted {} and {num_classes}",
            init.w.len(),
            init.b.len(),
            num_classes * d
        )));
    }
    let mut w = init.w.clone();
    let mut b = init.b.clone();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    if matches!(rule, OnlineRule::Adam { .. }) {
        m = vec![0f64; num_classes * (d + 1)];
        v = vec![0f64; num_classes * (d + 1)];
    }

    let mut predictions = Vec::with_capacity(labels.len());
    let mut losses = Vec::with_capacity(labels.len());
    for (t, &y) in labels.iter().enumerate() {
        let x: Vec<f64> = inputs.data()[t * d..(t + 1) * d].iter().map(|v| v.to_f64()).collect();
        let mut logits = vec![0f64; num_classes];
        for (c, lv) in logits.iter_mut().enumerate() {
            *lv = b[c] + x.iter().enumerate().map(|(j, &xv)| w[c * d + j] * xv).sum::<f64>();
        }
        let pred = logits
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (c, &lv)| {
                if lv > best.1 { (c, lv) } else { best }
            })
            .0;
        predictions.push(pred);
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&lv| (lv - mx).exp()).sum();
        losses.push(z.ln() + mx - logits[y]);

        // gradient of the cross entropy in the logits: softmax - onehot
        let mut grad = vec![0f64; num_classes];
        for (c, gv) in grad.iter_mut().enumerate() {
            *gv = (logits[c] - mx).exp() / z;
        }
        grad[y] -= 1.0;
        match rule {
            OnlineRule::Sgd => {
                for c in 0..num_classes {
                    for (j, &xv) in x.iter().enumerate() {
                        w[c * d + j] -= lr * grad[c] * xv;
                    }
                    b[c] -= lr * grad[c];
                }
            }
            OnlineRule::Adam { beta1, beta2, eps } => {
                let step = (t + 1) as i32;
                let (c1, c2) = (1.0 - beta1.powi(step), 1.0 - beta2.powi(step));
                let mut upd = |slot: usize, g: f64| -> f64 {
                    m[slot] = beta1 * m[slot] + (1.0 - beta1) * g;
                    v[slot] = beta2 * v[slot] + (1.0 - beta2) * g * g;
                    lr * (m[slot] / c1) / ((v[slot] / c2).sqrt() + eps)
                };
                for c in 0..num_classes {
                    for (j, &xv) in x.iter().enumerate() {
                        let delta = upd(c * d + j, grad[c] * xv);
                        w[c * d + j] -= delta;
                    }
                    let delta = upd(num_classes * d + c, grad[c]);
                    b[c] -= delta;
                }
            }
        }
    }
    Ok(OnlineOutcome { predictions, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn toy_stream(n: usize, classes: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
        let mut s = Stream::new(seed, "toy", 0);
        let d = classes;
        let mut data = vec![0f64; n * d];
        let mut labels = Vec::with_capacity(n);
        for t in 0..n {
            let y = s.next_below(classes as u64) as usize;
            labels.push(y);
            for j in 0..d {
                data[t * d + j] = if j == y { 2.0 } else { 0.0 } + 0.1 * s.next_gaussian();
            }
        }
        (Tensor::new(vec![n, d], data).unwrap(), labels)
    }

    #[test]
    fn zero_learning_rate_never_moves_off_uniform() {
        let (x, y) = toy_stream(40, 10, 3);
        let out = run_online_learner(&x, &y, 10, 0.0, &OnlineRule::Sgd).unwrap();
        assert!(out.predictions.iter().all(|&p| p == 0));
        assert!(out.losses.iter().all(|&l| (l - 10f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn two_step_updates_match_hand_arithmetic() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = vec![0, 0];
        let out = run_online_learner(&x, &y, 2, 1.0, &OnlineRule::Sgd).unwrap();
        assert!((out.losses[0] - 2f64.ln()).abs() < 1e-12);
        // after one step logits at x=[1,0] are [1, -1]
        let expected = (1.0 + (-2f64).exp()).ln();
        assert!((out.losses[1] - expected).abs() < 1e-12);
        assert_eq!(out.predictions, vec![0, 0]);
    }

    #[test]
    fn separable_stream_is_learned_in_the_second_half() {
        for (lr, rule) in [(0.5, OnlineRule::Sgd), (0.05, OnlineRule::adam_default())] {
            let mut hits = 0usize;
            let mut total = 0usize;
            for seed in 0..5 {
                let (x, y) = toy_stream(60, 3, seed);
                let out = run_online_learner(&x, &y, 3, lr, &rule).unwrap();
                for (ok, _) in out.correct(&y).iter().zip(&y).skip(30) {
                    hits += *ok as usize;
                    total += 1;
                }
            }
            let acc = hits as f64 / total as f64;
            assert!(acc > 0.9, "second-half accuracy {acc} under {rule:?}");
        }
    }

    #[test]
    fn first_prediction_is_the_uniform_argmax() {
        let (x, y) = toy_stream(5, 7, 11);
        let out = run_online_learner(&x, &y, 7, 0.3, &OnlineRule::Sgd).unwrap();
        assert_eq!(out.predictions[0], 0);
        assert!((out.losses[0] - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_and_label_validation() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(
            run_online_learner(&x, &[0, 1], 2, 0.1, &OnlineRule::Sgd),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            run_online_learner(&x, &[0, 1, 5], 2, 0.1, &OnlineRule::Sgd),
            Err(Error::Config(_))
        ));
    }
}
