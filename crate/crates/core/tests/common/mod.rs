//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use napts::globalization::DecisionLog;
use napts::harness::{generate_dataset, Dataset, DatasetKind};
use napts::model::{Activation, Architecture, Batch, BlockSplit, LayerSpec, LossKind, Targets};
use napts::tensor_ad::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random MLP with at most `max_params` parameters, hidden activations
/// drawn from ReLU/tanh per layer, a random block split, and a random batch.
pub struct RandomNet {
    pub arch: Arc<Architecture>,
    pub theta: Vec<f64>,
    pub batch: Batch,
}

pub fn random_net(rng: &mut ChaCha8Rng, loss: LossKind, max_params: usize) -> RandomNet {
    loop {
        let depth = rng.random_range(1..=4);
        let mut dims = vec![rng.random_range(1..=5)];
        for _ in 0..depth {
            dims.push(rng.random_range(1..=8));
        }
        let layers: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Identity
                } else if rng.random_bool(0.5) {
                    Activation::Relu
                } else {
                    Activation::Tanh
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        let count: usize = layers.iter().map(LayerSpec::param_count).sum();
        if count > max_params {
            continue;
        }
        let n_layers = layers.len();
        let mut cuts: Vec<usize> = (1..n_layers).filter(|_| rng.random_bool(0.5)).collect();
        cuts.dedup();
        let arch = Architecture::new(layers, loss, BlockSplit::Cuts(cuts)).expect("valid random architecture");
        let theta: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = rng.random_range(1..=6);
        let inputs = Tensor::matrix(
            m,
            arch.input_dim(),
            (0..m * arch.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let out = arch.output_dim();
        let targets = match loss {
            LossKind::SoftmaxCrossEntropy => Targets::Classes((0..m).map(|_| rng.random_range(0..out)).collect()),
            LossKind::MeanSquaredError => Targets::Values(
                Tensor::matrix(m, out, (0..m * out).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            ),
        };
        return RandomNet {
            arch: Arc::new(arch),
            theta,
            batch: Batch::new(0, inputs, targets),
        };
    }
}

/// Central differences of the batch loss.
pub fn finite_difference(arch: &Architecture, theta: &[f64], batch: &Batch, h: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let fp = arch.loss(&x, batch).unwrap();
            x[i] = orig - h;
            let fm = arch.loss(&x, batch).unwrap();
            x[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a floor on the scale so that coordinates whose true
/// value is near zero are judged against the difference quotient's rounding
/// level instead of against zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// What the window machinery should have produced for one decision,
/// reconstructed from the `(f, pred, success)` stream alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub members: Vec<usize>,
    pub reference: usize,
    pub f_ref: f64,
    pub sigma_h: f64,
    pub rho_c: f64,
    pub rho_h: f64,
}

/// Full rescan of the history for every decision, no incremental state.
pub fn replay(log: &[DecisionLog], nu: usize) -> Vec<Replayed> {
    (0..log.len())
        .map(|k| {
            let lo = k.saturating_sub(nu);
            let mut members: Vec<usize> = (lo..k).filter(|&i| log[i].success && log[i].pred > 1e-14).collect();
            members.push(k);
            let f_of = |i: usize| log[i].f;
            // Ties go to the most recent index.
            let max_f = members.iter().map(|&i| f_of(i)).fold(f64::NEG_INFINITY, f64::max);
            let reference = *members.iter().rev().find(|&&i| f_of(i) == max_f).unwrap();
            let sigma_h: f64 = members
                .iter()
                .filter(|&&i| i != k && i >= reference)
                .map(|&i| log[i].pred)
                .sum();
            let d = &log[k];
            let f_ref = f_of(reference);
            let (rho_c, rho_h) = if d.pred > 1e-14 && d.f_trial.is_finite() {
                ((d.f - d.f_trial) / d.pred, (f_ref - d.f_trial) / (sigma_h + d.pred))
            } else {
                (f64::NAN, f64::NAN)
            };
            Replayed {
                members,
                reference,
                f_ref,
                sigma_h,
                rho_c,
                rho_h,
            }
        })
        .collect()
}

pub fn same_float(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Compares a live decision log against the replay; returns a description of
/// the first mismatch.
pub fn check_against_replay(log: &[DecisionLog], nu: usize) -> Result<(), String> {
    for (k, (d, r)) in log.iter().zip(replay(log, nu)).enumerate() {
        if d.index != k {
            return Err(format!("decision {k} carries index {}", d.index));
        }
        if d.members != r.members || d.reference != r.reference {
            return Err(format!(
                "decision {k}: window {:?} r={} vs replay {:?} r={}",
                d.members, d.reference, r.members, r.reference
            ));
        }
        if !same_float(d.f_ref, r.f_ref) {
            return Err(format!("decision {k}: f_ref {} vs {}", d.f_ref, r.f_ref));
        }
        if (d.sigma_h - r.sigma_h).abs() > 1e-12 {
            return Err(format!("decision {k}: sigma_h {} vs {}", d.sigma_h, r.sigma_h));
        }
        if !same_float(d.rho_c, r.rho_c) || !same_float(d.rho_h, r.rho_h) {
            return Err(format!(
                "decision {k}: rho ({}, {}) vs replay ({}, {})",
                d.rho_c, d.rho_h, r.rho_c, r.rho_h
            ));
        }
    }
    Ok(())
}

pub fn moons(size: usize, seed: u64) -> Dataset {
    generate_dataset(&DatasetKind::Moons, size, seed).unwrap()
}

/// Two-hidden-layer tanh MLP split into `n` balanced blocks.
pub fn moons_mlp(data: &Dataset, hidden: usize, n: usize) -> Arc<Architecture> {
    Arc::new(
        Architecture::mlp(
            &[data.features, hidden, hidden, data.classes],
            Activation::Tanh,
            LossKind::SoftmaxCrossEntropy,
            BlockSplit::Balanced(n),
        )
        .unwrap(),
    )
}
