//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nm_decay::autograd::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use nm_decay::autograd::{Graph, Tensor, Var};
use nm_decay::data::Dataset;
use nm_decay::models::{build_tiny_vit, Classifier, TinyTransformerConfig};
use nm_decay::sparsity::{apply_decayed_mask, MaskState, SparsityPattern};
use nm_decay::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Loss = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// A named differentiable function with its test inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub loss: Loss,
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, rng)
}

/// Inputs bounded away from 0 so kinks never fall inside a finite-difference step.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(x ⊙ r)` for a fixed random `r`, so every output element matters.
fn project(g: &mut Graph, x: Var, r: &Tensor) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.hadamard(x, r)?;
    Ok(g.reduce_sum(p))
}

macro_rules! case {
    ($name:expr, $inputs:expr, $out_shape:expr, $rng:expr, |$g:ident, $v:ident| $body:expr) => {{
        let r = randn(&$out_shape, $rng);
        OpCase {
            name: $name,
            inputs: $inputs,
            loss: Box::new(move |$g: &mut Graph, $v: &[Var]| {
                let out = $body?;
                project($g, out, &r)
            }),
        }
    }};
}

/// One case per differentiable op of the engine, plus the decayed mask.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let a23 = randn(&[2, 3], rng);
    let b34 = randn(&[3, 4], rng);
    let mask_w = randn(&[8, 3], rng);
    let mask = MaskState::compute(&mask_w, SparsityPattern::new(1, 4).unwrap(), 0, 0.5).unwrap();
    let labels = vec![2usize, 0, 1];
    vec![
        case!("matmul", vec![a23.clone(), b34.clone()], [2, 4], rng, |g, v| g.matmul(v[0], v[1])),
        case!("matmul_batched", vec![randn(&[2, 3, 4], rng), randn(&[2, 4, 2], rng)], [2, 3, 2], rng, |g, v| g
            .matmul(v[0], v[1])),
        case!("hadamard", vec![randn(&[3, 4], rng), randn(&[3, 4], rng)], [3, 4], rng, |g, v| g.hadamard(v[0], v[1])),
        case!("add", vec![randn(&[3, 4], rng), randn(&[3, 4], rng)], [3, 4], rng, |g, v| g.add(v[0], v[1])),
        case!("sub", vec![randn(&[3, 4], rng), randn(&[3, 4], rng)], [3, 4], rng, |g, v| g.sub(v[0], v[1])),
        case!("scale", vec![randn(&[5], rng)], [5], rng, |g, v| Ok::<_, nm_decay::Error>(g.scale(v[0], -1.7))),
        case!("add_broadcast", vec![randn(&[2, 3, 4], rng), randn(&[4], rng)], [2, 3, 4], rng, |g, v| g
            .add_broadcast(v[0], v[1])),
        case!("mul_broadcast", vec![randn(&[2, 3, 4], rng), randn(&[4], rng)], [2, 3, 4], rng, |g, v| g
            .mul_broadcast(v[0], v[1])),
        case!("relu", vec![away_from_zero(&[3, 5], rng)], [3, 5], rng, |g, v| Ok::<_, nm_decay::Error>(g.relu(v[0]))),
        case!("gelu", vec![randn(&[3, 5], rng)], [3, 5], rng, |g, v| Ok::<_, nm_decay::Error>(g.gelu(v[0]))),
        case!("softmax", vec![randn(&[2, 3, 5], rng)], [2, 3, 5], rng, |g, v| g.softmax(v[0])),
        case!("layer_norm", vec![randn(&[3, 6], rng)], [3, 6], rng, |g, v| g.layer_norm(v[0], 1e-5)),
        case!("transpose", vec![randn(&[2, 3, 4], rng)], [2, 4, 3], rng, |g, v| g.transpose(v[0])),
        case!("permute", vec![randn(&[2, 3, 4], rng)], [4, 2, 3], rng, |g, v| g.permute(v[0], &[2, 0, 1])),
        case!("reshape", vec![randn(&[2, 6], rng)], [3, 4], rng, |g, v| g.reshape(v[0], &[3, 4])),
        case!("reduce_sum", vec![randn(&[3, 4], rng)], [1], rng, |g, v| {
            let s = g.reduce_sum(v[0]);
            g.reshape(s, &[1])
        }),
        case!("reduce_mean", vec![randn(&[3, 4], rng)], [1], rng, |g, v| {
            let s = g.reduce_mean(v[0]);
            g.reshape(s, &[1])
        }),
        case!("mean_axis", vec![randn(&[2, 3, 4], rng)], [2, 4], rng, |g, v| g.mean_axis(v[0], 1)),
        OpCase {
            name: "cross_entropy",
            inputs: vec![randn(&[3, 4], rng)],
            loss: Box::new(move |g: &mut Graph, v: &[Var]| g.cross_entropy(v[0], &labels)),
        },
        case!("decayed_mask", vec![mask_w], [8, 3], rng, |g, v| apply_decayed_mask(g, v[0], &mask)),
    ]
}

pub fn tiny_transformer_cfg() -> TinyTransformerConfig {
    TinyTransformerConfig {
        layers: 1,
        heads: 2,
        embed_dim: 8,
        ff_dim: 16,
        seq_len: 3,
        token_dim: 4,
        num_classes: 3,
    }
}

/// Gradcheck the full transformer loss with respect to every parameter.
pub fn transformer_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_transformer_cfg();
    let model = build_tiny_vit(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let inputs = Tensor::randn(&[2, cfg.seq_len, cfg.token_dim], &mut rng);
    let labels = vec![0usize, 2];
    // larger weights than the default init so every path carries signal
    let params: Vec<Tensor> = model.params().iter().map(|p| p.value.map(|v| v * 20.0 + 0.01)).collect();
    check_gradients(
        &params,
        |g, vars| {
            let logits = model.forward(g, vars, &inputs)?;
            g.cross_entropy(logits, &labels)
        },
        &GradCheckConfig::default(),
    )
}

pub fn run_case(case: &OpCase) -> Result<GradCheckReport> {
    check_gradients(&case.inputs, &case.loss, &GradCheckConfig::default())
}

/// Accuracy of assigning each eval sample to the class whose train mean is nearest.
pub fn nearest_mean_accuracy(train: &Dataset, eval: &Dataset, classes: usize) -> f64 {
    let dim = train.sample(0).len();
    let mut means = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for i in 0..train.len() {
        let l = train.labels()[i];
        counts[l] += 1;
        for (m, x) in means[l].iter_mut().zip(train.sample(i)) {
            *m += x;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let correct = (0..eval.len())
        .filter(|&i| {
            let x = eval.sample(i);
            let dist = |m: &Vec<f64>| m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..classes).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap();
            best == eval.labels()[i]
        })
        .count();
    correct as f64 / eval.len() as f64
}

/// Brute-force N:M mask along axis 0 of a 2-D tensor: rank each block's
/// entries by descending magnitude, lower index first among equals.
pub fn oracle_mask(w: &Tensor, n: usize, m: usize) -> Vec<f64> {
    let (rows, cols) = w.dims2().unwrap();
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        for b in 0..rows / m {
            let mut idx: Vec<usize> = (b * m..(b + 1) * m).collect();
            idx.sort_by(|&i, &j| {
                let (a, bb) = (w.data()[i * cols + c].abs(), w.data()[j * cols + c].abs());
                bb.partial_cmp(&a).unwrap().then(i.cmp(&j))
            });
            for &r in &idx[..n] {
                out[r * cols + c] = 1.0;
            }
        }
    }
    out
}
