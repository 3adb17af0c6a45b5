//! Finite-difference verification of the reverse pass.
//!
//! Every op's analytic gradient is compared against central differences
//! computed from two forward evaluations per coordinate. Losses are formed
//! by contracting the op output with fixed random coefficients so that every
//! output element influences the objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::tape::{ConvGeom, NodeId, Tape};
use crate::tensor::Tensor;
use crate::NetError;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Worst observed relative error per layer kind, plus how many coordinates
/// were compared.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub layer: &'static str,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

/// |analytic - fd| / (|fd| + 1e-8).
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (fd.abs() + 1e-8)
}

/// One differentiable scenario: some input tensors and a scalar-producing
/// graph over them.
struct Scenario {
    tensors: Vec<Tensor>,
    build: Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NetError>>,
}

fn run_scenario(s: &Scenario) -> Result<(f64, Vec<Tensor>), NetError> {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = s.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = (s.build)(&mut tape, &leaves)?;
    let loss = tape.value(root).data()[0];
    let mut grads = tape.backward(root)?;
    let out = leaves
        .iter()
        .map(|id| {
            grads
                .take(*id)
                .unwrap_or_else(|| Tensor::zeros(tape.value(*id).dims()))
        })
        .collect();
    Ok((loss, out))
}

fn eval_loss(s: &Scenario, tensors: &[Tensor]) -> Result<f64, NetError> {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let root = (s.build)(&mut tape, &leaves)?;
    Ok(tape.value(root).data()[0])
}

/// Checks every coordinate of every input tensor of the scenario.
fn check_scenario(s: &Scenario) -> Result<(usize, f64), NetError> {
    let (_, analytic) = run_scenario(s)?;
    let mut coords = 0;
    let mut worst: f64 = 0.0;
    for ti in 0..s.tensors.len() {
        for ci in 0..s.tensors[ti].len() {
            let mut plus = s.tensors.clone();
            plus[ti].data_mut()[ci] += FD_STEP;
            let mut minus = s.tensors.clone();
            minus[ti].data_mut()[ci] -= FD_STEP;
            let fd = (eval_loss(s, &plus)? - eval_loss(s, &minus)?) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[ti].data()[ci], fd));
            coords += 1;
        }
    }
    Ok((coords, worst))
}

fn rand_tensor(rng: &mut ChaCha12Rng, dims: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
    }
    t
}

fn rand_coeffs(rng: &mut ChaCha12Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn conv_geom(kernel_time: usize, kernel_freq: usize, stride_freq: usize) -> ConvGeom {
    ConvGeom {
        kernel_time,
        kernel_freq,
        stride_time: 1,
        stride_freq,
        pad_time_left: 0,
        pad_time_right: kernel_time - 1,
        pad_freq: kernel_freq / 2,
    }
}

fn depthwise_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let c = rng.random_range(1..4usize);
    let t = rng.random_range(2..6usize);
    let f = rng.random_range(4..9usize);
    let geom = conv_geom(2, 3, 2);
    let x = rand_tensor(rng, &[c, t, f], 1.0);
    let w = rand_tensor(rng, &[c, 2, 3], 1.0);
    let b = rand_tensor(rng, &[c], 0.5);
    let fo = (f + 2 * (3 / 2) - 3) / 2 + 1;
    let coeffs = rand_coeffs(rng, c * t * fo);
    Scenario {
        tensors: vec![x, w, b],
        build: Box::new(move |tape, ids| {
            let y = tape.depthwise_conv2d(ids[0], ids[1], ids[2], geom)?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn pointwise_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let ci = rng.random_range(1..5usize);
    let co = rng.random_range(1..5usize);
    let t = rng.random_range(1..5usize);
    let f = rng.random_range(1..6usize);
    let x = rand_tensor(rng, &[ci, t, f], 1.0);
    let w = rand_tensor(rng, &[co, ci], 1.0);
    let b = rand_tensor(rng, &[co], 0.5);
    let coeffs = rand_coeffs(rng, co * t * f);
    Scenario {
        tensors: vec![x, w, b],
        build: Box::new(move |tape, ids| {
            let y = tape.pointwise_conv(ids[0], ids[1], ids[2])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn batch_norm_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let c = rng.random_range(1..4usize);
    let t = rng.random_range(2..5usize);
    let f = rng.random_range(2..5usize);
    let x = rand_tensor(rng, &[c, t, f], 2.0);
    let gamma = rand_tensor(rng, &[c], 1.0);
    let beta = rand_tensor(rng, &[c], 1.0);
    let coeffs = rand_coeffs(rng, c * t * f);
    Scenario {
        tensors: vec![x, gamma, beta],
        build: Box::new(move |tape, ids| {
            let (y, _) = tape.batch_norm_train(ids[0], ids[1], ids[2], 1e-5)?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn relu_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let c = rng.random_range(1..4usize);
    let t = rng.random_range(1..5usize);
    let f = rng.random_range(1..5usize);
    // Keep values away from the kink at zero, where the FD stencil straddles
    // the non-differentiable point.
    let mut x = rand_tensor(rng, &[c, t, f], 1.0);
    for v in x.data_mut() {
        if v.abs() < 10.0 * FD_STEP {
            *v += if *v >= 0.0 { 0.01 } else { -0.01 };
        }
    }
    let coeffs = rand_coeffs(rng, c * t * f);
    Scenario {
        tensors: vec![x],
        build: Box::new(move |tape, ids| {
            let y = tape.relu(ids[0])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn flatten_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let c = rng.random_range(1..4usize);
    let t = rng.random_range(1..5usize);
    let f = rng.random_range(1..5usize);
    let x = rand_tensor(rng, &[c, t, f], 1.0);
    let coeffs = rand_coeffs(rng, c * t * f);
    Scenario {
        tensors: vec![x],
        build: Box::new(move |tape, ids| {
            let y = tape.flatten_frames(ids[0])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn gru_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let t = rng.random_range(2..6usize);
    let i = rng.random_range(1..5usize);
    let h = rng.random_range(1..4usize);
    let x = rand_tensor(rng, &[t, i], 1.0);
    let w_ih = rand_tensor(rng, &[3 * h, i], 0.8);
    let w_hh = rand_tensor(rng, &[3 * h, h], 0.8);
    let b_ih = rand_tensor(rng, &[3 * h], 0.5);
    let b_hh = rand_tensor(rng, &[3 * h], 0.5);
    let coeffs = rand_coeffs(rng, t * h);
    Scenario {
        tensors: vec![x, w_ih, w_hh, b_ih, b_hh],
        build: Box::new(move |tape, ids| {
            let y = tape.gru_seq(ids[0], ids[1], ids[2], ids[3], ids[4])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn film_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let t = rng.random_range(1..5usize);
    let h = rng.random_range(1..4usize);
    let d = rng.random_range(1..5usize);
    let hx = rand_tensor(rng, &[t, h], 1.0);
    let e = rand_tensor(rng, &[d], 1.0);
    let wg = rand_tensor(rng, &[h, d], 0.8);
    let cg = rand_tensor(rng, &[h], 0.8);
    let wb = rand_tensor(rng, &[h, d], 0.8);
    let cb = rand_tensor(rng, &[h], 0.8);
    let coeffs = rand_coeffs(rng, t * h);
    Scenario {
        tensors: vec![hx, e, wg, cg, wb, cb],
        build: Box::new(move |tape, ids| {
            let y = tape.film(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn dense_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let t = rng.random_range(1..6usize);
    let h = rng.random_range(1..6usize);
    let x = rand_tensor(rng, &[t, h], 1.0);
    let w = rand_tensor(rng, &[h], 1.0);
    let b = rand_tensor(rng, &[1], 0.5);
    let coeffs = rand_coeffs(rng, t);
    Scenario {
        tensors: vec![x, w, b],
        build: Box::new(move |tape, ids| {
            let y = tape.dense(ids[0], ids[1], ids[2])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn sigmoid_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let t = rng.random_range(1..7usize);
    let x = rand_tensor(rng, &[t], 3.0);
    let coeffs = rand_coeffs(rng, t);
    Scenario {
        tensors: vec![x],
        build: Box::new(move |tape, ids| {
            let y = tape.sigmoid(ids[0])?;
            tape.weighted_sum(y, &coeffs)
        }),
    }
}

fn bce_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let t = rng.random_range(1..7usize);
    let x = rand_tensor(rng, &[t], 3.0);
    let labels: Vec<f64> = (0..t).map(|_| f64::from(rng.random::<bool>())).collect();
    Scenario {
        tensors: vec![x],
        build: Box::new(move |tape, ids| tape.bce_with_logits(ids[0], &labels)),
    }
}

type ScenarioGen = fn(&mut ChaCha12Rng) -> Scenario;

const LAYER_KINDS: [(&str, ScenarioGen); 10] = [
    ("depthwise_conv", depthwise_scenario),
    ("pointwise_conv", pointwise_scenario),
    ("batch_norm", batch_norm_scenario),
    ("relu", relu_scenario),
    ("flatten_frames", flatten_scenario),
    ("gru", gru_scenario),
    ("film", film_scenario),
    ("dense", dense_scenario),
    ("sigmoid", sigmoid_scenario),
    ("bce_with_logits", bce_scenario),
];

/// Runs `instances` random gradient checks per layer kind and reports the
/// worst relative error for each.
pub fn run_layer_gradient_suite(instances: usize, seed: u64) -> Result<Vec<LayerReport>, NetError> {
    let mut reports = Vec::new();
    for (layer, generator) in LAYER_KINDS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ fxhash(layer));
        let mut coords = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let scenario = generator(&mut rng);
            let (c, w) = check_scenario(&scenario)?;
            coords += c;
            worst = worst.max(w);
        }
        reports.push(LayerReport { layer, instances, coords, max_rel_err: worst });
    }
    Ok(reports)
}

/// Small deterministic string hash to decorrelate per-layer RNG streams.
fn fxhash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
