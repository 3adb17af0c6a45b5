//! Forward-pass contracts of the assembled classifier: output shape and
//! range, parameter census, conditioning behavior, and determinism.

use coher_embed::SpeakerEmbedding;
use coher_features::InputFeature;
use coher_net::{bce_loss, Mode, ModelConfig, PvadModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn random_feature(frames: usize, bands: usize, seed: u64) -> InputFeature {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..3 * frames * bands)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) as f32 as f64)
        .collect();
    InputFeature::from_raw(data, frames, bands).unwrap()
}

fn random_embedding(dim: usize, seed: u64) -> SpeakerEmbedding {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x = (*x / norm) as f32 as f64;
    }
    // Quantization may perturb the norm past the strict constructor bound;
    // renormalize once more in f32 space.
    let norm2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x = (*x / norm2) as f32 as f64;
    }
    SpeakerEmbedding::new(v, "test").unwrap()
}

#[test]
fn default_config_matches_frozen_parameter_count() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.count_params(), 111_394);
    assert!((100_000..=125_000).contains(&cfg.count_params()));
}

#[test]
fn conv_stack_parameter_count_matches_hand_formula() {
    // Per block: depthwise C_in*2*3 + C_in, pointwise C_in*C_out + C_out.
    let cfg = ModelConfig::default();
    let mut expect = 0usize;
    let mut c_in = cfg.in_channels;
    for c_out in cfg.conv_channels {
        expect += c_in * cfg.kernel_time * cfg.kernel_freq + c_in;
        expect += c_in * c_out + c_out;
        c_in = c_out;
    }
    assert_eq!(expect, 6_873);
    let conv_total: usize = cfg
        .inventory()
        .iter()
        .filter(|s| {
            s.name.starts_with("conv")
                && (s.name.contains(".dw.") || s.name.contains(".pw."))
        })
        .map(|s| s.dims.iter().product::<usize>())
        .sum();
    assert_eq!(conv_total, expect);
}

#[test]
fn degenerate_configs_are_rejected() {
    let mut cfg = ModelConfig::default();
    cfg.conv_channels[2] = 0;
    assert!(cfg.validate().is_err());

    let cfg = ModelConfig { bands: 0, ..Default::default() };
    assert!(cfg.validate().is_err());

    // 24 bands do not survive four halvings cleanly.
    let cfg = ModelConfig { bands: 24, ..Default::default() };
    assert!(cfg.validate().is_err());

    let cfg = ModelConfig { gru_hidden: 0, ..Default::default() };
    assert!(cfg.validate().is_err());

    let cfg = ModelConfig { kernel_freq: 4, ..Default::default() };
    assert!(cfg.validate().is_err());

    let cfg = ModelConfig { bn_momentum: 1.0, ..Default::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn zero_parameters_give_exactly_half_everywhere() {
    let cfg = ModelConfig::default();
    let mut model = PvadModel::new_seeded(cfg, 7).unwrap();
    let trainable = model.trainable_indices();
    for idx in trainable {
        model.tensor_at_mut(idx).data_mut().fill(0.0);
    }
    let feat = random_feature(11, 32, 1);
    let emb = random_embedding(128, 2);
    let probs = model.predict(&feat, &emb).unwrap();
    assert_eq!(probs.len(), 11);
    for p in probs {
        assert_eq!(p, 0.5);
    }
}

#[test]
fn frame_count_is_preserved() {
    let cfg = ModelConfig::default();
    let model = PvadModel::new_seeded(cfg, 3).unwrap();
    let emb = random_embedding(128, 5);
    for frames in [1usize, 2, 5, 31, 98] {
        let feat = random_feature(frames, 32, frames as u64);
        let probs = model.predict(&feat, &emb).unwrap();
        assert_eq!(probs.len(), frames);
    }
}

#[test]
fn probabilities_are_strictly_inside_unit_interval() {
    let cfg = ModelConfig::default();
    let model = PvadModel::new_seeded(cfg, 11).unwrap();
    let emb = random_embedding(128, 13);
    let feat = random_feature(40, 32, 17);
    for p in model.predict(&feat, &emb).unwrap() {
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn identity_conditioning_ignores_the_embedding() {
    // Zeroed conditioning weights with unit scale bias reduce the modulation
    // to the identity, so two different speakers yield identical outputs.
    let cfg = ModelConfig::default();
    let mut model = PvadModel::new_seeded(cfg, 19).unwrap();
    model.param_mut("film.scale.weight").unwrap().data_mut().fill(0.0);
    model.param_mut("film.scale.bias").unwrap().data_mut().fill(1.0);
    model.param_mut("film.shift.weight").unwrap().data_mut().fill(0.0);
    model.param_mut("film.shift.bias").unwrap().data_mut().fill(0.0);
    let feat = random_feature(20, 32, 23);
    let a = model.predict(&feat, &random_embedding(128, 29)).unwrap();
    let b = model.predict(&feat, &random_embedding(128, 31)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fresh_model_starts_with_identity_conditioning() {
    // Seeded initialization leaves the conditioning path at identity, so the
    // untrained model is embedding-invariant by construction.
    let model = PvadModel::new_seeded(ModelConfig::default(), 37).unwrap();
    let feat = random_feature(12, 32, 41);
    let a = model.predict(&feat, &random_embedding(128, 43)).unwrap();
    let b = model.predict(&feat, &random_embedding(128, 47)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn conditioning_changes_output_once_weights_are_nonzero() {
    let cfg = ModelConfig::default();
    let mut model = PvadModel::new_seeded(cfg, 53).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(59);
    for name in ["film.scale.weight", "film.shift.weight"] {
        for v in model.param_mut(name).unwrap().data_mut() {
            *v = rng.random::<f64>() * 0.2 - 0.1;
        }
    }
    let feat = random_feature(20, 32, 61);
    let a = model.predict(&feat, &random_embedding(128, 67)).unwrap();
    let b = model.predict(&feat, &random_embedding(128, 71)).unwrap();
    assert_ne!(a, b);
}

#[test]
fn same_seed_same_output_different_seed_different_params() {
    let cfg = ModelConfig::default();
    let m1 = PvadModel::new_seeded(cfg.clone(), 101).unwrap();
    let m2 = PvadModel::new_seeded(cfg.clone(), 101).unwrap();
    let m3 = PvadModel::new_seeded(cfg, 102).unwrap();
    let feat = random_feature(15, 32, 73);
    let emb = random_embedding(128, 79);
    let p1 = m1.predict(&feat, &emb).unwrap();
    let p2 = m2.predict(&feat, &emb).unwrap();
    let p3 = m3.predict(&feat, &emb).unwrap();
    assert_eq!(p1, p2);
    assert_ne!(p1, p3);
}

#[test]
fn initial_parameters_are_f32_exact() {
    let model = PvadModel::new_seeded(ModelConfig::default(), 83).unwrap();
    for i in 0..model.tensor_count() {
        for v in model.tensor_at(i).data() {
            assert_eq!(*v, *v as f32 as f64);
        }
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let model = PvadModel::new_seeded(ModelConfig::default(), 89).unwrap();
    let emb = random_embedding(128, 97);

    let narrow = random_feature(10, 16, 1);
    assert!(model.predict(&narrow, &emb).unwrap_err().to_string().contains("bands"));

    let feat = random_feature(10, 32, 2);
    let small = random_embedding(64, 3);
    assert!(model.predict(&feat, &small).is_err());
}

#[test]
fn train_mode_queues_one_update_per_conv_block() {
    let model = PvadModel::new_seeded(ModelConfig::default(), 103).unwrap();
    let feat = random_feature(8, 32, 5);
    let emb = random_embedding(128, 7);
    let graph = model.build_graph(&feat, &emb, Mode::Train).unwrap();
    assert_eq!(graph.bn_updates.len(), 4);
    let eval = model.build_graph(&feat, &emb, Mode::Eval).unwrap();
    assert!(eval.bn_updates.is_empty());
}

#[test]
fn running_statistics_update_moves_toward_batch() {
    let mut model = PvadModel::new_seeded(ModelConfig::default(), 107).unwrap();
    let feat = random_feature(8, 32, 11);
    let emb = random_embedding(128, 13);
    let graph = model.build_graph(&feat, &emb, Mode::Train).unwrap();
    let before = model.param("conv0.bn.running_mean").unwrap().clone();
    model.apply_bn_updates(&graph.bn_updates);
    let after = model.param("conv0.bn.running_mean").unwrap();
    let batch = &graph.bn_updates[0].stats.mean;
    for ((b, a), m) in before.data().iter().zip(after.data()).zip(batch) {
        let expect = (0.99 * b + 0.01 * m) as f32 as f64;
        assert_eq!(*a, expect);
    }
}

#[test]
fn training_step_reduces_loss_on_a_tiny_problem() {
    // One gradient step along the supervised objective must reduce it; this
    // exercises the full graph end to end rather than layers in isolation.
    let cfg = ModelConfig { bands: 16, conv_channels: [4, 6, 8, 10], gru_hidden: 8, embedding_dim: 8, ..Default::default() };
    let mut model = PvadModel::new_seeded(cfg, 113).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(127);
    let data: Vec<f64> = (0..3 * 6 * 16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let feat = InputFeature::from_raw(data, 6, 16).unwrap();
    let mut ev: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
    let n = ev.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut ev {
        *x = (*x / n) as f32 as f64;
    }
    let n2 = ev.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut ev {
        *x = (*x / n2) as f32 as f64;
    }
    let emb = SpeakerEmbedding::new(ev, "test").unwrap();
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];

    let loss_at = |model: &PvadModel| {
        let mut g = model.build_graph(&feat, &emb, Mode::Train).unwrap();
        let loss = g.tape.bce_with_logits(g.logits, &labels).unwrap();
        g.tape.value(loss).data()[0]
    };
    let before = loss_at(&model);

    let mut graph = model.build_graph(&feat, &emb, Mode::Train).unwrap();
    let loss_node = graph.tape.bce_with_logits(graph.logits, &labels).unwrap();
    let grads = graph.tape.backward(loss_node).unwrap();
    let lr = 0.05;
    for (idx, node) in graph.params.iter().enumerate() {
        if let Some(g) = grads.get(*node) {
            let t = model.tensor_at_mut(idx);
            for (w, gv) in t.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * gv;
            }
        }
    }
    let after = loss_at(&model);
    assert!(after < before, "loss went from {before} to {after}");
}

#[test]
fn probability_head_agrees_with_external_loss() {
    // bce_loss(probs) equals the fused logit loss up to clamping.
    let model = PvadModel::new_seeded(ModelConfig::default(), 131).unwrap();
    let feat = random_feature(9, 32, 17);
    let emb = random_embedding(128, 19);
    let labels_f = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let labels_u: Vec<u8> = labels_f.iter().map(|v| *v as u8).collect();

    let mut graph = model.build_graph(&feat, &emb, Mode::Eval).unwrap();
    let probs = graph.tape.value(graph.probs).data().to_vec();
    let fused = graph.tape.bce_with_logits(graph.logits, &labels_f).unwrap();
    let fused_val = graph.tape.value(fused).data()[0];
    let external = bce_loss(&probs, &labels_u).unwrap();
    assert!((fused_val - external).abs() < 1e-9);
}
