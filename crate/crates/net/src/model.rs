//! Speaker-conditioned frame classifier.
//!
//! Four separable convolution blocks (depthwise (2, 3) kernel striding the
//! band axis by 2, pointwise channel mix, per-channel normalization, ReLU)
//! reduce the 32-band feature map to 2 bands, the per-frame activations are
//! flattened and run through a GRU, the speaker embedding modulates the GRU
//! output via a learned affine scale and shift, and a dense head emits one
//! voice-activity logit per frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use coher_embed::SpeakerEmbedding;
use coher_features::{InputFeature, FEATURE_CHANNELS};

use crate::tape::{BnBatchStats, ConvGeom, NodeId, Tape};
use crate::tensor::Tensor;
use crate::NetError;

pub const CONV_BLOCKS: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub bands: usize,
    pub conv_channels: [usize; CONV_BLOCKS],
    pub kernel_time: usize,
    pub kernel_freq: usize,
    pub stride_time: usize,
    pub stride_freq: usize,
    pub gru_hidden: usize,
    pub embedding_dim: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            bands: 32,
            conv_channels: [12, 24, 48, 96],
            kernel_time: 2,
            kernel_freq: 3,
            stride_time: 1,
            stride_freq: 2,
            gru_hidden: 93,
            embedding_dim: 128,
            bn_momentum: 0.99,
            bn_eps: 1e-5,
        }
    }
}

/// Whether normalization uses batch statistics (Train) or frozen running
/// buffers (Eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer and counted by `count_params`.
    Trainable,
    /// Running statistics: persisted, never differentiated.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.in_channels == 0
            || self.bands == 0
            || self.gru_hidden == 0
            || self.embedding_dim == 0
            || self.conv_channels.iter().any(|c| *c == 0)
        {
            return Err(NetError::BadConfig("all dimensions must be positive".into()));
        }
        if self.kernel_time == 0
            || self.kernel_freq == 0
            || self.stride_time == 0
            || self.stride_freq == 0
        {
            return Err(NetError::BadConfig("kernels and strides must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(NetError::BadConfig(
                "normalization momentum must lie in [0, 1) with positive epsilon".into(),
            ));
        }
        // The band axis must halve cleanly through every block so the
        // flattened width is independent of rounding.
        let div = self.stride_freq.pow(CONV_BLOCKS as u32);
        if self.bands % div != 0 || self.bands / div == 0 {
            return Err(NetError::BadConfig(format!(
                "{} bands do not reduce cleanly through {CONV_BLOCKS} blocks of stride {}",
                self.bands, self.stride_freq
            )));
        }
        if self.kernel_freq / 2 * 2 + 1 != self.kernel_freq {
            return Err(NetError::BadConfig("band kernel must be odd for same padding".into()));
        }
        Ok(())
    }

    fn conv_geom(&self) -> ConvGeom {
        // Same padding: odd band kernel pads (k-1)/2 each side; the even
        // time kernel needs one total pad, placed after the last frame.
        ConvGeom {
            kernel_time: self.kernel_time,
            kernel_freq: self.kernel_freq,
            stride_time: self.stride_time,
            stride_freq: self.stride_freq,
            pad_time_left: 0,
            pad_time_right: self.kernel_time - 1,
            pad_freq: self.kernel_freq / 2,
        }
    }

    /// Band count after all convolution blocks.
    pub fn out_bands(&self) -> usize {
        self.bands / self.stride_freq.pow(CONV_BLOCKS as u32)
    }

    /// Width of the per-frame vector entering the recurrent layer.
    pub fn gru_input(&self) -> usize {
        self.conv_channels[CONV_BLOCKS - 1] * self.out_bands()
    }

    /// Canonical parameter inventory: checkpoint order and per-tensor shapes.
    pub fn inventory(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut c_in = self.in_channels;
        for (i, &c_out) in self.conv_channels.iter().enumerate() {
            let p = |name: &str, dims: Vec<usize>, kind: ParamKind| ParamSpec {
                name: format!("conv{i}.{name}"),
                dims,
                kind,
            };
            specs.push(p("dw.weight", vec![c_in, self.kernel_time, self.kernel_freq], ParamKind::Trainable));
            specs.push(p("dw.bias", vec![c_in], ParamKind::Trainable));
            specs.push(p("pw.weight", vec![c_out, c_in], ParamKind::Trainable));
            specs.push(p("pw.bias", vec![c_out], ParamKind::Trainable));
            specs.push(p("bn.gamma", vec![c_out], ParamKind::Trainable));
            specs.push(p("bn.beta", vec![c_out], ParamKind::Trainable));
            specs.push(p("bn.running_mean", vec![c_out], ParamKind::Buffer));
            specs.push(p("bn.running_var", vec![c_out], ParamKind::Buffer));
            c_in = c_out;
        }
        let (h, i, d) = (self.gru_hidden, self.gru_input(), self.embedding_dim);
        let t = |name: &str, dims: Vec<usize>| ParamSpec {
            name: name.to_string(),
            dims,
            kind: ParamKind::Trainable,
        };
        specs.push(t("gru.w_ih", vec![3 * h, i]));
        specs.push(t("gru.w_hh", vec![3 * h, h]));
        specs.push(t("gru.b_ih", vec![3 * h]));
        specs.push(t("gru.b_hh", vec![3 * h]));
        specs.push(t("film.scale.weight", vec![h, d]));
        specs.push(t("film.scale.bias", vec![h]));
        specs.push(t("film.shift.weight", vec![h, d]));
        specs.push(t("film.shift.bias", vec![h]));
        specs.push(t("classifier.weight", vec![h]));
        specs.push(t("classifier.bias", vec![1]));
        specs
    }

    /// Total trainable parameter count (buffers excluded).
    pub fn count_params(&self) -> usize {
        self.inventory()
            .iter()
            .filter(|s| s.kind == ParamKind::Trainable)
            .map(|s| s.dims.iter().product::<usize>())
            .sum()
    }
}

/// One queued running-statistics update from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean_index: usize,
    pub var_index: usize,
    pub stats: BnBatchStats,
}

/// A forward pass recorded on a tape. `params` maps inventory indices to
/// leaf nodes so gradients can be routed back to model tensors.
pub struct ForwardGraph {
    pub tape: Tape,
    pub logits: NodeId,
    pub probs: NodeId,
    pub params: Vec<NodeId>,
    pub bn_updates: Vec<BnUpdate>,
}

#[derive(Debug, Clone)]
pub struct PvadModel {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl PvadModel {
    /// Fresh model with seeded uniform fan-in initialization. Conditioning
    /// starts at identity (unit scale, zero shift) so an untrained model
    /// ignores the embedding; normalization starts at identity statistics.
    pub fn new_seeded(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut uniform = |dims: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut t = Tensor::zeros(dims);
            for v in t.data_mut() {
                *v = rng.random::<f64>() * 2.0 * bound - bound;
            }
            t
        };
        let inventory = config.inventory();
        let mut tensors = Vec::with_capacity(inventory.len());
        for spec in &inventory {
            let t = if let Some(rest) = spec.name.strip_prefix("conv") {
                let (block, field) = rest.split_once('.').unwrap();
                let bi: usize = block.parse().unwrap();
                let c_in =
                    if bi == 0 { config.in_channels } else { config.conv_channels[bi - 1] };
                match field {
                    "dw.weight" | "dw.bias" => {
                        uniform(&spec.dims, config.kernel_time * config.kernel_freq)
                    }
                    "pw.weight" | "pw.bias" => uniform(&spec.dims, c_in),
                    "bn.gamma" | "bn.running_var" => Tensor::filled(&spec.dims, 1.0),
                    "bn.beta" | "bn.running_mean" => Tensor::zeros(&spec.dims),
                    other => {
                        return Err(NetError::BadConfig(format!(
                            "no initializer for tensor conv{bi}.{other}"
                        )))
                    }
                }
            } else {
                match spec.name.as_str() {
                    "gru.w_ih" | "gru.w_hh" | "gru.b_ih" | "gru.b_hh" => {
                        uniform(&spec.dims, config.gru_hidden)
                    }
                    "film.scale.bias" => Tensor::filled(&spec.dims, 1.0),
                    "film.scale.weight" | "film.shift.weight" | "film.shift.bias" => {
                        Tensor::zeros(&spec.dims)
                    }
                    "classifier.weight" | "classifier.bias" => {
                        uniform(&spec.dims, config.gru_hidden)
                    }
                    other => {
                        return Err(NetError::BadConfig(format!(
                            "no initializer for tensor {other}"
                        )))
                    }
                }
            };
            tensors.push(t);
        }
        for t in &mut tensors {
            t.quantize_f32();
        }
        let names = inventory.into_iter().map(|s| s.name).collect();
        Ok(Self { config, names, tensors })
    }

    /// Model with every tensor zeroed except identity normalization buffers.
    /// Used as the target of checkpoint loading.
    pub fn zeroed(config: ModelConfig) -> Result<Self, NetError> {
        config.validate()?;
        let inventory = config.inventory();
        let tensors = inventory
            .iter()
            .map(|s| {
                if s.name.ends_with("bn.running_var") {
                    Tensor::filled(&s.dims, 1.0)
                } else {
                    Tensor::zeros(&s.dims)
                }
            })
            .collect();
        let names = inventory.into_iter().map(|s| s.name).collect();
        Ok(Self { config, names, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn count_params(&self) -> usize {
        self.config.count_params()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor_at(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    pub fn tensor_at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.tensors[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.index_of(name)?;
        Some(&mut self.tensors[i])
    }

    /// Inventory indices of optimizer-visible tensors.
    pub fn trainable_indices(&self) -> Vec<usize> {
        self.config
            .inventory()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == ParamKind::Trainable)
            .map(|(i, _)| i)
            .collect()
    }

    fn check_input(&self, feat: &InputFeature, emb: &SpeakerEmbedding) -> Result<(), NetError> {
        if FEATURE_CHANNELS != self.config.in_channels || feat.num_bands() != self.config.bands {
            return Err(NetError::ShapeMismatch(format!(
                "feature of {} channels x {} bands does not match model ({} x {})",
                FEATURE_CHANNELS,
                feat.num_bands(),
                self.config.in_channels,
                self.config.bands
            )));
        }
        if feat.num_frames() == 0 {
            return Err(NetError::ShapeMismatch("feature has no frames".into()));
        }
        if emb.dim() != self.config.embedding_dim {
            return Err(NetError::ShapeMismatch(format!(
                "embedding of dim {} does not match model dim {}",
                emb.dim(),
                self.config.embedding_dim
            )));
        }
        Ok(())
    }

    /// Records a full forward pass on a fresh tape. In train mode all
    /// trainable tensors become gradient-tracked leaves and batch statistics
    /// are queued in `bn_updates`; in eval mode the graph is untracked and
    /// running buffers are used.
    pub fn build_graph(
        &self,
        feat: &InputFeature,
        emb: &SpeakerEmbedding,
        mode: Mode,
    ) -> Result<ForwardGraph, NetError> {
        self.check_input(feat, emb)?;
        let inventory = self.config.inventory();
        let mut tape = Tape::new();
        let params: Vec<NodeId> = inventory
            .iter()
            .zip(&self.tensors)
            .map(|(spec, tensor)| {
                let track = mode == Mode::Train && spec.kind == ParamKind::Trainable;
                tape.leaf(tensor.clone(), track)
            })
            .collect();
        let by_name = |name: &str| params[self.index_of(name).unwrap()];

        let frames = feat.num_frames();
        let feat_tensor = Tensor::from_vec(
            vec![self.config.in_channels, frames, self.config.bands],
            feat.data().to_vec(),
        )?;
        let mut x = tape.leaf(feat_tensor, false);
        let emb_node = tape.leaf(Tensor::from_vec(vec![emb.dim()], emb.vector().to_vec())?, false);

        let geom = self.config.conv_geom();
        let mut bn_updates = Vec::new();
        for i in 0..CONV_BLOCKS {
            let dw = tape.depthwise_conv2d(
                x,
                by_name(&format!("conv{i}.dw.weight")),
                by_name(&format!("conv{i}.dw.bias")),
                geom,
            )?;
            let pw = tape.pointwise_conv(
                dw,
                by_name(&format!("conv{i}.pw.weight")),
                by_name(&format!("conv{i}.pw.bias")),
            )?;
            let gamma = by_name(&format!("conv{i}.bn.gamma"));
            let beta = by_name(&format!("conv{i}.bn.beta"));
            let bn = match mode {
                Mode::Train => {
                    let (node, stats) = tape.batch_norm_train(pw, gamma, beta, self.config.bn_eps)?;
                    bn_updates.push(BnUpdate {
                        mean_index: self.index_of(&format!("conv{i}.bn.running_mean")).unwrap(),
                        var_index: self.index_of(&format!("conv{i}.bn.running_var")).unwrap(),
                        stats,
                    });
                    node
                }
                Mode::Eval => tape.batch_norm_eval(
                    pw,
                    gamma,
                    beta,
                    self.param(&format!("conv{i}.bn.running_mean")).unwrap().data(),
                    self.param(&format!("conv{i}.bn.running_var")).unwrap().data(),
                    self.config.bn_eps,
                )?,
            };
            x = tape.relu(bn)?;
        }

        let flat = tape.flatten_frames(x)?;
        let gru = tape.gru_seq(
            flat,
            by_name("gru.w_ih"),
            by_name("gru.w_hh"),
            by_name("gru.b_ih"),
            by_name("gru.b_hh"),
        )?;
        let film = tape.film(
            gru,
            emb_node,
            by_name("film.scale.weight"),
            by_name("film.scale.bias"),
            by_name("film.shift.weight"),
            by_name("film.shift.bias"),
        )?;
        let logits = tape.dense(film, by_name("classifier.weight"), by_name("classifier.bias"))?;
        let probs = tape.sigmoid(logits)?;
        Ok(ForwardGraph { tape, logits, probs, params, bn_updates })
    }

    /// Folds queued batch statistics into the running buffers:
    /// running = momentum * running + (1 - momentum) * batch.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        let m = self.config.bn_momentum;
        for u in updates {
            for (idx, batch) in [(u.mean_index, &u.stats.mean), (u.var_index, &u.stats.var)] {
                let t = &mut self.tensors[idx];
                for (r, b) in t.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + (1.0 - m) * b;
                }
                t.quantize_f32();
            }
        }
    }

    /// Eval-mode inference: per-frame voice activity probabilities.
    pub fn predict(
        &self,
        feat: &InputFeature,
        emb: &SpeakerEmbedding,
    ) -> Result<Vec<f64>, NetError> {
        let graph = self.build_graph(feat, emb, Mode::Eval)?;
        Ok(graph.tape.value(graph.probs).data().to_vec())
    }
}
