//! Reverse-mode autodiff over a flat tape of layer-granular ops.
//!
//! Each forward call appends one node holding the op kind, parent ids and the
//! computed value (plus whatever intermediate state the backward pass needs).
//! `backward` walks the tape in reverse index order, so every node sees its
//! full upstream gradient before propagating to parents. Gradients are only
//! materialized for nodes on a path from a `requires_grad` leaf to the root.

use crate::tensor::Tensor;
use crate::NetError;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Spatial geometry of the depthwise convolution.
///
/// Frequency padding is symmetric; time padding is split into explicit
/// left/right amounts because an even time kernel cannot pad evenly.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub kernel_time: usize,
    pub kernel_freq: usize,
    pub stride_time: usize,
    pub stride_freq: usize,
    pub pad_time_left: usize,
    pub pad_time_right: usize,
    pub pad_freq: usize,
}

impl ConvGeom {
    fn out_time(&self, t: usize) -> Option<usize> {
        let padded = t + self.pad_time_left + self.pad_time_right;
        if padded < self.kernel_time || self.stride_time == 0 {
            return None;
        }
        Some((padded - self.kernel_time) / self.stride_time + 1)
    }

    fn out_freq(&self, f: usize) -> Option<usize> {
        let padded = f + 2 * self.pad_freq;
        if padded < self.kernel_freq || self.stride_freq == 0 {
            return None;
        }
        Some((padded - self.kernel_freq) / self.stride_freq + 1)
    }
}

/// Per-step activations saved by the GRU forward for backpropagation
/// through time.
#[derive(Debug, Clone)]
struct GruSaved {
    hidden: usize,
    /// Hidden states h_0..h_T, (T+1, H); h_0 is the zero vector.
    h: Vec<f64>,
    /// Reset gates r_t, (T, H).
    r: Vec<f64>,
    /// Update gates z_t, (T, H).
    z: Vec<f64>,
    /// Candidate activations n_t, (T, H).
    n: Vec<f64>,
    /// Hidden half of the candidate pre-activation, (T, H). Needed because
    /// the reset gate multiplies it before the tanh.
    gh_n: Vec<f64>,
}

/// Normalization statistics actually applied at forward time: batch
/// statistics in train mode, running buffers in eval mode.
#[derive(Debug, Clone)]
struct BnApplied {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    train_mode: bool,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    DepthwiseConv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    PointwiseConv { x: NodeId, w: NodeId, b: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, applied: BnApplied },
    Relu { x: NodeId },
    FlattenFrames { x: NodeId },
    GruSeq { x: NodeId, w_ih: NodeId, w_hh: NodeId, b_ih: NodeId, b_hh: NodeId, saved: GruSaved },
    Film { h: NodeId, e: NodeId, wg: NodeId, cg: NodeId, wb: NodeId, cb: NodeId },
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    BceWithLogits { logits: NodeId, labels: Vec<f64> },
    Mul { a: NodeId, b: NodeId },
    WeightedSum { x: NodeId, coeffs: Vec<f64> },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Batch statistics produced by a train-mode normalization node, handed back
/// to the caller so running buffers can be updated outside the graph.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gradient table returned by `backward`. Only leaf nodes retain gradients;
/// interior activations are dropped once consumed.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or None if no gradient reached it (not a
    /// `requires_grad` leaf, or disconnected from the loss).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node { value, needs_grad, op });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check(&self, id: NodeId) -> Result<(), NetError> {
        if id.0 >= self.nodes.len() {
            return Err(NetError::UnknownNode(id.0));
        }
        Ok(())
    }

    fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    /// Adds an input node. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Depthwise 2-d convolution over (channel, time, freq) input.
    /// Weight shape is (channels, kernel_time, kernel_freq); one filter per
    /// input channel, plus a per-channel bias.
    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
    ) -> Result<NodeId, NetError> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xd = self.dims(x);
        if xd.len() != 3 {
            return Err(NetError::ShapeMismatch(format!(
                "depthwise conv expects (channels, frames, bands) input, got {xd:?}"
            )));
        }
        let (c, t, f) = (xd[0], xd[1], xd[2]);
        if self.dims(w) != [c, geom.kernel_time, geom.kernel_freq] {
            return Err(NetError::ShapeMismatch(format!(
                "depthwise weight shape {:?} does not match channels {} and kernel ({}, {})",
                self.dims(w),
                c,
                geom.kernel_time,
                geom.kernel_freq
            )));
        }
        if self.dims(b) != [c] {
            return Err(NetError::ShapeMismatch(format!(
                "depthwise bias shape {:?} does not match {} channels",
                self.dims(b),
                c
            )));
        }
        let (to, fo) = match (geom.out_time(t), geom.out_freq(f)) {
            (Some(to), Some(fo)) if to > 0 && fo > 0 => (to, fo),
            _ => {
                return Err(NetError::ShapeMismatch(format!(
                    "input ({t} frames, {f} bands) too small for kernel ({}, {})",
                    geom.kernel_time, geom.kernel_freq
                )))
            }
        };

        let xv = self.data(x);
        let wv = self.data(w);
        let bv = self.data(b);
        let mut out = vec![0.0; c * to * fo];
        for ch in 0..c {
            for ot in 0..to {
                for of in 0..fo {
                    let mut acc = bv[ch];
                    for kt in 0..geom.kernel_time {
                        let it = (ot * geom.stride_time + kt) as isize
                            - geom.pad_time_left as isize;
                        if it < 0 || it as usize >= t {
                            continue;
                        }
                        for kf in 0..geom.kernel_freq {
                            let fi = (of * geom.stride_freq + kf) as isize
                                - geom.pad_freq as isize;
                            if fi < 0 || fi as usize >= f {
                                continue;
                            }
                            acc += wv[(ch * geom.kernel_time + kt) * geom.kernel_freq + kf]
                                * xv[(ch * t + it as usize) * f + fi as usize];
                        }
                    }
                    out[(ch * to + ot) * fo + of] = acc;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::from_vec(vec![c, to, fo], out)?;
        Ok(self.push(value, needs, Op::DepthwiseConv2d { x, w, b, geom }))
    }

    /// 1x1 convolution mixing channels; weight shape (out_channels, in_channels).
    pub fn pointwise_conv(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xd = self.dims(x);
        if xd.len() != 3 {
            return Err(NetError::ShapeMismatch(format!(
                "pointwise conv expects (channels, frames, bands) input, got {xd:?}"
            )));
        }
        let (ci, t, f) = (xd[0], xd[1], xd[2]);
        let wd = self.dims(w);
        if wd.len() != 2 || wd[1] != ci {
            return Err(NetError::ShapeMismatch(format!(
                "pointwise weight shape {wd:?} does not match {ci} input channels"
            )));
        }
        let co = wd[0];
        if self.dims(b) != [co] {
            return Err(NetError::ShapeMismatch(format!(
                "pointwise bias shape {:?} does not match {co} output channels",
                self.dims(b)
            )));
        }
        let xv = self.data(x);
        let wv = self.data(w);
        let bv = self.data(b);
        let plane = t * f;
        let mut out = vec![0.0; co * plane];
        for o in 0..co {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.fill(bv[o]);
            for i in 0..ci {
                let wk = wv[o * ci + i];
                let src = &xv[i * plane..(i + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wk * s;
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::from_vec(vec![co, t, f], out)?;
        Ok(self.push(value, needs, Op::PointwiseConv { x, w, b }))
    }

    /// Per-channel normalization over the (frame, band) plane using batch
    /// statistics, as used during training. Returns the node plus the batch
    /// statistics so the caller can fold them into running buffers.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BnBatchStats), NetError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (c, plane) = self.bn_dims(x, gamma, beta)?;
        let xv = self.data(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let slab = &xv[ch * plane..(ch + 1) * plane];
            let m = slab.iter().sum::<f64>() / plane as f64;
            let v = slab.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / plane as f64;
            mean[ch] = m;
            var[ch] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let applied = BnApplied { mean: mean.clone(), inv_std, train_mode: true };
        let node = self.bn_apply(x, gamma, beta, applied)?;
        Ok((node, BnBatchStats { mean, var }))
    }

    /// Eval-mode normalization using frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId, NetError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (c, _) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(NetError::ShapeMismatch(format!(
                "running statistics of length {}/{} do not match {c} channels",
                running_mean.len(),
                running_var.len()
            )));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let applied = BnApplied { mean: running_mean.to_vec(), inv_std, train_mode: false };
        self.bn_apply(x, gamma, beta, applied)
    }

    fn bn_dims(&self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(usize, usize), NetError> {
        let xd = self.dims(x);
        if xd.len() != 3 {
            return Err(NetError::ShapeMismatch(format!(
                "batch norm expects (channels, frames, bands) input, got {xd:?}"
            )));
        }
        let c = xd[0];
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(NetError::ShapeMismatch(format!(
                "batch norm scale/shift shapes {:?}/{:?} do not match {c} channels",
                self.dims(gamma),
                self.dims(beta)
            )));
        }
        Ok((c, xd[1] * xd[2]))
    }

    fn bn_apply(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        applied: BnApplied,
    ) -> Result<NodeId, NetError> {
        let xd = self.dims(x).to_vec();
        let (c, plane) = (xd[0], xd[1] * xd[2]);
        let xv = self.data(x);
        let gv = self.data(gamma);
        let bv = self.data(beta);
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            let (m, s, g, b) = (applied.mean[ch], applied.inv_std[ch], gv[ch], bv[ch]);
            for p in 0..plane {
                out[ch * plane + p] = g * (xv[ch * plane + p] - m) * s + b;
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::from_vec(xd, out)?;
        Ok(self.push(value, needs, Op::BatchNorm { x, gamma, beta, applied }))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NetError> {
        self.check(x)?;
        let out: Vec<f64> = self.data(x).iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::from_vec(self.dims(x).to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Relu { x }))
    }

    /// Reorders (channels, frames, bands) to a per-frame feature matrix
    /// (frames, channels * bands).
    pub fn flatten_frames(&mut self, x: NodeId) -> Result<NodeId, NetError> {
        self.check(x)?;
        let xd = self.dims(x);
        if xd.len() != 3 {
            return Err(NetError::ShapeMismatch(format!(
                "flatten expects (channels, frames, bands) input, got {xd:?}"
            )));
        }
        let (c, t, f) = (xd[0], xd[1], xd[2]);
        let xv = self.data(x);
        let mut out = vec![0.0; c * t * f];
        for ch in 0..c {
            for fr in 0..t {
                for bd in 0..f {
                    out[fr * (c * f) + ch * f + bd] = xv[(ch * t + fr) * f + bd];
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::from_vec(vec![t, c * f], out)?;
        Ok(self.push(value, needs, Op::FlattenFrames { x }))
    }

    /// Single-layer unidirectional GRU over a (frames, input) sequence with
    /// zero initial state. Gate blocks are stacked reset, update, candidate
    /// in both weight matrices and both bias vectors; weight shapes are
    /// (3*hidden, input) and (3*hidden, hidden).
    pub fn gru_seq(
        &mut self,
        x: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b_ih: NodeId,
        b_hh: NodeId,
    ) -> Result<NodeId, NetError> {
        self.check(x)?;
        self.check(w_ih)?;
        self.check(w_hh)?;
        self.check(b_ih)?;
        self.check(b_hh)?;
        let xd = self.dims(x);
        if xd.len() != 2 {
            return Err(NetError::ShapeMismatch(format!(
                "recurrent layer expects (frames, features) input, got {xd:?}"
            )));
        }
        let (t, i) = (xd[0], xd[1]);
        let wd = self.dims(w_hh);
        if wd.len() != 2 || wd[0] != 3 * wd[1] || wd[1] == 0 {
            return Err(NetError::ShapeMismatch(format!(
                "recurrent weight shape {wd:?} is not (3*hidden, hidden)"
            )));
        }
        let h = wd[1];
        if self.dims(w_ih) != [3 * h, i] {
            return Err(NetError::ShapeMismatch(format!(
                "input weight shape {:?} does not match (3*{h}, {i})",
                self.dims(w_ih)
            )));
        }
        if self.dims(b_ih) != [3 * h] || self.dims(b_hh) != [3 * h] {
            return Err(NetError::ShapeMismatch(format!(
                "gate bias shapes {:?}/{:?} do not match 3*{h}",
                self.dims(b_ih),
                self.dims(b_hh)
            )));
        }

        let xv = self.data(x);
        let wih = self.data(w_ih);
        let whh = self.data(w_hh);
        let bih = self.data(b_ih);
        let bhh = self.data(b_hh);

        let mut saved = GruSaved {
            hidden: h,
            h: vec![0.0; (t + 1) * h],
            r: vec![0.0; t * h],
            z: vec![0.0; t * h],
            n: vec![0.0; t * h],
            gh_n: vec![0.0; t * h],
        };
        let mut out = vec![0.0; t * h];
        let mut gi = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        for step in 0..t {
            let xt = &xv[step * i..(step + 1) * i];
            for row in 0..3 * h {
                let wrow = &wih[row * i..(row + 1) * i];
                gi[row] = bih[row] + dot(wrow, xt);
            }
            {
                let hp = &saved.h[step * h..(step + 1) * h];
                for row in 0..3 * h {
                    let wrow = &whh[row * h..(row + 1) * h];
                    gh[row] = bhh[row] + dot(wrow, hp);
                }
            }
            for k in 0..h {
                let r = sigmoid(gi[k] + gh[k]);
                let z = sigmoid(gi[h + k] + gh[h + k]);
                let ghn = gh[2 * h + k];
                let n = (gi[2 * h + k] + r * ghn).tanh();
                let hp = saved.h[step * h + k];
                let ht = (1.0 - z) * n + z * hp;
                saved.r[step * h + k] = r;
                saved.z[step * h + k] = z;
                saved.n[step * h + k] = n;
                saved.gh_n[step * h + k] = ghn;
                saved.h[(step + 1) * h + k] = ht;
                out[step * h + k] = ht;
            }
        }
        let needs = self.needs(x)
            || self.needs(w_ih)
            || self.needs(w_hh)
            || self.needs(b_ih)
            || self.needs(b_hh);
        let value = Tensor::from_vec(vec![t, h], out)?;
        Ok(self.push(value, needs, Op::GruSeq { x, w_ih, w_hh, b_ih, b_hh, saved }))
    }

    /// Feature-wise affine conditioning: scale and shift vectors are affine
    /// functions of the conditioning embedding, applied per frame.
    pub fn film(
        &mut self,
        h: NodeId,
        e: NodeId,
        wg: NodeId,
        cg: NodeId,
        wb: NodeId,
        cb: NodeId,
    ) -> Result<NodeId, NetError> {
        for id in [h, e, wg, cg, wb, cb] {
            self.check(id)?;
        }
        let hd = self.dims(h);
        if hd.len() != 2 {
            return Err(NetError::ShapeMismatch(format!(
                "conditioning expects (frames, hidden) input, got {hd:?}"
            )));
        }
        let (t, hu) = (hd[0], hd[1]);
        let ed = self.dims(e);
        if ed.len() != 1 {
            return Err(NetError::ShapeMismatch(format!(
                "conditioning embedding must be a vector, got {ed:?}"
            )));
        }
        let d = ed[0];
        for (id, want) in [(wg, vec![hu, d]), (wb, vec![hu, d])] {
            if self.dims(id) != want {
                return Err(NetError::ShapeMismatch(format!(
                    "conditioning weight shape {:?} does not match ({hu}, {d})",
                    self.dims(id)
                )));
            }
        }
        for id in [cg, cb] {
            if self.dims(id) != [hu] {
                return Err(NetError::ShapeMismatch(format!(
                    "conditioning bias shape {:?} does not match hidden {hu}",
                    self.dims(id)
                )));
            }
        }
        let (g, b) = self.film_vectors(e, wg, cg, wb, cb);
        let hv = self.data(h);
        let mut out = vec![0.0; t * hu];
        for fr in 0..t {
            for k in 0..hu {
                out[fr * hu + k] = g[k] * hv[fr * hu + k] + b[k];
            }
        }
        let needs = [h, e, wg, cg, wb, cb].iter().any(|id| self.needs(*id));
        let value = Tensor::from_vec(vec![t, hu], out)?;
        Ok(self.push(value, needs, Op::Film { h, e, wg, cg, wb, cb }))
    }

    fn film_vectors(
        &self,
        e: NodeId,
        wg: NodeId,
        cg: NodeId,
        wb: NodeId,
        cb: NodeId,
    ) -> (Vec<f64>, Vec<f64>) {
        let ev = self.data(e);
        let d = ev.len();
        let hu = self.data(cg).len();
        let (wgv, cgv) = (self.data(wg), self.data(cg));
        let (wbv, cbv) = (self.data(wb), self.data(cb));
        let mut g = vec![0.0; hu];
        let mut b = vec![0.0; hu];
        for k in 0..hu {
            g[k] = cgv[k] + dot(&wgv[k * d..(k + 1) * d], ev);
            b[k] = cbv[k] + dot(&wbv[k * d..(k + 1) * d], ev);
        }
        (g, b)
    }

    /// Per-frame projection of (frames, hidden) to one logit per frame.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xd = self.dims(x);
        if xd.len() != 2 {
            return Err(NetError::ShapeMismatch(format!(
                "dense expects (frames, hidden) input, got {xd:?}"
            )));
        }
        let (t, hu) = (xd[0], xd[1]);
        if self.dims(w) != [hu] {
            return Err(NetError::ShapeMismatch(format!(
                "dense weight shape {:?} does not match hidden {hu}",
                self.dims(w)
            )));
        }
        if self.dims(b) != [1] {
            return Err(NetError::ShapeMismatch(format!(
                "dense bias shape {:?} is not a scalar",
                self.dims(b)
            )));
        }
        let xv = self.data(x);
        let wv = self.data(w);
        let bias = self.data(b)[0];
        let out: Vec<f64> =
            (0..t).map(|fr| bias + dot(&xv[fr * hu..(fr + 1) * hu], wv)).collect();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::from_vec(vec![t], out)?;
        Ok(self.push(value, needs, Op::Dense { x, w, b }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, NetError> {
        self.check(x)?;
        let out: Vec<f64> = self.data(x).iter().map(|v| sigmoid(*v)).collect();
        let value = Tensor::from_vec(self.dims(x).to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Sigmoid { x }))
    }

    /// Mean binary cross-entropy computed directly from logits via the
    /// overflow-free form max(x, 0) - x*y + ln(1 + exp(-|x|)).
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId, NetError> {
        self.check(logits)?;
        let ld = self.dims(logits);
        if ld.len() != 1 || ld[0] != labels.len() || labels.is_empty() {
            return Err(NetError::ShapeMismatch(format!(
                "loss expects matching non-empty logit/label vectors, got {ld:?} and {}",
                labels.len()
            )));
        }
        if labels.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(NetError::ShapeMismatch("labels must lie in [0, 1]".into()));
        }
        let lv = self.data(logits);
        let mut acc = 0.0;
        for (x, y) in lv.iter().zip(labels) {
            acc += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(acc / labels.len() as f64);
        let needs = self.needs(logits);
        Ok(self.push(value, needs, Op::BceWithLogits { logits, labels: labels.to_vec() }))
    }

    /// Elementwise product; both operands may be the same node.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        self.check(a)?;
        self.check(b)?;
        if self.dims(a) != self.dims(b) {
            return Err(NetError::ShapeMismatch(format!(
                "elementwise product of mismatched shapes {:?} and {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        let out: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(self.dims(a).to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Mul { a, b }))
    }

    /// Fixed-coefficient contraction to a scalar; used to reduce arbitrary
    /// activations to a differentiable objective in tests.
    pub fn weighted_sum(&mut self, x: NodeId, coeffs: &[f64]) -> Result<NodeId, NetError> {
        self.check(x)?;
        if self.data(x).len() != coeffs.len() {
            return Err(NetError::ShapeMismatch(format!(
                "{} coefficients do not match {} elements",
                coeffs.len(),
                self.data(x).len()
            )));
        }
        let value = Tensor::scalar(dot(self.data(x), coeffs));
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::WeightedSum { x, coeffs: coeffs.to_vec() }))
    }

    /// Reverse pass from a scalar root. Returns gradients for every
    /// `requires_grad` leaf reachable from the root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NetError> {
        if root.0 >= self.nodes.len() {
            return Err(NetError::UnknownNode(root.0));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(NetError::NonScalarLoss(self.nodes[root.0].value.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(Tensor::scalar(1.0));
        }
        for idx in (0..=root.0).rev() {
            let Some(gt) = grads[idx].take() else { continue };
            let g = gt.data();
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(gt);
                    continue;
                }
                Op::DepthwiseConv2d { x, w, b, geom } => {
                    self.backward_depthwise(*x, *w, *b, *geom, g, &mut grads);
                }
                Op::PointwiseConv { x, w, b } => {
                    self.backward_pointwise(*x, *w, *b, g, &mut grads);
                }
                Op::BatchNorm { x, gamma, beta, applied } => {
                    self.backward_batch_norm(*x, *gamma, *beta, applied, g, &mut grads);
                }
                Op::Relu { x } => {
                    if self.needs(*x) {
                        let xv = self.data(*x);
                        let dst = ensure(&mut grads[x.0], self.dims(*x));
                        for (k, gv) in g.iter().enumerate() {
                            if xv[k] > 0.0 {
                                dst[k] += gv;
                            }
                        }
                    }
                }
                Op::FlattenFrames { x } => {
                    if self.needs(*x) {
                        let xd = self.dims(*x).to_vec();
                        let (c, t, f) = (xd[0], xd[1], xd[2]);
                        let dst = ensure(&mut grads[x.0], &xd);
                        for ch in 0..c {
                            for fr in 0..t {
                                for bd in 0..f {
                                    dst[(ch * t + fr) * f + bd] += g[fr * (c * f) + ch * f + bd];
                                }
                            }
                        }
                    }
                }
                Op::GruSeq { x, w_ih, w_hh, b_ih, b_hh, saved } => {
                    self.backward_gru(*x, *w_ih, *w_hh, *b_ih, *b_hh, saved, g, &mut grads);
                }
                Op::Film { h, e, wg, cg, wb, cb } => {
                    self.backward_film(*h, *e, *wg, *cg, *wb, *cb, g, &mut grads);
                }
                Op::Dense { x, w, b } => {
                    let xd = self.dims(*x).to_vec();
                    let (t, hu) = (xd[0], xd[1]);
                    let xv = self.data(*x);
                    let wv = self.data(*w);
                    if self.needs(*x) {
                        let dst = ensure(&mut grads[x.0], &xd);
                        for fr in 0..t {
                            for k in 0..hu {
                                dst[fr * hu + k] += g[fr] * wv[k];
                            }
                        }
                    }
                    if self.needs(*w) {
                        let dst = ensure(&mut grads[w.0], &[hu]);
                        for fr in 0..t {
                            for k in 0..hu {
                                dst[k] += g[fr] * xv[fr * hu + k];
                            }
                        }
                    }
                    if self.needs(*b) {
                        ensure(&mut grads[b.0], &[1])[0] += g.iter().sum::<f64>();
                    }
                }
                Op::Sigmoid { x } => {
                    if self.needs(*x) {
                        let yv = self.nodes[idx].value.data();
                        let dst = ensure(&mut grads[x.0], self.dims(*x));
                        for (k, gv) in g.iter().enumerate() {
                            dst[k] += gv * yv[k] * (1.0 - yv[k]);
                        }
                    }
                }
                Op::BceWithLogits { logits, labels } => {
                    if self.needs(*logits) {
                        let lv = self.data(*logits);
                        let scale = g[0] / labels.len() as f64;
                        let dst = ensure(&mut grads[logits.0], &[labels.len()]);
                        for (k, (x, y)) in lv.iter().zip(labels).enumerate() {
                            dst[k] += scale * (sigmoid(*x) - y);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let bv = self.data(*b).to_vec();
                        let dst = ensure(&mut grads[a.0], self.dims(*a));
                        for (k, gv) in g.iter().enumerate() {
                            dst[k] += gv * bv[k];
                        }
                    }
                    if self.needs(*b) {
                        let av = self.data(*a).to_vec();
                        let dst = ensure(&mut grads[b.0], self.dims(*b));
                        for (k, gv) in g.iter().enumerate() {
                            dst[k] += gv * av[k];
                        }
                    }
                }
                Op::WeightedSum { x, coeffs } => {
                    if self.needs(*x) {
                        let dst = ensure(&mut grads[x.0], self.dims(*x));
                        for (k, c) in coeffs.iter().enumerate() {
                            dst[k] += g[0] * c;
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_depthwise(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        g: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let xd = self.dims(x).to_vec();
        let (c, t, f) = (xd[0], xd[1], xd[2]);
        let to = geom.out_time(t).unwrap();
        let fo = geom.out_freq(f).unwrap();
        let xv = self.data(x);
        let wv = self.data(w);
        let wd = [c, geom.kernel_time, geom.kernel_freq];
        let (need_x, need_w, need_b) = (self.needs(x), self.needs(w), self.needs(b));
        if need_b {
            let dst = ensure(&mut grads[b.0], &[c]);
            for ch in 0..c {
                dst[ch] += g[ch * to * fo..(ch + 1) * to * fo].iter().sum::<f64>();
            }
        }
        if !need_x && !need_w {
            return;
        }
        let mut dx = vec![0.0; if need_x { c * t * f } else { 0 }];
        let mut dw = vec![0.0; if need_w { c * geom.kernel_time * geom.kernel_freq } else { 0 }];
        for ch in 0..c {
            for ot in 0..to {
                for of in 0..fo {
                    let gv = g[(ch * to + ot) * fo + of];
                    if gv == 0.0 {
                        continue;
                    }
                    for kt in 0..geom.kernel_time {
                        let it = (ot * geom.stride_time + kt) as isize
                            - geom.pad_time_left as isize;
                        if it < 0 || it as usize >= t {
                            continue;
                        }
                        for kf in 0..geom.kernel_freq {
                            let fi = (of * geom.stride_freq + kf) as isize
                                - geom.pad_freq as isize;
                            if fi < 0 || fi as usize >= f {
                                continue;
                            }
                            let wi = (ch * geom.kernel_time + kt) * geom.kernel_freq + kf;
                            let xi = (ch * t + it as usize) * f + fi as usize;
                            if need_x {
                                dx[xi] += gv * wv[wi];
                            }
                            if need_w {
                                dw[wi] += gv * xv[xi];
                            }
                        }
                    }
                }
            }
        }
        if need_x {
            accumulate(&mut grads[x.0], &xd, &dx);
        }
        if need_w {
            accumulate(&mut grads[w.0], &wd, &dw);
        }
    }

    fn backward_pointwise(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        g: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let xd = self.dims(x).to_vec();
        let (ci, plane) = (xd[0], xd[1] * xd[2]);
        let co = self.dims(w)[0];
        let xv = self.data(x);
        let wv = self.data(w);
        if self.needs(b) {
            let dst = ensure(&mut grads[b.0], &[co]);
            for o in 0..co {
                dst[o] += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
            }
        }
        if self.needs(w) {
            let dst = ensure(&mut grads[w.0], &[co, ci]);
            for o in 0..co {
                let go = &g[o * plane..(o + 1) * plane];
                for i in 0..ci {
                    dst[o * ci + i] += dot(go, &xv[i * plane..(i + 1) * plane]);
                }
            }
        }
        if self.needs(x) {
            let dst = ensure(&mut grads[x.0], &xd);
            for o in 0..co {
                let go = &g[o * plane..(o + 1) * plane];
                for i in 0..ci {
                    let wk = wv[o * ci + i];
                    let dst_i = &mut dst[i * plane..(i + 1) * plane];
                    for (d, gv) in dst_i.iter_mut().zip(go) {
                        *d += wk * gv;
                    }
                }
            }
        }
    }

    fn backward_batch_norm(
        &self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        applied: &BnApplied,
        g: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let xd = self.dims(x).to_vec();
        let (c, plane) = (xd[0], xd[1] * xd[2]);
        let xv = self.data(x);
        let gv = self.data(gamma);
        if self.needs(beta) {
            let dst = ensure(&mut grads[beta.0], &[c]);
            for ch in 0..c {
                dst[ch] += g[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        if self.needs(gamma) {
            let dst = ensure(&mut grads[gamma.0], &[c]);
            for ch in 0..c {
                let (m, s) = (applied.mean[ch], applied.inv_std[ch]);
                let mut acc = 0.0;
                for p in 0..plane {
                    acc += g[ch * plane + p] * (xv[ch * plane + p] - m) * s;
                }
                dst[ch] += acc;
            }
        }
        if self.needs(x) {
            let dst = ensure(&mut grads[x.0], &xd);
            for ch in 0..c {
                let (m, s) = (applied.mean[ch], applied.inv_std[ch]);
                let scale = gv[ch] * s;
                if applied.train_mode {
                    // Batch statistics depend on x, so the gradient removes
                    // the per-channel mean of g and the x_hat-weighted mean.
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for p in 0..plane {
                        let xh = (xv[ch * plane + p] - m) * s;
                        sum_g += g[ch * plane + p];
                        sum_gx += g[ch * plane + p] * xh;
                    }
                    let mean_g = sum_g / plane as f64;
                    let mean_gx = sum_gx / plane as f64;
                    for p in 0..plane {
                        let xh = (xv[ch * plane + p] - m) * s;
                        dst[ch * plane + p] +=
                            scale * (g[ch * plane + p] - mean_g - xh * mean_gx);
                    }
                } else {
                    for p in 0..plane {
                        dst[ch * plane + p] += scale * g[ch * plane + p];
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_gru(
        &self,
        x: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        b_ih: NodeId,
        b_hh: NodeId,
        saved: &GruSaved,
        g: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let xd = self.dims(x).to_vec();
        let (t, i) = (xd[0], xd[1]);
        let h = saved.hidden;
        let xv = self.data(x);
        let wih = self.data(w_ih);
        let whh = self.data(w_hh);

        let need_x = self.needs(x);
        let mut dx = vec![0.0; if need_x { t * i } else { 0 }];
        let mut dwih = vec![0.0; 3 * h * i];
        let mut dwhh = vec![0.0; 3 * h * h];
        let mut dbih = vec![0.0; 3 * h];
        let mut dbhh = vec![0.0; 3 * h];

        let mut dh_next = vec![0.0; h];
        let mut dgi = vec![0.0; 3 * h];
        let mut dgh = vec![0.0; 3 * h];
        for step in (0..t).rev() {
            let hp = &saved.h[step * h..(step + 1) * h];
            for k in 0..h {
                let dh = g[step * h + k] + dh_next[k];
                let r = saved.r[step * h + k];
                let z = saved.z[step * h + k];
                let n = saved.n[step * h + k];
                let ghn = saved.gh_n[step * h + k];
                let dz = dh * (hp[k] - n) * z * (1.0 - z);
                let dn = dh * (1.0 - z) * (1.0 - n * n);
                let dr = dn * ghn * r * (1.0 - r);
                dgi[k] = dr;
                dgi[h + k] = dz;
                dgi[2 * h + k] = dn;
                dgh[k] = dr;
                dgh[h + k] = dz;
                dgh[2 * h + k] = dn * r;
                dh_next[k] = dh * z;
            }
            let xt = &xv[step * i..(step + 1) * i];
            for row in 0..3 * h {
                let d = dgi[row];
                if d != 0.0 {
                    let dst = &mut dwih[row * i..(row + 1) * i];
                    for (w, xk) in dst.iter_mut().zip(xt) {
                        *w += d * xk;
                    }
                }
                dbih[row] += d;
                let dh = dgh[row];
                if dh != 0.0 {
                    let dst = &mut dwhh[row * h..(row + 1) * h];
                    for (w, hk) in dst.iter_mut().zip(hp) {
                        *w += dh * hk;
                    }
                }
                dbhh[row] += dh;
            }
            if need_x {
                let dst = &mut dx[step * i..(step + 1) * i];
                for row in 0..3 * h {
                    let d = dgi[row];
                    if d != 0.0 {
                        let wrow = &wih[row * i..(row + 1) * i];
                        for (dk, wk) in dst.iter_mut().zip(wrow) {
                            *dk += d * wk;
                        }
                    }
                }
            }
            for row in 0..3 * h {
                let d = dgh[row];
                if d != 0.0 {
                    let wrow = &whh[row * h..(row + 1) * h];
                    for (dk, wk) in dh_next.iter_mut().zip(wrow) {
                        *dk += d * wk;
                    }
                }
            }
        }
        if need_x {
            accumulate(&mut grads[x.0], &xd, &dx);
        }
        if self.needs(w_ih) {
            accumulate(&mut grads[w_ih.0], &[3 * h, i], &dwih);
        }
        if self.needs(w_hh) {
            accumulate(&mut grads[w_hh.0], &[3 * h, h], &dwhh);
        }
        if self.needs(b_ih) {
            accumulate(&mut grads[b_ih.0], &[3 * h], &dbih);
        }
        if self.needs(b_hh) {
            accumulate(&mut grads[b_hh.0], &[3 * h], &dbhh);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_film(
        &self,
        h: NodeId,
        e: NodeId,
        wg: NodeId,
        cg: NodeId,
        wb: NodeId,
        cb: NodeId,
        g: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let hd = self.dims(h).to_vec();
        let (t, hu) = (hd[0], hd[1]);
        let ev = self.data(e);
        let d = ev.len();
        let hv = self.data(h);
        let (gvec, _) = self.film_vectors(e, wg, cg, wb, cb);

        // dg[k] collects gradient through the scale path, db[k] through the
        // shift path; both then fan out to their affine parameters.
        let mut dg = vec![0.0; hu];
        let mut db = vec![0.0; hu];
        for fr in 0..t {
            for k in 0..hu {
                dg[k] += g[fr * hu + k] * hv[fr * hu + k];
                db[k] += g[fr * hu + k];
            }
        }
        if self.needs(h) {
            let dst = ensure(&mut grads[h.0], &hd);
            for fr in 0..t {
                for k in 0..hu {
                    dst[fr * hu + k] += g[fr * hu + k] * gvec[k];
                }
            }
        }
        if self.needs(wg) {
            let dst = ensure(&mut grads[wg.0], &[hu, d]);
            for k in 0..hu {
                for j in 0..d {
                    dst[k * d + j] += dg[k] * ev[j];
                }
            }
        }
        if self.needs(cg) {
            let dst = ensure(&mut grads[cg.0], &[hu]);
            for k in 0..hu {
                dst[k] += dg[k];
            }
        }
        if self.needs(wb) {
            let dst = ensure(&mut grads[wb.0], &[hu, d]);
            for k in 0..hu {
                for j in 0..d {
                    dst[k * d + j] += db[k] * ev[j];
                }
            }
        }
        if self.needs(cb) {
            let dst = ensure(&mut grads[cb.0], &[hu]);
            for k in 0..hu {
                dst[k] += db[k];
            }
        }
        if self.needs(e) {
            let wgv = self.data(wg);
            let wbv = self.data(wb);
            let dst = ensure(&mut grads[e.0], &[d]);
            for k in 0..hu {
                for j in 0..d {
                    dst[j] += dg[k] * wgv[k * d + j] + db[k] * wbv[k * d + j];
                }
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Initializes the gradient slot to zeros on first touch and returns the
/// mutable payload for accumulation.
fn ensure<'a>(slot: &'a mut Option<Tensor>, dims: &[usize]) -> &'a mut [f64] {
    if slot.is_none() {
        *slot = Some(Tensor::zeros(dims));
    }
    slot.as_mut().unwrap().data_mut()
}

fn accumulate(slot: &mut Option<Tensor>, dims: &[usize], contrib: &[f64]) {
    let dst = ensure(slot, dims);
    for (d, c) in dst.iter_mut().zip(contrib) {
        *d += c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, NetError::NonScalarLoss(_)));
    }

    #[test]
    fn backward_rejects_unknown_node() {
        let tape = Tape::new();
        let err = tape.backward(NodeId(0)).unwrap_err();
        assert!(matches!(err, NetError::UnknownNode(0)));
    }

    #[test]
    fn square_via_repeated_operand_gives_two_x() {
        // x*x at x=3: the two product paths must accumulate to 6.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let sq = tape.mul(x, x).unwrap();
        assert_eq!(tape.value(sq).data()[0], 9.0);
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().data()[0], 6.0);
    }

    #[test]
    fn gradient_skips_untracked_leaves() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(2.0), false);
        let b = tape.leaf(Tensor::scalar(5.0), true);
        let p = tape.mul(a, b).unwrap();
        let grads = tape.backward(p).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data()[0], 2.0);
    }

    #[test]
    fn stable_sigmoid_handles_extreme_logits() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) > 0.0 || sigmoid(-800.0) == 0.0);
        assert!(sigmoid(-800.0).is_finite());
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
