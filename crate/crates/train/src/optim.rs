//! Adam, global gradient-norm clipping, and the plateau learning-rate rule.

use coher_net::Tensor;

use crate::TrainError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter tensor.
/// Moments are f32-quantized after every update so checkpointed optimizer
/// state round-trips bitwise.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments for parameters of the given shapes.
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|d| Tensor::zeros(d)).collect(),
            v: shapes.iter().map(|d| Tensor::zeros(d)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn tensor_count(&self) -> usize {
        self.m.len()
    }

    pub fn moments(&self, k: usize) -> (&Tensor, &Tensor) {
        (&self.m[k], &self.v[k])
    }

    /// Advances the shared step counter; call once per optimizer step,
    /// before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the bias-corrected Adam update to one parameter tensor.
    pub fn update_tensor(
        &mut self,
        k: usize,
        lr: f64,
        param: &mut Tensor,
        grad: &Tensor,
    ) -> Result<(), TrainError> {
        if k >= self.m.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "optimizer has {} tensors, index {k} requested",
                self.m.len()
            )));
        }
        if param.dims() != grad.dims() || param.dims() != self.m[k].dims() {
            return Err(TrainError::ShapeMismatch(format!(
                "parameter {:?}, gradient {:?}, and moment {:?} shapes disagree",
                param.dims(),
                grad.dims(),
                self.m[k].dims()
            )));
        }
        if self.step == 0 {
            return Err(TrainError::BadConfig("begin_step must run before updates".into()));
        }
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let m = self.m[k].data_mut();
        let v = self.v[k].data_mut();
        let p = param.data_mut();
        let g = grad.data();
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        self.m[k].quantize_f32();
        self.v[k].quantize_f32();
        param.quantize_f32();
        Ok(())
    }
}

/// One full Adam step over aligned parameter and gradient slices.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.tensor_count() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.tensor_count()
        )));
    }
    state.begin_step();
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update_tensor(k, lr, p, g)?;
    }
    Ok(())
}

/// Scales gradients in place so their global L2 norm does not exceed
/// `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> Result<f64, TrainError> {
    let mut sq = 0.0;
    for g in grads.iter() {
        for v in g.data() {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteGradient);
            }
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// Plateau rule: halve (multiply by `lr_factor`) when the best validation
/// loss has gone `plateau_epochs` consecutive epochs without strict
/// improvement; the stagnation counter then resets.
///
/// The rule is replayed over the whole history, so the caller passes the
/// losses of all epochs so far (latest last) once per epoch and applies the
/// returned rate to the next epoch.
pub fn lr_schedule_step(
    history: &[f64],
    current_lr: f64,
    plateau_epochs: usize,
    lr_factor: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut halve_now = false;
    for &loss in history {
        if loss < best {
            best = loss;
            stagnant = 0;
            halve_now = false;
        } else {
            stagnant += 1;
            if stagnant >= plateau_epochs {
                halve_now = true;
                stagnant = 0;
            } else {
                halve_now = false;
            }
        }
    }
    if halve_now {
        current_lr * lr_factor
    } else {
        current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params[0].clone();
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(&[vec![3]]);
        adam_step(&mut params, &grads, &mut state, 0.001).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With constant gradient g, bias correction makes m_hat = g and
        // v_hat = g^2 at t = 1, so the update is -lr * g/(|g| + eps).
        for g in [0.7, -0.3, 12.0] {
            let mut params = vec![Tensor::scalar(1.0)];
            let grads = vec![Tensor::scalar(g)];
            let mut state = AdamState::new(&[vec![1]]);
            adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
            let moved = params[0].data()[0] - 1.0;
            let expect = -0.01 * g.signum();
            assert!(
                (moved - expect).abs() < 1e-6,
                "grad {g}: moved {moved}, expected {expect}"
            );
        }
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut params = vec![Tensor::zeros(&[3])];
        let grads = vec![Tensor::zeros(&[4])];
        let mut state = AdamState::new(&[vec![3]]);
        assert!(adam_step(&mut params, &grads, &mut state, 0.001).is_err());
    }

    #[test]
    fn moments_and_params_stay_f32_exact() {
        let mut params = vec![Tensor::from_vec(vec![2], vec![0.25, -1.5]).unwrap()];
        let grads = vec![Tensor::from_vec(vec![2], vec![0.1, 0.3]).unwrap()];
        let mut state = AdamState::new(&[vec![2]]);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        }
        for v in params[0].data() {
            assert_eq!(*v, *v as f32 as f64);
        }
        let (m, v) = state.moments(0);
        for x in m.data().iter().chain(v.data()) {
            assert_eq!(*x, *x as f32 as f64);
        }
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = vec![Tensor::from_vec(vec![2], vec![1.2, 1.6]).unwrap()];
        let norm = clip_grad_norm(&mut grads, 3.0).unwrap();
        assert!((norm - 2.0).abs() < 1e-12);
        assert_eq!(grads[0].data(), &[1.2, 1.6]);
    }

    #[test]
    fn clip_scales_norm_six_by_half() {
        let mut grads = vec![
            Tensor::from_vec(vec![2], vec![3.6, 0.0]).unwrap(),
            Tensor::from_vec(vec![1], vec![4.8]).unwrap(),
        ];
        let norm = clip_grad_norm(&mut grads, 3.0).unwrap();
        assert!((norm - 6.0).abs() < 1e-12);
        assert!((grads[0].data()[0] - 1.8).abs() < 1e-12);
        assert!((grads[1].data()[0] - 2.4).abs() < 1e-12);
        let post: f64 = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((post - 3.0).abs() < 1e-9);
    }

    #[test]
    fn clip_passes_zero_and_rejects_non_finite() {
        let mut zero = vec![Tensor::zeros(&[4])];
        assert_eq!(clip_grad_norm(&mut zero, 3.0).unwrap(), 0.0);
        let mut bad = vec![Tensor::from_vec(vec![1], vec![f64::NAN]).unwrap()];
        let err = clip_grad_norm(&mut bad, 3.0).unwrap_err();
        assert_eq!(err.to_string(), "non-finite gradient");
    }

    #[test]
    fn improving_losses_keep_the_rate() {
        assert_eq!(lr_schedule_step(&[1.0, 0.9, 0.8], 0.001, 3, 0.5), 0.001);
    }

    #[test]
    fn three_stagnant_epochs_past_the_best_halve() {
        // Epoch 1 sets the best; epochs 2-4 stagnate, so the rate halves
        // after epoch 4.
        assert_eq!(lr_schedule_step(&[1.0, 1.0, 1.0], 0.001, 3, 0.5), 0.001);
        assert_eq!(lr_schedule_step(&[1.0, 1.0, 1.0, 1.0], 0.001, 3, 0.5), 0.0005);
    }

    #[test]
    fn improvement_resets_the_counter() {
        assert_eq!(lr_schedule_step(&[1.0, 1.0, 1.0, 0.9], 0.001, 3, 0.5), 0.001);
        assert_eq!(lr_schedule_step(&[1.0, 1.0, 0.9], 0.001, 3, 0.5), 0.001);
    }

    #[test]
    fn halving_resets_the_counter_too() {
        // After the halving at epoch 4, epochs 5-6 alone are not enough
        // stagnation to halve again; epoch 7 is.
        let h6 = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(lr_schedule_step(&h6, 0.0005, 3, 0.5), 0.0005);
        let h7 = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(lr_schedule_step(&h7, 0.0005, 3, 0.5), 0.00025);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        // Strictly-lower comparison: a tie counts as stagnation.
        assert_eq!(lr_schedule_step(&[0.5, 0.5, 0.5, 0.5], 0.001, 3, 0.5), 0.0005);
    }
}
