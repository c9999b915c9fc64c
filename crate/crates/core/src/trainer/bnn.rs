//! Fully connected binarized network: ±1 weights, ±1 hidden activations,
//! batch-normalization thresholds, and straight-through gradients for the
//! hidden real weights.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use crate::array::{ArrayError, SynapseArray};

/// Sign with the tie resolved toward +1.
#[inline]
pub fn sign(x: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `+1` where `pre - delta >= 0`, else `-1`.
pub fn binarize_activation(pre: &[f32], delta: &[f32]) -> Vec<f32> {
    assert_eq!(pre.len(), delta.len(), "pre-activation and threshold lengths differ");
    pre.iter().zip(delta).map(|(p, d)| sign(p - d)).collect()
}

/// Pack a ±1 vector into bits (1 for +1), least significant bit first.
pub fn pack_signs(v: &[f32]) -> Vec<u64> {
    let mut out = vec![0u64; v.len().div_ceil(64)];
    for (i, &x) in v.iter().enumerate() {
        if x >= 0.0 {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

/// Number of positions among the first `k` where the two packed vectors agree.
pub fn popcount_xnor(a: &[u64], b: &[u64], k: usize) -> u32 {
    let mut count = 0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let mut agree = !(x ^ y);
        let remaining = k.saturating_sub(i * 64);
        if remaining < 64 {
            agree &= (1u64 << remaining) - 1;
        }
        count += agree.count_ones();
    }
    count
}

/// Batch normalization with running statistics.
///
/// Hidden layers keep `gamma = 1` so that the normalization folds into a single
/// per-unit threshold on the integer pre-activation.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub learn_gamma: bool,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm {
    pub fn new(units: usize, learn_gamma: bool) -> Self {
        Self {
            gamma: Array1::ones(units),
            beta: Array1::zeros(units),
            running_mean: Array1::zeros(units),
            running_var: Array1::ones(units),
            learn_gamma,
            momentum: 0.1,
            eps: 1e-4,
        }
    }

    pub fn update_running(&mut self, mean: &Array1<f32>, var: &Array1<f32>) {
        let m = self.momentum;
        Zip::from(&mut self.running_mean)
            .and(mean)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
        Zip::from(&mut self.running_var)
            .and(var)
            .for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
    }

    /// Inference thresholds `delta = mu - beta * sigma` on the raw pre-activation.
    pub fn thresholds(&self) -> Array1<f32> {
        let mut d = Array1::zeros(self.beta.len());
        Zip::from(&mut d)
            .and(&self.running_mean)
            .and(&self.running_var)
            .and(&self.beta)
            .and(&self.gamma)
            .for_each(|d, &mu, &var, &b, &g| *d = mu - b * (var + self.eps).sqrt() / g);
        d
    }
}

/// Where a layer's hidden real weights live.
#[derive(Debug, Clone)]
pub enum Synapses {
    Float,
    Device(Box<SynapseArray>),
}

/// One fully connected binarized layer (`fan_out x fan_in`).
#[derive(Debug, Clone)]
pub struct BnnLinearLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Hidden real weights; in device mode a cache of the array's log-ratio weights.
    real: Array2<f32>,
    /// Sign readout used by every forward pass.
    binary: Array2<f32>,
    pub synapses: Synapses,
    pub bn: BatchNorm,
    /// Final layer: real scores instead of ±1 activations.
    pub is_output: bool,
}

impl BnnLinearLayer {
    pub fn float(real: Array2<f32>, is_output: bool) -> Self {
        let (fan_out, fan_in) = real.dim();
        let binary = real.mapv(sign);
        Self {
            fan_in,
            fan_out,
            real,
            binary,
            synapses: Synapses::Float,
            bn: BatchNorm::new(fan_out, is_output),
            is_output,
        }
    }

    pub fn device(array: SynapseArray, is_output: bool) -> Result<Self, ArrayError> {
        let (fan_out, fan_in) = (array.rows(), array.cols());
        let mut layer = Self {
            fan_in,
            fan_out,
            real: Array2::zeros((fan_out, fan_in)),
            binary: Array2::zeros((fan_out, fan_in)),
            synapses: Synapses::Device(Box::new(array)),
            bn: BatchNorm::new(fan_out, is_output),
            is_output,
        };
        layer.refresh_all()?;
        Ok(layer)
    }

    pub fn real_weights(&self) -> &Array2<f32> {
        &self.real
    }

    pub fn binary_weights(&self) -> &Array2<f32> {
        &self.binary
    }

    pub fn device_array(&self) -> Option<&SynapseArray> {
        match &self.synapses {
            Synapses::Device(a) => Some(a),
            Synapses::Float => None,
        }
    }

    /// Overwrite float weights (float mode only).
    pub fn set_real_weights(&mut self, real: Array2<f32>) {
        assert!(matches!(self.synapses, Synapses::Float), "device weights change only through pulses");
        assert_eq!(real.dim(), self.real.dim());
        self.binary = real.mapv(sign);
        self.real = real;
    }

    fn refresh_all(&mut self) -> Result<(), ArrayError> {
        if let Synapses::Device(array) = &self.synapses {
            let real = array.real_weights()?;
            let bin = array.binary_weights()?;
            for (i, (r, b)) in real.iter().zip(&bin).enumerate() {
                let (row, col) = (i / self.fan_in, i % self.fan_in);
                self.real[[row, col]] = *r as f32;
                self.binary[[row, col]] = f32::from(*b);
            }
        }
        Ok(())
    }

    /// Apply a real-valued update. Float mode adds it and clips to `[-clip, clip]`;
    /// device mode converts it to pulses and returns the number of pulses issued.
    pub fn apply_delta(&mut self, delta: &[f32], pulse_gain: f64, clip: f32) -> Result<u64, ArrayError> {
        match self.synapses {
            Synapses::Float => {
                let delta = ArrayView2::from_shape(self.real.dim(), delta).map_err(|_| ArrayError::GridShape {
                    got: delta.len(),
                    expected: self.real.len(),
                })?;
                Zip::from(&mut self.real)
                    .and(&mut self.binary)
                    .and(delta)
                    .for_each(|w, b, &d| {
                        *w = (*w + d).clamp(-clip, clip);
                        *b = sign(*w);
                    });
                Ok(0)
            }
            Synapses::Device(_) => {
                let grid: Vec<i64> = delta
                    .iter()
                    .map(|&d| super::optim::quantize_update(f64::from(d), pulse_gain))
                    .collect();
                self.apply_pulses(&grid)
            }
        }
    }

    /// Send a row-major grid of signed pulse counts to the array and refresh the
    /// cached readouts of the touched cells. Returns the number of pulses issued.
    pub fn apply_pulses(&mut self, grid: &[i64]) -> Result<u64, ArrayError> {
        let Synapses::Device(array) = &mut self.synapses else {
            panic!("pulses need a device-backed layer");
        };
        array.apply_pulse_grid(grid)?;
        let mut issued = 0u64;
        for (i, &n) in grid.iter().enumerate() {
            if n == 0 {
                continue;
            }
            issued += n.unsigned_abs();
            let (row, col) = (i / self.fan_in, i % self.fan_in);
            self.real[[row, col]] = array.real_weight(row, col)? as f32;
            self.binary[[row, col]] = f32::from(array.binary_weight(row, col)?);
        }
        Ok(issued)
    }
}

/// Intermediate values of one layer's training-mode forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Array2<f32>,
    pub xhat: Array2<f32>,
    pub inv_std: Array1<f32>,
    pub y: Array2<f32>,
    pub batch_mean: Array1<f32>,
    pub batch_var: Array1<f32>,
}

/// Training-mode pass through one layer with batch statistics. Returns the layer output.
pub fn layer_forward_train(
    layer: &BnnLinearLayer,
    weights: ArrayView2<f32>,
    input: Array2<f32>,
) -> (Array2<f32>, LayerCache) {
    let pre = input.dot(&weights.t());
    let b = pre.nrows() as f32;
    let mean = pre.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &pre - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
    let inv_std = var.mapv(|v| 1.0 / (v + layer.bn.eps).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * &layer.bn.gamma + &layer.bn.beta;
    let out = if layer.is_output { y.clone() } else { y.mapv(sign) };
    (
        out,
        LayerCache {
            input,
            xhat,
            inv_std,
            y,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Inference pass: hidden layers threshold the integer pre-activation, the output
/// layer normalizes with running statistics.
pub fn layer_forward_infer(layer: &BnnLinearLayer, input: &Array2<f32>) -> Array2<f32> {
    let pre = input.dot(&layer.binary.t());
    if layer.is_output {
        let bn = &layer.bn;
        let mut out = pre;
        for mut row in out.rows_mut() {
            Zip::from(&mut row)
                .and(&bn.running_mean)
                .and(&bn.running_var)
                .and(&bn.gamma)
                .and(&bn.beta)
                .for_each(|x, &mu, &var, &g, &b| *x = g * (*x - mu) / (var + bn.eps).sqrt() + b);
        }
        out
    } else {
        let delta = layer.bn.thresholds();
        let mut out = pre;
        for mut row in out.rows_mut() {
            Zip::from(&mut row).and(&delta).for_each(|x, &d| *x = sign(*x - d));
        }
        out
    }
}

/// Gradients of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    /// With respect to the binary weights; the straight-through estimator reuses it for the real weights.
    pub weights: Array2<f32>,
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

/// Backward through batch norm and the binary matmul; returns (grads, d_input).
///
/// Hidden layers pass the gradient through `sign` where the normalized value lies
/// within `[-act_window, act_window]`.
pub fn layer_backward(
    layer: &BnnLinearLayer,
    weights: ArrayView2<f32>,
    cache: &LayerCache,
    d_out: Array2<f32>,
    act_window: f32,
) -> (LayerGrads, Array2<f32>) {
    let dy = if layer.is_output {
        d_out
    } else {
        let mut d = d_out;
        Zip::from(&mut d).and(&cache.y).for_each(|d, &y| {
            if y.abs() > act_window {
                *d = 0.0
            }
        });
        d
    };
    let b = dy.nrows() as f32;
    let d_beta = dy.sum_axis(Axis(0));
    let d_gamma = if layer.bn.learn_gamma {
        (&dy * &cache.xhat).sum_axis(Axis(0))
    } else {
        Array1::zeros(layer.fan_out)
    };
    let dxhat = &dy * &layer.bn.gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut d_pre = &dxhat * b - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
    d_pre *= &(&cache.inv_std / b);
    let d_w = d_pre.t().dot(&cache.input);
    let d_in = d_pre.dot(&weights);
    (
        LayerGrads {
            weights: d_w,
            gamma: d_gamma,
            beta: d_beta,
        },
        d_in,
    )
}

/// Zero the gradient of every weight whose real value lies outside `[-clip, clip]`.
pub fn ste_clip(grads: &mut Array2<f32>, real: &Array2<f32>, clip: f32) {
    Zip::from(grads).and(real).for_each(|g, &w| {
        if w.abs() > clip {
            *g = 0.0
        }
    });
}

/// Mean cross-entropy of softmax(logits) and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f32>, labels: &[u8]) -> (f32, Array2<f32>) {
    let b = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0f64;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f32::NEG_INFINITY, |a, &v| a.max(v));
        let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let label = usize::from(labels[i]);
        loss += z.ln() - f64::from(row[label] - max);
        let mut g = grad.slice_mut(s![i, ..]);
        for (k, e) in exps.iter().enumerate() {
            let p = e / z;
            g[k] = ((p - if k == label { 1.0 } else { 0.0 }) / b as f64) as f32;
        }
    }
    ((loss / b as f64) as f32, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_activation(&[0.5, -2.0], &[0.5, -2.0]), vec![1.0, 1.0]);
        assert_eq!(binarize_activation(&[3.0, -2.0], &[0.0, 0.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn popcount_xnor_equals_signed_dot() {
        // popcount(XNOR) over k positions = (dot + k) / 2 for ±1 vectors.
        let mut rng = seeded(21);
        for _ in 0..2000 {
            let k = 64;
            let w: Vec<f32> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let a: Vec<f32> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let dot: f32 = w.iter().zip(&a).map(|(x, y)| x * y).sum();
            let pc = popcount_xnor(&pack_signs(&w), &pack_signs(&a), k) as f32;
            assert_eq!(pc, (dot + k as f32) / 2.0);
            // Threshold on the popcount maps to a threshold on the dot product.
            let delta: f32 = rng.random_range(0.0..64.0);
            assert_eq!(sign(pc - delta), sign(dot - (2.0 * delta - k as f32)));
        }
    }

    #[test]
    fn popcount_masks_tail() {
        let v = vec![1.0f32; 70];
        let w = vec![1.0f32; 70];
        assert_eq!(popcount_xnor(&pack_signs(&v), &pack_signs(&w), 70), 70);
    }

    #[test]
    fn all_plus_one_pre_activation_is_k() {
        let k = 9;
        let layer = BnnLinearLayer::float(Array2::from_elem((4, k), 0.3), false);
        let x = Array2::from_elem((2, k), 1.0);
        let pre = x.dot(&layer.binary_weights().t());
        assert!(pre.iter().all(|&v| v == k as f32));
    }

    #[test]
    fn flipping_one_input_changes_pre_activation_by_two() {
        let mut rng = seeded(2);
        let w = Array2::from_shape_fn((5, 12), |_| rng.random::<f32>() - 0.5);
        let layer = BnnLinearLayer::float(w, false);
        let x = Array2::from_shape_fn((1, 12), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let mut x2 = x.clone();
        x2[[0, 4]] *= -1.0;
        let d = x.dot(&layer.binary_weights().t()) - x2.dot(&layer.binary_weights().t());
        assert!(d.iter().all(|v| v.abs() == 2.0));
    }

    #[test]
    fn clipped_weights_get_no_gradient() {
        let mut g = array![[0.5f32, -0.2], [1.0, 3.0]];
        let real = array![[1.5f32, -0.3], [-1.0, -2.0]];
        ste_clip(&mut g, &real, 1.0);
        assert_eq!(g, array![[0.0f32, -0.2], [1.0, 0.0]]);
    }

    #[test]
    fn softmax_gradient_shift_invariant() {
        let logits = array![[1.0f32, -0.5, 2.0], [0.1, 0.2, 0.3]];
        let shifted = &logits + 7.5;
        let (l1, g1) = softmax_cross_entropy(&logits, &[2, 0]);
        let (l2, g2) = softmax_cross_entropy(&shifted, &[2, 0]);
        assert!((l1 - l2).abs() < 1e-5);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Loss of a single output layer evaluated with arbitrary (continuous) weights.
    fn toy_loss(layer: &BnnLinearLayer, w: &Array2<f32>, x: &Array2<f32>, labels: &[u8]) -> f64 {
        let (out, _) = layer_forward_train(layer, w.view(), x.clone());
        f64::from(softmax_cross_entropy(&out, labels).0)
    }

    #[test]
    fn ste_gradient_matches_surrogate_finite_differences() {
        // Two inputs, two classes, one output layer.
        let real = array![[0.3f32, -0.2], [-0.4, 0.1]];
        let layer = BnnLinearLayer::float(real.clone(), true);
        let x = array![[1.0f32, -1.0], [1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let labels = [0u8, 1, 1, 0];
        let wb = layer.binary_weights().clone();
        let (out, cache) = layer_forward_train(&layer, wb.view(), x.clone());
        let (_, d_out) = softmax_cross_entropy(&out, &labels);
        let (grads, _) = layer_backward(&layer, wb.view(), &cache, d_out, 1.0);

        let base = toy_loss(&layer, &wb, &x, &labels);
        for i in 0..2 {
            for j in 0..2 {
                // The true loss is flat in the real weight while no sign flips.
                let mut r = real.clone();
                r[[i, j]] += 1e-3;
                let flipped = r.mapv(sign);
                assert_eq!(toy_loss(&layer, &flipped, &x, &labels), base);

                // Surrogate: the binary weight itself treated as continuous.
                let h = 1e-2f32;
                let mut wp = wb.clone();
                wp[[i, j]] += h;
                let mut wm = wb.clone();
                wm[[i, j]] -= h;
                let fd = (toy_loss(&layer, &wp, &x, &labels) - toy_loss(&layer, &wm, &x, &labels)) / (2.0 * f64::from(h));
                let g = f64::from(grads.weights[[i, j]]);
                assert!((fd - g).abs() < 2e-3 * (1.0 + g.abs()), "({i},{j}): fd {fd} vs {g}");
            }
        }
    }

    #[test]
    fn hidden_inference_thresholds_match_training_normalization() {
        // With running stats equal to the batch stats, thresholding the raw
        // pre-activation reproduces sign(BN(pre)).
        let mut rng = seeded(3);
        let w = Array2::from_shape_fn((6, 30), |_| rng.random::<f32>() - 0.5);
        let mut layer = BnnLinearLayer::float(w, false);
        layer.bn.beta = Array1::from_shape_fn(6, |_| rng.random::<f32>() - 0.5);
        let x = Array2::from_shape_fn((40, 30), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let wb = layer.binary_weights().clone();
        let (out, cache) = layer_forward_train(&layer, wb.view(), x.clone());
        layer.bn.running_mean = cache.batch_mean.clone();
        layer.bn.running_var = cache.batch_var.clone();
        let inf = layer_forward_infer(&layer, &x);
        let mismatches = out.iter().zip(&inf).filter(|(a, b)| a != b).count();
        // Only exact threshold ties can differ by float rounding.
        assert!(mismatches <= 2, "{mismatches}");
    }
}
