//! Adaptive moment estimation and conversion of real updates into pulse counts.

/// First/second moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl MomentState {
    pub fn new(len: usize, beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[f32] {
        &self.v
    }

    /// Bias-corrected step `-lr * m_hat / (sqrt(v_hat) + eps)`, written into `delta`.
    pub fn update(&mut self, grads: &[f32], lr: f32, delta: &mut [f32]) {
        assert_eq!(grads.len(), self.m.len(), "gradient length");
        assert_eq!(delta.len(), self.m.len(), "delta length");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - f64::from(self.beta1).powi(t);
        let bc2 = 1.0 - f64::from(self.beta2).powi(t);
        let step_size = (f64::from(lr) / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((m, v), &g), d) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grads).zip(delta.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *d = -step_size * *m / (v.sqrt() / bc2_sqrt + eps);
        }
    }
}

/// `sign(delta) * floor(|delta| * pulse_gain)`: sub-pulse updates are dropped.
pub fn quantize_update(delta: f64, pulse_gain: f64) -> i64 {
    let n = (delta.abs() * pulse_gain).floor();
    if delta < 0.0 {
        -(n as i64)
    } else {
        n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_gives_zero_update() {
        let mut s = MomentState::new(3, 0.9, 0.999, 1e-8);
        let mut d = vec![1.0; 3];
        for _ in 0..100 {
            s.update(&[0.0; 3], 1e-3, &mut d);
            assert_eq!(d, vec![0.0; 3]);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut s = MomentState::new(2, 0.9, 0.999, 1e-8);
        let mut d = vec![0.0; 2];
        let lr = 1e-3;
        for _ in 0..10_000 {
            s.update(&[0.5, -2.0], lr, &mut d);
        }
        assert!((d[0] + lr).abs() < 1e-6, "{}", d[0]);
        assert!((d[1] - lr).abs() < 1e-6, "{}", d[1]);
    }

    #[test]
    fn first_step_opposes_gradient() {
        let mut s = MomentState::new(4, 0.9, 0.999, 1e-8);
        let g = [0.3, -0.01, 5.0, -7.0];
        let mut d = vec![0.0; 4];
        s.update(&g, 1e-2, &mut d);
        for (gi, di) in g.iter().zip(&d) {
            assert_eq!(gi.signum(), -di.signum());
        }
        assert!(s.second_moments().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_update(0.0, 100.0), 0);
        assert_eq!(quantize_update(0.009, 100.0), 0);
        assert_eq!(quantize_update(-0.009, 100.0), 0);
        assert_eq!(quantize_update(0.039, 100.0), 3);
        assert_eq!(quantize_update(-0.039, 100.0), -3);
    }
}
