//! Dense layers with hand-written reverse-mode gradients, and the adaptive
//! moment optimizer shared by the denoiser and the refiner.

use rand::Rng;

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Derivative of [`leaky`] at the pre-activation `x`.
#[inline]
pub fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Affine map `y = W x + b`. The weight is stored input-major:
/// `weight[i * outputs + o]` connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Dense {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight_at(&self, input: usize, output: usize) -> f64 {
        self.weight[input * self.outputs + output]
    }

    pub fn set_weight(&mut self, input: usize, output: usize, value: f64) {
        self.weight[input * self.outputs + output] = value;
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(y.len(), self.outputs);
        y.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            for (yo, &w) in y.iter_mut().zip(row) {
                *yo += xi * w;
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// writes the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (gb, &d) in grad.bias.iter_mut().zip(dy) {
            *gb += d;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let g = &mut grad.weight[i * self.outputs..(i + 1) * self.outputs];
            for (gw, &d) in g.iter_mut().zip(dy) {
                *gw += xi * d;
            }
        }
        if let Some(dx) = dx {
            for (i, dxi) in dx.iter_mut().enumerate() {
                let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
                *dxi = row.iter().zip(dy).map(|(w, d)| w * d).sum();
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn add_scaled(&mut self, other: &Dense, scale: f64) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }
}

/// A fixed, ordered collection of dense layers. Implementors list their
/// layers in checkpoint order.
pub trait ParamSet {
    fn layers(&self) -> Vec<&Dense>;
    fn layers_mut(&mut self) -> Vec<&mut Dense>;

    fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// All parameters in declared order: per layer, weight then bias.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        Error::check_len("flat parameter vector", self.param_count(), flat.len())?;
        let mut at = 0;
        for l in self.layers_mut() {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// `self += scale * other` for sets with identical layout.
    fn accumulate(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.add_scaled(b, scale);
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
        }
    }

    pub fn for_params(params: &impl ParamSet, learning_rate: f64) -> Self {
        Self::new(params.param_count(), learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.first.len()
    }

    /// Applies one bias-corrected update.
    pub fn update<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.to_flat();
        Error::check_len("optimizer accumulators", self.first.len(), g.len())?;
        let mut p = params.to_flat();
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..p.len() {
            self.first[k] = self.beta1 * self.first[k] + (1.0 - self.beta1) * g[k];
            self.second[k] = self.beta2 * self.second[k] + (1.0 - self.beta2) * g[k] * g[k];
            let m = self.first[k] / bc1;
            let v = self.second[k] / bc2;
            p[k] -= self.learning_rate * m / (v.sqrt() + self.epsilon);
        }
        params.assign_flat(&p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct One(Dense);

    impl ParamSet for One {
        fn layers(&self) -> Vec<&Dense> {
            vec![&self.0]
        }
        fn layers_mut(&mut self) -> Vec<&mut Dense> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut layer = Dense::zeros(3, 2);
        layer.weight.iter_mut().enumerate().for_each(|(k, w)| *w = k as f64 * 0.1);
        let x = [1.0, -2.0, 0.5];
        let dy = [0.3, -0.7];
        let mut grad = Dense::zeros(3, 2);
        let mut dx = [0.0; 3];
        layer.backward(&x, &dy, &mut grad, Some(&mut dx));
        for i in 0..3 {
            for o in 0..2 {
                assert_eq!(grad.weight_at(i, o), x[i] * dy[o]);
            }
            let expect: f64 = (0..2).map(|o| layer.weight_at(i, o) * dy[o]).sum();
            assert_eq!(dx[i], expect);
        }
        assert_eq!(grad.bias, dy.to_vec());
    }

    #[test]
    fn forward_matches_explicit_sum() {
        let mut layer = Dense::zeros(2, 3);
        layer.weight = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        layer.bias = vec![0.5, -0.5, 0.0];
        let mut y = [0.0; 3];
        layer.forward(&[2.0, -1.0], &mut y);
        assert_eq!(y, [2.0 - 4.0 + 0.5, 4.0 - 5.0 - 0.5, 6.0 - 6.0]);
    }

    #[test]
    fn optimizer_minimizes_a_quadratic() {
        let mut p = One(Dense::zeros(1, 1));
        p.0.weight[0] = 3.0;
        let mut opt = OptimizerState::for_params(&p, 0.05);
        for _ in 0..2000 {
            let mut g = One(Dense::zeros(1, 1));
            g.0.weight[0] = 2.0 * (p.0.weight[0] - 1.0);
            g.0.bias[0] = 2.0 * (p.0.bias[0] + 2.0);
            opt.update(&mut p, &g).unwrap();
        }
        assert!((p.0.weight[0] - 1.0).abs() < 1e-3);
        assert!((p.0.bias[0] + 2.0).abs() < 1e-3);
        assert_eq!(opt.step_count(), 2000);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = rand::rng();
        let p = One(Dense::init(4, 3, &mut rng));
        let mut q = One(Dense::zeros(4, 3));
        q.assign_flat(&p.to_flat()).unwrap();
        assert_eq!(p.0, q.0);
        assert!(q.assign_flat(&[0.0; 3]).is_err());
    }
}
