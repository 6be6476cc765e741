//! Fully connected regressor: `D -> h1 -> h2 -> 1`, tanh hidden units and a
//! linear output.

use rand::Rng;

use crate::domain::Stream;

/// One dense layer, weights stored row-major as `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    fn glorot(inputs: usize, outputs: usize, rng: &mut Stream) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: [Layer; 3],
}

/// Activations kept from a forward pass for backpropagation.
struct Trace {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    output: f64,
}

impl Mlp {
    pub fn new(dim: usize, hidden: [usize; 2], rng: &mut Stream) -> Self {
        Self {
            layers: [
                Layer::glorot(dim, hidden[0], rng),
                Layer::glorot(hidden[0], hidden[1], rng),
                Layer::glorot(hidden[1], 1, rng),
            ],
        }
    }

    pub fn zeros(dim: usize, hidden: [usize; 2]) -> Self {
        Self {
            layers: [
                Layer::zeros(dim, hidden[0]),
                Layer::zeros(hidden[0], hidden[1]),
                Layer::zeros(hidden[1], 1),
            ],
        }
    }

    /// Layer widths `[D, h1, h2, 1]`.
    pub fn sizes(&self) -> [usize; 4] {
        [
            self.layers[0].inputs,
            self.layers[0].outputs,
            self.layers[1].outputs,
            self.layers[2].outputs,
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut h1 = Vec::with_capacity(self.layers[0].outputs);
        self.layers[0].apply(x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::with_capacity(self.layers[1].outputs);
        self.layers[1].apply(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = Vec::with_capacity(1);
        self.layers[2].apply(&h2, &mut out);
        Trace {
            input: x.to_vec(),
            h1,
            h2,
            output: out[0],
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.trace(x).output
    }

    /// Squared error `(y - target)^2` for one sample, with its gradient
    /// accumulated (scaled by `scale`) into `grad`.
    pub fn accumulate_gradient(&self, x: &[f64], target: f64, scale: f64, grad: &mut Mlp) -> f64 {
        let t = self.trace(x);
        let err = t.output - target;
        // d(err^2)/dy
        let d_out = 2.0 * err * scale;

        let l3 = &self.layers[2];
        let g3 = &mut grad.layers[2];
        g3.bias[0] += d_out;
        let mut d_h2 = vec![0.0; l3.inputs];
        for (i, h) in t.h2.iter().enumerate() {
            g3.weights[i] += d_out * h;
            d_h2[i] = d_out * l3.weights[i] * (1.0 - h * h);
        }

        let l2 = &self.layers[1];
        let g2 = &mut grad.layers[1];
        let mut d_h1 = vec![0.0; l2.inputs];
        for (o, d) in d_h2.iter().enumerate() {
            g2.bias[o] += d;
            let row = o * l2.inputs;
            for (i, h) in t.h1.iter().enumerate() {
                g2.weights[row + i] += d * h;
                d_h1[i] += d * l2.weights[row + i];
            }
        }
        for (d, h) in d_h1.iter_mut().zip(&t.h1) {
            *d *= 1.0 - h * h;
        }

        let l1 = &self.layers[0];
        let g1 = &mut grad.layers[0];
        for (o, d) in d_h1.iter().enumerate() {
            g1.bias[o] += d;
            let row = o * l1.inputs;
            for (i, v) in t.input.iter().enumerate() {
                g1.weights[row + i] += d * v;
            }
        }
        err * err
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub(crate) fn zeroed_like(&self) -> Mlp {
        let [d, h1, h2, _] = self.sizes();
        Mlp::zeros(d, [h1, h2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_stream;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(3, [3, 2]);
        assert_eq!(net.forward(&[1.0, -4.0, 9.0]), 0.0);
    }

    #[test]
    fn output_bias_passes_through_zero_weights() {
        let mut net = Mlp::zeros(3, [3, 2]);
        net.layers[2].bias[0] = 0.3;
        assert_eq!(net.forward(&[0.2, 0.1, -0.7]), 0.3);
    }

    /// Central finite differences on every parameter of a single-sample loss.
    fn max_fd_error(net: &Mlp, x: &[f64], target: f64) -> f64 {
        let mut grad = net.zeroed_like();
        net.accumulate_gradient(x, target, 1.0, &mut grad);
        let analytic: Vec<f64> = grad.params().copied().collect();
        let eps = 1e-5;
        let loss = |n: &Mlp| (n.forward(x) - target).powi(2);
        let mut worst: f64 = 0.0;
        for (k, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += eps;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = seeded_stream(11, 0);
        for trial in 0..20 {
            let dim = 1 + trial % 6;
            let hidden = [1 + (trial * 7) % 5, 1 + (trial * 3) % 4];
            let mut net = Mlp::new(dim, hidden, &mut rng);
            for p in net.params_mut() {
                *p += rng.gen_range(-0.3..0.3);
            }
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = rng.gen_range(0.0..1.0);
            let err = max_fd_error(&net, &x, target);
            assert!(err < 1e-4, "trial {trial}: relative error {err}");
        }
    }
}
