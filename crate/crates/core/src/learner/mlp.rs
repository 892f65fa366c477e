//! Hand-rolled multilayer perceptron: forward, exact reverse-mode
//! gradients, and seeded initialization. Double precision throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation z. ReLU takes the
    /// zero subgradient at exactly 0, so dead units pass no gradient.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer followed by its activation. `w` is row-major with one
/// row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn out_dim(&self) -> usize {
        self.w.len()
    }
}

/// A feed-forward stack of layers with agreeing dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Cached intermediate values of one forward pass, needed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `activations[0]` is x, the last entry is the
    /// network output.
    activations: Vec<Vec<f64>>,
    /// Pre-activation z of each layer.
    pre_acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Parameter-shaped gradients of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<f64>,
}

/// Gradients of a scalar objective with respect to every parameter, plus
/// the gradient with respect to the network input (the actor update chains
/// through the critic with it).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub dx: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: vec![vec![0.0; l.in_dim()]; l.out_dim()],
                    db: vec![0.0; l.out_dim()],
                })
                .collect(),
            dx: vec![0.0; net.layers.first().map_or(0, Layer::in_dim)],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (row_m, row_t) in mine.dw.iter_mut().zip(&theirs.dw) {
                for (m, t) in row_m.iter_mut().zip(row_t) {
                    *m += t;
                }
            }
            for (m, t) in mine.db.iter_mut().zip(&theirs.db) {
                *m += t;
            }
        }
        for (m, t) in self.dx.iter_mut().zip(&other.dx) {
            *m += t;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for row in &mut layer.dw {
                for v in row {
                    *v *= factor;
                }
            }
            for v in &mut layer.db {
                *v *= factor;
            }
        }
        for v in &mut self.dx {
            *v *= factor;
        }
    }

    /// Largest absolute entry over all parameter gradients.
    pub fn max_abs(&self) -> f64 {
        let mut max = 0.0f64;
        for layer in &self.layers {
            for row in &layer.dw {
                for v in row {
                    max = max.max(v.abs());
                }
            }
            for v in &layer.db {
                max = max.max(v.abs());
            }
        }
        max
    }
}

impl Mlp {
    /// Builds a seeded network: weights and biases uniform in
    /// ±1/sqrt(fan_in), drawn layer by layer, row-major.
    pub fn seeded(dims: &[usize], acts: &[Activation], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "a network needs an input and an output dimension");
        assert_eq!(dims.len() - 1, acts.len(), "one activation per layer");
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(pair, &act)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    w: (0..fan_out)
                        .map(|_| (0..fan_in).map(|_| rng.random_range(-limit..limit)).collect())
                        .collect(),
                    b: (0..fan_out).map(|_| rng.random_range(-limit..limit)).collect(),
                    act,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    fn check_shapes(&self) -> Result<(), LearnerError> {
        for pair in self.layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(LearnerError::DimensionMismatch {
                    context: "consecutive layers",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LearnerError> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.activations.pop().expect("nonempty"))
    }

    /// Forward pass keeping everything backward needs.
    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache, LearnerError> {
        self.check_shapes()?;
        if x.len() != self.in_dim() {
            return Err(LearnerError::DimensionMismatch {
                context: "network input",
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut activations = vec![x.to_vec()];
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = activations.last().expect("nonempty");
            let mut z = layer.b.clone();
            for (zi, row) in z.iter_mut().zip(&layer.w) {
                for (w, xi) in row.iter().zip(input) {
                    *zi += w * xi;
                }
            }
            let a = z.iter().map(|&v| layer.act.apply(v)).collect();
            pre_acts.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre_acts })
    }

    /// Exact reverse-mode gradients of `output · upstream` with respect to
    /// every weight, bias, and the input, for the forward pass in `cache`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<Gradients, LearnerError> {
        if upstream.len() != self.out_dim() {
            return Err(LearnerError::DimensionMismatch {
                context: "upstream gradient",
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&cache.pre_acts[last])
            .map(|(u, &z)| u * self.layers[last].act.derivative(z))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            let layer = &self.layers[l];
            let lg = &mut grads.layers[l];
            for (i, &d) in delta.iter().enumerate() {
                for (j, &xj) in input.iter().enumerate() {
                    lg.dw[i][j] = d * xj;
                }
                lg.db[i] = d;
            }
            // Pull the delta through W, then through the previous layer's
            // activation (or hand it out as dx at the input).
            let mut prev = vec![0.0; layer.in_dim()];
            for (i, &d) in delta.iter().enumerate() {
                for (j, &w) in layer.w[i].iter().enumerate() {
                    prev[j] += w * d;
                }
            }
            if l == 0 {
                grads.dx = prev;
            } else {
                let act = self.layers[l - 1].act;
                delta = prev
                    .iter()
                    .zip(&cache.pre_acts[l - 1])
                    .map(|(p, &z)| p * act.derivative(z))
                    .collect();
            }
        }
        Ok(grads)
    }

    /// Iterates over all parameters mutably, weights row-major then biases,
    /// layer by layer. Adam and the soft update both rely on this fixed
    /// order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().flatten().chain(l.b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().flatten().chain(l.b.iter()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim() * (l.in_dim() + 1)).sum()
    }
}

impl Gradients {
    /// Parameter-gradient iterator in the same fixed order as
    /// [`Mlp::params_mut`].
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.dw.iter().flatten().chain(l.db.iter()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Mlp {
        Mlp { layers: vec![Layer { w, b, act }] }
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let net = Mlp {
            layers: vec![
                Layer { w: vec![vec![0.0; 3]; 4], b: vec![0.0; 4], act: Activation::Relu },
                Layer { w: vec![vec![0.0; 4]; 2], b: vec![0.0; 2], act: Activation::Identity },
            ],
        };
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_hand_arithmetic() {
        let net = single_layer(vec![vec![2.0]], vec![1.0], Activation::Identity);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = single_layer(vec![vec![2.0]], vec![1.0], Activation::Identity);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(LearnerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::seeded(&[3, 5, 2], &[Activation::Relu, Activation::Tanh], &mut rng);
        let cache = net.forward_cached(&[0.3, -0.2, 0.9]).unwrap();
        let grads = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(grads.dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_unit_passes_no_gradient() {
        // One ReLU unit with a strongly negative pre-activation: every
        // gradient through it must vanish.
        let net = Mlp {
            layers: vec![
                Layer { w: vec![vec![1.0]], b: vec![-10.0], act: Activation::Relu },
                Layer { w: vec![vec![1.0]], b: vec![0.0], act: Activation::Identity },
            ],
        };
        let cache = net.forward_cached(&[2.0]).unwrap();
        let grads = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grads.layers[0].dw[0][0], 0.0);
        assert_eq!(grads.layers[0].db[0], 0.0);
        assert_eq!(grads.dx[0], 0.0);
        // The second layer's bias still learns (its input is the dead 0).
        assert_eq!(grads.layers[1].db[0], 1.0);
    }

    /// Central finite differences of f(params) = output · upstream.
    fn finite_difference_check(net: &Mlp, x: &[f64], upstream: &[f64]) {
        let h = 1e-5;
        let objective = |net: &Mlp| -> f64 {
            net.forward(x)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(o, u)| o * u)
                .sum()
        };
        let cache = net.forward_cached(x).unwrap();
        let grads = net.backward(&cache, upstream).unwrap();
        let analytic: Vec<f64> = grads.params().copied().collect();
        let mut fd = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            fd.push((objective(&plus) - objective(&minus)) / (2.0 * h));
        }
        for (k, (a, f)) in analytic.iter().zip(&fd).enumerate() {
            let scale = a.abs().max(f.abs()).max(1e-3);
            assert!(
                (a - f).abs() / scale <= 1e-4,
                "param {k}: analytic {a} vs finite difference {f}"
            );
        }
        // Input gradient too, since the actor update chains through it.
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            xp[j] += h;
            let mut xm = x.to_vec();
            xm[j] -= h;
            let f = (objective_at(net, &xp, upstream) - objective_at(net, &xm, upstream))
                / (2.0 * h);
            let a = grads.dx[j];
            let scale = a.abs().max(f.abs()).max(1e-3);
            assert!((a - f).abs() / scale <= 1e-4, "dx[{j}]: {a} vs {f}");
        }
    }

    fn objective_at(net: &Mlp, x: &[f64], upstream: &[f64]) -> f64 {
        net.forward(x).unwrap().iter().zip(upstream).map(|(o, u)| o * u).sum()
    }

    #[test]
    fn gradients_match_finite_differences_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
        for case in 0..100 {
            let dims = [
                rng.random_range(1..5usize),
                rng.random_range(2..6),
                rng.random_range(1..4),
            ];
            let chosen = [acts[rng.random_range(0..3)], acts[rng.random_range(0..3)]];
            // Tanh keeps every unit differentiable; mix ReLU in but avoid
            // landing exactly on its kink (measure-zero, and the draw is
            // continuous).
            let net = Mlp::seeded(&dims, &chosen, &mut rng);
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> =
                (0..dims[2]).map(|_| rng.random_range(-1.0..1.0)).collect();
            finite_difference_check(&net, &x, &upstream);
            let _ = case;
        }
    }

    #[test]
    fn seeded_initialization_is_reproducible_and_bounded() {
        let dims = [5, 64, 3];
        let acts = [Activation::Relu, Activation::Tanh];
        let a = Mlp::seeded(&dims, &acts, &mut ChaCha8Rng::seed_from_u64(3));
        let b = Mlp::seeded(&dims, &acts, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for (layer, fan_in) in a.layers.iter().zip([5.0f64, 64.0]) {
            let limit = 1.0 / fan_in.sqrt();
            for v in layer.w.iter().flatten().chain(layer.b.iter()) {
                assert!(v.abs() <= limit);
            }
        }
        assert_eq!(a.param_count(), 5 * 64 + 64 + 64 * 3 + 3);
    }
}
