use rand::Rng;

use super::{Activation, Gradients, Matrix, Parameterized};
use crate::error::{Error, Result};

/// Fully connected layer `y = act(W x + b)`, `W` stored row-major (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    /// Empty when the layer has no bias.
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = if with_bias {
            (0..outputs).map(|_| rng.random_range(-bound..bound)).collect()
        } else {
            Vec::new()
        };
        Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation, with_bias: bool) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: if with_bias { vec![0.0; outputs] } else { Vec::new() },
            activation,
        }
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }

    fn weight_row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    /// Pre-activations `W x + b` for every row of `x`.
    fn affine(&self, x: &Matrix, with_bias: bool) -> Matrix {
        let mut z = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            let xr = x.row(r);
            let zr = z.row_mut(r);
            for (o, out) in zr.iter_mut().enumerate() {
                let mut acc = if with_bias && self.has_bias() { self.bias[o] } else { 0.0 };
                for (w, xi) in self.weight_row(o).iter().zip(xr) {
                    acc += w * xi;
                }
                *out = acc;
            }
        }
        z
    }

    /// `W^T d` for every row of `d`.
    fn transpose_apply(&self, d: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(d.rows, self.inputs);
        for r in 0..d.rows {
            let dr = d.row(r);
            let or = out.row_mut(r);
            for (o, &g) in dr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (acc, w) in or.iter_mut().zip(self.weight_row(o)) {
                    *acc += w * g;
                }
            }
        }
        out
    }

    /// Accumulates `sum_r d_r x_r^T` into `gw` and `sum_r d_r` into `gb`.
    fn accumulate(&self, d: &Matrix, x: &Matrix, gw: &mut [f64], gb: Option<&mut [f64]>) {
        for r in 0..d.rows {
            let xr = x.row(r);
            for (o, &g) in d.row(r).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (acc, xi) in gw[o * self.inputs..(o + 1) * self.inputs].iter_mut().zip(xr) {
                    *acc += g * xi;
                }
            }
        }
        if let Some(gb) = gb {
            for r in 0..d.rows {
                for (acc, g) in gb.iter_mut().zip(d.row(r)) {
                    *acc += g;
                }
            }
        }
    }
}

/// Multilayer perceptron with hand-written reverse-mode gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Values kept from a forward pass: `inputs[l]` feeds layer `l`, `pre[l]` is
/// its pre-activation. `inputs` has one extra entry, the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.inputs.last().expect("non-empty network")
    }
}

/// Forward pass carrying a tangent vector per row, for derivatives of the
/// output with respect to a direction in input space.
#[derive(Debug, Clone)]
pub struct TangentCache {
    primal: ForwardCache,
    /// `tangent_in[l]` is the tangent of `primal.inputs[l]`.
    tangent_in: Vec<Matrix>,
    tangent_pre: Vec<Matrix>,
}

impl TangentCache {
    /// Directional derivative of every output, one row per input row.
    pub fn derivative(&self) -> &Matrix {
        self.tangent_in.last().expect("non-empty network")
    }

    pub fn output(&self) -> &Matrix {
        self.primal.output()
    }
}

impl Mlp {
    /// Network with layer widths `dims`, `hidden` activation on every hidden
    /// layer and `output` on the last one.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_output_bias(dims, hidden, output, true, rng)
    }

    pub fn with_output_bias<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        output_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("need at least two positive layer widths"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i == last {
                    Layer::new(w[0], w[1], output, output_bias, rng)
                } else {
                    Layer::new(w[0], w[1], hidden, true, rng)
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs
                || !(l.bias.is_empty() || l.bias.len() == l.outputs)
            {
                return Err(Error::invalid("layer parameter sizes do not match its shape"));
            }
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(Error::invalid("layer widths do not chain"));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} columns, network expects {}",
                x.cols,
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for layer in &self.layers {
            let z = layer.affine(inputs.last().expect("seeded"), true);
            let h = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            inputs.push(h);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Convenience single-row forward.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(&Matrix::from_row(x))?;
        Ok(cache.output().data.clone())
    }

    /// Reverse pass for the loss gradient `d_out` (rows match the forward
    /// batch). Returns parameter gradients summed over rows and the gradient
    /// with respect to the input rows.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> (Gradients, Matrix) {
        let mut grads = self.zero_grads();
        let mut upstream = d_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[l];
            let delta = Matrix {
                rows: upstream.rows,
                cols: upstream.cols,
                data: upstream
                    .data
                    .iter()
                    .zip(&z.data)
                    .map(|(g, &zv)| g * layer.activation.derivative(zv))
                    .collect(),
            };
            let (gw, gb) = grads.layer_mut(l, layer.has_bias());
            layer.accumulate(&delta, &cache.inputs[l], gw, gb);
            upstream = layer.transpose_apply(&delta);
        }
        (grads, upstream)
    }

    /// Forward pass of `x` together with the tangent `dirs` (same shape).
    pub fn forward_tangent(&self, x: &Matrix, dirs: &Matrix) -> Result<TangentCache> {
        if dirs.rows != x.rows || dirs.cols != x.cols {
            return Err(Error::invalid("direction matrix must match the input shape"));
        }
        let primal = self.forward(x)?;
        let mut tangent_in = Vec::with_capacity(self.layers.len() + 1);
        let mut tangent_pre = Vec::with_capacity(self.layers.len());
        tangent_in.push(dirs.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let dz = layer.affine(tangent_in.last().expect("seeded"), false);
            let dh = Matrix {
                rows: dz.rows,
                cols: dz.cols,
                data: dz
                    .data
                    .iter()
                    .zip(&primal.pre[l].data)
                    .map(|(d, &z)| d * layer.activation.derivative(z))
                    .collect(),
            };
            tangent_pre.push(dz);
            tangent_in.push(dh);
        }
        Ok(TangentCache {
            primal,
            tangent_in,
            tangent_pre,
        })
    }

    /// Parameter gradient of `sum_r <weights_r, D_r>`, where `D_r` is the
    /// directional derivative computed by [`Mlp::forward_tangent`].
    pub fn backward_tangent(&self, cache: &TangentCache, weights: &Matrix) -> Gradients {
        let mut grads = self.zero_grads();
        // adjoints of the tangent and of the primal activations
        let mut adj_tangent = weights.clone();
        let mut adj_primal = Matrix::zeros(weights.rows, weights.cols);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let z = &cache.primal.pre[l];
            let dz = &cache.tangent_pre[l];
            let mut a = Matrix::zeros(z.rows, z.cols);
            let mut c = Matrix::zeros(z.rows, z.cols);
            for i in 0..z.data.len() {
                let d1 = act.derivative(z.data[i]);
                a.data[i] = adj_tangent.data[i] * d1;
                c.data[i] = adj_tangent.data[i] * act.second_derivative(z.data[i]) * dz.data[i]
                    + adj_primal.data[i] * d1;
            }
            let (gw, gb) = grads.layer_mut(l, layer.has_bias());
            layer.accumulate(&a, &cache.tangent_in[l], gw, None);
            layer.accumulate(&c, &cache.primal.inputs[l], gw, gb);
            adj_tangent = layer.transpose_apply(&a);
            adj_primal = layer.transpose_apply(&c);
        }
        grads
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(
            self.layers
                .iter()
                .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

impl Gradients {
    fn layer_mut(&mut self, l: usize, with_bias: bool) -> (&mut [f64], Option<&mut [f64]>) {
        let (w, rest) = self.0[2 * l..].split_at_mut(1);
        let gb = if with_bias { Some(rest[0].as_mut_slice()) } else { None };
        (w[0].as_mut_slice(), gb)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-implementation of the forward arithmetic.
    fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in net.layers() {
            let mut next = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let mut z = if layer.has_bias() { layer.bias[o] } else { 0.0 };
                for i in 0..layer.inputs {
                    z += layer.weights[o * layer.inputs + i] * h[i];
                }
                next.push(match layer.activation {
                    Activation::Identity => z,
                    Activation::Relu => z.max(0.0),
                    Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                    Activation::Tanh => z.tanh(),
                });
            }
            h = next;
        }
        h
    }

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::from_layers(vec![
            Layer::zeros(3, 4, Activation::Relu, true),
            Layer::zeros(4, 2, Activation::Identity, true),
        ])
        .unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = Layer::zeros(3, 3, Activation::Identity, true);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_layers(vec![layer]).unwrap();
        assert_eq!(net.predict(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for act in Activation::ALL {
            let net = Mlp::new(&[5, 7, 6, 3], act, Activation::Tanh, &mut rng).unwrap();
            let x = random_input(&mut rng, 4, 5);
            let cache = net.forward(&x).unwrap();
            for r in 0..4 {
                let expect = reference_forward(&net, x.row(r));
                for (a, b) in cache.output().row(r).iter().zip(expect) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert!(net.forward(&Matrix::zeros(2, 4)).is_err());
        assert!(Mlp::new(&[3], Activation::Relu, Activation::Identity, &mut rng).is_err());
    }

    #[test]
    fn linear_chain_rule() {
        let mut layer = Layer::zeros(2, 1, Activation::Identity, false);
        layer.weights = vec![0.7, -1.2];
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_row(&[2.0, 3.0]);
        let cache = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Matrix::from_row(&[0.5]));
        assert_eq!(g.0[0], vec![1.0, 1.5]);
        assert!(g.0[1].is_empty());
        assert_eq!(dx.data, vec![0.35, -0.6]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut hidden = Layer::zeros(1, 1, Activation::Relu, true);
        hidden.weights = vec![1.0];
        hidden.bias = vec![-5.0];
        let mut out = Layer::zeros(1, 1, Activation::Identity, true);
        out.weights = vec![2.0];
        let net = Mlp::from_layers(vec![hidden, out]).unwrap();
        let cache = net.forward(&Matrix::from_row(&[1.0])).unwrap();
        let (_, dx) = net.backward(&cache, &Matrix::from_row(&[1.0]));
        assert_eq!(dx.data, vec![0.0]);
    }

    fn max_rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn tangent_matches_backward_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for act in Activation::ALL {
            let net = Mlp::new(&[4, 6, 5, 1], act, Activation::Identity, &mut rng).unwrap();
            let x = random_input(&mut rng, 3, 4);
            let cache = net.forward(&x).unwrap();
            let (_, dx) = net.backward(&cache, &Matrix::new(3, 1, vec![1.0; 3]).unwrap());
            for j in 0..4 {
                let mut dirs = Matrix::zeros(3, 4);
                for r in 0..3 {
                    dirs.row_mut(r)[j] = 1.0;
                }
                let t = net.forward_tangent(&x, &dirs).unwrap();
                for r in 0..3 {
                    assert!(max_rel_err(t.derivative().row(r)[0], dx.row(r)[j]) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tangent_parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for act in [Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(&[3, 5, 4, 1], act, Activation::Identity, &mut rng).unwrap();
            let x = random_input(&mut rng, 2, 3);
            let mut dirs = Matrix::zeros(2, 3);
            dirs.row_mut(0)[1] = 1.0;
            dirs.row_mut(1)[2] = 1.0;
            let weights = Matrix::new(2, 1, vec![0.7, -1.3]).unwrap();
            let objective = |n: &Mlp| {
                let t = n.forward_tangent(&x, &dirs).unwrap();
                0.7 * t.derivative().data[0] - 1.3 * t.derivative().data[1]
            };
            let analytic = net.backward_tangent(&net.forward_tangent(&x, &dirs).unwrap(), &weights);
            let h = 1e-5;
            let mut probe = net.clone();
            let count = probe.params().len();
            for slot in 0..count {
                for k in 0..probe.params()[slot].len() {
                    let orig = probe.params()[slot][k];
                    probe.params_mut()[slot][k] = orig + h;
                    let up = objective(&probe);
                    probe.params_mut()[slot][k] = orig - h;
                    let down = objective(&probe);
                    probe.params_mut()[slot][k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = analytic.0[slot][k];
                    assert!(
                        (fd - an).abs() < 1e-6 * an.abs().max(1.0),
                        "{act:?} slot {slot} idx {k}: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn backward_parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for act in Activation::ALL {
            let net = Mlp::new(&[4, 6, 5, 2], act, Activation::Tanh, &mut rng).unwrap();
            let x = random_input(&mut rng, 3, 4);
            let d_out = Matrix::new(3, 2, vec![1.0, -0.5, 0.3, 2.0, -1.1, 0.4]).unwrap();
            let objective = |n: &Mlp| -> f64 {
                let y = n.forward(&x).unwrap();
                y.output().data.iter().zip(&d_out.data).map(|(a, b)| a * b).sum()
            };
            let (analytic, _) = net.backward(&net.forward(&x).unwrap(), &d_out);
            let h = 1e-6;
            let mut probe = net.clone();
            for slot in 0..probe.params().len() {
                for k in 0..probe.params()[slot].len() {
                    let orig = probe.params()[slot][k];
                    probe.params_mut()[slot][k] = orig + h;
                    let up = objective(&probe);
                    probe.params_mut()[slot][k] = orig - h;
                    let down = objective(&probe);
                    probe.params_mut()[slot][k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = analytic.0[slot][k];
                    assert!(
                        max_rel_err(fd, an) < 1e-6,
                        "{act:?} slot {slot} idx {k}: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }
}
