use rand::Rng;

use super::{Activation, ForwardCache, Gradients, Matrix, Mlp, Parameterized, TangentCache};
use crate::error::{Error, Result};

/// Shallow critic `Q(s, a) = S(s) + A(a)` where the state path `S` has a
/// sigmoid hidden layer with non-negative input weights and non-positive
/// output weights. After [`MonotoneCritic::project`] every product of an
/// input weight with the output weight of the same hidden unit is `<= 0`, so
/// `Q` is non-increasing in every state input.
///
/// The state path carries the single output bias; the action path is an
/// unconstrained ReLU network without output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCritic {
    state_path: Mlp,
    action_path: Mlp,
}

impl MonotoneCritic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        state_hidden: usize,
        action_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let state_path = Mlp::new(
            &[state_dim, state_hidden, 1],
            Activation::Sigmoid,
            Activation::Identity,
            rng,
        )?;
        let action_path = Mlp::with_output_bias(
            &[action_dim, action_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            false,
            rng,
        )?;
        let mut critic = Self {
            state_path,
            action_path,
        };
        critic.project();
        Ok(critic)
    }

    pub fn from_paths(state_path: Mlp, action_path: Mlp) -> Result<Self> {
        let ok_state = state_path.layers().len() == 2
            && state_path.output_dim() == 1
            && state_path.layers()[0].activation == Activation::Sigmoid
            && state_path.layers()[1].activation == Activation::Identity;
        if !ok_state {
            return Err(Error::invalid(
                "state path must be input -> sigmoid hidden -> identity scalar",
            ));
        }
        if action_path.output_dim() != 1 {
            return Err(Error::invalid("action path must have a scalar output"));
        }
        Ok(Self {
            state_path,
            action_path,
        })
    }

    pub fn state_path(&self) -> &Mlp {
        &self.state_path
    }

    pub fn action_path(&self) -> &Mlp {
        &self.action_path
    }

    pub fn state_path_mut(&mut self) -> &mut Mlp {
        &mut self.state_path
    }

    pub fn action_path_mut(&mut self) -> &mut Mlp {
        &mut self.action_path
    }

    /// Clamps input-to-hidden weights to `>= 0` and hidden-to-output weights
    /// to `<= 0` on the state path.
    pub fn project(&mut self) {
        let layers = self.state_path.layers_mut();
        for w in layers[0].weights.iter_mut() {
            *w = w.max(0.0);
        }
        for w in layers[1].weights.iter_mut() {
            *w = w.min(0.0);
        }
    }

    /// True when every `input weight * output weight` product is `<= 0`.
    pub fn satisfies_sign_constraint(&self) -> bool {
        let layers = self.state_path.layers();
        let (hidden, out) = (&layers[0], &layers[1]);
        (0..hidden.outputs).all(|j| {
            let wo = out.weights[j];
            hidden.weights[j * hidden.inputs..(j + 1) * hidden.inputs]
                .iter()
                .all(|&wi| wi * wo <= 0.0)
        })
    }
}

/// Critic network: a plain MLP over `[state | action]`, or the split monotone
/// architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Critic {
    Plain { net: Mlp, action_dim: usize },
    Monotone(MonotoneCritic),
}

#[derive(Debug, Clone)]
pub enum CriticCache {
    Plain(ForwardCache),
    Monotone { state: ForwardCache, action: ForwardCache },
}

impl CriticCache {
    pub fn q_values(&self) -> Vec<f64> {
        match self {
            CriticCache::Plain(c) => c.output().data.clone(),
            CriticCache::Monotone { state, action } => state
                .output()
                .data
                .iter()
                .zip(&action.output().data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

/// Forward tangent pass for derivatives of `Q` along state directions.
#[derive(Debug, Clone)]
pub struct CriticTangent(TangentCache);

impl CriticTangent {
    /// `dQ/d(direction)` per row.
    pub fn derivatives(&self) -> &[f64] {
        &self.0.derivative().data
    }
}

impl Critic {
    /// Plain ReLU critic with the given hidden widths.
    pub fn plain<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = Mlp::new(&dims, Activation::Relu, Activation::Identity, rng)?;
        Self::from_plain(net, action_dim)
    }

    pub fn from_plain(net: Mlp, action_dim: usize) -> Result<Self> {
        if net.output_dim() != 1 || action_dim == 0 || action_dim >= net.input_dim() {
            return Err(Error::invalid("plain critic needs a scalar output and a state/action split"));
        }
        Ok(Critic::Plain { net, action_dim })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Critic::Plain { net, action_dim } => net.input_dim() - action_dim,
            Critic::Monotone(c) => c.state_path.input_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Critic::Plain { action_dim, .. } => *action_dim,
            Critic::Monotone(c) => c.action_path.input_dim(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        matches!(self, Critic::Monotone(_))
    }

    pub fn forward(&self, s: &Matrix, a: &Matrix) -> Result<CriticCache> {
        if s.cols != self.state_dim() || a.cols != self.action_dim() {
            return Err(Error::invalid(format!(
                "critic expects {} state and {} action inputs, got {} and {}",
                self.state_dim(),
                self.action_dim(),
                s.cols,
                a.cols
            )));
        }
        match self {
            Critic::Plain { net, .. } => Ok(CriticCache::Plain(net.forward(&s.hconcat(a)?)?)),
            Critic::Monotone(c) => Ok(CriticCache::Monotone {
                state: c.state_path.forward(s)?,
                action: c.action_path.forward(a)?,
            }),
        }
    }

    pub fn q_values(&self, s: &Matrix, a: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(s, a)?.q_values())
    }

    /// Single-sample `Q(s, a)`.
    pub fn q(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.q_values(&Matrix::from_row(s), &Matrix::from_row(a))?[0])
    }

    /// Gradients of `sum_r dq_r Q_r` with respect to the parameters, the
    /// state rows and the action rows.
    pub fn backward(&self, cache: &CriticCache, dq: &[f64]) -> (Gradients, Matrix, Matrix) {
        let d = Matrix {
            rows: dq.len(),
            cols: 1,
            data: dq.to_vec(),
        };
        match (self, cache) {
            (Critic::Plain { net, action_dim }, CriticCache::Plain(c)) => {
                let (g, dx) = net.backward(c, &d);
                let split = dx.cols - action_dim;
                (g, dx.columns(0, split), dx.columns(split, dx.cols))
            }
            (Critic::Monotone(mc), CriticCache::Monotone { state, action }) => {
                let (gs, ds) = mc.state_path.backward(state, &d);
                let (ga, da) = mc.action_path.backward(action, &d);
                (gs.concat(ga), ds, da)
            }
            _ => panic!("critic cache does not match critic kind"),
        }
    }

    /// Derivatives of `Q` along state-space directions `dirs` (one per row).
    pub fn state_tangent(&self, s: &Matrix, a: &Matrix, dirs: &Matrix) -> Result<CriticTangent> {
        if dirs.rows != s.rows || dirs.cols != s.cols {
            return Err(Error::invalid("directions must match the state batch shape"));
        }
        match self {
            Critic::Plain { net, .. } => {
                let x = s.hconcat(a)?;
                let full = dirs.hconcat(&Matrix::zeros(a.rows, a.cols))?;
                Ok(CriticTangent(net.forward_tangent(&x, &full)?))
            }
            Critic::Monotone(c) => Ok(CriticTangent(c.state_path.forward_tangent(s, dirs)?)),
        }
    }

    /// Parameter gradient of `sum_r weights_r * dQ_r/d(direction_r)`.
    pub fn state_tangent_backward(&self, tangent: &CriticTangent, weights: &[f64]) -> Gradients {
        let w = Matrix {
            rows: weights.len(),
            cols: 1,
            data: weights.to_vec(),
        };
        match self {
            Critic::Plain { net, .. } => net.backward_tangent(&tangent.0, &w),
            Critic::Monotone(c) => c
                .state_path
                .backward_tangent(&tangent.0, &w)
                .concat(c.action_path.zero_grads()),
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        match self {
            Critic::Plain { net, .. } => net.zero_grads(),
            Critic::Monotone(c) => c.state_path.zero_grads().concat(c.action_path.zero_grads()),
        }
    }

    /// Applies the sign projection on a monotone critic; no-op otherwise.
    pub fn project(&mut self) {
        if let Critic::Monotone(c) = self {
            c.project();
        }
    }
}

impl Parameterized for Critic {
    fn params(&self) -> Vec<&[f64]> {
        match self {
            Critic::Plain { net, .. } => net.params(),
            Critic::Monotone(c) => {
                let mut p = c.state_path.params();
                p.extend(c.action_path.params());
                p
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Critic::Plain { net, .. } => net.params_mut(),
            Critic::Monotone(c) => {
                let mut p = c.state_path.params_mut();
                p.extend(c.action_path.params_mut());
                p
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    fn scramble(critic: &mut MonotoneCritic, rng: &mut ChaCha8Rng) {
        for p in critic.state_path.params_mut().into_iter().chain(critic.action_path.params_mut()) {
            for x in p.iter_mut() {
                *x = rng.random_range(-3.0..3.0);
            }
        }
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = MonotoneCritic::new(4, 2, 5, 3, &mut rng).unwrap();
        scramble(&mut c, &mut rng);
        c.state_path.layers_mut()[0].weights[0] = -0.3;
        c.state_path.layers_mut()[1].weights[0] = 0.7;
        let action_before = c.action_path.clone();
        c.project();
        assert_eq!(c.state_path.layers()[0].weights[0], 0.0);
        assert_eq!(c.state_path.layers()[1].weights[0], 0.0);
        assert_eq!(c.action_path, action_before);
        assert!(c.satisfies_sign_constraint());
        let once = c.clone();
        c.project();
        assert_eq!(c, once);
    }

    #[test]
    fn state_path_alone_is_non_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut c = MonotoneCritic::new(3, 2, 6, 4, &mut rng).unwrap();
        scramble(&mut c, &mut rng);
        c.state_path.layers_mut()[1].bias = vec![0.0];
        for p in c.action_path.params_mut() {
            p.fill(0.0);
        }
        c.project();
        let critic = Critic::Monotone(c);
        let s = random_rows(&mut rng, 50, 3, -2.0, 2.0);
        let a = random_rows(&mut rng, 50, 2, 0.0, 1.0);
        assert!(critic.q_values(&s, &a).unwrap().iter().all(|&q| q <= 0.0));
    }

    #[test]
    fn monotone_in_every_state_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let mut c = MonotoneCritic::new(5, 3, 8, 4, &mut rng).unwrap();
            scramble(&mut c, &mut rng);
            c.project();
            let critic = Critic::Monotone(c);
            let s = random_rows(&mut rng, 20, 5, 0.0, 1.0);
            let a = random_rows(&mut rng, 20, 3, 0.0, 1.0);
            let mut s2 = s.clone();
            for x in s2.data.iter_mut() {
                *x += rng.random_range(0.0..0.5);
            }
            let q1 = critic.q_values(&s, &a).unwrap();
            let q2 = critic.q_values(&s2, &a).unwrap();
            assert!(q1.iter().zip(&q2).all(|(a, b)| b <= a));
        }
    }

    #[test]
    fn dimensions_for_six_devices_three_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, m) = (6, 3);
        let plain = Critic::plain(n * (m + 1), n, &[16], &mut rng).unwrap();
        match &plain {
            Critic::Plain { net, .. } => assert_eq!(net.input_dim(), 2 * n + n * m),
            _ => unreachable!(),
        }
        assert_eq!(plain.state_dim(), 24);
        assert_eq!(plain.action_dim(), 6);
        let mono = Critic::Monotone(MonotoneCritic::new(24, 6, 8, 8, &mut rng).unwrap());
        assert_eq!(mono.state_dim() + mono.action_dim(), 30);
        assert!(plain.q(&[0.0; 24], &[0.0; 5]).is_err());
    }

    #[test]
    fn backward_splits_state_and_action_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for critic in [
            Critic::plain(4, 2, &[6, 5], &mut rng).unwrap(),
            Critic::Monotone(MonotoneCritic::new(4, 2, 6, 5, &mut rng).unwrap()),
        ] {
            let s = random_rows(&mut rng, 1, 4, 0.0, 1.0);
            let a = random_rows(&mut rng, 1, 2, 0.0, 1.0);
            let cache = critic.forward(&s, &a).unwrap();
            let (_, ds, da) = critic.backward(&cache, &[1.0]);
            for j in 0..4 {
                let (mut up, mut down) = (s.clone(), s.clone());
                up.data[j] += h;
                down.data[j] -= h;
                let fd = (critic.q_values(&up, &a).unwrap()[0] - critic.q_values(&down, &a).unwrap()[0]) / (2.0 * h);
                assert!((fd - ds.data[j]).abs() < 1e-6);
            }
            for j in 0..2 {
                let (mut up, mut down) = (a.clone(), a.clone());
                up.data[j] += h;
                down.data[j] -= h;
                let fd = (critic.q_values(&s, &up).unwrap()[0] - critic.q_values(&s, &down).unwrap()[0]) / (2.0 * h);
                assert!((fd - da.data[j]).abs() < 1e-6);
            }
        }
    }
}
