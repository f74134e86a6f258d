use super::{Gradients, Parameterized};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: Parameterized + ?Sized>(model: &P) -> Self {
        Self::with_hyper(model, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper<P: Parameterized + ?Sized>(model: &P, beta1: f64, beta2: f64, eps: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(&grads.0)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// `target <- delta * online + (1 - delta) * target`.
pub fn soft_update<P: Parameterized + ?Sized>(target: &mut P, online: &P, delta: f64) {
    for (t, o) in target.params_mut().into_iter().zip(online.params()) {
        for (x, y) in t.iter_mut().zip(o) {
            *x = delta * y + (1.0 - delta) * *x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Vec<f64>);

    impl Parameterized for Scalar {
        fn params(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Scalar(vec![0.3, -1.0]);
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam.step(&mut p, &Gradients(vec![vec![0.0, 0.0]]), 0.1);
        }
        assert_eq!(p.0, vec![0.3, -1.0]);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let mut p = Scalar(vec![0.0, 0.0, 0.0]);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &Gradients(vec![vec![3.0, -1e-3, 250.0]]), 0.01);
        for x in &p.0 {
            assert!(x.abs() <= 0.01 + 1e-15);
        }
        assert!(p.0[0] < 0.0 && p.0[1] > 0.0);
    }

    #[test]
    fn three_step_scalar_trace() {
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let grads = [0.5, -0.2, 0.1];
        // hand-rolled reference
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        // first step: m_hat = 0.5, v_hat = 0.25 -> x = 1 - 0.1 * 0.5 / (0.5 + 1e-8)
        let first = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        let mut p = Scalar(vec![1.0]);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &Gradients(vec![vec![grads[0]]]), lr);
        assert!((p.0[0] - first).abs() < 1e-12);
        for g in &grads[1..] {
            adam.step(&mut p, &Gradients(vec![vec![*g]]), lr);
        }
        assert!((p.0[0] - x).abs() < 1e-12);
    }

    #[test]
    fn soft_update_examples() {
        let online = Scalar(vec![1.0, 2.0]);
        let mut target = Scalar(vec![0.0, 0.0]);
        soft_update(&mut target, &online, 0.005);
        assert!((target.0[0] - 0.005).abs() < 1e-15);

        let mut target = Scalar(vec![5.0, -3.0]);
        soft_update(&mut target, &online, 1.0);
        assert_eq!(target.0, online.0);

        let mut target = Scalar(vec![0.0, 0.0]);
        let mut prev_gap = f64::INFINITY;
        for _ in 0..200 {
            soft_update(&mut target, &online, 0.05);
            let gap = (target.0[1] - 2.0).abs();
            assert!(gap < prev_gap);
            assert!((gap - 0.95 * prev_gap).abs() < 1e-12 || prev_gap.is_infinite());
            prev_gap = gap;
        }
    }
}
