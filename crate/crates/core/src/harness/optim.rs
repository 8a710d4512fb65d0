//! Adam with per-group learning rates, and global-norm clipping.

use crate::autograd::Gradients;
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct Adam {
    lr_image_extractor: f64,
    lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr_image_extractor: f64, lr_other: f64) -> Self {
        let zeros: Vec<Mat> = params.entries().iter().map(|e| Mat::zeros(e.value.rows(), e.value.cols())).collect();
        Adam { lr_image_extractor, lr_other, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn learning_rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::ImageExtractor => self.lr_image_extractor,
            ParamGroup::Other => self.lr_other,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Parameters the gradients never reached are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let lr = self.learning_rate(params.entry(id).group);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = params.value_mut(id).data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales to at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add("img", ParamGroup::ImageExtractor, 1, 2, Init::Ones, &mut rng);
        s.add("txt", ParamGroup::Other, 1, 2, Init::Ones, &mut rng);
        s
    }

    fn grads(s: &ParamStore, scale: f64) -> Gradients {
        let mut g = Graph::new(s);
        let a = g.param(crate::params::ParamId(0));
        let b = g.param(crate::params::ParamId(1));
        let sa = g.sum_all(a);
        let sb = g.sum_all(b);
        let l = g.add(sa, sb);
        let l = g.scale(l, scale);
        g.backward(l)
    }

    #[test]
    fn first_step_moves_by_group_rate() {
        let mut s = store();
        let mut opt = Adam::new(&s, 1e-4, 5e-4);
        assert_eq!(opt.learning_rate(ParamGroup::ImageExtractor), 1e-4);
        assert_eq!(opt.learning_rate(ParamGroup::Other), 5e-4);
        let g = grads(&s, 3.0);
        opt.step(&mut s, &g);
        // Bias-corrected first step is lr * g / (|g| + eps).
        let want = |lr: f64| 1.0 - lr * 3.0 / (3.0 + 1e-8);
        assert!((s.value(crate::params::ParamId(0)).data()[0] - want(1e-4)).abs() < 1e-15);
        assert!((s.value(crate::params::ParamId(1)).data()[1] - want(5e-4)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let s = store();
        let mut g = grads(&s, 10.0);
        let before = clip_gradients(&mut g, 5.0);
        assert!((before - 20.0).abs() < 1e-12);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
        let mut small = grads(&s, 0.1);
        clip_gradients(&mut small, 5.0);
        assert!((small.global_norm() - 0.2).abs() < 1e-12);
    }
}
