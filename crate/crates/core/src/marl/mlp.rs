//! Tiny fully connected networks with tanh hiddens, multiple linear output
//! heads, exact manual backprop, and Adam. Everything is f64; gradients are
//! accumulated densely and checked against finite differences in tests.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Dense {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Dense {
            w: (0..in_dim * out_dim)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.b.clone();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            y[o] += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
        y
    }

    /// Accumulate dW/db from `dy` and return dL/dx.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseGrad) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = dy[o];
            grad.db[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.dw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl DenseGrad {
    fn zeros(layer: &Dense) -> DenseGrad {
        DenseGrad {
            dw: vec![0.0; layer.w.len()],
            db: vec![0.0; layer.b.len()],
        }
    }
}

/// Trunk of tanh hidden layers feeding independent linear heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub heads: Vec<Dense>,
}

/// Activations kept for the backward pass: `acts[0]` is the input, each
/// following entry is a post-tanh hidden activation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Vec<f64>>,
    pub head_outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub hidden: Vec<DenseGrad>,
    pub heads: Vec<DenseGrad>,
}

impl MlpGrads {
    pub fn zeros(net: &Mlp) -> MlpGrads {
        MlpGrads {
            hidden: net.hidden.iter().map(DenseGrad::zeros).collect(),
            heads: net.heads.iter().map(DenseGrad::zeros).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for g in self.hidden.iter().chain(&self.heads) {
            acc += g.dw.iter().map(|v| v * v).sum::<f64>();
            acc += g.db.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.hidden.iter_mut().chain(self.heads.iter_mut()) {
            g.dw.iter_mut().for_each(|v| *v *= s);
            g.db.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Clip to a maximum global norm; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

impl Mlp {
    pub fn new(
        in_dim: usize,
        hidden_dims: &[usize],
        head_dims: &[usize],
        rng: &mut ChaCha12Rng,
    ) -> Mlp {
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut prev = in_dim;
        for &h in hidden_dims {
            hidden.push(Dense::glorot(prev, h, rng));
            prev = h;
        }
        let heads = head_dims
            .iter()
            .map(|&d| Dense::glorot(prev, d, rng))
            .collect();
        Mlp { hidden, heads }
    }

    pub fn forward(&self, x: &[f64]) -> ForwardCache {
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.hidden {
            let mut y = layer.forward(acts.last().unwrap());
            y.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(y);
        }
        let top = acts.last().unwrap();
        let head_outputs = self.heads.iter().map(|h| h.forward(top)).collect();
        ForwardCache { acts, head_outputs }
    }

    /// Backprop per-head output gradients through the trunk.
    pub fn backward(&self, cache: &ForwardCache, head_grads: &[Vec<f64>], grads: &mut MlpGrads) {
        let top = cache.acts.last().unwrap();
        let mut d_top = vec![0.0; top.len()];
        for ((head, hg), hgrads) in self.heads.iter().zip(head_grads).zip(&mut grads.heads) {
            if hg.iter().all(|&v| v == 0.0) {
                continue;
            }
            let dx = head.backward(top, hg, hgrads);
            d_top.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        let mut d_post = d_top;
        for l in (0..self.hidden.len()).rev() {
            let a = &cache.acts[l + 1];
            let d_pre: Vec<f64> = d_post
                .iter()
                .zip(a)
                .map(|(d, a)| d * (1.0 - a * a))
                .collect();
            d_post = self.hidden[l].backward(&cache.acts[l], &d_pre, &mut grads.hidden[l]);
        }
    }

    pub fn n_params(&self) -> usize {
        self.hidden
            .iter()
            .chain(&self.heads)
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    pub fn for_each_param(&mut self, grads: &MlpGrads, mut f: impl FnMut(&mut f64, f64)) {
        for (layer, g) in self
            .hidden
            .iter_mut()
            .zip(&grads.hidden)
            .chain(self.heads.iter_mut().zip(&grads.heads))
        {
            for (p, gp) in layer.w.iter_mut().zip(&g.dw) {
                f(p, *gp);
            }
            for (p, gp) in layer.b.iter_mut().zip(&g.db) {
                f(p, *gp);
            }
        }
    }

    /// Parameter visitor without gradients (checkpointing, finite-diff).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in self.hidden.iter_mut().chain(self.heads.iter_mut()) {
            layer.w.iter_mut().for_each(&mut f);
            layer.b.iter_mut().for_each(&mut f);
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for layer in self.hidden.iter().chain(self.heads.iter()) {
            v.extend_from_slice(&layer.w);
            v.extend_from_slice(&layer.b);
        }
        v
    }

    pub fn load_flat(&mut self, params: &[f64]) -> Result<(), String> {
        if params.len() != self.n_params() {
            return Err(format!(
                "parameter blob has {} values, network needs {}",
                params.len(),
                self.n_params()
            ));
        }
        let mut it = params.iter();
        self.for_each_param_mut(|p| *p = *it.next().unwrap());
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.hidden
            .iter()
            .chain(&self.heads)
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

/// Adaptive moment estimation over a network's flat parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One descent step on the given gradients.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        net.for_each_param(grads, |p, g| {
            m[idx] = b1 * m[idx] + (1.0 - b1) * g;
            v[idx] = b2 * v[idx] + (1.0 - b2) * g * g;
            let mh = m[idx] / bc1;
            let vh = v[idx] / bc2;
            *p -= lr * mh / (vh.sqrt() + eps);
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    fn rng() -> ChaCha12Rng {
        RngStreams::new(11).stream("policy", 0).unwrap()
    }

    #[test]
    fn forward_shapes() {
        let net = Mlp::new(6, &[16, 8], &[3, 2], &mut rng());
        let cache = net.forward(&[0.1; 6]);
        assert_eq!(cache.acts.len(), 3);
        assert_eq!(cache.head_outputs[0].len(), 3);
        assert_eq!(cache.head_outputs[1].len(), 2);
    }

    #[test]
    fn forward_deterministic() {
        let net = Mlp::new(4, &[8], &[2], &mut rng());
        let a = net.forward(&[0.3, -0.2, 0.9, 0.0]);
        let b = net.forward(&[0.3, -0.2, 0.9, 0.0]);
        assert_eq!(a.head_outputs, b.head_outputs);
    }

    /// Scalar loss: sum of squares of all head outputs. Its analytic
    /// gradient must match central finite differences.
    #[test]
    fn backprop_matches_finite_differences() {
        let net = Mlp::new(5, &[16, 8, 4], &[3, 2], &mut rng());
        let x = [0.4, -0.7, 0.2, 0.05, -0.3];
        let loss = |net: &Mlp| -> f64 {
            let c = net.forward(&x);
            c.head_outputs
                .iter()
                .flat_map(|h| h.iter())
                .map(|v| v * v)
                .sum()
        };
        let cache = net.forward(&x);
        let head_grads: Vec<Vec<f64>> = cache
            .head_outputs
            .iter()
            .map(|h| h.iter().map(|v| 2.0 * v).collect())
            .collect();
        let mut grads = MlpGrads::zeros(&net);
        net.backward(&cache, &head_grads, &mut grads);

        let analytic: Vec<f64> = {
            let mut flat = Vec::new();
            for g in grads.hidden.iter().chain(&grads.heads) {
                flat.extend_from_slice(&g.dw);
                flat.extend_from_slice(&g.db);
            }
            flat
        };
        let n = net.n_params();
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for k in 0..n {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut i = 0;
            plus.for_each_param_mut(|p| {
                if i == k {
                    *p += h;
                }
                i += 1;
            });
            i = 0;
            minus.for_each_param_mut(|p| {
                if i == k {
                    *p -= h;
                }
                i += 1;
            });
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = fd.abs().max(analytic[k].abs()).max(1e-8);
            max_rel = max_rel.max((fd - analytic[k]).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut net = Mlp::new(2, &[4], &[1], &mut rng());
        let x = [0.5, -0.25];
        let target = 0.7;
        let mut adam = Adam::new(1e-2, net.n_params());
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            let cache = net.forward(&x);
            let out = cache.head_outputs[0][0];
            let err = out - target;
            last = err * err;
            first.get_or_insert(last);
            let mut grads = MlpGrads::zeros(&net);
            net.backward(&cache, &[vec![2.0 * err]], &mut grads);
            adam.step(&mut net, &grads);
        }
        assert!(last < 1e-6, "loss {last} after training");
        assert!(last < first.unwrap());
    }

    #[test]
    fn grad_clip_preserves_direction() {
        let net = Mlp::new(3, &[4], &[2], &mut rng());
        let cache = net.forward(&[1.0, 2.0, 3.0]);
        let mut grads = MlpGrads::zeros(&net);
        net.backward(&cache, &[vec![10.0, -4.0], vec![3.0, 3.0]], &mut grads);
        let before = grads.global_norm();
        let mut clipped = grads.clone();
        clipped.clip_global_norm(0.5);
        assert!(before > 0.5);
        assert!((clipped.global_norm() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn flat_roundtrip() {
        let mut net = Mlp::new(4, &[8, 4], &[3], &mut rng());
        let flat = net.params_flat();
        let mut other = Mlp::new(4, &[8, 4], &[3], &mut rng());
        other.load_flat(&flat).unwrap();
        assert_eq!(net.params_flat(), other.params_flat());
        assert!(net.load_flat(&flat[1..]).is_err());
        assert!(net.all_finite());
    }
}
