//! Feed-forward ReLU network for tabular regression.

use rand::Rng;

use crate::nn::{init, linear, ops, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::spec::ModelSpec;

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub id: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub out_dim: usize,
}

impl Dense {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, id: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = init::fan_in_uniform(rng, in_dim * out_dim, in_dim);
        let b = init::fan_in_uniform(rng, out_dim, in_dim);
        Dense {
            id: id.to_string(),
            weight: store.add(format!("{id}.weight"), &[out_dim, in_dim], w),
            bias: store.add(format!("{id}.bias"), &[out_dim], b),
            out_dim,
        }
    }

    fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        linear::forward(x, store.value(self.weight), store.value(self.bias), self.out_dim)
    }

    fn backward(&self, store: &mut ParamStore, x: &Tensor, dy: &Tensor) -> Tensor {
        let w = store.value(self.weight).to_vec();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; self.out_dim];
        let dx = linear::backward(x, &w, dy, &mut dw, &mut db);
        for (g, d) in store.grad_mut(self.weight).iter_mut().zip(&dw) {
            *g += *d;
        }
        for (g, d) in store.grad_mut(self.bias).iter_mut().zip(&db) {
            *g += *d;
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

pub(crate) struct MlpCache {
    x: Tensor,
    acts: Vec<Tensor>,
}

impl Mlp {
    pub fn build<R: Rng>(spec: &ModelSpec, store: &mut ParamStore, rng: &mut R) -> Self {
        let mut in_dim = spec.input_dim;
        let mut hidden = Vec::new();
        for (i, width) in spec.hidden_widths().into_iter().enumerate() {
            hidden.push(Dense::new(store, rng, &format!("hidden{}", i + 1), in_dim, width));
            in_dim = width;
        }
        let out = Dense::new(store, rng, "out", in_dim, spec.num_outputs);
        Mlp { hidden, out }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> (Tensor, Vec<Tensor>, Option<MlpCache>) {
        let mut acts = Vec::with_capacity(self.hidden.len());
        for (i, layer) in self.hidden.iter().enumerate() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            acts.push(ops::relu(&layer.forward(store, input)));
        }
        let y = self.out.forward(store, acts.last().unwrap_or(x));
        let taps = acts.clone();
        let cache = train.then(|| MlpCache { x: x.clone(), acts });
        (y, taps, cache)
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, dy: &Tensor, tap_grads: &[Option<Tensor>]) {
        let last = cache.acts.last().unwrap_or(&cache.x);
        let mut dh = self.out.backward(store, last, dy);
        for (i, layer) in self.hidden.iter().enumerate().rev() {
            if let Some(Some(g)) = tap_grads.get(i) {
                dh.add_assign(g);
            }
            let dpre = ops::relu_backward(&cache.acts[i], &dh);
            let input = if i == 0 { &cache.x } else { &cache.acts[i - 1] };
            dh = layer.backward(store, input, &dpre);
        }
    }
}
