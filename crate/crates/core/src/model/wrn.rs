//! Pre-activation wide residual network (WRN-d-k).

use rand::Rng;

use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::norm::{self, BnCache};
use crate::nn::{init, linear, ops, BufferId, ConvGeom, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::spec::{ModelSpec, WRN_STEM_CHANNELS};

#[derive(Debug, Clone)]
pub(crate) struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: BufferId,
    pub var: BufferId,
}

impl BnLayer {
    fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        BnLayer {
            gamma: store.add(format!("{prefix}.gamma"), &[channels], vec![1.0; channels]),
            beta: store.add(format!("{prefix}.beta"), &[channels], vec![0.0; channels]),
            mean: store.add_buffer(format!("{prefix}.running_mean"), vec![0.0; channels]),
            var: store.add_buffer(format!("{prefix}.running_var"), vec![1.0; channels]),
        }
    }

    fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> (Tensor, Option<BnCache>) {
        let (g, b) = (store.value(self.gamma), store.value(self.beta));
        if train {
            let (y, c) = norm::forward_train(x, g, b);
            (y, Some(c))
        } else {
            let y = norm::forward_eval(x, g, b, store.buffer(self.mean), store.buffer(self.var));
            (y, None)
        }
    }

    fn commit(&self, store: &mut ParamStore, cache: &BnCache) {
        let mut mean = store.buffer(self.mean).to_vec();
        let mut var = store.buffer(self.var).to_vec();
        norm::update_running(cache, &mut mean, &mut var);
        store.buffer_mut(self.mean).copy_from_slice(&mean);
        store.buffer_mut(self.var).copy_from_slice(&var);
    }

    fn backward(&self, store: &mut ParamStore, dy: &Tensor, cache: &BnCache) -> Tensor {
        let gamma = store.value(self.gamma).to_vec();
        let mut dg = vec![0.0; gamma.len()];
        let mut db = vec![0.0; gamma.len()];
        let dx = norm::backward(dy, cache, &gamma, &mut dg, &mut db);
        add_into(store.grad_mut(self.gamma), &dg);
        add_into(store.grad_mut(self.beta), &db);
        dx
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub weight: ParamId,
    pub geom: ConvGeom,
}

impl ConvLayer {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, geom: ConvGeom) -> Self {
        let fan_out = geom.kernel * geom.kernel * geom.c_out;
        let value = init::kaiming_normal_fan_out(rng, geom.weight_len(), fan_out);
        let weight = store.add(
            format!("{name}.weight"),
            &[geom.c_out, geom.c_in, geom.kernel, geom.kernel],
            value,
        );
        ConvLayer { weight, geom }
    }

    fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        conv2d_forward(x, store.value(self.weight), &self.geom)
    }

    fn backward(&self, store: &mut ParamStore, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let p = store.get_mut(self.weight);
        conv2d_backward(x, &p.value, dy, &self.geom, &mut p.grad, need_dx)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub id: String,
    pub bn1: BnLayer,
    pub conv1: ConvLayer,
    pub bn2: BnLayer,
    pub conv2: ConvLayer,
    pub shortcut: Option<ConvLayer>,
}

pub(crate) struct BlockCache {
    bn1: Option<BnCache>,
    o1: Tensor,
    bn2: Option<BnCache>,
    o2: Tensor,
}

impl Block {
    fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> (Tensor, BlockCache) {
        let (h1, bn1) = self.bn1.forward(store, x, train);
        let o1 = ops::relu(&h1);
        let y1 = self.conv1.forward(store, &o1);
        let (h2, bn2) = self.bn2.forward(store, &y1, train);
        let o2 = ops::relu(&h2);
        let mut out = self.conv2.forward(store, &o2);
        match &self.shortcut {
            Some(sc) => out.add_assign(&sc.forward(store, &o1)),
            None => out.add_assign(x),
        }
        (out, BlockCache { bn1, o1, bn2, o2 })
    }

    fn backward(&self, store: &mut ParamStore, dout: &Tensor, cache: &BlockCache) -> Tensor {
        let do2 = self
            .conv2
            .backward(store, &cache.o2, dout, true)
            .expect("dx requested");
        let dh2 = ops::relu_backward(&cache.o2, &do2);
        let dy1 = self.bn2.backward(store, &dh2, cache.bn2.as_ref().expect("train cache"));
        let mut do1 = self
            .conv1
            .backward(store, &cache.o1, &dy1, true)
            .expect("dx requested");
        if let Some(sc) = &self.shortcut {
            do1.add_assign(&sc.backward(store, &cache.o1, dout, true).expect("dx requested"));
        }
        let dh1 = ops::relu_backward(&cache.o1, &do1);
        let mut dx = self.bn1.backward(store, &dh1, cache.bn1.as_ref().expect("train cache"));
        if self.shortcut.is_none() {
            dx.add_assign(dout);
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Wrn {
    pub stem: ConvLayer,
    pub groups: Vec<Vec<Block>>,
    pub bn_final: BnLayer,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
    pub num_outputs: usize,
}

pub(crate) struct WrnCache {
    x: Tensor,
    blocks: Vec<Vec<BlockCache>>,
    bn_final: Option<BnCache>,
    f: Tensor,
    pooled: Tensor,
}

pub(crate) const WRN_TAP_IDS: [&str; 4] = ["group1", "group2", "group3", "pooled"];

impl Wrn {
    pub fn build<R: Rng>(spec: &ModelSpec, store: &mut ParamStore, rng: &mut R) -> Self {
        let stem = ConvLayer::new(
            store,
            rng,
            "stem",
            ConvGeom::new(spec.input_dim, WRN_STEM_CHANNELS, 3, 1, 1),
        );
        let mut in_ch = WRN_STEM_CHANNELS;
        let mut groups = Vec::new();
        for (g, &width) in spec.group_widths().iter().enumerate() {
            let first_stride = if g == 0 { 1 } else { 2 };
            let mut blocks = Vec::new();
            for b in 0..spec.blocks_per_group() {
                let stride = if b == 0 { first_stride } else { 1 };
                let id = format!("group{}.block{}", g + 1, b);
                let bn1 = BnLayer::new(store, &format!("{id}.bn1"), in_ch);
                let conv1 = ConvLayer::new(store, rng, &format!("{id}.conv1"), ConvGeom::new(in_ch, width, 3, stride, 1));
                let bn2 = BnLayer::new(store, &format!("{id}.bn2"), width);
                let conv2 = ConvLayer::new(store, rng, &format!("{id}.conv2"), ConvGeom::new(width, width, 3, 1, 1));
                let shortcut = (in_ch != width).then(|| {
                    ConvLayer::new(store, rng, &format!("{id}.shortcut"), ConvGeom::new(in_ch, width, 1, stride, 0))
                });
                blocks.push(Block {
                    id,
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                    shortcut,
                });
                in_ch = width;
            }
            groups.push(blocks);
        }
        let bn_final = BnLayer::new(store, "bn_final", in_ch);
        let fc_w = init::fan_in_uniform(rng, spec.num_outputs * in_ch, in_ch);
        let fc_weight = store.add("fc.weight", &[spec.num_outputs, in_ch], fc_w);
        let fc_bias = store.add("fc.bias", &[spec.num_outputs], vec![0.0; spec.num_outputs]);
        Wrn {
            stem,
            groups,
            bn_final,
            fc_weight,
            fc_bias,
            num_outputs: spec.num_outputs,
        }
    }

    pub fn final_channels(&self) -> usize {
        self.groups.last().and_then(|g| g.last()).map_or(WRN_STEM_CHANNELS, |b| b.conv2.geom.c_out)
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, train: bool) -> (Tensor, Vec<Tensor>, Option<WrnCache>) {
        let mut h = self.stem.forward(store, x);
        let mut taps = Vec::with_capacity(4);
        let mut block_caches = Vec::new();
        for group in &self.groups {
            let mut gc = Vec::new();
            for block in group {
                let (out, c) = block.forward(store, &h, train);
                h = out;
                if train {
                    gc.push(c);
                }
            }
            block_caches.push(gc);
            taps.push(h.clone());
        }
        let (hf, bn_final) = self.bn_final.forward(store, &h, train);
        let f = ops::relu(&hf);
        let pooled = ops::global_avg_pool(&f);
        let logits = linear::forward(
            &pooled,
            store.value(self.fc_weight),
            store.value(self.fc_bias),
            self.num_outputs,
        );
        taps.push(pooled.clone());
        let cache = train.then(|| WrnCache {
            x: x.clone(),
            blocks: block_caches,
            bn_final,
            f,
            pooled,
        });
        (logits, taps, cache)
    }

    pub fn commit_running_stats(&self, store: &mut ParamStore, cache: &WrnCache) {
        for (group, gc) in self.groups.iter().zip(&cache.blocks) {
            for (block, c) in group.iter().zip(gc) {
                if let Some(bc) = &c.bn1 {
                    block.bn1.commit(store, bc);
                }
                if let Some(bc) = &c.bn2 {
                    block.bn2.commit(store, bc);
                }
            }
        }
        if let Some(bc) = &cache.bn_final {
            self.bn_final.commit(store, bc);
        }
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &WrnCache, dlogits: &Tensor, tap_grads: &[Option<Tensor>]) {
        let p = store.get(self.fc_weight).value.clone();
        let mut dw = vec![0.0; p.len()];
        let mut db = vec![0.0; self.num_outputs];
        let mut dpooled = linear::backward(&cache.pooled, &p, dlogits, &mut dw, &mut db);
        add_into(store.grad_mut(self.fc_weight), &dw);
        add_into(store.grad_mut(self.fc_bias), &db);
        if let Some(Some(g)) = tap_grads.get(3) {
            dpooled.add_assign(g);
        }
        let df = ops::global_avg_pool_backward(&dpooled, cache.f.shape());
        let dhf = ops::relu_backward(&cache.f, &df);
        let mut dh = self
            .bn_final
            .backward(store, &dhf, cache.bn_final.as_ref().expect("train cache"));
        for (gi, (group, gc)) in self.groups.iter().zip(&cache.blocks).enumerate().rev() {
            if let Some(Some(g)) = tap_grads.get(gi) {
                dh.add_assign(g);
            }
            for (block, c) in group.iter().zip(gc).rev() {
                dh = block.backward(store, &dh, c);
            }
        }
        self.stem.backward(store, &cache.x, &dh, false);
    }
}
