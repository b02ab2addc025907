use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::layers::{self, Dims, KERNEL};
use crate::nn::{NnError, Tensor};
use crate::scalar::Scalar;

/// Architecture of a Q-network: a stack of conv(3x3, same) -> ReLU -> maxpool(2x2)
/// blocks followed by fully connected layers, ReLU between hidden layers.
///
/// With no conv blocks the network is a plain MLP over the flattened input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Per-sample input as `[height, width, channels]`.
    pub input: [usize; 3],
    pub conv_filters: Vec<usize>,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl NetSpec {
    /// 40x80x15 input, 32/32/64 filters, fc 128 -> 3.
    pub fn paper() -> Self {
        Self {
            input: [40, 80, 15],
            conv_filters: vec![32, 32, 64],
            hidden: vec![128],
            outputs: 3,
        }
    }

    /// 24x48x9 input, 8/8/16 filters, fc 64 -> 3.
    pub fn desk() -> Self {
        Self {
            input: [24, 48, 9],
            conv_filters: vec![8, 8, 16],
            hidden: vec![64],
            outputs: 3,
        }
    }

    pub fn mlp(inputs: usize, hidden: Vec<usize>, outputs: usize) -> Self {
        Self {
            input: [1, 1, inputs],
            conv_filters: vec![],
            hidden,
            outputs,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Activation shapes after each conv block (post-pool), as `[h, w, c]`.
    pub fn block_shapes(&self) -> Vec<[usize; 3]> {
        let [mut h, mut w, _] = self.input;
        self.conv_filters
            .iter()
            .map(|&f| {
                h /= 2;
                w /= 2;
                [h, w, f]
            })
            .collect()
    }

    pub fn flatten_len(&self) -> usize {
        self.block_shapes()
            .last()
            .map(|s| s.iter().product())
            .unwrap_or_else(|| self.input_len())
    }

    /// Parameter tensor names and shapes in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.input[2];
        for (i, &f) in self.conv_filters.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![KERNEL, KERNEL, cin, f]));
            out.push((format!("conv{}.bias", i + 1), vec![f]));
            cin = f;
        }
        let mut fin = self.flatten_len();
        let widths: Vec<usize> = self.hidden.iter().copied().chain([self.outputs]).collect();
        for (i, &fout) in widths.iter().enumerate() {
            out.push((format!("fc{}.weight", i + 1), vec![fin, fout]));
            out.push((format!("fc{}.bias", i + 1), vec![fout]));
            fin = fout;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Multiply-accumulate count for one forward pass of one sample.
    pub fn forward_macs(&self) -> usize {
        let [mut h, mut w, mut c] = self.input;
        let mut total = 0;
        for &f in &self.conv_filters {
            total += h * w * KERNEL * KERNEL * c * f;
            h /= 2;
            w /= 2;
            c = f;
        }
        let mut fin = self.flatten_len();
        for &fout in self.hidden.iter().chain([&self.outputs]) {
            total += fin * fout;
            fin = fout;
        }
        total
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let [h, w, c] = self.input;
        let scale = 1usize << self.conv_filters.len();
        if h == 0 || w == 0 || c == 0 || self.outputs == 0 {
            return Err(NnError::InvalidSpec("zero-sized input or output".into()));
        }
        if h / scale == 0 || w / scale == 0 {
            return Err(NnError::InvalidSpec(format!(
                "input {h}x{w} too small for {} pooling stages",
                self.conv_filters.len()
            )));
        }
        if self.conv_filters.iter().chain(&self.hidden).any(|&n| n == 0) {
            return Err(NnError::InvalidSpec("zero-width layer".into()));
        }
        Ok(())
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Q-network parameters.
///
/// Every mutation bumps an internal generation counter so that a forward cache
/// taken before the mutation is rejected by [`PolicyNet::backward`].
#[derive(Debug)]
pub struct PolicyNet<T> {
    spec: NetSpec,
    params: Vec<Tensor<T>>,
    id: u64,
    generation: u64,
}

impl<T: Scalar> Clone for PolicyNet<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

/// Activations retained by a training forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    net_id: u64,
    generation: u64,
    batch: usize,
    blocks: Vec<ConvCache<T>>,
    /// Input to each dense layer.
    dense_inputs: Vec<Vec<T>>,
}

#[derive(Debug)]
struct ConvCache<T> {
    in_dims: Dims,
    cols: Vec<T>,
    activated: Vec<T>,
    argmax: Vec<u32>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Whether two passes took the same ReLU and max-pool branches everywhere,
    /// i.e. both inputs lie in the same linear region of the network.
    pub fn same_branches(&self, other: &ForwardCache<T>) -> bool {
        let signs = |a: &[T], b: &[T]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (*x > T::zero()) == (*y > T::zero()));
        self.blocks.len() == other.blocks.len()
            && self.dense_inputs.len() == other.dense_inputs.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.argmax == b.argmax && signs(&a.activated, &b.activated))
            && self.dense_inputs.iter().zip(&other.dense_inputs).all(|(a, b)| signs(a, b))
    }
}

/// Gradients laid out like [`PolicyNet::params`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(spec: &NetSpec) -> Self {
        Self {
            tensors: spec.param_layout().iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn global_norm(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(T::zero(), |acc, &g| acc + g * g)
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }
}

impl<T: Scalar> PolicyNet<T> {
    /// All parameters zero.
    pub fn zeros(spec: NetSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let params = spec.param_layout().iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Ok(Self { spec, params, id: fresh_id(), generation: 0 })
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(spec)?;
        for (tensor, (name, shape)) in net.params.iter_mut().zip(net.spec.param_layout()) {
            if !name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = shape[..shape.len() - 1].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in tensor.data_mut() {
                *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub(crate) fn from_parts(spec: NetSpec, params: Vec<Tensor<T>>) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = spec.param_layout();
        if layout.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{} tensors", layout.len()),
                found: format!("{} tensors", params.len()),
            });
        }
        for ((name, shape), t) in layout.iter().zip(&params) {
            if t.shape() != shape.as_slice() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{name} {shape:?}"),
                    found: format!("{:?}", t.shape()),
                });
            }
        }
        Ok(Self { spec, params, id: fresh_id(), generation: 0 })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable view of one parameter tensor; invalidates outstanding caches.
    pub fn param_mut(&mut self, index: usize) -> &mut [T] {
        self.generation += 1;
        self.params[index].data_mut()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<T>] {
        self.generation += 1;
        &mut self.params
    }

    /// Hard copy of another network's parameters (target-network sync).
    pub fn copy_from(&mut self, other: &PolicyNet<T>) -> Result<(), NnError> {
        if self.spec != other.spec {
            return Err(NnError::ShapeMismatch {
                expected: format!("{:?}", self.spec),
                found: format!("{:?}", other.spec),
            });
        }
        self.generation += 1;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> PolicyNet<U> {
        PolicyNet {
            spec: self.spec.clone(),
            params: self.params.iter().map(|t| t.cast()).collect(),
            id: fresh_id(),
            generation: 0,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize, NnError> {
        let shape = input.shape();
        let ok = shape.len() == 4 && shape[1..] == self.spec.input[..];
        if !ok {
            return Err(NnError::ShapeMismatch {
                expected: format!("[batch, {}, {}, {}]", self.spec.input[0], self.spec.input[1], self.spec.input[2]),
                found: format!("{shape:?}"),
            });
        }
        Ok(shape[0])
    }

    /// Q-values for a batch `[B, H, W, C]`, returning `[B, outputs]`.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.run(input, false).map(|(q, _)| q)
    }

    /// Forward pass that keeps the activations needed by [`Self::backward`].
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let (q, cache) = self.run(input, true)?;
        Ok((q, cache.expect("cache requested")))
    }

    fn run(&self, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<ForwardCache<T>>), NnError> {
        let batch = self.check_input(input)?;
        let [h, w, c] = self.spec.input;
        let mut dims = Dims { batch, height: h, width: w, channels: c };
        let mut act: Vec<T> = input.data().to_vec();
        let mut blocks = Vec::with_capacity(self.spec.conv_filters.len());
        let mut p = 0;

        for &filters in &self.spec.conv_filters {
            let k = KERNEL * KERNEL * dims.channels;
            let mut cols = vec![T::zero(); dims.pixels() * k];
            layers::im2col(&act, dims, &mut cols);
            let mut conv = vec![T::zero(); dims.pixels() * filters];
            layers::affine(&cols, dims.pixels(), k, self.params[p].data(), self.params[p + 1].data(), &mut conv);
            p += 2;
            layers::relu_inplace(&mut conv);
            let conv_dims = Dims { channels: filters, ..dims };
            let pd = layers::pooled_dims(conv_dims);
            let mut pooled = vec![T::zero(); pd.numel()];
            let mut argmax = vec![0u32; pd.numel()];
            layers::maxpool2(&conv, conv_dims, &mut pooled, &mut argmax);
            if keep {
                blocks.push(ConvCache { in_dims: dims, cols, activated: conv, argmax });
            }
            act = pooled;
            dims = pd;
        }

        let n_dense = self.spec.hidden.len() + 1;
        let mut dense_inputs = Vec::with_capacity(n_dense);
        let mut fin = self.spec.flatten_len();
        for layer in 0..n_dense {
            let fout = self.params[p + 1].len();
            let mut out = vec![T::zero(); batch * fout];
            layers::affine(&act, batch, fin, self.params[p].data(), self.params[p + 1].data(), &mut out);
            p += 2;
            if layer + 1 < n_dense {
                layers::relu_inplace(&mut out);
            }
            if keep {
                dense_inputs.push(std::mem::replace(&mut act, out));
            } else {
                act = out;
            }
            fin = fout;
        }

        let q = Tensor::from_vec(&[batch, self.spec.outputs], act)?;
        let cache = keep.then(|| ForwardCache {
            net_id: self.id,
            generation: self.generation,
            batch,
            blocks,
            dense_inputs,
        });
        Ok((q, cache))
    }

    /// Parameter gradients of `sum(dq * q)` for the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache<T>, dq: &Tensor<T>) -> Result<Gradients<T>, NnError> {
        self.backprop(cache, dq, false).map(|(g, _)| g)
    }

    /// Like [`Self::backward`] but also returns the gradient w.r.t. the input batch.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        dq: &Tensor<T>,
    ) -> Result<(Gradients<T>, Tensor<T>), NnError> {
        self.backprop(cache, dq, true)
            .map(|(g, dx)| (g, dx.expect("input gradient requested")))
    }

    fn backprop(
        &self,
        cache: &ForwardCache<T>,
        dq: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Gradients<T>, Option<Tensor<T>>), NnError> {
        if cache.net_id != self.id || cache.generation != self.generation {
            return Err(NnError::StaleCache);
        }
        let batch = cache.batch;
        if dq.shape() != [batch, self.spec.outputs] {
            return Err(NnError::ShapeMismatch {
                expected: format!("[{batch}, {}]", self.spec.outputs),
                found: format!("{:?}", dq.shape()),
            });
        }
        let mut grads = Gradients::zeros_like(&self.spec);
        let n_conv = self.spec.conv_filters.len();
        let n_dense = self.spec.hidden.len() + 1;
        let mut delta: Vec<T> = dq.data().to_vec();

        for layer in (0..n_dense).rev() {
            let p = 2 * n_conv + 2 * layer;
            let input = &cache.dense_inputs[layer];
            let fin = input.len() / batch;
            let fout = self.params[p + 1].len();
            let need_dx = layer > 0 || n_conv > 0 || want_input;
            let mut dx = if need_dx { vec![T::zero(); input.len()] } else { Vec::new() };
            let (gw, gb) = split_pair(&mut grads.tensors, p);
            layers::affine_backward(
                input,
                batch,
                fin,
                self.params[p].data(),
                &delta,
                fout,
                gw.data_mut(),
                gb.data_mut(),
                need_dx.then_some(dx.as_mut_slice()),
            );
            if layer > 0 {
                // the input of this layer is the ReLU output of the previous one
                layers::relu_backward(input, &mut dx);
            }
            delta = dx;
        }

        for (i, block) in cache.blocks.iter().enumerate().rev() {
            let p = 2 * i;
            let filters = self.spec.conv_filters[i];
            let conv_dims = Dims { channels: filters, ..block.in_dims };
            let mut dconv = vec![T::zero(); conv_dims.numel()];
            layers::maxpool2_backward(&delta, &block.argmax, &mut dconv);
            layers::relu_backward(&block.activated, &mut dconv);
            let k = KERNEL * KERNEL * block.in_dims.channels;
            let need_dx = i > 0 || want_input;
            let mut dcols = if need_dx { vec![T::zero(); block.cols.len()] } else { Vec::new() };
            let (gw, gb) = split_pair(&mut grads.tensors, p);
            layers::affine_backward(
                &block.cols,
                conv_dims.pixels(),
                k,
                self.params[p].data(),
                &dconv,
                filters,
                gw.data_mut(),
                gb.data_mut(),
                need_dx.then_some(dcols.as_mut_slice()),
            );
            if need_dx {
                let mut dx = vec![T::zero(); block.in_dims.numel()];
                layers::col2im_add(&dcols, block.in_dims, &mut dx);
                delta = dx;
            } else {
                delta = Vec::new();
            }
        }

        let dinput = if want_input {
            let [h, w, c] = self.spec.input;
            Some(Tensor::from_vec(&[batch, h, w, c], delta)?)
        } else {
            None
        };
        Ok((grads, dinput))
    }
}

fn split_pair<T>(tensors: &mut [Tensor<T>], p: usize) -> (&mut Tensor<T>, &mut Tensor<T>) {
    let (a, b) = tensors[p..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(spec: &NetSpec, batch: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w, c] = spec.input;
        let data = (0..batch * h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[batch, h, w, c], data).unwrap()
    }

    #[test]
    fn paper_shapes_propagate() {
        let spec = NetSpec::paper();
        assert_eq!(spec.block_shapes(), vec![[20, 40, 32], [10, 20, 32], [5, 10, 64]]);
        assert_eq!(spec.flatten_len(), 3200);
        let net = PolicyNet::<f32>::new(spec.clone(), 1).unwrap();
        let (q, cache) = net.forward(&random_input(&spec, 1, 2)).unwrap();
        assert_eq!(q.shape(), &[1, 3]);
        assert_eq!(cache.blocks[0].activated.len(), 40 * 80 * 32);
        assert_eq!(cache.dense_inputs[0].len(), 3200);
        assert_eq!(cache.dense_inputs[1].len(), 128);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let spec = NetSpec::desk();
        let net = PolicyNet::<f32>::zeros(spec.clone()).unwrap();
        let q = net.predict(&random_input(&spec, 3, 4)).unwrap();
        assert!(q.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_rows_give_identical_q() {
        let spec = NetSpec::desk();
        let net = PolicyNet::<f32>::new(spec.clone(), 9).unwrap();
        let one = random_input(&spec, 1, 5);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let [h, w, c] = spec.input;
        let two = Tensor::from_vec(&[2, h, w, c], data).unwrap();
        let q = net.predict(&two).unwrap();
        assert_eq!(q.row(0), q.row(1));
        assert_eq!(q.row(0), net.predict(&one).unwrap().row(0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = NetSpec::desk();
        let net = PolicyNet::<f32>::new(spec.clone(), 3).unwrap();
        let (_, cache) = net.forward(&random_input(&spec, 2, 1)).unwrap();
        let g = net.backward(&cache, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(g.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_cache_rejected() {
        let spec = NetSpec::mlp(4, vec![8], 3);
        let mut net = PolicyNet::<f64>::new(spec.clone(), 3).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        net.param_mut(0)[0] += 1.0;
        assert!(matches!(net.backward(&cache, &Tensor::zeros(&[1, 3])), Err(NnError::StaleCache)));
        let other = net.clone();
        let (_, cache) = other.forward(&x).unwrap();
        assert!(matches!(net.backward(&cache, &Tensor::zeros(&[1, 3])), Err(NnError::StaleCache)));
    }

    #[test]
    fn dead_relu_unit_gets_no_incoming_gradient() {
        let spec = NetSpec::mlp(3, vec![2], 1);
        let mut net = PolicyNet::<f64>::new(spec, 1).unwrap();
        // hidden unit 0: all-negative weights and bias on non-negative inputs
        {
            let w = net.param_mut(0);
            w[0] = -1.0;
            w[2] = -1.0;
            w[4] = -1.0;
        }
        net.param_mut(1)[0] = -0.5;
        let x = Tensor::from_vec(&[2, 1, 1, 3], vec![0.2, 0.4, 0.9, 1.0, 0.0, 0.3]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &Tensor::from_vec(&[2, 1], vec![1.0, -2.0]).unwrap()).unwrap();
        let gw = g.tensors[0].data();
        assert_eq!([gw[0], gw[2], gw[4]], [0.0, 0.0, 0.0]);
        assert_eq!(g.tensors[1].data()[0], 0.0);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = PolicyNet::<f32>::new(NetSpec::desk(), 0).unwrap();
        let bad = Tensor::zeros(&[1, 24, 48, 3]);
        assert!(matches!(net.predict(&bad), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn desk_cheaper_than_paper() {
        assert!(NetSpec::desk().forward_macs() * 4 < NetSpec::paper().forward_macs());
    }
}
