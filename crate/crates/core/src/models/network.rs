//! Parameter storage, inference and backpropagation over a [`ModelSpec`].

use std::hash::{DefaultHasher, Hash, Hasher};

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2, Ix4, IxDyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::spec::{Layer, ModelSpec};
use super::Scalar;
use crate::{Error, Result};

/// A layer's output, either a stack of feature maps or a matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation<F: Scalar> {
    Map(Array4<F>),
    Flat(Array2<F>),
}

impl<F: Scalar> Activation<F> {
    pub fn as_dyn(&self) -> ArrayD<F> {
        match self {
            Activation::Map(a) => a.clone().into_dyn(),
            Activation::Flat(a) => a.clone().into_dyn(),
        }
    }

    fn map(self) -> Array4<F> {
        match self {
            Activation::Map(a) => a,
            Activation::Flat(_) => panic!("expected feature maps; spec was validated"),
        }
    }

    fn flat(self) -> Array2<F> {
        match self {
            Activation::Flat(a) => a,
            Activation::Map(_) => panic!("expected flat activations; spec was validated"),
        }
    }

    fn zip_mask(self, mask: &ArrayD<F>) -> Self {
        match self {
            Activation::Map(a) => Activation::Map(a * mask.view().into_dimensionality::<Ix4>().unwrap()),
            Activation::Flat(a) => Activation::Flat(a * mask.view().into_dimensionality::<Ix2>().unwrap()),
        }
    }
}

enum Cache<F: Scalar> {
    Conv(Array4<F>),
    Relu(ArrayD<F>),
    Lrn { input: Array4<F>, base: Array4<F>, pow: Array4<F> },
    Pool { dim: (usize, usize, usize, usize), arg: Vec<usize> },
    Dropout(Option<ArrayD<F>>),
    Flatten((usize, usize, usize, usize)),
    Dense(Array2<F>),
    Softmax,
}

/// Loss, class probabilities and parameter gradients for one batch.
pub struct Gradients<F: Scalar> {
    pub loss: F,
    pub probs: Array2<F>,
    pub grads: IndexMap<String, ArrayD<F>>,
}

#[derive(Debug, Clone)]
pub struct Network<F: Scalar> {
    spec: ModelSpec,
    params: IndexMap<String, ArrayD<F>>,
}

impl<F: Scalar> Network<F> {
    /// Fresh parameters from a seeded Glorot-uniform draw.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        for layer in &spec.layers {
            for (name, shape) in layer.params() {
                params.insert(name.clone(), init_tensor(&name, &shape, &mut rng));
            }
        }
        Ok(Network { spec, params })
    }

    /// Wraps existing parameters, checking names and shapes against the spec.
    pub fn from_params(spec: ModelSpec, mut given: IndexMap<String, ArrayD<F>>) -> Result<Self> {
        spec.shapes()?;
        let mut params = IndexMap::new();
        for (name, shape) in spec.param_shapes() {
            let t = given
                .shift_remove(&name)
                .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?}, spec expects {shape:?}",
                    t.shape()
                )));
            }
            params.insert(name, t);
        }
        if let Some(extra) = given.keys().next() {
            return Err(Error::Shape(format!("tensor {extra} is not part of the spec")));
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &IndexMap<String, ArrayD<F>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, ArrayD<F>> {
        &mut self.params
    }

    /// Same parameters at another precision.
    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| G::of(x.as_f64()))))
                .collect(),
        }
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.spec.input_channels || h != self.spec.input_size || w != self.spec.input_size {
            return Err(Error::Shape(format!(
                "input batch is {:?}, model expects (N, {}, {}, {})",
                x.dim(),
                self.spec.input_channels,
                self.spec.input_size,
                self.spec.input_size
            )));
        }
        if x.dim().0 == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    fn weight(&self, name: &str) -> &ArrayD<F> {
        &self.params[&format!("{name}.weight")]
    }

    fn bias(&self, name: &str) -> Array1<F> {
        self.params[&format!("{name}.bias")]
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap()
            .to_owned()
    }

    /// Runs every layer. With `dropout_rng` the dropout layers sample masks
    /// (training mode); without it they are the identity.
    fn run(
        &self,
        x: &Array4<F>,
        mut dropout_rng: Option<&mut dyn RngCore>,
        mut on_layer: impl FnMut(usize, &Activation<F>),
        keep_cache: bool,
    ) -> (Activation<F>, Vec<Cache<F>>) {
        let mut act = Activation::Map(x.clone());
        let mut caches = Vec::new();
        for (li, layer) in self.spec.layers.iter().enumerate() {
            let (next, cache) = match layer {
                Layer::Conv { name, padding, .. } => {
                    let input = act.map();
                    let w = self.weight(name).view().into_dimensionality::<Ix4>().unwrap();
                    let out = ops::conv_forward(&input, w, &self.bias(name), *padding);
                    (Activation::Map(out), Cache::Conv(input))
                }
                Layer::Relu => {
                    let out = match act {
                        Activation::Map(a) => Activation::Map(a.mapv(relu)),
                        Activation::Flat(a) => Activation::Flat(a.mapv(relu)),
                    };
                    let cache = if keep_cache { out.as_dyn() } else { ArrayD::zeros(IxDyn(&[0])) };
                    (out, Cache::Relu(cache))
                }
                Layer::Lrn(p) => {
                    let input = act.map();
                    let (out, base, pow) = ops::lrn_forward(&input, p.depth_radius, p.bias, p.alpha, p.beta);
                    (Activation::Map(out), Cache::Lrn { input, base, pow })
                }
                Layer::MaxPool { size, stride } => {
                    let input = act.map();
                    let dim = input.dim();
                    let (out, arg) = ops::maxpool_forward(&input, *size, *stride);
                    (Activation::Map(out), Cache::Pool { dim, arg })
                }
                Layer::Dropout { rate } => match dropout_rng.as_deref_mut() {
                    Some(rng) if *rate > 0.0 => {
                        let (out, mask) = match act {
                            Activation::Map(a) => {
                                let mask = dropout_mask(a.raw_dim(), *rate, rng);
                                (Activation::Map(a * &mask), mask.into_dyn())
                            }
                            Activation::Flat(a) => {
                                let mask = dropout_mask(a.raw_dim(), *rate, rng);
                                (Activation::Flat(a * &mask), mask.into_dyn())
                            }
                        };
                        (out, Cache::Dropout(Some(mask)))
                    }
                    _ => (act, Cache::Dropout(None)),
                },
                Layer::Flatten => {
                    let input = act.map();
                    let dim = input.dim();
                    let flat = input
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((dim.0, dim.1 * dim.2 * dim.3))
                        .unwrap();
                    (Activation::Flat(flat), Cache::Flatten(dim))
                }
                Layer::Dense { name, .. } => {
                    let input = act.flat();
                    let w = self.weight(name).view().into_dimensionality::<Ix2>().unwrap();
                    let out = input.dot(&w) + &self.bias(name);
                    (Activation::Flat(out), Cache::Dense(input))
                }
                Layer::Softmax => {
                    let out = ops::softmax(&act.flat());
                    (Activation::Flat(out), Cache::Softmax)
                }
            };
            on_layer(li, &next);
            act = next;
            if keep_cache {
                caches.push(cache);
            }
        }
        (act, caches)
    }

    /// Class probabilities for a (N, 1, 48, 48) batch, dropout disabled.
    pub fn forward(&self, x: &Array4<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        Ok(self.run(x, None, |_, _| {}, false).0.flat())
    }

    /// Inference-mode output of every layer, in order.
    pub fn activations(&self, x: &Array4<F>) -> Result<Vec<Activation<F>>> {
        self.check_input(x)?;
        let mut out = Vec::new();
        self.run(x, None, |_, a| out.push(a.clone()), false);
        Ok(out)
    }

    /// Mean cross-entropy of the softmax output against `labels`, with
    /// dropout disabled.
    pub fn loss(&self, x: &Array4<F>, labels: &[usize]) -> Result<F> {
        let probs = self.forward(x)?;
        cross_entropy(&probs, labels)
    }

    /// Forward and backward pass. Dropout is active when `dropout_rng` is
    /// given.
    pub fn gradients(
        &self,
        x: &Array4<F>,
        labels: &[usize],
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Gradients<F>> {
        self.check_input(x)?;
        let n = x.dim().0;
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.spec.num_classes) {
            return Err(Error::Shape(format!("label {bad} outside {} classes", self.spec.num_classes)));
        }
        let (out, caches) = self.run(x, dropout_rng, |_, _| {}, true);
        let probs = out.flat();
        let loss = cross_entropy(&probs, labels)?;

        // d(mean CE)/d(logits) = (p - onehot) / N; the softmax cache is consumed here.
        let inv_n = F::of(1.0 / n as f64);
        let mut dlogits = probs.clone();
        for (mut row, &y) in dlogits.outer_iter_mut().zip(labels) {
            row[y] -= F::one();
            row.mapv_inplace(|v| v * inv_n);
        }

        let mut grads: IndexMap<String, ArrayD<F>> = IndexMap::new();
        let mut grad = Activation::Flat(dlogits);
        let layers = &self.spec.layers;
        for (li, cache) in caches.into_iter().enumerate().rev() {
            grad = match (&layers[li], cache) {
                (Layer::Softmax, Cache::Softmax) => grad,
                (Layer::Dense { name, .. }, Cache::Dense(input)) => {
                    let g = grad.flat();
                    let w = self.weight(name).view().into_dimensionality::<Ix2>().unwrap();
                    grads.insert(format!("{name}.weight"), input.t().dot(&g).into_dyn());
                    grads.insert(format!("{name}.bias"), g.sum_axis(Axis(0)).into_dyn());
                    Activation::Flat(g.dot(&w.t()))
                }
                (Layer::Flatten, Cache::Flatten(dim)) => {
                    let g = grad.flat();
                    Activation::Map(g.into_shape_with_order(dim).unwrap())
                }
                (Layer::Dropout { .. }, Cache::Dropout(mask)) => match mask {
                    Some(m) => grad.zip_mask(&m),
                    None => grad,
                },
                (Layer::MaxPool { .. }, Cache::Pool { dim, arg }) => {
                    Activation::Map(ops::maxpool_backward(dim, &arg, &grad.map()))
                }
                (Layer::Lrn(p), Cache::Lrn { input, base, pow }) => Activation::Map(ops::lrn_backward(
                    &input,
                    &base,
                    &pow,
                    &grad.map(),
                    p.depth_radius,
                    p.alpha,
                    p.beta,
                )),
                (Layer::Relu, Cache::Relu(out)) => {
                    let pass = out.mapv(|v| if v > F::zero() { F::one() } else { F::zero() });
                    grad.zip_mask(&pass)
                }
                (Layer::Conv { name, padding, .. }, Cache::Conv(input)) => {
                    let w = self.weight(name).view().into_dimensionality::<Ix4>().unwrap();
                    let (dx, dw, db) = ops::conv_backward(&input, w, &grad.map(), *padding);
                    grads.insert(format!("{name}.weight"), dw.into_dyn());
                    grads.insert(format!("{name}.bias"), db.into_dyn());
                    Activation::Map(dx)
                }
                _ => unreachable!("cache kinds follow the layer list"),
            };
        }
        // report gradients in parameter order
        let grads = self
            .params
            .keys()
            .map(|k| (k.clone(), grads.shift_remove(k).expect("every parameter has a gradient")))
            .collect();
        Ok(Gradients { loss, probs, grads })
    }
}

/// Inverted dropout: kept units are scaled by 1/(1 - rate).
fn dropout_mask<F: Scalar, D: ndarray::Dimension>(dim: D, rate: f64, rng: &mut dyn RngCore) -> ndarray::Array<F, D> {
    let keep = 1.0 - rate;
    let scale = F::of(1.0 / keep);
    // P(u32 < threshold) = keep
    let threshold = (keep * 4_294_967_296.0) as u64;
    ndarray::Array::from_shape_simple_fn(dim, || {
        if (rng.next_u32() as u64) < threshold {
            scale
        } else {
            F::zero()
        }
    })
}

/// Written as a comparison so NaN passes through instead of becoming 0.
fn relu<F: Scalar>(v: F) -> F {
    if v < F::zero() {
        F::zero()
    } else {
        v
    }
}

fn cross_entropy<F: Scalar>(probs: &Array2<F>, labels: &[usize]) -> Result<F> {
    if labels.len() != probs.nrows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), probs.nrows())));
    }
    let tiny = F::of(1e-30);
    let total: F = probs
        .outer_iter()
        .zip(labels)
        // NaN must survive the clamp so callers can detect divergence
        .map(|(row, &y)| -(if row[y] < tiny { tiny } else { row[y] }).ln())
        .sum();
    Ok(total / F::of(labels.len() as f64))
}

/// Glorot-uniform weights, limit sqrt(6 / (fan_in + fan_out)), and zero
/// biases. Values are drawn in f64 so every precision starts from the same
/// numbers.
pub(crate) fn init_tensor<F: Scalar>(name: &str, shape: &[usize], rng: &mut impl Rng) -> ArrayD<F> {
    if name.ends_with(".bias") {
        return ArrayD::zeros(IxDyn(shape));
    }
    let (fan_in, fan_out) = match shape {
        // conv weights are (out, in, k, k)
        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
        // dense weights are (in, out)
        [i, o] => (*i, *o),
        _ => {
            let n = shape.iter().product::<usize>().max(1);
            (n, n)
        }
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::of(rng.random_range(-limit..limit)))
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over the probes that were compared.
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes where every step size flipped some ReLU or max-pool choice.
    pub skipped: usize,
}

const CHECK_STEPS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];

/// Compares analytic gradients with central finite differences over
/// `probes` randomly chosen entries of every tensor. Dropout is off so the
/// loss is a deterministic function of the parameters.
///
/// The loss is only piecewise smooth, so each probe uses the largest step
/// in [`CHECK_STEPS`] for which `θ ± h` keep every ReLU sign and max-pool
/// choice of `θ`; a difference across a switch point says nothing about the
/// gradient.
pub fn gradient_check(
    net: &Network<f64>,
    x: &Array4<f64>,
    labels: &[usize],
    probes: usize,
    seed: u64,
) -> Result<GradCheck> {
    net.check_input(x)?;
    let analytic = net.gradients(x, labels, None)?.grads;
    let (_, pattern) = net.loss_and_switches(x, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut out = GradCheck { max_rel_error: 0.0, probes: 0, skipped: 0 };
    for (name, grad) in &analytic {
        let len = grad.len();
        for _ in 0..probes.min(len) {
            let k = rng.random_range(0..len);
            let orig = net.params()[name].as_slice().unwrap()[k];
            let exact = grad.as_slice().unwrap()[k];
            out.probes += 1;
            let mut numeric = None;
            for h in CHECK_STEPS {
                set_entry(&mut probe, name, k, orig + h);
                let (up, p_up) = probe.loss_and_switches(x, labels)?;
                set_entry(&mut probe, name, k, orig - h);
                let (down, p_down) = probe.loss_and_switches(x, labels)?;
                set_entry(&mut probe, name, k, orig);
                if p_up == pattern && p_down == pattern {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
            }
            match numeric {
                Some(n) => {
                    let rel = (exact - n).abs() / exact.abs().max(n.abs()).max(1e-8);
                    out.max_rel_error = out.max_rel_error.max(rel);
                }
                None => out.skipped += 1,
            }
        }
    }
    Ok(out)
}

impl Network<f64> {
    /// Inference loss plus a fingerprint of every ReLU sign and max-pool
    /// choice taken on the way.
    fn loss_and_switches(&self, x: &Array4<f64>, labels: &[usize]) -> Result<(f64, u64)> {
        let (out, caches) = self.run(x, None, |_, _| {}, true);
        let mut h = DefaultHasher::new();
        for cache in &caches {
            match cache {
                Cache::Relu(a) => {
                    for chunk in a.as_slice().expect("fresh activations are contiguous").chunks(64) {
                        let bits = chunk.iter().enumerate().fold(0u64, |w, (i, &v)| w | (((v > 0.0) as u64) << i));
                        h.write_u64(bits);
                    }
                }
                Cache::Pool { arg, .. } => arg.hash(&mut h),
                _ => {}
            }
        }
        Ok((cross_entropy(&out.flat(), labels)?, h.finish()))
    }
}

fn set_entry(net: &mut Network<f64>, name: &str, k: usize, v: f64) {
    net.params_mut()[name].as_slice_mut().expect("standard layout")[k] = v;
}
