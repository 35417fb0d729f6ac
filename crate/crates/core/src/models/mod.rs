//! The signal-transformation-recognition network, the emotion-recognition
//! network, and weight transfer between them.
//!
//! Both networks share the same convolutional trunk:
//!
//! ```text
//! input 2560×1
//!   block 1: 2 × conv(K=32, 32 filters) + ReLU   -> 2560×32
//!   maxpool(8, stride 2)                         -> 1277×32
//!   block 2: 2 × conv(K=16, 64 filters) + ReLU   -> 1277×64
//!   maxpool(8, stride 2)                         ->  635×64
//!   block 3: 2 × conv(K=8, 128 filters) + ReLU   ->  635×128
//!   global max pool                              ->  128
//! ```
//!
//! The pretext network adds seven independent dense heads (one per
//! transformation id); the emotion network adds one smaller dense head.

mod format;

pub use format::{load_model, save_model, ModelFile, ModelKind, FORMAT_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ops, Gradients, ParamSet, Scalar, Tensor};
use crate::rng;
use crate::transforms::TransformId;

/// Width of each convolution in a block and the number of filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub kernel: usize,
    pub filters: usize,
}

/// Shape of the convolutional trunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkSpec {
    pub input_len: usize,
    pub blocks: Vec<ConvBlockSpec>,
    pub convs_per_block: usize,
    pub pool: usize,
    pub pool_stride: usize,
}

impl Default for TrunkSpec {
    fn default() -> Self {
        TrunkSpec {
            input_len: crate::signal::WINDOW_LEN,
            blocks: vec![
                ConvBlockSpec { kernel: 32, filters: 32 },
                ConvBlockSpec { kernel: 16, filters: 64 },
                ConvBlockSpec { kernel: 8, filters: 128 },
            ],
            convs_per_block: 2,
            pool: 8,
            pool_stride: 2,
        }
    }
}

impl TrunkSpec {
    /// Width of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.filters)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.convs_per_block == 0 {
            return Err(Error::Parameter("trunk needs at least one conv block".into()));
        }
        let mut len = self.input_len;
        for _ in 1..self.blocks.len() {
            if len < self.pool {
                return Err(Error::Parameter(format!(
                    "trunk input length {} too short for {} pooling stages",
                    self.input_len,
                    self.blocks.len() - 1
                )));
            }
            len = ops::pooled_len(len, self.pool, self.pool_stride);
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64, path: &[u64]) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut r = rng::stream(seed, path);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(r.random_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

/// Forward/backward mode. Dropout is only active in training mode, where its
/// masks come from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Inference,
}

#[derive(Debug, Clone, Copy)]
enum TrunkOp {
    Conv { kernel: usize, bias: usize },
    Pool,
    GlobalPool,
}

/// Convolutional trunk parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk<T> {
    pub spec: TrunkSpec,
    pub params: ParamSet<T>,
}

/// Activations and pooling indices kept for the backward pass.
pub struct TrunkCache<T> {
    acts: Vec<Tensor<T>>,
    argmax: Vec<Vec<u32>>,
}

impl<T: Scalar> Trunk<T> {
    pub fn new(spec: TrunkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::default();
        let mut cin = 1;
        for (b, block) in spec.blocks.iter().enumerate() {
            for c in 0..spec.convs_per_block {
                let path = [0, b as u64, c as u64];
                let k = block.kernel;
                let w = glorot(&[k, cin, block.filters], k * cin, k * block.filters, seed, &path);
                params.push(format!("trunk.b{}.conv{}.kernel", b + 1, c + 1), w);
                params.push(
                    format!("trunk.b{}.conv{}.bias", b + 1, c + 1),
                    Tensor::zeros(&[block.filters]),
                );
                cin = block.filters;
            }
        }
        Ok(Trunk { spec, params })
    }

    fn ops(&self) -> Vec<TrunkOp> {
        let mut out = Vec::new();
        let mut idx = 0;
        for b in 0..self.spec.blocks.len() {
            if b > 0 {
                out.push(TrunkOp::Pool);
            }
            for _ in 0..self.spec.convs_per_block {
                out.push(TrunkOp::Conv { kernel: idx, bias: idx + 1 });
                idx += 2;
            }
        }
        out.push(TrunkOp::GlobalPool);
        out
    }

    pub fn is_frozen(&self) -> bool {
        self.params.params.iter().all(|p| !p.trainable)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != [self.spec.input_len, 1] {
            return Err(Error::shape("trunk input", x.shape(), &[self.spec.input_len, 1]));
        }
        Ok(())
    }

    /// Forward pass of one `[L, 1]` window to its `[C]` feature vector.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, TrunkCache<T>)> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        let mut argmax = Vec::new();
        for op in self.ops() {
            let input = acts.last().expect("input pushed");
            let out = match op {
                TrunkOp::Conv { kernel, bias } => ops::relu(&ops::conv1d(
                    input,
                    self.params.value(kernel),
                    self.params.value(bias),
                )?),
                TrunkOp::Pool => {
                    let p = ops::maxpool1d(input, self.spec.pool, self.spec.pool_stride)?;
                    argmax.push(p.argmax);
                    p.output
                }
                TrunkOp::GlobalPool => {
                    let p = ops::global_maxpool(input)?;
                    argmax.push(p.argmax);
                    p.output
                }
            };
            acts.push(out);
        }
        let features = acts.last().expect("non-empty").clone();
        Ok((features, TrunkCache { acts, argmax }))
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Activation shapes after every block, pooling stage and the global pool.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let x = Tensor::zeros(&[self.spec.input_len, 1]);
        let (_, cache) = self.forward(&x)?;
        let mut trace = vec![cache.acts[0].shape().to_vec()];
        let ops = self.ops();
        for (i, op) in ops.iter().enumerate() {
            let last_conv_of_block =
                matches!(op, TrunkOp::Conv { .. }) && !matches!(ops.get(i + 1), Some(TrunkOp::Conv { .. }));
            match op {
                TrunkOp::Conv { .. } if !last_conv_of_block => {}
                TrunkOp::GlobalPool => {
                    let c = cache.acts[i + 1].len();
                    trace.push(vec![1, c]);
                }
                _ => trace.push(cache.acts[i + 1].shape().to_vec()),
            }
        }
        Ok(trace)
    }

    /// Accumulate parameter gradients for `dfeat = ∂loss/∂features` into
    /// `grads`. Frozen parameters get nothing; a fully frozen trunk returns
    /// immediately.
    pub fn backward(&self, cache: &TrunkCache<T>, dfeat: &Tensor<T>, grads: &mut Gradients<T>) -> Result<()> {
        if self.is_frozen() {
            return Ok(());
        }
        let ops = self.ops();
        let mut dy = dfeat.clone();
        let mut pool_idx = cache.argmax.len();
        for (i, op) in ops.iter().enumerate().rev() {
            let input = &cache.acts[i];
            match *op {
                TrunkOp::GlobalPool | TrunkOp::Pool => {
                    pool_idx -= 1;
                    let c = *input.shape().last().expect("2-d activation");
                    let rows = dy.len() / c;
                    let dy2 = dy.reshape(&[rows, c])?;
                    dy = ops::maxpool1d_backward(&cache.argmax[pool_idx], input.shape()[0], &dy2);
                }
                TrunkOp::Conv { kernel, bias } => {
                    let dz = ops::relu_backward(&cache.acts[i + 1], &dy);
                    let g = ops::conv1d_backward(input, self.params.value(kernel), &dz, i > 0)?;
                    if self.params.params[kernel].trainable {
                        grads.add(kernel, &g.kernel);
                    }
                    if self.params.params[bias].trainable {
                        grads.add(bias, &g.bias);
                    }
                    match g.input {
                        Some(dx) => dy = dx,
                        None => break,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Dense stack: hidden ReLU layers with dropout after each, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    /// Layer widths including input and output, e.g. `[128, 128, 128, 1]`.
    pub dims: Vec<usize>,
    pub params: ParamSet<T>,
}

pub struct HeadCache<T> {
    /// Input to each dense layer (after dropout for hidden inputs).
    inputs: Vec<Tensor<T>>,
    /// ReLU outputs of hidden layers, before dropout.
    hidden: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(prefix: &str, dims: &[usize], seed: u64, path: &[u64]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Parameter(format!("invalid head widths {dims:?}")));
        }
        let mut params = ParamSet::default();
        for (i, w) in dims.windows(2).enumerate() {
            let mut p = path.to_vec();
            p.push(i as u64);
            params.push(format!("{prefix}.dense{}.weights", i + 1), glorot(&[w[0], w[1]], w[0], w[1], seed, &p));
            params.push(format!("{prefix}.dense{}.bias", i + 1), Tensor::zeros(&[w[1]]));
        }
        Ok(Head {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated")
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Names of the dense weight matrices (L2-regularised).
    pub fn weight_indices(&self) -> impl Iterator<Item = usize> {
        (0..self.layers()).map(|i| 2 * i)
    }

    pub fn forward(&self, feat: &Tensor<T>, dropout: f64, mode: Mode) -> Result<HeadCache<T>> {
        let n = self.layers();
        let mut inputs = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n - 1);
        let mut masks = Vec::with_capacity(n - 1);
        let mut x = feat.clone();
        for i in 0..n {
            let z = ops::dense(&x, self.params.value(2 * i), self.params.value(2 * i + 1))?;
            inputs.push(x);
            if i + 1 == n {
                return Ok(HeadCache {
                    inputs,
                    hidden,
                    masks,
                    probs: ops::sigmoid(&z),
                });
            }
            let h = ops::relu(&z);
            let (d, mask) = match mode {
                Mode::Train { seed } => ops::dropout(&h, dropout, rng::derive_seed(seed, &[i as u64]), true)?,
                Mode::Inference => (h.clone(), None),
            };
            hidden.push(h);
            masks.push(mask);
            x = d;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Backward from `dlogits = ∂loss/∂(pre-sigmoid outputs)`. Returns the
    /// gradient with respect to the head input.
    pub fn backward(&self, cache: &HeadCache<T>, dlogits: &Tensor<T>, grads: &mut Gradients<T>) -> Result<Tensor<T>> {
        let n = self.layers();
        let mut dz = dlogits.clone();
        for i in (0..n).rev() {
            let g = ops::dense_backward(&cache.inputs[i], self.params.value(2 * i), &dz, true)?;
            if self.params.params[2 * i].trainable {
                grads.add(2 * i, &g.weights);
            }
            if self.params.params[2 * i + 1].trainable {
                grads.add(2 * i + 1, &g.bias);
            }
            let dx = g.input.expect("requested");
            if i == 0 {
                return Ok(dx);
            }
            let dh = ops::dropout_backward(&dx, cache.masks[i - 1].as_deref());
            dz = ops::relu_backward(&cache.hidden[i - 1], &dh);
        }
        unreachable!("loop returns at the first layer")
    }
}

/// Output units per pretext head. One unit is the scalar task probability;
/// two units are `[P(not task), P(task)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadUnits {
    #[default]
    One,
    Two,
}

impl HeadUnits {
    pub fn count(self) -> usize {
        match self {
            HeadUnits::One => 1,
            HeadUnits::Two => 2,
        }
    }

    /// Per-unit targets for pseudo-label `p`.
    pub fn targets<T: Scalar>(self, p: bool) -> Vec<T> {
        let y = if p { T::one() } else { T::zero() };
        match self {
            HeadUnits::One => vec![y],
            HeadUnits::Two => vec![T::one() - y, y],
        }
    }
}

pub const PRETEXT_HIDDEN: usize = 128;
pub const EMOTION_HIDDEN: usize = 64;

/// Shared trunk plus one dense head per transformation id.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextNetwork<T> {
    pub trunk: Trunk<T>,
    pub heads: Vec<Head<T>>,
    pub head_units: HeadUnits,
}

pub struct PretextCache<T> {
    pub trunk: TrunkCache<T>,
    pub heads: Vec<HeadCache<T>>,
}

impl<T: Scalar> PretextNetwork<T> {
    pub fn build(seed: u64) -> Result<Self> {
        Self::with_spec(TrunkSpec::default(), PRETEXT_HIDDEN, HeadUnits::One, seed)
    }

    pub fn with_spec(spec: TrunkSpec, hidden: usize, units: HeadUnits, seed: u64) -> Result<Self> {
        let trunk = Trunk::new(spec, seed)?;
        let f = trunk.spec.feature_dim();
        let heads = (0..TransformId::COUNT)
            .map(|j| Head::new(&format!("head{j}"), &[f, hidden, hidden, units.count()], seed, &[1, j as u64]))
            .collect::<Result<Vec<_>>>()?;
        Ok(PretextNetwork {
            trunk,
            heads,
            head_units: units,
        })
    }

    /// Per-head probability of "transformation j was applied" from a head's
    /// output units.
    pub fn task_prob(&self, probs: &Tensor<T>) -> T {
        *probs.data().last().expect("non-empty output")
    }

    /// Single-window forward with caches for backpropagation.
    pub fn forward_one(&self, x: &Tensor<T>, dropout: f64, mode: Mode) -> Result<PretextCache<T>> {
        let (feat, trunk) = self.trunk.forward(x)?;
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(j, h)| {
                let m = match mode {
                    Mode::Train { seed } => Mode::Train {
                        seed: rng::derive_seed(seed, &[j as u64]),
                    },
                    Mode::Inference => Mode::Inference,
                };
                h.forward(&feat, dropout, m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PretextCache { trunk, heads })
    }

    /// Batch forward: `[B, L, 1]` windows to `[B, 7]` task probabilities.
    /// In training mode, sample `b` uses dropout seed `derive_seed(seed, [b])`.
    pub fn forward(&self, batch: &Tensor<T>, dropout: f64, mode: Mode) -> Result<Tensor<T>> {
        let l = self.trunk.spec.input_len;
        let &[b, bl, 1] = batch.shape() else {
            return Err(Error::shape("pretext batch", batch.shape(), &[0, l, 1]));
        };
        if bl != l {
            return Err(Error::shape("pretext batch", batch.shape(), &[b, l, 1]));
        }
        let mut out = Vec::with_capacity(b * self.heads.len());
        for (i, win) in batch.data().chunks_exact(l).enumerate() {
            let x = Tensor::from_vec(&[l, 1], win.to_vec())?;
            let m = match mode {
                Mode::Train { seed } => Mode::Train {
                    seed: rng::derive_seed(seed, &[i as u64]),
                },
                Mode::Inference => Mode::Inference,
            };
            let cache = self.forward_one(&x, dropout, m)?;
            out.extend(cache.heads.iter().map(|h| self.task_prob(&h.probs)));
        }
        Tensor::from_vec(&[b, self.heads.len()], out)
    }

    pub fn zero_grads(&self) -> (Gradients<T>, Vec<Gradients<T>>) {
        (
            self.trunk.params.zero_grads(),
            self.heads.iter().map(|h| h.params.zero_grads()).collect(),
        )
    }
}

/// Frozen transferred trunk plus a trainable classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionNetwork<T> {
    pub trunk: Trunk<T>,
    pub head: Head<T>,
}

impl<T: Scalar> EmotionNetwork<T> {
    /// New head of widths `[feat, 64, 64, classes]` on top of `trunk`.
    pub fn new(trunk: Trunk<T>, classes: usize, seed: u64) -> Result<Self> {
        let f = trunk.spec.feature_dim();
        let head = Head::new("emotion", &[f, EMOTION_HIDDEN, EMOTION_HIDDEN, classes], seed, &[2])?;
        Ok(EmotionNetwork { trunk, head })
    }

    /// Batch forward: `[B, L, 1]` to `[B, M]` per-class sigmoid outputs.
    pub fn forward(&self, batch: &Tensor<T>, dropout: f64, mode: Mode) -> Result<Tensor<T>> {
        let l = self.trunk.spec.input_len;
        let &[b, bl, 1] = batch.shape() else {
            return Err(Error::shape("emotion batch", batch.shape(), &[0, l, 1]));
        };
        if bl != l {
            return Err(Error::shape("emotion batch", batch.shape(), &[b, l, 1]));
        }
        let mut out = Vec::with_capacity(b * self.head.output_dim());
        for (i, win) in batch.data().chunks_exact(l).enumerate() {
            let x = Tensor::from_vec(&[l, 1], win.to_vec())?;
            let feat = self.trunk.features(&x)?;
            let m = match mode {
                Mode::Train { seed } => Mode::Train {
                    seed: rng::derive_seed(seed, &[i as u64]),
                },
                Mode::Inference => Mode::Inference,
            };
            out.extend_from_slice(self.head.forward(&feat, dropout, m)?.probs.data());
        }
        Tensor::from_vec(&[b, self.head.output_dim()], out)
    }
}

/// Index of the largest output; ties go to the lower index.
pub fn argmax<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Copy a pretext trunk for use in the emotion network, with every parameter
/// frozen. `expected` is the trunk shape the downstream network is built for.
pub fn transfer_weights<T: Scalar>(source: &Trunk<T>, expected: &TrunkSpec) -> Result<Trunk<T>> {
    if &source.spec != expected {
        return Err(Error::Transfer(format!(
            "source trunk {:?} does not match expected {:?}",
            source.spec, expected
        )));
    }
    let reference = Trunk::<T>::new(expected.clone(), 0)?;
    for (s, r) in source.params.params.iter().zip(&reference.params.params) {
        if s.name != r.name || s.value.shape() != r.value.shape() {
            return Err(Error::Transfer(format!(
                "parameter {} {:?} does not match {} {:?}",
                s.name,
                s.value.shape(),
                r.name,
                r.value.shape()
            )));
        }
    }
    if source.params.len() != reference.params.len() {
        return Err(Error::Transfer(format!(
            "source has {} parameter arrays, expected {}",
            source.params.len(),
            reference.params.len()
        )));
    }
    let mut trunk = source.clone();
    trunk.params.set_trainable(false);
    Ok(trunk)
}
