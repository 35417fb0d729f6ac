//! Central finite-difference checks of the analytic backward passes.
//!
//! Every check runs in `f64`. A [`Fragment`] maps a flat parameter vector to
//! a scalar loss and its analytic gradient; [`check`] compares that gradient
//! against `(f(x + h) - f(x - h)) / 2h` coordinate by coordinate.

use std::fmt::Write as _;

use rand::Rng;

use super::loss::{bce_logit_grad, bce_loss, cross_entropy, cross_entropy_grad, l2_grad, l2_penalty, sigmoid_cross_entropy};
use super::{ops, Param, Tensor};
use crate::error::{Error, Result};
use crate::models::{transfer_weights, ConvBlockSpec, EmotionNetwork, HeadUnits, Mode, PretextNetwork, Trunk, TrunkSpec};
use crate::rng;

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so coordinates whose true
/// gradient is zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// A differentiable scalar function of a flat parameter vector.
pub trait Fragment: Sync {
    fn name(&self) -> &str;
    /// Point at which the gradient is checked.
    fn point(&self) -> Vec<f64>;
    /// Loss and analytic gradient at `x`.
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

type EvalFn = dyn Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)> + Send + Sync;

/// Fragment over a list of tensors, given as a closure returning the loss
/// and one gradient tensor per input tensor.
pub struct TensorFragment {
    name: String,
    init: Vec<Tensor<f64>>,
    f: Box<EvalFn>,
}

impl TensorFragment {
    pub fn new(
        name: impl Into<String>,
        init: Vec<Tensor<f64>>,
        f: impl Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)> + Send + Sync + 'static,
    ) -> Self {
        TensorFragment {
            name: name.into(),
            init,
            f: Box::new(f),
        }
    }

    fn unpack(&self, x: &[f64]) -> Result<Vec<Tensor<f64>>> {
        let mut off = 0;
        self.init
            .iter()
            .map(|t| {
                let v = x[off..off + t.len()].to_vec();
                off += t.len();
                Tensor::from_vec(t.shape(), v)
            })
            .collect()
    }
}

impl Fragment for TensorFragment {
    fn name(&self) -> &str {
        &self.name
    }

    fn point(&self) -> Vec<f64> {
        self.init.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, grads) = (self.f)(&self.unpack(x)?)?;
        if grads.len() != self.init.len() || grads.iter().zip(&self.init).any(|(g, t)| g.shape() != t.shape()) {
            return Err(Error::Parameter(format!("{}: gradient shapes do not match inputs", self.name)));
        }
        Ok((loss, grads.into_iter().flat_map(Tensor::into_data).collect()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compare analytic and finite-difference gradients of `frag`.
pub fn check(frag: &dyn Fragment, tolerance: f64) -> Result<CheckResult> {
    let x0 = frag.point();
    let (_, analytic) = frag.eval(&x0)?;
    if analytic.len() != x0.len() {
        return Err(Error::Parameter(format!("{}: {} gradients for {} inputs", frag.name(), analytic.len(), x0.len())));
    }
    let mut worst: f64 = 0.0;
    let mut x = x0.clone();
    for i in 0..x0.len() {
        x[i] = x0[i] + FD_STEP;
        let up = frag.eval(&x)?.0;
        x[i] = x0[i] - FD_STEP;
        let down = frag.eval(&x)?.0;
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
    }
    Ok(CheckResult {
        name: frag.name().to_string(),
        coords: x0.len(),
        max_rel_error: worst,
        passed: worst < tolerance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    /// One line per fragment with its maximum relative error.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = self.results.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for r in &self.results {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            writeln!(s, "{tag} {:<w$}  max_rel_error={:.3e}  coords={}", r.name, r.max_rel_error, r.coords)
                .expect("write to String");
        }
        let n_fail = self.results.iter().filter(|r| !r.passed).count();
        writeln!(s, "{} checks, {} failed, tolerance {:e}", self.results.len(), n_fail, self.tolerance)
            .expect("write to String");
        s
    }
}

/// Run the built-in suite plus any `extra` fragments.
pub fn run_suite(seed: u64, extra: &[&dyn Fragment]) -> Result<GradcheckReport> {
    let suite = builtin_suite(seed)?;
    let results = suite
        .iter()
        .map(|f| f.as_ref() as &dyn Fragment)
        .chain(extra.iter().copied())
        .map(|f| check(f, TOLERANCE))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        tolerance: TOLERANCE,
        results,
    })
}

pub(crate) fn random(shape: &[usize], seed: u64, tag: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[0x6C, tag]);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).expect("shape product")
}

/// Values bounded away from zero, so ReLU kinks are never within `h`.
fn away_from_zero(shape: &[usize], seed: u64, tag: u64) -> Tensor<f64> {
    random(shape, seed, tag, -1.0, 1.0).map(|v| v + 0.1 * v.signum())
}

/// Loss `Σ y·r` for a fixed random projection `r`; `∂loss/∂y = r`.
fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn tiny_spec() -> TrunkSpec {
    TrunkSpec {
        input_len: 32,
        blocks: vec![ConvBlockSpec { kernel: 5, filters: 3 }, ConvBlockSpec { kernel: 4, filters: 4 }],
        convs_per_block: 2,
        pool: 4,
        pool_stride: 2,
    }
}

/// Copy flat tensors into a parameter list.
fn assign(params: &mut [Param<f64>], values: &[Tensor<f64>]) {
    for (p, v) in params.iter_mut().zip(values) {
        p.value = v.clone();
    }
}

#[allow(clippy::vec_init_then_push)]
fn builtin_suite(seed: u64) -> Result<Vec<Box<dyn Fragment + Send>>> {
    let mut s: Vec<Box<dyn Fragment + Send>> = Vec::new();

    for (name, k) in [("conv1d", 3usize), ("conv1d (even kernel)", 4)] {
        let r = random(&[12, 3], seed, 1, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new(
            name,
            vec![random(&[12, 2], seed, 2, -1.0, 1.0), random(&[k, 2, 3], seed, 3, -1.0, 1.0), random(&[3], seed, 4, -1.0, 1.0)],
            move |t| {
                let y = ops::conv1d(&t[0], &t[1], &t[2])?;
                let g = ops::conv1d_backward(&t[0], &t[1], &r, true)?;
                Ok((project(&y, &r), vec![g.input.expect("requested"), g.kernel, g.bias]))
            },
        )));
    }

    {
        let r = random(&[9, 3], seed, 5, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new("maxpool1d", vec![random(&[20, 3], seed, 6, -1.0, 1.0)], move |t| {
            let p = ops::maxpool1d(&t[0], 4, 2)?;
            Ok((project(&p.output, &r), vec![ops::maxpool1d_backward(&p.argmax, 20, &r)]))
        })));
    }
    {
        let r = random(&[3], seed, 7, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new("global_maxpool", vec![random(&[10, 3], seed, 8, -1.0, 1.0)], move |t| {
            let p = ops::global_maxpool(&t[0])?;
            let dy = r.clone().reshape(&[1, 3])?;
            Ok((project(&p.output, &r), vec![ops::maxpool1d_backward(&p.argmax, 10, &dy)]))
        })));
    }
    for (name, xs) in [("dense", vec![5usize]), ("dense (batched)", vec![3, 5])] {
        let mut ys = xs.clone();
        *ys.last_mut().expect("non-empty") = 4;
        let r = random(&ys, seed, 9, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new(
            name,
            vec![random(&xs, seed, 10, -1.0, 1.0), random(&[5, 4], seed, 11, -1.0, 1.0), random(&[4], seed, 12, -1.0, 1.0)],
            move |t| {
                let y = ops::dense(&t[0], &t[1], &t[2])?;
                let g = ops::dense_backward(&t[0], &t[1], &r, true)?;
                Ok((project(&y, &r), vec![g.input.expect("requested"), g.weights, g.bias]))
            },
        )));
    }
    {
        let r = random(&[10], seed, 13, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new("relu", vec![away_from_zero(&[10], seed, 14)], move |t| {
            let y = ops::relu(&t[0]);
            Ok((project(&y, &r), vec![ops::relu_backward(&y, &r)]))
        })));
    }
    {
        let r = random(&[10], seed, 15, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new("sigmoid", vec![random(&[10], seed, 16, -4.0, 4.0)], move |t| {
            let y = ops::sigmoid(&t[0]);
            Ok((project(&y, &r), vec![ops::sigmoid_backward(&y, &r)]))
        })));
    }
    for (name, training) in [("dropout (inference)", false), ("dropout (fixed mask)", true)] {
        let r = random(&[16], seed, 17, -1.0, 1.0);
        s.push(Box::new(TensorFragment::new(name, vec![random(&[16], seed, 18, -1.0, 1.0)], move |t| {
            let (y, mask) = ops::dropout(&t[0], 0.5, 99, training)?;
            Ok((project(&y, &r), vec![ops::dropout_backward(&r, mask.as_deref())]))
        })));
    }
    {
        let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        s.push(Box::new(TensorFragment::new("sigmoid+bce", vec![random(&[6], seed, 19, -3.0, 3.0)], move |t| {
            let p = ops::sigmoid(&t[0]);
            let loss = p.data().iter().zip(&labels).map(|(&p, &y)| bce_loss(p, y)).sum();
            let g = p.data().iter().zip(&labels).map(|(&p, &y)| bce_logit_grad(p, y)).collect();
            Ok((loss, vec![Tensor::from_vec(&[6], g)?]))
        })));
    }
    {
        let onehot = [0.0, 1.0, 0.0, 0.0];
        s.push(Box::new(TensorFragment::new("cross_entropy", vec![random(&[4], seed, 20, 0.1, 0.9)], move |t| {
            let p = t[0].data();
            Ok((cross_entropy(p, &onehot), vec![Tensor::from_vec(&[4], cross_entropy_grad(p, &onehot))?]))
        })));
    }
    {
        let onehot = [0.0, 1.0];
        s.push(Box::new(TensorFragment::new("sigmoid+cross_entropy (per unit)", vec![random(&[2], seed, 21, -3.0, 3.0)], move |t| {
            let p = ops::sigmoid(&t[0]);
            let g = p.data().iter().zip(&onehot).map(|(&p, &y)| bce_logit_grad(p, y)).collect();
            Ok((sigmoid_cross_entropy(p.data(), &onehot), vec![Tensor::from_vec(&[2], g)?]))
        })));
    }
    {
        let beta = 0.01;
        s.push(Box::new(TensorFragment::new("l2", vec![random(&[3, 4], seed, 22, -1.0, 1.0)], move |t| {
            let p = Param { name: "w".into(), value: t[0].clone(), trainable: true };
            Ok((l2_penalty([&p], beta), vec![t[0].map(|w| l2_grad(w, beta))]))
        })));
    }
    s.push(Box::new(TensorFragment::new(
        "dense+sigmoid+bce",
        vec![random(&[8], seed, 23, -1.0, 1.0), random(&[8, 1], seed, 24, -1.0, 1.0), random(&[1], seed, 25, -1.0, 1.0)],
        |t| {
            let p = ops::sigmoid(&ops::dense(&t[0], &t[1], &t[2])?);
            let y = 1.0;
            let dl = Tensor::from_vec(&[1], vec![bce_logit_grad(p.data()[0], y)])?;
            let g = ops::dense_backward(&t[0], &t[1], &dl, true)?;
            Ok((bce_loss(p.data()[0], y), vec![g.input.expect("requested"), g.weights, g.bias]))
        },
    )));
    s.push(Box::new(TensorFragment::new(
        "conv1d(K=8,C=2)+relu+global_maxpool+dense",
        vec![
            random(&[32, 1], seed, 26, -1.0, 1.0),
            random(&[8, 1, 2], seed, 27, -1.0, 1.0),
            random(&[2], seed, 28, -0.1, 0.1),
            random(&[2, 1], seed, 29, -1.0, 1.0),
            random(&[1], seed, 30, -1.0, 1.0),
        ],
        |t| {
            let z = ops::conv1d(&t[0], &t[1], &t[2])?;
            let h = ops::relu(&z);
            let gp = ops::global_maxpool(&h)?;
            let p = ops::sigmoid(&ops::dense(&gp.output, &t[3], &t[4])?);
            let dl = Tensor::from_vec(&[1], vec![bce_logit_grad(p.data()[0], 0.0)])?;
            let dg = ops::dense_backward(&gp.output, &t[3], &dl, true)?;
            let dh = ops::maxpool1d_backward(&gp.argmax, 32, &dg.input.expect("requested").reshape(&[1, 2])?);
            let dz = ops::relu_backward(&h, &dh);
            let dc = ops::conv1d_backward(&t[0], &t[1], &dz, true)?;
            Ok((bce_loss(p.data()[0], 0.0), vec![dc.input.expect("requested"), dc.kernel, dc.bias, dg.weights, dg.bias]))
        },
    )));

    // Whole pretext network on a small trunk, dropout masks fixed by seed.
    {
        let template = PretextNetwork::<f64>::with_spec(tiny_spec(), 6, HeadUnits::One, seed)?;
        let x = random(&[32, 1], seed, 31, -1.0, 1.0);
        let task = 3usize;
        let alphas = [1.0 / 7.0; 7];
        let mut init: Vec<Tensor<f64>> = template.trunk.params.params.iter().map(|p| p.value.clone()).collect();
        for h in &template.heads {
            init.extend(h.params.params.iter().map(|p| p.value.clone()));
        }
        s.push(Box::new(TensorFragment::new("pretext network (multitask bce)", init, move |t| {
            let mut net = template.clone();
            let nt = net.trunk.params.len();
            assign(&mut net.trunk.params.params, &t[..nt]);
            let mut off = nt;
            for h in &mut net.heads {
                let nh = h.params.len();
                assign(&mut h.params.params, &t[off..off + nh]);
                off += nh;
            }
            let cache = net.forward_one(&x, 0.3, Mode::Train { seed: 5 })?;
            let (mut tg, mut hgs) = net.zero_grads();
            let mut dfeat = Tensor::zeros(&[net.trunk.spec.feature_dim()]);
            let mut loss = 0.0;
            for (j, (h, hc)) in net.heads.iter().zip(&cache.heads).enumerate() {
                let p = hc.probs.data()[0];
                let y = if j == task { 1.0 } else { 0.0 };
                loss += alphas[j] * bce_loss(p, y);
                let dl = Tensor::from_vec(&[1], vec![alphas[j] * bce_logit_grad(p, y)])?;
                dfeat.add_assign(&h.backward(hc, &dl, &mut hgs[j])?);
            }
            net.trunk.backward(&cache.trunk, &dfeat, &mut tg)?;
            let mut grads = tg.tensors;
            for hg in hgs {
                grads.extend(hg.tensors);
            }
            Ok((loss, grads))
        })));
    }

    // Emotion network on a frozen transferred trunk: head gradients are
    // checked numerically and every trunk gradient must be exactly zero.
    {
        let trunk = transfer_weights(&Trunk::<f64>::new(tiny_spec(), seed)?, &tiny_spec())?;
        let template = EmotionNetwork::new(trunk, 2, seed)?;
        let x = random(&[32, 1], seed, 32, -1.0, 1.0);
        let init: Vec<Tensor<f64>> = template.head.params.params.iter().map(|p| p.value.clone()).collect();
        s.push(Box::new(TensorFragment::new("emotion network (frozen trunk)", init, move |t| {
            let mut net = template.clone();
            assign(&mut net.head.params.params, t);
            let (feat, tc) = net.trunk.forward(&x)?;
            let hc = net.head.forward(&feat, 0.3, Mode::Train { seed: 8 })?;
            let onehot = [1.0, 0.0];
            let p = hc.probs.data();
            let dl = Tensor::from_vec(&[2], p.iter().zip(&onehot).map(|(&p, &y)| bce_logit_grad(p, y)).collect())?;
            let mut hg = net.head.params.zero_grads();
            let dfeat = net.head.backward(&hc, &dl, &mut hg)?;
            let mut tg = net.trunk.params.zero_grads();
            net.trunk.backward(&tc, &dfeat, &mut tg)?;
            if tg.tensors.iter().any(|g| g.data().iter().any(|&v| v != 0.0)) {
                return Err(Error::Transfer("frozen trunk received a non-zero gradient".into()));
            }
            Ok((sigmoid_cross_entropy(p, &onehot), hg.tensors))
        })));
    }
    Ok(s)
}
