//! Residual CNN with hand-written forward and backward passes.
//!
//! Activations are stored channel-major (`C × N × H × W`), so a convolution
//! is one GEMM of the `Cout × Cin·k·k` weight matrix against the im2col
//! matrix of the whole batch, and every batchnorm channel is a contiguous
//! run. All loops run in a fixed order; the forward pass of one sample in
//! eval mode does not depend on the rest of its batch.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::arch::{conv_out, Architecture, LayerShape};
use super::scalar::{matmul, Scalar};
use crate::ingest::TileSet;
use crate::rng::{self, streams};
use crate::{Error, FeatureMatrix, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm; running statistics are updated.
    Train,
    /// Running statistics; a pure function of weights and input.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output<T> {
    pub rows: usize,
    /// `rows × F`.
    pub features: Vec<T>,
    /// `rows × K`.
    pub logits: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Geom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

/// Parameter and buffer slots of a conv → batchnorm pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvBn {
    g: Geom,
    w: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    a: ConvBn,
    b: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Debug, Clone, PartialEq)]
struct Plan {
    stem: ConvBn,
    maxpool: bool,
    blocks: Vec<Block>,
    head_w: usize,
    head_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Scalar = f32> {
    arch: Architecture,
    seed: u64,
    params: Vec<Tensor<T>>,
    buffers: Vec<Tensor<T>>,
    plan: Plan,
}

/// Batch mean and unbiased variance of one batchnorm layer.
#[derive(Debug, Clone)]
pub(crate) struct BnStats {
    mean_slot: usize,
    var_slot: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Clone)]
struct Act<T> {
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    d: Vec<T>,
}

struct CbCache<T> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize, usize),
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

struct BlockCache<T> {
    a: CbCache<T>,
    a_out: Vec<T>,
    b: CbCache<T>,
    proj: Option<CbCache<T>>,
    out: Vec<T>,
}

struct PoolCache {
    argmax: Vec<usize>,
    in_len: usize,
}

struct Cache<T> {
    stem: CbCache<T>,
    stem_out: Vec<T>,
    pool: Option<PoolCache>,
    blocks: Vec<BlockCache<T>>,
    last: (usize, usize, usize, usize),
    features: Vec<T>,
}

#[derive(Clone, Copy, PartialEq)]
enum Bn {
    Running,
    Batch,
}

struct Pass<T> {
    out: Output<T>,
    stats: Vec<BnStats>,
    cache: Option<Cache<T>>,
    shapes: Vec<LayerShape>,
}

fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the forward output was not positive.
fn relu_mask<T: Scalar>(grad: &mut [T], out: &[T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

fn im2col<T: Scalar>(x: &Act<T>, g: &Geom, ho: usize, wo: usize) -> Vec<T> {
    let (k, s, pad) = (g.k, g.stride, g.pad);
    let p = x.n * ho * wo;
    let mut cols = vec![T::zero(); g.cin * k * k * p];
    for c in 0..g.cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                for n in 0..x.n {
                    let src = &x.d[(c * x.n + n) * x.h * x.w..][..x.h * x.w];
                    for oh in 0..ho {
                        let ih = oh * s + ki;
                        if ih < pad || ih - pad >= x.h {
                            continue;
                        }
                        let src_row = &src[(ih - pad) * x.w..][..x.w];
                        let dst = &mut cols[row + (n * ho + oh) * wo..][..wo];
                        for (ow, v) in dst.iter_mut().enumerate() {
                            let iw = ow * s + kj;
                            if iw >= pad && iw - pad < x.w {
                                *v = src_row[iw - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, shape: (usize, usize, usize, usize), ho: usize, wo: usize) -> Vec<T> {
    let (cin, n_, h, w) = shape;
    let (k, s, pad) = (g.k, g.stride, g.pad);
    let p = n_ * ho * wo;
    let mut x = vec![T::zero(); cin * n_ * h * w];
    for c in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                for n in 0..n_ {
                    let base = (c * n_ + n) * h * w;
                    for oh in 0..ho {
                        let ih = oh * s + ki;
                        if ih < pad || ih - pad >= h {
                            continue;
                        }
                        let dst = base + (ih - pad) * w;
                        let src = &cols[row + (n * ho + oh) * wo..][..wo];
                        for (ow, &v) in src.iter().enumerate() {
                            let iw = ow * s + kj;
                            if iw >= pad && iw - pad < w {
                                x[dst + iw - pad] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

struct Builder<T> {
    params: Vec<Tensor<T>>,
    buffers: Vec<Tensor<T>>,
    rng: rng::Rng,
}

impl<T: Scalar> Builder<T> {
    fn param(&mut self, name: String, shape: Vec<usize>, data: Vec<T>) -> usize {
        self.params.push(Tensor { name, shape, data });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>, data: Vec<T>) -> usize {
        self.buffers.push(Tensor { name, shape, data });
        self.buffers.len() - 1
    }

    /// He-normal conv weights, unit-gain batchnorm.
    fn conv_bn(&mut self, conv: &str, bn: &str, g: Geom) -> ConvBn {
        let fan_in = g.cin * g.k * g.k;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..g.cout * fan_in).map(|_| T::of(normal.sample(&mut self.rng))).collect();
        let c = g.cout;
        ConvBn {
            g,
            w: self.param(format!("{conv}.weight"), vec![g.cout, g.cin, g.k, g.k], data),
            gamma: self.param(format!("{bn}.weight"), vec![c], vec![T::one(); c]),
            beta: self.param(format!("{bn}.bias"), vec![c], vec![T::zero(); c]),
            mean: self.buffer(format!("{bn}.running_mean"), vec![c], vec![T::zero(); c]),
            var: self.buffer(format!("{bn}.running_var"), vec![c], vec![T::one(); c]),
        }
    }
}

/// Layer slots for an architecture, with freshly initialized tensors.
fn layout<T: Scalar>(arch: &Architecture, seed: u64) -> (Plan, Vec<Tensor<T>>, Vec<Tensor<T>>) {
    let mut b = Builder {
        params: Vec::new(),
        buffers: Vec::new(),
        rng: rng::seeded(seed),
    };
    let st = &arch.stem;
    let stem = b.conv_bn(
        "stem.conv",
        "stem.bn",
        Geom {
            cin: 1,
            cout: st.channels,
            k: st.kernel,
            stride: st.stride,
            pad: st.pad,
        },
    );
    let mut cin = st.channels;
    let mut blocks = Vec::new();
    for (si, s) in arch.stages.iter().enumerate() {
        for bi in 0..s.blocks {
            let stride = if bi == 0 { s.stride } else { 1 };
            let p = format!("stage{}.block{}", si + 1, bi + 1);
            let g3 = |cin, stride| Geom {
                cin,
                cout: s.channels,
                k: 3,
                stride,
                pad: 1,
            };
            let a = b.conv_bn(&format!("{p}.conv1"), &format!("{p}.bn1"), g3(cin, stride));
            let bb = b.conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), g3(s.channels, 1));
            let proj = (stride != 1 || cin != s.channels).then(|| {
                b.conv_bn(
                    &format!("{p}.shortcut.conv"),
                    &format!("{p}.shortcut.bn"),
                    Geom {
                        cin,
                        cout: s.channels,
                        k: 1,
                        stride,
                        pad: 0,
                    },
                )
            });
            blocks.push(Block { a, b: bb, proj });
            cin = s.channels;
        }
    }
    let f = arch.feature_dim();
    let k = arch.classes;
    let (w, bias) = head_init::<T>(f, k, rng::derive(seed, streams::HEAD_INIT, 0));
    let head_w = b.param("head.weight".into(), vec![k, f], w);
    let head_b = b.param("head.bias".into(), vec![k], bias);
    let plan = Plan {
        stem,
        maxpool: st.maxpool,
        blocks,
        head_w,
        head_b,
    };
    (plan, b.params, b.buffers)
}

/// Uniform(±1/√F) weights and zero bias.
fn head_init<T: Scalar>(f: usize, k: usize, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut r = rng::seeded(seed);
    let bound = 1.0 / (f as f64).sqrt();
    let w = (0..k * f).map(|_| T::of(r.random_range(-bound..bound))).collect();
    (w, vec![T::zero(); k])
}

impl<T: Scalar> CnnModel<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (plan, params, buffers) = layout(&arch, seed);
        Ok(CnnModel {
            arch,
            seed,
            params,
            buffers,
            plan,
        })
    }

    /// Rebuilds a model from stored tensors, matched by name and shape.
    pub fn from_tensors(arch: Architecture, seed: u64, params: Vec<Tensor<T>>, buffers: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::new(arch, seed)?;
        for (slot, given, what) in [
            (&mut model.params, params, "parameter"),
            (&mut model.buffers, buffers, "buffer"),
        ] {
            if slot.len() != given.len() {
                return Err(Error::Format(format!(
                    "expected {} {what} tensors, found {}",
                    slot.len(),
                    given.len()
                )));
            }
            for (want, got) in slot.iter_mut().zip(given) {
                if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                    return Err(Error::Format(format!(
                        "{what} '{}' {:?} does not match expected '{}' {:?}",
                        got.name, got.shape, want.name, want.shape
                    )));
                }
                if got.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("{what} '{}' holds non-finite values", got.name)));
                }
                *want = got;
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn window(&self) -> usize {
        self.arch.window
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn param_data_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params[i].data
    }

    pub fn buffers(&self) -> &[Tensor<T>] {
        &self.buffers
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    /// Slots of the head weight and bias in [`CnnModel::params`].
    pub fn head_slots(&self) -> [usize; 2] {
        [self.plan.head_w, self.plan.head_b]
    }

    /// Same weights in another element type.
    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        let conv = |ts: &[Tensor<T>]| {
            ts.iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect()
        };
        CnnModel {
            arch: self.arch.clone(),
            seed: self.seed,
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            plan: self.plan.clone(),
        }
    }

    /// Fresh head for `k` classes; the trunk is untouched.
    pub fn reinit_head(&mut self, k: usize, seed: u64) -> Result<()> {
        if k < 2 {
            return Err(Error::Config(format!("head needs at least 2 classes, got {k}")));
        }
        let f = self.feature_dim();
        let (w, b) = head_init(f, k, seed);
        self.arch.classes = k;
        let [hw, hb] = self.head_slots();
        self.params[hw].shape = vec![k, f];
        self.params[hw].data = w;
        self.params[hb].shape = vec![k];
        self.params[hb].data = b;
        Ok(())
    }

    fn check_input(&self, input: &[f32], n: usize) -> Result<()> {
        let w = self.window();
        if n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if input.len() != n * w * w {
            return Err(Error::Shape(format!(
                "{} input values do not form {n} tiles of {w} x {w}",
                input.len()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[u32], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        let k = self.classes();
        match labels.iter().find(|&&l| l as usize >= k) {
            Some(&label) => Err(Error::LabelRange { label, classes: k }),
            None => Ok(()),
        }
    }

    /// Forward pass over `n` tiles stored back to back. Train mode
    /// normalizes with batch statistics and folds them into the running
    /// statistics with the default momentum.
    pub fn forward(&mut self, input: &[f32], n: usize, mode: Mode) -> Result<Output<T>> {
        match mode {
            Mode::Eval => self.forward_eval(input, n),
            Mode::Train => {
                self.check_input(input, n)?;
                let pass = self.run(input, n, Bn::Batch, false);
                self.update_running(&pass.stats, super::train::DEFAULT_BN_MOMENTUM);
                Ok(pass.out)
            }
        }
    }

    pub fn forward_eval(&self, input: &[f32], n: usize) -> Result<Output<T>> {
        self.check_input(input, n)?;
        Ok(self.run(input, n, Bn::Running, false).out)
    }

    /// Activation shapes actually produced by a forward pass, one sample.
    pub fn traced_shapes(&self) -> Vec<LayerShape> {
        let w = self.window();
        self.run(&vec![0.0; w * w], 1, Bn::Running, false).shapes
    }

    /// Mean cross-entropy with batch statistics, as seen by a training step.
    pub fn batch_loss(&self, input: &[f32], labels: &[u32]) -> Result<f64> {
        let n = labels.len();
        self.check_input(input, n)?;
        self.check_labels(labels, n)?;
        let pass = self.run(input, n, Bn::Batch, false);
        Ok(softmax_xent(&pass.out.logits, labels, self.classes()).0)
    }

    /// Loss and gradient of every parameter, in [`CnnModel::params`] order.
    /// Does not modify the model.
    pub fn loss_and_grads(&self, input: &[f32], labels: &[u32]) -> Result<(f64, Vec<Vec<T>>)> {
        let (loss, grads, _) = self.grads_with_stats(input, labels)?;
        Ok((loss, grads))
    }

    pub(crate) fn grads_with_stats(&self, input: &[f32], labels: &[u32]) -> Result<(f64, Vec<Vec<T>>, Vec<BnStats>)> {
        let n = labels.len();
        self.check_input(input, n)?;
        self.check_labels(labels, n)?;
        let pass = self.run(input, n, Bn::Batch, true);
        let (loss, dlogits) = softmax_xent(&pass.out.logits, labels, self.classes());
        let grads = self.backward(pass.cache.expect("cache kept"), &dlogits, n);
        Ok((loss, grads, pass.stats))
    }

    pub(crate) fn update_running(&mut self, stats: &[BnStats], momentum: f64) {
        for s in stats {
            for (slot, batch) in [(s.mean_slot, &s.mean), (s.var_slot, &s.var)] {
                for (r, &b) in self.buffers[slot].data.iter_mut().zip(batch.iter()) {
                    *r = T::of((1.0 - momentum) * r.f64() + momentum * b);
                }
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Eval-mode features of every tile, in tile order.
    pub fn extract_features(&self, tiles: &TileSet, batch_size: usize) -> Result<FeatureMatrix> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if tiles.window() != self.window() {
            return Err(Error::Shape(format!(
                "tiles are {0} x {0}, model expects {1} x {1}",
                tiles.window(),
                self.window()
            )));
        }
        let f = self.feature_dim();
        let mut out = Vec::with_capacity(tiles.len() * f);
        let mut input = Vec::new();
        for chunk in tiles.tiles().chunks(batch_size) {
            input.clear();
            for t in chunk {
                input.extend_from_slice(&t.pixels);
            }
            let o = self.forward_eval(&input, chunk.len())?;
            out.extend(o.features.iter().map(|v| v.f64()));
        }
        FeatureMatrix::new(tiles.len(), f, out)
    }

    fn conv_bn(&self, cb: &ConvBn, x: &Act<T>, bn: Bn, keep: bool, stats: &mut Vec<BnStats>) -> (Act<T>, Option<CbCache<T>>) {
        let g = &cb.g;
        let ho = conv_out(x.h, g.k, g.stride, g.pad);
        let wo = conv_out(x.w, g.k, g.stride, g.pad);
        let p = x.n * ho * wo;
        let cols = im2col(x, g, ho, wo);
        let mut y = vec![T::zero(); g.cout * p];
        matmul(false, false, g.cout, p, g.cin * g.k * g.k, &self.params[cb.w].data, &cols, T::zero(), &mut y);

        let gamma = &self.params[cb.gamma].data;
        let beta = &self.params[cb.beta].data;
        let mut cache = None;
        match bn {
            Bn::Running => {
                let rm = &self.buffers[cb.mean].data;
                let rv = &self.buffers[cb.var].data;
                for c in 0..g.cout {
                    let inv = T::one() / (rv[c] + T::of(BN_EPS)).sqrt();
                    let (scale, shift) = (gamma[c] * inv, beta[c] - gamma[c] * inv * rm[c]);
                    for v in &mut y[c * p..(c + 1) * p] {
                        *v = *v * scale + shift;
                    }
                }
            }
            Bn::Batch => {
                let mut xhat = if keep { vec![T::zero(); y.len()] } else { Vec::new() };
                let mut inv_std = vec![T::zero(); g.cout];
                let mut means = vec![0.0; g.cout];
                let mut vars = vec![0.0; g.cout];
                for c in 0..g.cout {
                    let row = &mut y[c * p..(c + 1) * p];
                    let mean = row.iter().map(|v| v.f64()).sum::<f64>() / p as f64;
                    let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / p as f64;
                    let inv = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[c] = T::of(inv);
                    means[c] = mean;
                    vars[c] = if p > 1 { var * p as f64 / (p - 1) as f64 } else { var };
                    let (m, i) = (T::of(mean), T::of(inv));
                    for (j, v) in row.iter_mut().enumerate() {
                        let xh = (*v - m) * i;
                        if keep {
                            xhat[c * p + j] = xh;
                        }
                        *v = gamma[c] * xh + beta[c];
                    }
                }
                stats.push(BnStats {
                    mean_slot: cb.mean,
                    var_slot: cb.var,
                    mean: means,
                    var: vars,
                });
                if keep {
                    cache = Some(CbCache {
                        cols,
                        in_shape: (x.c, x.n, x.h, x.w),
                        xhat,
                        inv_std,
                    });
                }
            }
        }
        let out = Act {
            c: g.cout,
            n: x.n,
            h: ho,
            w: wo,
            d: y,
        };
        (out, cache)
    }

    /// Backpropagates through batchnorm and the convolution; returns the
    /// input gradient when asked for.
    fn conv_bn_backward(&self, cb: &ConvBn, cache: CbCache<T>, mut dy: Vec<T>, grads: &mut [Vec<T>], want_dx: bool) -> Option<Vec<T>> {
        let g = &cb.g;
        let (_, n, h, w) = cache.in_shape;
        let ho = conv_out(h, g.k, g.stride, g.pad);
        let wo = conv_out(w, g.k, g.stride, g.pad);
        let p = n * ho * wo;
        let gamma = &self.params[cb.gamma].data;
        for c in 0..g.cout {
            let row = &mut dy[c * p..(c + 1) * p];
            let xh = &cache.xhat[c * p..(c + 1) * p];
            let dbeta: f64 = row.iter().map(|v| v.f64()).sum();
            let dgamma: f64 = row.iter().zip(xh).map(|(d, x)| d.f64() * x.f64()).sum();
            grads[cb.gamma][c] += T::of(dgamma);
            grads[cb.beta][c] += T::of(dbeta);
            let scale = gamma[c] * cache.inv_std[c] / T::of(p as f64);
            let (pf, db, dg) = (T::of(p as f64), T::of(dbeta), T::of(dgamma));
            for (d, &x) in row.iter_mut().zip(xh) {
                *d = scale * (pf * *d - db - x * dg);
            }
        }
        let kk = g.cin * g.k * g.k;
        matmul(false, true, g.cout, kk, p, &dy, &cache.cols, T::one(), &mut grads[cb.w]);
        if !want_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * p];
        matmul(true, false, kk, p, g.cout, &self.params[cb.w].data, &dy, T::zero(), &mut dcols);
        Some(col2im(&dcols, g, cache.in_shape, ho, wo))
    }

    fn run(&self, input: &[f32], n: usize, bn: Bn, keep: bool) -> Pass<T> {
        let w = self.window();
        let mut stats = Vec::new();
        let mut shapes = Vec::new();
        let mut record = |name: &str, a: &Act<T>| {
            shapes.push(LayerShape {
                name: name.to_string(),
                channels: a.c,
                height: a.h,
                width: a.w,
            })
        };
        let x = Act {
            c: 1,
            n,
            h: w,
            w,
            d: input.iter().map(|&v| T::of(v as f64)).collect(),
        };
        record("input", &x);
        let (mut x, stem_cache) = self.conv_bn(&self.plan.stem, &x, bn, keep, &mut stats);
        relu(&mut x.d);
        record("stem", &x);
        let stem_out = if keep { x.d.clone() } else { Vec::new() };

        let mut pool = None;
        if self.plan.maxpool {
            let (pooled, argmax) = maxpool(&x);
            if keep {
                pool = Some(PoolCache {
                    argmax,
                    in_len: x.d.len(),
                });
            }
            x = pooled;
            record("maxpool", &x);
        }

        let mut block_caches = Vec::new();
        let mut bi = 0;
        for (si, stage) in self.arch.stages.iter().enumerate() {
            for b in 0..stage.blocks {
                let blk = &self.plan.blocks[bi];
                bi += 1;
                let (mut a, ca) = self.conv_bn(&blk.a, &x, bn, keep, &mut stats);
                relu(&mut a.d);
                let (mut y, cb) = self.conv_bn(&blk.b, &a, bn, keep, &mut stats);
                let cp = match &blk.proj {
                    Some(proj) => {
                        let (s, cp) = self.conv_bn(proj, &x, bn, keep, &mut stats);
                        y.d.iter_mut().zip(&s.d).for_each(|(v, s)| *v += *s);
                        cp
                    }
                    None => {
                        y.d.iter_mut().zip(&x.d).for_each(|(v, s)| *v += *s);
                        None
                    }
                };
                relu(&mut y.d);
                record(&format!("stage{}.block{}", si + 1, b + 1), &y);
                if keep {
                    block_caches.push(BlockCache {
                        a: ca.expect("cache kept"),
                        a_out: a.d,
                        b: cb.expect("cache kept"),
                        proj: cp,
                        out: y.d.clone(),
                    });
                }
                x = y;
            }
        }

        // global average pool: features[n][c]
        let f = x.c;
        let hw = x.h * x.w;
        let mut features = vec![T::zero(); n * f];
        for c in 0..f {
            for s in 0..n {
                let plane = &x.d[(c * n + s) * hw..][..hw];
                features[s * f + c] = plane.iter().copied().sum::<T>() / T::of(hw as f64);
            }
        }
        shapes.push(LayerShape {
            name: "pool".into(),
            channels: f,
            height: 1,
            width: 1,
        });

        let k = self.classes();
        let mut logits = vec![T::zero(); n * k];
        for s in 0..n {
            logits[s * k..(s + 1) * k].copy_from_slice(&self.params[self.plan.head_b].data);
        }
        matmul(false, true, n, k, f, &features, &self.params[self.plan.head_w].data, T::one(), &mut logits);
        shapes.push(LayerShape {
            name: "head".into(),
            channels: k,
            height: 1,
            width: 1,
        });

        let cache = keep.then(|| Cache {
            stem: stem_cache.expect("cache kept"),
            stem_out,
            pool,
            blocks: block_caches,
            last: (x.c, x.n, x.h, x.w),
            features: features.clone(),
        });
        Pass {
            out: Output {
                rows: n,
                features,
                logits,
            },
            stats,
            cache,
            shapes,
        }
    }

    fn backward(&self, cache: Cache<T>, dlogits: &[T], n: usize) -> Vec<Vec<T>> {
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        let k = self.classes();
        let f = self.feature_dim();
        let (hw_i, hb_i) = (self.plan.head_w, self.plan.head_b);
        matmul(true, false, k, f, n, dlogits, &cache.features, T::zero(), &mut grads[hw_i]);
        for s in 0..n {
            for j in 0..k {
                grads[hb_i][j] += dlogits[s * k + j];
            }
        }
        let mut dfeat = vec![T::zero(); n * f];
        matmul(false, false, n, f, k, dlogits, &self.params[hw_i].data, T::zero(), &mut dfeat);

        let (c, _, h, w) = cache.last;
        let hw = h * w;
        let mut dx = vec![T::zero(); c * n * hw];
        let inv = T::one() / T::of(hw as f64);
        for ch in 0..c {
            for s in 0..n {
                let g = dfeat[s * f + ch] * inv;
                dx[(ch * n + s) * hw..][..hw].iter_mut().for_each(|v| *v = g);
            }
        }

        for (blk, bc) in self.plan.blocks.iter().zip(cache.blocks).rev() {
            relu_mask(&mut dx, &bc.out);
            let dsum = dx;
            let mut da = self
                .conv_bn_backward(&blk.b, bc.b, dsum.clone(), &mut grads, true)
                .expect("input gradient");
            relu_mask(&mut da, &bc.a_out);
            let mut din = self.conv_bn_backward(&blk.a, bc.a, da, &mut grads, true).expect("input gradient");
            match (&blk.proj, bc.proj) {
                (Some(proj), Some(pc)) => {
                    let ds = self.conv_bn_backward(proj, pc, dsum, &mut grads, true).expect("input gradient");
                    din.iter_mut().zip(&ds).for_each(|(a, b)| *a += *b);
                }
                _ => din.iter_mut().zip(&dsum).for_each(|(a, b)| *a += *b),
            }
            dx = din;
        }

        if let Some(pc) = cache.pool {
            let mut up = vec![T::zero(); pc.in_len];
            for (&src, &g) in pc.argmax.iter().zip(&dx) {
                up[src] += g;
            }
            dx = up;
        }
        relu_mask(&mut dx, &cache.stem_out);
        self.conv_bn_backward(&self.plan.stem, cache.stem, dx, &mut grads, false);
        grads
    }
}

/// 3×3 stride-2 max pool with one pixel of padding; also returns the source
/// index of every output.
fn maxpool<T: Scalar>(x: &Act<T>) -> (Act<T>, Vec<usize>) {
    let ho = conv_out(x.h, 3, 2, 1);
    let wo = conv_out(x.w, 3, 2, 1);
    let mut d = Vec::with_capacity(x.c * x.n * ho * wo);
    let mut arg = Vec::with_capacity(d.capacity());
    for plane in 0..x.c * x.n {
        let base = plane * x.h * x.w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = (usize::MAX, T::neg_infinity());
                for ki in 0..3 {
                    for kj in 0..3 {
                        let (ih, iw) = (oh * 2 + ki, ow * 2 + kj);
                        if ih < 1 || iw < 1 || ih - 1 >= x.h || iw - 1 >= x.w {
                            continue;
                        }
                        let idx = base + (ih - 1) * x.w + iw - 1;
                        if best.0 == usize::MAX || x.d[idx] > best.1 {
                            best = (idx, x.d[idx]);
                        }
                    }
                }
                d.push(best.1);
                arg.push(best.0);
            }
        }
    }
    let out = Act {
        c: x.c,
        n: x.n,
        h: ho,
        w: wo,
        d,
    };
    (out, arg)
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &[T], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let e: Vec<f64> = row.iter().map(|v| (v.f64() - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub(crate) fn softmax_xent<T: Scalar>(logits: &[T], labels: &[u32], k: usize) -> (f64, Vec<T>) {
    let n = labels.len();
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); logits.len()];
    for (s, (row, &y)) in logits.chunks_exact(k).zip(labels).enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let sum: f64 = row.iter().map(|v| (v.f64() - m).exp()).sum();
        loss += sum.ln() - (row[y as usize].f64() - m);
        for (j, v) in row.iter().enumerate() {
            let p = (v.f64() - m).exp() / sum;
            let target = if j == y as usize { 1.0 } else { 0.0 };
            grad[s * k + j] = T::of((p - target) / n as f64);
        }
    }
    (loss / n as f64, grad)
}
