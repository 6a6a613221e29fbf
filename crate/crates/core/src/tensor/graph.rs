//! Eager computation graph recorded on an explicit tape.
//!
//! Every op evaluates immediately and appends a node; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! depends on a `requires_grad` leaf.

use super::conv::{self, gemm, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, param_err, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ChannelBias { x: Var, bias: Var },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    GlobalAvgPool(Var),
    L1Mean(Var, Var),
    L1PerSample(Var, Var),
    PairwiseL2(Var, Var),
    Decimate(Var, usize),
    NnUpsample(Var, usize),
    Film { x: Var, gamma: Var, beta: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    // im2col matrices kept from the forward pass of convolutions whose
    // weights need gradients.
    conv_cols: Vec<(usize, Vec<f64>)>,
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        None => *slot = Some(contribution),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(&format!("{op:?}"))?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape matches value")
        })
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    // ---- convolution and affine maps ----

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_impl(input, weight, None, stride, padding)
    }

    /// Convolution followed by a per-output-channel bias, fused.
    pub fn conv2d_bias(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_impl(input, weight, Some(bias), stride, padding)
    }

    fn conv2d_impl(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(param_err!("conv2d stride must be positive"));
        }
        let (n, cin, h, w) = self.val(input).dims4()?;
        let (cout, wcin, kh, kw) = self.val(weight).dims4()?;
        if wcin != cin {
            return Err(dim_err!("conv2d: input has {cin} channels, weight expects {wcin}"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(dim_err!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        if let Some(b) = bias {
            if self.val(b).shape() != [cout] {
                return Err(dim_err!("conv2d: bias {:?} for {cout} channels", self.val(b).shape()));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let col = conv::lower(&geom, self.val(input).data());
        let out = conv::forward(&geom, &col, self.val(weight).data(), bias.map(|b| self.val(b).data()));
        let t = Tensor::new(vec![n, cout, geom.ho, geom.wo], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let v = self.push(t, Op::Conv2d { input, weight, bias, geom }, &inputs)?;
        if self.nodes[weight.0].requires_grad {
            self.conv_cols.push((v.0, col));
        }
        Ok(v)
    }

    /// Adds `bias[c]` to every element of channel `c` of an `[N, C, ...]` tensor.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.val(x).shape().to_vec();
        let b = self.val(bias);
        if xs.len() < 2 || b.shape() != [xs[1]] {
            return Err(dim_err!("channel_bias: {:?} vs bias {:?}", xs, b.shape()));
        }
        let inner: usize = xs[2..].iter().product();
        let c = xs[1];
        let mut out = self.val(x).clone();
        for (k, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bv = b.data()[k % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        self.push(out, Op::ChannelBias { x, bias }, &[x, bias])
    }

    /// `x · wᵀ + b` with `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, din) = self.val(x).dims2()?;
        let (dout, wdin) = self.val(w).dims2()?;
        if wdin != din || self.val(b).shape() != [dout] {
            return Err(dim_err!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.val(x).shape(),
                self.val(w).shape(),
                self.val(b).shape()
            ));
        }
        let mut out = vec![0.0; n * dout];
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(self.val(b).data());
        }
        gemm(n, din, dout, self.val(x).data(), (din, 1), self.val(w).data(), (1, din), 1.0, &mut out);
        self.push(Tensor::new(vec![n, dout], out)?, Op::Linear { x, w, b }, &[x, w, b])
    }

    // ---- elementwise ----

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.val(a), self.val(b));
        if tb.numel() == 1 {
            let s = tb.data()[0];
            return Ok(Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, s)).collect())?);
        }
        same_shape(ta, tb, name)?;
        Ok(Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )?)
    }

    /// `a + b`; `b` may be a one-element tensor broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.val(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("unary op preserves shape")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.unary(a, |x| c * x);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.unary(a, |x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let t = self.unary(a, |x| if x > 0.0 { x } else { slope * x });
        self.push(t, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.unary(a, f64::exp);
        self.push(t, Op::Exp(a), &[a])
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// `[N, C, H, W] → [N, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.val(a).dims4()?;
        let hw = h * w;
        let data = self
            .val(a)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Tensor::new(vec![n, c], data)?, Op::GlobalAvgPool(a), &[a])
    }

    /// `mean(|a − b|)` over all elements.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.val(a), self.val(b), "l1_mean")?;
        let n = self.val(a).numel() as f64;
        let s = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(s), Op::L1Mean(a, b), &[a, b])
    }

    /// Per-sample `mean(|a − b|)` over all but the leading axis: `[N, ...] → [N]`.
    pub fn l1_per_sample(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.val(a), self.val(b), "l1_per_sample")?;
        let n = self.val(a).shape()[0];
        let inner = self.val(a).numel() / n;
        let data = self
            .val(a)
            .data()
            .chunks(inner)
            .zip(self.val(b).data().chunks(inner))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / inner as f64)
            .collect();
        self.push(Tensor::new(vec![n], data)?, Op::L1PerSample(a, b), &[a, b])
    }

    /// Euclidean distance matrix `[B, M]` between the rows of `a: [B, D]` and
    /// `b: [M, D]`.
    pub fn pairwise_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows_a, da) = self.val(a).dims2()?;
        let (rows_b, db) = self.val(b).dims2()?;
        if da != db {
            return Err(dim_err!("pairwise_l2: feature dims {da} and {db} differ"));
        }
        let (ta, tb) = (self.val(a).data(), self.val(b).data());
        let mut out = Vec::with_capacity(rows_a * rows_b);
        for i in 0..rows_a {
            let ai = &ta[i * da..(i + 1) * da];
            for j in 0..rows_b {
                let bj = &tb[j * da..(j + 1) * da];
                out.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
            }
        }
        self.push(Tensor::new(vec![rows_a, rows_b], out)?, Op::PairwiseL2(a, b), &[a, b])
    }

    // ---- resampling ----

    /// Keeps pixels at rows/cols `0, s, 2s, …`.
    pub fn decimate(&mut self, a: Var, s: usize) -> Result<Var> {
        if s == 0 {
            return Err(param_err!("decimate factor must be positive"));
        }
        let (n, c, h, w) = self.val(a).dims4()?;
        if h % s != 0 || w % s != 0 {
            return Err(dim_err!("decimate: {h}x{w} not divisible by {s}"));
        }
        let (ho, wo) = (h / s, w / s);
        let src = self.val(a).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in src.chunks(h * w) {
            for i in 0..ho {
                for j in 0..wo {
                    out.push(plane[i * s * w + j * s]);
                }
            }
        }
        self.push(Tensor::new(vec![n, c, ho, wo], out)?, Op::Decimate(a, s), &[a])
    }

    /// Repeats every pixel into an `s × s` block.
    pub fn nn_upsample(&mut self, a: Var, s: usize) -> Result<Var> {
        if s == 0 {
            return Err(param_err!("upsample factor must be positive"));
        }
        let (n, c, h, w) = self.val(a).dims4()?;
        let (ho, wo) = (h * s, w * s);
        let src = self.val(a).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in src.chunks(h * w) {
            for i in 0..ho {
                for j in 0..wo {
                    out.push(plane[(i / s) * w + j / s]);
                }
            }
        }
        self.push(Tensor::new(vec![n, c, ho, wo], out)?, Op::NnUpsample(a, s), &[a])
    }

    /// Feature-wise affine modulation `gamma[n,c] · x[n,c,:,:] + beta[n,c]`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, c, h, w) = self.val(x).dims4()?;
        if self.val(gamma).shape() != [n, c] || self.val(beta).shape() != [n, c] {
            return Err(dim_err!(
                "film: features {:?}, gamma {:?}, beta {:?}",
                self.val(x).shape(),
                self.val(gamma).shape(),
                self.val(beta).shape()
            ));
        }
        let hw = h * w;
        let (g, b) = (self.val(gamma).data(), self.val(beta).data());
        let mut data = Vec::with_capacity(n * c * hw);
        for (k, plane) in self.val(x).data().chunks(hw).enumerate() {
            let (gk, bk) = (g[k], b[k]);
            data.extend(plane.iter().map(|&v| gk * v + bk));
        }
        self.push(Tensor::new(vec![n, c, h, w], data)?, Op::Film { x, gamma, beta }, &[x, gamma, beta])
    }

    // ---- reverse pass ----

    /// Accumulates `∂loss/∂v` into every node that depends on a
    /// `requires_grad` leaf. Gradients from a previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.val(loss).numel() != 1 {
            return Err(param_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(loss).shape()
            ));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            for (target, contribution) in self.local_grads(i, &gout) {
                if self.nodes[target.0].requires_grad {
                    accumulate(&mut self.grads[target.0], contribution);
                }
            }
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient contributions of node `i` to its inputs.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let cached = self
                    .conv_cols
                    .binary_search_by_key(&i, |(k, _)| *k)
                    .ok()
                    .map(|idx| &self.conv_cols[idx].1);
                let rebuilt;
                let col = match cached {
                    Some(c) => c,
                    None => {
                        rebuilt = conv::lower(&geom, self.val(input).data());
                        &rebuilt
                    }
                };
                let want_db = bias.is_some_and(|b| self.wants(b));
                let grads = conv::backward(
                    &geom,
                    col,
                    self.val(weight).data(),
                    g,
                    (self.wants(input), self.wants(weight), want_db),
                );
                res.extend(grads.dx.map(|d| (input, d)));
                res.extend(grads.dw.map(|d| (weight, d)));
                if let (Some(b), Some(db)) = (bias, grads.db) {
                    res.push((b, db));
                }
            }
            Op::ChannelBias { x, bias } => {
                let shape = self.val(x).shape();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                if self.wants(bias) {
                    let mut db = vec![0.0; c];
                    for (k, chunk) in g.chunks(inner).enumerate() {
                        db[k % c] += chunk.iter().sum::<f64>();
                    }
                    res.push((bias, db));
                }
                res.push((x, g.to_vec()));
            }
            Op::Linear { x, w, b } => {
                let (n, din) = self.val(x).dims2().unwrap();
                let dout = self.val(b).numel();
                if self.wants(x) {
                    let mut dx = vec![0.0; n * din];
                    gemm(n, dout, din, g, (dout, 1), self.val(w).data(), (din, 1), 0.0, &mut dx);
                    res.push((x, dx));
                }
                if self.wants(w) {
                    let mut dw = vec![0.0; dout * din];
                    gemm(dout, n, din, g, (1, dout), self.val(x).data(), (din, 1), 0.0, &mut dw);
                    res.push((w, dw));
                }
                if self.wants(b) {
                    let mut db = vec![0.0; dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    res.push((b, db));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                res.push((a, g.to_vec()));
                if self.wants(b) {
                    let db = if self.val(b).numel() == 1 && g.len() != 1 {
                        vec![sign * g.iter().sum::<f64>()]
                    } else {
                        g.iter().map(|v| sign * v).collect()
                    };
                    res.push((b, db));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(a).data(), self.val(b).data());
                let broadcast = tb.len() == 1 && g.len() != 1;
                if self.wants(a) {
                    let da = if broadcast {
                        g.iter().map(|v| v * tb[0]).collect()
                    } else {
                        g.iter().zip(tb).map(|(v, y)| v * y).collect()
                    };
                    res.push((a, da));
                }
                if self.wants(b) {
                    let db = if broadcast {
                        vec![g.iter().zip(ta).map(|(v, x)| v * x).sum()]
                    } else {
                        g.iter().zip(ta).map(|(v, x)| v * x).collect()
                    };
                    res.push((b, db));
                }
            }
            Op::Scale(a, c) => res.push((a, g.iter().map(|v| c * v).collect())),
            Op::AddScalar(a) => res.push((a, g.to_vec())),
            Op::LeakyRelu(a, slope) => {
                let x = self.val(a).data();
                res.push((a, g.iter().zip(x).map(|(v, &x)| if x > 0.0 { *v } else { slope * v }).collect()));
            }
            Op::Exp(a) => res.push((a, g.iter().zip(out).map(|(v, y)| v * y).collect())),
            Op::Sum(a) => res.push((a, vec![g[0]; self.val(a).numel()])),
            Op::Mean(a) => {
                let n = self.val(a).numel();
                res.push((a, vec![g[0] / n as f64; n]));
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, h, w) = self.val(a).dims4().unwrap();
                let hw = h * w;
                let mut da = Vec::with_capacity(self.val(a).numel());
                for gv in g {
                    da.extend(std::iter::repeat_n(gv / hw as f64, hw));
                }
                res.push((a, da));
            }
            Op::L1Mean(a, b) => {
                let n = self.val(a).numel() as f64;
                let da: Vec<f64> = self
                    .val(a)
                    .data()
                    .iter()
                    .zip(self.val(b).data())
                    .map(|(x, y)| g[0] * sign(x - y) / n)
                    .collect();
                if self.wants(b) {
                    res.push((b, da.iter().map(|v| -v).collect()));
                }
                res.push((a, da));
            }
            Op::L1PerSample(a, b) => {
                let n = self.val(a).shape()[0];
                let inner = self.val(a).numel() / n;
                let da: Vec<f64> = self
                    .val(a)
                    .data()
                    .iter()
                    .zip(self.val(b).data())
                    .enumerate()
                    .map(|(k, (x, y))| g[k / inner] * sign(x - y) / inner as f64)
                    .collect();
                if self.wants(b) {
                    res.push((b, da.iter().map(|v| -v).collect()));
                }
                res.push((a, da));
            }
            Op::PairwiseL2(a, b) => {
                let (rows_a, d) = self.val(a).dims2().unwrap();
                let rows_b = self.val(b).shape()[0];
                let (ta, tb) = (self.val(a).data(), self.val(b).data());
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for i in 0..rows_a {
                    for j in 0..rows_b {
                        let dist = out[i * rows_b + j];
                        if dist == 0.0 {
                            continue;
                        }
                        let coef = g[i * rows_b + j] / dist;
                        for k in 0..d {
                            let diff = coef * (ta[i * d + k] - tb[j * d + k]);
                            da[i * d + k] += diff;
                            db[j * d + k] -= diff;
                        }
                    }
                }
                res.push((a, da));
                res.push((b, db));
            }
            Op::Decimate(a, s) => {
                let (_, _, h, w) = self.val(a).dims4().unwrap();
                let (ho, wo) = (h / s, w / s);
                let mut da = vec![0.0; self.val(a).numel()];
                for (dst, src) in da.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
                    for i in 0..ho {
                        for j in 0..wo {
                            dst[i * s * w + j * s] = src[i * wo + j];
                        }
                    }
                }
                res.push((a, da));
            }
            Op::NnUpsample(a, s) => {
                let (_, _, h, w) = self.val(a).dims4().unwrap();
                let (ho, wo) = (h * s, w * s);
                let mut da = vec![0.0; self.val(a).numel()];
                for (dst, src) in da.chunks_mut(h * w).zip(g.chunks(ho * wo)) {
                    for i in 0..ho {
                        for j in 0..wo {
                            dst[(i / s) * w + j / s] += src[i * wo + j];
                        }
                    }
                }
                res.push((a, da));
            }
            Op::Film { x, gamma, beta } => {
                let (_, _, h, w) = self.val(x).dims4().unwrap();
                let hw = h * w;
                let xv = self.val(x).data();
                let gm = self.val(gamma).data();
                if self.wants(x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for (k, chunk) in g.chunks(hw).enumerate() {
                        dx.extend(chunk.iter().map(|v| v * gm[k]));
                    }
                    res.push((x, dx));
                }
                if self.wants(gamma) {
                    let dg = g
                        .chunks(hw)
                        .zip(xv.chunks(hw))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                        .collect();
                    res.push((gamma, dg));
                }
                if self.wants(beta) {
                    let db = g.chunks(hw).map(|c| c.iter().sum()).collect();
                    res.push((beta, db));
                }
            }
        }
        res
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
