//! Differentiable primitives recorded on a [`Tape`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tape::{Tape, Var};
use super::tensor::{axis_split, matmul_into, strides, Tensor};
use crate::error::{Error, Result};

const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    None,
    /// Zero padding of the given width on both ends.
    Symmetric(usize),
}

impl Padding {
    /// Symmetric padding that keeps an odd kernel centered.
    pub fn centered(kernel: usize) -> Padding {
        Padding::Symmetric((kernel.saturating_sub(1)) / 2)
    }

    fn each_side(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Symmetric(p) => p,
        }
    }
}

/// Output length of a 1-D convolution.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    let padded = len + 2 * padding.each_side();
    (padded >= kernel && stride >= 1 && kernel >= 1).then(|| (padded - kernel) / stride + 1)
}

// ---------------------------------------------------------------------------
// scalar functions

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_grad(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        1.0
    } else {
        sigmoid(x)
    }
}

/// Inverse of softplus for positive targets.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

// ---------------------------------------------------------------------------
// broadcasting

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out_shape`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            ia -= sa[ax] * out_shape[ax];
            ib -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }

    /// (d/da, d/db)
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinOp::Add => (1.0, 1.0),
            BinOp::Sub => (1.0, -1.0),
            BinOp::Mul => (b, a),
            BinOp::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

impl Tape {
    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| Error::shape(op.name(), ta.shape(), tb.shape()))?;
        let value = if ta.shape() == tb.shape() {
            ta.zip_map(tb, |x, y| op.apply(x, y))?
        } else {
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let mut data = vec![0.0; out_shape.iter().product()];
            let (da, db) = (ta.data(), tb.data());
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| data[o] = op.apply(da[i], db[j]));
            Tensor::from_vec(&out_shape, data)
        };
        if cfg!(debug_assertions) && matches!(op, BinOp::Div) && !value.all_finite() {
            log::warn!("div produced non-finite values");
        }
        Ok(self.push_op(
            value,
            &[a, b],
            Box::new(move |ctx| {
                let (ta, tb) = (ctx.input(0), ctx.input(1));
                let g = ctx.grad.data();
                let mut ga = ctx.needs[0].then(|| vec![0.0; ta.len()]);
                let mut gb = ctx.needs[1].then(|| vec![0.0; tb.len()]);
                let sa = broadcast_strides(ta.shape(), ctx.out.shape());
                let sb = broadcast_strides(tb.shape(), ctx.out.shape());
                let (da, db) = (ta.data(), tb.data());
                for_each_broadcast(ctx.out.shape(), &sa, &sb, |o, i, j| {
                    let (pa, pb) = op.partials(da[i], db[j]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] += g[o] * pa;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[j] += g[o] * pb;
                    }
                });
                vec![
                    ga.map(|d| Tensor::from_vec(ta.shape(), d)),
                    gb.map(|d| Tensor::from_vec(tb.shape(), d)),
                ]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    /// Elementwise map with derivative `df(x, y)` expressed through input and output.
    pub fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
    ) -> Var {
        let value = self.value(x).map(f);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let x = ctx.input(0).data();
                let y = ctx.out.data();
                let g = ctx.grad.data();
                let d = (0..g.len()).map(|i| g[i] * df(x[i], y[i])).collect();
                vec![Some(Tensor::from_vec(ctx.out.shape(), d))]
            }),
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, |x, _| gelu_grad(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, silu, |x, _| silu_grad(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| softplus_grad(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_, _| -1.0)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).scale(c);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.scale(c))]),
        )
    }

    // -----------------------------------------------------------------------
    // linear algebra

    /// Standard 2-D product `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(
            value,
            &[a, b],
            Box::new(|ctx| {
                let (ta, tb) = (ctx.input(0), ctx.input(1));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let g = ctx.grad.data();
                let ga = ctx.needs[0].then(|| {
                    // g[m,n] · bᵀ[n,k]
                    let mut out = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            out[i * k + p] = dot(&g[i * n..(i + 1) * n], brow);
                        }
                    }
                    Tensor::from_vec(&[m, k], out)
                });
                let gb = ctx.needs[1].then(|| {
                    // aᵀ[k,m] · g[m,n]
                    let at = ta.transpose(0, 1);
                    let mut out = vec![0.0; k * n];
                    matmul_into(at.data(), g, &mut out, k, m, n);
                    Tensor::from_vec(&[k, n], out)
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `x[..., in] · wᵀ + b` for `w[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let din = *tx.shape().last().unwrap_or(&0);
        if tw.ndim() != 2 || tw.shape()[1] != din {
            return Err(Error::shape("linear", tx.shape(), tw.shape()));
        }
        let dout = tw.shape()[0];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape("linear bias", tw.shape(), self.shape(b)));
            }
        }
        let rows = tx.len() / din.max(1);
        let mut out = vec![0.0; rows * dout];
        let (xd, wd) = (tx.data(), tw.data());
        for r in 0..rows {
            let xr = &xd[r * din..(r + 1) * din];
            for o in 0..dout {
                out[r * dout + o] = dot(xr, &wd[o * din..(o + 1) * din]);
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for r in 0..rows {
                for o in 0..dout {
                    out[r * dout + o] += bd[o];
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::from_vec(&shape, out);
        let parents: Vec<Var> = std::iter::once(x).chain(Some(w)).chain(b).collect();
        Ok(self.push_op(
            value,
            &parents,
            Box::new(move |ctx| {
                let (tx, tw) = (ctx.input(0), ctx.input(1));
                let (xd, wd, g) = (tx.data(), tw.data(), ctx.grad.data());
                let mut gx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; wd.len()]);
                for r in 0..rows {
                    let gr = &g[r * dout..(r + 1) * dout];
                    let xr = &xd[r * din..(r + 1) * din];
                    for (o, &go) in gr.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        if let Some(gx) = gx.as_mut() {
                            axpy(go, &wd[o * din..(o + 1) * din], &mut gx[r * din..(r + 1) * din]);
                        }
                        if let Some(gw) = gw.as_mut() {
                            axpy(go, xr, &mut gw[o * din..(o + 1) * din]);
                        }
                    }
                }
                let mut res = vec![
                    gx.map(|d| Tensor::from_vec(tx.shape(), d)),
                    gw.map(|d| Tensor::from_vec(tw.shape(), d)),
                ];
                if ctx.needs.len() == 3 {
                    res.push(ctx.needs[2].then(|| {
                        let mut gb = vec![0.0; dout];
                        for r in 0..rows {
                            axpy(1.0, &g[r * dout..(r + 1) * dout], &mut gb);
                        }
                        Tensor::from_vec(&[dout], gb)
                    }));
                }
                res
            }),
        ))
    }

    /// Cross-correlation of `x[C_in, L]` or `x[B, C_in, L]` with `w[C_out, C_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let batched = tx.ndim() == 3;
        if !(tx.ndim() == 2 || batched) || tw.ndim() != 3 {
            return Err(Error::shape("conv1d", tx.shape(), tw.shape()));
        }
        let (bsz, cin, len) = if batched {
            (tx.shape()[0], tx.shape()[1], tx.shape()[2])
        } else {
            (1, tx.shape()[0], tx.shape()[1])
        };
        let (cout, wcin, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if wcin != cin || stride == 0 || k == 0 {
            return Err(Error::shape("conv1d", tx.shape(), tw.shape()));
        }
        let pad = padding.each_side();
        let lout = conv_output_len(len, k, stride, padding).ok_or(Error::EmptyOutput {
            op: "conv1d",
            len: len + 2 * pad,
            kernel: k,
        })?;
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = vec![0.0; bsz * cout * lout];
        for b in 0..bsz {
            for co in 0..cout {
                let orow = &mut out[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                for ci in 0..cin {
                    let xrow = &xd[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                    let wrow = &wd[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                    for (t, o) in orow.iter_mut().enumerate() {
                        let start = (t * stride) as isize - pad as isize;
                        let mut acc = 0.0;
                        for (j, &wv) in wrow.iter().enumerate() {
                            let p = start + j as isize;
                            if p >= 0 && (p as usize) < len {
                                acc += wv * xrow[p as usize];
                            }
                        }
                        *o += acc;
                    }
                }
            }
        }
        let shape = if batched {
            vec![bsz, cout, lout]
        } else {
            vec![cout, lout]
        };
        let value = Tensor::from_vec(&shape, out);
        Ok(self.push_op(
            value,
            &[x, w],
            Box::new(move |ctx| {
                let (xd, wd, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad.data());
                let mut gx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; wd.len()]);
                for b in 0..bsz {
                    for co in 0..cout {
                        let grow = &g[(b * cout + co) * lout..(b * cout + co + 1) * lout];
                        for ci in 0..cin {
                            let xo = (b * cin + ci) * len;
                            let wo = (co * cin + ci) * k;
                            for (t, &gv) in grow.iter().enumerate() {
                                let start = (t * stride) as isize - pad as isize;
                                for j in 0..k {
                                    let p = start + j as isize;
                                    if p < 0 || p as usize >= len {
                                        continue;
                                    }
                                    let p = p as usize;
                                    if let Some(gw) = gw.as_mut() {
                                        gw[wo + j] += gv * xd[xo + p];
                                    }
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xo + p] += gv * wd[wo + j];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    gx.map(|d| Tensor::from_vec(ctx.input(0).shape(), d)),
                    gw.map(|d| Tensor::from_vec(ctx.input(1).shape(), d)),
                ]
            }),
        ))
    }

    /// Per-feature convolution along time for `x[B, L, D]` with `w[D, k]`
    /// (odd `k`, centered, zero padded) plus bias `b[D]`.
    pub fn depthwise_conv_time(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.ndim() != 3 || tw.ndim() != 2 || tw.shape()[0] != tx.shape()[2] {
            return Err(Error::shape("depthwise_conv_time", tx.shape(), tw.shape()));
        }
        let (bsz, len, d) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let k = tw.shape()[1];
        if k % 2 == 0 {
            return Err(Error::Config(format!("depthwise kernel must be odd, got {k}")));
        }
        if self.shape(b) != [d] {
            return Err(Error::shape("depthwise_conv_time bias", &[d], self.shape(b)));
        }
        let half = (k / 2) as isize;
        let (xd, wd, bd) = (tx.data(), tw.data(), self.value(b).data());
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            for t in 0..len {
                let orow = &mut out[(bi * len + t) * d..(bi * len + t + 1) * d];
                orow.copy_from_slice(bd);
                for j in 0..k {
                    let p = t as isize + j as isize - half;
                    if p < 0 || p as usize >= len {
                        continue;
                    }
                    let xrow = &xd[(bi * len + p as usize) * d..(bi * len + p as usize + 1) * d];
                    for c in 0..d {
                        orow[c] += wd[c * k + j] * xrow[c];
                    }
                }
            }
        }
        let value = Tensor::from_vec(tx.shape(), out);
        Ok(self.push_op(
            value,
            &[x, w, b],
            Box::new(move |ctx| {
                let (xd, wd, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad.data());
                let mut gx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; wd.len()]);
                let mut gb = ctx.needs[2].then(|| vec![0.0; d]);
                for bi in 0..bsz {
                    for t in 0..len {
                        let grow = &g[(bi * len + t) * d..(bi * len + t + 1) * d];
                        if let Some(gb) = gb.as_mut() {
                            axpy(1.0, grow, gb);
                        }
                        for j in 0..k {
                            let p = t as isize + j as isize - half;
                            if p < 0 || p as usize >= len {
                                continue;
                            }
                            let base = (bi * len + p as usize) * d;
                            for c in 0..d {
                                if let Some(gw) = gw.as_mut() {
                                    gw[c * k + j] += grow[c] * xd[base + c];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[base + c] += grow[c] * wd[c * k + j];
                                }
                            }
                        }
                    }
                }
                vec![
                    gx.map(|v| Tensor::from_vec(ctx.input(0).shape(), v)),
                    gw.map(|v| Tensor::from_vec(ctx.input(1).shape(), v)),
                    gb.map(|v| Tensor::from_vec(&[d], v)),
                ]
            }),
        ))
    }

    // -----------------------------------------------------------------------
    // normalization

    /// Standardize over the last axis, then apply `gamma`, `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = *tx.shape().last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layernorm", tx.shape(), self.shape(gamma)));
        }
        let rows = tx.len() / d.max(1);
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let xr = &tx.data()[r * d..(r + 1) * d];
            let (mean, inv) = row_stats(xr, eps);
            for c in 0..d {
                out[r * d + c] = (xr[c] - mean) * inv * gd[c] + bd[c];
            }
        }
        let value = Tensor::from_vec(tx.shape(), out);
        Ok(self.push_op(
            value,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let (xd, gd, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad.data());
                let mut gx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
                let mut ggam = vec![0.0; d];
                let mut gbet = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut gxhat = vec![0.0; d];
                for r in 0..rows {
                    let xr = &xd[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let (mean, inv) = row_stats(xr, eps);
                    for c in 0..d {
                        xhat[c] = (xr[c] - mean) * inv;
                        ggam[c] += gr[c] * xhat[c];
                        gbet[c] += gr[c];
                        gxhat[c] = gr[c] * gd[c];
                    }
                    if let Some(gx) = gx.as_mut() {
                        let m1 = gxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dot(&gxhat, &xhat) / d as f64;
                        for c in 0..d {
                            gx[r * d + c] = inv * (gxhat[c] - m1 - xhat[c] * m2);
                        }
                    }
                }
                vec![
                    gx.map(|v| Tensor::from_vec(ctx.input(0).shape(), v)),
                    ctx.needs[1].then(|| Tensor::from_vec(&[d], ggam)),
                    ctx.needs[2].then(|| Tensor::from_vec(&[d], gbet)),
                ]
            }),
        ))
    }

    /// Batch normalization over axes (0, 2) of `x[B, D, L]`.
    ///
    /// With `running = None` the batch statistics are used (training) and
    /// returned as `(mean, unbiased variance)` for the caller to fold into its
    /// running estimates. With `Some((mean, var))` those statistics are used.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&Tensor, &Tensor)>,
        eps: f64,
    ) -> Result<(Var, Option<(Tensor, Tensor)>)> {
        let tx = self.value(x);
        if tx.ndim() != 3 {
            return Err(Error::shape("batchnorm1d", tx.shape(), &[0, 0, 0]));
        }
        let (bsz, d, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("batchnorm1d", tx.shape(), self.shape(gamma)));
        }
        let (gd, bd) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        let xd = tx.data();
        let count = (bsz * len) as f64;
        let (mean, var, batch_stats) = match running {
            Some((m, v)) => {
                if m.shape() != [d] || v.shape() != [d] {
                    return Err(Error::shape("batchnorm1d stats", &[d], m.shape()));
                }
                (m.data().to_vec(), v.data().to_vec(), None)
            }
            None => {
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                for c in 0..d {
                    let mut s = 0.0;
                    for b in 0..bsz {
                        s += xd[(b * d + c) * len..(b * d + c + 1) * len].iter().sum::<f64>();
                    }
                    mean[c] = s / count;
                    let mut ss = 0.0;
                    for b in 0..bsz {
                        for &v in &xd[(b * d + c) * len..(b * d + c + 1) * len] {
                            ss += (v - mean[c]) * (v - mean[c]);
                        }
                    }
                    var[c] = ss / count;
                }
                let unbiased: Vec<f64> = if count > 1.0 {
                    var.iter().map(|v| v * count / (count - 1.0)).collect()
                } else {
                    var.clone()
                };
                let stats = (
                    Tensor::from_vec(&[d], mean.clone()),
                    Tensor::from_vec(&[d], unbiased),
                );
                (mean, var, Some(stats))
            }
        };
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; xd.len()];
        for b in 0..bsz {
            for c in 0..d {
                let o = (b * d + c) * len;
                for t in 0..len {
                    out[o + t] = (xd[o + t] - mean[c]) * inv[c] * gd[c] + bd[c];
                }
            }
        }
        let value = Tensor::from_vec(tx.shape(), out);
        let training = batch_stats.is_some();
        let var_out = self.push_op(
            value,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let (xd, gd, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad.data());
                let mut ggam = vec![0.0; d];
                let mut gbet = vec![0.0; d];
                let mut gx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
                for c in 0..d {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for b in 0..bsz {
                        let o = (b * d + c) * len;
                        for t in 0..len {
                            let xh = (xd[o + t] - mean[c]) * inv[c];
                            sg += g[o + t];
                            sgx += g[o + t] * xh;
                        }
                    }
                    ggam[c] = sgx;
                    gbet[c] = sg;
                    if let Some(gx) = gx.as_mut() {
                        for b in 0..bsz {
                            let o = (b * d + c) * len;
                            for t in 0..len {
                                gx[o + t] = if training {
                                    let xh = (xd[o + t] - mean[c]) * inv[c];
                                    gd[c] * inv[c] * (g[o + t] - sg / count - xh * sgx / count)
                                } else {
                                    gd[c] * inv[c] * g[o + t]
                                };
                            }
                        }
                    }
                }
                vec![
                    gx.map(|v| Tensor::from_vec(ctx.input(0).shape(), v)),
                    ctx.needs[1].then(|| Tensor::from_vec(&[d], ggam)),
                    ctx.needs[2].then(|| Tensor::from_vec(&[d], gbet)),
                ]
            }),
        );
        Ok((var_out, batch_stats))
    }

    // -----------------------------------------------------------------------
    // softmax family

    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let tx = self.value(x);
        let (outer, n, inner) = axis_split(tx.shape(), axis);
        let mut out = tx.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let m = (0..n).map(|j| out[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..n {
                    let e = (out[at(j)] - m).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    out[at(j)] /= s;
                }
            }
        }
        let value = Tensor::from_vec(tx.shape(), out);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let (y, g) = (ctx.out.data(), ctx.grad.data());
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let s: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - s);
                        }
                    }
                }
                vec![Some(Tensor::from_vec(ctx.out.shape(), gx))]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = *tx.shape().last().unwrap_or(&1);
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::from_vec(tx.shape(), out);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let (y, g) = (ctx.out.data(), ctx.grad.data());
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..n {
                        out[j] = gr[j] - yr[j].exp() * s;
                    }
                }
                vec![Some(Tensor::from_vec(ctx.out.shape(), gx))]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // reductions and layout

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Var {
        let tx = self.value(x);
        let in_shape = tx.shape().to_vec();
        let (outer, n, inner) = axis_split(&in_shape, axis);
        let mut out = vec![0.0; outer * inner];
        let xd = tx.data();
        for o in 0..outer {
            for j in 0..n {
                let src = &xd[(o * n + j) * inner..(o * n + j + 1) * inner];
                axpy(1.0, src, &mut out[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = in_shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let value = Tensor::from_vec(&shape, out);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        gx[(o * n + j) * inner..(o * n + j + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::from_vec(&in_shape, gx))]
            }),
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(Tensor::full(&shape, ctx.grad.item()))]),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let value = self.value(x).reshape(shape)?;
        Ok(self.push_op(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.reshape(&in_shape).expect("reshape"))]),
        ))
    }

    pub fn transpose(&mut self, x: Var, a0: usize, a1: usize) -> Var {
        let value = self.value(x).transpose(a0, a1);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.transpose(a0, a1))]),
        )
    }

    /// Reverse the order of elements along `axis`.
    pub fn reverse(&mut self, x: Var, axis: usize) -> Var {
        let value = reverse_axis(self.value(x), axis);
        self.push_op(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(reverse_axis(ctx.grad, axis))]),
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let mut sizes = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &first, s));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = vec![0.0; outer * total * inner];
        let mut off = 0;
        for (&v, &n) in xs.iter().zip(&sizes) {
            let d = self.value(v).data();
            for o in 0..outer {
                out[(o * total + off) * inner..(o * total + off + n) * inner]
                    .copy_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
            off += n;
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let value = Tensor::from_vec(&shape, out);
        Ok(self.push_op(
            value,
            xs,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut off = 0;
                let mut res = Vec::with_capacity(sizes.len());
                for (i, &n) in sizes.iter().enumerate() {
                    let mut gi = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        gi[o * n * inner..(o + 1) * n * inner].copy_from_slice(
                            &g[(o * total + off) * inner..(o * total + off + n) * inner],
                        );
                    }
                    res.push(Some(Tensor::from_vec(ctx.input(i).shape(), gi)));
                    off += n;
                }
                res
            }),
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        if start + len > in_shape[axis] {
            return Err(Error::shape("slice", &in_shape, &[start, len]));
        }
        let (outer, n, inner) = axis_split(&in_shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = in_shape.clone();
        shape[axis] = len;
        let value = Tensor::from_vec(&shape, out);
        Ok(self.push_op(
            value,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    gx[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_vec(&in_shape, gx))]
            }),
        ))
    }
}

pub(crate) fn reverse_axis(t: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = axis_split(t.shape(), axis);
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for j in 0..n {
            let src = (o * n + j) * inner;
            let dst = (o * n + (n - 1 - j)) * inner;
            out[dst..dst + inner].copy_from_slice(&d[src..src + inner]);
        }
    }
    Tensor::from_vec(t.shape(), out)
}

fn row_stats(x: &[f64], eps: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
