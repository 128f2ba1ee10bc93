//! Diagonal state-space machinery: S4D-real initialization, zero-order-hold
//! discretization and the input-dependent (selective) scan, one-directional
//! and bidirectional.
//!
//! Two paths compute the same recurrence:
//!
//! * [`zoh_discretize`] + [`selective_scan`] materialize `Ā`, `B̄u` for a single
//!   sequence. They are the readable reference.
//! * [`scan`] is a fused, batched tape primitive that discretizes on the fly
//!   and carries a hand-written backward pass. The model uses this one.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::numerics::{reverse_axis, softplus, softplus_inv, Rng, Tape, Tensor, Var};

/// Below this `|Δ·A|` the input coefficient uses its series expansion.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-4;

/// Range of the initial step size `softplus(b_Δ)`.
pub const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Per-direction selective SSM weights.
///
/// `A = −exp(a_log)` is `[d_inner, n]`; the projections generate `Δ`, `B`, `C`
/// from the current feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T = Tensor> {
    pub a_log: T,
    /// `[d_inner, d_inner]`
    pub w_delta: T,
    /// `[d_inner]`
    pub b_delta: T,
    /// `[n, d_inner]`
    pub w_b: T,
    /// `[n, d_inner]`
    pub w_c: T,
    /// `[d_inner]`
    pub d_skip: T,
}

impl<T> SsmParams<T> {
    pub const FIELD_NAMES: [&'static str; 6] = ["A_log", "w_delta", "b_delta", "w_b", "w_c", "d_skip"];

    pub fn fields(&self) -> [&T; 6] {
        [
            &self.a_log,
            &self.w_delta,
            &self.b_delta,
            &self.w_b,
            &self.w_c,
            &self.d_skip,
        ]
    }

    pub fn from_fields(mut fields: impl Iterator<Item = T>) -> Option<Self> {
        Some(SsmParams {
            a_log: fields.next()?,
            w_delta: fields.next()?,
            b_delta: fields.next()?,
            w_b: fields.next()?,
            w_c: fields.next()?,
            d_skip: fields.next()?,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SsmParams<U> {
        SsmParams {
            a_log: f(&self.a_log),
            w_delta: f(&self.w_delta),
            b_delta: f(&self.b_delta),
            w_b: f(&self.w_b),
            w_c: f(&self.w_c),
            d_skip: f(&self.d_skip),
        }
    }
}

impl SsmParams<Tensor> {
    pub fn d_inner(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// `A = −exp(a_log)`
    pub fn a(&self) -> Tensor {
        self.a_log.map(|v| -v.exp())
    }

    pub fn on_tape(&self, tape: &mut Tape, differentiable: bool) -> SsmParams<Var> {
        self.map(|t| {
            if differentiable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }
}

/// S4D-real initialization: `A[d, n] = −(n + 1)`, `D = 1`, step sizes
/// log-uniform in [`DELTA_INIT_RANGE`], projections fan-in scaled normal.
pub fn s4d_init(d_inner: usize, n: usize, rng: &mut Rng) -> Result<SsmParams> {
    if d_inner == 0 || n == 0 {
        return Err(Error::Config(format!(
            "SSM sizes must be positive (d_inner={d_inner}, n={n})"
        )));
    }
    let a_log = Tensor::from_vec(
        &[d_inner, n],
        (0..d_inner)
            .flat_map(|_| (0..n).map(|j| ((j + 1) as f64).ln()))
            .collect(),
    );
    let std = (d_inner as f64).powf(-0.5);
    let normal = |shape: &[usize], rng: &mut Rng| {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.normal() * std).collect())
    };
    let w_delta = normal(&[d_inner, d_inner], &mut rng.fork_named("w_delta"));
    let w_b = normal(&[n, d_inner], &mut rng.fork_named("w_b"));
    let w_c = normal(&[n, d_inner], &mut rng.fork_named("w_c"));
    let mut dt_rng = rng.fork_named("b_delta");
    let (lo, hi) = (DELTA_INIT_RANGE.0.ln(), DELTA_INIT_RANGE.1.ln());
    let b_delta = Tensor::from_vec(
        &[d_inner],
        (0..d_inner)
            .map(|_| softplus_inv(dt_rng.uniform_range(lo, hi).exp()))
            .collect(),
    );
    Ok(SsmParams {
        a_log,
        w_delta,
        b_delta,
        w_b,
        w_c,
        d_skip: Tensor::ones(&[d_inner]),
    })
}

// ---------------------------------------------------------------------------
// scalar zero-order hold

/// `(Ā, φ)` with `Ā = exp(Δa)` and `φ = (exp(Δa) − 1)/a`, so that `B̄ = φ·B`.
#[inline]
pub fn zoh_coefficients(delta: f64, a: f64) -> (f64, f64) {
    let x = delta * a;
    let abar = x.exp();
    let phi = if x.abs() < ZOH_SERIES_THRESHOLD {
        delta + 0.5 * delta * x
    } else {
        delta * x.exp_m1() / x
    };
    (abar, phi)
}

/// Partial derivatives `(∂Ā/∂Δ, ∂Ā/∂a, ∂φ/∂Δ, ∂φ/∂a)` matching the branch
/// chosen by [`zoh_coefficients`].
#[inline]
fn zoh_partials(delta: f64, a: f64, abar: f64) -> (f64, f64, f64, f64) {
    let x = delta * a;
    let (dphi_ddelta, dphi_da) = if x.abs() < ZOH_SERIES_THRESHOLD {
        (1.0 + x, 0.5 * delta * delta)
    } else {
        (abar, delta * delta * (x * abar - x.exp_m1()) / (x * x))
    };
    (a * abar, delta * abar, dphi_ddelta, dphi_da)
}

/// Discretized per-timestep quantities for one sequence.
#[derive(Clone, Debug)]
pub struct ScanInputs {
    /// `[L, d_inner, N]`
    pub abar: Tensor,
    /// `B̄·u`, `[L, d_inner, N]`
    pub bbar_u: Tensor,
    /// `[L, N]`
    pub c_seq: Tensor,
    /// `[d_inner]`
    pub d_skip: Tensor,
    /// `[L, d_inner]`
    pub u: Tensor,
}

impl ScanInputs {
    /// Assemble from a discretization and the scan input `u`.
    pub fn new(abar: Tensor, bbar: &Tensor, c_seq: Tensor, d_skip: Tensor, u: Tensor) -> Result<Self> {
        let s = abar.shape().to_vec();
        if s.len() != 3
            || bbar.shape() != s.as_slice()
            || u.shape() != [s[0], s[1]]
            || c_seq.shape() != [s[0], s[2]]
            || d_skip.shape() != [s[1]]
        {
            return Err(Error::shape("scan inputs", &s, u.shape()));
        }
        let (l, d, n) = (s[0], s[1], s[2]);
        let mut bu = bbar.clone();
        for t in 0..l {
            for di in 0..d {
                let uv = u.data()[t * d + di];
                for v in &mut bu.data_mut()[(t * d + di) * n..(t * d + di + 1) * n] {
                    *v *= uv;
                }
            }
        }
        Ok(ScanInputs {
            abar,
            bbar_u: bu,
            c_seq,
            d_skip,
            u,
        })
    }

    pub fn len(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact zero-order hold for diagonal `A[d_inner, N]`, per-timestep steps
/// `delta[L, d_inner]` and input matrices `b_seq[L, N]`.
///
/// Returns `(Ā, B̄)`, both `[L, d_inner, N]`.
pub fn zoh_discretize(a: &Tensor, delta: &Tensor, b_seq: &Tensor) -> Result<(Tensor, Tensor)> {
    if a.ndim() != 2 || delta.ndim() != 2 || delta.shape()[1] != a.shape()[0] {
        return Err(Error::shape("zoh_discretize", a.shape(), delta.shape()));
    }
    let (d, n) = (a.shape()[0], a.shape()[1]);
    let l = delta.shape()[0];
    if b_seq.shape() != [l, n] {
        return Err(Error::shape("zoh_discretize", delta.shape(), b_seq.shape()));
    }
    if let Some(bad) = delta.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("step size must be positive, got {bad}")));
    }
    let mut abar = vec![0.0; l * d * n];
    let mut bbar = vec![0.0; l * d * n];
    for t in 0..l {
        for di in 0..d {
            let dt = delta.data()[t * d + di];
            for j in 0..n {
                let (ab, phi) = zoh_coefficients(dt, a.data()[di * n + j]);
                let o = (t * d + di) * n + j;
                abar[o] = ab;
                bbar[o] = phi * b_seq.data()[t * n + j];
            }
        }
    }
    Ok((
        Tensor::from_vec(&[l, d, n], abar),
        Tensor::from_vec(&[l, d, n], bbar),
    ))
}

/// Run `h_t = Ā_t h_{t−1} + B̄u_t`, `y_t = C_t·h_t + D·u_t` from `h_0 = 0`.
pub fn selective_scan(s: &ScanInputs) -> Tensor {
    let (l, d, n) = (s.abar.shape()[0], s.abar.shape()[1], s.abar.shape()[2]);
    let mut y = vec![0.0; l * d];
    let mut h = vec![0.0; d * n];
    for t in 0..l {
        let c = &s.c_seq.data()[t * n..(t + 1) * n];
        for di in 0..d {
            let o = (t * d + di) * n;
            let hd = &mut h[di * n..(di + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                hd[j] = s.abar.data()[o + j] * hd[j] + s.bbar_u.data()[o + j];
                acc += c[j] * hd[j];
            }
            y[t * d + di] = acc + s.d_skip.data()[di] * s.u.data()[t * d + di];
        }
    }
    Tensor::from_vec(&[l, d], y)
}

/// `Δ = softplus(x W_Δᵀ + b_Δ)`, `B = x W_Bᵀ`, `C = x W_Cᵀ` for `x[..., d_inner]`.
pub fn selective_projections(
    tape: &mut Tape,
    x: Var,
    p: &SsmParams<Var>,
) -> Result<(Var, Var, Var)> {
    let pre = tape.linear(x, p.w_delta, Some(p.b_delta))?;
    let delta = tape.softplus(pre);
    let b = tape.linear(x, p.w_b, None)?;
    let c = tape.linear(x, p.w_c, None)?;
    Ok((delta, b, c))
}

struct ScanSlices<'a> {
    u: &'a [f64],
    delta: &'a [f64],
    a: &'a [f64],
    b: &'a [f64],
    c: &'a [f64],
    d_skip: &'a [f64],
}

/// Forward recurrence over `[B, L, d_inner]` with on-the-fly discretization.
/// When `states` is given it receives every `h_t`, laid out `[B, d_inner, L, N]`
/// so each trajectory is contiguous.
fn scan_kernel(dims: [usize; 4], s: ScanSlices<'_>, mut states: Option<&mut Vec<f64>>) -> Vec<f64> {
    let [bsz, l, d, n] = dims;
    if let Some(st) = states.as_deref_mut() {
        st.clear();
        st.resize(bsz * d * l * n, 0.0);
    }
    let mut y = vec![0.0; bsz * l * d];
    let mut h = vec![0.0; n];
    for b in 0..bsz {
        for di in 0..d {
            h.iter_mut().for_each(|v| *v = 0.0);
            let arow = &s.a[di * n..(di + 1) * n];
            for t in 0..l {
                let bt = b * l + t;
                let (dt, uv) = (s.delta[bt * d + di], s.u[bt * d + di]);
                let bvec = &s.b[bt * n..(bt + 1) * n];
                let cvec = &s.c[bt * n..(bt + 1) * n];
                let mut acc = 0.0;
                for j in 0..n {
                    let (abar, phi) = zoh_coefficients(dt, arow[j]);
                    h[j] = abar * h[j] + phi * bvec[j] * uv;
                    acc += cvec[j] * h[j];
                }
                y[bt * d + di] = acc + s.d_skip[di] * uv;
                if let Some(st) = states.as_deref_mut() {
                    let o = ((b * d + di) * l + t) * n;
                    st[o..o + n].copy_from_slice(&h);
                }
            }
        }
    }
    y
}

/// Fused batched selective scan.
///
/// Shapes: `u`, `delta` are `[B, L, d_inner]`; `a` is `[d_inner, N]`;
/// `b_seq`, `c_seq` are `[B, L, N]`; `d_skip` is `[d_inner]`.
pub fn scan(
    tape: &mut Tape,
    u: Var,
    delta: Var,
    a: Var,
    b_seq: Var,
    c_seq: Var,
    d_skip: Var,
) -> Result<Var> {
    let us = tape.shape(u).to_vec();
    if us.len() != 3 {
        return Err(Error::shape("scan", &us, &[0, 0, 0]));
    }
    let (bsz, l, d) = (us[0], us[1], us[2]);
    let n = tape.shape(a).get(1).copied().unwrap_or(0);
    if tape.shape(delta) != us.as_slice()
        || tape.shape(a) != [d, n]
        || tape.shape(b_seq) != [bsz, l, n]
        || tape.shape(c_seq) != [bsz, l, n]
        || tape.shape(d_skip) != [d]
    {
        return Err(Error::shape("scan", &us, tape.shape(b_seq)));
    }
    let keep_states = [u, delta, a, b_seq, c_seq, d_skip]
        .iter()
        .any(|&v| tape.requires_grad(v));
    let mut states = Vec::new();
    let y = scan_kernel(
        [bsz, l, d, n],
        ScanSlices {
            u: tape.value(u).data(),
            delta: tape.value(delta).data(),
            a: tape.value(a).data(),
            b: tape.value(b_seq).data(),
            c: tape.value(c_seq).data(),
            d_skip: tape.value(d_skip).data(),
        },
        keep_states.then_some(&mut states),
    );
    let value = Tensor::from_vec(&[bsz, l, d], y);
    Ok(tape.push_op(
        value,
        &[u, delta, a, b_seq, c_seq, d_skip],
        Box::new(move |ctx| {
            let (ud, dd, ad) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
            let (bd, cd, skip) = (ctx.input(3).data(), ctx.input(4).data(), ctx.input(5).data());
            let g = ctx.grad.data();
            let mut gu = vec![0.0; ud.len()];
            let mut gdelta = vec![0.0; dd.len()];
            let mut ga = vec![0.0; ad.len()];
            let mut gb = vec![0.0; bd.len()];
            let mut gc = vec![0.0; cd.len()];
            let mut gskip = vec![0.0; skip.len()];
            let mut carry = vec![0.0; n];
            for b in 0..bsz {
                for di in 0..d {
                    carry.iter_mut().for_each(|v| *v = 0.0);
                    let arow = &ad[di * n..(di + 1) * n];
                    let traj = &states[(b * d + di) * l * n..(b * d + di + 1) * l * n];
                    for t in (0..l).rev() {
                        let bt = b * l + t;
                        let (gy, uv, dt) = (g[bt * d + di], ud[bt * d + di], dd[bt * d + di]);
                        gskip[di] += gy * uv;
                        let mut gu_t = gy * skip[di];
                        let mut gdt = 0.0;
                        let h_t = &traj[t * n..(t + 1) * n];
                        for j in 0..n {
                            let h_prev = if t > 0 { traj[(t - 1) * n + j] } else { 0.0 };
                            let (abar, phi) = zoh_coefficients(dt, arow[j]);
                            let bv = bd[bt * n + j];
                            gc[bt * n + j] += gy * h_t[j];
                            let gh = carry[j] + gy * cd[bt * n + j];
                            let g_abar = gh * h_prev;
                            let g_phi = gh * bv * uv;
                            gb[bt * n + j] += gh * phi * uv;
                            gu_t += gh * phi * bv;
                            let (dab_ddt, dab_da, dphi_ddt, dphi_da) = zoh_partials(dt, arow[j], abar);
                            gdt += g_abar * dab_ddt + g_phi * dphi_ddt;
                            ga[di * n + j] += g_abar * dab_da + g_phi * dphi_da;
                            carry[j] = gh * abar;
                        }
                        gu[bt * d + di] = gu_t;
                        gdelta[bt * d + di] = gdt;
                    }
                }
            }
            let wrap = |i: usize, v: Vec<f64>| ctx.needs[i].then(|| Tensor::from_vec(ctx.input(i).shape(), v));
            vec![
                wrap(0, gu),
                wrap(1, gdelta),
                wrap(2, ga),
                wrap(3, gb),
                wrap(4, gc),
                wrap(5, gskip),
            ]
        }),
    ))
}

/// One direction: projections, discretization and scan of `x[B, L, d_inner]`.
/// `a_log` overrides `p.a_log` when the transition is shared across directions.
pub fn directional_scan(tape: &mut Tape, x: Var, p: &SsmParams<Var>, a_log: Var) -> Result<Var> {
    let (delta, b, c) = selective_projections(tape, x, p)?;
    let e = tape.exp(a_log);
    let a = tape.neg(e);
    scan(tape, x, delta, a, b, c, p.d_skip)
}

/// Forward scan plus time-reversed backward scan, merged by summation.
///
/// `x` is `[B, L, d_inner]` (or `[L, d_inner]`, treated as a batch of one).
pub fn bidirectional_scan_on_tape(
    tape: &mut Tape,
    x: Var,
    p_fwd: &SsmParams<Var>,
    p_bwd: &SsmParams<Var>,
    shared_a: bool,
) -> Result<Var> {
    let unbatched = tape.shape(x).len() == 2;
    let x3 = if unbatched {
        let s = tape.shape(x).to_vec();
        tape.reshape(x, &[1, s[0], s[1]])?
    } else {
        x
    };
    let y_fwd = directional_scan(tape, x3, p_fwd, p_fwd.a_log)?;
    let xr = tape.reverse(x3, 1);
    let bwd_a = if shared_a { p_fwd.a_log } else { p_bwd.a_log };
    let yr = directional_scan(tape, xr, p_bwd, bwd_a)?;
    let y_bwd = tape.reverse(yr, 1);
    let y = tape.add(y_fwd, y_bwd)?;
    if unbatched {
        let s = tape.shape(x).to_vec();
        tape.reshape(y, &s)
    } else {
        Ok(y)
    }
}

/// Non-differentiable convenience wrapper over [`bidirectional_scan_on_tape`]
/// for a single sequence `x[L, d_inner]`.
pub fn bidirectional_scan(
    x: &Tensor,
    p_fwd: &SsmParams,
    p_bwd: &SsmParams,
    shared_a: bool,
) -> Result<Tensor> {
    if p_fwd.a_log.shape() != p_bwd.a_log.shape() || p_fwd.w_b.shape() != p_bwd.w_b.shape() {
        return Err(Error::shape(
            "bidirectional_scan",
            p_fwd.a_log.shape(),
            p_bwd.a_log.shape(),
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pf = p_fwd.on_tape(&mut tape, false);
    let pb = p_bwd.on_tape(&mut tape, false);
    let y = bidirectional_scan_on_tape(&mut tape, xv, &pf, &pb, shared_a)?;
    Ok(tape.value(y).clone())
}

// ---------------------------------------------------------------------------
// scaling probe

#[derive(Clone, Debug)]
pub struct ScalingRow {
    pub len: usize,
    pub median_secs: f64,
}

#[derive(Clone, Debug)]
pub struct ScalingTable {
    pub d_inner: usize,
    pub d_state: usize,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    /// Least-squares slope of log(time) against log(L).
    pub fn log_log_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| ((r.len as f64).ln(), r.median_secs.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    }

    /// Time ratios between consecutive rows.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[1].median_secs / w[0].median_secs)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("L,median_ms\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6}\n", r.len, r.median_secs * 1e3));
        }
        s
    }
}

/// Median wall time of the bidirectional scan recurrence (discretization,
/// both directional sweeps and the merge) over a single sequence, for each
/// length in `lens` (ascending, at least three points, at least 5 repeats).
///
/// The input projections are computed once outside the timed region: the dense
/// `Δ` projection costs `O(L·d_inner²)` and would mask the dependence on `n`.
///
/// Lengths are measured round-robin after one untimed round, and each sample
/// of a short length averages `max(lens)/len` back-to-back runs, so every
/// sample spans a similar wall time and load spikes on a shared machine hit
/// all lengths alike.
pub fn scan_complexity_probe(
    lens: &[usize],
    d_inner: usize,
    n: usize,
    repeats: usize,
    seed: u64,
) -> Result<ScalingTable> {
    if lens.len() < 3 {
        return Err(Error::Config(format!(
            "scaling fit needs at least 3 lengths, got {}",
            lens.len()
        )));
    }
    if lens.windows(2).any(|w| w[1] <= w[0]) || lens[0] == 0 {
        return Err(Error::Config("lengths must be positive and strictly ascending".into()));
    }
    let repeats = repeats.max(5);
    let rng = Rng::new(seed);
    let p_fwd = s4d_init(d_inner, n, &mut rng.fork(1))?;
    let p_bwd = s4d_init(d_inner, n, &mut rng.fork(2))?;
    let (a_fwd, a_bwd) = (p_fwd.a(), p_bwd.a());
    let mut xr = rng.fork(3);
    struct Prepared {
        x: Tensor,
        x_rev: Tensor,
        fwd: (Tensor, Tensor, Tensor),
        bwd: (Tensor, Tensor, Tensor),
    }
    let prepared = lens
        .iter()
        .map(|&len| {
            let x = Tensor::from_vec(&[len, d_inner], (0..len * d_inner).map(|_| xr.normal()).collect());
            let x_rev = reverse_axis(&x, 0);
            let fwd = projections(&x, &p_fwd)?;
            let bwd = projections(&x_rev, &p_bwd)?;
            Ok(Prepared { x, x_rev, fwd, bwd })
        })
        .collect::<Result<Vec<_>>>()?;
    let run = |len: usize, p: &Prepared| {
        let dims = [1, len, d_inner, n];
        let yf = scan_kernel(
            dims,
            ScanSlices {
                u: p.x.data(),
                delta: p.fwd.0.data(),
                a: a_fwd.data(),
                b: p.fwd.1.data(),
                c: p.fwd.2.data(),
                d_skip: p_fwd.d_skip.data(),
            },
            None,
        );
        let yb = scan_kernel(
            dims,
            ScanSlices {
                u: p.x_rev.data(),
                delta: p.bwd.0.data(),
                a: a_bwd.data(),
                b: p.bwd.1.data(),
                c: p.bwd.2.data(),
                d_skip: p_bwd.d_skip.data(),
            },
            None,
        );
        let mut y = yf;
        for t in 0..len {
            let src = &yb[(len - 1 - t) * d_inner..(len - t) * d_inner];
            for (o, v) in y[t * d_inner..(t + 1) * d_inner].iter_mut().zip(src) {
                *o += v;
            }
        }
        y
    };
    let longest = *lens.last().expect("at least three lengths");
    let mut times = vec![Vec::with_capacity(repeats); lens.len()];
    for round in 0..=repeats {
        for (k, (&len, p)) in lens.iter().zip(&prepared).enumerate() {
            let inner = (longest / len).max(1);
            let start = Instant::now();
            for _ in 0..inner {
                std::hint::black_box(run(len, p));
            }
            if round > 0 {
                times[k].push(start.elapsed().as_secs_f64() / inner as f64);
            }
        }
    }
    let rows = lens
        .iter()
        .zip(&mut times)
        .map(|(&len, t)| {
            t.sort_by(f64::total_cmp);
            ScalingRow {
                len,
                median_secs: t[t.len() / 2],
            }
        })
        .collect();
    Ok(ScalingTable {
        d_inner,
        d_state: n,
        rows,
    })
}

/// Plain-tensor projections for a single sequence `x[L, d_inner]`.
pub fn projections(x: &Tensor, p: &SsmParams) -> Result<(Tensor, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = p.on_tape(&mut tape, false);
    let (d, b, c) = selective_projections(&mut tape, xv, &pv)?;
    Ok((tape.value(d).clone(), tape.value(b).clone(), tape.value(c).clone()))
}

/// Softplus of the step bias: the step size produced by a zero input.
pub fn delta_floor(p: &SsmParams) -> Tensor {
    p.b_delta.map(softplus)
}
