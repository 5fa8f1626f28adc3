//! Feedforward Q-network over a flat parameter vector.
//!
//! Layer `l` maps `dims[l] -> dims[l + 1]`. Its weights are stored row-major
//! (`fan_out x fan_in`) followed by `fan_out` biases; layers are laid out
//! back to back. Hidden layers use ReLU, the output head is linear.

use std::io::{Read, Write};

use rand::Rng;

use crate::config::NetSpec;
use crate::environment::Transition;
use crate::error::{Error, Result};
use crate::numeric::{all_finite, pairwise_sum};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    dims: Vec<usize>,
}

impl Layout {
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "a layout needs input and output widths");
        Layout { dims }
    }

    pub fn from_spec(spec: &NetSpec) -> Self {
        Layout::new(spec.dims())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` for each layer.
    pub fn layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let entry = (offset, offset + fan_in * fan_out, fan_in, fan_out);
                offset += fan_in * fan_out + fan_out;
                entry
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layout: Layout,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.n_params();
        NetworkParams {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.n_params() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: layout.n_params(),
                got: values.len(),
            });
        }
        Ok(NetworkParams { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        GradientVector { values: vec![0.0; n] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        GradientVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fan-in/fan-out scaled uniform weights, zero biases.
pub fn init_params(spec: &NetSpec, rng: &mut RngStream) -> NetworkParams {
    let layout = Layout::from_spec(spec);
    let mut params = NetworkParams::zeros(layout.clone());
    for (w_off, _, fan_in, fan_out) in layout.layers() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut params.values[w_off..w_off + fan_in * fan_out] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    params
}

/// Activations kept for the backward pass; `acts[0]` is the input and
/// `acts[l + 1]` the (post-ReLU for hidden layers) output of layer `l`.
struct Trace {
    acts: Vec<Vec<f64>>,
}

fn forward_trace(params: &NetworkParams, input: &[f64]) -> Trace {
    let layers = params.layout.layers();
    let last = layers.len() - 1;
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for (l, &(w_off, b_off, fan_in, fan_out)) in layers.iter().enumerate() {
        let x = &acts[l];
        let w = &params.values[w_off..w_off + fan_in * fan_out];
        let b = &params.values[b_off..b_off + fan_out];
        let mut out = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let mut z = b[j];
            for (wi, xi) in row.iter().zip(x) {
                z += wi * xi;
            }
            out.push(if l < last { z.max(0.0) } else { z });
        }
        acts.push(out);
    }
    Trace { acts }
}

pub fn forward(params: &NetworkParams, obs: &[f64]) -> Result<Vec<f64>> {
    if obs.len() != params.layout.input_dim() {
        return Err(Error::LengthMismatch {
            what: "observation",
            expected: params.layout.input_dim(),
            got: obs.len(),
        });
    }
    Ok(forward_trace(params, obs).acts.pop().unwrap())
}

/// Index of the largest value; the lowest index wins ties.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Accumulate `d loss / d params` for one sample given `d loss / d q[action]`.
fn backward_into(params: &NetworkParams, trace: &Trace, action: usize, dq: f64, grad: &mut [f64]) {
    let layers = params.layout.layers();
    let mut delta = vec![0.0; params.layout.output_dim()];
    delta[action] = dq;
    for l in (0..layers.len()).rev() {
        let (w_off, b_off, fan_in, fan_out) = layers[l];
        let x = &trace.acts[l];
        for j in 0..fan_out {
            let d = delta[j];
            if d == 0.0 {
                continue;
            }
            grad[b_off + j] += d;
            let g_row = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
            for (g, xi) in g_row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        if l == 0 {
            break;
        }
        let w = &params.values[w_off..w_off + fan_in * fan_out];
        let mut prev = vec![0.0; fan_in];
        for j in 0..fan_out {
            let d = delta[j];
            if d == 0.0 {
                continue;
            }
            for (p, wi) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                *p += d * wi;
            }
        }
        // ReLU mask: the stored activation is zero exactly where the unit is off
        for (p, a) in prev.iter_mut().zip(&trace.acts[l]) {
            if *a <= 0.0 {
                *p = 0.0;
            }
        }
        delta = prev;
    }
}

fn check_batch(batch: &[&Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    for t in batch {
        if !t.reward.is_finite() || !all_finite(t.obs.as_slice()) || !all_finite(t.next_obs.as_slice()) {
            return Err(Error::NonFinite("transition"));
        }
    }
    Ok(())
}

/// How bootstrap targets are formed: discount plus an optional
/// goal-distance potential `Φ(s) = -goal_shaping * |goal_delta(s)|`.
///
/// The shaping term `γΦ(s') - Φ(s)` uses `Φ = 0` at terminal states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdTarget {
    pub discount: f64,
    pub goal_shaping: f64,
}

impl From<f64> for TdTarget {
    fn from(discount: f64) -> Self {
        TdTarget {
            discount,
            goal_shaping: 0.0,
        }
    }
}

impl TdTarget {
    pub fn shaping_term(&self, t: &Transition) -> f64 {
        if self.goal_shaping == 0.0 {
            return 0.0;
        }
        let next = if t.done { 0.0 } else { self.discount * t.next_obs.goal_distance() };
        self.goal_shaping * (t.obs.goal_distance() - next)
    }

    fn target(&self, target: &NetworkParams, t: &Transition) -> Result<f64> {
        let r = t.reward + self.shaping_term(t);
        if t.done {
            return Ok(r);
        }
        let q_next = forward(target, t.next_obs.as_slice())?;
        let max_next = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(r + self.discount * max_next)
    }
}

/// One-step TD errors `r + γ max_a Q_target(s', a) (1 - done) - Q(s, a)`.
pub fn td_errors(
    params: &NetworkParams,
    target: &NetworkParams,
    batch: &[&Transition],
    td: impl Into<TdTarget>,
) -> Result<Vec<f64>> {
    let td = td.into();
    check_batch(batch)?;
    batch
        .iter()
        .map(|t| {
            let q = forward(params, t.obs.as_slice())?;
            let y = td.target(target, t)?;
            Ok(y - q[t.action])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdLoss {
    pub loss: f64,
    pub grad: GradientVector,
    /// Raw (unweighted) TD errors, one per batch entry.
    pub td_errors: Vec<f64>,
}

/// Importance-weighted squared TD loss `mean_i w_i δ_i² / 2` and its exact
/// gradient with respect to `params` (the target network is held fixed).
pub fn loss_grad_td(
    params: &NetworkParams,
    target: &NetworkParams,
    batch: &[&Transition],
    weights: &[f64],
    td: impl Into<TdTarget>,
) -> Result<TdLoss> {
    let td = td.into();
    check_batch(batch)?;
    if weights.len() != batch.len() {
        return Err(Error::LengthMismatch {
            what: "importance weights",
            expected: batch.len(),
            got: weights.len(),
        });
    }
    if !all_finite(weights) {
        return Err(Error::NonFinite("importance weights"));
    }
    if params.layout != target.layout {
        return Err(Error::LayoutMismatch);
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut terms = Vec::with_capacity(batch.len());
    let mut tds = Vec::with_capacity(batch.len());
    for (t, &w) in batch.iter().zip(weights) {
        let trace = forward_trace(params, t.obs.as_slice());
        let q = trace.acts.last().unwrap()[t.action];
        let delta = td.target(target, t)? - q;
        tds.push(delta);
        terms.push(w * delta * delta / 2.0);
        let dq = -w * delta / n;
        if dq != 0.0 {
            backward_into(params, &trace, t.action, dq, &mut grad);
        }
    }
    let loss = pairwise_sum(&terms) / n;
    if !loss.is_finite() || !all_finite(&grad) {
        return Err(Error::NonFinite("loss or gradient"));
    }
    Ok(TdLoss {
        loss,
        grad: GradientVector::from_values(grad),
        td_errors: tds,
    })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

pub fn optimizer_step(
    params: &mut NetworkParams,
    grad: &GradientVector,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let n = params.len();
    if grad.len() != n || state.m.len() != n {
        return Err(Error::LengthMismatch {
            what: "gradient",
            expected: n,
            got: grad.len(),
        });
    }
    if !all_finite(&grad.values) {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..n {
        let g = grad.values[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    if !all_finite(&params.values) {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ECHFRLCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint contents: config hash, round, layout and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub round: u64,
    pub params: NetworkParams,
}

/// Layout: magic, version (u32), config hash (u64), round (u64), layer count
/// (u32), widths (u32 each), parameter count (u64), then little-endian f64s.
pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    let dims = ckpt.params.layout.dims();
    let mut buf = Vec::with_capacity(48 + 4 * dims.len() + 8 * ckpt.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.config_hash.to_le_bytes());
    buf.extend_from_slice(&ckpt.round.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for v in &ckpt.params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let config_hash = cur.u64()?;
    let round = cur.u64()?;
    let n_dims = cur.u32()? as usize;
    if n_dims < 2 {
        return Err(Error::format("checkpoint", "layout needs at least two widths"));
    }
    let dims = (0..n_dims).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let layout = Layout::new(dims);
    let n = cur.u64()? as usize;
    if n != layout.n_params() {
        return Err(Error::format("checkpoint", "parameter count does not match layout"));
    }
    let values = (0..n)
        .map(|_| cur.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint {
        config_hash,
        round,
        params: NetworkParams { layout, values },
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format("checkpoint", "truncated file"));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
