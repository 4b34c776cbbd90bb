//! Forward simulation over `T` steps and reverse-mode BPTT.

use super::lif::LifConfig;
use super::loss::{check_labels, cross_entropy, softmax};
use super::model::{Layer, Model};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::tensor::Tensor;

/// How spikes are produced and differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dynamics {
    /// Heaviside spikes; backward uses the surrogate derivative and treats
    /// the reset as detached.
    #[default]
    Spiking,
    /// Spikes are the smooth arctan primitive of the surrogate and the
    /// reset `v = v_pre (1 − s) + v_reset s` is differentiated exactly, so
    /// backward is the true gradient of this network.
    SmoothTwin,
}

#[derive(Debug, Clone)]
struct StepRecord {
    /// Output of every layer, `[batch × features]` flattened.
    outputs: Vec<Vec<f64>>,
    /// Pre-reset membrane potential for LIF layers.
    v_pre: Vec<Vec<f64>>,
}

/// Forward intermediates needed by [`backward`].
///
/// Backward only reads the tape, so it can be replayed; it is rejected once
/// the model's parameters have changed since the recording.
#[derive(Debug, Clone)]
pub struct Tape {
    model_version: u64,
    dynamics: Dynamics,
    batch: usize,
    /// One entry under direct encoding, otherwise one per step.
    inputs: Vec<Vec<f64>>,
    steps: Vec<StepRecord>,
    logits: Vec<Vec<f64>>,
}

impl Tape {
    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    fn input(&self, t: usize) -> &[f64] {
        if self.inputs.len() == 1 {
            &self.inputs[0]
        } else {
            &self.inputs[t]
        }
    }

    /// Spike outputs of layer `layer` at step `t` (LIF layers only).
    pub fn spikes(&self, t: usize, layer: usize) -> &[f64] {
        &self.steps[t].outputs[layer]
    }

    pub fn pre_reset_potential(&self, t: usize, layer: usize) -> &[f64] {
        &self.steps[t].v_pre[layer]
    }
}

/// Gradients of the batch-mean summed loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// Aligned with [`Model::params`].
    pub params: Vec<Tensor>,
    /// Gradient w.r.t. the shared input, `Σ_t ∂𝓛/∂x_t`.
    pub input: Tensor,
    /// `∂𝓛/∂x_t` for every step.
    pub input_per_step: Vec<Tensor>,
    pub loss: f64,
}

impl GradientSet {
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.params {
            out.extend_from_slice(t.data());
        }
        out
    }
}

fn check_input(model: &Model, x: &Tensor) -> Result<usize> {
    let shape = x.shape();
    if shape.len() != model.input_shape().len() + 1 || &shape[1..] != model.input_shape() {
        return Err(Error::LayerShapeMismatch {
            layer: 0,
            detail: format!(
                "expected [batch, {:?}], got {:?}",
                model.input_shape(),
                shape
            ),
        });
    }
    Ok(shape[0])
}

/// Direct encoding: the same `x` (`[batch, ...input_shape]`) drives every step.
pub fn forward(
    model: &Model,
    x: &Tensor,
    steps: usize,
    dynamics: Dynamics,
) -> Result<(Vec<Tensor>, Tape)> {
    if steps == 0 {
        return Err(Error::Config("time steps must be >= 1".into()));
    }
    let batch = check_input(model, x)?;
    run(model, vec![x.data().to_vec()], batch, steps, dynamics)
}

/// Drives step `t` with `xs[t]`; used to inspect the direct-encoding structure.
pub fn forward_sequence(
    model: &Model,
    xs: &[Tensor],
    dynamics: Dynamics,
) -> Result<(Vec<Tensor>, Tape)> {
    if xs.is_empty() {
        return Err(Error::Config("time steps must be >= 1".into()));
    }
    let batch = check_input(model, &xs[0])?;
    for x in xs {
        if x.shape() != xs[0].shape() {
            return Err(Error::ShapeMismatch("per-step inputs differ in shape".into()));
        }
    }
    let inputs = xs.iter().map(|x| x.data().to_vec()).collect();
    run(model, inputs, batch, xs.len(), dynamics)
}

fn run(
    model: &Model,
    inputs: Vec<Vec<f64>>,
    batch: usize,
    steps: usize,
    dynamics: Dynamics,
) -> Result<(Vec<Tensor>, Tape)> {
    let layers = model.layers();
    let classes = model.num_classes();
    let mut membranes: Vec<Vec<f64>> = layers
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Layer::Lif(_) => vec![0.0; batch * model.layer_input_shape(i).iter().product::<usize>()],
            _ => Vec::new(),
        })
        .collect();
    let mut readout = vec![0.0; batch * classes];
    let tau_r = model.readout_tau();

    let mut records = Vec::with_capacity(steps);
    let mut logits = Vec::with_capacity(steps);
    for t in 0..steps {
        let x_t: &[f64] = if inputs.len() == 1 { &inputs[0] } else { &inputs[t] };
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        let mut v_pres: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let input: &[f64] = if i == 0 { x_t } else { &outputs[i - 1] };
            let in_shape = model.layer_input_shape(i);
            let (out, v_pre) = match layer {
                Layer::Linear { weight, bias } => (linear_forward(weight, bias, input, batch), Vec::new()),
                Layer::Conv2d {
                    kernel,
                    bias,
                    padding,
                } => (
                    conv_forward(kernel, bias, *padding, in_shape, input, batch),
                    Vec::new(),
                ),
                Layer::Lif(cfg) => lif_forward(cfg, &mut membranes[i], input, dynamics),
                Layer::MeanPoolReadout => (mean_pool_forward(in_shape, input, batch), Vec::new()),
            };
            outputs.push(out);
            v_pres.push(v_pre);
        }
        let current = outputs.last().unwrap();
        for (r, &c) in readout.iter_mut().zip(current) {
            *r += (c - *r) / tau_r;
        }
        logits.push(readout.clone());
        records.push(StepRecord {
            outputs,
            v_pre: v_pres,
        });
    }

    let logit_tensors = logits
        .iter()
        .map(|l| Tensor::from_vec(&[batch, classes], l.clone()))
        .collect::<Result<Vec<_>>>()?;
    let tape = Tape {
        model_version: model.version(),
        dynamics,
        batch,
        inputs,
        steps: records,
        logits,
    };
    Ok((logit_tensors, tape))
}

/// Reverse-mode gradients of the batch-mean `Σ_t CE` through all steps.
pub fn backward(model: &Model, tape: &Tape, labels: &[usize]) -> Result<GradientSet> {
    if tape.steps.is_empty() || tape.model_version != model.version() {
        return Err(Error::TapeConsumed);
    }
    let batch = tape.batch;
    let classes = model.num_classes();
    check_labels(labels, batch, classes)?;
    let layers = model.layers();
    let params = model.params();
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
    // Index of the first parameter owned by each layer.
    let mut param_slot = Vec::with_capacity(layers.len());
    let mut slot = 0;
    for l in layers {
        param_slot.push(slot);
        if matches!(l, Layer::Linear { .. } | Layer::Conv2d { .. }) {
            slot += 2;
        }
    }

    let inv_batch = 1.0 / batch as f64;
    let tau_r = model.readout_tau();
    let mut readout_carry = vec![0.0; batch * classes];
    let mut membrane_carry: Vec<Vec<f64>> = layers
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Layer::Lif(_) => vec![0.0; batch * model.layer_input_shape(i).iter().product::<usize>()],
            _ => Vec::new(),
        })
        .collect();
    let input_numel: usize = model.input_shape().iter().product();
    let mut input_per_step = vec![Vec::new(); tape.steps.len()];
    let mut loss = 0.0;

    for t in (0..tape.steps.len()).rev() {
        let logits = &tape.logits[t];
        // dŷ_t plus the readout membrane carried from t+1.
        let mut g = vec![0.0; batch * classes];
        for (b, &y) in labels.iter().enumerate() {
            let row = &logits[b * classes..(b + 1) * classes];
            loss += cross_entropy(row, y);
            let p = softmax(row);
            for c in 0..classes {
                let onehot = if c == y { 1.0 } else { 0.0 };
                let dr = (p[c] - onehot) * inv_batch + readout_carry[b * classes + c];
                readout_carry[b * classes + c] = dr * (1.0 - 1.0 / tau_r);
                g[b * classes + c] = dr / tau_r;
            }
        }

        let rec = &tape.steps[t];
        for (i, layer) in layers.iter().enumerate().rev() {
            let input: &[f64] = if i == 0 { tape.input(t) } else { &rec.outputs[i - 1] };
            let in_shape = model.layer_input_shape(i);
            g = match layer {
                Layer::Linear { weight, .. } => {
                    let (dw, db) = two_mut(&mut grads, param_slot[i]);
                    linear_backward(weight, input, &g, batch, dw, db)
                }
                Layer::Conv2d {
                    kernel, padding, ..
                } => {
                    let (dk, db) = two_mut(&mut grads, param_slot[i]);
                    conv_backward(kernel, *padding, in_shape, input, &g, batch, dk, db)
                }
                Layer::Lif(cfg) => lif_backward(
                    cfg,
                    &rec.v_pre[i],
                    &rec.outputs[i],
                    &g,
                    &mut membrane_carry[i],
                    tape.dynamics,
                ),
                Layer::MeanPoolReadout => mean_pool_backward(in_shape, &g, batch),
            };
        }
        debug_assert_eq!(g.len(), batch * input_numel);
        input_per_step[t] = g;
    }

    let mut in_shape = vec![batch];
    in_shape.extend_from_slice(model.input_shape());
    let mut total = vec![0.0; batch * input_numel];
    for g in &input_per_step {
        for (a, b) in total.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(GradientSet {
        params: grads,
        input: Tensor::from_vec(&in_shape, total)?,
        input_per_step: input_per_step
            .into_iter()
            .map(|g| Tensor::from_vec(&in_shape, g))
            .collect::<Result<Vec<_>>>()?,
        loss: loss * inv_batch,
    })
}

fn two_mut(v: &mut [Tensor], i: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = v.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

fn linear_forward(weight: &Tensor, bias: &Tensor, x: &[f64], batch: usize) -> Vec<f64> {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut out = Vec::with_capacity(batch * out_dim);
    for b in 0..batch {
        let xb = &x[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            out.push(bias.data()[o] + dot(&w[o * in_dim..(o + 1) * in_dim], xb));
        }
    }
    out
}

fn linear_backward(
    weight: &Tensor,
    x: &[f64],
    g: &[f64],
    batch: usize,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut dx = vec![0.0; batch * in_dim];
    let dwd = dw.data_mut();
    for b in 0..batch {
        let xb = &x[b * in_dim..(b + 1) * in_dim];
        let dxb = &mut dx[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let go = g[b * out_dim + o];
            if go == 0.0 {
                continue;
            }
            axpy(go, xb, &mut dwd[o * in_dim..(o + 1) * in_dim]);
            axpy(go, &w[o * in_dim..(o + 1) * in_dim], dxb);
        }
    }
    let dbd = db.data_mut();
    for b in 0..batch {
        for o in 0..out_dim {
            dbd[o] += g[b * out_dim + o];
        }
    }
    dx
}

fn lif_forward(
    cfg: &LifConfig,
    membrane: &mut [f64],
    input: &[f64],
    dynamics: Dynamics,
) -> (Vec<f64>, Vec<f64>) {
    let mut spikes = Vec::with_capacity(input.len());
    let mut v_pre = Vec::with_capacity(input.len());
    for (v, &x) in membrane.iter_mut().zip(input) {
        let pre = cfg.charge(*v, x);
        let s = match dynamics {
            Dynamics::Spiking => {
                if pre >= cfg.v_threshold {
                    *v = cfg.v_reset;
                    1.0
                } else {
                    *v = pre;
                    0.0
                }
            }
            Dynamics::SmoothTwin => {
                let s = cfg.smooth_spike(pre);
                *v = pre * (1.0 - s) + cfg.v_reset * s;
                s
            }
        };
        spikes.push(s);
        v_pre.push(pre);
    }
    (spikes, v_pre)
}

/// `g_s` is the gradient w.r.t. this step's spikes; `carry` holds
/// `∂𝓛/∂v_t` from step `t+1` on entry and `∂𝓛/∂v_{t−1}` on exit.
fn lif_backward(
    cfg: &LifConfig,
    v_pre: &[f64],
    spikes: &[f64],
    g_s: &[f64],
    carry: &mut [f64],
    dynamics: Dynamics,
) -> Vec<f64> {
    let inv_tau = 1.0 / cfg.tau;
    let leak = cfg.leak();
    let mut dx = Vec::with_capacity(g_s.len());
    for i in 0..g_s.len() {
        let sg = cfg.surrogate(v_pre[i]);
        let dv_new = carry[i];
        let mut dv_pre = g_s[i] * sg + dv_new * (1.0 - spikes[i]);
        if dynamics == Dynamics::SmoothTwin {
            dv_pre += dv_new * (cfg.v_reset - v_pre[i]) * sg;
        }
        dx.push(dv_pre * inv_tau);
        carry[i] = dv_pre * leak;
    }
    dx
}

fn mean_pool_forward(in_shape: &[usize], x: &[f64], batch: usize) -> Vec<f64> {
    let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
    let mut out = Vec::with_capacity(batch * c);
    for b in 0..batch {
        for ch in 0..c {
            let start = (b * c + ch) * hw;
            out.push(x[start..start + hw].iter().sum::<f64>() / hw as f64);
        }
    }
    out
}

fn mean_pool_backward(in_shape: &[usize], g: &[f64], batch: usize) -> Vec<f64> {
    let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
    let mut dx = Vec::with_capacity(batch * c * hw);
    for &gv in g.iter().take(batch * c) {
        dx.extend(std::iter::repeat(gv / hw as f64).take(hw));
    }
    dx
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: isize,
}

fn conv_geom(kernel: &Tensor, padding: usize, in_shape: &[usize]) -> ConvGeom {
    let ks = kernel.shape();
    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    ConvGeom {
        c_in,
        h,
        w,
        c_out: ks[0],
        kh: ks[2],
        kw: ks[3],
        oh: h + 2 * padding - ks[2] + 1,
        ow: w + 2 * padding - ks[3] + 1,
        pad: padding as isize,
    }
}

fn conv_forward(
    kernel: &Tensor,
    bias: &Tensor,
    padding: usize,
    in_shape: &[usize],
    x: &[f64],
    batch: usize,
) -> Vec<f64> {
    let g = conv_geom(kernel, padding, in_shape);
    let k = kernel.data();
    let out_per = g.c_out * g.oh * g.ow;
    let in_per = g.c_in * g.h * g.w;
    let mut out = vec![0.0; batch * out_per];
    for b in 0..batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        for o in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = bias.data()[o];
                    for c in 0..g.c_in {
                        for ky in 0..g.kh {
                            let iy = oy as isize + ky as isize - g.pad;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ix = ox as isize + kx as isize - g.pad;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                acc += k[((o * g.c_in + c) * g.kh + ky) * g.kw + kx]
                                    * xb[(c * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    ob[(o * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    kernel: &Tensor,
    padding: usize,
    in_shape: &[usize],
    x: &[f64],
    grad: &[f64],
    batch: usize,
    dk: &mut Tensor,
    db: &mut Tensor,
) -> Vec<f64> {
    let g = conv_geom(kernel, padding, in_shape);
    let k = kernel.data();
    let out_per = g.c_out * g.oh * g.ow;
    let in_per = g.c_in * g.h * g.w;
    let mut dx = vec![0.0; batch * in_per];
    let dkd = dk.data_mut();
    let dbd = db.data_mut();
    for b in 0..batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let gb = &grad[b * out_per..(b + 1) * out_per];
        let dxb = &mut dx[b * in_per..(b + 1) * in_per];
        for o in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let go = gb[(o * g.oh + oy) * g.ow + ox];
                    dbd[o] += go;
                    if go == 0.0 {
                        continue;
                    }
                    for c in 0..g.c_in {
                        for ky in 0..g.kh {
                            let iy = oy as isize + ky as isize - g.pad;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ix = ox as isize + kx as isize - g.pad;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let ki = ((o * g.c_in + c) * g.kh + ky) * g.kw + kx;
                                let xi = (c * g.h + iy as usize) * g.w + ix as usize;
                                dkd[ki] += go * xb[xi];
                                dxb[xi] += go * k[ki];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Forward + backward in one call.
pub fn loss_and_grad(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    steps: usize,
    dynamics: Dynamics,
) -> Result<GradientSet> {
    let (_, tape) = forward(model, x, steps, dynamics)?;
    backward(model, &tape, labels)
}

/// Batch-mean summed loss without recording gradients.
pub fn batch_loss(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    steps: usize,
    dynamics: Dynamics,
) -> Result<f64> {
    let (logits, _) = forward(model, x, steps, dynamics)?;
    super::loss::loss(&logits, labels)
}

/// Class scores `Σ_t ŷ_t`, `[batch, classes]`.
pub fn time_summed_logits(model: &Model, x: &Tensor, steps: usize) -> Result<Tensor> {
    let (logits, _) = forward(model, x, steps, Dynamics::Spiking)?;
    let mut total = Tensor::zeros(logits[0].shape());
    for l in &logits {
        total.add_assign(l);
    }
    Ok(total)
}

/// Argmax of the time-summed logits (first index on ties).
pub fn predict(model: &Model, x: &Tensor, steps: usize) -> Result<Vec<usize>> {
    let scores = time_summed_logits(model, x, steps)?;
    let classes = scores.shape()[1];
    Ok(scores
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}
