//! Forward evaluation and per-example reverse-mode gradients.
//!
//! Every example is pushed through the network on its own, so per-example
//! gradients fall out of the ordinary backward pass without any batching
//! tricks. Examples are processed in ascending index order.

use crate::error::{Error, Result};
use crate::model::{Layer, ModelSpec, ParamKind, ParamSlot, ParamVector};
use crate::tensor::Tensor;

/// Prior over the parameters; contributes `-log p(theta)` to the energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PriorSpec {
    #[default]
    Flat,
    /// Isotropic Gaussian with the given precision (inverse variance).
    Gaussian { precision: f64 },
}

impl PriorSpec {
    pub fn precision(&self) -> f64 {
        match *self {
            PriorSpec::Flat => 0.0,
            PriorSpec::Gaussian { precision } => precision,
        }
    }

    fn validate(&self) -> Result<()> {
        let l = self.precision();
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior precision {l}")));
        }
        Ok(())
    }
}

/// One gradient row per example, all sharing the model's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleGrads {
    layout: Vec<ParamSlot>,
    width: usize,
    data: Vec<f64>,
}

impl PerExampleGrads {
    pub fn new(layout: Vec<ParamSlot>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = layout.last().map_or(0, |s| s.offset + s.len());
        let mut data = Vec::with_capacity(width * rows.len());
        for row in rows {
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "gradient row of length {} for {width} parameters",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self { layout, width, data })
    }

    pub fn batch_size(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.width
    }

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn get(&self, i: usize) -> ParamVector {
        ParamVector::new(self.layout.clone(), self.row(i).to_vec()).expect("rows share the layout")
    }

    /// Average over examples, accumulated in index order.
    pub fn mean(&self) -> ParamVector {
        let mut acc = vec![0.0; self.width];
        for row in self.rows() {
            for (a, g) in acc.iter_mut().zip(row) {
                *a += g;
            }
        }
        let b = self.batch_size().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= b);
        ParamVector::new(self.layout.clone(), acc).expect("rows share the layout")
    }
}

/// Per-layer parameter offsets resolved once per call.
struct LayerParams {
    weight: Option<std::ops::Range<usize>>,
    bias: Option<std::ops::Range<usize>>,
}

fn resolve(model: &ModelSpec, params: &ParamVector) -> Result<Vec<LayerParams>> {
    if !params.same_layout(model.layout()) {
        return Err(Error::Shape("parameter layout does not match the model".into()));
    }
    let mut out: Vec<LayerParams> = (0..model.layers().len())
        .map(|_| LayerParams {
            weight: None,
            bias: None,
        })
        .collect();
    for slot in model.layout() {
        match slot.kind {
            ParamKind::Weight => out[slot.layer].weight = Some(slot.range()),
            ParamKind::Bias => out[slot.layer].bias = Some(slot.range()),
        }
    }
    Ok(out)
}

fn check_batch(model: &ModelSpec, batch: &Tensor) -> Result<usize> {
    let shape = batch.shape();
    let ok = shape.len() >= 2 && (shape[1..] == *model.input_shape() || shape[1..] == [model.input_len()]);
    if !ok {
        return Err(Error::Shape(format!(
            "batch shape {shape:?} does not match model input {:?}",
            model.input_shape()
        )));
    }
    Ok(shape[0])
}

/// Reusable activation storage for one example.
struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Vec<f64>>,
    /// Flat input index chosen by each max-pool output.
    argmax: Vec<Vec<usize>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Trace {
    fn new(model: &ModelSpec) -> Self {
        let acts = model.shapes().iter().map(|s| vec![0.0; s.iter().product()]).collect();
        let argmax = model
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                Layer::MaxPool2d => vec![0; model.shapes()[i + 1].iter().product()],
                _ => Vec::new(),
            })
            .collect();
        let widest = model
            .shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .max()
            .unwrap_or(0);
        Self {
            acts,
            argmax,
            grad_a: vec![0.0; widest],
            grad_b: vec![0.0; widest],
        }
    }

    fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

fn run_forward(model: &ModelSpec, theta: &[f64], lp: &[LayerParams], x: &[f64], trace: &mut Trace) -> Result<()> {
    trace.acts[0].copy_from_slice(x);
    for (i, layer) in model.layers().iter().enumerate() {
        let (before, after) = trace.acts.split_at_mut(i + 1);
        let input = &before[i];
        let output = &mut after[0];
        let in_shape = &model.shapes()[i];
        let out_shape = &model.shapes()[i + 1];
        match *layer {
            Layer::Dense { inputs, .. } => {
                let w = &theta[lp[i].weight.clone().unwrap()];
                for (o, y) in output.iter_mut().enumerate() {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    *y = dot(row, input);
                }
                if let Some(b) = lp[i].bias.clone() {
                    for (y, bv) in output.iter_mut().zip(&theta[b]) {
                        *y += bv;
                    }
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let w = &theta[lp[i].weight.clone().unwrap()];
                let b = &theta[lp[i].bias.clone().unwrap()];
                let (h, wd) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                for oc in 0..out_channels {
                    let out_plane = &mut output[oc * oh * ow..(oc + 1) * oh * ow];
                    out_plane.iter_mut().for_each(|v| *v = b[oc]);
                    for ic in 0..in_channels {
                        let plane = &input[ic * h * wd..(ic + 1) * h * wd];
                        let kbase = (oc * in_channels + ic) * kernel * kernel;
                        for u in 0..kernel {
                            for v in 0..kernel {
                                let kw = w[kbase + u * kernel + v];
                                for r in 0..oh {
                                    let src = &plane[(r * stride + u) * wd + v..];
                                    let dst = &mut out_plane[r * ow..(r + 1) * ow];
                                    if stride == 1 {
                                        for (d, s) in dst.iter_mut().zip(src) {
                                            *d += kw * s;
                                        }
                                    } else {
                                        for (c, d) in dst.iter_mut().enumerate() {
                                            *d += kw * src[c * stride];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                for (y, x) in output.iter_mut().zip(input.iter()) {
                    *y = x.max(0.0);
                }
            }
            Layer::MaxPool2d => {
                let (c, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let arg = &mut trace.argmax[i];
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            let mut best = ch * h * wd + 2 * r * wd + 2 * col;
                            for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = ch * h * wd + (2 * r + dr) * wd + 2 * col + dc;
                                if input[idx] > input[best] {
                                    best = idx;
                                }
                            }
                            let o = ch * oh * ow + r * ow + col;
                            output[o] = input[best];
                            arg[o] = best;
                        }
                    }
                }
            }
            Layer::Flatten => output.copy_from_slice(input),
        }
        if let Some(bad) = output.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {i} ({layer}) produced {bad}")));
        }
    }
    Ok(())
}

/// Accumulates `d loss / d theta` into `grad` given `d loss / d logits`.
fn run_backward(
    model: &ModelSpec,
    theta: &[f64],
    lp: &[LayerParams],
    trace: &mut Trace,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let n_layers = model.layers().len();
    let Trace {
        acts,
        argmax,
        grad_a,
        grad_b,
    } = trace;
    let mut upstream: &mut Vec<f64> = grad_a;
    let mut downstream: &mut Vec<f64> = grad_b;
    upstream[..dlogits.len()].copy_from_slice(dlogits);

    for i in (0..n_layers).rev() {
        let in_shape = &model.shapes()[i];
        let out_shape = &model.shapes()[i + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let input = &acts[i];
        let dy = &upstream[..out_len];
        let need_dx = i > 0;
        match model.layers()[i] {
            Layer::Dense { inputs, .. } => {
                let wr = lp[i].weight.clone().unwrap();
                if let Some(b) = lp[i].bias.clone() {
                    for (g, d) in grad[b].iter_mut().zip(dy) {
                        *g += d;
                    }
                }
                let w = &theta[wr.clone()];
                let gw = &mut grad[wr];
                let dx = &mut downstream[..in_len];
                if need_dx {
                    dx.iter_mut().for_each(|v| *v = 0.0);
                }
                for (o, &d) in dy.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for (g, x) in grow.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    if need_dx {
                        let wrow = &w[o * inputs..(o + 1) * inputs];
                        for (dxv, wv) in dx.iter_mut().zip(wrow) {
                            *dxv += d * wv;
                        }
                    }
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let wr = lp[i].weight.clone().unwrap();
                let br = lp[i].bias.clone().unwrap();
                let (h, wd) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                for oc in 0..out_channels {
                    let plane = &dy[oc * oh * ow..(oc + 1) * oh * ow];
                    grad[br.start + oc] += plane.iter().sum::<f64>();
                }
                let dx = &mut downstream[..in_len];
                if need_dx {
                    dx.iter_mut().for_each(|v| *v = 0.0);
                }
                let w = &theta[wr.clone()];
                for oc in 0..out_channels {
                    let dplane = &dy[oc * oh * ow..(oc + 1) * oh * ow];
                    for ic in 0..in_channels {
                        let xplane = &input[ic * h * wd..(ic + 1) * h * wd];
                        let kbase = (oc * in_channels + ic) * kernel * kernel;
                        for u in 0..kernel {
                            for v in 0..kernel {
                                let mut gsum = 0.0;
                                let kw = w[kbase + u * kernel + v];
                                for r in 0..oh {
                                    let drow = &dplane[r * ow..(r + 1) * ow];
                                    let off = (r * stride + u) * wd + v;
                                    if stride == 1 {
                                        let xrow = &xplane[off..off + ow];
                                        gsum += dot(drow, xrow);
                                        if need_dx {
                                            let dxrow = &mut dx[ic * h * wd + off..ic * h * wd + off + ow];
                                            for (dxv, d) in dxrow.iter_mut().zip(drow) {
                                                *dxv += kw * d;
                                            }
                                        }
                                    } else {
                                        for (c, d) in drow.iter().enumerate() {
                                            gsum += d * xplane[off + c * stride];
                                            if need_dx {
                                                dx[ic * h * wd + off + c * stride] += kw * d;
                                            }
                                        }
                                    }
                                }
                                grad[wr.start + kbase + u * kernel + v] += gsum;
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                if need_dx {
                    for ((dxv, d), x) in downstream[..in_len].iter_mut().zip(dy).zip(input) {
                        *dxv = if *x > 0.0 { *d } else { 0.0 };
                    }
                }
            }
            Layer::MaxPool2d => {
                if need_dx {
                    let dx = &mut downstream[..in_len];
                    dx.iter_mut().for_each(|v| *v = 0.0);
                    for (o, d) in dy.iter().enumerate() {
                        dx[argmax[i][o]] += d;
                    }
                }
            }
            Layer::Flatten => {
                if need_dx {
                    downstream[..in_len].copy_from_slice(dy);
                }
            }
        }
        std::mem::swap(&mut upstream, &mut downstream);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators so the loop vectorizes; the summation
    // order is fixed, which keeps results bitwise reproducible.
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for k in 0..chunks {
        let j = 4 * k;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

/// Numerically stable softmax cross-entropy. Writes `softmax - onehot` into
/// `dlogits` and returns the loss.
fn cross_entropy(logits: &[f64], label: usize, dlogits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &l) in dlogits.iter_mut().zip(logits) {
        *d = (l - max).exp();
        z += *d;
    }
    for d in dlogits.iter_mut() {
        *d /= z;
    }
    dlogits[label] -= 1.0;
    max + z.ln() - logits[label]
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} examples", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Logits for every example in the batch, shape `[B, K]`.
pub fn forward(model: &ModelSpec, params: &ParamVector, batch: &Tensor) -> Result<Tensor> {
    let b = check_batch(model, batch)?;
    let lp = resolve(model, params)?;
    let k = model.num_classes();
    let mut trace = Trace::new(model);
    let mut out = Vec::with_capacity(b * k);
    for i in 0..b {
        run_forward(model, params.values(), &lp, batch.row(i), &mut trace)?;
        out.extend_from_slice(trace.logits());
    }
    Tensor::new(vec![b, k], out)
}

/// Softmax probabilities for every example, shape `[B, K]`.
pub fn predict_proba(model: &ModelSpec, params: &ParamVector, batch: &Tensor) -> Result<Tensor> {
    let mut logits = forward(model, params, batch)?;
    let k = model.num_classes();
    for row in logits.data_mut().chunks_exact_mut(k) {
        softmax_in_place(row);
    }
    Ok(logits)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

/// Streams per-example gradients of
/// `cross_entropy(example i) + (lambda / B) * |theta|^2 / 2` to `visit`,
/// in ascending example order, and returns the mean loss.
///
/// The gradient buffer is reused between calls to `visit`; copy it out if it
/// has to outlive the callback.
pub fn for_each_example_gradient<F>(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    labels: &[usize],
    prior: PriorSpec,
    mut visit: F,
) -> Result<f64>
where
    F: FnMut(usize, &mut [f64]) -> Result<()>,
{
    let b = check_batch(model, batch)?;
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    check_labels(labels, b, model.num_classes())?;
    prior.validate()?;
    let lp = resolve(model, params)?;
    let theta = params.values();
    let prior_scale = prior.precision() / b as f64;
    let prior_loss = if prior_scale > 0.0 {
        0.5 * prior_scale * theta.iter().map(|t| t * t).sum::<f64>()
    } else {
        0.0
    };

    let mut trace = Trace::new(model);
    let mut dlogits = vec![0.0; model.num_classes()];
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        run_forward(model, theta, &lp, batch.row(i), &mut trace)?;
        let loss = cross_entropy(trace.logits(), label, &mut dlogits);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss of example {i} is {loss}")));
        }
        total += loss + prior_loss;
        grad.iter_mut().for_each(|g| *g = 0.0);
        run_backward(model, theta, &lp, &mut trace, &dlogits, &mut grad);
        if prior_scale > 0.0 {
            for (g, t) in grad.iter_mut().zip(theta) {
                *g += prior_scale * t;
            }
        }
        visit(i, &mut grad)?;
    }
    let mean = total / b as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("mean loss {mean}")));
    }
    Ok(mean)
}

/// Mean loss over the batch and one gradient row per example.
pub fn loss_and_grads(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    labels: &[usize],
    prior: PriorSpec,
) -> Result<(f64, PerExampleGrads)> {
    let mut rows = Vec::with_capacity(batch.rows());
    let loss = for_each_example_gradient(model, params, batch, labels, prior, |_, g| {
        rows.push(g.to_vec());
        Ok(())
    })?;
    Ok((loss, PerExampleGrads::new(params.layout().to_vec(), rows)?))
}

/// Mean of the per-example losses, including the prior share.
pub fn mean_loss(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    labels: &[usize],
    prior: PriorSpec,
) -> Result<f64> {
    let b = check_batch(model, batch)?;
    if b == 0 {
        return Err(Error::Empty("batch"));
    }
    check_labels(labels, b, model.num_classes())?;
    prior.validate()?;
    let lp = resolve(model, params)?;
    let theta = params.values();
    let mut trace = Trace::new(model);
    let mut dlogits = vec![0.0; model.num_classes()];
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        run_forward(model, theta, &lp, batch.row(i), &mut trace)?;
        total += cross_entropy(trace.logits(), label, &mut dlogits);
    }
    let prior_loss = 0.5 * prior.precision() / b as f64 * theta.iter().map(|t| t * t).sum::<f64>();
    Ok(total / b as f64 + prior_loss)
}

/// Central-difference estimate of the mean-loss gradient at the listed
/// coordinates. Test oracle only.
pub fn finite_diff_coordinates(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    labels: &[usize],
    prior: PriorSpec,
    coords: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h}")));
    }
    let mut probe = params.clone();
    coords
        .iter()
        .map(|&c| {
            if c >= probe.len() {
                return Err(Error::InvalidArgument(format!("coordinate {c} out of range")));
            }
            let orig = probe.values()[c];
            probe.values_mut()[c] = orig + h;
            let up = mean_loss(model, &probe, batch, labels, prior)?;
            probe.values_mut()[c] = orig - h;
            let down = mean_loss(model, &probe, batch, labels, prior)?;
            probe.values_mut()[c] = orig;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Central-difference estimate of the full mean-loss gradient. Test oracle
/// only; costs two forward passes per parameter.
pub fn finite_diff_gradient(
    model: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    labels: &[usize],
    prior: PriorSpec,
    h: f64,
) -> Result<ParamVector> {
    let coords: Vec<usize> = (0..params.len()).collect();
    let g = finite_diff_coordinates(model, params, batch, labels, prior, &coords, h)?;
    params.with_values(g)
}

/// Smallest absolute pre-activation feeding any relu or max-pool decision,
/// over the batch. Finite differences are only trustworthy when this is
/// comfortably larger than the step size.
pub fn kink_margin(model: &ModelSpec, params: &ParamVector, batch: &Tensor) -> Result<f64> {
    let b = check_batch(model, batch)?;
    let lp = resolve(model, params)?;
    let mut trace = Trace::new(model);
    let mut margin = f64::INFINITY;
    for i in 0..b {
        run_forward(model, params.values(), &lp, batch.row(i), &mut trace)?;
        for (l, layer) in model.layers().iter().enumerate() {
            match layer {
                Layer::Relu => {
                    for v in &trace.acts[l] {
                        margin = margin.min(v.abs());
                    }
                }
                Layer::MaxPool2d => {
                    let input = &trace.acts[l];
                    let s = &model.shapes()[l];
                    let (c, h, w) = (s[0], s[1], s[2]);
                    for ch in 0..c {
                        for r in 0..h / 2 {
                            for col in 0..w / 2 {
                                let mut vals: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                                    .iter()
                                    .map(|(dr, dc)| input[ch * h * w + (2 * r + dr) * w + 2 * col + dc])
                                    .collect();
                                vals.sort_by(|a, b| b.total_cmp(a));
                                // a window of relu zeros routes no gradient
                                // whichever element wins, so it is not a kink
                                let after_relu = l > 0 && matches!(model.layers()[l - 1], Layer::Relu);
                                if !(after_relu && vals[0] <= 0.0) {
                                    margin = margin.min(vals[0] - vals[1]);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }
    Ok(margin)
}
