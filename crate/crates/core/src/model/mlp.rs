use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

use super::{BlockShape, LabeledBatch, ModelSpec, ParamVector};

/// Per-call scratch buffers, reused across the samples of a batch.
struct Scratch {
    /// activations[0] is the input; activations[l+1] is the output of layer l
    /// (tanh for hidden layers, logits for the last).
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        let widest = spec.layer_sizes().iter().copied().max().unwrap_or(0);
        Self {
            activations: spec.layer_sizes().iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }
}

/// Offsets of each layer's weight and bias inside the flat vector.
fn layer_offsets(spec: &ModelSpec) -> Vec<(usize, usize)> {
    let sizes = spec.layer_sizes();
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut at = 0;
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        offsets.push((at, at + fan_in * fan_out));
        at += fan_in * fan_out + fan_out;
    }
    offsets
}

pub(super) fn manifest(spec: &ModelSpec) -> Vec<BlockShape> {
    let sizes = spec.layer_sizes();
    let mut m = Vec::with_capacity(2 * (sizes.len() - 1));
    for l in 0..sizes.len() - 1 {
        m.push(BlockShape::new(format!("layer{l}.weight"), sizes[l + 1], sizes[l]));
        m.push(BlockShape::new(format!("layer{l}.bias"), sizes[l + 1], 1));
    }
    m
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, rng: &mut Rng) -> ParamVector {
    let sizes = spec.layer_sizes();
    let mut blocks = Vec::with_capacity(2 * (sizes.len() - 1));
    for (l, shape) in manifest(spec).into_iter().enumerate() {
        let values = if l % 2 == 0 {
            let (fan_in, fan_out) = (sizes[l / 2], sizes[l / 2 + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..shape.len()).map(|_| rng.range(-limit, limit)).collect()
        } else {
            vec![0.0; shape.len()]
        };
        blocks.push((shape, values));
    }
    ParamVector::from_blocks(blocks).expect("manifest built from spec")
}

fn check_inputs(w: &ParamVector, batch: &LabeledBatch, spec: &ModelSpec) -> Result<()> {
    if w.manifest() != spec.manifest().as_slice() {
        return Err(Error::ManifestMismatch(
            "parameters do not match model spec".into(),
        ));
    }
    if batch.features.cols() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "batch features",
            expected: spec.input_dim(),
            found: batch.features.cols(),
        });
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= spec.num_classes()) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes()
        )));
    }
    Ok(())
}

/// Forward pass for one sample; fills `scratch.activations` and returns the
/// cross-entropy of `label`.
fn forward(params: &[f64], spec: &ModelSpec, offsets: &[(usize, usize)], x: &[f64], label: usize, scratch: &mut Scratch) -> f64 {
    let sizes = spec.layer_sizes();
    let last = offsets.len() - 1;
    scratch.activations[0].copy_from_slice(x);
    for (l, &(w_at, b_at)) in offsets.iter().enumerate() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let (head, tail) = scratch.activations.split_at_mut(l + 1);
        let input = &head[l];
        let out = &mut tail[0];
        for o in 0..fan_out {
            let row = &params[w_at + o * fan_in..w_at + (o + 1) * fan_in];
            let z = row
                .iter()
                .zip(input.iter())
                .fold(params[b_at + o], |acc, (a, b)| acc + a * b);
            out[o] = if l < last { z.tanh() } else { z };
        }
    }
    let logits = &scratch.activations[offsets.len()];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp = logits.iter().fold(0.0, |acc, z| acc + (z - max).exp());
    max + sum_exp.ln() - logits[label]
}

/// Backward pass for the sample last run through `forward`. Adds `scale ×`
/// the parameter gradient into `grad` and, when requested, writes `scale ×`
/// the input gradient into `input_grad`.
fn backward(
    params: &[f64],
    spec: &ModelSpec,
    offsets: &[(usize, usize)],
    label: usize,
    scale: f64,
    scratch: &mut Scratch,
    grad: Option<&mut [f64]>,
    input_grad: Option<&mut [f64]>,
) {
    let sizes = spec.layer_sizes();
    let n_layers = offsets.len();
    let Scratch {
        activations,
        delta,
        delta_prev,
    } = scratch;

    // d loss / d logits = softmax - onehot
    let logits = &activations[n_layers];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp = logits.iter().fold(0.0, |acc, z| acc + (z - max).exp());
    delta.clear();
    delta.extend(logits.iter().map(|z| (z - max).exp() / sum_exp));
    delta[label] -= 1.0;

    let mut grad = grad;
    for l in (0..n_layers).rev() {
        let (w_at, b_at) = offsets[l];
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let input = &activations[l];
        if let Some(g) = grad.as_deref_mut() {
            for o in 0..fan_out {
                let d = scale * delta[o];
                let row = &mut g[w_at + o * fan_in..w_at + (o + 1) * fan_in];
                for (gi, xi) in row.iter_mut().zip(input.iter()) {
                    *gi += d * xi;
                }
                g[b_at + o] += d;
            }
        }
        if l == 0 && input_grad.is_none() {
            break;
        }
        delta_prev.clear();
        delta_prev.resize(fan_in, 0.0);
        for o in 0..fan_out {
            let d = delta[o];
            let row = &params[w_at + o * fan_in..w_at + (o + 1) * fan_in];
            for (dp, wi) in delta_prev.iter_mut().zip(row.iter()) {
                *dp += d * wi;
            }
        }
        if l > 0 {
            // through tanh of the previous hidden layer
            for (dp, h) in delta_prev.iter_mut().zip(input.iter()) {
                *dp *= 1.0 - h * h;
            }
        }
        std::mem::swap(delta, delta_prev);
    }
    if let Some(ig) = input_grad {
        for (o, d) in ig.iter_mut().zip(delta.iter()) {
            *o = scale * d;
        }
    }
}

fn finite_loss(total: f64) -> Result<f64> {
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numeric("forward loss".into()))
    }
}

/// Mean cross-entropy of the batch.
pub fn loss(w: &ParamVector, batch: &LabeledBatch, spec: &ModelSpec) -> Result<f64> {
    check_inputs(w, batch, spec)?;
    let offsets = layer_offsets(spec);
    let mut scratch = Scratch::new(spec);
    let mut total = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        total += forward(w.as_slice(), spec, &offsets, batch.features.row(i), y, &mut scratch);
    }
    finite_loss(total / batch.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to the parameters.
pub fn loss_and_grad(w: &ParamVector, batch: &LabeledBatch, spec: &ModelSpec) -> Result<(f64, ParamVector)> {
    check_inputs(w, batch, spec)?;
    let offsets = layer_offsets(spec);
    let mut scratch = Scratch::new(spec);
    let mut grad = ParamVector::zeros_like(w);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        total += forward(w.as_slice(), spec, &offsets, batch.features.row(i), y, &mut scratch);
        backward(w.as_slice(), spec, &offsets, y, scale, &mut scratch, Some(grad.as_mut_slice()), None);
    }
    let loss = finite_loss(total * scale)?;
    if !grad.is_finite() {
        return Err(Error::Numeric("gradient".into()));
    }
    Ok((loss, grad))
}

/// Mean cross-entropy and the gradient of that mean with respect to every
/// input row (`B × d`). Parameters are read only.
pub fn loss_and_input_grad(w: &ParamVector, batch: &LabeledBatch, spec: &ModelSpec) -> Result<(f64, Matrix)> {
    check_inputs(w, batch, spec)?;
    let offsets = layer_offsets(spec);
    let mut scratch = Scratch::new(spec);
    let mut input_grad = Matrix::zeros(batch.len(), spec.input_dim());
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        total += forward(w.as_slice(), spec, &offsets, batch.features.row(i), y, &mut scratch);
        backward(w.as_slice(), spec, &offsets, y, scale, &mut scratch, None, Some(input_grad.row_mut(i)));
    }
    let loss = finite_loss(total * scale)?;
    if !input_grad.is_finite() {
        return Err(Error::Numeric("input gradient".into()));
    }
    Ok((loss, input_grad))
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy(w: &ParamVector, batch: &LabeledBatch, spec: &ModelSpec) -> Result<f64> {
    check_inputs(w, batch, spec)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let offsets = layer_offsets(spec);
    let mut scratch = Scratch::new(spec);
    let mut hits = 0usize;
    for (i, &y) in batch.labels.iter().enumerate() {
        forward(w.as_slice(), spec, &offsets, batch.features.row(i), y, &mut scratch);
        let logits = &scratch.activations[offsets.len()];
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (k, &z)| if z > b.1 { (k, z) } else { b })
            .0;
        hits += usize::from(best == y);
    }
    Ok(hits as f64 / batch.len() as f64)
}
