use crate::arch::{run, ArchSpec, ConvPath, LayerSpec, Record, StepKind, WeightSet};
use crate::error::{KwsError, Result};
use crate::tensor::{NoCount, Scalar, Tensor3};
use crate::train::LabeledExample;

/// Probabilities below this are clamped before taking the log.
pub const LOSS_FLOOR: f64 = 1e-12;

/// `-ln(max(posterior[label], 1e-12))`. A NaN posterior gives a NaN loss.
pub fn cross_entropy<T: Scalar>(posterior: &[T], label: usize) -> Result<f64> {
    let p = posterior.get(label).ok_or(KwsError::LabelOutOfRange {
        label,
        labels: posterior.len(),
    })?;
    let p = p.as_f64();
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(-p.max(LOSS_FLOOR).ln())
}

/// Mean loss and accuracy of the batch the gradients were taken over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean_loss: f64,
    pub correct: usize,
    pub count: usize,
}

enum Delta<T> {
    Map(Tensor3<T>),
    Vector(Vec<T>),
}

fn argmax<T: Scalar>(p: &[T]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Gradient of the mean cross-entropy over `batch`, in the same named-tensor
/// layout as the weights.
pub fn backward<T: Scalar>(
    arch: &ArchSpec,
    weights: &WeightSet<T>,
    batch: &[LabeledExample],
) -> Result<(WeightSet<T>, BatchStats)> {
    if batch.is_empty() {
        return Err(KwsError::EmptyInput("training batch"));
    }
    let mut grads = WeightSet::zeros(arch)?;
    let mut scratch = WeightSet::zeros(arch)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, ex) in batch.iter().enumerate() {
        let target = if i == 0 { &mut grads } else { &mut scratch };
        let (l, hit) = accumulate(arch, weights, ex, target)?;
        loss += l;
        correct += hit as usize;
        if i > 0 {
            for (g, s) in grads.tensors_mut().iter_mut().zip(scratch.tensors_mut()) {
                for (gv, sv) in g.data.iter_mut().zip(s.data.iter_mut()) {
                    *gv += *sv;
                    *sv = T::zero();
                }
            }
        }
    }
    let scale = T::from_f64(1.0 / batch.len() as f64);
    if batch.len() > 1 {
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|g| *g *= scale);
        }
    }
    Ok((
        grads,
        BatchStats {
            mean_loss: loss / batch.len() as f64,
            correct,
            count: batch.len(),
        },
    ))
}

/// Adds the gradient of one example's loss into `grads`; returns the loss
/// and whether the prediction was correct.
pub(crate) fn accumulate<T: Scalar>(
    arch: &ArchSpec,
    weights: &WeightSet<T>,
    ex: &LabeledExample,
    grads: &mut WeightSet<T>,
) -> Result<(f64, bool)> {
    let labels = arch.labels();
    if ex.label >= labels {
        return Err(KwsError::LabelOutOfRange { label: ex.label, labels });
    }
    let trace = arch.validate()?;
    let mut records = Vec::with_capacity(trace.steps.len());
    let probs = run(arch, weights, ex.window.to_tensor(), ConvPath::Optimized, &mut NoCount, Some(&mut records))?;
    let loss = cross_entropy(&probs, ex.label)?;
    let hit = argmax(&probs) == ex.label;

    let mut delta = Delta::Vector(probs);
    if let Delta::Vector(d) = &mut delta {
        d[ex.label] -= T::one();
    }

    for (pos, (step, record)) in trace.steps.iter().zip(records).enumerate().rev() {
        let needs_input_grad = pos > 0;
        delta = match (record, delta) {
            (Record::Softmax { input }, Delta::Vector(d)) => {
                Delta::Vector(dense_backward(weights, grads, &step.name, &input, &d, true, needs_input_grad)?)
            }
            (Record::Dense { input, output }, Delta::Vector(mut d)) => {
                for (g, &y) in d.iter_mut().zip(&output) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
                Delta::Vector(dense_backward(weights, grads, &step.name, &input, &d, true, needs_input_grad)?)
            }
            (Record::LowRank { input }, Delta::Vector(d)) => {
                Delta::Vector(dense_backward(weights, grads, &step.name, &input, &d, false, needs_input_grad)?)
            }
            (Record::Flatten { dims }, Delta::Vector(d)) => Delta::Map(Tensor3::new(dims, d)?),
            (Record::Pool { in_dims, argmax }, Delta::Map(d)) => {
                let mut routed = Tensor3::zeros(in_dims);
                let buf = routed.data_mut();
                for (&src, &g) in argmax.iter().zip(d.data()) {
                    buf[src] += g;
                }
                Delta::Map(routed)
            }
            (Record::Conv { input, activated }, Delta::Map(mut d)) => {
                for (g, &y) in d.data_mut().iter_mut().zip(activated.data()) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
                let LayerSpec::Conv { m, r, n, strides, .. } = arch.layers[step.layer] else {
                    unreachable!("conv record for a conv layer")
                };
                debug_assert_eq!(step.kind, StepKind::Conv);
                Delta::Map(conv_backward(
                    weights,
                    grads,
                    &step.name,
                    &input,
                    &d,
                    (m, r, n),
                    (strides.time, strides.freq),
                    needs_input_grad,
                )?)
            }
            _ => unreachable!("records follow the shape trace"),
        };
    }
    Ok((loss, hit))
}

/// Weight (and bias) gradients of `y = W x (+ b)`; returns `W^T dy`.
fn dense_backward<T: Scalar>(
    weights: &WeightSet<T>,
    grads: &mut WeightSet<T>,
    name: &str,
    input: &[T],
    dy: &[T],
    has_bias: bool,
    needs_input_grad: bool,
) -> Result<Vec<T>> {
    let w = weights.data(&format!("{name}.weight"))?;
    let cols = input.len();
    {
        let gw = &mut grads
            .get_mut(&format!("{name}.weight"))
            .expect("gradient layout mirrors weights")
            .data;
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (gw, &x) in gw[o * cols..(o + 1) * cols].iter_mut().zip(input) {
                *gw += g * x;
            }
        }
    }
    if has_bias {
        let gb = &mut grads.get_mut(&format!("{name}.bias")).expect("gradient layout mirrors weights").data;
        for (b, &g) in gb.iter_mut().zip(dy) {
            *b += g;
        }
    }
    let mut dx = vec![T::zero(); if needs_input_grad { cols } else { 0 }];
    if needs_input_grad {
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (d, &wv) in dx.iter_mut().zip(&w[o * cols..(o + 1) * cols]) {
                *d += g * wv;
            }
        }
    }
    Ok(dx)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    weights: &WeightSet<T>,
    grads: &mut WeightSet<T>,
    name: &str,
    input: &Tensor3<T>,
    dy: &Tensor3<T>,
    (m, r, n): (usize, usize, usize),
    (stride_t, stride_f): (usize, usize),
    needs_input_grad: bool,
) -> Result<Tensor3<T>> {
    let w = weights.data(&format!("{name}.weight"))?;
    let in_dims = input.dims();
    let c_in = in_dims.channels;
    let out = dy.dims();
    let tap_len = r * c_in;
    let in_row = in_dims.freq * c_in;

    let mut dx = if needs_input_grad {
        Tensor3::zeros(in_dims)
    } else {
        Tensor3::zeros(crate::tensor::Dims3::new(0, 0, 0))
    };
    let gb = {
        let mut gb = vec![T::zero(); n];
        let gw = &mut grads
            .get_mut(&format!("{name}.weight"))
            .expect("gradient layout mirrors weights")
            .data;
        for t in 0..out.time {
            for f in 0..out.freq {
                let start = (t * out.freq + f) * n;
                let g = &dy.data()[start..start + n];
                if g.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                for (b, &v) in gb.iter_mut().zip(g) {
                    *b += v;
                }
                for i in 0..m {
                    let base = (t * stride_t + i) * in_row + f * stride_f * c_in;
                    let patch = &input.data()[base..base + tap_len];
                    let taps = i * tap_len;
                    for (tap, &x) in patch.iter().enumerate() {
                        let row = (taps + tap) * n;
                        if x != T::zero() {
                            for (gw, &gv) in gw[row..row + n].iter_mut().zip(g) {
                                *gw += x * gv;
                            }
                        }
                        if needs_input_grad {
                            let mut acc = T::zero();
                            for (&wv, &gv) in w[row..row + n].iter().zip(g) {
                                acc += wv * gv;
                            }
                            dx.data_mut()[base + tap] += acc;
                        }
                    }
                }
            }
        }
        gb
    };
    let bias = &mut grads.get_mut(&format!("{name}.bias")).expect("gradient layout mirrors weights").data;
    for (b, g) in bias.iter_mut().zip(gb) {
        *b += g;
    }
    Ok(dx)
}
