use crate::arch::{ArchSpec, LayerSpec, Shape, StepKind, WeightSet};
use crate::error::{Axis, KwsError, Result};
use crate::frontend::FeatureWindow;
use crate::tensor::{
    conv2d_optimized, conv2d_valid_counted, dense_counted, maxpool_with_argmax, softmax, Activation, Dims3,
    FilterBank, MacCounter, Matrix, NoCount, Scalar, Tensor3,
};

/// Which convolution kernel the forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvPath {
    Naive,
    #[default]
    Optimized,
}

/// Per-step activations kept for backprop. Aligned with `ShapeTrace::steps`.
#[derive(Debug, Clone)]
pub(crate) enum Record<T> {
    Conv { input: Tensor3<T>, activated: Tensor3<T> },
    Pool { in_dims: Dims3, argmax: Vec<usize> },
    Flatten { dims: Dims3 },
    LowRank { input: Vec<T> },
    Dense { input: Vec<T>, output: Vec<T> },
    Softmax { input: Vec<T> },
}

enum Value<T> {
    Map(Tensor3<T>),
    Vector(Vec<T>),
}

impl<T> Value<T> {
    fn into_map(self) -> Tensor3<T> {
        match self {
            Value::Map(t) => t,
            Value::Vector(_) => unreachable!("shape trace validated"),
        }
    }

    fn into_vector(self) -> Vec<T> {
        match self {
            Value::Vector(v) => v,
            Value::Map(_) => unreachable!("shape trace validated"),
        }
    }
}

/// Posterior for one window (optimized conv path, `f32`).
pub fn forward(arch: &ArchSpec, w: &WeightSet<f32>, x: &FeatureWindow) -> Result<Vec<f32>> {
    forward_with(arch, w, &x.to_tensor(), ConvPath::Optimized)
}

pub fn forward_with<T: Scalar>(arch: &ArchSpec, w: &WeightSet<T>, x: &Tensor3<T>, path: ConvPath) -> Result<Vec<T>> {
    run(arch, w, x.clone(), path, &mut NoCount, None)
}

/// Executes the network. Multiplies are reported to `macs` only on the
/// naive path; `records`, when given, receives one entry per trace step.
pub(crate) fn run<T: Scalar, C: MacCounter>(
    arch: &ArchSpec,
    w: &WeightSet<T>,
    x: Tensor3<T>,
    path: ConvPath,
    macs: &mut C,
    mut records: Option<&mut Vec<Record<T>>>,
) -> Result<Vec<T>> {
    let trace = arch.validate()?;
    w.check(arch)?;
    let Shape::Map(expected) = trace.input else { unreachable!() };
    for (axis, e, f) in [
        (Axis::Time, expected.time, x.dims().time),
        (Axis::Freq, expected.freq, x.dims().freq),
        (Axis::Channels, expected.channels, x.dims().channels),
    ] {
        if e != f {
            return Err(KwsError::Shape {
                op: "forward input",
                axis,
                expected: e,
                found: f,
            });
        }
    }

    let keep = records.is_some();
    let mut value = Value::Map(x);
    for step in &trace.steps {
        let layer = arch.layers[step.layer];
        let (next, record) = match (step.kind, layer) {
            (StepKind::Conv, LayerSpec::Conv { m, r, n, strides, .. }) => {
                let input = value.into_map();
                let bank = FilterBank::new(
                    m,
                    r,
                    input.dims().channels,
                    n,
                    w.data(&format!("{}.weight", step.name))?,
                    w.data(&format!("{}.bias", step.name))?,
                )?;
                let mut out = match path {
                    ConvPath::Naive => conv2d_valid_counted(&input, &bank, strides, macs)?,
                    ConvPath::Optimized => conv2d_optimized(&input, &bank, strides)?,
                };
                out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
                let record = keep.then(|| Record::Conv {
                    input,
                    activated: out.clone(),
                });
                (Value::Map(out), record)
            }
            (StepKind::Pool, LayerSpec::Conv { pool, .. }) => {
                let input = value.into_map();
                let (out, argmax) = maxpool_with_argmax(&input, pool)?;
                let record = keep.then(|| Record::Pool {
                    in_dims: input.dims(),
                    argmax,
                });
                (Value::Map(out), record)
            }
            (StepKind::Flatten, _) => {
                let input = value.into_map();
                let dims = input.dims();
                (Value::Vector(input.into_data()), keep.then_some(Record::Flatten { dims }))
            }
            (StepKind::LowRank, LayerSpec::LowRank { k }) => {
                let input = value.into_vector();
                let mat = Matrix::new(k, input.len(), w.data(&format!("{}.weight", step.name))?)?;
                let out = dense_counted(&input, &mat, None, Activation::None, macs)?;
                (Value::Vector(out), keep.then_some(Record::LowRank { input }))
            }
            (StepKind::Dense, LayerSpec::Dense { units }) => {
                let input = value.into_vector();
                let mat = Matrix::new(units, input.len(), w.data(&format!("{}.weight", step.name))?)?;
                let bias = w.data(&format!("{}.bias", step.name))?;
                let out = dense_counted(&input, &mat, Some(bias), Activation::Relu, macs)?;
                let record = keep.then(|| Record::Dense {
                    input,
                    output: out.clone(),
                });
                (Value::Vector(out), record)
            }
            (StepKind::Softmax, LayerSpec::SoftmaxOut { labels }) => {
                let input = value.into_vector();
                let mat = Matrix::new(labels, input.len(), w.data(&format!("{}.weight", step.name))?)?;
                let bias = w.data(&format!("{}.bias", step.name))?;
                let logits = dense_counted(&input, &mat, Some(bias), Activation::None, macs)?;
                let probs = softmax(&logits);
                (Value::Vector(probs), keep.then_some(Record::Softmax { input }))
            }
            _ => unreachable!("trace step kinds match their layers"),
        };
        if let (Some(recs), Some(record)) = (records.as_deref_mut(), record) {
            recs.push(record);
        }
        value = next;
    }
    Ok(value.into_vector())
}
